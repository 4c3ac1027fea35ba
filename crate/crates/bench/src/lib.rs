//! Shared fixtures for the criterion benchmarks.

use lpi_core::projection::BasisSpec;
use lpi_core::{generate_problem, FeatureBasis, Mdp, Policy, ProblemKind};

/// Garnet problem with `n` states, 4 controls, branching 5, and a
/// degree-3 polynomial basis.
pub fn garnet_fixture(n: usize, seed: u64) -> (Mdp, Policy, FeatureBasis) {
    let mdp = generate_problem(ProblemKind::Garnet { n, controls: 4, branching: 5.min(n) }, 0.95, seed)
        .expect("valid garnet parameters");
    let mu = Policy::first_controls(&mdp);
    let basis = FeatureBasis::generate(&BasisSpec::Poly { degree: 3 }, n).expect("poly basis has full rank");
    (mdp, mu, basis)
}
