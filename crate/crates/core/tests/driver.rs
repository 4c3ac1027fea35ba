use lpi_core::exact::exact_lambda_pi;
use lpi_core::projection::{contraction_modulus, BasisSpec};
use lpi_core::{
    apply_t, approximate_pi, exact_policy_iteration, generate_problem, lspi_preset, EvaluatorConfig, EvaluatorKind,
    FeatureBasis, Mdp, PiOptions, Policy, ProblemKind, RngStream, StateDistribution,
};
use nalgebra::DVector;

fn garnet(n: usize, branching: usize, seed: u64) -> Mdp {
    generate_problem(ProblemKind::Garnet { n, controls: 2, branching }, 0.9, seed).unwrap()
}

#[test]
fn recorded_fixture_oscillates() {
    let mdp = garnet(10, 3, 0);
    let basis = FeatureBasis::generate(&BasisSpec::Random { seed: 1, dim: 2 }, 10).unwrap();
    let mut eval = EvaluatorConfig::new(0.5, StateDistribution::uniform(10), RngStream::from_seed(0));
    eval.exact = true;
    let trace = approximate_pi(&mdp, &basis, &PiOptions::new(EvaluatorKind::LambdaPiOne, eval, 30)).unwrap();
    assert!(trace.oscillated());
    assert_eq!(trace.oscillation_at, Some(10));
    assert_eq!(trace.oscillation_period, Some(2));
    let k = trace.oscillation_at.unwrap();
    assert_eq!(trace.records[k - 1].policy, trace.records[k - 3].policy);
    assert_ne!(trace.records[k - 1].policy, trace.records[k - 2].policy);
}

#[test]
fn lspi_with_identity_basis_finds_optimal_policy() {
    let mdp = garnet(10, 4, 2);
    let optimal = exact_policy_iteration(&mdp, &Policy::first_controls(&mdp)).unwrap();
    let mut cfg = EvaluatorConfig::new(0.0, StateDistribution::uniform(10), RngStream::from_seed(3));
    cfg.trajectory_budget = 400_000;
    let trace = lspi_preset(&mdp, &FeatureBasis::identity(10), &cfg, 10).unwrap();
    let last = trace.records.last().unwrap();
    assert_eq!(last.policy, optimal.policy);
    assert!(last.exact_subopt_inf < 1e-9);
    assert!((&trace.j_star - &optimal.cost).amax() < 1e-9);
}

#[test]
fn trace_records_are_complete_and_consistent() {
    let mdp = garnet(12, 5, 4);
    let basis = FeatureBasis::generate(&BasisSpec::Poly { degree: 3 }, 12).unwrap();
    let mut eval = EvaluatorConfig::new(0.7, StateDistribution::uniform(12), RngStream::from_seed(5));
    eval.trajectory_budget = 3_000;
    let iters = 8;
    let trace = approximate_pi(&mdp, &basis, &PiOptions::new(EvaluatorKind::LambdaPiOne, eval, iters)).unwrap();
    assert!(trace.error.is_none());
    assert_eq!(trace.records.len(), iters);
    for (idx, rec) in trace.records.iter().enumerate() {
        assert_eq!(rec.k, idx + 1);
        let approx = basis.eval(&rec.r);
        let (t, _) = apply_t(&mdp, &approx).unwrap();
        assert!(((t - &approx).amax() - rec.bellman_residual_inf).abs() <= 1e-9);
        assert!((&rec.policy_cost - &trace.j_star).min() >= -1e-9);
        assert!(rec.samples_used > 0 && rec.cond_estimate >= 1.0);
        let changed = idx == 0 || trace.records[idx - 1].policy != rec.policy;
        assert_eq!(rec.policy_changed, changed);
    }
    // fresh samples per iteration unless reuse is requested
    assert_ne!(trace.records[0].restart_fingerprint, trace.records[1].restart_fingerprint);
}

#[test]
fn runs_are_deterministic_per_seed() {
    let mdp = garnet(12, 5, 6);
    let basis = FeatureBasis::generate(&BasisSpec::Poly { degree: 2 }, 12).unwrap();
    for kind in EvaluatorKind::ALL {
        let mut eval = EvaluatorConfig::new(0.5, StateDistribution::uniform(12), RngStream::from_seed(7));
        eval.trajectory_budget = 500;
        eval.long_trajectory_length = 5_000;
        let opts = PiOptions::new(kind, eval, 4);
        assert_eq!(
            approximate_pi(&mdp, &basis, &opts).unwrap(),
            approximate_pi(&mdp, &basis, &opts).unwrap(),
            "{kind}"
        );
    }
}

#[test]
fn exact_lambda_pi_rate_after_policy_is_optimal() {
    for seed in 0..5 {
        let mdp = garnet(15, 4, seed);
        let j_star = exact_policy_iteration(&mdp, &Policy::first_controls(&mdp)).unwrap().cost;
        for lambda in [0.3, 0.5, 0.8] {
            let bound = contraction_modulus(0.9, lambda).unwrap();
            let trace = exact_lambda_pi(&mdp, &DVector::zeros(15), lambda, 300, Some(&j_star)).unwrap();
            let optimal = exact_policy_iteration(&mdp, &Policy::first_controls(&mdp)).unwrap().policy;
            let mut prev = (DVector::zeros(15) - &j_star).amax();
            for step in &trace {
                let err = (&step.cost - &j_star).amax();
                if step.policy == optimal && prev > 1e-8 * (1.0 + j_star.amax()) {
                    assert!(err <= (bound + 1e-6) * prev, "seed {seed} lambda {lambda}: {err} / {prev}");
                }
                prev = err;
            }
            assert!(prev <= 1e-6 * (1.0 + j_star.amax()));
        }
    }
}
