use lpi_core::exact::{apply_t, apply_t_mu, apply_t_mu_lambda, value_iteration};
use lpi_core::projection::{project, BasisSpec};
use lpi_core::{generate_problem, FeatureBasis, Mdp, Policy, ProblemKind, StateDistribution};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const N: usize = 12;

fn garnet(seed: u64, alpha: f64) -> Mdp {
    generate_problem(ProblemKind::Garnet { n: N, controls: 3, branching: 4 }, alpha, seed).unwrap()
}

fn vector() -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-50.0..50.0f64, N).prop_map(DVector::from_vec)
}

fn policy(mdp: &Mdp, picks: &[usize]) -> Policy {
    Policy::new(mdp, picks.iter().enumerate().map(|(i, p)| p % mdp.num_controls(i)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bellman_operators_contract_in_sup_norm(seed in 0u64..1000, a in vector(), b in vector(), picks in prop::collection::vec(0usize..3, N)) {
        let mdp = garnet(seed, 0.9);
        let mu = policy(&mdp, &picks);
        let dist = (&a - &b).amax();
        let (ta, _) = apply_t(&mdp, &a).unwrap();
        let (tb, _) = apply_t(&mdp, &b).unwrap();
        prop_assert!((ta - tb).amax() <= 0.9 * dist + 1e-9);
        let d_mu = (apply_t_mu(&mdp, &mu, &a).unwrap() - apply_t_mu(&mdp, &mu, &b).unwrap()).amax();
        prop_assert!(d_mu <= 0.9 * dist + 1e-9);
    }

    #[test]
    fn bellman_operators_are_monotone(seed in 0u64..1000, a in vector(), bump in prop::collection::vec(0.0..10.0f64, N), lambda in 0.0..0.99f64) {
        let mdp = garnet(seed, 0.9);
        let b = &a + DVector::from_vec(bump);
        let (ta, mu) = apply_t(&mdp, &a).unwrap();
        let (tb, _) = apply_t(&mdp, &b).unwrap();
        prop_assert!(ta.iter().zip(tb.iter()).all(|(x, y)| *x <= *y + 1e-12));
        let la = apply_t_mu_lambda(&mdp, &mu, lambda, &a).unwrap();
        let lb = apply_t_mu_lambda(&mdp, &mu, lambda, &b).unwrap();
        prop_assert!(la.iter().zip(lb.iter()).all(|(x, y)| *x <= *y + 1e-9));
    }

    #[test]
    fn lambda_operator_solves_its_fixed_point_equation(seed in 0u64..1000, jk in vector(), lambda in 0.01..0.99f64, picks in prop::collection::vec(0usize..3, N)) {
        let mdp = garnet(seed, 0.95);
        let mu = policy(&mdp, &picks);
        let out = apply_t_mu_lambda(&mdp, &mu, lambda, &jk).unwrap();
        let w = apply_t_mu(&mdp, &mu, &jk).unwrap() * (1.0 - lambda) + apply_t_mu(&mdp, &mu, &out).unwrap() * lambda;
        prop_assert!((&out - w).amax() <= 1e-9 * (1.0 + out.amax()));

        // same vector as the cost of mu in a problem with discount lambda*alpha
        // and transition costs g(i,u,j) + (1 - lambda) alpha J_k(j)
        let alpha = mdp.alpha();
        let triples: Vec<_> = (0..N)
            .flat_map(|i| {
                let u = mu.control(i);
                mdp.row(i, u).successors().iter().map(move |s| (i, 0, s.state, s.prob, s.cost)).collect::<Vec<_>>()
            })
            .map(|(i, u, j, p, g)| (i, u, j, p, g + (1.0 - lambda) * alpha * jk[j]))
            .collect();
        let shifted = Mdp::from_transitions(N, lambda * alpha, triples).unwrap();
        let vi = value_iteration(&shifted, &DVector::zeros(N), 1e-13, 1_000_000).unwrap();
        prop_assert!(vi.converged);
        prop_assert!((&out - vi.cost).amax() <= 1e-9 * (1.0 + out.amax()));
    }

    #[test]
    fn projection_is_idempotent_and_orthogonal(seed in 0u64..1000, j in vector(), w in prop::collection::vec(0.1..5.0f64, N), b in prop::collection::vec(-2.0..2.0f64, 9)) {
        let basis = FeatureBasis::generate(&BasisSpec::Random { seed, dim: 3 }, N).unwrap();
        let xi = StateDistribution::from_weights(DVector::from_vec(w)).unwrap();
        let r = project(&j, &basis, &xi).unwrap();
        let fitted = basis.eval(&r);
        let again = project(&fitted, &basis, &xi).unwrap();
        prop_assert!((&again - &r).amax() <= 1e-9 * (1.0 + r.amax()));
        let resid = (&j - &fitted).component_mul(xi.as_vector());
        let normal = basis.matrix().transpose() * resid;
        prop_assert!(normal.amax() <= 1e-10 * (1.0 + j.amax()));

        let mix = DMatrix::from_row_slice(3, 3, &b) + DMatrix::identity(3, 3) * 5.0;
        if let Ok(scaled) = basis.transformed(&mix) {
            let fitted_scaled = scaled.eval(&project(&j, &scaled, &xi).unwrap());
            prop_assert!((fitted_scaled - fitted).amax() <= 1e-8 * (1.0 + j.amax()));
        }
    }
}

#[test]
fn lambda_operator_endpoints() {
    let mdp = garnet(3, 0.9);
    let mu = Policy::first_controls(&mdp);
    let j = DVector::from_fn(N, |i, _| i as f64 - 4.0);
    assert_eq!(apply_t_mu_lambda(&mdp, &mu, 0.0, &j).unwrap(), apply_t_mu(&mdp, &mu, &j).unwrap());
    let j_mu = lpi_core::policy_cost(&mdp, &mu).unwrap();
    let near_one = apply_t_mu_lambda(&mdp, &mu, 1.0 - 1e-9, &j).unwrap();
    assert!((near_one - &j_mu).amax() <= 1e-6 * (1.0 + j_mu.amax()));
    assert_eq!(apply_t_mu_lambda(&mdp, &mu, 0.5, &j_mu).map(|x| (x - &j_mu).amax() < 1e-9), Ok(true));
}
