//! Simulation-based policy evaluation within a feature subspace.
//!
//! Every evaluator has a model-based variant (`EvaluatorConfig::exact`)
//! that replaces the simulation estimates by their limits. The exact
//! variants are what the sampled versions are tested against.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_lambda, check_len, Error, Result};
use crate::exact::{policy_cost_from_matrices, stationary_distribution, t_mu_lambda_from_matrices};
use crate::linalg;
use crate::mdp::{Mdp, Policy, PolicyMatrices, WeightVector};
use crate::projection::{
    check_projected_contraction, coefficients_from_matrices, occupancy_distribution, project, ContractionCheck,
    FeatureBasis, StateDistribution,
};
use crate::rng::RngStream;
use crate::sampling::{
    cost_samples, empirical_occupancy, feature_rows, simulate_geometric_batch, simulate_geometric_batch_par,
    simulate_long_trajectory, LstdAccumulator, TrajectoryBatch,
};

/// Norm growth factor, relative to `1 + |r_0|`, at which LSPE iterates
/// are declared divergent.
pub const DIVERGENCE_FACTOR: f64 = 1e8;

const EXACT_LSPE_MAX_ITERS: usize = 100_000;
const EXACT_LSPE_TOL: f64 = 1e-13;
const CONTRACTION_CHECK_MAX_STATES: usize = 300;

/// Config keys of the evaluators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvaluatorKind {
    Lstd,
    LspeIterative,
    LspeBatch,
    LspeLeastSquares,
    LambdaPiZero,
    LambdaPiOne,
    ExploreLstd,
}

impl EvaluatorKind {
    pub const ALL: [EvaluatorKind; 7] = [
        EvaluatorKind::Lstd,
        EvaluatorKind::LspeIterative,
        EvaluatorKind::LspeBatch,
        EvaluatorKind::LspeLeastSquares,
        EvaluatorKind::LambdaPiZero,
        EvaluatorKind::LambdaPiOne,
        EvaluatorKind::ExploreLstd,
    ];

    pub fn key(&self) -> &'static str {
        match self {
            EvaluatorKind::Lstd => "lstd",
            EvaluatorKind::LspeIterative => "lspe-iter",
            EvaluatorKind::LspeBatch => "lspe-batch",
            EvaluatorKind::LspeLeastSquares => "lspe-ls",
            EvaluatorKind::LambdaPiZero => "lambda-pi-0",
            EvaluatorKind::LambdaPiOne => "lambda-pi-1",
            EvaluatorKind::ExploreLstd => "explore-lstd",
        }
    }

    /// Whether the output depends on the warm start `r_k`.
    pub fn uses_warm_start(&self) -> bool {
        !matches!(self, EvaluatorKind::Lstd | EvaluatorKind::ExploreLstd)
    }

    /// Whether the evaluator samples with restarts from `restart_dist`.
    pub fn uses_restarts(&self) -> bool {
        matches!(self, EvaluatorKind::LambdaPiZero | EvaluatorKind::LambdaPiOne | EvaluatorKind::ExploreLstd)
    }
}

impl fmt::Display for EvaluatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for EvaluatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.key() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown evaluator `{s}`")))
    }
}

/// Parameters shared by the evaluators.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatorConfig {
    pub lambda: f64,
    /// LSPE stepsize; `(0, 2)` is the documented safe range.
    pub gamma: f64,
    /// Number of restart trajectories (or sample pairs) per evaluation.
    pub trajectory_budget: usize,
    /// Number of transitions of the long trajectory.
    pub long_trajectory_length: usize,
    /// Restart distribution; also the start distribution of long trajectories.
    pub restart_dist: StateDistribution,
    pub rng: RngStream,
    /// Use the model-based limits instead of simulation.
    pub exact: bool,
    /// For the long-trajectory evaluators at `lambda = 0`: estimate from
    /// independent pairs `i ~ restart_dist`, `j ~ P_mu(i, .)` instead of one
    /// trajectory, so that the projection weights are `restart_dist`.
    pub pair_sampling: bool,
}

impl EvaluatorConfig {
    pub fn new(lambda: f64, restart_dist: StateDistribution, rng: RngStream) -> Self {
        Self {
            lambda,
            gamma: 1.0,
            trajectory_budget: 10_000,
            long_trajectory_length: 100_000,
            restart_dist,
            rng,
            exact: false,
            pair_sampling: false,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        check_lambda(self.lambda)?;
        check_len(n, self.restart_dist.len())?;
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.trajectory_budget == 0 || self.long_trajectory_length == 0 {
            return Err(Error::InvalidParameter("sample budgets must be at least 1".into()));
        }
        if self.pair_sampling && self.lambda != 0.0 {
            return Err(Error::InvalidParameter("pair sampling requires lambda = 0".into()));
        }
        Ok(())
    }
}

/// Output of one policy evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationResult {
    pub r: WeightVector,
    /// 1-norm condition number of the matrix that was inverted.
    pub condition_estimate: f64,
    /// Simulated transitions (0 for exact variants).
    pub samples_used: usize,
    /// `|r_{l+1} - r_l|` per LSPE update.
    pub residuals: Vec<f64>,
    /// Empirical occupancy of the geometric batch (lambda-PI(1)).
    pub occupancy: Option<DVector<f64>>,
    /// Fingerprint of the restart sequence used, if any.
    pub restart_fingerprint: Option<u64>,
    /// Projected-contraction diagnostic, when computed.
    pub contraction: Option<ContractionCheck>,
}

impl EvaluationResult {
    fn new(r: WeightVector, condition_estimate: f64, samples_used: usize) -> Self {
        Self {
            r,
            condition_estimate,
            samples_used,
            residuals: Vec::new(),
            occupancy: None,
            restart_fingerprint: None,
            contraction: None,
        }
    }
}

/// Runs the evaluator `kind` for policy `mu` with warm start `r_k`.
pub fn evaluate(
    kind: EvaluatorKind,
    mdp: &Mdp,
    mu: &Policy,
    basis: &FeatureBasis,
    cfg: &EvaluatorConfig,
    r_k: &WeightVector,
) -> Result<EvaluationResult> {
    match kind {
        EvaluatorKind::Lstd => lstd_lambda(mdp, mu, basis, cfg),
        EvaluatorKind::LspeIterative => lspe_lambda_iterative(mdp, mu, basis, cfg, r_k),
        EvaluatorKind::LspeBatch => lspe_single_batch(mdp, mu, basis, cfg, r_k),
        EvaluatorKind::LspeLeastSquares => lspe_least_squares_form(mdp, mu, basis, cfg, r_k),
        EvaluatorKind::LambdaPiZero => lambda_pi_zero_eval(mdp, mu, basis, cfg, r_k),
        EvaluatorKind::LambdaPiOne => lambda_pi_one_eval(mdp, mu, basis, cfg, r_k),
        EvaluatorKind::ExploreLstd => explore_lstd_lambda(mdp, mu, basis, cfg),
    }
}

struct Setup {
    pm: PolicyMatrices,
}

fn setup(mdp: &Mdp, mu: &Policy, basis: &FeatureBasis, cfg: &EvaluatorConfig) -> Result<Setup> {
    check_len(mdp.n(), basis.n())?;
    cfg.validate(mdp.n())?;
    Ok(Setup { pm: PolicyMatrices::new(mdp, mu)? })
}

fn check_weights(basis: &FeatureBasis, r: &WeightVector) -> Result<()> {
    check_len(basis.s(), r.len())?;
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("weight vector has non-finite entries".into()));
    }
    Ok(())
}

/// Projection weights of the long-trajectory evaluators: the restart
/// distribution under pair sampling, else the stationary distribution.
fn long_run_weights(pm: &PolicyMatrices, cfg: &EvaluatorConfig) -> Result<StateDistribution> {
    if cfg.pair_sampling {
        Ok(cfg.restart_dist.clone())
    } else {
        StateDistribution::new(stationary_distribution(pm)?)
    }
}

/// Samples for the long-trajectory evaluators, visited in order.
fn long_run_batch(mdp: &Mdp, mu: &Policy, cfg: &EvaluatorConfig) -> Result<TrajectoryBatch> {
    if cfg.pair_sampling {
        simulate_geometric_batch(mdp, mu, 0.0, &cfg.restart_dist, cfg.long_trajectory_length, cfg.rng)
    } else {
        simulate_long_trajectory(mdp, mu, cfg.long_trajectory_length, &cfg.restart_dist, cfg.rng)
    }
}

/// Eligibility-trace accumulation over a batch. Trajectories are processed
/// independently (the trace restarts at each one).
fn accumulate(batch: &TrajectoryBatch, alpha: f64, basis: &FeatureBasis, lambda: f64) -> LstdAccumulator {
    let rows = feature_rows(basis);
    let mut acc = LstdAccumulator::new(basis.s(), alpha, lambda);
    for traj in &batch.trajectories {
        acc.reset_trace();
        for t in &traj.steps {
            acc.push(&rows[t.state], &rows[t.next], t.cost);
        }
    }
    acc
}

/// LSTD(lambda): `r = C_t^{-1} d_t`.
pub fn lstd_lambda(mdp: &Mdp, mu: &Policy, basis: &FeatureBasis, cfg: &EvaluatorConfig) -> Result<EvaluationResult> {
    let st = setup(mdp, mu, basis, cfg)?;
    let (c, d, samples) = if cfg.exact {
        let xi = long_run_weights(&st.pm, cfg)?;
        let coeff = coefficients_from_matrices(&st.pm, mdp.alpha(), basis, &xi, cfg.lambda)?;
        (coeff.c, coeff.d, 0)
    } else {
        let batch = long_run_batch(mdp, mu, cfg)?;
        let acc = accumulate(&batch, mdp.alpha(), basis, cfg.lambda);
        let (c, d) = acc.coefficients();
        (c, d, acc.count())
    };
    let (r, cond) = linalg::solve_checked(&c, &d)?;
    Ok(EvaluationResult::new(r, cond, samples))
}

fn divergence_threshold(r0: &WeightVector) -> f64 {
    DIVERGENCE_FACTOR * (1.0 + r0.norm())
}

/// LSPE(lambda), iterative: `r <- r - gamma G_l (C_l r - d_l)` after every
/// sample once the sampled feature covariance is invertible.
pub fn lspe_lambda_iterative(
    mdp: &Mdp,
    mu: &Policy,
    basis: &FeatureBasis,
    cfg: &EvaluatorConfig,
    r0: &WeightVector,
) -> Result<EvaluationResult> {
    let st = setup(mdp, mu, basis, cfg)?;
    check_weights(basis, r0)?;
    let threshold = divergence_threshold(r0);
    let contraction = if mdp.n() <= CONTRACTION_CHECK_MAX_STATES {
        long_run_weights(&st.pm, cfg).and_then(|xi| check_projected_contraction(mdp, mu, basis, &xi, cfg.lambda)).ok()
    } else {
        None
    };
    let mut r = r0.clone();
    let mut residuals = Vec::new();

    if cfg.exact {
        let xi = long_run_weights(&st.pm, cfg)?;
        let coeff = coefficients_from_matrices(&st.pm, mdp.alpha(), basis, &xi, cfg.lambda)?;
        let (g, cond) = linalg::inverse_with_condition(&coeff.gram)?;
        for step in 0..EXACT_LSPE_MAX_ITERS {
            let delta = &g * (&coeff.c * &r - &coeff.d) * cfg.gamma;
            r -= &delta;
            let change = delta.norm();
            residuals.push(change);
            let norm = r.norm();
            if !(norm <= threshold) {
                return Err(Error::Diverged { step, norm, threshold });
            }
            if change <= EXACT_LSPE_TOL * (1.0 + norm) {
                break;
            }
        }
        let mut out = EvaluationResult::new(r, cond, 0);
        out.residuals = residuals;
        out.contraction = contraction;
        return Ok(out);
    }

    let batch = long_run_batch(mdp, mu, cfg)?;
    let rows = feature_rows(basis);
    let mut acc = LstdAccumulator::new(basis.s(), mdp.alpha(), cfg.lambda);
    let mut cond = f64::INFINITY;
    let mut step = 0;
    for traj in &batch.trajectories {
        acc.reset_trace();
        for t in &traj.steps {
            acc.push(&rows[t.state], &rows[t.next], t.cost);
            if acc.count() < basis.s() {
                continue;
            }
            let Some(g) = acc.g() else { continue };
            let (c, d) = acc.coefficients();
            let delta = &g * (c * &r - d) * cfg.gamma;
            r -= &delta;
            residuals.push(delta.norm());
            let norm = r.norm();
            if !(norm <= threshold) {
                return Err(Error::Diverged { step, norm, threshold });
            }
            step += 1;
        }
    }
    if step == 0 {
        return Err(Error::CovarianceNotInvertible);
    }
    if let Some(g) = acc.g() {
        cond = linalg::condition_1(&g);
    }
    let mut out = EvaluationResult::new(r, cond, acc.count());
    out.residuals = residuals;
    out.contraction = contraction;
    Ok(out)
}

/// One LSPE update from a single batch:
/// `r_1 = r_0 - gamma G_t (C_t r_0 - d_t)`.
pub fn lspe_single_batch(
    mdp: &Mdp,
    mu: &Policy,
    basis: &FeatureBasis,
    cfg: &EvaluatorConfig,
    r0: &WeightVector,
) -> Result<EvaluationResult> {
    let st = setup(mdp, mu, basis, cfg)?;
    check_weights(basis, r0)?;
    if cfg.exact {
        let xi = long_run_weights(&st.pm, cfg)?;
        let coeff = coefficients_from_matrices(&st.pm, mdp.alpha(), basis, &xi, cfg.lambda)?;
        let (g, cond) = linalg::inverse_with_condition(&coeff.gram)?;
        let r = r0 - g * (&coeff.c * r0 - &coeff.d) * cfg.gamma;
        return Ok(EvaluationResult::new(r, cond, 0));
    }
    let batch = long_run_batch(mdp, mu, cfg)?;
    lspe_single_batch_from(&batch, mdp.alpha(), basis, cfg.lambda, cfg.gamma, r0)
}

/// [`lspe_single_batch`] on a given batch.
pub fn lspe_single_batch_from(
    batch: &TrajectoryBatch,
    alpha: f64,
    basis: &FeatureBasis,
    lambda: f64,
    gamma: f64,
    r0: &WeightVector,
) -> Result<EvaluationResult> {
    check_len(batch.n, basis.n())?;
    check_weights(basis, r0)?;
    let acc = accumulate(batch, alpha, basis, lambda);
    let est = acc.estimates()?;
    let r = r0 - &est.g * (&est.c * r0 - &est.d) * gamma;
    Ok(EvaluationResult::new(r, linalg::condition_1(&est.covariance), est.sample_count))
}

/// LSPE as a least-squares fit: minimize
/// `sum_l (phi(i_l)' r - phi(i_l)' r_k - e_l)^2` where `e_l` is the
/// `lambda alpha`-discounted sum of the temporal differences from `l` on.
pub fn lspe_least_squares_form(
    mdp: &Mdp,
    mu: &Policy,
    basis: &FeatureBasis,
    cfg: &EvaluatorConfig,
    r0: &WeightVector,
) -> Result<EvaluationResult> {
    if cfg.exact {
        // the least-squares and single-batch forms share their limit at gamma = 1
        let unit = EvaluatorConfig { gamma: 1.0, ..cfg.clone() };
        return lspe_single_batch(mdp, mu, basis, &unit, r0);
    }
    setup(mdp, mu, basis, cfg)?;
    check_weights(basis, r0)?;
    let batch = long_run_batch(mdp, mu, cfg)?;
    lspe_least_squares_from(&batch, mdp.alpha(), basis, cfg.lambda, r0)
}

/// [`lspe_least_squares_form`] on a given batch.
pub fn lspe_least_squares_from(
    batch: &TrajectoryBatch,
    alpha: f64,
    basis: &FeatureBasis,
    lambda: f64,
    r_k: &WeightVector,
) -> Result<EvaluationResult> {
    check_len(batch.n, basis.n())?;
    check_weights(basis, r_k)?;
    let mut samples = Vec::with_capacity(batch.total_transitions());
    for traj in &batch.trajectories {
        let mut targets = vec![0.0; traj.len()];
        let mut tail = 0.0;
        for (l, t) in traj.steps.iter().enumerate().rev() {
            let here = basis.value(t.state, r_k);
            let td = t.cost + alpha * basis.value(t.next, r_k) - here;
            tail = td + lambda * alpha * tail;
            targets[l] = here + tail;
        }
        samples.extend(traj.steps.iter().map(|t| t.state).zip(targets));
    }
    let (r, cond) = regress(basis, batch.n, &samples)?;
    Ok(EvaluationResult::new(r, cond, samples.len()))
}

/// Least-squares fit of `phi(i)' r` to `(i, y)` samples by normal equations
/// with an orthogonal-factorization fallback on a per-state compressed
/// design (rows `sqrt(n_i) phi(i)`, targets `sqrt(n_i) mean_i(y)`), which
/// has the same normal equations.
fn regress(basis: &FeatureBasis, n: usize, samples: &[(usize, f64)]) -> Result<(WeightVector, f64)> {
    let s = basis.s();
    let mut counts = vec![0usize; n];
    let mut sums = vec![0.0; n];
    for &(i, y) in samples {
        counts[i] += 1;
        sums[i] += y;
    }
    let rows = feature_rows(basis);
    let mut m = DMatrix::zeros(s, s);
    let mut b = DVector::zeros(s);
    for i in 0..n {
        if counts[i] > 0 {
            m.ger(counts[i] as f64, &rows[i], &rows[i], 1.0);
            b.axpy(sums[i], &rows[i], 1.0);
        }
    }
    let unvisited = || (0..n).filter(|&i| counts[i] == 0).collect::<Vec<_>>();
    let design = || {
        let visited: Vec<usize> = (0..n).filter(|&i| counts[i] > 0).collect();
        let a =
            DMatrix::from_fn(visited.len(), s, |row, k| (counts[visited[row]] as f64).sqrt() * rows[visited[row]][k]);
        let y = DVector::from_fn(visited.len(), |row, _| {
            let i = visited[row];
            sums[i] / (counts[i] as f64).sqrt()
        });
        (a, y)
    };
    if linalg::singular_value_ratio(&m) <= f64::EPSILON {
        return Err(Error::InsufficientCoverage { unvisited: unvisited() });
    }
    linalg::least_squares(&m, &b, design).map_err(|e| match e {
        Error::Singular => Error::InsufficientCoverage { unvisited: unvisited() },
        e => e,
    })
}

/// lambda-PI(0): solves `Phi' Xi (Phi r - W(Phi r)) = 0` with
/// `W J = g + (1 - lambda) alpha P Phi r_k + lambda alpha P J`, i.e.
/// `C r = d(k)` with `C = Phi' Xi (I - lambda alpha P) Phi` and
/// `d(k) = Phi' Xi (g + (1 - lambda) alpha P Phi r_k)`.
///
/// The sampled version estimates `C` and `d(k)` from independent pairs
/// `i ~ restart_dist`, `j ~ P_mu(i, .)`; `Xi` is then `restart_dist`.
pub fn lambda_pi_zero_eval(
    mdp: &Mdp,
    mu: &Policy,
    basis: &FeatureBasis,
    cfg: &EvaluatorConfig,
    r_k: &WeightVector,
) -> Result<EvaluationResult> {
    let st = setup(mdp, mu, basis, cfg)?;
    check_weights(basis, r_k)?;
    let (alpha, lambda) = (mdp.alpha(), cfg.lambda);
    if cfg.exact {
        let phi = basis.matrix();
        let n = mdp.n();
        let xi = cfg.restart_dist.as_vector();
        let phit_xi = DMatrix::from_fn(basis.s(), n, |k, i| phi[(i, k)] * xi[i]);
        let c = &phit_xi * (phi - &st.pm.p * phi * (lambda * alpha));
        let d = &phit_xi * (&st.pm.gbar + &st.pm.p * (phi * r_k) * ((1.0 - lambda) * alpha));
        let (r, cond) = linalg::solve_checked(&c, &d)?;
        return Ok(EvaluationResult::new(r, cond, 0));
    }
    let batch = simulate_geometric_batch(mdp, mu, 0.0, &cfg.restart_dist, cfg.trajectory_budget, cfg.rng)?;
    let mut out = lambda_pi_zero_from(&batch, alpha, basis, lambda, r_k)?;
    out.restart_fingerprint = Some(batch.restart_fingerprint());
    Ok(out)
}

/// [`lambda_pi_zero_eval`] on a given batch of single transitions.
pub fn lambda_pi_zero_from(
    batch: &TrajectoryBatch,
    alpha: f64,
    basis: &FeatureBasis,
    lambda: f64,
    r_k: &WeightVector,
) -> Result<EvaluationResult> {
    check_lambda(lambda)?;
    check_len(batch.n, basis.n())?;
    check_weights(basis, r_k)?;
    let s = basis.s();
    let rows = feature_rows(basis);
    let mut c = DMatrix::zeros(s, s);
    let mut d = DVector::zeros(s);
    let mut diff = DVector::zeros(s);
    let mut count = 0usize;
    for t in batch.trajectories.iter().flat_map(|tr| &tr.steps) {
        let (phi, phi_next) = (&rows[t.state], &rows[t.next]);
        diff.copy_from(phi);
        diff.axpy(-lambda * alpha, phi_next, 1.0);
        c.ger(1.0, phi, &diff, 1.0);
        let target = t.cost + (1.0 - lambda) * alpha * phi_next.dot(r_k);
        d.axpy(target, phi, 1.0);
        count += 1;
    }
    let w = 1.0 / count as f64;
    let (r, cond) = linalg::solve_checked(&(c * w), &(d * w))?;
    Ok(EvaluationResult::new(r, cond, count))
}

/// lambda-PI(1): least-squares fit of the geometric-sampling cost samples
/// `c_{l,m}(r_k)`.
pub fn lambda_pi_one_eval(
    mdp: &Mdp,
    mu: &Policy,
    basis: &FeatureBasis,
    cfg: &EvaluatorConfig,
    r_k: &WeightVector,
) -> Result<EvaluationResult> {
    let st = setup(mdp, mu, basis, cfg)?;
    check_weights(basis, r_k)?;
    if cfg.exact {
        let zeta = occupancy_distribution(&st.pm, &cfg.restart_dist, cfg.lambda)?;
        let target = t_mu_lambda_from_matrices(&st.pm, mdp.alpha(), cfg.lambda, &basis.eval(r_k))?;
        let r = project(&target, basis, &zeta)?;
        let cond = linalg::condition_1(&crate::projection::gram(basis, &zeta));
        let mut out = EvaluationResult::new(r, cond, 0);
        out.occupancy = Some(zeta.as_vector().clone());
        return Ok(out);
    }
    let batch = simulate_geometric_batch_par(mdp, mu, cfg.lambda, &cfg.restart_dist, cfg.trajectory_budget, cfg.rng)?;
    let mut out = lambda_pi_one_from(&batch, mdp.alpha(), basis, r_k)?;
    out.restart_fingerprint = Some(batch.restart_fingerprint());
    Ok(out)
}

/// [`lambda_pi_one_eval`] on a given geometric batch.
pub fn lambda_pi_one_from(
    batch: &TrajectoryBatch,
    alpha: f64,
    basis: &FeatureBasis,
    r_k: &WeightVector,
) -> Result<EvaluationResult> {
    check_len(batch.n, basis.n())?;
    check_weights(basis, r_k)?;
    let costs = cost_samples(batch, basis, r_k, alpha)?;
    let samples: Vec<(usize, f64)> = batch
        .trajectories
        .iter()
        .zip(&costs)
        .flat_map(|(traj, c)| traj.steps.iter().map(|t| t.state).zip(c.iter().copied()))
        .collect();
    let (r, cond) = regress(basis, batch.n, &samples)?;
    let mut out = EvaluationResult::new(r, cond, samples.len());
    out.occupancy = Some(empirical_occupancy(batch)?);
    Ok(out)
}

/// Exploration-enhanced LSTD(lambda) from one geometric batch:
/// `r = C^{-1} d` with `C = sum phi(i_l) (phi(i_l) - alpha^{N-l} phi(i_N))'`
/// and `d = sum phi(i_l) c_l(0)`.
pub fn explore_lstd_lambda(
    mdp: &Mdp,
    mu: &Policy,
    basis: &FeatureBasis,
    cfg: &EvaluatorConfig,
) -> Result<EvaluationResult> {
    let st = setup(mdp, mu, basis, cfg)?;
    if cfg.exact {
        let zeta = occupancy_distribution(&st.pm, &cfg.restart_dist, cfg.lambda)?;
        let coeff = coefficients_from_matrices(&st.pm, mdp.alpha(), basis, &zeta, cfg.lambda)?;
        let (r, cond) = linalg::solve_checked(&coeff.c, &coeff.d)?;
        let mut out = EvaluationResult::new(r, cond, 0);
        out.occupancy = Some(zeta.as_vector().clone());
        return Ok(out);
    }
    let batch = simulate_geometric_batch_par(mdp, mu, cfg.lambda, &cfg.restart_dist, cfg.trajectory_budget, cfg.rng)?;
    let mut out = explore_lstd_from(&batch, mdp.alpha(), basis)?;
    out.restart_fingerprint = Some(batch.restart_fingerprint());
    Ok(out)
}

/// Sums `(C, d)` of exploration-enhanced LSTD over a geometric batch,
/// normalized by the number of samples.
pub fn explore_lstd_coefficients(
    batch: &TrajectoryBatch,
    alpha: f64,
    basis: &FeatureBasis,
) -> Result<(DMatrix<f64>, DVector<f64>, usize)> {
    check_len(batch.n, basis.n())?;
    let s = basis.s();
    let rows = feature_rows(basis);
    let tails = cost_samples(batch, basis, &DVector::zeros(s), alpha)?;
    let mut c = DMatrix::zeros(s, s);
    let mut d = DVector::zeros(s);
    let mut diff = DVector::zeros(s);
    let mut count = 0usize;
    for (traj, tail) in batch.trajectories.iter().zip(&tails) {
        let len = traj.len();
        let phi_end = &rows[traj.end()];
        for (l, t) in traj.steps.iter().enumerate() {
            let phi = &rows[t.state];
            diff.copy_from(phi);
            diff.axpy(-alpha.powi((len - l) as i32), phi_end, 1.0);
            c.ger(1.0, phi, &diff, 1.0);
            d.axpy(tail[l], phi, 1.0);
            count += 1;
        }
    }
    let w = 1.0 / count as f64;
    Ok((c * w, d * w, count))
}

/// [`explore_lstd_lambda`] on a given geometric batch. The solution is
/// checked to make the fit residual `sum phi (phi' r - c(r))` vanish with
/// the cost samples recomputed at `r`.
pub fn explore_lstd_from(batch: &TrajectoryBatch, alpha: f64, basis: &FeatureBasis) -> Result<EvaluationResult> {
    let (c, d, count) = explore_lstd_coefficients(batch, alpha, basis)?;
    let (r, cond) = linalg::solve_checked(&c, &d)?;

    let costs = cost_samples(batch, basis, &r, alpha)?;
    let mut grad = DVector::zeros(basis.s());
    for (traj, cs) in batch.trajectories.iter().zip(&costs) {
        for (t, &y) in traj.steps.iter().zip(cs) {
            grad.axpy(basis.value(t.state, &r) - y, &basis.row(t.state), 1.0);
        }
    }
    let residual = (grad / count as f64).amax();
    let tolerance = 1e-8 * (1.0 + d.amax() + c.amax() * r.amax());
    if !(residual <= tolerance) {
        return Err(Error::Residual { residual, tolerance });
    }
    Ok(EvaluationResult::new(r, cond, count))
}

/// Exact policy cost `J_mu` and the stationary distribution, for diagnostics.
pub fn policy_cost_and_stationary(mdp: &Mdp, mu: &Policy) -> Result<(DVector<f64>, StateDistribution)> {
    let pm = PolicyMatrices::new(mdp, mu)?;
    let j = policy_cost_from_matrices(&pm, mdp.alpha())?;
    Ok((j, StateDistribution::new(stationary_distribution(&pm)?)?))
}
