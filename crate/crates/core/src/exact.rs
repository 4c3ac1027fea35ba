//! Bellman operators and exact model-based solvers.
//!
//! These are the ground truth for every approximate and simulation-based
//! method in the crate.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_lambda, check_len, Error, Result};
use crate::linalg::{self, sup_norm};
use crate::mdp::{CostVector, Mdp, Policy, PolicyMatrices};

/// Default stopping tolerance for value iteration.
pub const VI_DEFAULT_TOL: f64 = 1e-8;
/// Default iteration cap for value iteration.
pub const VI_DEFAULT_MAX_ITER: usize = 1_000_000;

const FIXED_POINT_TOL: f64 = 1e-9;

/// `(T_mu J)(i) = sum_j p_ij(mu(i)) (g(i,mu(i),j) + alpha J(j))`.
pub fn apply_t_mu(mdp: &Mdp, mu: &Policy, j: &CostVector) -> Result<CostVector> {
    check_len(mdp.n(), j.len())?;
    mu.check(mdp)?;
    let js = j.as_slice();
    Ok(DVector::from_iterator(mdp.n(), (0..mdp.n()).map(|i| mdp.row(i, mu.control(i)).lookahead(mdp.alpha(), js))))
}

/// `T J` together with the greedy policy attaining it. Ties go to the
/// lowest control index.
pub fn apply_t(mdp: &Mdp, j: &CostVector) -> Result<(CostVector, Policy)> {
    check_len(mdp.n(), j.len())?;
    let js = j.as_slice();
    let mut values = DVector::zeros(mdp.n());
    let mut controls = Vec::with_capacity(mdp.n());
    for i in 0..mdp.n() {
        let (best_u, best) = mdp
            .controls(i)
            .iter()
            .map(|row| row.lookahead(mdp.alpha(), js))
            .enumerate()
            .fold((0, f64::INFINITY), |(bu, bv), (u, v)| if v < bv { (u, v) } else { (bu, bv) });
        values[i] = best;
        controls.push(best_u);
    }
    Ok((values, Policy::from_vec_unchecked(controls)))
}

/// Greedy policy with respect to `J`.
pub fn greedy_policy(mdp: &Mdp, j: &CostVector) -> Result<Policy> {
    apply_t(mdp, j).map(|(_, mu)| mu)
}

/// Cost `J_mu` of a policy from the dense solve of `(I - alpha P_mu) J = g_mu`.
pub fn policy_cost(mdp: &Mdp, mu: &Policy) -> Result<CostVector> {
    let pm = PolicyMatrices::new(mdp, mu)?;
    policy_cost_from_matrices(&pm, mdp.alpha())
}

pub(crate) fn policy_cost_from_matrices(pm: &PolicyMatrices, alpha: f64) -> Result<CostVector> {
    let n = pm.n();
    let a = DMatrix::identity(n, n) - &pm.p * alpha;
    let j = linalg::solve(&a, &pm.gbar)?;
    let residual = sup_norm(&(&j - (&pm.gbar + &pm.p * &j * alpha)));
    let tolerance = FIXED_POINT_TOL * (1.0 + sup_norm(&j));
    if residual > tolerance || !residual.is_finite() {
        return Err(Error::Residual { residual, tolerance });
    }
    Ok(j)
}

/// Outcome of [`value_iteration`].
#[derive(Debug, Clone, PartialEq)]
pub struct ViOutcome {
    pub cost: CostVector,
    pub policy: Policy,
    pub iterations: usize,
    /// False when `max_iter` was reached before the tolerance.
    pub converged: bool,
}

/// Iterates `J <- T J` until successive iterates differ by at most `tol` in
/// sup-norm or `max_iter` sweeps have been made.
pub fn value_iteration(mdp: &Mdp, j0: &CostVector, tol: f64, max_iter: usize) -> Result<ViOutcome> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    check_len(mdp.n(), j0.len())?;
    let mut j = j0.clone();
    for k in 1..=max_iter {
        let (next, policy) = apply_t(mdp, &j)?;
        let delta = sup_norm(&(&next - &j));
        j = next;
        if delta <= tol {
            return Ok(ViOutcome { cost: j, policy, iterations: k, converged: true });
        }
    }
    let policy = greedy_policy(mdp, &j)?;
    Ok(ViOutcome { cost: j, policy, iterations: max_iter, converged: false })
}

/// Outcome of [`exact_policy_iteration`].
#[derive(Debug, Clone, PartialEq)]
pub struct PiOutcome {
    pub cost: CostVector,
    pub policy: Policy,
    /// Number of policy evaluations performed.
    pub iterations: usize,
    /// Policies evaluated, in order.
    pub policies: Vec<Policy>,
}

/// Exact policy iteration from `mu0`.
///
/// Stops when the greedy policy repeats the evaluated one. A control is only
/// replaced when the greedy control is strictly better than the incumbent,
/// so numerically tied optimal policies cannot cycle.
pub fn exact_policy_iteration(mdp: &Mdp, mu0: &Policy) -> Result<PiOutcome> {
    mu0.check(mdp)?;
    let mut mu = mu0.clone();
    let mut policies = Vec::new();
    loop {
        let j = policy_cost(mdp, &mu)?;
        policies.push(mu.clone());
        let (tj, greedy) = apply_t(mdp, &j)?;
        let scale = 1e-12 * (1.0 + sup_norm(&j));
        let js = j.as_slice();
        let improved: Vec<usize> = (0..mdp.n())
            .map(|i| {
                let current = mdp.row(i, mu.control(i)).lookahead(mdp.alpha(), js);
                if tj[i] < current - scale {
                    greedy.control(i)
                } else {
                    mu.control(i)
                }
            })
            .collect();
        let next = Policy::from_vec_unchecked(improved);
        if next == mu {
            return Ok(PiOutcome { cost: j, policy: mu, iterations: policies.len(), policies });
        }
        mu = next;
    }
}

/// One record of an exact iterative method: the policy `mu_{k+1}` chosen
/// from `J_k` and the resulting `J_{k+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub policy: Policy,
    pub cost: CostVector,
    /// `|J_{k+1} - J*|_inf` when `J*` was supplied.
    pub error: Option<f64>,
}

/// Optimistic PI: `mu_{k+1}` greedy from `J_k`, then
/// `J_{k+1} = T_{mu_{k+1}}^{m_k} J_k`. The last entry of `m_schedule` is
/// repeated when the schedule is shorter than `iters`.
pub fn optimistic_pi(
    mdp: &Mdp,
    j0: &CostVector,
    m_schedule: &[usize],
    iters: usize,
    j_star: Option<&CostVector>,
) -> Result<Vec<TraceStep>> {
    if m_schedule.is_empty() || m_schedule.contains(&0) {
        return Err(Error::InvalidParameter("every m_k must be at least 1".into()));
    }
    check_len(mdp.n(), j0.len())?;
    let mut j = j0.clone();
    let mut trace = Vec::with_capacity(iters);
    for k in 0..iters {
        let mu = greedy_policy(mdp, &j)?;
        let m = m_schedule[k.min(m_schedule.len() - 1)];
        for _ in 0..m {
            j = apply_t_mu(mdp, &mu, &j)?;
        }
        trace.push(step(mu, &j, j_star));
    }
    Ok(trace)
}

fn step(policy: Policy, j: &CostVector, j_star: Option<&CostVector>) -> TraceStep {
    TraceStep { policy, cost: j.clone(), error: j_star.map(|s| sup_norm(&(j - s))) }
}

/// `T_mu^(lambda) J`, computed as the unique fixed point of
/// `W J' = (1 - lambda) T_mu J + lambda T_mu J'`, i.e. by solving
/// `(I - lambda alpha P_mu) J' = g_mu + (1 - lambda) alpha P_mu J`.
pub fn apply_t_mu_lambda(mdp: &Mdp, mu: &Policy, lambda: f64, j: &CostVector) -> Result<CostVector> {
    check_lambda(lambda)?;
    check_len(mdp.n(), j.len())?;
    if lambda == 0.0 {
        return apply_t_mu(mdp, mu, j);
    }
    let pm = PolicyMatrices::new(mdp, mu)?;
    let out = t_mu_lambda_from_matrices(&pm, mdp.alpha(), lambda, j)?;

    let t_j = apply_t_mu(mdp, mu, j)?;
    let t_out = apply_t_mu(mdp, mu, &out)?;
    let w = t_j * (1.0 - lambda) + t_out * lambda;
    let residual = sup_norm(&(&out - w));
    let tolerance = FIXED_POINT_TOL * (1.0 + sup_norm(&out));
    if residual > tolerance {
        return Err(Error::Residual { residual, tolerance });
    }
    Ok(out)
}

pub(crate) fn t_mu_lambda_from_matrices(
    pm: &PolicyMatrices,
    alpha: f64,
    lambda: f64,
    j: &CostVector,
) -> Result<CostVector> {
    let n = pm.n();
    let a = DMatrix::identity(n, n) - &pm.p * (lambda * alpha);
    let rhs = &pm.gbar + &pm.p * j * ((1.0 - lambda) * alpha);
    linalg::solve(&a, &rhs)
}

/// Exact lambda-PI: `mu_{k+1}` greedy from `J_k`, then
/// `J_{k+1} = T_{mu_{k+1}}^(lambda) J_k`.
pub fn exact_lambda_pi(
    mdp: &Mdp,
    j0: &CostVector,
    lambda: f64,
    iters: usize,
    j_star: Option<&CostVector>,
) -> Result<Vec<TraceStep>> {
    check_lambda(lambda)?;
    check_len(mdp.n(), j0.len())?;
    let mut j = j0.clone();
    let mut trace = Vec::with_capacity(iters);
    for _ in 0..iters {
        let mu = greedy_policy(mdp, &j)?;
        j = apply_t_mu_lambda(mdp, &mu, lambda, &j)?;
        trace.push(step(mu, &j, j_star));
    }
    Ok(trace)
}

/// States outside the single communicating class containing state 0, or an
/// empty vector when the positive-entry graph of `p` is strongly connected.
pub fn unreachable_states(p: &DMatrix<f64>) -> Vec<usize> {
    let n = p.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                let w = if forward { p[(i, j)] } else { p[(j, i)] };
                if w > 0.0 && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen
    };
    let (fwd, bwd) = (reach(true), reach(false));
    (0..n).filter(|&i| !(fwd[i] && bwd[i])).collect()
}

/// Stationary distribution `xi` with `xi' P = xi'`, `sum xi = 1`.
///
/// Irreducibility is checked structurally first. The balance equations with
/// one redundant row replaced by the normalization are then solved densely.
pub fn stationary_distribution(pm: &PolicyMatrices) -> Result<DVector<f64>> {
    let p = &pm.p;
    let n = p.nrows();
    let unreachable = unreachable_states(p);
    if !unreachable.is_empty() {
        return Err(Error::Reducible { unreachable });
    }
    let mut a = p.transpose() - DMatrix::identity(n, n);
    a.row_mut(n - 1).fill(1.0);
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let xi = linalg::solve(&a, &b)?;
    let residual: f64 = (p.transpose() * &xi - &xi).iter().map(|x| x.abs()).sum();
    if residual > 1e-10 || xi.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Residual { residual, tolerance: 1e-10 });
    }
    Ok(xi)
}
