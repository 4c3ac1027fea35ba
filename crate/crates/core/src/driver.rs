//! Approximate policy iteration with a pluggable evaluator.

use crate::error::{check_len, Error, Result};
use crate::evaluators::{evaluate, EvaluatorConfig, EvaluatorKind};
use crate::exact::{apply_t, exact_policy_iteration, greedy_policy, policy_cost_from_matrices};
use crate::linalg::sup_norm;
use crate::mdp::{CostVector, Mdp, Policy, PolicyMatrices, WeightVector};
use crate::projection::FeatureBasis;

/// Greedy policy with respect to `Phi r`, ties to the lowest control.
pub fn greedy_policy_from_weights(mdp: &Mdp, basis: &FeatureBasis, r: &WeightVector) -> Result<Policy> {
    check_len(mdp.n(), basis.n())?;
    check_len(basis.s(), r.len())?;
    greedy_policy(mdp, &basis.eval(r))
}

#[derive(Debug, Clone)]
pub struct PiOptions {
    pub evaluator: EvaluatorKind,
    pub eval: EvaluatorConfig,
    pub iters: usize,
    /// Initial weights; zero when absent.
    pub r0: Option<WeightVector>,
    /// Evaluate every policy with the same random stream, so restart-based
    /// evaluators see a frozen restart sequence. Otherwise iteration `k`
    /// uses `eval.rng.derive(k)`.
    pub reuse_samples: bool,
    /// Optimal cost; computed by exact policy iteration when absent.
    pub j_star: Option<CostVector>,
}

impl PiOptions {
    pub fn new(evaluator: EvaluatorKind, eval: EvaluatorConfig, iters: usize) -> Self {
        Self { evaluator, eval, iters, r0: None, reuse_samples: false, j_star: None }
    }
}

/// One iteration `k >= 1`: `mu_k` greedy from `Phi r_{k-1}`, then
/// `r_k` from evaluating `mu_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiRecord {
    pub k: usize,
    pub policy: Policy,
    pub r: WeightVector,
    /// Exact `J_{mu_k}`.
    pub policy_cost: CostVector,
    /// `|J_{mu_k} - J*|_inf`.
    pub exact_subopt_inf: f64,
    /// `|T(Phi r_k) - Phi r_k|_inf`.
    pub bellman_residual_inf: f64,
    /// Whether `mu_k` differs from `mu_{k-1}` (always true for `k = 1`).
    pub policy_changed: bool,
    pub cond_estimate: f64,
    pub samples_used: usize,
    pub restart_fingerprint: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiTrace {
    pub records: Vec<PiRecord>,
    pub j_star: CostVector,
    /// First iteration at which a policy seen before (other than the
    /// previous one) recurred.
    pub oscillation_at: Option<usize>,
    /// Length of the detected policy cycle.
    pub oscillation_period: Option<usize>,
    /// Evaluator failure that ended the loop early.
    pub error: Option<Error>,
}

impl PiTrace {
    pub fn oscillated(&self) -> bool {
        self.oscillation_at.is_some()
    }

    /// Record with the smallest exact suboptimality (earliest on ties).
    pub fn best(&self) -> Option<&PiRecord> {
        self.records.iter().fold(None, |best: Option<&PiRecord>, rec| match best {
            Some(b) if b.exact_subopt_inf <= rec.exact_subopt_inf => Some(b),
            _ => Some(rec),
        })
    }
}

/// Runs `opts.iters` iterations of approximate PI. Evaluator failures end
/// the loop and are returned inside the partial trace.
pub fn approximate_pi(mdp: &Mdp, basis: &FeatureBasis, opts: &PiOptions) -> Result<PiTrace> {
    check_len(mdp.n(), basis.n())?;
    opts.eval.validate(mdp.n())?;
    let mut r = match &opts.r0 {
        Some(r0) => {
            check_len(basis.s(), r0.len())?;
            r0.clone()
        }
        None => WeightVector::zeros(basis.s()),
    };
    let j_star = match &opts.j_star {
        Some(j) => {
            check_len(mdp.n(), j.len())?;
            j.clone()
        }
        None => exact_policy_iteration(mdp, &Policy::first_controls(mdp))?.cost,
    };

    let mut trace = PiTrace {
        records: Vec::with_capacity(opts.iters),
        j_star,
        oscillation_at: None,
        oscillation_period: None,
        error: None,
    };
    let mut seen: Vec<Policy> = Vec::new();
    for k in 1..=opts.iters {
        let mu = greedy_policy_from_weights(mdp, basis, &r)?;
        let mut cfg = opts.eval.clone();
        if !opts.reuse_samples {
            cfg.rng = opts.eval.rng.derive(k as u64);
        }
        let result = match evaluate(opts.evaluator, mdp, &mu, basis, &cfg, &r) {
            Ok(res) => res,
            Err(e) => {
                trace.error = Some(e);
                break;
            }
        };
        r = result.r;

        let pm = PolicyMatrices::new(mdp, &mu)?;
        let policy_cost = policy_cost_from_matrices(&pm, mdp.alpha())?;
        let approx = basis.eval(&r);
        let (t_approx, _) = apply_t(mdp, &approx)?;

        let policy_changed = seen.last() != Some(&mu);
        if trace.oscillation_at.is_none() && policy_changed {
            if let Some(pos) = seen.iter().rposition(|p| *p == mu) {
                trace.oscillation_at = Some(k);
                trace.oscillation_period = Some(seen.len() - pos);
            }
        }
        trace.records.push(PiRecord {
            k,
            policy: mu.clone(),
            r: r.clone(),
            exact_subopt_inf: sup_norm(&(&policy_cost - &trace.j_star)),
            policy_cost,
            bellman_residual_inf: sup_norm(&(t_approx - approx)),
            policy_changed,
            cond_estimate: result.condition_estimate,
            samples_used: result.samples_used,
            restart_fingerprint: result.restart_fingerprint,
        });
        seen.push(mu);
    }
    Ok(trace)
}

/// Approximate PI with exploration-enhanced LSTD at `lambda = 0`, i.e.
/// LSTD(0) on independent transitions from the restart distribution, with
/// the same sample set reused for every policy.
pub fn lspi_preset(mdp: &Mdp, basis: &FeatureBasis, cfg: &EvaluatorConfig, iters: usize) -> Result<PiTrace> {
    let eval = EvaluatorConfig { lambda: 0.0, ..cfg.clone() };
    let opts = PiOptions { reuse_samples: true, ..PiOptions::new(EvaluatorKind::ExploreLstd, eval, iters) };
    approximate_pi(mdp, basis, &opts)
}
