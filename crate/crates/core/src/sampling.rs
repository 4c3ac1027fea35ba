//! Seeded trajectory simulation and the empirical estimators built on it.
//!
//! Two regimes are supported: one long trajectory under a policy, and
//! geometric sampling, where each of `t` short trajectories starts from a
//! restart distribution and continues after every transition with
//! probability `lambda`.
//!
//! Every geometric trajectory draws from its own stream derived from the
//! batch stream and its index, so batches do not depend on generation order
//! and the parallel generator returns exactly the sequential result. The
//! restart state is always the first draw of a trajectory's stream: sampling
//! again from the same stream under a different policy reuses the same
//! restart sequence (and common random numbers for the transitions).

use std::collections::hash_map::DefaultHasher;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{check_lambda, check_len, Error, Result};
use crate::mdp::{Mdp, Policy, WeightVector};
use crate::projection::{FeatureBasis, StateDistribution};
use crate::rng::RngStream;

/// One recorded transition `i -> j` under control `u` with cost `g(i,u,j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub control: usize,
    pub next: usize,
    pub cost: f64,
}

/// A simulated path `i_0, ..., i_N` stored as its `N >= 1` transitions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<Transition>,
}

impl Trajectory {
    /// Number of transitions `N`.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn start(&self) -> usize {
        self.steps[0].state
    }

    /// Arrival state `i_N`.
    pub fn end(&self) -> usize {
        self.steps[self.steps.len() - 1].next
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SamplingMode {
    LongTrajectory,
    Geometric { lambda: f64, restart: StateDistribution },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub n: usize,
    pub mode: SamplingMode,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryBatch {
    pub fn is_geometric(&self) -> bool {
        matches!(self.mode, SamplingMode::Geometric { .. })
    }

    /// Total number of transitions, i.e. of sample origins.
    pub fn total_transitions(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// Start states in trajectory order.
    pub fn restart_states(&self) -> Vec<usize> {
        self.trajectories.iter().map(Trajectory::start).collect()
    }

    /// Hash of the restart sequence; equal for batches drawn from the same
    /// frozen restart sequence, whatever policy generated the transitions.
    pub fn restart_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.n.hash(&mut h);
        self.restart_states().hash(&mut h);
        h.finish()
    }

    /// Checks that every recorded transition has positive probability under
    /// `mdp` and that consecutive transitions connect.
    pub fn validate(&self, mdp: &Mdp) -> Result<()> {
        check_len(mdp.n(), self.n)?;
        if matches!(self.mode, SamplingMode::LongTrajectory) && self.trajectories.len() != 1 {
            return Err(Error::InvalidParameter("long-trajectory batch must hold one trajectory".into()));
        }
        for (m, traj) in self.trajectories.iter().enumerate() {
            if traj.is_empty() {
                return Err(Error::InvalidParameter(format!("trajectory {} is empty", m + 1)));
            }
            for (k, t) in traj.steps.iter().enumerate() {
                let ok = t.state < mdp.n()
                    && t.control < mdp.num_controls(t.state)
                    && mdp.row(t.state, t.control).prob_to(t.next) > 0.0;
                if !ok {
                    return Err(Error::InvalidParameter(format!(
                        "trajectory {} step {} is not a possible transition",
                        m + 1,
                        k
                    )));
                }
                if k > 0 && traj.steps[k - 1].next != t.state {
                    return Err(Error::InvalidParameter(format!("trajectory {} is not connected at step {k}", m + 1)));
                }
            }
        }
        Ok(())
    }

    /// Text dump: per trajectory a `traj m=<m> N=<N>` line followed by
    /// `<i> <u> <j> <g>` lines, all indices 1-based.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (m, traj) in self.trajectories.iter().enumerate() {
            let _ = writeln!(out, "traj m={} N={}", m + 1, traj.len());
            for t in &traj.steps {
                let _ = writeln!(out, "{} {} {} {}", t.state + 1, t.control + 1, t.next + 1, t.cost);
            }
        }
        out
    }

    /// Reads the format written by [`TrajectoryBatch::to_text`]. The dump
    /// does not carry the sampling mode or the state count, so the caller
    /// supplies them.
    pub fn parse(text: &str, n: usize, mode: SamplingMode) -> Result<Self> {
        let mut trajectories: Vec<Trajectory> = Vec::new();
        let mut expected: Vec<usize> = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line_no = k + 1;
            let err = |m: String| Error::Parse { line: line_no, message: m };
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields[0] == "traj" {
                let mut len = None;
                for f in &fields[1..] {
                    match f.split_once('=') {
                        Some(("m", v)) if v.parse::<usize>().ok() == Some(trajectories.len() + 1) => {}
                        Some(("N", v)) => len = v.parse::<usize>().ok(),
                        _ => return Err(err(format!("bad trajectory header field `{f}`"))),
                    }
                }
                let len = len.filter(|&l| l >= 1).ok_or_else(|| err("trajectory header needs N >= 1".into()))?;
                trajectories.push(Trajectory { steps: Vec::with_capacity(len) });
                expected.push(len);
                continue;
            }
            let traj = trajectories.last_mut().ok_or_else(|| err("transition before any `traj` header".into()))?;
            if fields.len() != 4 {
                return Err(err(format!("expected `<i> <u> <j> <g>`, got `{line}`")));
            }
            let idx = |s: &str| -> Result<usize> {
                match s.parse::<usize>() {
                    Ok(v) if v >= 1 => Ok(v - 1),
                    _ => Err(err(format!("bad 1-based index `{s}`"))),
                }
            };
            let (state, control, next) = (idx(fields[0])?, idx(fields[1])?, idx(fields[2])?);
            if state >= n || next >= n {
                return Err(err(format!("state out of range 1..={n}")));
            }
            let cost = fields[3].parse::<f64>().map_err(|_| err(format!("bad cost `{}`", fields[3])))?;
            traj.steps.push(Transition { state, control, next, cost });
        }
        for (m, (traj, len)) in trajectories.iter().zip(&expected).enumerate() {
            if traj.len() != *len {
                return Err(Error::Parse {
                    line: 0,
                    message: format!("trajectory {} declares N={len} but has {} transitions", m + 1, traj.len()),
                });
            }
        }
        if trajectories.is_empty() {
            return Err(Error::Parse { line: 0, message: "no trajectories".into() });
        }
        if matches!(mode, SamplingMode::LongTrajectory) && trajectories.len() != 1 {
            return Err(Error::Parse { line: 0, message: "long-trajectory dump must hold one trajectory".into() });
        }
        Ok(Self { n, mode, trajectories })
    }
}

#[inline]
fn step<R: Rng>(mdp: &Mdp, mu: &Policy, state: usize, rng: &mut R) -> Transition {
    let control = mu.control(state);
    let succ = mdp.row(state, control).sample(rng.random::<f64>());
    Transition { state, control, next: succ.state, cost: succ.cost }
}

fn check_sim_inputs(mdp: &Mdp, mu: &Policy, dist: &StateDistribution) -> Result<()> {
    mu.check(mdp)?;
    check_len(mdp.n(), dist.len())
}

/// One trajectory of `length` transitions under `mu`, started from
/// `start_dist`.
pub fn simulate_long_trajectory(
    mdp: &Mdp,
    mu: &Policy,
    length: usize,
    start_dist: &StateDistribution,
    rng: RngStream,
) -> Result<TrajectoryBatch> {
    check_sim_inputs(mdp, mu, start_dist)?;
    if length == 0 {
        return Err(Error::InvalidParameter("trajectory length must be at least 1".into()));
    }
    let mut gen = rng.rng();
    let mut state = start_dist.sample(gen.random::<f64>());
    let mut steps = Vec::with_capacity(length);
    for _ in 0..length {
        let t = step(mdp, mu, state, &mut gen);
        state = t.next;
        steps.push(t);
    }
    Ok(TrajectoryBatch { n: mdp.n(), mode: SamplingMode::LongTrajectory, trajectories: vec![Trajectory { steps }] })
}

/// Trajectory `m` of a geometric batch drawn from `stream`.
pub fn simulate_geometric_trajectory(
    mdp: &Mdp,
    mu: &Policy,
    lambda: f64,
    restart: &StateDistribution,
    stream: RngStream,
) -> Trajectory {
    let mut gen = stream.rng();
    let mut state = restart.sample(gen.random::<f64>());
    let mut steps = Vec::new();
    loop {
        let t = step(mdp, mu, state, &mut gen);
        state = t.next;
        steps.push(t);
        // at lambda = 0 no continuation draw is consumed
        if lambda == 0.0 || gen.random::<f64>() >= lambda {
            break;
        }
    }
    Trajectory { steps }
}

fn check_geometric(mdp: &Mdp, mu: &Policy, lambda: f64, restart: &StateDistribution, t: usize) -> Result<()> {
    check_lambda(lambda)?;
    check_sim_inputs(mdp, mu, restart)?;
    if t == 0 {
        return Err(Error::InvalidParameter("trajectory budget must be at least 1".into()));
    }
    Ok(())
}

/// `t` geometric trajectories; trajectory `m` uses `rng.derive(m)`.
pub fn simulate_geometric_batch(
    mdp: &Mdp,
    mu: &Policy,
    lambda: f64,
    restart: &StateDistribution,
    t: usize,
    rng: RngStream,
) -> Result<TrajectoryBatch> {
    check_geometric(mdp, mu, lambda, restart, t)?;
    let trajectories =
        (0..t).map(|m| simulate_geometric_trajectory(mdp, mu, lambda, restart, rng.derive(m as u64))).collect();
    Ok(TrajectoryBatch { n: mdp.n(), mode: SamplingMode::Geometric { lambda, restart: restart.clone() }, trajectories })
}

/// Parallel version of [`simulate_geometric_batch`] with an identical result.
pub fn simulate_geometric_batch_par(
    mdp: &Mdp,
    mu: &Policy,
    lambda: f64,
    restart: &StateDistribution,
    t: usize,
    rng: RngStream,
) -> Result<TrajectoryBatch> {
    check_geometric(mdp, mu, lambda, restart, t)?;
    let trajectories = (0..t)
        .into_par_iter()
        .map(|m| simulate_geometric_trajectory(mdp, mu, lambda, restart, rng.derive(m as u64)))
        .collect();
    Ok(TrajectoryBatch { n: mdp.n(), mode: SamplingMode::Geometric { lambda, restart: restart.clone() }, trajectories })
}

/// Simulation estimates of `C^(lambda)`, `d^(lambda)` and of the feature
/// covariance `Phi' Xi Phi` with its inverse `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimEstimates {
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
    /// `(1/t) sum phi(i_l) phi(i_l)'`.
    pub covariance: DMatrix<f64>,
    /// Inverse of `covariance`.
    pub g: DMatrix<f64>,
    pub sample_count: usize,
}

/// Running sums of the eligibility-trace recursion
/// `z_l = lambda alpha z_{l-1} + phi(i_l)`.
#[derive(Debug, Clone)]
pub struct LstdAccumulator {
    decay: f64,
    alpha: f64,
    z: DVector<f64>,
    diff: DVector<f64>,
    c_sum: DMatrix<f64>,
    d_sum: DVector<f64>,
    cov_sum: DMatrix<f64>,
    count: usize,
}

impl LstdAccumulator {
    pub fn new(s: usize, alpha: f64, lambda: f64) -> Self {
        Self {
            decay: lambda * alpha,
            alpha,
            z: DVector::zeros(s),
            diff: DVector::zeros(s),
            c_sum: DMatrix::zeros(s, s),
            d_sum: DVector::zeros(s),
            cov_sum: DMatrix::zeros(s, s),
            count: 0,
        }
    }

    /// Adds the sample `(phi(i_l), phi(i_{l+1}), g(i_l, mu(i_l), i_{l+1}))`.
    pub fn push(&mut self, phi: &DVector<f64>, phi_next: &DVector<f64>, cost: f64) {
        self.z *= self.decay;
        self.z += phi;
        self.diff.copy_from(phi);
        self.diff.axpy(-self.alpha, phi_next, 1.0);
        self.c_sum.ger(1.0, &self.z, &self.diff, 1.0);
        self.d_sum.axpy(cost, &self.z, 1.0);
        self.cov_sum.ger(1.0, phi, phi, 1.0);
        self.count += 1;
    }

    /// Clears the eligibility trace before a new trajectory.
    pub fn reset_trace(&mut self) {
        self.z.fill(0.0);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// `(C_t, d_t)` averaged over the samples so far.
    pub fn coefficients(&self) -> (DMatrix<f64>, DVector<f64>) {
        let w = 1.0 / self.count.max(1) as f64;
        (&self.c_sum * w, &self.d_sum * w)
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.cov_sum * (1.0 / self.count.max(1) as f64)
    }

    /// `G_t`, or `None` while the sampled covariance is singular.
    pub fn g(&self) -> Option<DMatrix<f64>> {
        self.covariance().cholesky().map(|ch| ch.inverse()).filter(|g| g.iter().all(|x| x.is_finite()))
    }

    pub fn estimates(&self) -> Result<SimEstimates> {
        let g = self.g().ok_or(Error::CovarianceNotInvertible)?;
        let (c, d) = self.coefficients();
        Ok(SimEstimates { c, d, covariance: self.covariance(), g, sample_count: self.count })
    }
}

pub(crate) fn feature_rows(basis: &FeatureBasis) -> Vec<DVector<f64>> {
    (0..basis.n()).map(|i| basis.row(i)).collect()
}

fn long_trajectory(batch: &TrajectoryBatch) -> Result<&Trajectory> {
    match (&batch.mode, batch.trajectories.as_slice()) {
        (SamplingMode::LongTrajectory, [traj]) => Ok(traj),
        _ => Err(Error::InvalidParameter("expected a long-trajectory batch".into())),
    }
}

/// LSTD-style estimates `C_t`, `d_t`, `G_t` from a long trajectory, where
/// `t` is its number of transitions.
pub fn estimate_lstd_coefficients(
    batch: &TrajectoryBatch,
    alpha: f64,
    basis: &FeatureBasis,
    lambda: f64,
) -> Result<SimEstimates> {
    check_lambda(lambda)?;
    check_len(batch.n, basis.n())?;
    let traj = long_trajectory(batch)?;
    let rows = feature_rows(basis);
    let mut acc = LstdAccumulator::new(basis.s(), alpha, lambda);
    for t in &traj.steps {
        acc.push(&rows[t.state], &rows[t.next], t.cost);
    }
    acc.estimates()
}

fn geometric_params(batch: &TrajectoryBatch) -> Result<(f64, &StateDistribution)> {
    match &batch.mode {
        SamplingMode::Geometric { lambda, restart } => Ok((*lambda, restart)),
        SamplingMode::LongTrajectory => Err(Error::InvalidParameter("expected a geometric batch".into())),
    }
}

/// Simulated costs `c_{l,m}(r)` for `l = 0..N_m-1` of every trajectory:
/// discounted transition costs to the end of the trajectory plus the
/// discounted terminal value `phi(i_N)' r`.
pub fn cost_samples(
    batch: &TrajectoryBatch,
    basis: &FeatureBasis,
    r: &WeightVector,
    alpha: f64,
) -> Result<Vec<Vec<f64>>> {
    geometric_params(batch)?;
    check_len(batch.n, basis.n())?;
    check_len(basis.s(), r.len())?;
    Ok(batch
        .trajectories
        .iter()
        .map(|traj| {
            let mut out = vec![0.0; traj.len()];
            let mut tail = basis.value(traj.end(), r);
            for (l, t) in traj.steps.iter().enumerate().rev() {
                tail = t.cost + alpha * tail;
                out[l] = tail;
            }
            out
        })
        .collect())
}

/// Relative frequency of each state among the sample origins `i_{l,m}`,
/// `l = 0..N_m-1`.
pub fn empirical_occupancy(batch: &TrajectoryBatch) -> Result<DVector<f64>> {
    geometric_params(batch)?;
    let mut counts = DVector::zeros(batch.n);
    for t in batch.trajectories.iter().flat_map(|tr| &tr.steps) {
        counts[t.state] += 1.0;
    }
    let total: f64 = counts.sum();
    Ok(counts / total)
}

/// Per-state average `D_t(i)` of the cost samples originating at `i`;
/// `None` for states with no samples.
pub fn monte_carlo_cost_estimate(
    batch: &TrajectoryBatch,
    basis: &FeatureBasis,
    r: &WeightVector,
    alpha: f64,
) -> Result<Vec<Option<f64>>> {
    let costs = cost_samples(batch, basis, r, alpha)?;
    let mut sums = vec![0.0; batch.n];
    let mut counts = vec![0usize; batch.n];
    for (traj, c) in batch.trajectories.iter().zip(&costs) {
        for (t, &v) in traj.steps.iter().zip(c) {
            sums[t.state] += v;
            counts[t.state] += 1;
        }
    }
    Ok(sums.into_iter().zip(counts).map(|(s, k)| (k > 0).then(|| s / k as f64)).collect())
}

/// Split of the samples at one state by the number of transitions left in
/// their trajectory: bucket `l` holds samples with exactly `l + 1` remaining.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDecomposition {
    /// Sample count per bucket.
    pub counts: Vec<usize>,
    /// `f_l(i)`: share of the state's samples in bucket `l`.
    pub fractions: Vec<f64>,
    /// `E_l(i)`: mean cost sample in bucket `l`, `None` if empty.
    pub means: Vec<Option<f64>>,
}

impl StateDecomposition {
    /// `sum_l f_l(i) E_l(i)`.
    pub fn recombine(&self) -> f64 {
        self.fractions.iter().zip(&self.means).filter_map(|(f, m)| m.map(|m| f * m)).sum()
    }
}

/// Per-state decomposition of [`monte_carlo_cost_estimate`] by remaining
/// trajectory length; `None` for unvisited states.
pub fn empirical_decomposition(
    batch: &TrajectoryBatch,
    basis: &FeatureBasis,
    r: &WeightVector,
    alpha: f64,
) -> Result<Vec<Option<StateDecomposition>>> {
    let costs = cost_samples(batch, basis, r, alpha)?;
    let max_len = batch.trajectories.iter().map(Trajectory::len).max().unwrap_or(0);
    let mut counts = vec![vec![0usize; max_len]; batch.n];
    let mut sums = vec![vec![0.0; max_len]; batch.n];
    for (traj, c) in batch.trajectories.iter().zip(&costs) {
        let len = traj.len();
        for (l, (t, &v)) in traj.steps.iter().zip(c).enumerate() {
            let bucket = len - l - 1;
            counts[t.state][bucket] += 1;
            sums[t.state][bucket] += v;
        }
    }
    Ok(counts
        .into_iter()
        .zip(sums)
        .map(|(cnt, sum)| {
            let total: usize = cnt.iter().sum();
            (total > 0).then(|| StateDecomposition {
                fractions: cnt.iter().map(|&k| k as f64 / total as f64).collect(),
                means: cnt.iter().zip(&sum).map(|(&k, &s)| (k > 0).then(|| s / k as f64)).collect(),
                counts: cnt,
            })
        })
        .collect())
}
