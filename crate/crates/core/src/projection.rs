//! Feature bases, weighted Euclidean projection, and the exact projected
//! equation `C^(lambda) r = d^(lambda)`.
//!
//! Everything here is model based. The simulation-based estimators in
//! [`crate::sampling`] and [`crate::evaluators`] are checked against it.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_lambda, check_len, Error, Result};
use crate::exact::{policy_cost_from_matrices, stationary_distribution, t_mu_lambda_from_matrices};
use crate::linalg::{self, weighted_norm};
use crate::mdp::{CostVector, Mdp, Policy, PolicyMatrices, WeightVector};
use crate::rng::RngStream;

const RANK_TOL: f64 = 1e-10;
const DIST_SUM_TOL: f64 = 1e-12;

/// `n x s` feature matrix `Phi` of full column rank.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBasis {
    phi: DMatrix<f64>,
}

impl FeatureBasis {
    /// Checks `s <= n` and that the smallest singular value exceeds
    /// `1e-10` times the largest.
    pub fn new(phi: DMatrix<f64>) -> Result<Self> {
        if phi.ncols() == 0 || phi.ncols() > phi.nrows() {
            return Err(Error::InvalidParameter(format!(
                "basis must have 1 <= s <= n, got n={} s={}",
                phi.nrows(),
                phi.ncols()
            )));
        }
        if phi.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("basis has non-finite entries".into()));
        }
        let ratio = linalg::singular_value_ratio(&phi);
        if !(ratio > RANK_TOL) {
            return Err(Error::RankDeficient { ratio });
        }
        Ok(Self { phi })
    }

    pub fn identity(n: usize) -> Self {
        Self { phi: DMatrix::identity(n, n) }
    }

    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    pub fn s(&self) -> usize {
        self.phi.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }

    /// Feature vector `phi(i)` as a column.
    pub fn row(&self, i: usize) -> DVector<f64> {
        self.phi.row(i).transpose()
    }

    /// `phi(i)' r`.
    #[inline]
    pub fn value(&self, i: usize, r: &WeightVector) -> f64 {
        self.phi.row(i).iter().zip(r.iter()).map(|(a, b)| a * b).sum()
    }

    /// `Phi r`.
    pub fn eval(&self, r: &WeightVector) -> CostVector {
        &self.phi * r
    }

    /// `Phi B`; spans the same subspace when `B` is invertible.
    pub fn transformed(&self, b: &DMatrix<f64>) -> Result<Self> {
        check_len(self.s(), b.nrows())?;
        Self::new(&self.phi * b)
    }

    /// Builds a basis from a generator spec.
    pub fn generate(spec: &BasisSpec, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("basis needs n >= 1".into()));
        }
        match *spec {
            BasisSpec::Identity => Ok(Self::identity(n)),
            BasisSpec::Poly { degree } => {
                let x = |i: usize| if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
                Self::new(DMatrix::from_fn(n, degree + 1, |i, k| x(i).powi(k as i32)))
            }
            BasisSpec::Indicator { blocks } => {
                if blocks == 0 || blocks > n {
                    return Err(Error::InvalidParameter(format!("indicator needs 1 <= k <= n, got {blocks}")));
                }
                Self::new(DMatrix::from_fn(n, blocks, |i, b| if i * blocks / n == b { 1.0 } else { 0.0 }))
            }
            BasisSpec::Random { seed, dim } => {
                if dim == 0 || dim > n {
                    return Err(Error::InvalidParameter(format!("random basis needs 1 <= s <= n, got {dim}")));
                }
                let mut rng = RngStream::new(seed, 0x0062_6173_6973).rng();
                let raw = DMatrix::from_fn(n, dim, |_, _| rng.random::<f64>());
                Self::new(raw.qr().q())
            }
        }
    }

    /// Parses `basis n=<n> s=<s>` followed by `n` lines of `s` floats.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines.next().ok_or(Error::Parse { line: 0, message: "empty input".into() })?;
        let herr = |m: &str| Error::Parse { line: hline, message: m.to_string() };
        let mut fields = header.split_whitespace();
        if fields.next() != Some("basis") {
            return Err(herr("expected header `basis n=<n> s=<s>`"));
        }
        let (mut n, mut s) = (None, None);
        for f in fields {
            match f.split_once('=') {
                Some(("n", v)) => n = v.parse::<usize>().ok(),
                Some(("s", v)) => s = v.parse::<usize>().ok(),
                _ => return Err(herr(&format!("unknown header field `{f}`"))),
            }
        }
        let (n, s) = match (n, s) {
            (Some(n), Some(s)) if n >= 1 && s >= 1 => (n, s),
            _ => return Err(herr("header needs n>=1 and s>=1")),
        };
        let mut data = Vec::with_capacity(n * s);
        let mut rows = 0;
        for (line, l) in lines {
            let vals = l
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::Parse { line, message: format!("bad number in `{l}`") })?;
            if vals.len() != s {
                return Err(Error::Parse { line, message: format!("expected {s} values, got {}", vals.len()) });
            }
            data.extend(vals);
            rows += 1;
        }
        if rows != n {
            return Err(Error::Parse { line: hline, message: format!("expected {n} rows, got {rows}") });
        }
        Self::new(DMatrix::from_row_slice(n, s, &data))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("basis n={} s={}\n", self.n(), self.s());
        for row in self.phi.row_iter() {
            let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }
}

/// Built-in basis generators: `identity`, `poly:<degree>`, `indicator:<k>`,
/// `random:<seed>:<s>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisSpec {
    Identity,
    /// Columns `x^0, ..., x^degree` with states scaled to `x in [0, 1]`.
    Poly {
        degree: usize,
    },
    /// Aggregation into `blocks` contiguous groups of states.
    Indicator {
        blocks: usize,
    },
    /// Seeded uniform entries, orthonormalized.
    Random {
        seed: u64,
        dim: usize,
    },
}

impl FromStr for BasisSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("unrecognized basis spec `{s}`"));
        let mut parts = s.split(':');
        let kind = parts.next().unwrap_or_default();
        let mut num = || parts.next().and_then(|p| p.parse::<u64>().ok()).ok_or_else(bad);
        let spec = match kind {
            "identity" => BasisSpec::Identity,
            "poly" => BasisSpec::Poly { degree: num()? as usize },
            "indicator" => BasisSpec::Indicator { blocks: num()? as usize },
            "random" => {
                let seed = num()?;
                BasisSpec::Random { seed, dim: num()? as usize }
            }
            _ => return Err(bad()),
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(spec)
    }
}

impl fmt::Display for BasisSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisSpec::Identity => write!(f, "identity"),
            BasisSpec::Poly { degree } => write!(f, "poly:{degree}"),
            BasisSpec::Indicator { blocks } => write!(f, "indicator:{blocks}"),
            BasisSpec::Random { seed, dim } => write!(f, "random:{seed}:{dim}"),
        }
    }
}

/// Strictly positive probability vector over states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution {
    xi: DVector<f64>,
}

impl StateDistribution {
    pub fn new(xi: DVector<f64>) -> Result<Self> {
        let sum = xi.sum();
        if xi.is_empty() || (sum - 1.0).abs() > DIST_SUM_TOL {
            return Err(Error::InvalidParameter(format!("distribution must sum to 1, got {sum}")));
        }
        if xi.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidParameter("distribution entries must be strictly positive".into()));
        }
        Ok(Self { xi })
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(w: DVector<f64>) -> Result<Self> {
        let sum = w.sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::InvalidParameter("weights must have a positive finite sum".into()));
        }
        Self::new(w / sum)
    }

    pub fn uniform(n: usize) -> Self {
        Self { xi: DVector::from_element(n, 1.0 / n as f64) }
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.xi
    }

    pub fn get(&self, i: usize) -> f64 {
        self.xi[i]
    }

    /// Inverse-CDF draw of a state from a uniform in `[0, 1)`.
    pub fn sample(&self, uniform: f64) -> usize {
        let mut acc = 0.0;
        for (i, &p) in self.xi.iter().enumerate() {
            acc += p;
            if uniform < acc {
                return i;
            }
        }
        self.xi.len() - 1
    }

    /// `|v|_xi`.
    pub fn norm(&self, v: &DVector<f64>) -> f64 {
        weighted_norm(v, &self.xi)
    }
}

/// Exact projected-equation data `C r = d` for one policy, basis, weighting
/// and lambda.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedEqCoefficients {
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
    /// `Phi' Xi Phi`.
    pub gram: DMatrix<f64>,
    pub lambda: f64,
    /// 1-norm condition number of `C` (infinite when singular).
    pub condition_estimate: f64,
}

/// Stationary distribution of the chain of `mu`.
pub fn policy_stationary(mdp: &Mdp, mu: &Policy) -> Result<StateDistribution> {
    let pm = PolicyMatrices::new(mdp, mu)?;
    StateDistribution::new(stationary_distribution(&pm)?)
}

fn check_dims(basis: &FeatureBasis, xi: &StateDistribution, n: usize) -> Result<()> {
    check_len(n, basis.n())?;
    check_len(n, xi.len())
}

/// `Phi' Xi Phi`.
pub fn gram(basis: &FeatureBasis, xi: &StateDistribution) -> DMatrix<f64> {
    let phi = basis.matrix();
    let weighted = DMatrix::from_fn(phi.nrows(), phi.ncols(), |i, k| xi.get(i) * phi[(i, k)]);
    phi.transpose() * weighted
}

/// `r = argmin sum_i xi(i) (phi(i)' r - J(i))^2` via `(Phi' Xi Phi) r = Phi' Xi J`.
pub fn project(j: &CostVector, basis: &FeatureBasis, xi: &StateDistribution) -> Result<WeightVector> {
    check_dims(basis, xi, j.len())?;
    let phi = basis.matrix();
    let g = gram(basis, xi);
    let rhs = phi.transpose() * j.component_mul(xi.as_vector());
    let r =
        linalg::solve_spd(&g, &rhs).map_err(|_| Error::RankDeficient { ratio: linalg::singular_value_ratio(phi) })?;
    let residual = (&g * &r - &rhs).amax();
    let scale = 1.0 + rhs.amax() + g.amax() * r.amax();
    if residual > 1e-10 * scale {
        return Err(Error::Residual { residual, tolerance: 1e-10 * scale });
    }
    Ok(r)
}

/// `Pi = Phi (Phi' Xi Phi)^{-1} Phi' Xi` as an `n x n` matrix.
pub fn projection_matrix(basis: &FeatureBasis, xi: &StateDistribution) -> Result<DMatrix<f64>> {
    let phi = basis.matrix();
    let g = gram(basis, xi);
    let phit_xi = DMatrix::from_fn(phi.ncols(), phi.nrows(), |k, i| phi[(i, k)] * xi.get(i));
    let inner = g.cholesky().ok_or(Error::Singular)?.solve(&phit_xi);
    Ok(phi * inner)
}

/// Closed forms of the geometric series
/// `P^(lambda) = alpha (1 - lambda) P (I - lambda alpha P)^{-1}` and
/// `g^(lambda) = (I - lambda alpha P)^{-1} g`.
pub fn lambda_matrices(pm: &PolicyMatrices, alpha: f64, lambda: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_lambda(lambda)?;
    let n = pm.n();
    let m = DMatrix::identity(n, n) - &pm.p * (lambda * alpha);
    let (m_inv, _) = linalg::inverse_with_condition(&m)?;
    let p_lambda = &pm.p * &m_inv * (alpha * (1.0 - lambda));
    let g_lambda = &m_inv * &pm.gbar;
    Ok((p_lambda, g_lambda))
}

/// Assembles `C = Phi' Xi (I - P^(lambda)) Phi` and `d = Phi' Xi g^(lambda)`.
pub fn build_projected_coefficients(
    mdp: &Mdp,
    mu: &Policy,
    basis: &FeatureBasis,
    xi: &StateDistribution,
    lambda: f64,
) -> Result<ProjectedEqCoefficients> {
    let pm = PolicyMatrices::new(mdp, mu)?;
    coefficients_from_matrices(&pm, mdp.alpha(), basis, xi, lambda)
}

pub(crate) fn coefficients_from_matrices(
    pm: &PolicyMatrices,
    alpha: f64,
    basis: &FeatureBasis,
    xi: &StateDistribution,
    lambda: f64,
) -> Result<ProjectedEqCoefficients> {
    check_lambda(lambda)?;
    check_dims(basis, xi, pm.n())?;
    let n = pm.n();
    let phi = basis.matrix();
    // (I - P^(lambda)) Phi = Phi - alpha (1 - lambda) P M^{-1} Phi with M = I - lambda alpha P
    let m = DMatrix::identity(n, n) - &pm.p * (lambda * alpha);
    let lu = m.lu();
    let m_inv_phi = lu.solve(phi).ok_or(Error::Singular)?;
    let g_lambda = lu.solve(&pm.gbar).ok_or(Error::Singular)?;
    let resid_phi = phi - &pm.p * m_inv_phi * (alpha * (1.0 - lambda));
    let phit_xi = DMatrix::from_fn(phi.ncols(), n, |k, i| phi[(i, k)] * xi.get(i));
    let c = &phit_xi * resid_phi;
    let d = &phit_xi * g_lambda;
    let condition_estimate = linalg::condition_1(&c);
    Ok(ProjectedEqCoefficients { c, d, gram: gram(basis, xi), lambda, condition_estimate })
}

/// `r(lambda) = C^{-1} d`, refusing numerically singular `C`.
pub fn solve_projected_equation(coeff: &ProjectedEqCoefficients) -> Result<WeightVector> {
    if !coeff.condition_estimate.is_finite() {
        return Err(Error::Singular);
    }
    if coeff.condition_estimate > linalg::NEAR_SINGULAR_CONDITION {
        return Err(Error::NearSingular { condition: coeff.condition_estimate });
    }
    let (r, _) = linalg::solve_checked(&coeff.c, &coeff.d)?;
    let residual = (&coeff.c * &r - &coeff.d).amax();
    let tol = 1e-10 * (1.0 + coeff.d.amax() + coeff.c.amax() * r.amax());
    if residual > tol {
        return Err(Error::Residual { residual, tolerance: tol });
    }
    Ok(r)
}

/// `alpha_lambda = alpha (1 - lambda) / (1 - lambda alpha)`.
pub fn contraction_modulus(alpha: f64, lambda: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    check_lambda(lambda)?;
    Ok(alpha * (1.0 - lambda) / (1.0 - lambda * alpha))
}

/// Result of [`check_projected_contraction`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionCheck {
    pub is_contraction: bool,
    /// Induced `|.|_xi` norm of `Pi P^(lambda)`.
    pub norm_bound: f64,
    /// Spectral radius of `Pi P^(lambda)`; above 1 the projected value
    /// iteration (and LSPE with exact coefficients) diverges.
    pub spectral_radius: f64,
}

/// Induced `xi`-weighted norm of the linear part `Pi P^(lambda)` of
/// `Pi T_mu^(lambda)`, computed as the spectral norm of
/// `Xi^{1/2} Pi P^(lambda) Xi^{-1/2}`.
pub fn check_projected_contraction(
    mdp: &Mdp,
    mu: &Policy,
    basis: &FeatureBasis,
    xi: &StateDistribution,
    lambda: f64,
) -> Result<ContractionCheck> {
    let pm = PolicyMatrices::new(mdp, mu)?;
    check_dims(basis, xi, pm.n())?;
    let (p_lambda, _) = lambda_matrices(&pm, mdp.alpha(), lambda)?;
    let m = projection_matrix(basis, xi)? * p_lambda;
    let sqrt_xi = xi.as_vector().map(f64::sqrt);
    let similar = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| sqrt_xi[i] * m[(i, j)] / sqrt_xi[j]);
    let norm_bound = linalg::spectral_norm(&similar);

    // eigenvalues of Pi P^(lambda) restricted to S are those of the s x s matrix
    let phi = basis.matrix();
    let g = gram(basis, xi);
    let phit_xi = DMatrix::from_fn(phi.ncols(), phi.nrows(), |k, i| phi[(i, k)] * xi.get(i));
    let small = g.cholesky().ok_or(Error::Singular)?.solve(&(phit_xi * (&m * phi)));
    let spectral_radius = small.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok(ContractionCheck { is_contraction: norm_bound < 1.0, norm_bound, spectral_radius })
}

/// `(1 - beta) xi_mu + beta xi_off`.
pub fn mixture_distribution(
    xi_mu: &StateDistribution,
    xi_off: &StateDistribution,
    beta: f64,
) -> Result<StateDistribution> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidParameter(format!("beta must lie in [0, 1), got {beta}")));
    }
    check_len(xi_mu.len(), xi_off.len())?;
    let mixed = xi_mu.as_vector() * (1.0 - beta) + xi_off.as_vector() * beta;
    StateDistribution::from_weights(mixed)
}

/// Both sides of `|J_mu - Phi r(lambda)| <= |J_mu - Pi J_mu| / sqrt(1 - alpha_lambda^2)`
/// in the norm of the stationary distribution of `mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBound {
    pub lhs: f64,
    pub rhs: f64,
}

/// Evaluates the stationary-weighted error bound. The weighting is always
/// the stationary distribution of `mu`: the bound does not hold for others.
pub fn error_bound(mdp: &Mdp, mu: &Policy, basis: &FeatureBasis, lambda: f64) -> Result<ErrorBound> {
    let pm = PolicyMatrices::new(mdp, mu)?;
    let xi = StateDistribution::new(stationary_distribution(&pm)?)?;
    let j_mu = policy_cost_from_matrices(&pm, mdp.alpha())?;
    let coeff = coefficients_from_matrices(&pm, mdp.alpha(), basis, &xi, lambda)?;
    let r = solve_projected_equation(&coeff)?;
    let lhs = xi.norm(&(&j_mu - basis.eval(&r)));
    let best = basis.eval(&project(&j_mu, basis, &xi)?);
    let a = contraction_modulus(mdp.alpha(), lambda)?;
    let rhs = xi.norm(&(&j_mu - best)) / (1.0 - a * a).sqrt();
    Ok(ErrorBound { lhs, rhs })
}

/// Long-run occupancy of geometric sampling: the normalization of
/// `zeta_0' (I - lambda P)^{-1}`.
pub fn occupancy_distribution(
    pm: &PolicyMatrices,
    restart: &StateDistribution,
    lambda: f64,
) -> Result<StateDistribution> {
    check_lambda(lambda)?;
    check_len(pm.n(), restart.len())?;
    let n = pm.n();
    let a = (DMatrix::identity(n, n) - &pm.p * lambda).transpose();
    let unnormalized = linalg::solve(&a, restart.as_vector())?;
    StateDistribution::from_weights(unnormalized)
}

/// `Pi_w T_mu^(lambda)(Phi r)` in weight space: the projected value
/// iteration step for projection weights `w`.
pub fn projected_lambda_step(
    mdp: &Mdp,
    mu: &Policy,
    basis: &FeatureBasis,
    weights: &StateDistribution,
    lambda: f64,
    r: &WeightVector,
) -> Result<WeightVector> {
    check_lambda(lambda)?;
    check_len(basis.s(), r.len())?;
    let pm = PolicyMatrices::new(mdp, mu)?;
    let target = t_mu_lambda_from_matrices(&pm, mdp.alpha(), lambda, &basis.eval(r))?;
    project(&target, basis, weights)
}
