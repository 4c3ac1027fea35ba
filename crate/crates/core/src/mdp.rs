//! Finite discounted MDP model and its line-oriented text format.
//!
//! States and controls are 0-based in memory. The text format is 1-based:
//!
//! ```text
//! mdp n=3 alpha=0.9
//! t 1 1 2 0.5 1.0
//! t 1 1 3 0.5 -2.0
//! ...
//! ```
//!
//! Each `t <i> <u> <j> <p> <g>` line is one transition with positive
//! probability. Control sets are inferred from the lines; the controls of a
//! state must be numbered `1..=k` without gaps.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};

/// Cost vector `J` over states.
pub type CostVector = DVector<f64>;

/// Feature weight vector `r`.
pub type WeightVector = DVector<f64>;

/// Default upper bound on the number of states accepted by parsers and
/// generators. Everything here is dense.
pub const DEFAULT_STATE_CAP: usize = 2000;

const ROW_SUM_TOL: f64 = 1e-12;
const FILE_ROW_SUM_TOL: f64 = 1e-9;

/// One successor of a state-control pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Successor {
    pub state: usize,
    pub prob: f64,
    pub cost: f64,
}

/// Transition law of one `(i, u)` pair, successors sorted by state.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlRow {
    successors: Vec<Successor>,
}

impl ControlRow {
    pub fn successors(&self) -> &[Successor] {
        &self.successors
    }

    /// Expected one-stage value `sum_j p_ij(u) (g(i,u,j) + alpha J(j))`.
    #[inline]
    pub fn lookahead(&self, alpha: f64, j: &[f64]) -> f64 {
        self.successors.iter().map(|s| s.prob * (s.cost + alpha * j[s.state])).sum()
    }

    pub fn expected_cost(&self) -> f64 {
        self.successors.iter().map(|s| s.prob * s.cost).sum()
    }

    pub fn prob_to(&self, j: usize) -> f64 {
        self.successors.binary_search_by_key(&j, |s| s.state).map(|k| self.successors[k].prob).unwrap_or(0.0)
    }

    /// Inverse-CDF draw of a successor from a uniform in `[0, 1)`.
    pub fn sample(&self, uniform: f64) -> &Successor {
        let mut acc = 0.0;
        for s in &self.successors {
            acc += s.prob;
            if uniform < acc {
                return s;
            }
        }
        // rounding left the cumulative sum a hair below 1
        self.successors.last().expect("control rows are nonempty")
    }
}

/// Finite discounted Markov decision problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    alpha: f64,
    rows: Vec<Vec<ControlRow>>,
}

impl Mdp {
    /// Builds a model from 0-based `(i, u, j, p, g)` transitions.
    ///
    /// Duplicate `(i, u, j)` triples are merged (probabilities add, costs
    /// are probability-weighted). Zero-probability entries are dropped.
    pub fn from_transitions<I>(n: usize, alpha: f64, transitions: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, usize, f64, f64)>,
    {
        // per state: control -> successor -> (probability, cost)
        type Successors = BTreeMap<usize, (f64, f64)>;
        let mut table: Vec<BTreeMap<usize, Successors>> = vec![BTreeMap::new(); n];
        for (i, u, j, p, g) in transitions {
            if i >= n || j >= n {
                return Err(Error::InvalidModel(format!(
                    "transition ({i}, {u}, {j}) references a state outside 0..{n}"
                )));
            }
            if !(p.is_finite() && g.is_finite()) || p < 0.0 {
                return Err(Error::InvalidModel(format!(
                    "transition ({i}, {u}, {j}) has invalid probability {p} or cost {g}"
                )));
            }
            if p == 0.0 {
                continue;
            }
            let entry = table[i].entry(u).or_default().entry(j).or_insert((0.0, 0.0));
            entry.0 += p;
            entry.1 += p * g;
        }
        let rows = table
            .into_iter()
            .enumerate()
            .map(|(i, controls)| {
                if let Some((&last, _)) = controls.iter().next_back() {
                    if last + 1 != controls.len() {
                        return Err(Error::InvalidModel(format!(
                            "controls of state {i} are not numbered contiguously"
                        )));
                    }
                }
                Ok(controls
                    .into_values()
                    .map(|succ| ControlRow {
                        successors: succ
                            .into_iter()
                            .map(|(state, (prob, pg))| Successor { state, prob, cost: pg / prob })
                            .collect(),
                    })
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(alpha, rows)
    }

    /// Builds a single-policy model from a dense transition matrix and a
    /// dense transition-cost matrix `g(i, j)`.
    pub fn single_policy(alpha: f64, p: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<Self> {
        let n = p.nrows();
        check_len(n, p.ncols())?;
        check_len(n, g.nrows())?;
        check_len(n, g.ncols())?;
        let triples = (0..n).flat_map(|i| (0..n).map(move |j| (i, 0, j, p[(i, j)], g[(i, j)])));
        Self::from_transitions(n, alpha, triples)
    }

    fn new(alpha: f64, rows: Vec<Vec<ControlRow>>) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidModel(format!("discount must lie in (0, 1), got {alpha}")));
        }
        if rows.is_empty() {
            return Err(Error::InvalidModel("model has no states".into()));
        }
        for (i, controls) in rows.iter().enumerate() {
            if controls.is_empty() {
                return Err(Error::InvalidModel(format!("state {i} has no controls")));
            }
            for (u, row) in controls.iter().enumerate() {
                let sum: f64 = row.successors.iter().map(|s| s.prob).sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidModel(format!("probabilities of (state {i}, control {u}) sum to {sum}")));
                }
            }
        }
        Ok(Self { alpha, rows })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn num_controls(&self, i: usize) -> usize {
        self.rows[i].len()
    }

    pub fn row(&self, i: usize, u: usize) -> &ControlRow {
        &self.rows[i][u]
    }

    pub fn controls(&self, i: usize) -> &[ControlRow] {
        &self.rows[i]
    }

    /// Number of stationary deterministic policies, saturating.
    pub fn policy_count(&self) -> u128 {
        self.rows.iter().fold(1u128, |acc, c| acc.saturating_mul(c.len() as u128))
    }

    /// Same model with a different discount factor.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(alpha, self.rows.clone())
    }

    /// Parses the text format, rejecting rows whose probabilities miss 1 by
    /// more than `1e-9`. Accepted rows are renormalized.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_cap(text, DEFAULT_STATE_CAP)
    }

    pub fn parse_with_cap(text: &str, max_states: usize) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines.next().ok_or(Error::Parse { line: 0, message: "empty input".into() })?;
        let (n, alpha) = parse_header(header).map_err(|message| Error::Parse { line: hline, message })?;
        if n > max_states {
            return Err(Error::Parse {
                line: hline,
                message: format!("n={n} exceeds the configured state cap {max_states}"),
            });
        }
        let mut triples = Vec::new();
        let mut sums: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
        for (line, l) in lines {
            let err = |message: String| Error::Parse { line, message };
            let fields: Vec<&str> = l.split_whitespace().collect();
            if fields.len() != 6 || fields[0] != "t" {
                return Err(err(format!("expected `t <i> <u> <j> <p> <g>`, got `{l}`")));
            }
            let idx = |s: &str| -> std::result::Result<usize, Error> {
                match s.parse::<usize>() {
                    Ok(v) if v >= 1 => Ok(v - 1),
                    _ => Err(err(format!("expected a 1-based index, got `{s}`"))),
                }
            };
            let (i, u, j) = (idx(fields[1])?, idx(fields[2])?, idx(fields[3])?);
            if i >= n || j >= n {
                return Err(err(format!("state index out of range 1..={n}")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number `{s}`")));
            let (p, g) = (num(fields[4])?, num(fields[5])?);
            if !(p > 0.0 && p <= 1.0 + FILE_ROW_SUM_TOL) || !g.is_finite() {
                return Err(err(format!("probability must lie in (0, 1] and cost be finite, got {p} {g}")));
            }
            let e = sums.entry((i, u)).or_insert((0.0, line));
            e.0 += p;
            triples.push((i, u, j, p, g));
        }
        for (&(i, u), &(sum, line)) in &sums {
            if (sum - 1.0).abs() > FILE_ROW_SUM_TOL {
                return Err(Error::Parse {
                    line,
                    message: format!("probabilities of state {} control {} sum to {sum}", i + 1, u + 1),
                });
            }
        }
        let triples = triples.into_iter().map(|(i, u, j, p, g)| (i, u, j, p / sums[&(i, u)].0, g));
        Self::from_transitions(n, alpha, triples)
    }

    /// Serializes to the text format. Floats use shortest round-trip form.
    pub fn to_text(&self) -> String {
        let mut out = format!("mdp n={} alpha={}\n", self.n(), self.alpha);
        for (i, controls) in self.rows.iter().enumerate() {
            for (u, row) in controls.iter().enumerate() {
                for s in &row.successors {
                    let _ = writeln!(out, "t {} {} {} {} {}", i + 1, u + 1, s.state + 1, s.prob, s.cost);
                }
            }
        }
        out
    }
}

fn parse_header(header: &str) -> std::result::Result<(usize, f64), String> {
    let mut fields = header.split_whitespace();
    if fields.next() != Some("mdp") {
        return Err(format!("expected header `mdp n=<n> alpha=<float>`, got `{header}`"));
    }
    let (mut n, mut alpha) = (None, None);
    for f in fields {
        match f.split_once('=') {
            Some(("n", v)) => n = v.parse::<usize>().ok(),
            Some(("alpha", v)) => alpha = v.parse::<f64>().ok(),
            _ => return Err(format!("unknown header field `{f}`")),
        }
    }
    match (n, alpha) {
        (Some(n), Some(a)) if n >= 1 => Ok((n, a)),
        _ => Err(format!("header needs n>=1 and alpha, got `{header}`")),
    }
}

/// Stationary deterministic policy: `mu[i]` is a control index of state `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Policy(Vec<usize>);

impl Policy {
    pub fn new(mdp: &Mdp, controls: Vec<usize>) -> Result<Self> {
        check_len(mdp.n(), controls.len())?;
        for (i, &u) in controls.iter().enumerate() {
            if u >= mdp.num_controls(i) {
                return Err(Error::InvalidParameter(format!("control {u} is not admissible at state {i}")));
            }
        }
        Ok(Self(controls))
    }

    /// The policy choosing control 0 everywhere.
    pub fn first_controls(mdp: &Mdp) -> Self {
        Self(vec![0; mdp.n()])
    }

    pub(crate) fn from_vec_unchecked(controls: Vec<usize>) -> Self {
        Self(controls)
    }

    pub fn control(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub(crate) fn check(&self, mdp: &Mdp) -> Result<()> {
        check_len(mdp.n(), self.0.len())?;
        match self.0.iter().enumerate().find(|(i, &u)| u >= mdp.num_controls(*i)) {
            Some((i, u)) => Err(Error::InvalidParameter(format!("control {u} is not admissible at state {i}"))),
            None => Ok(()),
        }
    }
}

/// Dense `P_mu` and expected one-stage cost `g_mu` of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyMatrices {
    pub p: DMatrix<f64>,
    pub gbar: DVector<f64>,
}

impl PolicyMatrices {
    pub fn new(mdp: &Mdp, mu: &Policy) -> Result<Self> {
        mu.check(mdp)?;
        let n = mdp.n();
        let mut p = DMatrix::zeros(n, n);
        let mut gbar = DVector::zeros(n);
        for i in 0..n {
            let row = mdp.row(i, mu.control(i));
            for s in row.successors() {
                p[(i, s.state)] += s.prob;
            }
            gbar[i] = row.expected_cost();
        }
        Ok(Self { p, gbar })
    }

    pub fn n(&self) -> usize {
        self.gbar.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "mdp n=2 alpha=0.9\n\
        t 1 1 1 0.5 1\n\
        t 1 1 2 0.5 1\n\
        t 1 2 2 1 3\n\
        t 2 1 1 0.8 2\n\
        t 2 1 2 0.2 2\n";

    #[test]
    fn parses_and_round_trips() {
        let mdp = Mdp::parse(SMALL).unwrap();
        assert_eq!(mdp.n(), 2);
        assert_eq!(mdp.num_controls(0), 2);
        assert_eq!(mdp.num_controls(1), 1);
        assert_eq!(mdp.row(1, 0).prob_to(0), 0.8);
        let again = Mdp::parse(&mdp.to_text()).unwrap();
        assert_eq!(mdp, again);
    }

    #[test]
    fn rejects_rows_not_summing_to_one() {
        let bad = "mdp n=2 alpha=0.9\nt 1 1 1 0.5 1\nt 1 1 2 0.4 1\nt 2 1 2 1 0\n";
        assert!(matches!(Mdp::parse(bad), Err(Error::Parse { .. })));
        // within 1e-9 is accepted and renormalized
        let ok = "mdp n=1 alpha=0.5\nt 1 1 1 0.9999999999 1\n";
        let mdp = Mdp::parse(ok).unwrap();
        assert_eq!(mdp.row(0, 0).successors()[0].prob, 1.0);
    }

    #[test]
    fn rejects_bad_headers_and_gaps() {
        assert!(Mdp::parse("mdp n=2\n").is_err());
        assert!(Mdp::parse("mdp n=1 alpha=1.0\nt 1 1 1 1 0\n").is_err());
        assert!(Mdp::parse("mdp n=1 alpha=0.5\nt 1 2 1 1 0\n").is_err());
        // state 2 has no controls
        assert!(Mdp::parse("mdp n=2 alpha=0.5\nt 1 1 1 1 0\n").is_err());
        assert!(Mdp::parse_with_cap("mdp n=3 alpha=0.5\n", 2).is_err());
    }

    #[test]
    fn policy_matrices_rows_are_stochastic() {
        let mdp = Mdp::parse(SMALL).unwrap();
        let mu = Policy::new(&mdp, vec![1, 0]).unwrap();
        let pm = PolicyMatrices::new(&mdp, &mu).unwrap();
        assert_eq!(pm.p[(0, 1)], 1.0);
        assert_eq!(pm.gbar[0], 3.0);
        for i in 0..2 {
            assert!((pm.p.row(i).sum() - 1.0).abs() <= 1e-12);
        }
        assert!(Policy::new(&mdp, vec![0, 1]).is_err());
    }

    #[test]
    fn sampling_follows_cumulative_probabilities() {
        let mdp = Mdp::parse(SMALL).unwrap();
        let row = mdp.row(1, 0);
        assert_eq!(row.sample(0.0).state, 0);
        assert_eq!(row.sample(0.79).state, 0);
        assert_eq!(row.sample(0.81).state, 1);
        assert_eq!(row.sample(0.999_999_999_999).state, 1);
    }
}
