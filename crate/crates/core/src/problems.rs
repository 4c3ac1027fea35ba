//! Benchmark problem generators.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::mdp::{Mdp, DEFAULT_STATE_CAP};
use crate::rng::RngStream;

/// A generated problem family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProblemKind {
    /// Random MDP: every `(i, u)` has `branching` distinct uniformly chosen
    /// successors with Dirichlet(1, ..., 1) probabilities and standard
    /// normal transition costs.
    Garnet { n: usize, controls: usize, branching: usize },
    /// Birth-death walk on `n` states with controls "left" and "right".
    /// The intended move happens with probability `1 - slip`, the opposite
    /// one with probability `slip`; moves off the ends stay put. The cost of
    /// arriving at `j` is its squared normalized distance from the middle.
    Chain { n: usize, slip: f64 },
}

impl ProblemKind {
    pub fn n(&self) -> usize {
        match *self {
            ProblemKind::Garnet { n, .. } | ProblemKind::Chain { n, .. } => n,
        }
    }

    /// Parses `garnet` / `chain` with comma-separated `key=value` params,
    /// e.g. `("garnet", "n=50,controls=4,branching=3")`.
    pub fn from_parts(kind: &str, params: &str) -> Result<Self> {
        let mut kv = std::collections::BTreeMap::new();
        for p in params.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) =
                p.split_once('=').ok_or_else(|| Error::InvalidParameter(format!("expected key=value, got `{p}`")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |key: &str| -> Result<&str> {
            kv.get(key).map(String::as_str).ok_or_else(|| Error::InvalidParameter(format!("{kind} requires `{key}`")))
        };
        let int = |key: &str| -> Result<usize> {
            get(key)?.parse().map_err(|_| Error::InvalidParameter(format!("`{key}` must be a nonnegative integer")))
        };
        let kind = match kind {
            "garnet" => ProblemKind::Garnet { n: int("n")?, controls: int("controls")?, branching: int("branching")? },
            "chain" => ProblemKind::Chain {
                n: int("n")?,
                slip: get("slip")?.parse().map_err(|_| Error::InvalidParameter("`slip` must be a number".into()))?,
            },
            other => return Err(Error::InvalidParameter(format!("unknown problem kind `{other}`"))),
        };
        kind.validate(DEFAULT_STATE_CAP)?;
        Ok(kind)
    }

    pub fn validate(&self, max_states: usize) -> Result<()> {
        let n = self.n();
        if n == 0 || n > max_states {
            return Err(Error::InvalidParameter(format!("n must lie in 1..={max_states}, got {n}")));
        }
        match *self {
            ProblemKind::Garnet { controls, branching, .. } => {
                if controls == 0 || branching == 0 || branching > n {
                    return Err(Error::InvalidParameter(format!(
                        "garnet needs controls >= 1 and 1 <= branching <= n, got controls={controls} branching={branching}"
                    )));
                }
            }
            ProblemKind::Chain { slip, .. } => {
                if !(0.0..=1.0).contains(&slip) {
                    return Err(Error::InvalidParameter(format!("slip must lie in [0, 1], got {slip}")));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProblemKind::Garnet { n, controls, branching } => {
                write!(f, "garnet(n={n},controls={controls},branching={branching})")
            }
            ProblemKind::Chain { n, slip } => write!(f, "chain(n={n},slip={slip})"),
        }
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    /// `garnet:n=10,controls=2,branching=3` or `chain:n=5,slip=0.1`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, params) = s.split_once(':').unwrap_or((s, ""));
        Self::from_parts(kind, params)
    }
}

/// Builds a problem deterministically from `seed`.
pub fn generate_problem(kind: ProblemKind, alpha: f64, seed: u64) -> Result<Mdp> {
    kind.validate(usize::MAX)?;
    match kind {
        ProblemKind::Garnet { n, controls, branching } => garnet(n, controls, branching, alpha, seed),
        ProblemKind::Chain { n, slip } => chain(n, slip, alpha),
    }
}

fn garnet(n: usize, controls: usize, branching: usize, alpha: f64, seed: u64) -> Result<Mdp> {
    let mut rng = RngStream::new(seed, 0x6761_726e_6574).rng();
    let mut triples = Vec::with_capacity(n * controls * branching);
    for i in 0..n {
        for u in 0..controls {
            let mut succ = sample(&mut rng, n, branching).into_vec();
            succ.sort_unstable();
            let weights: Vec<f64> = (0..branching).map(|_| Exp1.sample(&mut rng)).collect();
            let total: f64 = weights.iter().sum();
            for (j, w) in succ.into_iter().zip(weights) {
                let g: f64 = StandardNormal.sample(&mut rng);
                triples.push((i, u, j, w / total, g));
            }
        }
    }
    Mdp::from_transitions(n, alpha, triples)
}

fn chain(n: usize, slip: f64, alpha: f64) -> Result<Mdp> {
    let mid = (n as f64 - 1.0) / 2.0;
    let scale = (n as f64).max(1.0);
    let cost = |j: usize| ((j as f64 - mid) / scale).powi(2);
    let left = |i: usize| i.saturating_sub(1);
    let right = |i: usize| (i + 1).min(n - 1);
    let mut triples = Vec::new();
    for i in 0..n {
        for (u, (intended, opposite)) in [(left(i), right(i)), (right(i), left(i))].into_iter().enumerate() {
            triples.push((i, u, intended, 1.0 - slip, cost(intended)));
            triples.push((i, u, opposite, slip, cost(opposite)));
        }
    }
    Mdp::from_transitions(n, alpha, triples)
}
