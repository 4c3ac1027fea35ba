//! Experiment configuration: a TOML file with `[problem]`, `[basis]`,
//! `[method]` and `[run]` sections of flat keys.

use std::fs;
use std::path::{Path, PathBuf};

use lpi_core::mdp::DEFAULT_STATE_CAP;
use lpi_core::projection::BasisSpec;
use lpi_core::{generate_problem, EvaluatorKind, FeatureBasis, Mdp, ProblemKind, StateDistribution};
use nalgebra::DVector;
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("[{section}] {message}")]
    Invalid { section: &'static str, message: String },
    #[error("{path}: {source}")]
    Model { path: PathBuf, source: lpi_core::Error },
}

fn invalid(section: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { section, message: message.into() }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub problem: ProblemSection,
    pub basis: BasisSection,
    pub method: MethodSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    /// `garnet`, `chain` or `file`.
    pub kind: String,
    /// Generator parameters, e.g. `n=30,controls=2,branching=5`.
    pub params: Option<String>,
    /// MDP file for `kind = "file"`.
    pub path: Option<PathBuf>,
    /// Required for generated problems; overrides the file's value otherwise.
    pub alpha: Option<f64>,
    /// Fixed instance seed. When absent each run seed generates its own instance.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSection {
    /// Built-in generator: `identity`, `poly:<d>`, `indicator:<k>`, `random:<seed>:<s>`.
    pub spec: Option<String>,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSection {
    pub evaluator: String,
    pub lambdas: Vec<f64>,
    #[serde(default = "default_betas")]
    pub betas: Vec<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub exact: bool,
    #[serde(default)]
    pub reuse_samples: bool,
    #[serde(default)]
    pub pair_sampling: bool,
    /// Base restart weights (normalized); uniform when absent.
    pub restart_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default = "default_trajectory_budget")]
    pub trajectory_budget: usize,
    #[serde(default = "default_long_trajectory_length")]
    pub long_trajectory_length: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_max_states")]
    pub max_states: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seeds: default_seeds(),
            iters: default_iters(),
            trajectory_budget: default_trajectory_budget(),
            long_trajectory_length: default_long_trajectory_length(),
            workers: default_workers(),
            out_dir: default_out_dir(),
            max_states: default_max_states(),
        }
    }
}

fn default_betas() -> Vec<f64> {
    vec![0.0]
}
fn default_gamma() -> f64 {
    1.0
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_iters() -> usize {
    20
}
fn default_trajectory_budget() -> usize {
    10_000
}
fn default_long_trajectory_length() -> usize {
    100_000
}
fn default_workers() -> usize {
    1
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_max_states() -> usize {
    DEFAULT_STATE_CAP
}

#[derive(Debug, Clone)]
pub enum ProblemSource {
    Generated { kind: ProblemKind, alpha: f64, seed: Option<u64> },
    File(Mdp),
}

#[derive(Debug, Clone)]
pub enum BasisSource {
    Spec(BasisSpec),
    File(FeatureBasis),
}

/// A validated experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub problem: ProblemSource,
    pub basis: BasisSource,
    pub evaluator: EvaluatorKind,
    pub lambdas: Vec<f64>,
    pub betas: Vec<f64>,
    pub gamma: f64,
    pub exact: bool,
    pub reuse_samples: bool,
    pub pair_sampling: bool,
    pub restart_base: Option<StateDistribution>,
    pub seeds: Vec<u64>,
    pub iters: usize,
    pub trajectory_budget: usize,
    pub long_trajectory_length: usize,
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl Experiment {
    pub fn n(&self) -> usize {
        match &self.problem {
            ProblemSource::Generated { kind, .. } => kind.n(),
            ProblemSource::File(mdp) => mdp.n(),
        }
    }

    /// The problem instance used by cells with run seed `seed`.
    pub fn instance(&self, seed: u64) -> lpi_core::Result<Mdp> {
        match &self.problem {
            ProblemSource::Generated { kind, alpha, seed: fixed } => {
                generate_problem(*kind, *alpha, fixed.unwrap_or(seed))
            }
            ProblemSource::File(mdp) => Ok(mdp.clone()),
        }
    }

    pub fn basis(&self) -> lpi_core::Result<FeatureBasis> {
        match &self.basis {
            BasisSource::Spec(spec) => FeatureBasis::generate(spec, self.n()),
            BasisSource::File(basis) => Ok(basis.clone()),
        }
    }

    /// Restart distribution of a cell: `(1 - beta) base + beta uniform`.
    pub fn restart_dist(&self, beta: f64) -> lpi_core::Result<StateDistribution> {
        let uniform = StateDistribution::uniform(self.n());
        match &self.restart_base {
            Some(base) => lpi_core::projection::mixture_distribution(base, &uniform, beta),
            None => Ok(uniform),
        }
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })
}

/// Reads and validates a config file. Relative paths inside it are
/// resolved against the file's directory.
pub fn load(path: &Path) -> Result<Experiment, ConfigError> {
    let text = read(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    resolve(toml::from_str(&text)?, base)
}

pub fn resolve(raw: RawConfig, base: &Path) -> Result<Experiment, ConfigError> {
    let RawConfig { problem, basis, method, run } = raw;
    let cap = run.max_states;
    if cap == 0 {
        return Err(invalid("run", "max_states must be positive"));
    }

    let problem = match problem.kind.as_str() {
        "file" => {
            let path = base.join(problem.path.ok_or_else(|| invalid("problem", "kind = \"file\" needs `path`"))?);
            let mut mdp = Mdp::parse_with_cap(&read(&path)?, cap)
                .map_err(|source| ConfigError::Model { path: path.clone(), source })?;
            if let Some(alpha) = problem.alpha {
                mdp = mdp.with_alpha(alpha).map_err(|e| invalid("problem", e.to_string()))?;
            }
            ProblemSource::File(mdp)
        }
        kind => {
            let params =
                problem.params.ok_or_else(|| invalid("problem", format!("kind = \"{kind}\" needs `params`")))?;
            let parsed = ProblemKind::from_parts(kind, &params).map_err(|e| invalid("problem", e.to_string()))?;
            parsed.validate(cap).map_err(|e| invalid("problem", e.to_string()))?;
            let alpha = problem.alpha.ok_or_else(|| invalid("problem", "generated problems need `alpha`"))?;
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(invalid("problem", format!("alpha must lie in (0, 1), got {alpha}")));
            }
            ProblemSource::Generated { kind: parsed, alpha, seed: problem.seed }
        }
    };
    let n = match &problem {
        ProblemSource::Generated { kind, .. } => kind.n(),
        ProblemSource::File(mdp) => mdp.n(),
    };

    let basis = match (basis.spec, basis.path) {
        (Some(spec), None) => {
            let spec: BasisSpec = spec.parse().map_err(|e: lpi_core::Error| invalid("basis", e.to_string()))?;
            FeatureBasis::generate(&spec, n).map_err(|e| invalid("basis", e.to_string()))?;
            BasisSource::Spec(spec)
        }
        (None, Some(path)) => {
            let path = base.join(path);
            let phi = FeatureBasis::parse(&read(&path)?)
                .map_err(|source| ConfigError::Model { path: path.clone(), source })?;
            if phi.n() != n {
                return Err(invalid("basis", format!("basis has {} rows but the problem has {n} states", phi.n())));
            }
            BasisSource::File(phi)
        }
        _ => return Err(invalid("basis", "set exactly one of `spec` and `path`")),
    };

    let evaluator: EvaluatorKind =
        method.evaluator.parse().map_err(|e: lpi_core::Error| invalid("method", e.to_string()))?;
    if method.lambdas.is_empty() {
        return Err(invalid("method", "`lambdas` must not be empty"));
    }
    if let Some(l) = method.lambdas.iter().find(|l| !(0.0..1.0).contains(*l)) {
        return Err(invalid("method", format!("lambda values must lie in [0, 1), got {l}")));
    }
    if method.betas.is_empty() {
        return Err(invalid("method", "`betas` must not be empty"));
    }
    if let Some(b) = method.betas.iter().find(|b| !(0.0..1.0).contains(*b)) {
        return Err(invalid("method", format!("beta values must lie in [0, 1), got {b}")));
    }
    if !(method.gamma > 0.0 && method.gamma.is_finite()) {
        return Err(invalid("method", "gamma must be positive"));
    }
    if method.pair_sampling && method.lambdas.iter().any(|&l| l != 0.0) {
        return Err(invalid("method", "pair_sampling requires lambdas = [0.0]"));
    }
    let restart_base = match method.restart_weights {
        Some(w) if w.len() != n => {
            return Err(invalid("method", format!("restart_weights has {} entries, expected {n}", w.len())));
        }
        Some(w) => {
            Some(StateDistribution::from_weights(DVector::from_vec(w)).map_err(|e| invalid("method", e.to_string()))?)
        }
        None => None,
    };

    if run.seeds.is_empty() {
        return Err(invalid("run", "`seeds` must not be empty"));
    }
    if run.iters == 0 || run.trajectory_budget == 0 || run.long_trajectory_length == 0 || run.workers == 0 {
        return Err(invalid("run", "iters, budgets and workers must be positive"));
    }

    Ok(Experiment {
        problem,
        basis,
        evaluator,
        lambdas: method.lambdas,
        betas: method.betas,
        gamma: method.gamma,
        exact: method.exact,
        reuse_samples: method.reuse_samples,
        pair_sampling: method.pair_sampling,
        restart_base,
        seeds: run.seeds,
        iters: run.iters,
        trajectory_budget: run.trajectory_budget,
        long_trajectory_length: run.long_trajectory_length,
        workers: run.workers,
        out_dir: base.join(run.out_dir),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[problem]
kind = "garnet"
params = "n=10,controls=2,branching=3"
alpha = 0.9

[basis]
spec = "poly:2"

[method]
evaluator = "lambda-pi-1"
lambdas = [0.0, 0.5]
"#;

    fn parse(text: &str) -> Result<Experiment, ConfigError> {
        resolve(toml::from_str(text)?, Path::new("/tmp"))
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let exp = parse(MINIMAL).unwrap();
        assert_eq!(exp.n(), 10);
        assert_eq!(exp.betas, vec![0.0]);
        assert_eq!(exp.seeds, vec![0]);
        assert_eq!(exp.out_dir, Path::new("/tmp/out"));
        assert_eq!(exp.evaluator, EvaluatorKind::LambdaPiOne);
    }

    #[test]
    fn rejects_bad_grids_and_keys() {
        let cases = [
            MINIMAL.replace("[0.0, 0.5]", "[]"),
            MINIMAL.replace("[0.0, 0.5]", "[1.0]"),
            MINIMAL.replace("lambda-pi-1", "td"),
            MINIMAL.replace("poly:2", "poly"),
            MINIMAL.replace("alpha = 0.9", "alpha = 1.0"),
            MINIMAL.replace("branching=3", "branching=30"),
            format!("{MINIMAL}betas = [1.0]\n"),
            format!("{MINIMAL}pair_sampling = true\n"),
            format!("{MINIMAL}restart_weights = [1.0]\n"),
            format!("{MINIMAL}colour = 1\n"),
        ];
        for text in cases {
            assert!(parse(&text).is_err(), "{text}");
        }
    }

    #[test]
    fn restart_mixture_moves_toward_uniform() {
        let exp = parse(&format!("{MINIMAL}restart_weights = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 11.0]\n"))
            .unwrap();
        let base = exp.restart_dist(0.0).unwrap();
        assert!((base.get(9) - 0.55).abs() < 1e-12);
        let mixed = exp.restart_dist(0.5).unwrap();
        assert!((mixed.get(9) - 0.325).abs() < 1e-12);
    }
}
