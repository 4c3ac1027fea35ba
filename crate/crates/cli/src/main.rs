use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use lpi_cli::config::{self, ConfigError};
use lpi_cli::experiment::{run_experiment, write_atomic};
use lpi_core::projection::BasisSpec;
use lpi_core::{generate_problem, FeatureBasis, ProblemKind};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "lpi", version, about = "Lambda-policy iteration experiments on finite discounted MDPs")]
struct Cli {
    /// Overrides the run seeds with this single seed; also seeds `gen-mdp`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for experiment cells.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory, overriding `[run] out_dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (lambda, beta, seed) cell of a config and write CSV traces.
    Run { config: PathBuf },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// Write a generated MDP, e.g. `gen-mdp garnet n=50,controls=4,branching=3 -o g.mdp`.
    GenMdp {
        kind: String,
        params: String,
        #[arg(long, default_value_t = 0.9)]
        alpha: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Write a generated feature basis, e.g. `gen-basis poly:3 --n 50 -o phi.txt`.
    GenBasis {
        spec: String,
        #[arg(long)]
        n: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
}

enum Failure {
    Config(String),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn load(cli: &Cli, path: &Path) -> Result<config::Experiment, Failure> {
    let mut exp = config::load(path)?;
    if let Some(seed) = cli.seed {
        exp.seeds = vec![seed];
    }
    if let Some(workers) = cli.workers {
        if workers == 0 {
            return Err(Failure::Config("--workers must be positive".into()));
        }
        exp.workers = workers;
    }
    if let Some(dir) = &cli.out_dir {
        exp.out_dir = dir.clone();
    }
    Ok(exp)
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Run { config } => {
            let exp = load(cli, config)?;
            let report = run_experiment(&exp)?;
            for row in report.rows.iter().filter(|r| r.failed()) {
                eprintln!("cell lambda={} beta={} seed={}: {}", row.lambda, row.beta, row.seed, row.error);
            }
            println!("{} cells, summary in {}", report.rows.len(), report.summary_path.display());
            if report.all_failed() {
                return Err(Failure::Runtime(anyhow::anyhow!("every cell failed")));
            }
        }
        Command::Validate { config } => {
            let exp = load(cli, config)?;
            println!(
                "ok: n={}, evaluator {}, {} cells",
                exp.n(),
                exp.evaluator,
                exp.lambdas.len() * exp.betas.len() * exp.seeds.len()
            );
        }
        Command::GenMdp { kind, params, alpha, output } => {
            let problem = ProblemKind::from_parts(kind, params).map_err(|e| Failure::Config(e.to_string()))?;
            let mdp =
                generate_problem(problem, *alpha, cli.seed.unwrap_or(0)).map_err(|e| Failure::Config(e.to_string()))?;
            write_atomic(output, mdp.to_text().as_bytes()).context("writing MDP")?;
        }
        Command::GenBasis { spec, n, output } => {
            let spec: BasisSpec = spec.parse().map_err(|e: lpi_core::Error| Failure::Config(e.to_string()))?;
            let basis = FeatureBasis::generate(&spec, *n).map_err(|e| Failure::Config(e.to_string()))?;
            write_atomic(output, basis.to_text().as_bytes()).context("writing basis")?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
