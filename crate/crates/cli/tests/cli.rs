use std::fs;
use std::path::Path;
use std::process::Command;

use lpi_core::{FeatureBasis, Mdp};

fn lpi(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_lpi")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const GRID: &str = r#"
[problem]
kind = "garnet"
params = "n=12,controls=3,branching=4"
alpha = 0.9

[basis]
spec = "poly:2"

[method]
evaluator = "lambda-pi-1"
lambdas = [0.0, 0.5, 0.9]
betas = [0.0, 0.5]
restart_weights = [4.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]

[run]
seeds = [1, 2]
iters = 5
trajectory_budget = 500
"#;

fn read_dir(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_str().unwrap().to_string(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), GRID);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    assert!(lpi(&["run", &cfg, "--workers", "1", "--out-dir", a.to_str().unwrap()]).status.success());
    assert!(lpi(&["run", &cfg, "--workers", "4", "--out-dir", b.to_str().unwrap()]).status.success());
    assert!(lpi(&["run", &cfg, "--workers", "4", "--out-dir", c.to_str().unwrap()]).status.success());
    let files = read_dir(&a);
    assert_eq!(files.len(), 3 * 2 * 2 + 1);
    assert_eq!(files, read_dir(&b));
    assert_eq!(files, read_dir(&c));
}

#[test]
fn summary_has_one_row_per_cell_and_traces_follow_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), GRID);
    let out = dir.path().join("out");
    assert!(lpi(&["run", &cfg, "--out-dir", out.to_str().unwrap()]).status.success());

    let mut summary = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    assert_eq!(summary.records().count(), 3 * 2 * 2);

    let mut trace = csv::Reader::from_path(out.join("trace_l0.5_b0.5_s2.csv")).unwrap();
    let header: Vec<String> = trace.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        [
            "k",
            "lambda",
            "beta",
            "seed",
            "evaluator",
            "bellman_residual_inf",
            "exact_subopt_inf",
            "policy_changed",
            "cond_estimate",
            "samples_used"
        ]
    );
    let rows: Vec<csv::StringRecord> = trace.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 5);
    assert_eq!(&rows[0][0], "1");
    assert_eq!(&rows[0][4], "lambda-pi-1");
    assert_eq!(&rows[0][7], "true");
}

#[test]
fn seed_override_collapses_seed_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), GRID);
    let out = dir.path().join("out");
    assert!(lpi(&["run", &cfg, "--seed", "7", "--out-dir", out.to_str().unwrap()]).status.success());
    let mut summary = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    let seeds: Vec<String> = summary.records().map(|r| r.unwrap()[2].to_string()).collect();
    assert_eq!(seeds, vec!["7"; 6]);
}

#[test]
fn identity_basis_with_large_budget_reaches_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
[problem]
kind = "garnet"
params = "n=10,controls=2,branching=4"
alpha = 0.9

[basis]
spec = "identity"

[method]
evaluator = "lambda-pi-1"
lambdas = [0.0]

[run]
seeds = [3]
iters = 150
trajectory_budget = 100000
"#,
    );
    let out = dir.path().join("out");
    let status = lpi(&["run", &cfg, "--out-dir", out.to_str().unwrap()]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let mut summary = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    let headers = summary.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "final_subopt_inf").unwrap();
    let row = summary.records().next().unwrap().unwrap();
    let subopt: f64 = row[col].parse().unwrap();
    assert!(subopt <= 1e-2, "{subopt}");
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let empty_grid = write_config(dir.path(), &GRID.replace("lambdas = [0.0, 0.5, 0.9]", "lambdas = []"));
    let out = lpi(&["validate", &empty_grid]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(lpi(&["run", &empty_grid]).status.code(), Some(2));
    assert_eq!(lpi(&["validate", "/nonexistent/exp.toml"]).status.code(), Some(2));
    let missing_basis = write_config(dir.path(), &GRID.replace("spec = \"poly:2\"", "path = \"nope.txt\""));
    assert_eq!(lpi(&["validate", &missing_basis]).status.code(), Some(2));
    let good = write_config(dir.path(), GRID);
    assert!(lpi(&["validate", &good]).status.success());
    assert_eq!(lpi(&["gen-mdp", "garnet", "n=5", "-o", "x.mdp"]).status.code(), Some(2));
}

#[test]
fn failure_in_every_cell_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    // three trajectories cannot cover twelve states for an identity basis
    let body = GRID.replace("poly:2", "identity").replace("trajectory_budget = 500", "trajectory_budget = 3");
    let cfg = write_config(dir.path(), &body.replace("lambdas = [0.0, 0.5, 0.9]", "lambdas = [0.0]"));
    let out_dir = dir.path().join("out");
    let out = lpi(&["run", &cfg, "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let mut summary = csv::Reader::from_path(out_dir.join("summary.csv")).unwrap();
    let headers = summary.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "error").unwrap();
    for row in summary.records() {
        assert!(row.unwrap()[col].contains("unvisited"));
    }
}

#[test]
fn generated_files_feed_back_into_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mdp_path = dir.path().join("g.mdp");
    let basis_path = dir.path().join("phi.txt");
    let status = lpi(&[
        "gen-mdp",
        "garnet",
        "n=15,controls=2,branching=3",
        "--alpha",
        "0.95",
        "--seed",
        "4",
        "-o",
        mdp_path.to_str().unwrap(),
    ]);
    assert!(status.status.success());
    assert!(lpi(&["gen-basis", "random:2:3", "--n", "15", "-o", basis_path.to_str().unwrap()]).status.success());

    let mdp = Mdp::parse(&fs::read_to_string(&mdp_path).unwrap()).unwrap();
    assert_eq!((mdp.n(), mdp.alpha()), (15, 0.95));
    assert_eq!(FeatureBasis::parse(&fs::read_to_string(&basis_path).unwrap()).unwrap().s(), 3);

    let cfg = write_config(
        dir.path(),
        r#"
[problem]
kind = "file"
path = "g.mdp"

[basis]
path = "phi.txt"

[method]
evaluator = "lstd"
lambdas = [0.5]

[run]
iters = 3
long_trajectory_length = 5000
out_dir = "results"
"#,
    );
    assert!(lpi(&["run", &cfg]).status.success());
    assert!(dir.path().join("results/trace_l0.5_b0_s0.csv").exists());
}
