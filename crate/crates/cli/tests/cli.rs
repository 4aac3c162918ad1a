use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fracshape::FracError;
use fracshape_cli::CliError;
use tempfile::TempDir;

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_fracshape"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn json(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("out").join(name)).unwrap()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const CLASSICAL_UNIT: &str = "[grid]\nextent = 0,1\ncells = 512\n[operator]\ns = 1\n[mask]\nfull = true\n";

#[test]
fn torsion_classical_max() {
    let tmp = TempDir::new().unwrap();
    let out = run(tmp.path(), CLASSICAL_UNIT, &["torsion"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report = json(tmp.path(), "torsion.json");
    let max = report["result"]["max_value"].as_f64().unwrap();
    assert!((max - 0.125).abs() <= 1e-3);
    assert_eq!(report["version"].as_str().unwrap(), concat!("fracshape ", env!("CARGO_PKG_VERSION")));
    assert_eq!(report["config"]["grid"]["cells"][0], 512);
    let csv = fs::read_to_string(tmp.path().join("out/torsion.csv")).unwrap();
    assert!(csv.starts_with("cell_index,x,u_value\n0,0.0009765625,"));
    assert_eq!(csv.lines().count(), 513);
}

#[test]
fn torsion_half_laplacian_center() {
    let tmp = TempDir::new().unwrap();
    let cfg = "[grid]\nextent = -1,1\ncells = 512\n[operator]\ns = 0.5\n[mask]\nfull = true\n";
    let out = run(tmp.path(), cfg, &["torsion"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let center = json(tmp.path(), "torsion.json")["result"]["center_value"].as_f64().unwrap();
    assert!((center - 1.0).abs() <= 5e-2, "{center}");
}

#[test]
fn missing_mask_source_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let out = run(tmp.path(), "[grid]\nextent = 0,1\ncells = 8\n[operator]\ns = 0.5\n", &["torsion"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no mask source"), "{}", stderr(&out));
}

#[test]
fn unknown_keys_and_bad_values_exit_2() {
    let tmp = TempDir::new().unwrap();
    let out = run(tmp.path(), &format!("{CLASSICAL_UNIT}colour = red\n"), &["torsion"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("mask.colour"));
    let out = run(tmp.path(), "[grid]\nextent = 0,1\ncells = 8\n[operator]\ns = 1.5\n[mask]\nfull = true\n", &["torsion"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(tmp.path(), CLASSICAL_UNIT, &["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eigs_rows_and_limits() {
    let tmp = TempDir::new().unwrap();
    let cfg = "[grid]\nextent = 0,1\ncells = 256\n[operator]\ns = 1\n[mask]\nfull = true\n[eigs]\ncount = 3\n";
    let out = run(tmp.path(), cfg, &["eigs"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = fs::read_to_string(tmp.path().join("out/eigs.csv")).unwrap();
    let first: f64 = csv.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((first - 9.87).abs() < 0.05, "{first}");
    assert_eq!(csv.lines().count(), 4);

    let cfg = "[grid]\nextent = 0,1\ncells = 8\n[operator]\ns = 0.5\n[mask]\nfull = true\n[eigs]\ncount = 9\n";
    let out = run(tmp.path(), cfg, &["eigs"]);
    assert_eq!(out.status.code(), Some(2));

    let cfg = "[grid]\nextent = -1,1\ncells = 512\n[operator]\ns = 0.5\n[mask]\nfull = true\n";
    let out = run(tmp.path(), cfg, &["eigs"]);
    assert_eq!(out.status.code(), Some(0));
    let l1 = json(tmp.path(), "eigs.json")["result"]["eigenvalues"][0].as_f64().unwrap();
    assert!((l1 - 1.158).abs() < 0.01, "{l1}");
}

#[test]
fn capacity_and_gamma_distance() {
    let tmp = TempDir::new().unwrap();
    let cfg = "[grid]\nextent = 0,1\ncells = 16\n[operator]\ns = 0.5\n[mask]\nrect = 0.4,0.6\n";
    let out = run(tmp.path(), cfg, &["capacity"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(json(tmp.path(), "capacity.json")["result"]["seminorm_sq"].as_f64().unwrap() > 0.0);
    assert!(tmp.path().join("out/potential.csv").exists());

    let cfg = "[grid]\nextent = 0,1\ncells = 8\n[operator]\ns = 0.5\n[mask]\nrect = 0,0.5\n[mask_b]\nrect = 0.5,1\n";
    let out = run(tmp.path(), cfg, &["gamma-dist"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(json(tmp.path(), "gamma-dist.json")["result"]["distance"].as_f64().unwrap() > 0.0);
}

#[test]
fn mask_file_source() {
    let tmp = TempDir::new().unwrap();
    let grid = fracshape::BoxGrid::interval(0.0, 1.0, 8).unwrap();
    let mask = fracshape::SetMask::from_indices(&grid, &[2, 3, 4]).unwrap();
    fs::write(tmp.path().join("a.mask"), mask.to_mask_string()).unwrap();
    let cfg = "[grid]\nextent = 0,1\ncells = 8\n[operator]\ns = 0.5\n[mask]\nfile = a.mask\n";
    let out = run(tmp.path(), cfg, &["torsion"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(json(tmp.path(), "torsion.json")["result"]["domain_cells"], 3);
    let cfg = "[grid]\nextent = 0,1\ncells = 16\n[operator]\ns = 0.5\n[mask]\nfile = a.mask\n";
    assert_eq!(run(tmp.path(), cfg, &["torsion"]).status.code(), Some(2));
}

#[test]
fn optimize_outputs_are_deterministic() {
    let cfg = "[grid]\nextent = 0,1;0,1\ncells = 5\n[operator]\ns = 0.5\n[cost]\nindices = 1\nbudget = 0.24\n\
               [optimizer]\nmethod = anneal\nstarts = 2\nsweeps = 5\n[run]\nseed = 4\n";
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for dir in [&a, &b] {
        let out = run(dir.path(), cfg, &["optimize"]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    for file in ["optimize.json", "best.mask", "history.csv"] {
        let x = fs::read(a.path().join("out").join(file)).unwrap();
        let y = fs::read(b.path().join("out").join(file)).unwrap();
        assert_eq!(x, y, "{file}");
    }
    let report = json(a.path(), "optimize.json");
    assert_eq!(report["result"]["cells"], 6);
    assert_eq!(report["seed"], 4);
    let mask: fracshape::SetMask = fs::read_to_string(a.path().join("out/best.mask")).unwrap().parse().unwrap();
    assert_eq!(mask.count(), 6);
}

#[test]
fn optimize_brute_matches_exchange_on_tiny_instance() {
    let base = "[grid]\nextent = 0,1\ncells = 10\n[operator]\ns = 0.5\n[cost]\nindices = 1,2\ncombiner = sum\nweights = 1,2\nbudget = 0.4\n";
    let tmp = TempDir::new().unwrap();
    let out = run(tmp.path(), &format!("{base}[optimizer]\nmethod = brute\n"), &["optimize"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let brute = json(tmp.path(), "optimize.json")["result"]["value"].as_f64().unwrap();
    let out = run(tmp.path(), &format!("{base}[optimizer]\nmethod = exchange\nstarts = 4\n"), &["optimize"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let exchange = json(tmp.path(), "optimize.json")["result"]["value"].as_f64().unwrap();
    assert!((brute - exchange).abs() <= 1e-10 * brute);
    let out = run(tmp.path(), &format!("{base}[optimizer]\nmethod = magic\n"), &["optimize"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn experiments_run_and_reject_unknown_names() {
    let tmp = TempDir::new().unwrap();
    let out = run(tmp.path(), "[experiment]\ncells = 8\n", &["experiment", "faber-krahn"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report = json(tmp.path(), "faber-krahn.json");
    assert_eq!(report["pass"], true);
    assert_eq!(report["config"]["cells"], 8);
    let out = run(tmp.path(), "", &["experiment", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("faber-krahn"));
    let out = run(tmp.path(), "[experiment]\nbogus = 1\n", &["experiment", "s-sweep"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failures_map_to_exit_3() {
    assert_eq!(CliError::Frac(FracError::NotConverged { residual: 1.0 }).exit_code(), 3);
    assert_eq!(CliError::Frac(FracError::NotPositiveDefinite).exit_code(), 3);
    assert_eq!(CliError::Frac(FracError::MaximumPrinciple(-1.0)).exit_code(), 3);
    assert_eq!(CliError::Frac(FracError::EmptyDomain).exit_code(), 2);
    assert_eq!(CliError::Config("x".into()).exit_code(), 2);
}
