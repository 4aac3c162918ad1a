//! Command-line front end for `fracshape`: subcommands for every solver
//! operation plus canned experiments, all driven by sectioned config files.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

pub use config::RawConfig;
pub use error::CliError;
pub use experiments::{run_experiment, ExperimentOutput, EXPERIMENTS};
use output::{OutDir, VERSION};

#[derive(Debug, Parser)]
#[command(name = "fracshape", version, about = "Fractional Laplacian shape optimization experiments")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Sectioned key = value config file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (overrides run.out; default fracshape-out).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Random seed (overrides run.seed; default 0).
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Run on a single thread.
    #[arg(long, global = true)]
    pub serial: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Torsion function of the configured mask.
    Torsion,
    /// Smallest Dirichlet eigenvalues of the configured mask.
    Eigs,
    /// Capacity of the configured condenser relative to the box.
    Capacity,
    /// γ_s distance between [mask] and [mask_b].
    GammaDist,
    /// Measure-constrained spectral shape optimization.
    Optimize,
    /// Canned experiment.
    Experiment {
        /// One of faber-krahn, lambda2-split, s-sweep, constant-asymptotics,
        /// seminorm-limit, uniform-bound.
        name: String,
    },
}

/// What a successful run produced.
#[derive(Debug)]
pub struct RunSummary {
    pub lines: Vec<String>,
    pub files: Vec<PathBuf>,
}

fn load_config(common: &Common) -> Result<RawConfig, CliError> {
    match &common.config {
        Some(path) => RawConfig::load(path),
        None => Ok(RawConfig::default()),
    }
}

pub fn execute(cli: &Cli) -> Result<RunSummary, CliError> {
    let cfg = load_config(&cli.common)?;
    let seed = match cli.common.seed {
        Some(seed) => {
            // still mark the key as read so it is not reported as unknown
            cfg.get("run", "seed");
            seed
        }
        None => cfg.value_or("run", "seed", 0u64)?,
    };
    let out_dir = match &cli.common.out {
        Some(dir) => {
            cfg.get("run", "out");
            dir.clone()
        }
        None => cfg
            .get("run", "out")
            .map(|p| cfg.resolve_path(p))
            .unwrap_or_else(|| PathBuf::from("fracshape-out")),
    };
    let mut ctx = commands::Context {
        cfg,
        seed,
        out: OutDir::new(out_dir),
    };
    let mut run = || -> Result<Vec<String>, CliError> {
        match &cli.command {
            Command::Torsion => commands::torsion(&mut ctx),
            Command::Eigs => commands::eigs(&mut ctx),
            Command::Capacity => commands::capacity_cmd(&mut ctx),
            Command::GammaDist => commands::gamma_dist(&mut ctx),
            Command::Optimize => commands::optimize(&mut ctx),
            Command::Experiment { name } => experiment(&mut ctx, name),
        }
    };
    let lines = if cli.common.serial {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| CliError::Config(format!("cannot build thread pool: {e}")))?;
        pool.install(run)?
    } else {
        run()?
    };
    Ok(RunSummary {
        lines,
        files: ctx.out.written().to_vec(),
    })
}

fn experiment(ctx: &mut commands::Context, name: &str) -> Result<Vec<String>, CliError> {
    if !EXPERIMENTS.contains(&name) {
        return Err(CliError::Config(format!(
            "unknown experiment '{name}' (expected one of: {})",
            EXPERIMENTS.join(", ")
        )));
    }
    let mut result = run_experiment(name, &ctx.cfg, ctx.seed)?;
    let params = result.report.as_object_mut().and_then(|o| o.remove("params"));
    let report = json!({
        "experiment": name,
        "version": VERSION,
        "seed": ctx.seed,
        "config": params,
        "pass": result.pass,
        "result": result.report,
    });
    ctx.out.write_json(&format!("{name}.json"), &report)?;
    for (file, text) in &result.tables {
        ctx.out.write_bytes(file, text.as_bytes())?;
    }
    let mut lines = vec![format!("{name}: {}", if result.pass { "pass" } else { "FAIL" })];
    if let Some(checks) = report["result"]["checks"].as_object() {
        for (k, v) in checks {
            lines.push(format!("  {k}: {v}"));
        }
    }
    Ok(lines)
}

/// Parses arguments, runs, prints, and returns the process exit code.
pub fn main_with_args(args: impl IntoIterator<Item = impl Into<OsString> + Clone>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            for line in &summary.lines {
                println!("{line}");
            }
            for file in &summary.files {
                println!("wrote {}", file.display());
            }
            0
        }
        Err(e) => {
            eprintln!("fracshape: {e}");
            e.exit_code()
        }
    }
}
