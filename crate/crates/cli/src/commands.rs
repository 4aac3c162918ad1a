//! Subcommands operating on a single configuration.

use fracshape::shape::{random_starts, Neighborhood};
use fracshape::solve;
use fracshape::{
    anneal_search, brute_force_min, capacity, exchange_search, gamma_s_distance, solve_eigs, solve_torsion,
    AnnealSchedule, BoxGrid, Combiner, CostSpec, Discretization, FracParam, OptResult, SetMask,
};
use serde::Serialize;

use crate::config::{GridSpec, MaskSource, RawConfig};
use crate::error::CliError;
use crate::output::{OutDir, Report, VERSION};

/// Everything a subcommand needs besides its own config keys.
pub struct Context {
    pub cfg: RawConfig,
    pub seed: u64,
    pub out: OutDir,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

#[derive(Debug, Clone, Serialize)]
struct Problem {
    grid: GridSpec,
    s: f64,
    mask: MaskSource,
}

fn read_order(cfg: &RawConfig) -> Result<f64, CliError> {
    cfg.parse_value::<f64>("operator", "s")?
        .ok_or_else(|| config_err("missing required key 'operator.s'"))
}

fn read_mask(cfg: &RawConfig, section: &str) -> Result<MaskSource, CliError> {
    MaskSource::from_config(cfg, section)?.ok_or_else(|| {
        config_err(format!(
            "no mask source: set one of {section}.file, {section}.ball_center + {section}.ball_radius, {section}.rect or {section}.full"
        ))
    })
}

fn read_problem(cfg: &RawConfig) -> Result<Problem, CliError> {
    Ok(Problem {
        grid: GridSpec::from_config(cfg)?,
        s: read_order(cfg)?,
        mask: read_mask(cfg, "mask")?,
    })
}

fn discretize(grid: &BoxGrid, s: f64) -> Result<Discretization, CliError> {
    Ok(Discretization::new(grid, &FracParam::new(grid.dim(), s)?)?)
}

#[derive(Serialize)]
struct TorsionReport {
    cells: usize,
    domain_cells: usize,
    max_value: f64,
    center_value: f64,
    residual_norm: f64,
    min_before_clamp: f64,
}

pub fn torsion(ctx: &mut Context) -> Result<Vec<String>, CliError> {
    let problem = read_problem(&ctx.cfg)?;
    ctx.cfg.finish()?;
    let grid = problem.grid.build()?;
    let mask = problem.mask.build(&grid)?;
    let disc = discretize(&grid, problem.s)?;
    let sol = solve_torsion(&disc.assemble(&mask)?)?;
    let center: Vec<f64> = grid.extent().iter().map(|(a, b)| 0.5 * (a + b)).collect();
    let center_value = grid.locate(&center).map(|i| sol.u[i]).unwrap_or(0.0);
    let mut csv = Vec::new();
    sol.write_csv(&grid, &mut csv)?;
    ctx.out.write_bytes("torsion.csv", &csv)?;
    let result = TorsionReport {
        cells: grid.len(),
        domain_cells: mask.count(),
        max_value: sol.max_value(),
        center_value,
        residual_norm: sol.residual_norm,
        min_before_clamp: sol.min_before_clamp,
    };
    let lines = vec![
        format!("max_value = {}", result.max_value),
        format!("center_value = {}", result.center_value),
        format!("residual = {:e}", result.residual_norm),
    ];
    write_report(ctx, "torsion", &problem, &result)?;
    Ok(lines)
}

fn write_report(ctx: &mut Context, command: &str, config: &impl Serialize, result: &impl Serialize) -> Result<(), CliError> {
    let report = Report {
        command,
        version: VERSION,
        seed: ctx.seed,
        config,
        result,
    };
    ctx.out.write_json(&format!("{command}.json"), &report)?;
    Ok(())
}

#[derive(Serialize)]
struct EigsConfig {
    #[serde(flatten)]
    problem: Problem,
    count: usize,
}

#[derive(Serialize)]
struct EigsReport {
    eigenvalues: Vec<f64>,
    degenerate_pairs: Vec<(usize, usize)>,
}

pub fn eigs(ctx: &mut Context) -> Result<Vec<String>, CliError> {
    let problem = read_problem(&ctx.cfg)?;
    let count = ctx.cfg.value_or("eigs", "count", 1usize)?;
    ctx.cfg.finish()?;
    if count == 0 {
        return Err(config_err("eigs.count must be at least 1"));
    }
    let grid = problem.grid.build()?;
    let mask = problem.mask.build(&grid)?;
    let disc = discretize(&grid, problem.s)?;
    let spec = solve_eigs(&disc.assemble(&mask)?, count)?;
    let mut csv = Vec::new();
    spec.write_csv(&mut csv)?;
    ctx.out.write_bytes("eigs.csv", &csv)?;
    let result = EigsReport {
        eigenvalues: spec.eigenvalues.clone(),
        // 1-based like the CSV
        degenerate_pairs: spec.degenerate.iter().map(|&(a, b)| (a + 1, b + 1)).collect(),
    };
    let lines = spec
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(k, l)| format!("lambda_{} = {l}", k + 1))
        .collect();
    write_report(ctx, "eigs", &EigsConfig { problem, count }, &result)?;
    Ok(lines)
}

#[derive(Serialize)]
struct CapacityReport {
    condenser_cells: usize,
    seminorm_sq: f64,
    /// `(c(n,s)/2) [u]^2`.
    energy: f64,
}

pub fn capacity_cmd(ctx: &mut Context) -> Result<Vec<String>, CliError> {
    let problem = read_problem(&ctx.cfg)?;
    ctx.cfg.finish()?;
    if problem.s >= 1.0 {
        return Err(config_err("capacity needs a fractional order s < 1"));
    }
    let grid = problem.grid.build()?;
    let mask = problem.mask.build(&grid)?;
    let disc = discretize(&grid, problem.s)?;
    let cap = capacity(&disc, &mask)?;
    let mut csv = Vec::new();
    solve::write_values_csv(&grid, &cap.potential, "u_value", &mut csv)?;
    ctx.out.write_bytes("potential.csv", &csv)?;
    let cns = disc.param().cns().unwrap_or(1.0);
    let result = CapacityReport {
        condenser_cells: mask.count(),
        seminorm_sq: cap.value,
        energy: 0.5 * cns * cap.value,
    };
    let lines = vec![format!("capacity = {}", cap.value)];
    write_report(ctx, "capacity", &problem, &result)?;
    Ok(lines)
}

#[derive(Serialize)]
struct GammaConfig {
    grid: GridSpec,
    s: f64,
    mask: MaskSource,
    mask_b: MaskSource,
}

#[derive(Serialize)]
struct GammaReport {
    distance: f64,
    cells_a: usize,
    cells_b: usize,
}

pub fn gamma_dist(ctx: &mut Context) -> Result<Vec<String>, CliError> {
    let config = GammaConfig {
        grid: GridSpec::from_config(&ctx.cfg)?,
        s: read_order(&ctx.cfg)?,
        mask: read_mask(&ctx.cfg, "mask")?,
        mask_b: read_mask(&ctx.cfg, "mask_b")?,
    };
    ctx.cfg.finish()?;
    let grid = config.grid.build()?;
    let a = config.mask.build(&grid)?;
    let b = config.mask_b.build(&grid)?;
    let disc = discretize(&grid, config.s)?;
    let result = GammaReport {
        distance: gamma_s_distance(&disc, &a, &b)?,
        cells_a: a.count(),
        cells_b: b.count(),
    };
    let lines = vec![format!("gamma_distance = {}", result.distance)];
    write_report(ctx, "gamma-dist", &config, &result)?;
    Ok(lines)
}

/// `[cost]` section.
#[derive(Debug, Clone, Serialize)]
pub struct CostConfig {
    pub indices: Vec<usize>,
    pub combiner: String,
    pub weights: Option<Vec<f64>>,
    pub value: Option<f64>,
    pub budget: f64,
}

impl CostConfig {
    pub fn from_config(cfg: &RawConfig) -> Result<Self, CliError> {
        Ok(Self {
            indices: cfg.value_or("cost", "indices", vec![1usize])?,
            combiner: cfg.value_or("cost", "combiner", "single".to_string())?,
            weights: cfg.parse_value("cost", "weights")?,
            value: cfg.parse_value("cost", "value")?,
            budget: cfg
                .parse_value("cost", "budget")?
                .ok_or_else(|| config_err("missing required key 'cost.budget'"))?,
        })
    }

    pub fn build(&self) -> Result<CostSpec, CliError> {
        let combiner = match self.combiner.as_str() {
            "single" => Combiner::Single,
            "sum" | "weighted-sum" => {
                Combiner::WeightedSum(self.weights.clone().unwrap_or_else(|| vec![1.0; self.indices.len()]))
            }
            "max" => Combiner::Max,
            "constant" => {
                let v = self.value.ok_or_else(|| config_err("constant cost needs cost.value"))?;
                return Ok(CostSpec::constant(v, self.budget)?);
            }
            other => {
                return Err(config_err(format!(
                    "unknown combiner '{other}' (expected single, sum, max or constant)"
                )))
            }
        };
        if self.weights.is_some() && !matches!(combiner, Combiner::WeightedSum(_)) {
            return Err(config_err("cost.weights only applies to the sum combiner"));
        }
        if self.value.is_some() {
            return Err(config_err("cost.value only applies to the constant combiner"));
        }
        Ok(CostSpec::new(self.indices.clone(), combiner, self.budget)?)
    }
}

/// `[optimizer]` section.
#[derive(Debug, Clone, Serialize)]
pub struct OptimizerConfig {
    pub method: String,
    pub starts: usize,
    pub max_iters: usize,
    pub neighborhood: String,
    pub t0_fraction: f64,
    pub ratio: f64,
    pub sweeps: usize,
    pub moves_per_sweep: Option<usize>,
    pub polish: bool,
}

impl OptimizerConfig {
    pub fn from_config(cfg: &RawConfig) -> Result<Self, CliError> {
        let d = AnnealSchedule::default();
        let c = Self {
            method: cfg.value_or("optimizer", "method", "exchange".to_string())?,
            starts: cfg.value_or("optimizer", "starts", 1usize)?,
            max_iters: cfg.value_or("optimizer", "max_iters", 1000usize)?,
            neighborhood: cfg.value_or("optimizer", "neighborhood", "auto".to_string())?,
            t0_fraction: cfg.value_or("optimizer", "t0_fraction", d.t0_fraction)?,
            ratio: cfg.value_or("optimizer", "ratio", d.ratio)?,
            sweeps: cfg.value_or("optimizer", "sweeps", d.sweeps)?,
            moves_per_sweep: cfg.parse_value("optimizer", "moves_per_sweep")?,
            polish: cfg.value_or("optimizer", "polish", d.polish)?,
        };
        if !["brute", "exchange", "anneal"].contains(&c.method.as_str()) {
            return Err(config_err(format!(
                "unknown optimizer '{}' (expected brute, exchange or anneal)",
                c.method
            )));
        }
        c.neighborhood()?;
        c.schedule().validate()?;
        if c.starts == 0 {
            return Err(config_err("optimizer.starts must be at least 1"));
        }
        Ok(c)
    }

    pub fn neighborhood(&self) -> Result<Neighborhood, CliError> {
        match self.neighborhood.as_str() {
            "all" => Ok(Neighborhood::All),
            "boundary" => Ok(Neighborhood::Boundary),
            "auto" => Ok(Neighborhood::Auto),
            other => Err(config_err(format!(
                "unknown neighborhood '{other}' (expected all, boundary or auto)"
            ))),
        }
    }

    pub fn schedule(&self) -> AnnealSchedule {
        AnnealSchedule {
            t0_fraction: self.t0_fraction,
            ratio: self.ratio,
            sweeps: self.sweeps,
            moves_per_sweep: self.moves_per_sweep,
            polish: self.polish,
        }
    }
}

#[derive(Serialize)]
struct OptimizeConfig {
    grid: GridSpec,
    s: f64,
    cost: CostConfig,
    optimizer: OptimizerConfig,
    init: Option<MaskSource>,
}

#[derive(Serialize)]
struct OptimizeReport {
    value: f64,
    measure: f64,
    cells: usize,
    components: usize,
    evaluations: usize,
    accepted: usize,
    best_start: usize,
    seed: u64,
}

/// Runs the configured optimizer from every start and keeps the best.
fn run_optimizer(
    spec: &CostSpec,
    disc: &Discretization,
    opt: &OptimizerConfig,
    inits: &[SetMask],
    seed: u64,
) -> Result<(OptResult, usize, usize), CliError> {
    if opt.method == "brute" {
        let r = brute_force_min(spec, disc)?;
        let evals = r.evaluations;
        return Ok((r, 0, evals));
    }
    let mut best: Option<(OptResult, usize)> = None;
    let mut evaluations = 0;
    for (k, init) in inits.iter().enumerate() {
        let r = match opt.method.as_str() {
            "exchange" => exchange_search(spec, disc, init, opt.max_iters, opt.neighborhood()?)?,
            _ => anneal_search(spec, disc, init, &opt.schedule(), seed.wrapping_add(k as u64))?,
        };
        evaluations += r.evaluations;
        if best.as_ref().is_none_or(|(b, _)| r.best_value < b.best_value) {
            best = Some((r, k));
        }
    }
    let (r, k) = best.expect("at least one start");
    Ok((r, k, evaluations))
}

pub fn optimize(ctx: &mut Context) -> Result<Vec<String>, CliError> {
    let config = OptimizeConfig {
        grid: GridSpec::from_config(&ctx.cfg)?,
        s: read_order(&ctx.cfg)?,
        cost: CostConfig::from_config(&ctx.cfg)?,
        optimizer: OptimizerConfig::from_config(&ctx.cfg)?,
        init: MaskSource::from_config(&ctx.cfg, "mask")?,
    };
    ctx.cfg.finish()?;
    let grid = config.grid.build()?;
    let spec = config.cost.build()?;
    let disc = discretize(&grid, config.s)?;
    let inits = match &config.init {
        Some(src) => {
            if config.optimizer.starts != 1 {
                return Err(config_err("optimizer.starts must be 1 when an initial mask is given"));
            }
            vec![src.build(&grid)?]
        }
        None => random_starts(&spec, &grid, config.optimizer.starts, ctx.seed)?,
    };
    let (r, best_start, evaluations) = run_optimizer(&spec, &disc, &config.optimizer, &inits, ctx.seed)?;
    ctx.out.write_bytes("best.mask", r.best_mask.to_mask_string().as_bytes())?;
    let mut history = String::from("iteration,value\n");
    for (it, v) in &r.history {
        history.push_str(&format!("{it},{v}\n"));
    }
    ctx.out.write_bytes("history.csv", history.as_bytes())?;
    let result = OptimizeReport {
        value: r.best_value,
        measure: r.best_mask.measure(),
        cells: r.best_mask.count(),
        components: r.best_mask.components(),
        evaluations,
        accepted: r.accepted,
        best_start,
        seed: ctx.seed,
    };
    let lines = vec![
        format!("value = {}", result.value),
        format!("measure = {}", result.measure),
        format!("evaluations = {}", result.evaluations),
    ];
    write_report(ctx, "optimize", &config, &result)?;
    Ok(lines)
}
