//! Spectral cost functionals, the γ_s distance and measure-constrained
//! minimization over pixel sets.

use std::sync::atomic::{AtomicUsize, Ordering};

use itertools::Itertools;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{FracError, Result};
use crate::grid::{BoxGrid, SetMask};
use crate::kernel::FracParam;
use crate::operator::Discretization;
use crate::solve::{smallest_eigenvalues, torsion_or_zero};

/// Enumeration guard for exhaustive searches.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// Relative window inside which two cost values count as tied.
pub const TIE_TOL: f64 = 1e-10;

/// How the selected eigenvalues are combined; every variant is nondecreasing
/// in each coordinate.
#[derive(Debug, Clone, PartialEq)]
pub enum Combiner {
    Single,
    WeightedSum(Vec<f64>),
    Max,
    /// Ignores the spectrum entirely.
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    indices: Vec<usize>,
    combiner: Combiner,
    budget: f64,
}

impl CostSpec {
    /// `indices` are 1-based and strictly increasing.
    pub fn new(indices: Vec<usize>, combiner: Combiner, budget: f64) -> Result<Self> {
        if !(budget > 0.0 && budget.is_finite()) {
            return Err(FracError::InvalidCost(format!("budget must be positive, got {budget}")));
        }
        if indices.is_empty() && !matches!(combiner, Combiner::Constant(_)) {
            return Err(FracError::InvalidCost("no eigenvalue indices".into()));
        }
        if indices.first() == Some(&0) || !indices.windows(2).all(|w| w[0] < w[1]) {
            return Err(FracError::InvalidCost(
                "indices must be 1-based and strictly increasing".into(),
            ));
        }
        match &combiner {
            Combiner::Single if indices.len() != 1 => {
                return Err(FracError::InvalidCost("single combiner takes exactly one index".into()))
            }
            Combiner::WeightedSum(w) => {
                if w.len() != indices.len() {
                    return Err(FracError::InvalidCost("one weight per index required".into()));
                }
                if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                    return Err(FracError::InvalidCost("weights must be positive".into()));
                }
            }
            Combiner::Constant(v) if !v.is_finite() => {
                return Err(FracError::InvalidCost("constant must be finite".into()))
            }
            _ => {}
        }
        Ok(Self {
            indices,
            combiner,
            budget,
        })
    }

    pub fn single(k: usize, budget: f64) -> Result<Self> {
        Self::new(vec![k], Combiner::Single, budget)
    }

    pub fn weighted_sum(indices: Vec<usize>, weights: Vec<f64>, budget: f64) -> Result<Self> {
        Self::new(indices, Combiner::WeightedSum(weights), budget)
    }

    pub fn max(indices: Vec<usize>, budget: f64) -> Result<Self> {
        Self::new(indices, Combiner::Max, budget)
    }

    pub fn constant(value: f64, budget: f64) -> Result<Self> {
        Self::new(Vec::new(), Combiner::Constant(value), budget)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn combiner(&self) -> &Combiner {
        &self.combiner
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    /// Largest eigenvalue index needed (0 for a constant cost).
    pub fn max_index(&self) -> usize {
        self.indices.last().copied().unwrap_or(0)
    }

    /// Applies the combiner to the ascending spectrum `eigs` (0-based).
    pub fn combine(&self, eigs: &[f64]) -> f64 {
        let pick = |k: usize| eigs[k - 1];
        match &self.combiner {
            Combiner::Single => pick(self.indices[0]),
            Combiner::WeightedSum(w) => self.indices.iter().zip(w).map(|(&k, &w)| w * pick(k)).sum(),
            Combiner::Max => self.indices.iter().map(|&k| pick(k)).fold(f64::NEG_INFINITY, f64::max),
            Combiner::Constant(v) => *v,
        }
    }

    /// Number of cells `m = floor(budget / hⁿ)` the measure constraint saturates.
    pub fn saturated_cells(&self, grid: &BoxGrid) -> Result<usize> {
        if self.budget > grid.volume() * (1.0 + 1e-12) {
            return Err(FracError::InvalidCost(format!(
                "budget {} exceeds the box measure {}",
                self.budget,
                grid.volume()
            )));
        }
        let m = ((self.budget / grid.cell_volume()) + 1e-9).floor() as usize;
        let m = m.min(grid.len());
        if m == 0 || m < self.max_index() {
            return Err(FracError::InvalidCost(format!(
                "budget {} allows {m} cells, fewer than eigenvalue index {}",
                self.budget,
                self.max_index().max(1)
            )));
        }
        Ok(m)
    }
}

/// Cost evaluation bound to one discretization, counting evaluations.
pub struct CostEvaluator<'a> {
    spec: &'a CostSpec,
    disc: &'a Discretization,
    evaluations: AtomicUsize,
}

impl<'a> CostEvaluator<'a> {
    pub fn new(spec: &'a CostSpec, disc: &'a Discretization) -> Self {
        Self {
            spec,
            disc,
            evaluations: AtomicUsize::new(0),
        }
    }

    pub fn evaluate(&self, mask: &SetMask) -> Result<f64> {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        evaluate_cost(self.spec, self.disc, mask)
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }
}

/// `F_s(A)`: assembles the operator on the mask and combines its spectrum.
pub fn evaluate_cost(spec: &CostSpec, disc: &Discretization, mask: &SetMask) -> Result<f64> {
    if !mask.on_grid(disc.grid()) {
        return Err(FracError::GridMismatch);
    }
    if mask.is_empty() {
        return Err(FracError::EmptyDomain);
    }
    if let Combiner::Constant(v) = spec.combiner() {
        return Ok(*v);
    }
    let k = spec.max_index();
    if k > mask.count() {
        return Err(FracError::InvalidCost(format!(
            "eigenvalue index {k} exceeds the {} cells of the mask",
            mask.count()
        )));
    }
    let op = disc.assemble(mask)?;
    Ok(spec.combine(&smallest_eigenvalues(&op, k)?))
}

/// `‖u_A − u_B‖_{L²(Q)}` for the torsion functions of two masks.
pub fn gamma_s_distance(disc: &Discretization, a: &SetMask, b: &SetMask) -> Result<f64> {
    let ua = torsion_or_zero(disc, a)?;
    let ub = torsion_or_zero(disc, b)?;
    Ok(l2_distance(disc.grid(), &ua, &ub))
}

pub(crate) fn l2_distance(grid: &BoxGrid, u: &[f64], v: &[f64]) -> f64 {
    let sum: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    (grid.cell_volume() * sum).sqrt()
}

#[derive(Debug, Clone)]
pub struct OptResult {
    pub best_mask: SetMask,
    pub best_value: f64,
    /// `(iteration, value)` each time the incumbent improved, starting with
    /// the initial value at iteration 0.
    pub history: Vec<(usize, f64)>,
    pub evaluations: usize,
    /// Accepted moves (0 for exhaustive search).
    pub accepted: usize,
}

/// Squared distance from the mask centroid to the box center.
fn centering(grid: &BoxGrid, cells: &[usize]) -> f64 {
    let mut c = [0.0; 2];
    for &i in cells {
        let x = grid.center(i);
        c[0] += x[0];
        c[1] += x[1];
    }
    let ext = grid.extent();
    (0..grid.dim())
        .map(|d| {
            let mid = 0.5 * (ext[d].0 + ext[d].1);
            let off = c[d] / cells.len() as f64 - mid;
            off * off
        })
        .sum()
}

/// Picks the minimum; values within [`TIE_TOL`] of it are broken by the most
/// centered mask, then by the lexicographically smallest cell list.
fn select_min(grid: &BoxGrid, candidates: &[(Vec<usize>, f64)]) -> Option<usize> {
    let min = candidates.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return None;
    }
    let window = TIE_TOL * min.abs().max(f64::MIN_POSITIVE);
    candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.1 <= min + window)
        .map(|(k, c)| (k, centering(grid, &c.0)))
        .min_by(|a, b| {
            let (ca, cb) = (&candidates[a.0].0, &candidates[b.0].0);
            if (a.1 - b.1).abs() <= 1e-12 {
                ca.cmp(cb)
            } else {
                a.1.total_cmp(&b.1).then_with(|| ca.cmp(cb))
            }
        })
        .map(|(k, _)| k)
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u128::MAX / (n as u128 + 1) {
            return u128::MAX;
        }
    }
    acc
}

const CHUNK: usize = 4096;

/// Minimizes over an explicit candidate list (evaluated in parallel).
pub fn min_over_candidates(
    spec: &CostSpec,
    disc: &Discretization,
    candidates: impl IntoIterator<Item = Vec<usize>>,
) -> Result<OptResult> {
    let grid = *disc.grid();
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut evaluations = 0;
    for chunk in &candidates.into_iter().chunks(CHUNK) {
        let chunk: Vec<Vec<usize>> = chunk.collect();
        evaluations += chunk.len();
        let values: Vec<(Vec<usize>, f64)> = chunk
            .into_par_iter()
            .map(|cells| {
                let mask = SetMask::from_indices(&grid, &cells)?;
                let v = evaluate_cost(spec, disc, &mask)?;
                Ok((cells, v))
            })
            .collect::<Result<_>>()?;
        let mut pool = values;
        if let Some(b) = best.take() {
            pool.push(b);
        }
        if let Some(k) = select_min(&grid, &pool) {
            best = Some(pool.swap_remove(k));
        }
    }
    let (cells, value) = best.ok_or(FracError::EmptyDomain)?;
    let best_mask = SetMask::from_indices(&grid, &cells)?;
    Ok(OptResult {
        best_value: evaluate_cost(spec, disc, &best_mask)?,
        best_mask,
        history: vec![(0, value)],
        evaluations,
        accepted: 0,
    })
}

/// Exhaustive minimum over all masks with exactly the saturated cell count.
pub fn brute_force_min(spec: &CostSpec, disc: &Discretization) -> Result<OptResult> {
    let m = spec.saturated_cells(disc.grid())?;
    brute_force_sizes(spec, disc, m..=m)
}

/// Exhaustive minimum over all masks with `max_index ≤ |A| ≤ m` cells.
pub fn brute_force_min_at_most(spec: &CostSpec, disc: &Discretization) -> Result<OptResult> {
    let m = spec.saturated_cells(disc.grid())?;
    brute_force_sizes(spec, disc, spec.max_index().max(1)..=m)
}

fn brute_force_sizes(
    spec: &CostSpec,
    disc: &Discretization,
    sizes: std::ops::RangeInclusive<usize>,
) -> Result<OptResult> {
    let n = disc.grid().len();
    let count = sizes
        .clone()
        .map(|k| binomial(n, k))
        .fold(0u128, |a, b| a.saturating_add(b));
    if count > ENUMERATION_LIMIT {
        return Err(FracError::EnumerationGuard {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    min_over_candidates(spec, disc, sizes.flat_map(move |k| (0..n).combinations(k)))
}

/// Uniformly random mask with exactly `m` cells.
pub fn random_mask(grid: &BoxGrid, m: usize, rng: &mut impl Rng) -> Result<SetMask> {
    if m > grid.len() {
        return Err(FracError::InvalidCost(format!("{m} cells requested on a {}-cell grid", grid.len())));
    }
    let mut cells = sample(rng, grid.len(), m).into_vec();
    cells.sort_unstable();
    SetMask::from_indices(grid, &cells)
}

/// Swap neighbourhood for local search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Neighborhood {
    /// Every (member, non-member) pair.
    All,
    /// Members adjacent to a non-member, non-members adjacent to a member.
    Boundary,
    /// `All` up to [`AUTO_ALL_LIMIT`] pairs, `Boundary` beyond.
    Auto,
}

pub const AUTO_ALL_LIMIT: usize = 4096;

fn swap_candidates(mask: &SetMask, hood: Neighborhood) -> Vec<(usize, usize)> {
    let members = mask.indices();
    let outside = mask.complement().indices();
    let hood = match hood {
        Neighborhood::Auto if members.len() * outside.len() <= AUTO_ALL_LIMIT => Neighborhood::All,
        Neighborhood::Auto => Neighborhood::Boundary,
        h => h,
    };
    let (removable, addable) = match hood {
        Neighborhood::Boundary => {
            let mut rem = mask.boundary_members();
            let mut add = mask.outer_boundary();
            rem.sort_unstable();
            add.sort_unstable();
            (rem, add)
        }
        _ => (members, outside),
    };
    removable.iter().flat_map(|&r| addable.iter().map(move |&a| (r, a))).collect()
}

fn swapped(mask: &SetMask, (remove, add): (usize, usize)) -> SetMask {
    let mut next = mask.clone();
    next.set(remove, false);
    next.set(add, true);
    next
}

fn check_init(spec: &CostSpec, disc: &Discretization, init: &SetMask) -> Result<()> {
    if !init.on_grid(disc.grid()) {
        return Err(FracError::GridMismatch);
    }
    let m = spec.saturated_cells(disc.grid())?;
    if init.count() != m {
        return Err(FracError::InvalidCost(format!(
            "initial mask has {} cells, the saturated budget is {m}",
            init.count()
        )));
    }
    Ok(())
}

fn strictly_better(candidate: f64, incumbent: f64) -> bool {
    candidate < incumbent - 1e-12 * incumbent.abs()
}

/// Steepest-descent single-cell swaps from `init`, accepting strict
/// improvements only; ties go to the lowest `(remove, add)` pair.
pub fn exchange_search(
    spec: &CostSpec,
    disc: &Discretization,
    init: &SetMask,
    max_iters: usize,
    hood: Neighborhood,
) -> Result<OptResult> {
    check_init(spec, disc, init)?;
    let eval = CostEvaluator::new(spec, disc);
    let start = eval.evaluate(init)?;
    descend(&eval, init.clone(), start, max_iters, hood, 0, vec![(0, start)])
}

fn descend(
    eval: &CostEvaluator,
    mut mask: SetMask,
    mut value: f64,
    max_iters: usize,
    hood: Neighborhood,
    iter_offset: usize,
    mut history: Vec<(usize, f64)>,
) -> Result<OptResult> {
    let mut accepted = 0;
    for iter in 1..=max_iters {
        let moves = swap_candidates(&mask, hood);
        let scored: Vec<((usize, usize), f64)> = moves
            .par_iter()
            .map(|&mv| Ok((mv, eval.evaluate(&swapped(&mask, mv))?)))
            .collect::<Result<_>>()?;
        let Some(&(mv, v)) = scored.iter().min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))) else {
            break;
        };
        if !strictly_better(v, value) {
            break;
        }
        mask = swapped(&mask, mv);
        value = v;
        accepted += 1;
        history.push((iter_offset + iter, v));
    }
    Ok(OptResult {
        best_value: evaluate_cost(eval.spec, eval.disc, &mask)?,
        best_mask: mask,
        history,
        evaluations: eval.evaluations(),
        accepted,
    })
}

/// Geometric annealing schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnealSchedule {
    /// Initial temperature as a fraction of the initial cost.
    pub t0_fraction: f64,
    pub ratio: f64,
    pub sweeps: usize,
    /// Proposed swaps per sweep; `None` means one per grid cell.
    pub moves_per_sweep: Option<usize>,
    /// Finish with an exchange descent from the best-ever mask.
    pub polish: bool,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            t0_fraction: 0.1,
            ratio: 0.95,
            sweeps: 50,
            moves_per_sweep: None,
            polish: true,
        }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = self.t0_fraction >= 0.0
            && self.t0_fraction.is_finite()
            && self.ratio > 0.0
            && self.ratio <= 1.0
            && self.moves_per_sweep != Some(0);
        if ok {
            Ok(())
        } else {
            Err(FracError::InvalidCost(format!("invalid annealing schedule {self:?}")))
        }
    }
}

/// Metropolis single-cell swaps under a geometric schedule; returns the
/// best mask ever visited.
pub fn anneal_search(
    spec: &CostSpec,
    disc: &Discretization,
    init: &SetMask,
    schedule: &AnnealSchedule,
    seed: u64,
) -> Result<OptResult> {
    check_init(spec, disc, init)?;
    schedule.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval = CostEvaluator::new(spec, disc);
    let mut current = init.clone();
    let mut value = eval.evaluate(init)?;
    let mut best = (current.clone(), value);
    let mut history = vec![(0, value)];
    let mut accepted = 0;
    let mut temperature = schedule.t0_fraction * value.abs();
    let moves = schedule.moves_per_sweep.unwrap_or(disc.grid().len());
    let mut iter = 0;
    for _ in 0..schedule.sweeps {
        for _ in 0..moves {
            iter += 1;
            let members = current.indices();
            let outside = current.complement().indices();
            if members.is_empty() || outside.is_empty() {
                break;
            }
            let mv = (
                members[rng.random_range(0..members.len())],
                outside[rng.random_range(0..outside.len())],
            );
            let u: f64 = rng.random();
            let next = swapped(&current, mv);
            let v = eval.evaluate(&next)?;
            let delta = v - value;
            let accept = if temperature > 0.0 {
                delta <= 0.0 || u < (-delta / temperature).exp()
            } else {
                strictly_better(v, value)
            };
            if accept {
                current = next;
                value = v;
                accepted += 1;
                if strictly_better(value, best.1) {
                    best = (current.clone(), value);
                    history.push((iter, value));
                }
            }
        }
        temperature *= schedule.ratio;
    }
    if schedule.polish {
        let polished = descend(&eval, best.0, best.1, usize::MAX, Neighborhood::Auto, iter, history)?;
        return Ok(OptResult {
            accepted: accepted + polished.accepted,
            ..polished
        });
    }
    Ok(OptResult {
        best_value: evaluate_cost(spec, disc, &best.0)?,
        best_mask: best.0,
        history,
        evaluations: eval.evaluations(),
        accepted,
    })
}

/// One row of an s-sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub s: f64,
    pub min_value: f64,
    pub argmin: SetMask,
}

/// Exact discrete minima for each `s` in an ascending list ending at 1.
pub fn sweep_s_minima(spec: &CostSpec, grid: &BoxGrid, s_list: &[f64]) -> Result<Vec<SweepRow>> {
    if s_list.last() != Some(&1.0) {
        return Err(FracError::OrderOutOfRange(s_list.last().copied().unwrap_or(f64::NAN)));
    }
    if let Some(w) = s_list.windows(2).find(|w| w[0] >= w[1]) {
        return Err(FracError::OrderOutOfRange(w[1]));
    }
    // fail fast on the guard before any solve
    let m = spec.saturated_cells(grid)?;
    let count = binomial(grid.len(), m);
    if count > ENUMERATION_LIMIT {
        return Err(FracError::EnumerationGuard {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    s_list
        .iter()
        .map(|&s| {
            let disc = Discretization::new(grid, &FracParam::new(grid.dim(), s)?)?;
            let r = brute_force_min(spec, &disc)?;
            Ok(SweepRow {
                s,
                min_value: r.best_value,
                argmin: r.best_mask,
            })
        })
        .collect()
}

/// Seeded random initial masks, one per start, with the saturated cell count.
pub fn random_starts(spec: &CostSpec, grid: &BoxGrid, starts: usize, seed: u64) -> Result<Vec<SetMask>> {
    let m = spec.saturated_cells(grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..starts).map(|_| random_mask(grid, m, &mut rng)).collect()
}
