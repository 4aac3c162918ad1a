//! Torsion, Dirichlet eigenvalue and capacity solves, plus the discrete
//! checks for the convex set `K_s = {w >= 0 : (-Δ)^s w <= 1}`.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{FracError, Result};
use crate::grid::{BoxGrid, SetMask};
use crate::operator::{Discretization, NonlocalOperator};

/// Unknown count above which the linear solves switch to conjugate gradients
/// and the eigensolver to subspace iteration.
pub const DENSE_LIMIT: usize = 2000;

/// Relative residual demanded from every linear solve.
pub const SOLVE_TOL: f64 = 1e-10;

/// Relative slack in the operator bound `(K w)_i <= hⁿ (1 + tol)`.
pub const KS_TOL: f64 = 1e-8;

/// Eigenvalues closer than this (relative) are flagged as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-8;

/// Discrete torsion function `u_A^s`, extended by zero to the whole grid.
#[derive(Debug, Clone)]
pub struct TorsionSolution {
    pub domain: SetMask,
    pub s: f64,
    pub u: Vec<f64>,
    pub residual_norm: f64,
    /// Smallest entry before negatives of round-off size were clamped.
    pub min_before_clamp: f64,
}

impl TorsionSolution {
    pub fn max_value(&self) -> f64 {
        self.u.iter().copied().fold(0.0, f64::max)
    }

    /// CSV with columns `cell_index,x[,y],u_value`.
    pub fn write_csv(&self, grid: &BoxGrid, out: &mut impl Write) -> std::io::Result<()> {
        write_values_csv(grid, &self.u, "u_value", out)
    }
}

/// CSV with columns `cell_index,x[,y],<column>`.
pub fn write_values_csv(
    grid: &BoxGrid,
    values: &[f64],
    column: &str,
    out: &mut impl Write,
) -> std::io::Result<()> {
    if grid.dim() == 1 {
        writeln!(out, "cell_index,x,{column}")?;
    } else {
        writeln!(out, "cell_index,x,y,{column}")?;
    }
    for (i, v) in values.iter().enumerate() {
        let c = grid.center(i);
        if grid.dim() == 1 {
            writeln!(out, "{i},{},{v}", c[0])?;
        } else {
            writeln!(out, "{i},{},{},{v}", c[0], c[1])?;
        }
    }
    Ok(())
}

/// Solves `K u = hⁿ 1` on the operator's domain.
pub fn solve_torsion(op: &NonlocalOperator) -> Result<TorsionSolution> {
    if op.is_empty() {
        return Err(FracError::EmptyDomain);
    }
    let rhs = DVector::from_element(op.len(), op.mass());
    let x = solve_spd(op.matrix(), &rhs)?;
    let residual_norm = relative_residual(op.matrix(), &x, &rhs);
    if residual_norm > SOLVE_TOL {
        return Err(FracError::NotConverged { residual: residual_norm });
    }
    let min_before_clamp = x.min();
    let scale = x.max().max(f64::MIN_POSITIVE);
    if min_before_clamp < -1e-12 * scale.max(1.0) {
        return Err(FracError::MaximumPrinciple(min_before_clamp));
    }
    let clamped = x.map(|v| v.max(0.0));
    Ok(TorsionSolution {
        domain: op.domain().clone(),
        s: op.param().s(),
        u: op.extend(&clamped),
        residual_norm,
        min_before_clamp,
    })
}

/// Torsion function of `mask`; the zero function for an empty mask.
pub fn torsion_or_zero(disc: &Discretization, mask: &SetMask) -> Result<Vec<f64>> {
    if mask.is_empty() {
        return Ok(vec![0.0; disc.grid().len()]);
    }
    Ok(solve_torsion(&disc.assemble(mask)?)?.u)
}

fn relative_residual(a: &DMatrix<f64>, x: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a * x - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Solves an SPD system: Cholesky for small systems, Jacobi-preconditioned
/// conjugate gradients otherwise.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() <= DENSE_LIMIT {
        let chol = Cholesky::new(a.clone()).ok_or(FracError::NotPositiveDefinite)?;
        let mut x = chol.solve(b);
        // one step of iterative refinement
        let r = b - a * &x;
        x += chol.solve(&r);
        Ok(x)
    } else {
        conjugate_gradient(a, b, SOLVE_TOL * 0.1, 10 * a.nrows())
    }
}

fn conjugate_gradient(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64, max_iter: usize) -> Result<DVector<f64>> {
    let n = b.len();
    let diag = a.diagonal();
    if diag.iter().any(|&d| d <= 0.0) {
        return Err(FracError::NotPositiveDefinite);
    }
    let mut x = DVector::zeros(n);
    let mut r = b.clone();
    let mut z = r.component_div(&diag);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let bnorm = b.norm().max(f64::MIN_POSITIVE);
    for _ in 0..max_iter {
        if r.norm() / bnorm <= tol {
            return Ok(x);
        }
        let ap = a * &p;
        let pap = p.dot(&ap);
        if pap <= 0.0 {
            return Err(FracError::NotPositiveDefinite);
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        z = r.component_div(&diag);
        let rz_new = r.dot(&z);
        p = &z + (rz_new / rz) * &p;
        rz = rz_new;
    }
    let residual = r.norm() / bnorm;
    if residual <= tol {
        Ok(x)
    } else {
        Err(FracError::NotConverged { residual })
    }
}

/// Smallest Dirichlet eigenpairs of `(1/hⁿ) K` on a mask.
#[derive(Debug, Clone)]
pub struct SpectralResult {
    pub domain: SetMask,
    pub s: f64,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Columns on the domain cells, orthonormal in the `hⁿ`-weighted inner
    /// product, first non-negligible component positive.
    pub eigenvectors: DMatrix<f64>,
    /// Index pairs `(k, k+1)` (0-based) of numerically coincident eigenvalues.
    pub degenerate: Vec<(usize, usize)>,
}

impl SpectralResult {
    /// CSV with columns `eigen_index,lambda` (1-based index).
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "eigen_index,lambda")?;
        for (k, l) in self.eigenvalues.iter().enumerate() {
            writeln!(out, "{},{l}", k + 1)?;
        }
        Ok(())
    }
}

/// Eigensolver selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenMethod {
    /// Dense below [`DENSE_LIMIT`] unknowns, subspace iteration above.
    Auto,
    Dense,
    Subspace,
}

pub fn solve_eigs(op: &NonlocalOperator, count: usize) -> Result<SpectralResult> {
    solve_eigs_with(op, count, EigenMethod::Auto)
}

pub fn solve_eigs_with(op: &NonlocalOperator, count: usize, method: EigenMethod) -> Result<SpectralResult> {
    let n = op.len();
    if count > n {
        return Err(FracError::TooManyEigenpairs {
            requested: count,
            available: n,
        });
    }
    if count == 0 {
        return Ok(SpectralResult {
            domain: op.domain().clone(),
            s: op.param().s(),
            eigenvalues: Vec::new(),
            eigenvectors: DMatrix::zeros(n, 0),
            degenerate: Vec::new(),
        });
    }
    let scaled = op.matrix() / op.mass();
    let use_dense = match method {
        EigenMethod::Dense => true,
        EigenMethod::Subspace => false,
        EigenMethod::Auto => n <= DENSE_LIMIT,
    };
    let (values, mut vectors) = if use_dense {
        dense_smallest(&scaled, count)
    } else {
        subspace_smallest(&scaled, count)?
    };
    // hⁿ-orthonormal columns with a fixed sign
    let norm = op.mass().sqrt();
    for k in 0..count {
        let mut col = vectors.column_mut(k);
        let len = col.norm();
        col /= len * norm;
        let peak = col.amax();
        if let Some(first) = col.iter().copied().find(|v| v.abs() > 1e-8 * peak) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
    let degenerate = values
        .windows(2)
        .enumerate()
        .filter(|(_, w)| (w[1] - w[0]).abs() <= DEGENERACY_TOL * w[1].abs())
        .map(|(k, _)| (k, k + 1))
        .collect();
    Ok(SpectralResult {
        domain: op.domain().clone(),
        s: op.param().s(),
        eigenvalues: values,
        eigenvectors: vectors,
        degenerate,
    })
}

/// Smallest `count` eigenvalues only (no vectors); used by cost evaluation.
pub fn smallest_eigenvalues(op: &NonlocalOperator, count: usize) -> Result<Vec<f64>> {
    let n = op.len();
    if count > n {
        return Err(FracError::TooManyEigenpairs {
            requested: count,
            available: n,
        });
    }
    if n > DENSE_LIMIT {
        return Ok(solve_eigs(op, count)?.eigenvalues);
    }
    let scaled = op.matrix() / op.mass();
    let mut values: Vec<f64> = scaled.symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values.truncate(count);
    Ok(values)
}

fn dense_smallest(a: &DMatrix<f64>, count: usize) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..a.nrows()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]).then(i.cmp(&j)));
    let values = order[..count].iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(a.nrows(), count, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Block inverse iteration with Rayleigh–Ritz on a Cholesky factor.
fn subspace_smallest(a: &DMatrix<f64>, count: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let block = (count + 8).min(n);
    let chol = Cholesky::new(a.clone()).ok_or(FracError::NotPositiveDefinite)?;
    // deterministic start: smooth, linearly independent columns
    let mut x = DMatrix::from_fn(n, block, |r, c| {
        let t = (r as f64 + 0.5) / n as f64;
        (std::f64::consts::PI * (c + 1) as f64 * t).sin() + 1e-3 * ((r * 31 + c * 17) % 97) as f64
    });
    let mut residual = f64::INFINITY;
    for _ in 0..500 {
        x = chol.solve(&x);
        let q = x.clone().qr().q();
        let projected = q.transpose() * a * &q;
        let (values, small) = dense_smallest(&projected, block);
        x = &q * small;
        residual = (0..count)
            .map(|k| {
                let v = x.column(k);
                (a * v - values[k] * v).norm() / (values[k].abs() * v.norm())
            })
            .fold(0.0, f64::max);
        if residual <= SOLVE_TOL {
            let vectors = x.columns(0, count).into_owned();
            return Ok((values[..count].to_vec(), vectors));
        }
    }
    Err(FracError::NotConverged { residual })
}

/// Gagliardo capacity of a condenser relative to the box.
#[derive(Debug, Clone)]
pub struct CapacityValue {
    pub condenser: SetMask,
    /// `[u]_s^2` of the optimal potential (no `c(n,s)` factor).
    pub value: f64,
    /// 1 on the condenser, 0 outside the box, harmonic in between.
    pub potential: Vec<f64>,
}

/// Minimizes `[u]_s^2` over grid functions with `u = 1` on the condenser and
/// `u = 0` outside the box.
pub fn capacity(disc: &Discretization, condenser: &SetMask) -> Result<CapacityValue> {
    let table = disc.table().ok_or(FracError::OrderOutOfRange(disc.param().s()))?;
    let grid = disc.grid();
    if !condenser.on_grid(grid) {
        return Err(FracError::GridMismatch);
    }
    let mut potential = vec![0.0; grid.len()];
    if condenser.is_empty() {
        return Ok(CapacityValue {
            condenser: condenser.clone(),
            value: 0.0,
            potential,
        });
    }
    for i in condenser.indices() {
        potential[i] = 1.0;
    }
    let free = condenser.complement();
    if !free.is_empty() {
        let op = disc.assemble(&free)?;
        let fixed = condenser.indices();
        let rhs = DVector::from_iterator(
            op.len(),
            op.dofs().iter().map(|&i| -fixed.iter().map(|&j| disc.entry(i, j)).sum::<f64>()),
        );
        let u = solve_spd(op.matrix(), &rhs)?;
        let residual = relative_residual(op.matrix(), &u, &rhs);
        if residual > SOLVE_TOL {
            return Err(FracError::NotConverged { residual });
        }
        for (a, &i) in op.dofs().iter().enumerate() {
            potential[i] = u[a];
        }
    }
    Ok(CapacityValue {
        condenser: condenser.clone(),
        value: table.seminorm_sq(&potential),
        potential,
    })
}

/// Result of a `K_s` membership test.
#[derive(Debug, Clone, PartialEq)]
pub struct KsReport {
    pub member: bool,
    /// Cell with the largest violation of either constraint.
    pub worst_cell: Option<usize>,
    /// `max_i max(-u_i, (K u)_i / hⁿ - 1)`.
    pub worst_excess: f64,
}

/// Checks `u >= 0` and `(K u)_i <= hⁿ (1 + tol)` on every grid cell.
pub fn ks_membership(disc: &Discretization, u: &[f64]) -> KsReport {
    let ku = disc.apply_full(u);
    let mass = disc.mass();
    let mut worst_cell = None;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut member = true;
    for i in 0..u.len() {
        let excess = (-u[i]).max(ku[i] / mass - 1.0);
        if u[i] < 0.0 || ku[i] > mass * (1.0 + KS_TOL) {
            member = false;
        }
        if excess > worst_excess {
            worst_excess = excess;
            worst_cell = Some(i);
        }
    }
    KsReport {
        member,
        worst_cell: if member { None } else { worst_cell },
        worst_excess,
    }
}

/// Outcome of the maximality check of `u_A^s` among admissible subsolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct MaximalityReport {
    /// Sample indices that satisfied the precondition and were checked.
    pub checked: Vec<usize>,
    /// Sample indices rejected by the precondition.
    pub excluded: Vec<usize>,
    /// `max over checked samples and cells of (w - u_A)`.
    pub max_excess: f64,
    pub holds: bool,
}

/// Verifies `w <= u_A^s` for every sample `w` with `w <= 0` off `A` and
/// `(K w)_i <= hⁿ` on the grid.
pub fn torsion_maximality_check(
    disc: &Discretization,
    domain: &SetMask,
    samples: &[Vec<f64>],
) -> Result<MaximalityReport> {
    let u = torsion_or_zero(disc, domain)?;
    let scale = u.iter().copied().fold(1e-300, f64::max);
    let tol = 1e-9 * scale;
    let mut checked = Vec::new();
    let mut excluded = Vec::new();
    let mut max_excess = f64::NEG_INFINITY;
    for (k, w) in samples.iter().enumerate() {
        let outside_ok = (0..w.len()).all(|i| domain.contains(i) || w[i] <= tol);
        let bound_ok = ks_bound_holds(disc, w);
        if !(outside_ok && bound_ok) {
            excluded.push(k);
            continue;
        }
        checked.push(k);
        for (wi, ui) in w.iter().zip(&u) {
            max_excess = max_excess.max(wi - ui);
        }
    }
    Ok(MaximalityReport {
        holds: checked.is_empty() || max_excess <= tol,
        checked,
        excluded,
        max_excess,
    })
}

fn ks_bound_holds(disc: &Discretization, w: &[f64]) -> bool {
    let mass = disc.mass();
    disc.apply_full(w).iter().all(|&v| v <= mass * (1.0 + KS_TOL))
}
