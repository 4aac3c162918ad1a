//! Stiffness matrices for the Dirichlet fractional Laplacian on pixel sets.
//!
//! For `s < 1` the matrix realizes
//! `a(u, v) = (c(n,s)/2) ∬ (u(x)-u(y))(v(x)-v(y)) |x-y|^{-(n+2s)} dx dy`
//! on cell-wise constant functions that vanish outside the mask:
//!
//! ```text
//! K[i][j] = -c W[i][j]                      (i != j)
//! K[i][i] =  c (Σ_{j in grid, j != i} W[i][j] + T[i])
//! ```
//!
//! so that `uᵀ K u = (c/2) [u]_s^2` and Rayleigh quotients `uᵀKu / (hⁿ uᵀu)`
//! approximate eigenvalues directly. This is the only place the factor `1/2`
//! enters; the torsion load is `hⁿ` per cell.
//!
//! For `s = 1` the matrix is `h^{n-2}` times the 3-/5-point graph Laplacian.
//! Neighbours inside the box but outside the mask act as zero ghost values at
//! their cell centers; faces on the box boundary carry the Dirichlet condition
//! at the face (coefficient 2). Either way the entries depend only on the
//! grid position, so operators on nested masks are principal submatrices of
//! one another.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{FracError, Result};
use crate::grid::{BoxGrid, SetMask};
use crate::kernel::{FracParam, KernelTable};

/// Grid-level discretization for one order `s`; assembles operators on masks.
#[derive(Debug, Clone)]
pub struct Discretization {
    grid: BoxGrid,
    param: FracParam,
    table: Option<KernelTable>,
}

impl Discretization {
    pub fn new(grid: &BoxGrid, param: &FracParam) -> Result<Self> {
        if param.dim() != grid.dim() {
            return Err(FracError::InvalidGrid(format!(
                "parameter dimension {} does not match grid dimension {}",
                param.dim(),
                grid.dim()
            )));
        }
        let table = if param.is_classical() {
            None
        } else {
            Some(KernelTable::new(grid, param)?)
        };
        Ok(Discretization {
            grid: *grid,
            param: *param,
            table,
        })
    }

    pub fn from_table(table: KernelTable) -> Self {
        Discretization {
            grid: *table.grid(),
            param: *table.param(),
            table: Some(table),
        }
    }

    pub fn grid(&self) -> &BoxGrid {
        &self.grid
    }

    pub fn param(&self) -> &FracParam {
        &self.param
    }

    pub fn table(&self) -> Option<&KernelTable> {
        self.table.as_ref()
    }

    /// Mass-matrix scalar `hⁿ`.
    pub fn mass(&self) -> f64 {
        self.grid.cell_volume()
    }

    fn classical_scale(&self) -> f64 {
        self.grid.h().powi(self.grid.dim() as i32 - 2)
    }

    /// Entry of the full-grid stiffness matrix.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diagonal(i);
        }
        match (&self.table, self.param.cns()) {
            (Some(t), Some(c)) => -c * t.weight(i, j),
            _ => {
                let off = self.grid.offset(i, j);
                if off[0].abs() + off[1].abs() == 1 {
                    -self.classical_scale()
                } else {
                    0.0
                }
            }
        }
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        match (&self.table, self.param.cns()) {
            (Some(t), Some(c)) => c * t.row_total(),
            _ => {
                let inner = self.grid.neighbors(i).count();
                self.classical_scale() * (inner + 2 * self.grid.box_faces(i)) as f64
            }
        }
    }

    /// Stiffness matrix restricted to the cells of `mask`.
    pub fn assemble(&self, mask: &SetMask) -> Result<NonlocalOperator> {
        if !mask.on_grid(&self.grid) {
            return Err(FracError::GridMismatch);
        }
        let dofs = mask.indices();
        if dofs.is_empty() {
            return Err(FracError::EmptyDomain);
        }
        let n = dofs.len();
        let rows: Vec<Vec<f64>> = dofs
            .par_iter()
            .enumerate()
            .map(|(a, &i)| {
                (0..n)
                    .map(|b| if b < a { 0.0 } else { self.entry(i, dofs[b]) })
                    .collect()
            })
            .collect();
        let mut matrix = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in a..n {
                matrix[(a, b)] = rows[a][b];
                matrix[(b, a)] = rows[a][b];
            }
        }
        Ok(NonlocalOperator {
            grid: self.grid,
            param: self.param,
            domain: mask.clone(),
            dofs,
            matrix,
            mass: self.mass(),
        })
    }

    /// `K u` on the full grid for `u` given on every cell (zero outside `Q`).
    pub fn apply_full(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.grid.len());
        let n = u.len();
        match &self.table {
            Some(_) => (0..n)
                .into_par_iter()
                .map(|i| (0..n).map(|j| self.entry(i, j) * u[j]).sum())
                .collect(),
            None => (0..n)
                .map(|i| {
                    let off: f64 = self.grid.neighbors(i).map(|j| u[j]).sum();
                    self.diagonal(i) * u[i] - self.classical_scale() * off
                })
                .collect(),
        }
    }

    /// Discrete Gagliardo seminorm `[u]_s^2` (no `c(n,s)` factor).
    pub fn seminorm_sq(&self, u: &[f64]) -> Result<f64> {
        match &self.table {
            Some(t) => Ok(t.seminorm_sq(u)),
            None => Err(FracError::OrderOutOfRange(self.param.s())),
        }
    }

    /// `(1 - s) [u]_s^2`.
    pub fn uniform_bound(&self, u: &[f64]) -> Result<f64> {
        Ok((1.0 - self.param.s()) * self.seminorm_sq(u)?)
    }
}

/// Symmetric positive definite stiffness matrix on the cells of a mask.
#[derive(Debug, Clone)]
pub struct NonlocalOperator {
    grid: BoxGrid,
    param: FracParam,
    domain: SetMask,
    dofs: Vec<usize>,
    matrix: DMatrix<f64>,
    mass: f64,
}

impl NonlocalOperator {
    pub fn grid(&self) -> &BoxGrid {
        &self.grid
    }

    pub fn param(&self) -> &FracParam {
        &self.param
    }

    pub fn domain(&self) -> &SetMask {
        &self.domain
    }

    /// Grid indices of the degrees of freedom, in increasing order.
    pub fn dofs(&self) -> &[usize] {
        &self.dofs
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn len(&self) -> usize {
        self.dofs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dofs.is_empty()
    }

    pub fn quadratic_form(&self, u: &DVector<f64>) -> f64 {
        u.dot(&(&self.matrix * u))
    }

    /// `uᵀKu / (hⁿ uᵀu)`.
    pub fn rayleigh_quotient(&self, u: &DVector<f64>) -> f64 {
        self.quadratic_form(u) / (self.mass * u.dot(u))
    }

    /// Extends a vector on the dofs by zero to the whole grid.
    pub fn extend(&self, u: &DVector<f64>) -> Vec<f64> {
        let mut full = vec![0.0; self.grid.len()];
        for (a, &i) in self.dofs.iter().enumerate() {
            full[i] = u[a];
        }
        full
    }

    pub fn restrict(&self, full: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.dofs.len(), self.dofs.iter().map(|&i| full[i]))
    }

    /// Largest off-diagonal entry (non-positive for an M-matrix).
    pub fn max_off_diagonal(&self) -> f64 {
        let n = self.len();
        let mut best = f64::NEG_INFINITY;
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    best = best.max(self.matrix[(a, b)]);
                }
            }
        }
        best
    }

    /// `min_i (K_ii - Σ_{j != i} |K_ij|)`; positive for strict dominance.
    pub fn dominance_margin(&self) -> f64 {
        let n = self.len();
        (0..n)
            .map(|a| {
                let off: f64 = (0..n).filter(|&b| b != a).map(|b| self.matrix[(a, b)].abs()).sum();
                self.matrix[(a, a)] - off
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Writes the nonzero entries as `i j value` lines in grid indices.
    pub fn dump_triplets(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "# i j value")?;
        for (a, &i) in self.dofs.iter().enumerate() {
            for (b, &j) in self.dofs.iter().enumerate() {
                let v = self.matrix[(a, b)];
                if v != 0.0 {
                    writeln!(out, "{i} {j} {v:e}")?;
                }
            }
        }
        Ok(())
    }
}

/// Assembles the operator on `mask` from scratch.
pub fn assemble(grid: &BoxGrid, param: &FracParam, mask: &SetMask) -> Result<NonlocalOperator> {
    Discretization::new(grid, param)?.assemble(mask)
}

/// `[u]_s^2` of a grid function extended by zero outside the box.
pub fn gagliardo_seminorm(grid: &BoxGrid, param: &FracParam, u: &[f64]) -> Result<f64> {
    if param.is_classical() {
        return Err(FracError::OrderOutOfRange(param.s()));
    }
    Ok(KernelTable::new(grid, param)?.seminorm_sq(u))
}

/// `(1 - s) [u]_s^2`, the quantity that stays bounded uniformly in `s` on the
/// convex set of nonnegative subsolutions.
pub fn uniform_bound_check(grid: &BoxGrid, param: &FracParam, u: &[f64]) -> Result<f64> {
    Ok((1.0 - param.s()) * gagliardo_seminorm(grid, param, u)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_cell_operator() {
        let grid = BoxGrid::interval(0.0, 1.0, 8).unwrap();
        let param = FracParam::new(1, 0.3).unwrap();
        let disc = Discretization::new(&grid, &param).unwrap();
        let mask = SetMask::from_indices(&grid, &[3]).unwrap();
        let op = disc.assemble(&mask).unwrap();
        let t = disc.table().unwrap();
        let c = param.cns().unwrap();
        let sum: f64 = (0..8).filter(|&j| j != 3).map(|j| t.pair_weight(3, j).unwrap()).sum();
        let expected = c * (sum + t.exterior_tail(3));
        assert!(((op.matrix()[(0, 0)] - expected) / expected).abs() < 1e-12);
        assert!(op.matrix()[(0, 0)] > 0.0);
    }

    #[test]
    fn classical_full_interval_stencil() {
        let grid = BoxGrid::interval(0.0, 1.0, 6).unwrap();
        let op = assemble(&grid, &FracParam::classical(1).unwrap(), &SetMask::full(&grid)).unwrap();
        let h2 = grid.h() * grid.h();
        let k = op.matrix() / grid.cell_volume();
        for a in 0..6usize {
            for b in 0..6 {
                let expected = if a == b {
                    // interior rows 2, box-face rows 3 (Dirichlet at the face)
                    if a == 0 || a == 5 { 3.0 } else { 2.0 }
                } else if a.abs_diff(b) == 1 {
                    -1.0
                } else {
                    0.0
                };
                assert!((k[(a, b)] * h2 - expected).abs() < 1e-12, "({a},{b})");
            }
        }
    }

    #[test]
    fn empty_mask_rejected() {
        let grid = BoxGrid::interval(0.0, 1.0, 6).unwrap();
        let err = assemble(&grid, &FracParam::new(1, 0.5).unwrap(), &SetMask::empty(&grid)).unwrap_err();
        assert_eq!(err, FracError::EmptyDomain);
        let other = BoxGrid::interval(0.0, 2.0, 6).unwrap();
        let err = assemble(&grid, &FracParam::new(1, 0.5).unwrap(), &SetMask::full(&other)).unwrap_err();
        assert_eq!(err, FracError::GridMismatch);
    }

    #[test]
    fn quadratic_form_matches_seminorm() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let grid = BoxGrid::square(0.0, 1.0, 8).unwrap();
        let param = FracParam::new(2, 0.55).unwrap();
        let disc = Discretization::new(&grid, &param).unwrap();
        let c = param.cns().unwrap();
        for _ in 0..20 {
            let mask = SetMask::from_fn(&grid, |_| rng.random_bool(0.5));
            if mask.is_empty() {
                continue;
            }
            let op = disc.assemble(&mask).unwrap();
            let u = DVector::from_fn(op.len(), |_, _| rng.random_range(-1.0..1.0));
            let qf = op.quadratic_form(&u);
            let semi = disc.seminorm_sq(&op.extend(&u)).unwrap();
            assert!(((qf - 0.5 * c * semi) / qf).abs() < 1e-10);
        }
    }

    #[test]
    fn seminorm_zero_and_scaling() {
        let grid = BoxGrid::interval(0.0, 1.0, 20).unwrap();
        let param = FracParam::new(1, 0.4).unwrap();
        assert_eq!(gagliardo_seminorm(&grid, &param, &[0.0; 20]).unwrap(), 0.0);
        let u: Vec<f64> = (0..20).map(|i| (i as f64 * 0.3).sin()).collect();
        let u3: Vec<f64> = u.iter().map(|v| 3.0 * v).collect();
        let a = gagliardo_seminorm(&grid, &param, &u).unwrap();
        let b = gagliardo_seminorm(&grid, &param, &u3).unwrap();
        assert!((b / a - 9.0).abs() < 1e-12);
        assert!(a > 0.0);
        // a constant on the grid is not constant on R^n: positive seminorm
        assert!(gagliardo_seminorm(&grid, &param, &[1.0; 20]).unwrap() > 0.0);
        assert!(gagliardo_seminorm(&grid, &FracParam::classical(1).unwrap(), &u).is_err());
        assert_eq!(uniform_bound_check(&grid, &param, &[0.0; 20]).unwrap(), 0.0);
        let ub = uniform_bound_check(&grid, &param, &u).unwrap();
        let ub3 = uniform_bound_check(&grid, &param, &u3).unwrap();
        assert!((ub3 / ub - 9.0).abs() < 1e-12);
    }

    #[test]
    fn nested_masks_give_principal_submatrices() {
        let grid = BoxGrid::square(0.0, 1.0, 6).unwrap();
        for s in [0.5, 1.0] {
            let disc = Discretization::new(&grid, &FracParam::new(2, s).unwrap()).unwrap();
            let big = SetMask::from_fn(&grid, |i| i % 5 != 0);
            let small = SetMask::from_fn(&grid, |i| i % 5 != 0 && i % 3 != 0);
            let kb = disc.assemble(&big).unwrap();
            let ks = disc.assemble(&small).unwrap();
            for (a, i) in ks.dofs().iter().enumerate() {
                for (b, j) in ks.dofs().iter().enumerate() {
                    let pa = kb.dofs().iter().position(|x| x == i).unwrap();
                    let pb = kb.dofs().iter().position(|x| x == j).unwrap();
                    assert_eq!(ks.matrix()[(a, b)], kb.matrix()[(pa, pb)]);
                }
            }
        }
    }

    #[test]
    fn triplet_dump_lists_nonzeros() {
        let grid = BoxGrid::interval(0.0, 1.0, 4).unwrap();
        let op = assemble(&grid, &FracParam::classical(1).unwrap(), &SetMask::full(&grid)).unwrap();
        let mut buf = Vec::new();
        op.dump_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 4 + 6);
        assert!(text.lines().nth(1).unwrap().starts_with("0 0 "));
    }
}
