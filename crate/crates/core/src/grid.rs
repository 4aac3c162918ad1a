//! Uniform cell grids on a box `Q` and pixel subsets of them.
//!
//! Cells are indexed row-major: in two dimensions the linear index of cell
//! `(i0, i1)` is `i0 * cells[1] + i1`. A cell belongs to a geometric set when
//! its center `lower + (i + 1/2) h` does.

use std::fmt;
use std::str::FromStr;

use crate::error::{FracError, Result};

const MASK_MAGIC: &str = "fracshape-mask";
const MASK_VERSION: &str = "v1";

/// Uniform discretization of an axis-aligned box in one or two dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxGrid {
    dim: usize,
    lower: [f64; 2],
    upper: [f64; 2],
    cells: [usize; 2],
    h: f64,
}

impl BoxGrid {
    /// Builds a grid over `extent` with `cells_per_axis` cells per axis.
    ///
    /// A single entry in `cells_per_axis` is broadcast to every axis. The
    /// cell width must come out identical on all axes.
    pub fn new(dim: usize, extent: &[(f64, f64)], cells_per_axis: &[usize]) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(FracError::UnsupportedDimension(dim));
        }
        if extent.len() != dim {
            return Err(FracError::InvalidGrid(format!(
                "expected {dim} extent intervals, got {}",
                extent.len()
            )));
        }
        let cells: Vec<usize> = match cells_per_axis.len() {
            1 => vec![cells_per_axis[0]; dim],
            k if k == dim => cells_per_axis.to_vec(),
            k => {
                return Err(FracError::InvalidGrid(format!(
                    "expected {dim} cell counts, got {k}"
                )))
            }
        };
        let mut lower = [0.0; 2];
        let mut upper = [1.0; 2];
        let mut counts = [1usize; 2];
        let mut widths = Vec::with_capacity(dim);
        for axis in 0..dim {
            let (a, b) = extent[axis];
            if !(a.is_finite() && b.is_finite()) || b <= a {
                return Err(FracError::InvalidGrid(format!(
                    "degenerate extent [{a}, {b}] on axis {axis}"
                )));
            }
            if cells[axis] < 2 {
                return Err(FracError::InvalidGrid(format!(
                    "axis {axis} needs at least 2 cells"
                )));
            }
            lower[axis] = a;
            upper[axis] = b;
            counts[axis] = cells[axis];
            widths.push((b - a) / cells[axis] as f64);
        }
        let h = widths[0];
        if widths.iter().any(|w| ((w - h) / h).abs() > 1e-12) {
            return Err(FracError::InvalidGrid(format!(
                "non-uniform cell width across axes: {widths:?}"
            )));
        }
        Ok(BoxGrid {
            dim,
            lower,
            upper,
            cells: counts,
            h,
        })
    }

    /// One-dimensional grid on `[a, b]`.
    pub fn interval(a: f64, b: f64, cells: usize) -> Result<Self> {
        Self::new(1, &[(a, b)], &[cells])
    }

    /// Two-dimensional grid on `[a, b]^2` with `cells x cells` cells.
    pub fn square(a: f64, b: f64, cells: usize) -> Result<Self> {
        Self::new(2, &[(a, b), (a, b)], &[cells])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn extent(&self) -> Vec<(f64, f64)> {
        (0..self.dim).map(|a| (self.lower[a], self.upper[a])).collect()
    }

    pub fn len(&self) -> usize {
        self.cells[..self.dim].iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lebesgue measure of the box.
    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|a| self.upper[a] - self.lower[a]).product()
    }

    /// Integer coordinates of a cell; the second entry is 0 in 1D.
    pub fn multi_index(&self, index: usize) -> [usize; 2] {
        debug_assert!(index < self.len());
        if self.dim == 1 {
            [index, 0]
        } else {
            [index / self.cells[1], index % self.cells[1]]
        }
    }

    pub fn linear_index(&self, multi: [usize; 2]) -> usize {
        if self.dim == 1 {
            multi[0]
        } else {
            multi[0] * self.cells[1] + multi[1]
        }
    }

    /// Cell center; the second coordinate is 0 in 1D.
    pub fn center(&self, index: usize) -> [f64; 2] {
        let m = self.multi_index(index);
        let mut c = [0.0; 2];
        for (axis, value) in c.iter_mut().enumerate().take(self.dim) {
            *value = self.lower[axis] + (m[axis] as f64 + 0.5) * self.h;
        }
        c
    }

    /// Index of the cell containing `point`, if it lies in the box.
    pub fn locate(&self, point: &[f64]) -> Option<usize> {
        let mut multi = [0usize; 2];
        for axis in 0..self.dim {
            let t = (point[axis] - self.lower[axis]) / self.h;
            if t.is_nan() || t < 0.0 {
                return None;
            }
            let i = t.floor() as usize;
            if i >= self.cells[axis] {
                return None;
            }
            multi[axis] = i;
        }
        Some(self.linear_index(multi))
    }

    /// Integer offset `j - i` between two cells.
    pub fn offset(&self, i: usize, j: usize) -> [i64; 2] {
        let a = self.multi_index(i);
        let b = self.multi_index(j);
        [b[0] as i64 - a[0] as i64, b[1] as i64 - a[1] as i64]
    }

    /// Axis neighbours of a cell inside the grid.
    pub fn neighbors(&self, index: usize) -> impl Iterator<Item = usize> + '_ {
        let m = self.multi_index(index);
        let dim = self.dim;
        (0..dim).flat_map(move |axis| {
            let mut out = [None, None];
            if m[axis] > 0 {
                let mut n = m;
                n[axis] -= 1;
                out[0] = Some(self.linear_index(n));
            }
            if m[axis] + 1 < self.cells[axis] {
                let mut n = m;
                n[axis] += 1;
                out[1] = Some(self.linear_index(n));
            }
            out.into_iter().flatten()
        })
    }

    /// Number of cell faces of `index` that lie on the boundary of the box.
    pub fn box_faces(&self, index: usize) -> usize {
        let m = self.multi_index(index);
        (0..self.dim)
            .map(|a| usize::from(m[a] == 0) + usize::from(m[a] + 1 == self.cells[a]))
            .sum()
    }

    fn header(&self) -> String {
        let cells = self.cells_per_axis().iter().map(|c| c.to_string()).collect::<Vec<_>>().join("x");
        let extent = self
            .extent()
            .iter()
            .map(|(a, b)| format!("{a},{b}"))
            .collect::<Vec<_>>()
            .join(";");
        format!("{MASK_MAGIC} {MASK_VERSION} dim={} cells={cells} extent={extent}", self.dim)
    }
}

/// Pixel subset of a [`BoxGrid`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SetMask {
    grid: GridKey,
    member: Vec<bool>,
}

// Grids are compared bitwise so masks can be hashed and used as map keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct GridKey {
    dim: usize,
    lower: [u64; 2],
    upper: [u64; 2],
    cells: [usize; 2],
}

impl GridKey {
    fn of(grid: &BoxGrid) -> Self {
        GridKey {
            dim: grid.dim,
            lower: grid.lower.map(f64::to_bits),
            upper: grid.upper.map(f64::to_bits),
            cells: grid.cells,
        }
    }

    fn grid(&self) -> BoxGrid {
        let lower = self.lower.map(f64::from_bits);
        let upper = self.upper.map(f64::from_bits);
        BoxGrid {
            dim: self.dim,
            lower,
            upper,
            cells: self.cells,
            h: (upper[0] - lower[0]) / self.cells[0] as f64,
        }
    }
}

impl SetMask {
    pub fn empty(grid: &BoxGrid) -> Self {
        SetMask {
            grid: GridKey::of(grid),
            member: vec![false; grid.len()],
        }
    }

    pub fn full(grid: &BoxGrid) -> Self {
        SetMask {
            grid: GridKey::of(grid),
            member: vec![true; grid.len()],
        }
    }

    pub fn from_indices(grid: &BoxGrid, indices: &[usize]) -> Result<Self> {
        let mut mask = Self::empty(grid);
        for &i in indices {
            if i >= grid.len() {
                return Err(FracError::InvalidGrid(format!("cell {i} out of range")));
            }
            mask.member[i] = true;
        }
        Ok(mask)
    }

    pub fn from_fn(grid: &BoxGrid, mut f: impl FnMut(usize) -> bool) -> Self {
        SetMask {
            grid: GridKey::of(grid),
            member: (0..grid.len()).map(&mut f).collect(),
        }
    }

    /// Cells whose centers lie in the closed ball of `radius` about `center`.
    pub fn ball(grid: &BoxGrid, center: &[f64], radius: f64) -> Self {
        Self::from_fn(grid, |i| {
            let c = grid.center(i);
            let d2: f64 = (0..grid.dim()).map(|a| (c[a] - center[a]).powi(2)).sum();
            radius > 0.0 && d2 <= radius * radius
        })
    }

    /// Cells whose centers lie in the closed interval `[a, b]` (1D) or the
    /// closed rectangle `[a0, b0] x [a1, b1]` (2D).
    pub fn rect(grid: &BoxGrid, bounds: &[(f64, f64)]) -> Self {
        Self::from_fn(grid, |i| {
            let c = grid.center(i);
            (0..grid.dim()).all(|a| c[a] >= bounds[a].0 && c[a] <= bounds[a].1)
        })
    }

    pub fn grid(&self) -> BoxGrid {
        self.grid.grid()
    }

    pub fn same_grid(&self, other: &SetMask) -> bool {
        self.grid == other.grid
    }

    pub fn on_grid(&self, grid: &BoxGrid) -> bool {
        self.grid == GridKey::of(grid)
    }

    pub fn len(&self) -> usize {
        self.member.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn contains(&self, index: usize) -> bool {
        self.member[index]
    }

    pub fn set(&mut self, index: usize, value: bool) {
        self.member[index] = value;
    }

    pub fn members(&self) -> &[bool] {
        &self.member
    }

    pub fn count(&self) -> usize {
        self.member.iter().filter(|&&b| b).count()
    }

    /// `|A| = #cells * h^dim`.
    pub fn measure(&self) -> f64 {
        self.count() as f64 * self.grid().cell_volume()
    }

    /// Member cell indices in increasing order.
    pub fn indices(&self) -> Vec<usize> {
        self.member
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn complement(&self) -> SetMask {
        SetMask {
            grid: self.grid,
            member: self.member.iter().map(|b| !b).collect(),
        }
    }

    pub fn union(&self, other: &SetMask) -> Result<SetMask> {
        self.zip(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &SetMask) -> Result<SetMask> {
        self.zip(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &SetMask) -> Result<SetMask> {
        self.zip(other, |a, b| a && !b)
    }

    fn zip(&self, other: &SetMask, f: impl Fn(bool, bool) -> bool) -> Result<SetMask> {
        if !self.same_grid(other) {
            return Err(FracError::GridMismatch);
        }
        Ok(SetMask {
            grid: self.grid,
            member: self.member.iter().zip(&other.member).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn is_subset(&self, other: &SetMask) -> bool {
        self.same_grid(other) && self.member.iter().zip(&other.member).all(|(&a, &b)| !a || b)
    }

    /// Members with at least one axis neighbour outside the mask (including
    /// cells touching the box boundary).
    pub fn boundary_members(&self) -> Vec<usize> {
        let grid = self.grid();
        self.indices()
            .into_iter()
            .filter(|&i| grid.box_faces(i) > 0 || grid.neighbors(i).any(|j| !self.member[j]))
            .collect()
    }

    /// Non-members with at least one member among their axis neighbours.
    pub fn outer_boundary(&self) -> Vec<usize> {
        let grid = self.grid();
        (0..self.len())
            .filter(|&i| !self.member[i] && grid.neighbors(i).any(|j| self.member[j]))
            .collect()
    }

    /// Number of connected components under axis adjacency.
    pub fn components(&self) -> usize {
        let grid = self.grid();
        let mut seen = vec![false; self.len()];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in self.indices() {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(i) = stack.pop() {
                for j in grid.neighbors(i) {
                    if self.member[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        count
    }

    /// Serializes to the ASCII mask format.
    pub fn to_mask_string(&self) -> String {
        let grid = self.grid();
        let mut out = grid.header();
        out.push('\n');
        let row_len = if grid.dim() == 1 { grid.len() } else { grid.cells_per_axis()[1] };
        for row in self.member.chunks(row_len) {
            out.extend(row.iter().map(|&b| if b { '1' } else { '0' }));
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for SetMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_mask_string())
    }
}

impl FromStr for SetMask {
    type Err = FracError;

    fn from_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| FracError::Parse("empty mask file".into()))?;
        let grid = parse_header(header)?;
        let (rows, row_len) = if grid.dim() == 1 {
            (1, grid.len())
        } else {
            (grid.cells_per_axis()[0], grid.cells_per_axis()[1])
        };
        let mut member = Vec::with_capacity(grid.len());
        for r in 0..rows {
            let line = lines
                .next()
                .ok_or_else(|| FracError::Parse(format!("missing row {r}")))?;
            if line.len() != row_len {
                return Err(FracError::Parse(format!(
                    "row {r} has {} cells, expected {row_len}",
                    line.len()
                )));
            }
            for ch in line.chars() {
                member.push(match ch {
                    '0' => false,
                    '1' => true,
                    other => return Err(FracError::Parse(format!("unexpected character {other:?}"))),
                });
            }
        }
        if lines.any(|l| !l.is_empty()) {
            return Err(FracError::Parse("trailing rows after mask body".into()));
        }
        Ok(SetMask {
            grid: GridKey::of(&grid),
            member,
        })
    }
}

fn parse_header(header: &str) -> Result<BoxGrid> {
    let bad = |what: &str| FracError::Parse(format!("bad mask header ({what}): {header:?}"));
    let mut parts = header.split(' ');
    if parts.next() != Some(MASK_MAGIC) {
        return Err(bad("magic"));
    }
    if parts.next() != Some(MASK_VERSION) {
        return Err(bad("version"));
    }
    let mut field = |key: &str| -> Result<&str> {
        parts
            .next()
            .and_then(|p| p.strip_prefix(key))
            .and_then(|p| p.strip_prefix('='))
            .ok_or_else(|| bad(key))
    };
    let dim: usize = field("dim")?.parse().map_err(|_| bad("dim"))?;
    let cells = field("cells")?
        .split('x')
        .map(|c| c.parse::<usize>().map_err(|_| bad("cells")))
        .collect::<Result<Vec<_>>>()?;
    let extent = field("extent")?
        .split(';')
        .map(|iv| {
            let (a, b) = iv.split_once(',').ok_or_else(|| bad("extent"))?;
            Ok((
                a.parse::<f64>().map_err(|_| bad("extent"))?,
                b.parse::<f64>().map_err(|_| bad("extent"))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    if cells.len() != dim {
        return Err(bad("cells"));
    }
    BoxGrid::new(dim, &extent, &cells)
}
