//! The normalization constant `c(n,s)` and cell–cell integrals of the
//! singular kernel `|x - y|^{-(n+2s)}`.
//!
//! Pair weights are translation invariant: on a grid of width `h` the weight
//! between cells `i` and `j` is `h^{n-2s} * w(j - i)` where `w` is the weight
//! for unit cells. Within [`NEAR_FIELD_RADIUS`] cells the weight is chosen so
//! that `(u_i - u_j)^2 w` equals the exact pair energy of a linear function,
//! and the self-cell energy of a linear function is shared among the `2n`
//! axis neighbours. Farther pairs use the plain cell-integrated kernel. The
//! resulting weights are finite for every `s < 1` and the discrete energy
//! tends to the classical Dirichlet energy as `s -> 1`.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use statrs::function::gamma::gamma;

use crate::error::{FracError, Result};
use crate::grid::BoxGrid;
use crate::quad::{tanh_sinh, GaussLegendre};

/// Offsets with `|m|_inf` up to this radius use the linear-exact weight.
pub const NEAR_FIELD_RADIUS: u64 = 16;

/// Measure of the unit sphere `S^{n-1}`: 2 for n = 1, 2π for n = 2.
pub fn sphere_measure(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => 2.0 * PI,
        _ => f64::NAN,
    }
}

/// Limit of `c(n,s) / (1 - s)` as `s -> 1`, namely `4n / |S^{n-1}|`.
pub fn cns_limit(n: usize) -> f64 {
    4.0 * n as f64 / sphere_measure(n)
}

/// Fractional order together with the dimension and `c(n,s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FracParam {
    dim: usize,
    s: f64,
    cns: Option<f64>,
}

impl FracParam {
    /// `s` must lie in `(0, 1]`; `s = 1` selects the classical Laplacian.
    pub fn new(dim: usize, s: f64) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(FracError::UnsupportedDimension(dim));
        }
        if !(s > 0.0 && s <= 1.0) {
            return Err(FracError::OrderOutOfRange(s));
        }
        let cns = if s < 1.0 { Some(cns(dim, s)?) } else { None };
        Ok(FracParam { dim, s, cns })
    }

    pub fn classical(dim: usize) -> Result<Self> {
        Self::new(dim, 1.0)
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `c(n,s)`; `None` in the classical case.
    pub fn cns(&self) -> Option<f64> {
        self.cns
    }

    pub fn is_classical(&self) -> bool {
        self.cns.is_none()
    }
}

/// `c(n,s)` from its closed form
/// `s 4^s Γ(n/2 + s) / (π^{n/2} Γ(1 - s))`.
pub fn cns(n: usize, s: f64) -> Result<f64> {
    if !(1..=2).contains(&n) {
        return Err(FracError::UnsupportedDimension(n));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(FracError::OrderOutOfRange(s));
    }
    let nh = n as f64 / 2.0;
    Ok(s * 4f64.powf(s) * gamma(nh + s) / (PI.powf(nh) * gamma(1.0 - s)))
}

/// `c(n,s)` as the reciprocal of a numerical quadrature of
/// `∫_{R^n} (1 - cos ζ_1) / |ζ|^{n+2s} dζ`.
///
/// The `ζ_2` direction (for n = 2) is integrated out numerically first; the
/// remaining radial integral is split at 1, with the oscillatory tail summed
/// panel by panel and closed by its asymptotic expansion.
pub fn cns_quadrature(n: usize, s: f64) -> Result<f64> {
    if !(1..=2).contains(&n) {
        return Err(FracError::UnsupportedDimension(n));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(FracError::OrderOutOfRange(s));
    }
    // ∫_R (1 - cos t) |t|^{-(1+2s)} dt
    let radial = 2.0 * one_minus_cos_moment(1.0 + 2.0 * s);
    let integral = if n == 1 {
        radial
    } else {
        // ∫_R (1 + τ²)^{-1-s} dτ = ∫_{-π/2}^{π/2} cos^{2s} φ dφ
        let transverse = tanh_sinh(-PI / 2.0, PI / 2.0, 1e-15, |_, da, db| {
            da.min(db).sin().powf(2.0 * s)
        });
        radial * transverse
    };
    Ok(1.0 / integral)
}

/// `∫_0^∞ (1 - cos t) t^{-a} dt` for `1 < a < 3`.
fn one_minus_cos_moment(a: f64) -> f64 {
    let head = tanh_sinh(0.0, 1.0, 1e-15, |t, _, _| {
        let half = (0.5 * t).sin();
        2.0 * half * half * t.powf(-a)
    });
    // ∫_1^∞ t^{-a} dt - ∫_1^∞ cos(t) t^{-a} dt
    let algebraic = 1.0 / (a - 1.0);
    let gl = GaussLegendre::new(24);
    let panels = 300;
    let mut oscillatory = 0.0;
    for k in 0..panels {
        let lo = 1.0 + k as f64 * PI;
        oscillatory += gl.integrate(lo, lo + PI, |t| t.cos() * t.powf(-a));
    }
    let r = 1.0 + panels as f64 * PI;
    oscillatory += cos_tail_asymptotic(a, r);
    head + algebraic - oscillatory
}

/// `∫_R^∞ cos(t) t^{-a} dt` via `Re[i e^{iR} R^{-a} Σ_k (-i)^k (a)_k R^{-k}]`.
fn cos_tail_asymptotic(a: f64, r: f64) -> f64 {
    let (mut re, mut im) = (1.0, 0.0); // running term (-i)^k (a)_k R^{-k}
    let (mut sum_re, mut sum_im) = (0.0, 0.0);
    for k in 0..12 {
        sum_re += re;
        sum_im += im;
        let factor = (a + k as f64) / r;
        // multiply by -i * factor
        let (nre, nim) = (im * factor, -re * factor);
        re = nre;
        im = nim;
    }
    let scale = r.powf(-a);
    // i e^{iR} (sum) = i (cos R + i sin R)(sum_re + i sum_im)
    let (c, s) = (r.cos(), r.sin());
    let prod_im = c * sum_im + s * sum_re;
    -prod_im * scale
}

/// `∬_{C_0 × C_m} |x - y|^p dx dy` for unit cells `C_0 = [0,1]^n` and
/// `C_m = m + C_0`, with `m` given by absolute integer offsets.
///
/// Requires `p > -2` when the cells touch (and `p > -1` for `m = 0` in 1D).
pub fn unit_cell_integral(dim: usize, p: f64, m: [u64; 2]) -> f64 {
    match dim {
        1 => interval_pair_integral(p, m[0]),
        _ => square_pair_integral(p, m),
    }
}

/// `∫_{-1}^{1} (1 - |t|) (m + t)^p dt`, closed form.
fn interval_pair_integral(p: f64, m: u64) -> f64 {
    match m {
        0 => 2.0 / ((p + 1.0) * (p + 2.0)),
        1 => {
            // G(2) - 2 G(1) + G(0) with G(z) = z^{p+2} / ((p+1)(p+2)); the
            // p = -1 case is the logarithmic branch G(z) = z ln z.
            let q = p + 1.0;
            let ratio = if q.abs() < 1e-300 {
                std::f64::consts::LN_2
            } else {
                (q * std::f64::consts::LN_2).exp_m1() / q
            };
            2.0 * ratio / (p + 2.0)
        }
        _ => {
            // Expand (m + t)^p in t/m; the second difference of the
            // antiderivative loses digits for large m.
            let mf = m as f64;
            let inv2 = 1.0 / (mf * mf);
            let mut binom = 1.0; // C(p, 2k)
            let mut power = 1.0; // m^{-2k}
            let mut sum = 0.0;
            for k in 0..200 {
                let kf = k as f64;
                let term = binom * power * 2.0 / ((2.0 * kf + 1.0) * (2.0 * kf + 2.0));
                sum += term;
                if term.abs() < 1e-18 * sum.abs() {
                    break;
                }
                binom *= (p - 2.0 * kf) * (p - 2.0 * kf - 1.0) / ((2.0 * kf + 1.0) * (2.0 * kf + 2.0));
                power *= inv2;
            }
            mf.powf(p) * sum
        }
    }
}

/// Sum over the four quadrants of `[-1,1]^2` of
/// `∫ (1-|t_1|)(1-|t_2|) |m + t|^p dt`.
fn square_pair_integral(p: f64, m: [u64; 2]) -> f64 {
    let m = [m[0] as f64, m[1] as f64];
    let mut total = 0.0;
    for s0 in [-1.0, 1.0] {
        for s1 in [-1.0, 1.0] {
            total += quadrant_integral(p, m, [s0, s1]);
        }
    }
    total
}

/// `∫_{[0,1]^2} (1-u_1)(1-u_2) |(m_1 + σ_1 u_1, m_2 + σ_2 u_2)|^p du`.
fn quadrant_integral(p: f64, m: [f64; 2], sigma: [f64; 2]) -> f64 {
    let singular = [-sigma[0] * m[0], -sigma[1] * m[1]];
    let is_corner = singular.iter().all(|&c| c == 0.0 || c == 1.0);
    if is_corner {
        return corner_polar_integral(p, singular);
    }
    let dist = {
        let dx = (singular[0] - singular[0].clamp(0.0, 1.0)).abs();
        let dy = (singular[1] - singular[1].clamp(0.0, 1.0)).abs();
        (dx * dx + dy * dy).sqrt()
    };
    debug_assert!(dist >= 1.0 - 1e-12, "singular point inside the quadrant");
    let (order, split) = if dist >= 4.0 {
        (4, 1)
    } else if dist >= 2.0 {
        (8, 1)
    } else {
        (12, 2)
    };
    let gl = GaussLegendre::new(order);
    let f = |u0: f64, u1: f64| {
        let a = m[0] + sigma[0] * u0;
        let b = m[1] + sigma[1] * u1;
        (1.0 - u0) * (1.0 - u1) * (a * a + b * b).powf(0.5 * p)
    };
    let step = 1.0 / split as f64;
    let mut sum = 0.0;
    for i in 0..split {
        for j in 0..split {
            let (a0, a1) = (i as f64 * step, j as f64 * step);
            for (x, wx) in gl.mapped(a0, a0 + step) {
                for (y, wy) in gl.mapped(a1, a1 + step) {
                    sum += wx * wy * f(x, y);
                }
            }
        }
    }
    sum
}

/// Quadrant integral whose singular point sits at a corner of `[0,1]^2`.
///
/// In polar coordinates about the corner the bilinear weight makes the radial
/// integral elementary; only the angle is integrated numerically.
fn corner_polar_integral(p: f64, corner: [f64; 2]) -> f64 {
    let alpha = [1.0 - corner[0], 1.0 - corner[1]];
    let beta = [
        if corner[0] == 0.0 { -1.0 } else { 1.0 },
        if corner[1] == 0.0 { -1.0 } else { 1.0 },
    ];
    let gl = GaussLegendre::new(24);
    let integrand = |theta: f64| {
        let (sn, cs) = theta.sin_cos();
        let r = 1.0 / cs.max(sn);
        let r2 = r.powf(p + 2.0);
        alpha[0] * alpha[1] * r2 / (p + 2.0)
            + (alpha[0] * beta[1] * sn + beta[0] * alpha[1] * cs) * r2 * r / (p + 3.0)
            + beta[0] * beta[1] * cs * sn * r2 * r * r / (p + 4.0)
    };
    gl.integrate(0.0, PI / 4.0, integrand) + gl.integrate(PI / 4.0, PI / 2.0, integrand)
}

/// Unit-cell pair weight `w(m)` for absolute offset `m != 0`.
pub fn unit_pair_weight(dim: usize, s: f64, m: [u64; 2]) -> f64 {
    let reach = m[0].max(m[1]);
    assert!(reach > 0, "pair weight needs distinct cells");
    let n = dim as f64;
    if reach > NEAR_FIELD_RADIUS {
        return unit_cell_integral(dim, -n - 2.0 * s, m);
    }
    let p = 2.0 - n - 2.0 * s;
    let dist2 = (m[0] * m[0] + m[1] * m[1]) as f64;
    let mut w = unit_cell_integral(dim, p, m) / dist2;
    if dist2 == 1.0 {
        w += unit_cell_integral(dim, p, [0, 0]) / (2.0 * n);
    }
    w
}

/// `Σ_{m != 0} w(m)` over the whole lattice `Z^n`.
pub fn lattice_sum(dim: usize, s: f64) -> f64 {
    let r = NEAR_FIELD_RADIUS;
    let mut near = 0.0;
    match dim {
        1 => {
            for a in 1..=r {
                near += 2.0 * unit_pair_weight(1, s, [a, 0]);
            }
        }
        _ => {
            for a in 0..=r {
                for b in 0..=r {
                    if a == 0 && b == 0 {
                        continue;
                    }
                    let mult = if a > 0 { 2.0 } else { 1.0 } * if b > 0 { 2.0 } else { 1.0 };
                    near += mult * unit_pair_weight(2, s, [a, b]);
                }
            }
        }
    }
    near + far_lattice_sum(dim, s, r)
}

/// Far-field part `Σ_{|m|_inf > r} ∬_{C_0 × C_m} |x-y|^{-n-2s}`, i.e. the
/// kernel integrated over `C_0` against the exterior of the box of half-width
/// `r + 1/2` about `C_0`.
fn far_lattice_sum(dim: usize, s: f64, r: u64) -> f64 {
    let rf = r as f64;
    match dim {
        1 => {
            // (1/s) ∫_r^{r+1} z^{-2s} dz
            let q = 1.0 - 2.0 * s;
            let l = (1.0 / rf).ln_1p();
            let integral = if q.abs() < 1e-300 {
                l
            } else {
                rf.powf(q) * (q * l).exp_m1() / q
            };
            integral / s
        }
        _ => {
            let half = rf + 0.5;
            let gl = GaussLegendre::new(8);
            let mut sum = 0.0;
            for (x, wx) in gl.mapped(-0.5, 0.5) {
                for (y, wy) in gl.mapped(-0.5, 0.5) {
                    sum += wx * wy * point_exterior_tail_box(s, [x, y], [-half, -half], [half, half]);
                }
            }
            sum
        }
    }
}

/// `∫_{R^2 \ R} |x - y|^{-2-2s} dy` for `x` inside the rectangle `R`.
pub fn point_exterior_tail_box(s: f64, x: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> f64 {
    // ∫_0^{2π} ρ(θ)^{-2s} dθ / (2s), split by the side each ray exits through
    let sides = [
        (hi[0] - x[0], lo[1] - x[1], hi[1] - x[1]),
        (x[0] - lo[0], lo[1] - x[1], hi[1] - x[1]),
        (hi[1] - x[1], lo[0] - x[0], hi[0] - x[0]),
        (x[1] - lo[1], lo[0] - x[0], hi[0] - x[0]),
    ];
    let mut total = 0.0;
    for (d, t0, t1) in sides {
        let (p0, p1) = ((t0 / d).atan(), (t1 / d).atan());
        let angular = tanh_sinh(p0, p1, 1e-14, |phi, _, _| phi.cos().powf(2.0 * s));
        total += d.powf(-2.0 * s) * angular;
    }
    total / (2.0 * s)
}

/// `∫_{R^n \ Q} |x - y|^{-(n+2s)} dy` for a point `x` in the box of `grid`.
pub fn point_exterior_tail(grid: &BoxGrid, s: f64, x: &[f64]) -> f64 {
    let ext = grid.extent();
    if grid.dim() == 1 {
        let (a, b) = ext[0];
        ((x[0] - a).powf(-2.0 * s) + (b - x[0]).powf(-2.0 * s)) / (2.0 * s)
    } else {
        point_exterior_tail_box(s, [x[0], x[1]], [ext[0].0, ext[1].0], [ext[0].1, ext[1].1])
    }
}

/// Translation-invariant pair weights and exterior tails for a grid.
#[derive(Debug, Clone)]
pub struct KernelTable {
    param: FracParam,
    grid: BoxGrid,
    reach: [usize; 2],
    unit_weights: Vec<f64>,
    unit_lattice_sum: f64,
    tails: Vec<f64>,
    scale: f64,
}

impl KernelTable {
    pub fn new(grid: &BoxGrid, param: &FracParam) -> Result<Self> {
        if param.dim() != grid.dim() {
            return Err(FracError::InvalidGrid(format!(
                "parameter dimension {} does not match grid dimension {}",
                param.dim(),
                grid.dim()
            )));
        }
        if param.is_classical() {
            return Err(FracError::OrderOutOfRange(param.s()));
        }
        let dim = grid.dim();
        let s = param.s();
        let cells = grid.cells_per_axis();
        let reach = [cells[0] - 1, if dim == 2 { cells[1] - 1 } else { 0 }];
        let cols = reach[1] + 1;
        let unit_weights: Vec<f64> = (0..(reach[0] + 1) * cols)
            .into_par_iter()
            .map(|k| {
                let m = [(k / cols) as u64, (k % cols) as u64];
                if m == [0, 0] {
                    0.0
                } else {
                    unit_pair_weight(dim, s, m)
                }
            })
            .collect();
        let unit_lattice_sum = lattice_sum(dim, s);
        let mut table = KernelTable {
            param: *param,
            grid: *grid,
            reach,
            unit_weights,
            unit_lattice_sum,
            tails: Vec::new(),
            scale: grid.h().powf(dim as f64 - 2.0 * s),
        };
        table.tails = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let inside: f64 = (0..table.grid.len())
                    .filter(|&j| j != i)
                    .map(|j| table.unit_weight(i, j))
                    .sum();
                table.scale * (table.unit_lattice_sum - inside)
            })
            .collect();
        Ok(table)
    }

    pub fn param(&self) -> &FracParam {
        &self.param
    }

    pub fn grid(&self) -> &BoxGrid {
        &self.grid
    }

    fn unit_weight(&self, i: usize, j: usize) -> f64 {
        let off = self.grid.offset(i, j);
        let a = off[0].unsigned_abs() as usize;
        let b = off[1].unsigned_abs() as usize;
        self.unit_weights[a * (self.reach[1] + 1) + b]
    }

    /// `W[i][j]`, the discrete kernel weight between two distinct cells.
    pub fn pair_weight(&self, i: usize, j: usize) -> Result<f64> {
        if i == j {
            return Err(FracError::DiagonalPair(i, j));
        }
        Ok(self.weight(i, j))
    }

    #[inline]
    pub(crate) fn weight(&self, i: usize, j: usize) -> f64 {
        self.scale * self.unit_weight(i, j)
    }

    /// `T[i]`, the interaction of cell `i` with everything outside the box.
    pub fn exterior_tail(&self, i: usize) -> f64 {
        self.tails[i]
    }

    pub fn tails(&self) -> &[f64] {
        &self.tails
    }

    /// `Σ_{j != i} W[i][j] + T[i]`, identical for every cell.
    pub fn row_total(&self) -> f64 {
        self.scale * self.unit_lattice_sum
    }

    /// Discrete `[u]_s^2` of a grid function extended by zero outside the box.
    pub fn seminorm_sq(&self, u: &[f64]) -> f64 {
        assert_eq!(u.len(), self.grid.len());
        let n = u.len();
        let pairs: f64 = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut acc = 0.0;
                for j in (i + 1)..n {
                    let d = u[i] - u[j];
                    acc += d * d * self.weight(i, j);
                }
                acc
            })
            .collect::<Vec<_>>()
            .iter()
            .sum();
        let tails: f64 = u.iter().zip(&self.tails).map(|(v, t)| v * v * t).sum();
        2.0 * (pairs + tails)
    }

    /// Writes the table as a text header followed by little-endian `f64`s.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let payload = self.payload();
        let digest = hex_digest(&payload);
        let mut bytes = format!("{} sha256={digest}\n", self.cache_key()).into_bytes();
        bytes.extend_from_slice(&payload);
        std::fs::write(path, bytes)?;
        Ok(())
    }

    /// Loads a cached table if it matches `(grid, param)` and its hash checks
    /// out; returns `Ok(None)` for a missing or stale cache.
    pub fn read_cache(path: &Path, grid: &BoxGrid, param: &FracParam) -> Result<Option<Self>> {
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let Some(nl) = bytes.iter().position(|&b| b == b'\n') else {
            return Ok(None);
        };
        let header = String::from_utf8_lossy(&bytes[..nl]).to_string();
        let payload = &bytes[nl + 1..];
        let Some((key, digest)) = header.rsplit_once(" sha256=") else {
            return Ok(None);
        };
        let cells = grid.cells_per_axis();
        let reach = [cells[0] - 1, if grid.dim() == 2 { cells[1] - 1 } else { 0 }];
        let n_weights = (reach[0] + 1) * (reach[1] + 1);
        let expected_len = 8 * (n_weights + 1 + grid.len());
        if key != cache_key(grid, param) || digest != hex_digest(payload) || payload.len() != expected_len {
            return Ok(None);
        }
        let floats: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Some(KernelTable {
            param: *param,
            grid: *grid,
            reach,
            unit_weights: floats[..n_weights].to_vec(),
            unit_lattice_sum: floats[n_weights],
            tails: floats[n_weights + 1..].to_vec(),
            scale: grid.h().powf(grid.dim() as f64 - 2.0 * param.s()),
        }))
    }

    fn cache_key(&self) -> String {
        cache_key(&self.grid, &self.param)
    }

    fn payload(&self) -> Vec<u8> {
        self.unit_weights
            .iter()
            .chain(std::iter::once(&self.unit_lattice_sum))
            .chain(&self.tails)
            .flat_map(|v| v.to_le_bytes())
            .collect()
    }
}

fn cache_key(grid: &BoxGrid, param: &FracParam) -> String {
    let cells = grid.cells_per_axis().iter().map(|c| c.to_string()).collect::<Vec<_>>().join("x");
    let extent = grid
        .extent()
        .iter()
        .map(|(a, b)| format!("{a},{b}"))
        .collect::<Vec<_>>()
        .join(";");
    format!(
        "fracshape-kernel v1 dim={} cells={cells} extent={extent} s={} near={NEAR_FIELD_RADIUS}",
        grid.dim(),
        param.s()
    )
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
