//! Cell-centered staggered-grid operators with homogeneous Neumann boundaries.
//!
//! Scalar fields live at cell centers `((i+1/2)h, (j+1/2)h)`, `i in 0..m`,
//! `j in 0..n`, stored row-major with `j` fastest (`values[i * n + j]`).
//! East-west face quantities are `(m+1) x n` arrays indexed by the face number
//! `f in 0..=m` (face `f` separates cells `f-1` and `f`); north-south faces are
//! `m x (n+1)`.
//!
//! Ghost cells are never stored. Boundary stencils mirror the adjacent
//! interior value, which is the same as filling ghosts with
//! `phi_0 = phi_1`, `phi_{m+1} = phi_m`, so every normal derivative on the
//! boundary faces is exactly zero.

use crate::error::{Error, Result};
use crate::par::*;

/// Uniform rectangular grid with square cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    m: usize,
    n: usize,
    h: f64,
}

impl Grid {
    /// Smallest admissible number of cells per direction.
    pub const MIN_CELLS: usize = 4;

    pub fn new(m: usize, n: usize, h: f64) -> Result<Self> {
        if m < Self::MIN_CELLS {
            return Err(Error::config("m", format!("need at least {} cells, got {m}", Self::MIN_CELLS)));
        }
        if n < Self::MIN_CELLS {
            return Err(Error::config("n", format!("need at least {} cells, got {n}", Self::MIN_CELLS)));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::config("h", format!("spacing must be positive, got {h}")));
        }
        Ok(Self { m, n, h })
    }

    /// `n x n` cells covering the square `(0, length)^2`.
    pub fn square(n: usize, length: f64) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::config("length", format!("must be positive, got {length}")));
        }
        if n == 0 {
            return Err(Error::config("n", "must be positive"));
        }
        Self::new(n, n, length / n as f64)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn lx(&self) -> f64 {
        self.m as f64 * self.h
    }

    pub fn ly(&self) -> f64 {
        self.n as f64 * self.h
    }

    pub fn area(&self) -> f64 {
        self.lx() * self.ly()
    }

    /// Number of cells.
    pub fn len(&self) -> usize {
        self.m * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Physical coordinates of cell `(i, j)`.
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.h, (j as f64 + 0.5) * self.h)
    }

    /// Weight of the discrete integral `h^2`.
    pub fn cell_area(&self) -> f64 {
        self.h * self.h
    }

    pub(crate) fn ensure_same(&self, other: &Grid, what: &str) -> Result<()> {
        if self.m == other.m && self.n == other.n && self.h == other.h {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: {}x{} (h={}) vs {}x{} (h={})",
                self.m, self.n, self.h, other.m, other.n, other.h
            )))
        }
    }
}

/// Cell-centered scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_vec(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} values for a {}x{} grid, got {}",
                grid.len(),
                grid.m(),
                grid.n(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    /// Samples `f(x, y)` at the cell centers.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64 + Sync) -> Self {
        let n = grid.n();
        let mut values = vec![0.0; grid.len()];
        values.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            for (j, v) in row.iter_mut().enumerate() {
                let (x, y) = grid.cell_center(i, j);
                *v = f(x, y);
            }
        });
        Self { grid, values }
    }

    /// Builds a field from cell indices.
    pub fn from_index_fn(grid: Grid, f: impl Fn(usize, usize) -> f64 + Sync) -> Self {
        let n = grid.n();
        let mut values = vec![0.0; grid.len()];
        values.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = f(i, j);
            }
        });
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let n = self.grid.n;
        self.values[i * n + j] = v;
    }

    /// Pointwise map into a new field.
    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Self {
        let mut out = self.clone();
        out.values
            .par_chunks_mut(self.grid.n)
            .for_each(|row| row.iter_mut().for_each(|v| *v = f(*v)));
        out
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64 + Sync) -> Result<Self> {
        self.grid.ensure_same(&other.grid, "zip_map")?;
        let n = self.grid.n;
        let mut out = self.clone();
        out.values
            .par_chunks_mut(n)
            .zip(other.values.par_chunks(n))
            .for_each(|(a, b)| a.iter_mut().zip(b).for_each(|(x, y)| *x = f(*x, *y)));
        Ok(out)
    }

    /// `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.zip_map(other, |x, y| a * x + b * y)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) -> Result<()> {
        self.grid.ensure_same(&other.grid, "axpy")?;
        let n = self.grid.n;
        self.values
            .par_chunks_mut(n)
            .zip(other.values.par_chunks(n))
            .for_each(|(a, b)| a.iter_mut().zip(b).for_each(|(x, y)| *x += alpha * y));
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values
            .par_chunks_mut(self.grid.n)
            .for_each(|row| row.iter_mut().for_each(|v| *v *= alpha));
    }

    /// Plain sum of the cell values (row partial sums are added in order).
    pub fn sum(&self) -> f64 {
        let rows: Vec<f64> = self
            .values
            .par_chunks(self.grid.n)
            .map(|r| r.iter().sum::<f64>())
            .collect();
        rows.iter().sum()
    }

    /// Discrete mass `h^2 * sum`.
    pub fn mass(&self) -> f64 {
        self.grid.cell_area() * self.sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.grid.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm of the raw values (no `h^2` weight).
    pub fn l2_raw(&self) -> f64 {
        let rows: Vec<f64> = self
            .values
            .par_chunks(self.grid.n)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>())
            .collect();
        rows.iter().sum::<f64>().sqrt()
    }
}

/// Pair of staggered face arrays: east-west `(m+1) x n`, north-south `m x (n+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceFieldPair {
    grid: Grid,
    ew: Vec<f64>,
    ns: Vec<f64>,
}

impl FaceFieldPair {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            ew: vec![0.0; (grid.m() + 1) * grid.n()],
            ns: vec![0.0; grid.m() * (grid.n() + 1)],
        }
    }

    pub fn from_parts(grid: Grid, ew: Vec<f64>, ns: Vec<f64>) -> Result<Self> {
        if ew.len() != (grid.m() + 1) * grid.n() || ns.len() != grid.m() * (grid.n() + 1) {
            return Err(Error::GridMismatch(format!(
                "face arrays of length {}/{} do not fit a {}x{} grid",
                ew.len(),
                ns.len(),
                grid.m(),
                grid.n()
            )));
        }
        Ok(Self { grid, ew, ns })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// East-west face `f` (0..=m), row `j`.
    #[inline]
    pub fn ew(&self, f: usize, j: usize) -> f64 {
        self.ew[f * self.grid.n + j]
    }

    /// North-south face in column `i`, face `g` (0..=n).
    #[inline]
    pub fn ns(&self, i: usize, g: usize) -> f64 {
        self.ns[i * (self.grid.n + 1) + g]
    }

    pub fn ew_values(&self) -> &[f64] {
        &self.ew
    }

    pub fn ns_values(&self) -> &[f64] {
        &self.ns
    }

    pub fn ew_values_mut(&mut self) -> &mut [f64] {
        &mut self.ew
    }

    pub fn ns_values_mut(&mut self) -> &mut [f64] {
        &mut self.ns
    }

    /// Pointwise combination of two face fields.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64 + Sync) -> Result<Self> {
        self.grid.ensure_same(&other.grid, "face zip_map")?;
        let ew = self.ew.iter().zip(&other.ew).map(|(a, b)| f(*a, *b)).collect();
        let ns = self.ns.iter().zip(&other.ns).map(|(a, b)| f(*a, *b)).collect();
        Ok(Self {
            grid: self.grid,
            ew,
            ns,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            ew: self.ew.iter().map(|v| f(*v)).collect(),
            ns: self.ns.iter().map(|v| f(*v)).collect(),
        }
    }

    /// Largest magnitude among the boundary-normal entries.
    pub fn boundary_normal_max(&self) -> f64 {
        let (m, n) = (self.grid.m, self.grid.n);
        let mut acc = 0.0_f64;
        for j in 0..n {
            acc = acc.max(self.ew(0, j).abs()).max(self.ew(m, j).abs());
        }
        for i in 0..m {
            acc = acc.max(self.ns(i, 0).abs()).max(self.ns(i, n).abs());
        }
        acc
    }

    pub fn max_abs(&self) -> f64 {
        self.ew
            .iter()
            .chain(&self.ns)
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }
}

/// Mirrored neighbour lookups used by all stencils.
#[inline]
fn row_below(values: &[f64], i: usize, n: usize) -> &[f64] {
    let ii = i.saturating_sub(1);
    &values[ii * n..(ii + 1) * n]
}

#[inline]
fn row_above(values: &[f64], i: usize, m: usize, n: usize) -> &[f64] {
    let ii = if i + 1 < m { i + 1 } else { i };
    &values[ii * n..(ii + 1) * n]
}

/// Face gradients `(D_x phi, D_y phi)`; boundary-normal entries are zero.
pub fn grad_faces(phi: &ScalarField) -> FaceFieldPair {
    let g = *phi.grid();
    let (m, n) = (g.m(), g.n());
    let inv_h = 1.0 / g.h();
    let v = phi.values();
    let mut out = FaceFieldPair::zeros(g);
    out.ew.par_chunks_mut(n).enumerate().for_each(|(f, row)| {
        if f == 0 || f == m {
            return;
        }
        let lo = &v[(f - 1) * n..f * n];
        let hi = &v[f * n..(f + 1) * n];
        for j in 0..n {
            row[j] = (hi[j] - lo[j]) * inv_h;
        }
    });
    out.ns.par_chunks_mut(n + 1).enumerate().for_each(|(i, row)| {
        let c = &v[i * n..(i + 1) * n];
        for gidx in 1..n {
            row[gidx] = (c[gidx] - c[gidx - 1]) * inv_h;
        }
    });
    out
}

/// Conservative divergence `d_x f + d_y g` of a face field.
pub fn div_centers(flux: &FaceFieldPair) -> ScalarField {
    let g = *flux.grid();
    let n = g.n();
    let inv_h = 1.0 / g.h();
    let mut out = ScalarField::zeros(g);
    out.values.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let e_lo = &flux.ew[i * n..(i + 1) * n];
        let e_hi = &flux.ew[(i + 1) * n..(i + 2) * n];
        let ns = &flux.ns[i * (n + 1)..(i + 1) * (n + 1)];
        for j in 0..n {
            row[j] = (e_hi[j] - e_lo[j] + ns[j + 1] - ns[j]) * inv_h;
        }
    });
    out
}

/// Five-point Neumann Laplacian.
pub fn laplacian(phi: &ScalarField) -> ScalarField {
    let g = *phi.grid();
    let (m, n) = (g.m(), g.n());
    let inv_h2 = 1.0 / (g.h() * g.h());
    let v = phi.values();
    let mut out = ScalarField::zeros(g);
    out.values.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let c = &v[i * n..(i + 1) * n];
        let lo = row_below(v, i, n);
        let hi = row_above(v, i, m, n);
        for j in 0..n {
            let cj = c[j];
            let ym = if j > 0 { c[j - 1] } else { cj };
            let yp = if j + 1 < n { c[j + 1] } else { cj };
            row[j] = ((lo[j] - cj) + (hi[j] - cj) + (ym - cj) + (yp - cj)) * inv_h2;
        }
    });
    out
}

/// Two-point arithmetic face means; boundary faces take the adjacent cell value.
pub fn avg_faces(phi: &ScalarField) -> FaceFieldPair {
    face_combine(phi, |a, b| 0.5 * (a + b), |a| a)
}

/// Quadratic face means `(a^2 + ab + b^2) / 3`, so that
/// `D(phi^3) = 3 A^q(phi^2) D(phi)` holds exactly.
pub fn quad_avg_faces(phi: &ScalarField) -> FaceFieldPair {
    face_combine(phi, |a, b| (a * a + a * b + b * b) / 3.0, |a| a * a)
}

fn face_combine(
    phi: &ScalarField,
    interior: impl Fn(f64, f64) -> f64 + Sync,
    boundary: impl Fn(f64) -> f64 + Sync,
) -> FaceFieldPair {
    let g = *phi.grid();
    let (m, n) = (g.m(), g.n());
    let v = phi.values();
    let mut out = FaceFieldPair::zeros(g);
    out.ew.par_chunks_mut(n).enumerate().for_each(|(f, row)| {
        if f == 0 || f == m {
            let c = if f == 0 { &v[0..n] } else { &v[(m - 1) * n..m * n] };
            for j in 0..n {
                row[j] = boundary(c[j]);
            }
        } else {
            let lo = &v[(f - 1) * n..f * n];
            let hi = &v[f * n..(f + 1) * n];
            for j in 0..n {
                row[j] = interior(lo[j], hi[j]);
            }
        }
    });
    out.ns.par_chunks_mut(n + 1).enumerate().for_each(|(i, row)| {
        let c = &v[i * n..(i + 1) * n];
        row[0] = boundary(c[0]);
        row[n] = boundary(c[n - 1]);
        for gidx in 1..n {
            row[gidx] = interior(c[gidx - 1], c[gidx]);
        }
    });
    out
}

/// Cahn-Hilliard mobility `M(s) = 1 - M0 (s^2 - 1)^2`.
#[inline]
pub fn mobility_value(s: f64, m0: f64) -> f64 {
    let q = s * s - 1.0;
    1.0 - m0 * q * q
}

/// Face mobilities `M(A_x phi)`, `M(A_y phi)` together with the number of
/// faces where the mobility is not positive.
pub fn face_mobility(phi: &ScalarField, m0: f64) -> (FaceFieldPair, usize) {
    let avg = avg_faces(phi);
    let mob = avg.map(|s| mobility_value(s, m0));
    let bad = mob.ew.iter().chain(&mob.ns).filter(|v| **v <= 0.0).count();
    (mob, bad)
}

/// `d_x(w_x D_x nu) + d_y(w_y D_y nu)` for a precomputed face weight.
///
/// Boundary faces carry zero flux, so the output always sums to zero.
pub fn weighted_laplacian(weights: &FaceFieldPair, nu: &ScalarField) -> Result<ScalarField> {
    weights.grid().ensure_same(nu.grid(), "weighted_laplacian")?;
    let g = *nu.grid();
    let (m, n) = (g.m(), g.n());
    let inv_h2 = 1.0 / (g.h() * g.h());
    let v = nu.values();
    let mut out = ScalarField::zeros(g);
    out.values.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let c = &v[i * n..(i + 1) * n];
        let w_lo = &weights.ew[i * n..(i + 1) * n];
        let w_hi = &weights.ew[(i + 1) * n..(i + 2) * n];
        let w_ns = &weights.ns[i * (n + 1)..(i + 1) * (n + 1)];
        for j in 0..n {
            let cj = c[j];
            let mut acc = 0.0;
            if i > 0 {
                acc += w_lo[j] * (v[(i - 1) * n + j] - cj);
            }
            if i + 1 < m {
                acc += w_hi[j] * (v[(i + 1) * n + j] - cj);
            }
            if j > 0 {
                acc += w_ns[j] * (c[j - 1] - cj);
            }
            if j + 1 < n {
                acc += w_ns[j + 1] * (c[j + 1] - cj);
            }
            row[j] = acc * inv_h2;
        }
    });
    Ok(out)
}

/// Variable-mobility flux divergence
/// `d_x(M(A_x phi) D_x nu) + d_y(M(A_y phi) D_y nu)`.
pub fn mobility_div(phi_star: &ScalarField, nu: &ScalarField, m0: f64) -> Result<ScalarField> {
    phi_star.grid().ensure_same(nu.grid(), "mobility_div")?;
    let (mob, bad) = face_mobility(phi_star, m0);
    if bad > 0 {
        log::warn!("{bad} faces with non-positive mobility");
    }
    weighted_laplacian(&mob, nu)
}

/// The two pieces of the nonlocal bending derivative:
/// `[phi |grad phi|^2]` with half-weighted face means of the squared
/// gradients, and `[div(phi^2 grad phi)] = d(A(phi^2) D phi)`.
pub fn nonlocal_bending_pair(phi: &ScalarField) -> (ScalarField, ScalarField) {
    let g = *phi.grid();
    let n = g.n();
    let grad = grad_faces(phi);
    let sq = phi.map(|v| v * v);
    let sq_faces = avg_faces(&sq);

    let mut first = ScalarField::zeros(g);
    first.values.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let e_lo = &grad.ew[i * n..(i + 1) * n];
        let e_hi = &grad.ew[(i + 1) * n..(i + 2) * n];
        let ns = &grad.ns[i * (n + 1)..(i + 1) * (n + 1)];
        let c = &phi.values[i * n..(i + 1) * n];
        for j in 0..n {
            let gx = 0.5 * (e_lo[j] * e_lo[j] + e_hi[j] * e_hi[j]);
            let gy = 0.5 * (ns[j] * ns[j] + ns[j + 1] * ns[j + 1]);
            row[j] = c[j] * (gx + gy);
        }
    });

    let flux = sq_faces
        .zip_map(&grad, |w, d| w * d)
        .expect("faces built on one grid");
    (first, div_centers(&flux))
}

/// Discrete inner product `(a, b)_h = h^2 sum a b`.
pub fn inner(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    a.grid().ensure_same(b.grid(), "inner")?;
    Ok(inner_unchecked(a, b))
}

pub(crate) fn inner_unchecked(a: &ScalarField, b: &ScalarField) -> f64 {
    let n = a.grid().n();
    let rows: Vec<f64> = a
        .values
        .par_chunks(n)
        .zip(b.values.par_chunks(n))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    a.grid().cell_area() * rows.iter().sum::<f64>()
}

/// Edge-weighted face inner product `[f, g]_ew + [f, g]_ns`.
///
/// Interior faces carry weight `h^2`, boundary faces `h^2 / 2`.
pub fn face_inner(f: &FaceFieldPair, g: &FaceFieldPair) -> Result<f64> {
    f.grid().ensure_same(g.grid(), "face_inner")?;
    let grid = *f.grid();
    let (m, n) = (grid.m(), grid.n());
    let ew_rows: Vec<f64> = f
        .ew
        .par_chunks(n)
        .zip(g.ew.par_chunks(n))
        .enumerate()
        .map(|(face, (a, b))| {
            let s: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            if face == 0 || face == m {
                0.5 * s
            } else {
                s
            }
        })
        .collect();
    let ns_rows: Vec<f64> = f
        .ns
        .par_chunks(n + 1)
        .zip(g.ns.par_chunks(n + 1))
        .map(|(a, b)| {
            let inner: f64 = a[1..n].iter().zip(&b[1..n]).map(|(x, y)| x * y).sum();
            inner + 0.5 * (a[0] * b[0] + a[n] * b[n])
        })
        .collect();
    Ok(grid.cell_area() * (ew_rows.iter().sum::<f64>() + ns_rows.iter().sum::<f64>()))
}

/// `||grad_h phi||^2`.
pub fn grad_norm_sq(phi: &ScalarField) -> f64 {
    let d = grad_faces(phi);
    face_inner(&d, &d).expect("same grid")
}
