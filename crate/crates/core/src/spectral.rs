//! DCT diagonalization of the Neumann Laplacian and the constant-coefficient
//! direct solvers built on it.
//!
//! Coefficient arrays use a transposed "spectral layout": mode `(i, j)` is
//! stored at `j * m + i`. This saves one transpose per round trip; use
//! [`Coeffs::get`] rather than raw indexing.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustdct::{DctPlanner, TransformType2And3};

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::par::*;

const ROWS_PER_TASK: usize = 16;
const TRANSPOSE_BLOCK: usize = 32;

/// Eigenvalues of the Neumann five-point Laplacian, in spectral layout.
#[derive(Debug, Clone)]
pub struct EigTable {
    grid: Grid,
    lam: Vec<f64>,
}

impl EigTable {
    pub fn new(grid: Grid) -> Self {
        let (m, n, h) = (grid.m(), grid.n(), grid.h());
        let sx: Vec<f64> = (0..m)
            .map(|i| (PI * i as f64 / (2.0 * m as f64)).sin().powi(2))
            .collect();
        let sy: Vec<f64> = (0..n)
            .map(|j| (PI * j as f64 / (2.0 * n as f64)).sin().powi(2))
            .collect();
        let c = -4.0 / (h * h);
        let mut lam = vec![0.0; m * n];
        for (j, row) in lam.chunks_mut(m).enumerate() {
            for (i, v) in row.iter_mut().enumerate() {
                *v = c * (sx[i] + sy[j]);
            }
        }
        Self { grid, lam }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `lambda_{ij}` for `i in 0..m`, `j in 0..n`.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.lam[j * self.grid.m() + i]
    }

    /// Raw table in spectral layout.
    pub fn values(&self) -> &[f64] {
        &self.lam
    }
}

/// Orthonormal 2D DCT-II coefficients of one field.
#[derive(Debug, Clone, PartialEq)]
pub struct Coeffs {
    grid: Grid,
    data: Vec<f64>,
}

impl Coeffs {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.grid.m() + i]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Sum of squared coefficients (equals the plain sum of squares of the
    /// field by Parseval).
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Planned row transforms for one grid.
#[derive(Clone)]
pub struct Dct2d {
    grid: Grid,
    along_y: Arc<dyn TransformType2And3<f64>>,
    along_x: Arc<dyn TransformType2And3<f64>>,
    scratch_len: usize,
}

impl fmt::Debug for Dct2d {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dct2d").field("grid", &self.grid).finish()
    }
}

impl Dct2d {
    pub fn new(grid: Grid) -> Self {
        let mut planner = DctPlanner::new();
        let along_y = planner.plan_dct2(grid.n());
        let along_x = planner.plan_dct2(grid.m());
        let scratch_len = along_y.get_scratch_len().max(along_x.get_scratch_len());
        Self {
            grid,
            along_y,
            along_x,
            scratch_len,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn forward(&self, field: &ScalarField) -> Result<Coeffs> {
        Ok(self.forward_batch(&[field])?.pop().expect("one field in, one out"))
    }

    pub fn inverse(&self, coeffs: &Coeffs) -> Result<ScalarField> {
        Ok(self
            .inverse_batch(std::slice::from_ref(coeffs))?
            .pop()
            .expect("one field in, one out"))
    }

    /// Forward transform of every field in one pass over all rows.
    pub fn forward_batch(&self, fields: &[&ScalarField]) -> Result<Vec<Coeffs>> {
        for f in fields {
            self.grid.ensure_same(f.grid(), "dct forward batch")?;
        }
        let (m, n) = (self.grid.m(), self.grid.n());
        let mut buf: Vec<f64> = Vec::with_capacity(fields.len() * m * n);
        for f in fields {
            buf.extend_from_slice(f.values());
        }
        self.rows_dct2(&mut buf, n, &*self.along_y);
        let mut out = vec![0.0; buf.len()];
        transpose_batch(&buf, &mut out, m, n);
        self.rows_dct2(&mut out, m, &*self.along_x);
        Ok(out
            .chunks_exact(m * n)
            .map(|c| Coeffs {
                grid: self.grid,
                data: c.to_vec(),
            })
            .collect())
    }

    /// Inverse transform of every coefficient array in one pass.
    pub fn inverse_batch(&self, coeffs: &[Coeffs]) -> Result<Vec<ScalarField>> {
        for c in coeffs {
            self.grid.ensure_same(c.grid(), "dct inverse batch")?;
        }
        let (m, n) = (self.grid.m(), self.grid.n());
        let mut buf: Vec<f64> = Vec::with_capacity(coeffs.len() * m * n);
        for c in coeffs {
            buf.extend_from_slice(&c.data);
        }
        self.rows_dct3(&mut buf, m, &*self.along_x);
        let mut out = vec![0.0; buf.len()];
        transpose_batch(&buf, &mut out, n, m);
        self.rows_dct3(&mut out, n, &*self.along_y);
        out.chunks_exact(m * n)
            .map(|c| ScalarField::from_vec(self.grid, c.to_vec()))
            .collect()
    }

    fn rows_dct2(&self, buf: &mut [f64], len: usize, plan: &dyn TransformType2And3<f64>) {
        let s0 = (1.0 / len as f64).sqrt();
        let sk = (2.0 / len as f64).sqrt();
        let scratch_len = self.scratch_len;
        buf.par_chunks_mut(len * ROWS_PER_TASK).for_each(|group| {
            let mut scratch = vec![0.0; scratch_len];
            for row in group.chunks_exact_mut(len) {
                plan.process_dct2_with_scratch(row, &mut scratch);
                row[0] *= s0;
                row[1..].iter_mut().for_each(|v| *v *= sk);
            }
        });
    }

    fn rows_dct3(&self, buf: &mut [f64], len: usize, plan: &dyn TransformType2And3<f64>) {
        let s0 = 2.0 / (len as f64).sqrt();
        let sk = (2.0 / len as f64).sqrt();
        let scratch_len = self.scratch_len;
        buf.par_chunks_mut(len * ROWS_PER_TASK).for_each(|group| {
            let mut scratch = vec![0.0; scratch_len];
            for row in group.chunks_exact_mut(len) {
                row[0] *= s0;
                row[1..].iter_mut().for_each(|v| *v *= sk);
                plan.process_dct3_with_scratch(row, &mut scratch);
            }
        });
    }
}

/// Transposes each `rows x cols` block of `src` into a `cols x rows` block of `dst`.
fn transpose_batch(src: &[f64], dst: &mut [f64], rows: usize, cols: usize) {
    let size = rows * cols;
    dst.par_chunks_mut(rows * TRANSPOSE_BLOCK)
        .enumerate()
        .for_each(|(task, out)| {
            // A task may straddle two batch members when rows*TRANSPOSE_BLOCK
            // does not divide size; handle it row by row.
            let first_row = task * TRANSPOSE_BLOCK;
            let n_rows = out.len() / rows;
            for ib in (0..rows).step_by(TRANSPOSE_BLOCK) {
                let ie = (ib + TRANSPOSE_BLOCK).min(rows);
                for r in 0..n_rows {
                    let global = first_row + r;
                    let member = global / cols;
                    let c = global % cols;
                    let base = member * size;
                    let o = &mut out[r * rows..(r + 1) * rows];
                    for i in ib..ie {
                        o[i] = src[base + i * cols + c];
                    }
                }
            }
        });
}

/// Coefficients of the fourth-order Allen-Cahn operator
/// `chi = c1 - c2 Lap + c3 Lap^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiCoeffs {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl ChiCoeffs {
    #[inline]
    pub fn symbol(&self, lam: f64) -> f64 {
        self.c1 - self.c2 * lam + self.c3 * lam * lam
    }
}

/// Transform tables and plans shared by every direct solve on one grid.
#[derive(Debug, Clone)]
pub struct SpectralSolver {
    dct: Dct2d,
    eig: EigTable,
}

impl SpectralSolver {
    pub fn new(grid: Grid) -> Self {
        Self {
            dct: Dct2d::new(grid),
            eig: EigTable::new(grid),
        }
    }

    pub fn grid(&self) -> &Grid {
        self.dct.grid()
    }

    pub fn eig(&self) -> &EigTable {
        &self.eig
    }

    pub fn dct(&self) -> &Dct2d {
        &self.dct
    }

    /// Solves `sigma(Lap) u = rhs` for every right-hand side, where `sigma`
    /// is evaluated on the Laplacian eigenvalues.
    pub fn solve_symbol(
        &self,
        rhs: &[&ScalarField],
        sigma: impl Fn(f64) -> f64 + Sync,
    ) -> Result<Vec<ScalarField>> {
        let mut coeffs = self.dct.forward_batch(rhs)?;
        let lam = self.eig.values();
        let mn = lam.len();
        for c in &mut coeffs {
            c.data
                .par_chunks_mut(self.grid().m())
                .zip(lam.par_chunks(self.grid().m()))
                .for_each(|(row, l)| {
                    for (v, &lv) in row.iter_mut().zip(l) {
                        *v /= sigma(lv);
                    }
                });
            debug_assert_eq!(c.data.len(), mn);
        }
        self.dct.inverse_batch(&coeffs)
    }

    pub fn solve_chi(&self, rhs: &[&ScalarField], coeffs: ChiCoeffs) -> Result<Vec<ScalarField>> {
        self.solve_symbol(rhs, |l| coeffs.symbol(l))
    }

    /// Solves `(alpha/dt - lambda_stab Lap) u = rhs`; `mass_factor` is
    /// `alpha` (3/2 for BDF2, 1 for BDF1).
    pub fn solve_zeta_cc(
        &self,
        rhs: &[&ScalarField],
        mass_factor: f64,
        dt: f64,
        lambda_stab: f64,
    ) -> Result<Vec<ScalarField>> {
        let a = mass_factor / dt;
        self.solve_symbol(rhs, |l| a - lambda_stab * l)
    }

    /// Implicit step of the smoothing flow: `(1/dt + M eps Lap^2) u = rhs`.
    pub fn solve_smoothing_ch(
        &self,
        rhs: &ScalarField,
        mobility: f64,
        eps: f64,
        dt: f64,
    ) -> Result<ScalarField> {
        let a = 1.0 / dt;
        let b = mobility * eps;
        Ok(self
            .solve_symbol(&[rhs], |l| a + b * l * l)?
            .pop()
            .expect("one rhs"))
    }

    /// Applies `(mass_factor/dt - lambda_stab * mbar * Lap)^{-1}`.
    pub fn dct_poisson_precondition(
        &self,
        residual: &ScalarField,
        mass_factor: f64,
        dt: f64,
        lambda_stab: f64,
        mbar: f64,
    ) -> Result<ScalarField> {
        if !(mbar > 0.0) {
            return Err(Error::config(
                "mbar",
                format!("mean mobility must be positive, got {mbar}"),
            ));
        }
        let a = mass_factor / dt;
        let b = lambda_stab * mbar;
        Ok(self
            .solve_symbol(&[residual], |l| a - b * l)?
            .pop()
            .expect("one rhs"))
    }
}
