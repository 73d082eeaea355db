//! Preconditioned conjugate gradients on cell fields.

use crate::error::{Error, Result};
use crate::grid::{inner_unchecked, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcgSettings {
    /// Relative residual target `||b - Ax|| / ||b||`.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PcgSettings {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PcgOutcome {
    pub solution: ScalarField,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solves `A x = b` for symmetric positive definite `A` (in the cell inner
/// product) with preconditioner `M^{-1}`, starting from zero.
pub fn pcg_solve(
    apply_op: impl Fn(&ScalarField) -> Result<ScalarField>,
    apply_precond: impl Fn(&ScalarField) -> Result<ScalarField>,
    rhs: &ScalarField,
    settings: PcgSettings,
) -> Result<PcgOutcome> {
    let grid = *rhs.grid();
    let b_norm = inner_unchecked(rhs, rhs).sqrt();
    let mut x = ScalarField::zeros(grid);
    if b_norm == 0.0 {
        return Ok(PcgOutcome {
            solution: x,
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = rhs.clone();
    let mut z = apply_precond(&r)?;
    let mut p = z.clone();
    let mut rz = inner_unchecked(&r, &z);
    let mut rel = 1.0;
    for it in 1..=settings.max_iters {
        let ap = apply_op(&p)?;
        let pap = inner_unchecked(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::PcgDiverged {
                iterations: it,
                residual: rel,
            });
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p)?;
        r.axpy(-alpha, &ap)?;
        rel = inner_unchecked(&r, &r).sqrt() / b_norm;
        if !rel.is_finite() {
            return Err(Error::PcgDiverged {
                iterations: it,
                residual: rel,
            });
        }
        if rel <= settings.tol {
            return Ok(PcgOutcome {
                solution: x,
                iterations: it,
                relative_residual: rel,
            });
        }
        z = apply_precond(&r)?;
        let rz_new = inner_unchecked(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p = z.lincomb(1.0, &p, beta)?;
    }
    Err(Error::PcgDiverged {
        iterations: settings.max_iters,
        residual: rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{face_mobility, weighted_laplacian, Grid};
    use crate::spectral::SpectralSolver;

    #[test]
    fn recovers_known_field() {
        let g = Grid::square(32, 1.0).unwrap();
        let phi = ScalarField::from_fn(g, |x, y| (6.0 * x).sin() * (4.0 * y).cos());
        let (mob, _) = face_mobility(&phi, 0.5);
        let (a, lam) = (1.5e3, 1.0);
        let op = |u: &ScalarField| -> Result<ScalarField> {
            let d = weighted_laplacian(&mob, u)?;
            u.lincomb(a, &d, -lam)
        };
        let exact = ScalarField::from_fn(g, |x, y| x * x - y + 0.3);
        let rhs = op(&exact).unwrap();
        let s = SpectralSolver::new(g);
        let mbar = crate::energy::mobility(&phi, 0.5).mean();
        let out = pcg_solve(
            op,
            |r| s.dct_poisson_precondition(r, 1.5, 1.5 / a, lam, mbar),
            &rhs,
            PcgSettings::default(),
        )
        .unwrap();
        assert!(out.iterations <= 40, "{} iterations", out.iterations);
        let err = out.solution.lincomb(1.0, &exact, -1.0).unwrap().max_abs();
        assert!(err < 1e-8);
    }

    #[test]
    fn exact_preconditioner_converges_in_one_step() {
        let g = Grid::square(16, 1.0).unwrap();
        let s = SpectralSolver::new(g);
        let (mob, _) = face_mobility(&ScalarField::zeros(g), 0.5);
        let dt = 1e-4;
        let lam = 10.0;
        let op = |u: &ScalarField| -> Result<ScalarField> {
            let d = weighted_laplacian(&mob, u)?;
            u.lincomb(1.5 / dt, &d, -lam)
        };
        let rhs = ScalarField::from_fn(g, |x, y| (x - 0.3).powi(3) + y);
        let out = pcg_solve(
            op,
            |r| s.dct_poisson_precondition(r, 1.5, dt, lam, 0.5),
            &rhs,
            PcgSettings::default(),
        )
        .unwrap();
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn zero_rhs_and_failure() {
        let g = Grid::square(8, 1.0).unwrap();
        let zero = ScalarField::zeros(g);
        let out = pcg_solve(|u| Ok(u.clone()), |u| Ok(u.clone()), &zero, PcgSettings::default()).unwrap();
        assert_eq!(out.iterations, 0);
        let rhs = ScalarField::constant(g, 1.0);
        let neg = pcg_solve(
            |u| Ok(u.map(|v| -v)),
            |u| Ok(u.clone()),
            &rhs,
            PcgSettings::default(),
        );
        assert!(matches!(neg, Err(Error::PcgDiverged { .. })));
        let capped = pcg_solve(
            |u| Ok(ScalarField::from_index_fn(*u.grid(), |i, j| (1.0 + (i * 8 + j) as f64) * u.get(i, j))),
            |u| Ok(u.clone()),
            &ScalarField::from_fn(g, |x, y| x + y * y),
            PcgSettings { tol: 1e-14, max_iters: 3 },
        );
        assert!(matches!(capped, Err(Error::PcgDiverged { iterations: 3, .. })));
    }
}
