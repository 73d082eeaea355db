//! Dense reference assemblies shared by the integration tests.
//!
//! Everything here is built from the stencil definitions with explicit
//! loops and `nalgebra` matrices, independently of the matrix-free kernels
//! in the library.
#![allow(dead_code)]

use std::f64::consts::SQRT_2;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vesiclecc_core::energy::{BasisFields, PhysParams};
use vesiclecc_core::stepper::{BdfOrder, Formulation, SimState, Stepper};
use vesiclecc_core::{FaceFieldPair, Grid, ScalarField};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_field(grid: Grid, rng: &mut ChaCha8Rng) -> ScalarField {
    let v = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ScalarField::from_vec(grid, v).unwrap()
}

/// Random face field with zero boundary-normal entries.
pub fn random_flux(grid: Grid, rng: &mut ChaCha8Rng) -> FaceFieldPair {
    let (m, n) = (grid.m(), grid.n());
    let mut ew = vec![0.0; (m + 1) * n];
    for f in 1..m {
        for j in 0..n {
            ew[f * n + j] = rng.gen_range(-1.0..1.0);
        }
    }
    let mut ns = vec![0.0; m * (n + 1)];
    for i in 0..m {
        for g in 1..n {
            ns[i * (n + 1) + g] = rng.gen_range(-1.0..1.0);
        }
    }
    FaceFieldPair::from_parts(grid, ew, ns).unwrap()
}

/// Random positive weights on every face, boundary included.
pub fn random_weights(grid: Grid, rng: &mut ChaCha8Rng) -> FaceFieldPair {
    let (m, n) = (grid.m(), grid.n());
    let ew = (0..(m + 1) * n).map(|_| rng.gen_range(0.1..2.0)).collect();
    let ns = (0..m * (n + 1)).map(|_| rng.gen_range(0.1..2.0)).collect();
    FaceFieldPair::from_parts(grid, ew, ns).unwrap()
}

pub fn cells(f: &ScalarField) -> DVector<f64> {
    DVector::from_column_slice(f.values())
}

pub fn faces(f: &FaceFieldPair) -> DVector<f64> {
    DVector::from_iterator(
        f.ew_values().len() + f.ns_values().len(),
        f.ew_values().iter().chain(f.ns_values()).copied(),
    )
}

pub fn field(grid: Grid, v: &DVector<f64>) -> ScalarField {
    ScalarField::from_vec(grid, v.iter().copied().collect()).unwrap()
}

fn cell(grid: &Grid, i: usize, j: usize) -> usize {
    i * grid.n() + j
}

fn ew_face(grid: &Grid, f: usize, j: usize) -> usize {
    f * grid.n() + j
}

fn ns_face(grid: &Grid, i: usize, g: usize) -> usize {
    (grid.m() + 1) * grid.n() + i * (grid.n() + 1) + g
}

pub fn face_count(grid: &Grid) -> usize {
    (grid.m() + 1) * grid.n() + grid.m() * (grid.n() + 1)
}

/// Cells to faces; rows of boundary faces are zero.
pub fn dense_grad(grid: &Grid) -> DMatrix<f64> {
    let (m, n, h) = (grid.m(), grid.n(), grid.h());
    let mut g = DMatrix::zeros(face_count(grid), grid.len());
    for f in 1..m {
        for j in 0..n {
            let r = ew_face(grid, f, j);
            g[(r, cell(grid, f, j))] = 1.0 / h;
            g[(r, cell(grid, f - 1, j))] = -1.0 / h;
        }
    }
    for i in 0..m {
        for k in 1..n {
            let r = ns_face(grid, i, k);
            g[(r, cell(grid, i, k))] = 1.0 / h;
            g[(r, cell(grid, i, k - 1))] = -1.0 / h;
        }
    }
    g
}

/// Faces to cells.
pub fn dense_div(grid: &Grid) -> DMatrix<f64> {
    let (m, n, h) = (grid.m(), grid.n(), grid.h());
    let mut d = DMatrix::zeros(grid.len(), face_count(grid));
    for i in 0..m {
        for j in 0..n {
            let r = cell(grid, i, j);
            d[(r, ew_face(grid, i + 1, j))] += 1.0 / h;
            d[(r, ew_face(grid, i, j))] -= 1.0 / h;
            d[(r, ns_face(grid, i, j + 1))] += 1.0 / h;
            d[(r, ns_face(grid, i, j))] -= 1.0 / h;
        }
    }
    d
}

/// Five-point Neumann Laplacian written out neighbour by neighbour.
pub fn dense_laplacian(grid: &Grid) -> DMatrix<f64> {
    let (m, n) = (grid.m() as isize, grid.n() as isize);
    let h2 = grid.h() * grid.h();
    let mut l = DMatrix::zeros(grid.len(), grid.len());
    for i in 0..m {
        for j in 0..n {
            let r = (i * n + j) as usize;
            for (di, dj) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                let (a, b) = (i + di, j + dj);
                if a < 0 || a >= m || b < 0 || b >= n {
                    continue;
                }
                l[(r, (a * n + b) as usize)] += 1.0 / h2;
                l[(r, r)] -= 1.0 / h2;
            }
        }
    }
    l
}

/// `div diag(w) grad`.
pub fn dense_weighted_laplacian(grid: &Grid, w: &DVector<f64>) -> DMatrix<f64> {
    dense_div(grid) * DMatrix::from_diagonal(w) * dense_grad(grid)
}

/// Face values of `combine(lo, hi)` with `edge(c)` on boundary faces.
pub fn face_map(
    phi: &ScalarField,
    combine: impl Fn(f64, f64) -> f64,
    edge: impl Fn(f64) -> f64,
) -> DVector<f64> {
    let grid = *phi.grid();
    let (m, n) = (grid.m(), grid.n());
    let mut out = DVector::zeros(face_count(&grid));
    for f in 0..=m {
        for j in 0..n {
            out[ew_face(&grid, f, j)] = if f == 0 {
                edge(phi.get(0, j))
            } else if f == m {
                edge(phi.get(m - 1, j))
            } else {
                combine(phi.get(f - 1, j), phi.get(f, j))
            };
        }
    }
    for i in 0..m {
        for g in 0..=n {
            out[ns_face(&grid, i, g)] = if g == 0 {
                edge(phi.get(i, 0))
            } else if g == n {
                edge(phi.get(i, n - 1))
            } else {
                combine(phi.get(i, g - 1), phi.get(i, g))
            };
        }
    }
    out
}

pub fn face_mobility_dense(phi: &ScalarField, m0: f64) -> DVector<f64> {
    face_map(
        phi,
        |a, b| {
            let s = 0.5 * (a + b);
            1.0 - m0 * (s * s - 1.0).powi(2)
        },
        |a| 1.0 - m0 * (a * a - 1.0).powi(2),
    )
}

pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn rel_err_fields(a: &ScalarField, b: &ScalarField) -> f64 {
    rel_err(&cells(a), &cells(b))
}

/// A smooth, non-symmetric diffuse interface on `grid`.
pub fn blob(grid: Grid, eps: f64) -> ScalarField {
    let (cx, cy) = (0.47 * grid.lx(), 0.53 * grid.ly());
    let r0 = 0.3 * grid.lx().min(grid.ly());
    ScalarField::from_fn(grid, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        let th = dy.atan2(dx);
        let r = (dx * dx + dy * dy).sqrt();
        let rad = r0 * (1.0 + 0.15 * (3.0 * th).cos());
        ((rad - r) / (SQRT_2 * eps)).tanh()
    })
}

/// Result of one step computed by assembling and factorizing the whole
/// coupled linear system `[phi, psi, V, U, W, Z]`.
pub struct DenseStep {
    pub phi: ScalarField,
    pub psi: ScalarField,
    pub sav: [f64; 4],
}

pub fn dense_step(stepper: &Stepper, state: &SimState) -> DenseStep {
    let p: PhysParams = *stepper.params();
    let grid = *state.grid();
    let nc = grid.len();
    let h2 = grid.h() * grid.h();
    let dt = stepper.dt();
    let order = if state.step == 0 {
        BdfOrder::One
    } else {
        stepper.scheme().order
    };

    let (un, um) = (cells(&state.phi_n), cells(&state.phi_nm1));
    let (vn, vm) = (cells(&state.psi_n), cells(&state.psi_nm1));
    let sn = [state.sav_n.v, state.sav_n.u, state.sav_n.w, state.sav_n.z];
    let sm = [state.sav_nm1.v, state.sav_nm1.u, state.sav_nm1.w, state.sav_nm1.z];
    let (alpha, phi_star, psi_star, bphi, bpsi, bsav) = match order {
        BdfOrder::One => (1.0, un.clone(), vn.clone(), un.clone(), vn.clone(), sn),
        BdfOrder::Two => (
            1.5,
            &un * 2.0 - &um,
            &vn * 2.0 - &vm,
            &un * 2.0 - &um * 0.5,
            &vn * 2.0 - &vm * 0.5,
            [0, 1, 2, 3].map(|k| 2.0 * sn[k] - 0.5 * sm[k]),
        ),
    };
    let phi_star_f = field(grid, &phi_star);
    let basis = BasisFields::eval(&phi_star_f, &field(grid, &psi_star), &p).unwrap();
    let [s, hh, q, k, pp] = [&basis.s, &basis.h, &basis.q, &basis.k, &basis.p].map(cells);

    let kk = 3.0 * SQRT_2;
    let a1 = p.gamma_surf * kk * p.eps / 4.0;
    let a2 = p.gamma_surf * kk * p.beta_stab / (4.0 * p.eps);
    let b1 = p.gamma_bend * kk / (4.0 * p.eps);
    let b2 = p.gamma_bend * kk * p.eps / 8.0;
    let c_s = p.gamma_surf * kk / 2.0;
    let c_w = p.gamma_bend * kk / (8.0 * p.eps);
    let mp = p.m_phi;
    let lam = p.lambda_stab;

    let lap = dense_laplacian(&grid);
    let bih = &lap * &lap;
    let dm = dense_weighted_laplacian(&grid, &face_mobility_dense(&phi_star_f, p.m0));
    let dm_p = &dm * &pp;

    let size = 2 * nc + 4;
    let (iv, iu, iw, iz) = (2 * nc, 2 * nc + 1, 2 * nc + 2, 2 * nc + 3);
    let mut a = DMatrix::<f64>::zeros(size, size);
    let mut rhs = DVector::<f64>::zeros(size);

    // Allen-Cahn rows.
    let ac = DMatrix::<f64>::identity(nc, nc) * (alpha / dt + mp * a2) - &lap * (mp * (a1 + p.theta))
        + &bih * (mp * b2);
    a.view_mut((0, 0), (nc, nc)).copy_from(&ac);
    let lap_star = &lap * &phi_star;
    for r in 0..nc {
        a[(r, iv)] = mp * c_s * s[r];
        a[(r, iu)] = mp * p.gamma_area * hh[r];
        a[(r, iw)] = mp * c_w * q[r];
        a[(r, iz)] = mp * k[r];
        rhs[r] = bphi[r] / dt - mp * (p.theta + b1) * lap_star[r];
    }

    // Cahn-Hilliard rows.
    let id = DMatrix::<f64>::identity(nc, nc) * (alpha / dt);
    let (ch, explicit) = match stepper.scheme().formulation {
        Formulation::ConstantCoefficient => (id - &lap * lam, &lap * &psi_star * lam),
        Formulation::Classical => (id - &dm * lam, &dm * &psi_star * lam),
    };
    a.view_mut((nc, nc), (nc, nc)).copy_from(&ch);
    for r in 0..nc {
        a[(nc + r, iz)] = -dm_p[r];
        rhs[nc + r] = bpsi[r] / dt - explicit[r];
    }

    // Auxiliary variables: alpha X - b_X = (basis, alpha u - b_u).
    for (row, fld) in [(iv, &s), (iu, &hh), (iw, &q), (iz, &k)] {
        a[(row, row)] = alpha;
        for c in 0..nc {
            a[(row, c)] = -alpha * h2 * fld[c];
        }
        rhs[row] = bsav[row - 2 * nc] - h2 * fld.dot(&bphi);
    }
    for c in 0..nc {
        a[(iz, nc + c)] = -alpha * h2 * pp[c];
    }
    rhs[iz] -= h2 * pp.dot(&bpsi);

    let x = a.lu().solve(&rhs).expect("dense system is nonsingular");
    DenseStep {
        phi: field(grid, &x.rows(0, nc).into_owned()),
        psi: field(grid, &x.rows(nc, nc).into_owned()),
        sav: [x[iv], x[iu], x[iw], x[iz]],
    }
}

/// One comparison of the library step against [`dense_step`].
#[derive(Debug, Clone)]
pub struct OracleCase {
    pub label: String,
    pub phi: f64,
    pub psi: f64,
    pub sav: f64,
}

impl OracleCase {
    pub fn worst(&self) -> f64 {
        self.phi.max(self.psi).max(self.sav)
    }
}

fn oracle_setups() -> Vec<(Grid, PhysParams)> {
    let square = Grid::square(16, 1.0).unwrap();
    let rect = Grid::new(24, 20, 1.0 / 24.0).unwrap();
    let base = PhysParams {
        eps: 0.06,
        ..PhysParams::default()
    };
    let soft = PhysParams {
        eps: 0.05,
        gamma_bend: 1.0,
        gamma_in: 100.0,
        gamma_out: 100.0,
        gamma_area: 100.0,
        psi_in: 0.1,
        beta_stab: 0.1,
        lambda_stab: 1e3,
        ..PhysParams::default()
    };
    vec![(square, base), (rect, soft)]
}

/// Two steps of every scheme on a square and a rectangular grid, each
/// compared to the dense solve from the same state.
pub fn oracle_cases() -> Vec<OracleCase> {
    use vesiclecc_core::stepper::Scheme;
    let mut out = Vec::new();
    for (grid, params) in oracle_setups() {
        let phi = blob(grid, params.eps);
        let params = params.with_target_from(&phi);
        let psi = phi.map(|s| -0.35 * s + 0.45);
        for scheme in [
            Scheme::CC_BDF1,
            Scheme::CC_BDF2,
            Scheme::CLASSICAL_BDF1,
            Scheme::CLASSICAL_BDF2,
        ] {
            let stepper = Stepper::new(grid, params, 1e-5, scheme).unwrap();
            let mut state = SimState::new(phi.clone(), psi.clone(), &params).unwrap();
            for _ in 0..2 {
                let reference = dense_step(&stepper, &state);
                let step = state.step + 1;
                stepper.step(&mut state).unwrap();
                let got = [state.sav_n.v, state.sav_n.u, state.sav_n.w, state.sav_n.z];
                let sav = rel_err(
                    &DVector::from_column_slice(&got),
                    &DVector::from_column_slice(&reference.sav),
                );
                out.push(OracleCase {
                    label: format!("{}x{} {} step {step}", grid.m(), grid.n(), scheme.name()),
                    phi: rel_err_fields(&state.phi_n, &reference.phi),
                    psi: rel_err_fields(&state.psi_n, &reference.psi),
                    sav,
                });
            }
        }
    }
    out
}

/// Worst relative error of each operator check over a set of random instances.
#[derive(Debug, Default, Clone)]
pub struct SuiteOutcome {
    pub instances: usize,
    pub checks: Vec<(&'static str, f64)>,
}

impl SuiteOutcome {
    fn record(&mut self, name: &'static str, err: f64) {
        match self.checks.iter_mut().find(|(k, _)| *k == name) {
            Some((_, worst)) => *worst = worst.max(err),
            None => self.checks.push((name, err)),
        }
    }

    pub fn failures(&self, tol: f64) -> Vec<(&'static str, f64)> {
        self.checks
            .iter()
            .filter(|(_, e)| !(*e < tol))
            .copied()
            .collect()
    }
}

fn scale_err(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(f64::MIN_POSITIVE)
}

/// Operator identities and dense-assembly equivalence on one random
/// `m x n` grid with `8 <= m, n <= 16`.
pub fn operator_instance(seed: u64, out: &mut SuiteOutcome) {
    use vesiclecc_core::grid::*;
    use vesiclecc_core::spectral::{ChiCoeffs, EigTable, SpectralSolver};

    let mut r = rng(seed);
    let m = r.gen_range(8..=16);
    let n = r.gen_range(8..=16);
    let h = r.gen_range(0.02..0.2);
    let grid = Grid::new(m, n, h).unwrap();
    let u = random_field(grid, &mut r);
    let v = random_field(grid, &mut r);
    let flux = random_flux(grid, &mut r);
    let w = random_weights(grid, &mut r);
    let (uu, vv) = (cells(&u), cells(&v));
    let h2 = h * h;

    let g = dense_grad(&grid);
    let d = dense_div(&grid);
    let l = dense_laplacian(&grid);

    out.record("grad_dense", rel_err(&faces(&grad_faces(&u)), &(&g * &uu)));
    out.record("div_dense", rel_err(&cells(&div_centers(&flux)), &(&d * faces(&flux))));
    out.record("laplacian_dense", rel_err(&cells(&laplacian(&u)), &(&l * &uu)));
    out.record("laplacian_is_div_grad", (&l - &d * &g).norm() / l.norm());
    out.record(
        "weighted_laplacian_dense",
        rel_err(
            &cells(&weighted_laplacian(&w, &u).unwrap()),
            &(dense_weighted_laplacian(&grid, &faces(&w)) * &uu),
        ),
    );
    let phi = u.map(|s| 0.9 * s);
    let m0 = r.gen_range(0.0..0.9);
    out.record(
        "mobility_div_dense",
        rel_err(
            &cells(&mobility_div(&phi, &v, m0).unwrap()),
            &(dense_weighted_laplacian(&grid, &face_mobility_dense(&phi, m0)) * &vv),
        ),
    );
    out.record(
        "avg_faces_dense",
        rel_err(&faces(&avg_faces(&u)), &face_map(&u, |a, b| 0.5 * (a + b), |a| a)),
    );
    out.record(
        "quad_avg_faces_dense",
        rel_err(
            &faces(&quad_avg_faces(&u)),
            &face_map(&u, |a, b| (a * a + a * b + b * b) / 3.0, |a| a * a),
        ),
    );

    // Summation by parts: (u, div f) = -[grad u, f] for zero-normal f.
    let lhs = inner(&u, &div_centers(&flux)).unwrap();
    let rhs = -face_inner(&grad_faces(&u), &flux).unwrap();
    let scale = h2 * (uu.norm() * (&d * faces(&flux)).norm());
    out.record("summation_by_parts", scale_err(lhs, rhs, scale));

    // Green: (u, Lap v) = -[grad u, grad v] = (Lap u, v).
    let a = inner(&u, &laplacian(&v)).unwrap();
    let b = -face_inner(&grad_faces(&u), &grad_faces(&v)).unwrap();
    let c = inner(&laplacian(&u), &v).unwrap();
    let scale = h2 * uu.norm() * (&l * &vv).norm();
    out.record("green_first", scale_err(a, b, scale));
    out.record("green_symmetric", scale_err(a, c, scale));
    let a = inner(&u, &weighted_laplacian(&w, &v).unwrap()).unwrap();
    let c = inner(&weighted_laplacian(&w, &u).unwrap(), &v).unwrap();
    out.record("weighted_green_symmetric", scale_err(a, c, scale * 2.0));

    // D(u^3) = 3 A^q(u) D(u) on interior faces.
    let cube = grad_faces(&u.map(|s| s * s * s));
    let prod = quad_avg_faces(&u)
        .zip_map(&grad_faces(&u), |q, du| 3.0 * q * du)
        .unwrap();
    out.record("quadratic_product_rule", rel_err(&faces(&cube), &faces(&prod)));

    // Conservative fluxes sum to zero.
    let total = |f: &ScalarField| f.values().iter().sum::<f64>();
    let div = div_centers(&flux);
    let scale = div.values().iter().map(|x| x.abs()).sum::<f64>();
    out.record("div_zero_sum", scale_err(total(&div), 0.0, scale));
    let wl = weighted_laplacian(&w, &u).unwrap();
    let scale = wl.values().iter().map(|x| x.abs()).sum::<f64>();
    out.record("weighted_zero_sum", scale_err(total(&wl), 0.0, scale));

    // Cosine modes are eigenvectors of the Laplacian.
    let eig = EigTable::new(grid);
    let (k, q) = (r.gen_range(0..m), r.gen_range(0..n));
    let mode = ScalarField::from_index_fn(grid, |i, j| {
        let cx = (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / m as f64).cos();
        let cy = (std::f64::consts::PI * q as f64 * (j as f64 + 0.5) / n as f64).cos();
        cx * cy
    });
    let lm = cells(&laplacian(&mode));
    let expect = cells(&mode) * eig.get(k, q);
    out.record(
        "dct_diagonalizes_laplacian",
        (&lm - &expect).norm() / (cells(&mode).norm() * 8.0 / h2),
    );

    let solver = SpectralSolver::new(grid);
    let back = solver
        .dct()
        .inverse(&solver.dct().forward(&u).unwrap())
        .unwrap();
    out.record("dct_round_trip", rel_err_fields(&back, &u));

    let chi = ChiCoeffs {
        c1: r.gen_range(1e3..1e6),
        c2: r.gen_range(0.0..2.0),
        c3: r.gen_range(0.0..1e-3),
    };
    let sol = solver.solve_chi(&[&u], chi).unwrap().pop().unwrap();
    let s = cells(&sol);
    let applied = &s * chi.c1 - &l * &s * chi.c2 + &l * (&l * &s) * chi.c3;
    out.record("chi_solve_residual", rel_err(&applied, &uu));

    let (alpha, dt, lam) = (1.5, r.gen_range(1e-6..1e-4), r.gen_range(1.0..1e5));
    let sol = solver.solve_zeta_cc(&[&u], alpha, dt, lam).unwrap().pop().unwrap();
    let s = cells(&sol);
    let applied = &s * (alpha / dt) - &l * &s * lam;
    out.record("zeta_solve_residual", rel_err(&applied, &uu));

    out.instances += 1;
}

pub fn operator_suite(seeds: std::ops::Range<u64>) -> SuiteOutcome {
    let mut out = SuiteOutcome::default();
    for seed in seeds {
        operator_instance(seed, &mut out);
    }
    out
}
