//! Energy densities, SAV values, variational-derivative fields and the
//! modified discrete energy of the BDF2 scheme.

use std::f64::consts::{FRAC_PI_2, SQRT_2};

use crate::error::{Error, Result};
use crate::grid::{
    face_inner, face_mobility, grad_faces, grad_norm_sq, inner_unchecked, laplacian,
    nonlocal_bending_pair, FaceFieldPair, ScalarField,
};
use crate::par::*;

/// Physical and stabilization constants of the model.
///
/// `Default` gives the growth benchmark: `gamma_bend = 0.05`, `psi_in = 0.65`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysParams {
    pub gamma_surf: f64,
    pub gamma_bend: f64,
    pub gamma_area: f64,
    pub gamma_in: f64,
    pub gamma_out: f64,
    pub psi_in: f64,
    pub psi_out: f64,
    pub beta_in: f64,
    pub beta_out: f64,
    pub eps: f64,
    pub m_phi: f64,
    pub m0: f64,
    /// Target arc length `A`. Usually set from the initial phase field with
    /// [`PhysParams::with_target_from`].
    pub a_target: f64,
    /// Linear SAV shift `beta`.
    pub beta_stab: f64,
    pub theta: f64,
    pub lambda_stab: f64,
}

impl Default for PhysParams {
    fn default() -> Self {
        Self {
            gamma_surf: 1.0,
            gamma_bend: 0.05,
            gamma_area: 5e4,
            gamma_in: 1e5,
            gamma_out: 1e5,
            psi_in: 0.65,
            psi_out: 0.8,
            beta_in: 0.0,
            beta_out: 0.0,
            eps: 0.03125,
            m_phi: 1.0,
            m0: 0.5,
            a_target: 0.0,
            beta_stab: 0.0,
            theta: 1.5,
            lambda_stab: 1e5,
        }
    }
}

impl PhysParams {
    /// Shrinkage scenario: stiffer bending and a low interior equilibrium.
    pub fn shrinkage() -> Self {
        Self {
            gamma_bend: 1.0,
            psi_in: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("eps", self.eps), ("m_phi", self.m_phi)];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(k, format!("must be positive, got {v}")));
            }
        }
        if !(self.m0 > 0.0 && self.m0 < 1.0) {
            return Err(Error::config("m0", format!("must lie in (0, 1), got {}", self.m0)));
        }
        let nonneg = [
            ("theta", self.theta),
            ("lambda_stab", self.lambda_stab),
            ("beta_stab", self.beta_stab),
            ("gamma_surf", self.gamma_surf),
            ("gamma_bend", self.gamma_bend),
            ("gamma_area", self.gamma_area),
            ("gamma_in", self.gamma_in),
            ("gamma_out", self.gamma_out),
        ];
        for (k, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(k, format!("must be non-negative, got {v}")));
            }
        }
        for (k, v) in [
            ("psi_in", self.psi_in),
            ("psi_out", self.psi_out),
            ("beta_in", self.beta_in),
            ("beta_out", self.beta_out),
            ("a_target", self.a_target),
        ] {
            if !v.is_finite() {
                return Err(Error::config(k, "must be finite"));
            }
        }
        Ok(())
    }

    /// Copy with `a_target` set to the arc length of `phi`, so that `U = 0`
    /// initially.
    pub fn with_target_from(mut self, phi: &ScalarField) -> Self {
        self.a_target = arc_length(phi, &self);
        self
    }

    pub fn constants(&self) -> SchemeConstants {
        let k = 3.0 * SQRT_2;
        let eps = self.eps;
        SchemeConstants {
            a1: self.gamma_surf * k * eps / 4.0,
            a2: self.gamma_surf * k * self.beta_stab / (4.0 * eps),
            b1: self.gamma_bend * k / (4.0 * eps),
            b2: self.gamma_bend * k * eps / 8.0,
            c_s: self.gamma_surf * k / 2.0,
            c_w: self.gamma_bend * k / (8.0 * eps),
        }
    }

    /// Mobility-weighted SAV couplings of the Allen-Cahn equation:
    /// `(c_gs, c_ga, c_gb, c_go)`.
    pub fn coupling_coeffs(&self) -> [f64; 4] {
        let c = self.constants();
        [
            self.m_phi * c.c_s,
            self.m_phi * self.gamma_area,
            self.m_phi * c.c_w,
            self.m_phi,
        ]
    }
}

/// Frequently used combinations of the physical constants.
///
/// `a1`: surface gradient, `a2`: beta shift, `b1`: explicit bending
/// Laplacian, `b2`: bending biharmonic, `c_s`/`c_w`: SAV prefactors of the
/// surface and bending parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConstants {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub c_s: f64,
    pub c_w: f64,
}

/// The four scalar auxiliary variables at one time level.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SavQuartet {
    pub v: f64,
    pub u: f64,
    pub w: f64,
    pub z: f64,
}

impl SavQuartet {
    pub fn as_array(&self) -> [f64; 4] {
        [self.v, self.u, self.w, self.z]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            v: a[0],
            u: a[1],
            w: a[2],
            z: a[3],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

/// Physical energy split.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyReport {
    pub f_surf: f64,
    pub f_bend: f64,
    pub f_area: f64,
    pub f_osm: f64,
    pub f_total: f64,
    /// `int f_surf`, the diffuse arc length.
    pub arc_length: f64,
}

#[inline]
pub fn double_well_value(s: f64) -> f64 {
    let q = s * s - 1.0;
    0.25 * q * q
}

#[inline]
pub fn p_value(s: f64) -> f64 {
    (FRAC_PI_2 * s).sin()
}

#[inline]
pub fn p_prime_value(s: f64) -> f64 {
    FRAC_PI_2 * (FRAC_PI_2 * s).cos()
}

#[inline]
fn f_in_value(psi: f64, p: &PhysParams) -> f64 {
    let d = psi - p.psi_in;
    0.5 * p.gamma_in * d * d + p.beta_in
}

#[inline]
fn f_out_value(psi: f64, p: &PhysParams) -> f64 {
    let d = psi - p.psi_out;
    0.5 * p.gamma_out * d * d + p.beta_out
}

pub fn double_well(phi: &ScalarField) -> ScalarField {
    phi.map(double_well_value)
}

pub fn p_interp(phi: &ScalarField) -> ScalarField {
    phi.map(p_value)
}

pub fn p_prime(phi: &ScalarField) -> ScalarField {
    phi.map(p_prime_value)
}

pub fn f_in(psi: &ScalarField, params: &PhysParams) -> ScalarField {
    psi.map(|v| f_in_value(v, params))
}

pub fn f_out(psi: &ScalarField, params: &PhysParams) -> ScalarField {
    psi.map(|v| f_out_value(v, params))
}

pub fn mobility(phi: &ScalarField, m0: f64) -> ScalarField {
    phi.map(|s| crate::grid::mobility_value(s, m0))
}

/// `h^2 * sum f(v)` over cells, with deterministic row-wise partial sums.
fn integrate(field: &ScalarField, f: impl Fn(f64) -> f64 + Sync) -> f64 {
    let n = field.grid().n();
    let rows: Vec<f64> = field
        .values()
        .par_chunks(n)
        .map(|r| r.iter().map(|v| f(*v)).sum::<f64>())
        .collect();
    field.grid().cell_area() * rows.iter().sum::<f64>()
}

fn integrate2(a: &ScalarField, b: &ScalarField, f: impl Fn(f64, f64) -> f64 + Sync) -> f64 {
    let n = a.grid().n();
    let rows: Vec<f64> = a
        .values()
        .par_chunks(n)
        .zip(b.values().par_chunks(n))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| f(*p, *q)).sum::<f64>())
        .collect();
    a.grid().cell_area() * rows.iter().sum::<f64>()
}

/// `int f_surf`, the diffuse-interface arc length.
pub fn arc_length(phi: &ScalarField, params: &PhysParams) -> f64 {
    let bulk = integrate(phi, double_well_value);
    0.75 * SQRT_2 * (bulk / params.eps + 0.5 * params.eps * grad_norm_sq(phi))
}

/// `sum_faces A(phi^2) |D phi|^2 h^2`, the discrete `int phi^2 |grad phi|^2`.
pub fn weighted_gradient_term(phi: &ScalarField) -> f64 {
    let sq = phi.map(|v| v * v);
    let w = crate::grid::avg_faces(&sq);
    let d = grad_faces(phi);
    let wd = w.zip_map(&d, |a, b| a * b).expect("same grid");
    face_inner(&wd, &d).expect("same grid")
}

fn check_radicand(name: &'static str, value: f64, scale: f64) -> Result<f64> {
    if value >= 0.0 {
        Ok(value)
    } else if value >= -1e-14 * scale.max(1.0) {
        Ok(0.0)
    } else {
        Err(Error::NegativeRadicand { name, value })
    }
}

fn v_squared(phi: &ScalarField, params: &PhysParams) -> f64 {
    let b = params.beta_stab;
    let e4 = 4.0 * params.eps;
    integrate(phi, |s| {
        let q = s * s - 1.0 - b;
        q * q / e4
    })
}

fn w_squared(phi: &ScalarField, params: &PhysParams) -> f64 {
    let e2 = params.eps * params.eps;
    6.0 * weighted_gradient_term(phi)
        + integrate(phi, |s| {
            let c = s * s * s - s;
            c * c / e2
        })
}

/// `2 int f_osm`.
fn z_squared(phi: &ScalarField, psi: &ScalarField, params: &PhysParams) -> f64 {
    integrate2(phi, psi, |s, c| {
        let p = p_value(s);
        (1.0 + p) * f_in_value(c, params) + (1.0 - p) * f_out_value(c, params)
    })
}

/// SAV values of a state.
pub fn sav_init(phi: &ScalarField, psi: &ScalarField, params: &PhysParams) -> Result<SavQuartet> {
    phi.grid().ensure_same(psi.grid(), "sav_init")?;
    let area = phi.grid().area();
    let v2 = check_radicand("V", v_squared(phi, params), area)?;
    let w2 = check_radicand("W", w_squared(phi, params), area)?;
    let z2 = check_radicand("Z", z_squared(phi, psi, params), area)?;
    Ok(SavQuartet {
        v: v2.sqrt(),
        u: arc_length(phi, params) - params.a_target,
        w: w2.sqrt(),
        z: z2.sqrt(),
    })
}

/// Physical energy components.
pub fn energy_components(
    phi: &ScalarField,
    psi: &ScalarField,
    params: &PhysParams,
) -> Result<EnergyReport> {
    phi.grid().ensure_same(psi.grid(), "energy_components")?;
    let arc = arc_length(phi, params);
    let f_surf = params.gamma_surf * arc;
    let eps = params.eps;
    let lap = laplacian(phi);
    let lap_sq = inner_unchecked(&lap, &lap);
    let bend_core = w_squared(phi, params) - 2.0 * grad_norm_sq(phi) + eps * eps * lap_sq;
    let f_bend = params.gamma_bend * 3.0 * SQRT_2 / (16.0 * eps) * bend_core;
    let dev = arc - params.a_target;
    let f_area = 0.5 * params.gamma_area * dev * dev;
    let f_osm = 0.5 * z_squared(phi, psi, params);
    Ok(EnergyReport {
        f_surf,
        f_bend,
        f_area,
        f_osm,
        f_total: f_surf + f_bend + f_area + f_osm,
        arc_length: arc,
    })
}

fn regularized(d: f64, grid_area: f64, what: &str) -> f64 {
    let floor = 1e-12 * grid_area.sqrt();
    if d < floor {
        log::debug!("{what} denominator {d:e} regularized to {floor:e}");
        floor
    } else {
        d
    }
}

pub fn eval_s(phi: &ScalarField, params: &PhysParams) -> ScalarField {
    let den = regularized(v_squared(phi, params).max(0.0).sqrt(), phi.grid().area(), "S");
    let (b, eps) = (params.beta_stab, params.eps);
    let c = 1.0 / (2.0 * den * eps);
    phi.map(|s| c * s * (s * s - 1.0 - b))
}

pub fn eval_h(phi: &ScalarField, params: &PhysParams) -> ScalarField {
    let eps = params.eps;
    let lap = laplacian(phi);
    let k = 0.75 * SQRT_2;
    phi.zip_map(&lap, |s, l| k * ((s * s * s - s) / eps - eps * l))
        .expect("same grid")
}

pub fn eval_q(phi: &ScalarField, params: &PhysParams) -> ScalarField {
    let den = regularized(w_squared(phi, params).max(0.0).sqrt(), phi.grid().area(), "Q");
    let e2 = params.eps * params.eps;
    let (first, second) = nonlocal_bending_pair(phi);
    let mut out = first;
    out.values_mut()
        .iter_mut()
        .zip(second.values())
        .zip(phi.values())
        .for_each(|((o, d), &s)| {
            let poly = (s * s * s - s) * (3.0 * s * s - 1.0) / e2;
            *o = (6.0 * (*o - d) + poly) / den;
        });
    out
}

fn z_denominator(phi: &ScalarField, psi: &ScalarField, params: &PhysParams) -> f64 {
    regularized(
        z_squared(phi, psi, params).max(0.0).sqrt(),
        phi.grid().area(),
        "K/P",
    )
}

pub fn eval_k(phi: &ScalarField, psi: &ScalarField, params: &PhysParams) -> Result<ScalarField> {
    let den = z_denominator(phi, psi, params);
    phi.zip_map(psi, |s, c| {
        p_prime_value(s) * (f_in_value(c, params) - f_out_value(c, params)) / (2.0 * den)
    })
}

pub fn eval_p(phi: &ScalarField, psi: &ScalarField, params: &PhysParams) -> Result<ScalarField> {
    let den = z_denominator(phi, psi, params);
    phi.zip_map(psi, |s, c| {
        let p = p_value(s);
        (params.gamma_in * (1.0 + p) * (c - params.psi_in)
            + params.gamma_out * (1.0 - p) * (c - params.psi_out))
            / (2.0 * den)
    })
}

/// The five nonlinear derivative fields evaluated at one (extrapolated) state.
#[derive(Debug, Clone)]
pub struct BasisFields {
    pub s: ScalarField,
    pub h: ScalarField,
    pub q: ScalarField,
    pub k: ScalarField,
    pub p: ScalarField,
}

impl BasisFields {
    pub fn eval(phi: &ScalarField, psi: &ScalarField, params: &PhysParams) -> Result<Self> {
        phi.grid().ensure_same(psi.grid(), "basis fields")?;
        let ((s, h), (q, kp)) = crate::par::join(
            || crate::par::join(|| eval_s(phi, params), || eval_h(phi, params)),
            || {
                crate::par::join(
                    || eval_q(phi, params),
                    || (eval_k(phi, psi, params), eval_p(phi, psi, params)),
                )
            },
        );
        let (k, p) = kp;
        Ok(Self { s, h, q, k: k?, p: p? })
    }

    /// `[S, H, Q, K]`, the fields entering the Allen-Cahn equation.
    pub fn phi_fields(&self) -> [&ScalarField; 4] {
        [&self.s, &self.h, &self.q, &self.k]
    }
}

/// `lambda D(psi_new - psi_star) / sqrt(M(phi_star))` on faces, or `None`
/// when some face mobility is not positive.
pub fn stabilization_flux(
    psi_new: &ScalarField,
    psi_star: &ScalarField,
    phi_star: &ScalarField,
    params: &PhysParams,
) -> Result<Option<FaceFieldPair>> {
    let diff = psi_new.lincomb(1.0, psi_star, -1.0)?;
    let (mob, bad) = face_mobility(phi_star, params.m0);
    if bad > 0 {
        log::warn!("{bad} faces with non-positive mobility; stabilization term skipped");
        return Ok(None);
    }
    let d = grad_faces(&diff);
    let lam = params.lambda_stab;
    Ok(Some(mob.zip_map(&d, |m, g| lam * g / m.sqrt())?))
}

/// Field-dependent pieces of the modified energy at one time level, cached
/// so each level is differentiated only once.
#[derive(Debug, Clone)]
pub struct LevelTerms {
    pub phi: ScalarField,
    pub grad: FaceFieldPair,
    pub lap: ScalarField,
}

impl LevelTerms {
    pub fn new(phi: &ScalarField) -> Self {
        Self {
            phi: phi.clone(),
            grad: grad_faces(phi),
            lap: laplacian(phi),
        }
    }
}

fn sq_cell(a: &ScalarField, b: &ScalarField, ca: f64, cb: f64) -> f64 {
    integrate2(a, b, |x, y| {
        let v = ca * x + cb * y;
        v * v
    })
}

fn sq_face(a: &FaceFieldPair, b: &FaceFieldPair, ca: f64, cb: f64) -> f64 {
    let c = a.zip_map(b, |x, y| ca * x + cb * y).expect("same grid");
    face_inner(&c, &c).expect("same grid")
}

/// `E_BDF2^{n+1,n}`: the BDF2 history norms of fields and SAVs, without the
/// accumulated stabilization sum.
pub fn bdf2_energy(
    new: &LevelTerms,
    old: &LevelTerms,
    sav_new: &SavQuartet,
    sav_old: &SavQuartet,
    params: &PhysParams,
) -> f64 {
    let c = params.constants();
    let theta_t = params.theta + c.b1;
    let two = |a: f64, b: f64| a * a + (2.0 * a - b) * (2.0 * a - b);

    let lap = sq_cell(&new.lap, &new.lap, 1.0, 0.0) + sq_cell(&new.lap, &old.lap, 2.0, -1.0);
    let g_new = face_inner(&new.grad, &new.grad).expect("same grid");
    let g_ext = sq_face(&new.grad, &old.grad, 2.0, -1.0);
    let g_inc = sq_face(&new.grad, &old.grad, 1.0, -1.0);
    let mut e = 0.5 * c.b2 * lap + 0.5 * (c.a1 + params.theta) * (g_new + g_ext)
        - 0.5 * theta_t * (g_new + g_ext - 2.0 * g_inc);
    if c.a2 != 0.0 {
        let p = sq_cell(&new.phi, &new.phi, 1.0, 0.0) + sq_cell(&new.phi, &old.phi, 2.0, -1.0);
        e += 0.5 * c.a2 * p;
    }
    e + 0.5 * c.c_s * two(sav_new.v, sav_old.v)
        + 0.5 * params.gamma_area * two(sav_new.u, sav_old.u)
        + 0.5 * c.c_w * two(sav_new.w, sav_old.w)
        + 0.5 * two(sav_new.z, sav_old.z)
}

/// `K^n`: numerical dissipation from the second differences of all levels.
pub fn bdf2_dissipation(
    levels: [&LevelTerms; 3],
    savs: [&SavQuartet; 3],
    params: &PhysParams,
) -> f64 {
    let [a, b, cc] = levels;
    let c = params.constants();
    let theta_t = params.theta + c.b1;
    let second = |x: &ScalarField, y: &ScalarField, z: &ScalarField| {
        let n = x.grid().n();
        let rows: Vec<f64> = x
            .values()
            .par_chunks(n)
            .zip(y.values().par_chunks(n))
            .zip(z.values().par_chunks(n))
            .map(|((p, q), r)| {
                p.iter()
                    .zip(q)
                    .zip(r)
                    .map(|((u, v), w)| {
                        let d = u - 2.0 * v + w;
                        d * d
                    })
                    .sum::<f64>()
            })
            .collect();
        x.grid().cell_area() * rows.iter().sum::<f64>()
    };
    let lap2 = second(&a.lap, &b.lap, &cc.lap);
    let dg = a
        .grad
        .zip_map(&b.grad, |x, y| x - 2.0 * y)
        .and_then(|t| t.zip_map(&cc.grad, |x, y| x + y))
        .expect("same grid");
    let grad2 = face_inner(&dg, &dg).expect("same grid");
    let [sn, s0, sm] = savs;
    let d2 = |x: f64, y: f64, z: f64| (x - 2.0 * y + z).powi(2);
    let mut k = 0.5 * c.b2 * lap2 + 0.5 * (c.a1 + params.theta) * grad2 + 1.5 * theta_t * grad2;
    if c.a2 != 0.0 {
        k += 0.5 * c.a2 * second(&a.phi, &b.phi, &cc.phi);
    }
    k + 0.5 * c.c_s * d2(sn.v, s0.v, sm.v)
        + 0.5 * params.gamma_area * d2(sn.u, s0.u, sm.u)
        + 0.5 * c.c_w * d2(sn.w, s0.w, sm.w)
        + 0.5 * d2(sn.z, s0.z, sm.z)
}

/// `||a||^2` in the cell inner product.
pub fn norm_sq(a: &ScalarField) -> f64 {
    inner_unchecked(a, a)
}

/// `||a - b||^2` in the cell inner product.
pub fn diff_norm_sq(a: &ScalarField, b: &ScalarField) -> f64 {
    sq_cell(a, b, 1.0, -1.0)
}
