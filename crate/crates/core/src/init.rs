//! Initial phase fields, Cahn-Hilliard smoothing and the initial concentration.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};
use crate::grid::{grad_norm_sq, laplacian, Grid, ScalarField};
use crate::spectral::SpectralSolver;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeKind {
    Ellipse { a: f64, b: f64 },
    /// Equilateral triangle.
    Triangle { edge: f64 },
    /// Polar curve `r0 (1 + amplitude cos(points * theta))`.
    Star { r0: f64, amplitude: f64, points: u32 },
    /// Regular hexagon with one 60 degree sector removed.
    HexagonIncomplete { edge: f64 },
    /// Disc of radius `outer` minus a disc of radius `inner` shifted by `offset` along local x.
    Crescent { outer: f64, inner: f64, offset: f64 },
}

impl ShapeKind {
    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Ellipse { .. } => "ellipse",
            ShapeKind::Triangle { .. } => "triangle",
            ShapeKind::Star { .. } => "star",
            ShapeKind::HexagonIncomplete { .. } => "hexagon_incomplete",
            ShapeKind::Crescent { .. } => "crescent",
        }
    }

    fn sizes(&self) -> Vec<(&'static str, f64)> {
        match *self {
            ShapeKind::Ellipse { a, b } => vec![("a", a), ("b", b)],
            ShapeKind::Triangle { edge } | ShapeKind::HexagonIncomplete { edge } => {
                vec![("edge", edge)]
            }
            ShapeKind::Star { r0, .. } => vec![("r0", r0)],
            ShapeKind::Crescent { outer, inner, .. } => vec![("outer", outer), ("inner", inner)],
        }
    }

    /// Radius of a disc around the center containing the shape.
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            ShapeKind::Ellipse { a, b } => a.max(b),
            ShapeKind::Triangle { edge } => edge / 3f64.sqrt(),
            ShapeKind::Star { r0, amplitude, .. } => r0 * (1.0 + amplitude.abs()),
            ShapeKind::HexagonIncomplete { edge } => edge,
            ShapeKind::Crescent { outer, .. } => outer,
        }
    }

    /// Membership in the local (unrotated, centered) frame.
    fn contains_local(&self, x: f64, y: f64) -> bool {
        match *self {
            ShapeKind::Ellipse { a, b } => (x / a).powi(2) + (y / b).powi(2) < 1.0,
            ShapeKind::Triangle { edge } => {
                let r = edge / 3f64.sqrt();
                in_regular_polygon(x, y, r, 3, PI / 2.0)
            }
            ShapeKind::Star { r0, amplitude, points } => {
                let rho = x.hypot(y);
                let th = y.atan2(x);
                rho < r0 * (1.0 + amplitude * (points as f64 * th).cos())
            }
            ShapeKind::HexagonIncomplete { edge } => {
                let th = y.atan2(x).rem_euclid(2.0 * PI);
                in_regular_polygon(x, y, edge, 6, 0.0) && th >= PI / 3.0
            }
            ShapeKind::Crescent { outer, inner, offset } => {
                x * x + y * y < outer * outer && (x - offset).powi(2) + y * y >= inner * inner
            }
        }
    }
}

/// Regular `k`-gon with circumradius `r`, first vertex at angle `phase`.
fn in_regular_polygon(x: f64, y: f64, r: f64, k: usize, phase: f64) -> bool {
    let apothem = r * (PI / k as f64).cos();
    (0..k).all(|s| {
        // outward normal of edge s points at the midpoint between vertices s and s+1
        let a = phase + (2.0 * s as f64 + 1.0) * PI / k as f64;
        x * a.cos() + y * a.sin() < apothem
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub center: (f64, f64),
    /// Counter-clockwise rotation in radians.
    pub rotation: f64,
}

impl ShapeSpec {
    pub fn ellipse(center: (f64, f64), a: f64, b: f64) -> Self {
        Self {
            kind: ShapeKind::Ellipse { a, b },
            center,
            rotation: 0.0,
        }
    }

    pub fn circle(center: (f64, f64), r: f64) -> Self {
        Self::ellipse(center, r, r)
    }

    pub fn star(center: (f64, f64), r0: f64) -> Self {
        Self {
            kind: ShapeKind::Star {
                r0,
                amplitude: 0.4,
                points: 5,
            },
            center,
            rotation: 0.0,
        }
    }

    pub fn triangle(center: (f64, f64), edge: f64) -> Self {
        Self {
            kind: ShapeKind::Triangle { edge },
            center,
            rotation: 0.0,
        }
    }

    pub fn hexagon_incomplete(center: (f64, f64), edge: f64) -> Self {
        Self {
            kind: ShapeKind::HexagonIncomplete { edge },
            center,
            rotation: 0.0,
        }
    }

    pub fn crescent(center: (f64, f64), r: f64) -> Self {
        Self {
            kind: ShapeKind::Crescent {
                outer: r,
                inner: r,
                offset: 0.5 * r,
            },
            center,
            rotation: 0.0,
        }
    }

    pub fn with_rotation(mut self, rotation: f64) -> Self {
        self.rotation = rotation;
        self
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let (s, c) = self.rotation.sin_cos();
        self.kind.contains_local(c * dx + s * dy, -s * dx + c * dy)
    }

    fn check_sizes(&self, grid: &Grid) -> Result<()> {
        for (name, v) in self.kind.sizes() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(
                    format!("shape.{name}"),
                    format!("must be positive, got {v}"),
                ));
            }
        }
        let (cx, cy) = self.center;
        if !(cx > 0.0 && cx < grid.lx() && cy > 0.0 && cy < grid.ly()) {
            return Err(Error::config(
                "shape.center",
                format!("({cx}, {cy}) lies outside the domain"),
            ));
        }
        Ok(())
    }

    /// Requires the shape to stay at least `4 eps` away from the boundary.
    pub fn validate(&self, grid: &Grid, eps: f64) -> Result<()> {
        self.check_sizes(grid)?;
        let r = self.kind.bounding_radius();
        let margin = 4.0 * eps;
        let (cx, cy) = self.center;
        let gap = (cx - r).min(cy - r).min(grid.lx() - cx - r).min(grid.ly() - cy - r);
        if gap < margin {
            return Err(Error::config(
                "shape",
                format!("{} is {gap:.4} from the boundary, needs at least {margin:.4}", self.kind.name()),
            ));
        }
        Ok(())
    }
}

/// `+1` in cells whose center lies inside the shape, `-1` elsewhere.
pub fn sharp_indicator(spec: &ShapeSpec, grid: &Grid) -> Result<ScalarField> {
    spec.check_sizes(grid)?;
    Ok(ScalarField::from_fn(*grid, |x, y| {
        if spec.contains(x, y) {
            1.0
        } else {
            -1.0
        }
    }))
}

/// Diffuse ellipse `tanh(d / (sqrt 2 eps))` with the pseudo-distance
/// `min(a, b) (1 - sqrt((dx/a)^2 + (dy/b)^2))` in the rotated frame.
pub fn tanh_ellipse(spec: &ShapeSpec, grid: &Grid, eps: f64) -> Result<ScalarField> {
    let ShapeKind::Ellipse { a, b } = spec.kind else {
        return Err(Error::config("shape.kind", "tanh profile needs an ellipse"));
    };
    if !(eps > 0.0) {
        return Err(Error::config("eps", "must be positive"));
    }
    spec.check_sizes(grid)?;
    let (s, c) = spec.rotation.sin_cos();
    let w = SQRT_2 * eps;
    let r = a.min(b);
    Ok(ScalarField::from_fn(*grid, |x, y| {
        let (dx, dy) = (x - spec.center.0, y - spec.center.1);
        let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
        let d = r * (1.0 - ((u / a).powi(2) + (v / b).powi(2)).sqrt());
        (d / w).tanh()
    }))
}

/// `a phi0 + b`.
pub fn psi_from_phi(phi0: &ScalarField, a: f64, b: f64) -> ScalarField {
    phi0.map(|p| a * p + b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingSettings {
    pub mobility: f64,
    pub dt: f64,
    pub steps: usize,
}

impl Default for SmoothingSettings {
    fn default() -> Self {
        Self {
            mobility: 0.01,
            dt: 1e-6,
            steps: 10,
        }
    }
}

impl SmoothingSettings {
    /// Step count `round(t_final / dt)`.
    pub fn from_duration(mobility: f64, dt: f64, t_final: f64) -> Self {
        Self {
            mobility,
            dt,
            steps: (t_final / dt).round() as usize,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SmoothingOutcome {
    pub phi: ScalarField,
    /// Relative mass change before the clamp.
    pub mass_drift: f64,
    /// Cahn-Hilliard free energy before the first and after each step.
    pub energies: Vec<f64>,
}

impl SmoothingOutcome {
    pub fn energy_nonincreasing(&self) -> bool {
        self.energies
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-12 * w[0].abs())
    }
}

/// `int (phi^2 - 1)^2 / (4 eps) + eps/2 |grad phi|^2`.
pub fn ch_free_energy(phi: &ScalarField, eps: f64) -> f64 {
    let bulk: f64 = phi
        .values()
        .iter()
        .map(|p| (p * p - 1.0).powi(2))
        .sum::<f64>()
        * phi.grid().cell_area()
        / (4.0 * eps);
    bulk + 0.5 * eps * grad_norm_sq(phi)
}

/// Semi-implicit Cahn-Hilliard smoothing
/// `(1/dt + M eps Lap^2) phi^{k+1} = phi^k/dt + (M/eps) Lap(phi^3 - phi)`,
/// followed by clamping to `[-1, 1]`.
pub fn smooth_ic_with(
    phi_sharp: &ScalarField,
    eps: f64,
    settings: SmoothingSettings,
    solver: &SpectralSolver,
) -> Result<SmoothingOutcome> {
    phi_sharp.grid().ensure_same(solver.grid(), "smoothing")?;
    if !phi_sharp.is_finite() {
        return Err(Error::NonFinite { field: "phi", step: 0 });
    }
    let SmoothingSettings { mobility, dt, steps } = settings;
    let mass0 = phi_sharp.mass();
    let mut phi = phi_sharp.clone();
    let mut energies = Vec::with_capacity(steps + 1);
    energies.push(ch_free_energy(&phi, eps));
    for k in 0..steps {
        let nl = laplacian(&phi.map(|p| p * p * p - p));
        let mut rhs = phi.clone();
        rhs.scale(1.0 / dt);
        rhs.axpy(mobility / eps, &nl)?;
        phi = solver.solve_smoothing_ch(&rhs, mobility, eps, dt)?;
        if !phi.is_finite() {
            return Err(Error::NonFinite { field: "phi", step: k + 1 });
        }
        energies.push(ch_free_energy(&phi, eps));
    }
    let mass_drift = (phi.mass() - mass0).abs() / mass0.abs().max(f64::MIN_POSITIVE);
    let phi = phi.map(|p| p.clamp(-1.0, 1.0));
    Ok(SmoothingOutcome {
        phi,
        mass_drift,
        energies,
    })
}

/// [`smooth_ic_with`] using default settings and a fresh solver.
pub fn smooth_ic(phi_sharp: &ScalarField, eps: f64) -> Result<ScalarField> {
    let solver = SpectralSolver::new(*phi_sharp.grid());
    Ok(smooth_ic_with(phi_sharp, eps, SmoothingSettings::default(), &solver)?.phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_domain_and_outside() {
        let g = Grid::square(16, 1.0).unwrap();
        let s = ShapeSpec::ellipse((0.5, 0.5), 2.0, 2.0);
        assert!(sharp_indicator(&s, &g).unwrap().values().iter().all(|v| *v == 1.0));
        assert!(s.validate(&g, 0.01).is_err());
        let bad = ShapeSpec::circle((1.5, 0.5), 0.1);
        assert!(sharp_indicator(&bad, &g).is_err());
        let neg = ShapeSpec::circle((0.5, 0.5), -0.1);
        assert!(sharp_indicator(&neg, &g).is_err());
        assert!(ShapeSpec::circle((0.5, 0.5), 0.3).validate(&g, 0.03).is_ok());
        assert!(ShapeSpec::circle((0.5, 0.5), 0.4).validate(&g, 0.03).is_err());
    }

    #[test]
    fn disc_cell_count() {
        let g = Grid::square(128, 1.0).unwrap();
        let r = 0.3;
        let ind = sharp_indicator(&ShapeSpec::circle((0.5, 0.5), r), &g).unwrap();
        let inside = ind.values().iter().filter(|v| **v > 0.0).count() as f64;
        let h = g.h();
        let expect = PI * r * r / (h * h);
        assert!((inside - expect).abs() <= 2.0 * PI * r / h);
    }

    #[test]
    fn triangle_matches_half_planes() {
        let c = (0.5, 0.45);
        let edge = 0.5;
        let rot = 0.3;
        let spec = ShapeSpec::triangle(c, edge).with_rotation(rot);
        let r = edge / 3f64.sqrt();
        let verts: Vec<(f64, f64)> = (0..3)
            .map(|k| {
                let a = PI / 2.0 + rot + 2.0 * PI * k as f64 / 3.0;
                (c.0 + r * a.cos(), c.1 + r * a.sin())
            })
            .collect();
        let oracle = |x: f64, y: f64| {
            (0..3).all(|k| {
                let (x0, y0) = verts[k];
                let (x1, y1) = verts[(k + 1) % 3];
                (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0) > 0.0
            })
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut hits = 0;
        for _ in 0..10_000 {
            let (x, y) = (rng.gen::<f64>(), rng.gen::<f64>());
            assert_eq!(spec.contains(x, y), oracle(x, y), "({x}, {y})");
            hits += oracle(x, y) as usize;
        }
        assert!(hits > 500);
    }

    #[test]
    fn other_shapes() {
        let c = (0.5, 0.5);
        let star = ShapeSpec::star(c, 0.25);
        assert!(star.contains(0.5 + 0.34, 0.5));
        assert!(!star.contains(0.5 + 0.16 * (PI / 5.0).cos(), 0.5 + 0.16 * (PI / 5.0).sin()));
        let hex = ShapeSpec::hexagon_incomplete(c, 0.3);
        assert!(!hex.contains(0.5 + 0.2 * (PI / 6.0).cos(), 0.5 + 0.2 * (PI / 6.0).sin()));
        assert!(hex.contains(0.5 - 0.2, 0.5));
        let cr = ShapeSpec::crescent(c, 0.3);
        assert!(!cr.contains(0.5, 0.5));
        assert!(cr.contains(0.25, 0.5));
        for s in [star, hex, cr] {
            assert!(s.validate(&Grid::square(64, 1.0).unwrap(), 0.02).is_ok());
        }
    }

    #[test]
    fn tanh_profile_properties() {
        let g = Grid::square(64, 1.0).unwrap();
        let eps = 0.03125;
        let phi = tanh_ellipse(&ShapeSpec::circle((0.5, 0.5), 0.3), &g, eps).unwrap();
        assert!(phi.values().iter().all(|v| v.abs() < 1.0));
        assert!(phi.get(32, 32) > 0.999);
        // 90 degree rotation symmetry
        let n = g.n();
        for i in 0..n {
            for j in 0..n {
                assert!((phi.get(i, j) - phi.get(n - 1 - j, i)).abs() < 1e-13);
            }
        }
        assert!(tanh_ellipse(&ShapeSpec::star((0.5, 0.5), 0.2), &g, eps).is_err());
    }

    #[test]
    fn psi_profiles() {
        let g = Grid::square(4, 1.0).unwrap();
        let one = ScalarField::constant(g, 1.0);
        assert!((psi_from_phi(&one, -0.35, 0.45).get(0, 0) - 0.10).abs() < 1e-15);
        assert!((psi_from_phi(&one.map(|v| -v), -0.1, 0.7).get(0, 0) - 0.80).abs() < 1e-15);
        assert_eq!(psi_from_phi(&one, 0.0, 0.3).get(1, 2), 0.3);
    }

    #[test]
    fn smoothing_conserves_mass_and_fixes_uniform_state() {
        let g = Grid::square(64, 1.0).unwrap();
        let solver = SpectralSolver::new(g);
        let sharp = sharp_indicator(&ShapeSpec::circle((0.45, 0.5), 0.25), &g).unwrap();
        let out = smooth_ic_with(&sharp, 0.03125, SmoothingSettings::default(), &solver).unwrap();
        assert!(out.mass_drift < 1e-10);
        assert!(out.energy_nonincreasing(), "{:?}", out.energies);
        assert!(out.phi.values().iter().all(|v| v.abs() <= 1.0));
        let ones = ScalarField::constant(g, 1.0);
        let same = smooth_ic_with(&ones, 0.03125, SmoothingSettings::default(), &solver).unwrap();
        assert!(same.phi.values().iter().all(|v| (*v - 1.0).abs() < 1e-14));
        let nan = ScalarField::constant(g, f64::NAN);
        assert!(smooth_ic(&nan, 0.03).is_err());
    }

    #[test]
    fn smoothing_barely_moves_tanh_profile() {
        let g = Grid::square(128, 1.0).unwrap();
        let eps = 0.03125;
        let phi = tanh_ellipse(&ShapeSpec::ellipse((0.5, 0.5), 0.3, 0.2), &g, eps).unwrap();
        let out = smooth_ic(&phi, eps).unwrap();
        assert!(out.lincomb(1.0, &phi, -1.0).unwrap().max_abs() < 1e-2);
    }
}
