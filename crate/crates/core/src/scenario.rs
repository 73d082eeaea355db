//! Reproducible run setups: geometry, initial data and parameters as a
//! function of the grid size.

use crate::energy::PhysParams;
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::init::{psi_from_phi, sharp_indicator, smooth_ic_with, tanh_ellipse, ShapeSpec, SmoothingSettings};
use crate::spectral::SpectralSolver;
use crate::stepper::{Scheme, SimState, StepReport, Stepper, StepperOptions};

/// How the initial phase field is built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IcKind {
    /// Closed-form tanh profile (ellipses only).
    Tanh,
    /// Sharp indicator followed by Cahn-Hilliard smoothing.
    Smoothed(SmoothingSettings),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    /// Side length of the square domain.
    pub length: f64,
    pub params: PhysParams,
    /// Set `params.a_target` from the initial phase field (so `U^0 = 0`).
    pub target_from_ic: bool,
    pub shape: ShapeSpec,
    pub ic: IcKind,
    /// `psi^0 = a phi^0 + b`.
    pub psi_profile: (f64, f64),
    pub scheme: Scheme,
}

/// Initial data on one grid.
#[derive(Debug, Clone)]
pub struct Initial {
    pub grid: Grid,
    pub phi: ScalarField,
    pub psi: ScalarField,
    pub params: PhysParams,
}

impl Default for Scenario {
    fn default() -> Self {
        Self::growth()
    }
}

impl Scenario {
    /// Growth benchmark: smooth ellipse, `psi^0 = -0.35 phi^0 + 0.45`.
    pub fn growth() -> Self {
        Self {
            length: 1.0,
            params: PhysParams::default(),
            target_from_ic: true,
            shape: ShapeSpec::ellipse((0.5, 0.5), 0.3, 0.2),
            ic: IcKind::Tanh,
            psi_profile: (-0.35, 0.45),
            scheme: Scheme::CC_BDF2,
        }
    }

    /// Convergence-test setup: growth geometry with softened penalties
    /// `gamma_in = gamma_out = gamma_area = 100` and `psi_in = 0.1`.
    pub fn convergence() -> Self {
        let mut s = Self::growth();
        s.params.gamma_in = 100.0;
        s.params.gamma_out = 100.0;
        s.params.gamma_area = 100.0;
        s.params.psi_in = 0.1;
        s
    }

    /// Shrinkage run for an arbitrary shape, smoothed from a sharp indicator.
    pub fn shrinkage(shape: ShapeSpec) -> Self {
        Self {
            length: 1.0,
            params: PhysParams::shrinkage(),
            target_from_ic: true,
            shape,
            ic: IcKind::Smoothed(SmoothingSettings::default()),
            psi_profile: (-0.1, 0.7),
            scheme: Scheme::CC_BDF2,
        }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn grid(&self, n: usize) -> Result<Grid> {
        Grid::square(n, self.length)
    }

    pub fn initial(&self, n: usize) -> Result<Initial> {
        let grid = self.grid(n)?;
        let eps = self.params.eps;
        self.shape.validate(&grid, eps)?;
        let phi = match self.ic {
            IcKind::Tanh => tanh_ellipse(&self.shape, &grid, eps)?,
            IcKind::Smoothed(settings) => {
                let sharp = sharp_indicator(&self.shape, &grid)?;
                let solver = SpectralSolver::new(grid);
                let out = smooth_ic_with(&sharp, eps, settings, &solver)?;
                if !out.energy_nonincreasing() {
                    log::warn!("smoothing energy increased: {:?}", out.energies);
                }
                log::debug!("smoothing mass drift {:e}", out.mass_drift);
                out.phi
            }
        };
        let psi = psi_from_phi(&phi, self.psi_profile.0, self.psi_profile.1);
        let params = if self.target_from_ic {
            self.params.with_target_from(&phi)
        } else {
            self.params
        };
        params.validate()?;
        Ok(Initial {
            grid,
            phi,
            psi,
            params,
        })
    }

    pub fn stepper(&self, init: &Initial, dt: f64, options: StepperOptions) -> Result<Stepper> {
        Ok(Stepper::new(init.grid, init.params, dt, self.scheme)?.with_options(options))
    }

    /// Runs `steps` steps on an `n x n` grid, calling `observe` after each.
    pub fn run_with(
        &self,
        n: usize,
        dt: f64,
        steps: usize,
        options: StepperOptions,
        mut observe: impl FnMut(&SimState, &StepReport) -> Result<()>,
    ) -> Result<SimState> {
        let init = self.initial(n)?;
        let stepper = self.stepper(&init, dt, options)?;
        let mut state = SimState::new(init.phi, init.psi, &init.params)?;
        for _ in 0..steps {
            let report = stepper.step(&mut state)?;
            observe(&state, &report)?;
        }
        Ok(state)
    }

    /// Final state after `steps` steps without diagnostics.
    pub fn run(&self, n: usize, dt: f64, steps: usize) -> Result<SimState> {
        self.run_with(n, dt, steps, StepperOptions::lean(), |_, _| Ok(()))
    }
}

/// Number of steps of size `dt` reaching `t_final`; errors unless it divides evenly.
pub fn step_count(t_final: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(t_final >= 0.0) {
        return Err(Error::config("dt", format!("need dt > 0 and t_final >= 0, got {dt}, {t_final}")));
    }
    let k = (t_final / dt).round();
    if (k * dt - t_final).abs() > 1e-9 * t_final.max(dt) {
        return Err(Error::config(
            "t_final",
            format!("{t_final} is not a multiple of dt = {dt}"),
        ));
    }
    Ok(k as usize)
}
