//! Time series, field comparison and convergence studies.

use std::fmt;

use crate::energy::{energy_components, PhysParams};
use crate::error::{Error, Result};
use crate::grid::{inner_unchecked, Grid, ScalarField};
use crate::par::*;
use crate::scenario::{step_count, Scenario};
use crate::stepper::{SimState, StepReport};

/// One recorded step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TimeSeriesRow {
    pub step: usize,
    pub t: f64,
    pub f_surf: f64,
    pub f_bend: f64,
    pub f_area: f64,
    pub f_osm: f64,
    pub f_total: f64,
    /// Modified energy; NaN before it is defined or when not tracked.
    pub e_mod: f64,
    pub mass_phi: f64,
    pub mass_psi: f64,
    pub arc_length: f64,
    pub v: f64,
    pub u: f64,
    pub w: f64,
    pub z: f64,
    /// NaN when residuals were not computed.
    pub ac_residual: f64,
    pub ch_residual: f64,
    pub ch_solver_seconds: f64,
    pub pcg_iters: usize,
}

impl TimeSeriesRow {
    pub const HEADER: &'static str = "step,t,F_surf,F_bend,F_area,F_osm,F_total,E_mod,mass_phi,mass_psi,arc_length,V,U,W,Z,ac_residual,ch_residual,ch_solver_seconds,pcg_iters";

    /// Row for `state`, with solver data from `report` when available.
    pub fn record(
        state: &SimState,
        report: Option<&StepReport>,
        params: &PhysParams,
    ) -> Result<Self> {
        let e = energy_components(&state.phi_n, &state.psi_n, params)?;
        let mut row = Self {
            step: state.step,
            t: state.t,
            f_surf: e.f_surf,
            f_bend: e.f_bend,
            f_area: e.f_area,
            f_osm: e.f_osm,
            f_total: e.f_total,
            e_mod: state.modified_energy().unwrap_or(f64::NAN),
            mass_phi: state.phi_n.mass(),
            mass_psi: state.psi_n.mass(),
            arc_length: e.arc_length,
            v: state.sav_n.v,
            u: state.sav_n.u,
            w: state.sav_n.w,
            z: state.sav_n.z,
            ac_residual: f64::NAN,
            ch_residual: f64::NAN,
            ch_solver_seconds: 0.0,
            pcg_iters: 0,
        };
        if let Some(r) = report {
            row.ac_residual = r.ac_residual.unwrap_or(f64::NAN);
            row.ch_residual = r.ch_residual.unwrap_or(f64::NAN);
            row.ch_solver_seconds = r.timings.ch_solve;
            row.pcg_iters = r.pcg_total();
        }
        Ok(row)
    }
}

impl fmt::Display for TimeSeriesRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.t,
            self.f_surf,
            self.f_bend,
            self.f_area,
            self.f_osm,
            self.f_total,
            self.e_mod,
            self.mass_phi,
            self.mass_psi,
            self.arc_length,
            self.v,
            self.u,
            self.w,
            self.z,
            self.ac_residual,
            self.ch_residual,
            self.ch_solver_seconds,
            self.pcg_iters
        )
    }
}

/// Flags steps where the modified energy grows by more than `1e-10 |E|`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnergyMonitor {
    last: Option<f64>,
    /// `(step, E_new - E_old)` of every flagged step.
    pub violations: Vec<(usize, f64)>,
    /// Largest `(E_new - E_old) / |E_old|` seen.
    pub max_relative_increase: f64,
}

impl EnergyMonitor {
    pub const TOLERANCE: f64 = 1e-10;

    pub fn new() -> Self {
        Self {
            max_relative_increase: f64::NEG_INFINITY,
            ..Self::default()
        }
    }

    pub fn observe(&mut self, step: usize, e_mod: f64) {
        if let Some(prev) = self.last {
            let inc = e_mod - prev;
            let rel = inc / prev.abs().max(f64::MIN_POSITIVE);
            self.max_relative_increase = self.max_relative_increase.max(rel);
            if inc > Self::TOLERANCE * prev.abs() {
                self.violations.push((step, inc));
            }
        }
        self.last = Some(e_mod);
    }

    pub fn is_monotone(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldDiff {
    pub l2: f64,
    pub linf: f64,
    /// `||a - b|| / ||b||`.
    pub rel_l2: f64,
}

/// Discrete `L2`, max and relative `L2` norms of `a - b`.
pub fn compare_fields(a: &ScalarField, b: &ScalarField) -> Result<FieldDiff> {
    let d = a.lincomb(1.0, b, -1.0)?;
    let l2 = inner_unchecked(&d, &d).sqrt();
    let nb = inner_unchecked(b, b).sqrt();
    Ok(FieldDiff {
        l2,
        linf: d.max_abs(),
        rel_l2: if nb > 0.0 { l2 / nb } else if l2 == 0.0 { 0.0 } else { f64::INFINITY },
    })
}

/// Cubic interpolation of a field on a `2m x 2n` grid to the cell centers of
/// the `m x n` grid covering the same domain.
///
/// Coarse centers sit midway between two fine centers in each direction, so
/// the tensor-product cubic uses weights `(-1, 9, 9, -1) / 16`; the stencil
/// is mirrored at the boundary.
pub fn restrict_bicubic(fine: &ScalarField) -> Result<ScalarField> {
    let fg = fine.grid();
    if fg.m() % 2 != 0 || fg.n() % 2 != 0 {
        return Err(Error::GridMismatch(format!(
            "restriction needs even dimensions, got {}x{}",
            fg.m(),
            fg.n()
        )));
    }
    let coarse = Grid::new(fg.m() / 2, fg.n() / 2, 2.0 * fg.h())?;
    let (fm, fnn) = (fg.m() as isize, fg.n() as isize);
    let mirror = |k: isize, len: isize| -> usize {
        if k < 0 {
            (-k - 1) as usize
        } else if k >= len {
            (2 * len - k - 1) as usize
        } else {
            k as usize
        }
    };
    const W: [f64; 4] = [-1.0 / 16.0, 9.0 / 16.0, 9.0 / 16.0, -1.0 / 16.0];
    // rows first: fine (2m) x coarse n
    let cn = coarse.n();
    let fv = fine.values();
    let mut half = vec![0.0; fg.m() * cn];
    half.par_chunks_mut(cn).enumerate().for_each(|(i, row)| {
        let src = &fv[i * fg.n()..(i + 1) * fg.n()];
        for (j, out) in row.iter_mut().enumerate() {
            let base = 2 * j as isize - 1;
            *out = (0..4).map(|k| W[k] * src[mirror(base + k as isize, fnn)]).sum();
        }
    });
    let mut out = vec![0.0; coarse.len()];
    out.par_chunks_mut(cn).enumerate().for_each(|(i, row)| {
        let base = 2 * i as isize - 1;
        let rows: [usize; 4] = std::array::from_fn(|k| mirror(base + k as isize, fm));
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..4).map(|k| W[k] * half[rows[k] * cn + j]).sum();
        }
    });
    ScalarField::from_vec(coarse, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyKind {
    Temporal,
    Spatial,
    RefinementPath,
}

impl StudyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StudyKind::Temporal => "temporal",
            StudyKind::Spatial => "spatial",
            StudyKind::RefinementPath => "refinement_path",
        }
    }
}

/// Error between one level and the next finer one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceLevel {
    /// Grid size of the coarser member.
    pub n: usize,
    /// Time step of the coarser member.
    pub dt: f64,
    pub err_phi: f64,
    pub err_psi: f64,
    /// `sqrt(err_phi^2 + err_psi^2)`.
    pub err_combined: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rate {
    pub phi: f64,
    pub psi: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub kind: StudyKind,
    pub t_final: f64,
    pub levels: Vec<ConvergenceLevel>,
    /// `log2(e_k / e_{k+1})` between consecutive levels.
    pub rates: Vec<Rate>,
}

impl ConvergenceReport {
    fn new(kind: StudyKind, t_final: f64, levels: Vec<ConvergenceLevel>) -> Self {
        let rates = levels
            .windows(2)
            .map(|w| Rate {
                phi: (w[0].err_phi / w[1].err_phi).log2(),
                psi: (w[0].err_psi / w[1].err_psi).log2(),
                combined: (w[0].err_combined / w[1].err_combined).log2(),
            })
            .collect();
        Self {
            kind,
            t_final,
            levels,
            rates,
        }
    }

    pub const CSV_HEADER: &'static str =
        "N,dt,err_phi,err_psi,err_combined,rate_phi,rate_psi,rate_combined";

    /// One line per level; rates belong to the pair (level, next level).
    pub fn csv_lines(&self) -> Vec<String> {
        self.levels
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let r = self.rates.get(k);
                let f = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
                format!(
                    "{},{},{},{},{},{},{},{}",
                    l.n,
                    l.dt,
                    l.err_phi,
                    l.err_psi,
                    l.err_combined,
                    f(r.map(|r| r.phi)),
                    f(r.map(|r| r.psi)),
                    f(r.map(|r| r.combined))
                )
            })
            .collect()
    }
}

impl fmt::Display for ConvergenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} study to T = {}", self.kind.name(), self.t_final)?;
        writeln!(
            f,
            "{:>6} {:>12} {:>12} {:>12} {:>12} {:>7} {:>7} {:>7}",
            "N", "dt", "e_phi", "e_psi", "e_comb", "p_phi", "p_psi", "p_comb"
        )?;
        for (k, l) in self.levels.iter().enumerate() {
            write!(
                f,
                "{:>6} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
                l.n, l.dt, l.err_phi, l.err_psi, l.err_combined
            )?;
            if let Some(r) = self.rates.get(k) {
                write!(f, " {:>7.3} {:>7.3} {:>7.3}", r.phi, r.psi, r.combined)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// A study that stopped early; `partial` holds the levels completed before
/// the first failed run.
#[derive(Debug)]
pub struct StudyFailure {
    pub partial: ConvergenceReport,
    pub error: Error,
}

impl fmt::Display for StudyFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} study failed after {} level(s): {}",
            self.partial.kind.name(),
            self.partial.levels.len(),
            self.error
        )
    }
}

impl std::error::Error for StudyFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

pub type StudyResult = std::result::Result<ConvergenceReport, StudyFailure>;

/// Runs the members `(n, dt)` to `t_final`, in parallel when enabled.
fn run_members(
    scenario: &Scenario,
    members: &[(usize, f64)],
    t_final: f64,
) -> Vec<Result<SimState>> {
    members
        .to_vec()
        .into_par_iter()
        .map(|(n, dt)| {
            let steps = step_count(t_final, dt)?;
            log::info!("study member N = {n}, dt = {dt:e}, {steps} steps");
            scenario.run(n, dt, steps)
        })
        .collect()
}

fn level(n: usize, dt: f64, coarse: &SimState, fine: &SimState, restrict: bool) -> Result<ConvergenceLevel> {
    let (phi_f, psi_f) = if restrict {
        (restrict_bicubic(&fine.phi_n)?, restrict_bicubic(&fine.psi_n)?)
    } else {
        (fine.phi_n.clone(), fine.psi_n.clone())
    };
    let err_phi = compare_fields(&coarse.phi_n, &phi_f)?.l2;
    let err_psi = compare_fields(&coarse.psi_n, &psi_f)?.l2;
    Ok(ConvergenceLevel {
        n,
        dt,
        err_phi,
        err_psi,
        err_combined: err_phi.hypot(err_psi),
    })
}

fn assemble(
    kind: StudyKind,
    t_final: f64,
    members: &[(usize, f64)],
    runs: Vec<Result<SimState>>,
) -> StudyResult {
    let restrict = kind != StudyKind::Temporal;
    let mut levels = Vec::new();
    let mut states: Vec<SimState> = Vec::with_capacity(runs.len());
    for run in runs {
        match run.and_then(|s| {
            if let Some(prev) = states.last() {
                let (n, dt) = members[states.len() - 1];
                levels.push(level(n, dt, prev, &s, restrict)?);
            }
            Ok(s)
        }) {
            Ok(s) => states.push(s),
            Err(error) => {
                return Err(StudyFailure {
                    partial: ConvergenceReport::new(kind, t_final, levels),
                    error,
                })
            }
        }
    }
    Ok(ConvergenceReport::new(kind, t_final, levels))
}

/// Cauchy study on a fixed grid: level `k` compares `dt_k` with `dt_k / 2`.
pub fn temporal_cauchy_study(
    scenario: &Scenario,
    n: usize,
    dt_list: &[f64],
    t_final: f64,
) -> StudyResult {
    let mut members: Vec<(usize, f64)> = dt_list.iter().map(|&dt| (n, dt)).collect();
    if let Some(&last) = dt_list.last() {
        members.push((n, 0.5 * last));
    }
    let runs = run_members(scenario, &members, t_final);
    assemble(StudyKind::Temporal, t_final, &members, runs)
}

/// Fixed `dt`; level `k` compares grid `N_k` with the restriction of `2 N_k`.
pub fn spatial_study(scenario: &Scenario, n_list: &[usize], dt: f64, t_final: f64) -> StudyResult {
    let members: Vec<(usize, f64)> = n_list.iter().map(|&n| (n, dt)).collect();
    let runs = run_members(scenario, &members, t_final);
    assemble(StudyKind::Spatial, t_final, &members, runs)
}

/// `dt = c h` with `N` doubling from `n0` to `n_max`.
pub fn refinement_path_study(
    scenario: &Scenario,
    n0: usize,
    n_max: usize,
    c: f64,
    t_final: f64,
) -> StudyResult {
    let mut members = Vec::new();
    let mut n = n0;
    while n <= n_max {
        members.push((n, c * scenario.length / n as f64));
        n *= 2;
    }
    let runs = run_members(scenario, &members, t_final);
    assemble(StudyKind::RefinementPath, t_final, &members, runs)
}
