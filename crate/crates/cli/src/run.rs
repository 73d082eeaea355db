//! Mode drivers and artifact writers.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use vesiclecc_core::bench::{run_benchmark, BenchRecord, Speedup};
use vesiclecc_core::diagnostics::{
    refinement_path_study, spatial_study, temporal_cauchy_study, ConvergenceReport, EnergyMonitor,
    StudyResult, TimeSeriesRow,
};
use vesiclecc_core::init::{sharp_indicator, smooth_ic_with, tanh_ellipse};
use vesiclecc_core::io::{write_ppm, write_snapshot};
use vesiclecc_core::scenario::{step_count, IcKind};
use vesiclecc_core::spectral::SpectralSolver;
use vesiclecc_core::stepper::{Formulation, SimState, StageTimings};
use vesiclecc_core::{Error, ScalarField};

use crate::config::{ConfigError, Mode, RunConfig};

#[derive(Debug)]
pub enum AppError {
    Config(ConfigError),
    Solver(Error),
    Io(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Solver(_) => 3,
            AppError::Io(_) => 1,
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Config(e) => write!(f, "configuration error: {e}"),
            AppError::Solver(e) => write!(f, "solver failure: {e}"),
            AppError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        AppError::Config(e)
    }
}

impl From<Error> for AppError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::GridMismatch(_) => AppError::Config(e.into()),
            Error::Io(err) => AppError::Io(err.to_string()),
            Error::Snapshot(msg) => AppError::Io(msg),
            other => AppError::Solver(other),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Io(e.to_string())
    }
}

type AppResult<T> = Result<T, AppError>;

struct Csv {
    path: PathBuf,
    out: BufWriter<File>,
}

impl Csv {
    fn create(path: PathBuf, header: &str) -> AppResult<Self> {
        let file = File::create(&path).map_err(|e| AppError::Io(format!("{}: {e}", path.display())))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{header}")?;
        Ok(Self { path, out })
    }

    fn row(&mut self, line: impl fmt::Display) -> AppResult<()> {
        writeln!(self.out, "{line}").map_err(|e| AppError::Io(format!("{}: {e}", self.path.display())))
    }

    fn finish(mut self) -> AppResult<()> {
        self.out.flush()?;
        Ok(())
    }
}

const TIMING_HEADER: &str = "step,explicit,ac_solve,ch_solve,sav_algebra,diagnostics,total,pcg_iters";

fn timing_line(step: usize, t: &StageTimings, pcg: usize) -> String {
    format!(
        "{step},{},{},{},{},{},{},{pcg}",
        t.explicit, t.ac_solve, t.ch_solve, t.sav_algebra, t.diagnostics, t.total
    )
}

fn write_fields(dir: &Path, step: usize, t: f64, phi: &ScalarField, psi: &ScalarField, ppm: bool) -> AppResult<()> {
    write_snapshot(dir.join(format!("phi_{step:06}.f64")), phi, t)?;
    write_snapshot(dir.join(format!("psi_{step:06}.f64")), psi, t)?;
    if ppm {
        write_ppm(dir.join(format!("phi_{step:06}.ppm")), phi)?;
    }
    Ok(())
}

/// Creates the output directory and echoes the resolved configuration.
fn prepare_output(cfg: &RunConfig, mode: Mode) -> AppResult<PathBuf> {
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| AppError::Io(format!("{}: {e}", dir.display())))?;
    let mode_name = toml::Value::try_from(mode)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    let text = format!("# mode = \"{mode_name}\"\n{}", cfg.to_toml());
    fs::write(dir.join("resolved_config.toml"), text)?;
    Ok(dir)
}

pub fn run(mode: Mode, cfg: &RunConfig) -> AppResult<()> {
    let dir = prepare_output(cfg, mode)?;
    match mode {
        Mode::Simulate => simulate(cfg, &dir),
        Mode::SmoothOnly => smooth_only(cfg, &dir),
        Mode::TemporalStudy => {
            let sc = cfg.scenario()?;
            study(&dir, temporal_cauchy_study(&sc, cfg.n, &cfg.dt_list, cfg.t_final))
        }
        Mode::SpatialStudy => {
            let sc = cfg.scenario()?;
            study(&dir, spatial_study(&sc, &cfg.n_list, cfg.dt, cfg.t_final))
        }
        Mode::RefinementStudy => {
            let sc = cfg.scenario()?;
            study(
                &dir,
                refinement_path_study(&sc, cfg.path_n0, cfg.path_nmax, cfg.path_c, cfg.t_final),
            )
        }
        Mode::Benchmark => benchmark(cfg, &dir),
    }
}

fn simulate(cfg: &RunConfig, dir: &Path) -> AppResult<()> {
    let scenario = cfg.scenario()?;
    let steps = step_count(cfg.t_final, cfg.dt)?;
    let init = scenario.initial(cfg.n)?;
    let params = init.params;
    let stepper = scenario.stepper(&init, cfg.dt, cfg.stepper_options())?;
    let mut state = SimState::new(init.phi, init.psi, &params)?;

    let mut series = Csv::create(dir.join("timeseries.csv"), TimeSeriesRow::HEADER)?;
    let mut timing = Csv::create(dir.join("timing.csv"), TIMING_HEADER)?;
    write_fields(dir, 0, 0.0, &state.phi_n, &state.psi_n, cfg.write_ppm)?;

    let mass0 = state.psi_n.mass();
    let mut monitor = EnergyMonitor::new();
    let mut identity_worst: f64 = 0.0;
    let mut totals = StageTimings::default();
    let wall = Instant::now();
    log::info!(
        "simulate: {} on {}x{}, dt = {:e}, {steps} steps",
        scenario.scheme.name(),
        cfg.n,
        cfg.n,
        cfg.dt
    );
    for k in 1..=steps {
        let report = match stepper.step(&mut state) {
            Ok(r) => r,
            Err(e) => {
                // keep what was written so far
                series.finish()?;
                timing.finish()?;
                return Err(e.into());
            }
        };
        totals.accumulate(&report.timings);
        timing.row(timing_line(k, &report.timings, report.pcg_total()))?;
        if let Some(e) = report.e_mod {
            if report.step >= 2 {
                monitor.observe(report.step, e);
            }
        }
        if let Some(r) = report.identity_residual {
            identity_worst = identity_worst.max(r);
        }
        if k % cfg.record_every == 0 || k == steps {
            series.row(TimeSeriesRow::record(&state, Some(&report), &params)?)?;
        }
        let snap = (cfg.snapshot_every > 0 && k % cfg.snapshot_every == 0) || k == steps;
        if snap {
            write_fields(dir, k, state.t, &state.phi_n, &state.psi_n, cfg.write_ppm)?;
        }
        if k % 1000 == 0 {
            log::info!("step {k}/{steps}, t = {:.6e}", state.t);
        }
    }
    series.finish()?;
    timing.finish()?;

    let drift = (state.psi_n.mass() - mass0).abs() / mass0.abs();
    println!("steps               {steps}");
    println!("final time          {}", state.t);
    println!("wall seconds        {:.3}", wall.elapsed().as_secs_f64());
    println!("CH stage fraction   {:.4}", totals.ch_solve / totals.total.max(f64::MIN_POSITIVE));
    println!("psi mass drift      {drift:e}");
    if let Some(e) = state.modified_energy() {
        println!("modified energy     {e}");
    }
    if cfg.track_energy {
        println!("energy increases    {}", monitor.violations.len());
        println!("identity residual   {identity_worst:e}");
    }
    Ok(())
}

fn smooth_only(cfg: &RunConfig, dir: &Path) -> AppResult<()> {
    let scenario = cfg.scenario()?;
    let grid = scenario.grid(cfg.n)?;
    let eps = scenario.params.eps;
    scenario.shape.validate(&grid, eps)?;
    let phi = match scenario.ic {
        IcKind::Tanh => tanh_ellipse(&scenario.shape, &grid, eps)?,
        IcKind::Smoothed(settings) => {
            let sharp = sharp_indicator(&scenario.shape, &grid)?;
            let out = smooth_ic_with(&sharp, eps, settings, &SpectralSolver::new(grid))?;
            let mut csv = Csv::create(dir.join("smoothing.csv"), "step,ch_energy")?;
            for (k, e) in out.energies.iter().enumerate() {
                csv.row(format!("{k},{e}"))?;
            }
            csv.finish()?;
            println!("smoothing steps     {}", settings.steps);
            println!("mass drift          {:e}", out.mass_drift);
            println!("energy monotone     {}", out.energy_nonincreasing());
            out.phi
        }
    };
    let psi = phi.map(|p| scenario.psi_profile.0 * p + scenario.psi_profile.1);
    write_fields(dir, 0, 0.0, &phi, &psi, cfg.write_ppm)?;
    Ok(())
}

fn write_report(dir: &Path, report: &ConvergenceReport) -> AppResult<()> {
    let mut csv = Csv::create(dir.join("convergence.csv"), ConvergenceReport::CSV_HEADER)?;
    for line in report.csv_lines() {
        csv.row(line)?;
    }
    csv.finish()?;
    print!("{report}");
    Ok(())
}

fn study(dir: &Path, result: StudyResult) -> AppResult<()> {
    match result {
        Ok(report) => write_report(dir, &report),
        Err(failure) => {
            write_report(dir, &failure.partial)?;
            Err(failure.error.into())
        }
    }
}

fn benchmark(cfg: &RunConfig, dir: &Path) -> AppResult<()> {
    let scenario = cfg.scenario()?;
    let schemes = cfg.bench_schemes()?;
    let mut summary = Csv::create(dir.join("benchmark.csv"), BenchRecord::CSV_HEADER)?;
    let mut timing = Csv::create(
        dir.join("timing.csv"),
        &format!("N,scheme,{TIMING_HEADER}"),
    )?;
    let mut speed = Csv::create(dir.join("speedup.csv"), "N,speedup_total,speedup_ch")?;
    for &n in &cfg.bench_n_list {
        let mut records = Vec::new();
        for &scheme in &schemes {
            log::info!("benchmark N = {n}, {}", scheme.name());
            let rec = run_benchmark(&scenario, n, cfg.dt, cfg.bench_steps, scheme)?;
            for (k, (t, it)) in rec.per_step.iter().zip(&rec.pcg_iters).enumerate() {
                timing.row(format!("{n},{},{}", scheme.name(), timing_line(k + 1, t, *it)))?;
            }
            summary.row(rec.csv_line())?;
            println!(
                "N={n:<5} {:<15} total {:>9.3}s  CH {:>9.3}s  CH fraction {:.3}  PCG/solve {:.1}",
                scheme.name(),
                rec.totals.total,
                rec.totals.ch_solve,
                rec.ch_fraction(),
                rec.mean_pcg_per_solve()
            );
            records.push(rec);
        }
        let cc = records.iter().find(|r| r.scheme.formulation == Formulation::ConstantCoefficient);
        let cl = records.iter().find(|r| r.scheme.formulation == Formulation::Classical);
        if let (Some(cc), Some(cl)) = (cc, cl) {
            let s = Speedup::between(cc, cl);
            speed.row(format!("{},{},{}", s.n, s.total, s.ch))?;
            println!("N={n:<5} speedup total {:.2}x, CH {:.2}x", s.total, s.ch);
        }
    }
    summary.finish()?;
    timing.finish()?;
    speed.finish()?;
    Ok(())
}
