//! Fixed-step timing runs comparing the DCT and PCG Cahn-Hilliard solves.

use crate::error::Result;
use crate::scenario::Scenario;
use crate::stepper::{Scheme, SimState, StageTimings, StepperOptions};

/// Timings of one `(N, scheme)` run.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub n: usize,
    pub scheme: Scheme,
    pub steps: usize,
    pub totals: StageTimings,
    pub per_step: Vec<StageTimings>,
    /// PCG iterations per step, summed over both CH solves.
    pub pcg_iters: Vec<usize>,
    /// Iterations of each individual PCG solve.
    pub pcg_per_solve: Vec<usize>,
}

impl BenchRecord {
    pub fn ch_fraction(&self) -> f64 {
        self.totals.ch_solve / self.totals.total
    }

    pub fn ch_per_step(&self) -> f64 {
        self.totals.ch_solve / self.steps.max(1) as f64
    }

    pub fn total_per_step(&self) -> f64 {
        self.totals.total / self.steps.max(1) as f64
    }

    pub fn mean_pcg_per_solve(&self) -> f64 {
        if self.pcg_per_solve.is_empty() {
            0.0
        } else {
            self.pcg_per_solve.iter().sum::<usize>() as f64 / self.pcg_per_solve.len() as f64
        }
    }

    pub const CSV_HEADER: &'static str =
        "N,scheme,steps,total_seconds,ch_seconds,ch_per_step,ch_fraction,mean_pcg_iters_per_solve,min_pcg_iters,max_pcg_iters";

    pub fn csv_line(&self) -> String {
        let min = self.pcg_per_solve.iter().min().copied().unwrap_or(0);
        let max = self.pcg_per_solve.iter().max().copied().unwrap_or(0);
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.n,
            self.scheme.name(),
            self.steps,
            self.totals.total,
            self.totals.ch_solve,
            self.ch_per_step(),
            self.ch_fraction(),
            self.mean_pcg_per_solve(),
            min,
            max
        )
    }
}

/// Runs `steps` steps of `scheme` on an `n x n` grid without diagnostics.
pub fn run_benchmark(
    scenario: &Scenario,
    n: usize,
    dt: f64,
    steps: usize,
    scheme: Scheme,
) -> Result<BenchRecord> {
    let sc = scenario.with_scheme(scheme);
    let init = sc.initial(n)?;
    let stepper = sc.stepper(&init, dt, StepperOptions::lean())?;
    let mut state = SimState::new(init.phi, init.psi, &init.params)?;
    let mut rec = BenchRecord {
        n,
        scheme,
        steps,
        totals: StageTimings::default(),
        per_step: Vec::with_capacity(steps),
        pcg_iters: Vec::with_capacity(steps),
        pcg_per_solve: Vec::with_capacity(2 * steps),
    };
    for _ in 0..steps {
        let r = stepper.step(&mut state)?;
        rec.totals.accumulate(&r.timings);
        rec.per_step.push(r.timings);
        rec.pcg_iters.push(r.pcg_total());
        if r.pcg_total() > 0 {
            rec.pcg_per_solve.extend_from_slice(&r.pcg_iters);
        }
    }
    Ok(rec)
}

/// Classical over CC time ratios at one grid size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Speedup {
    pub n: usize,
    pub total: f64,
    pub ch: f64,
}

impl Speedup {
    pub fn between(cc: &BenchRecord, classical: &BenchRecord) -> Self {
        Self {
            n: cc.n,
            total: classical.totals.total / cc.totals.total,
            ch: classical.totals.ch_solve / cc.totals.ch_solve,
        }
    }
}
