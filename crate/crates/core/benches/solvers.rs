use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use std::time::Duration;
use vesiclecc_core::scenario::Scenario;
use vesiclecc_core::stepper::{Scheme, SimState, Stepper, StepperOptions};

/// Stepper and a state two steps in, so the measured step is a BDF2 step.
fn warm(scheme: Scheme, n: usize) -> (Stepper, SimState) {
    let sc = Scenario::growth().with_scheme(scheme);
    let init = sc.initial(n).unwrap();
    let stepper = sc.stepper(&init, 1e-6, StepperOptions::lean()).unwrap();
    let mut state = SimState::new(init.phi, init.psi, &init.params).unwrap();
    for _ in 0..2 {
        stepper.step(&mut state).unwrap();
    }
    (stepper, state)
}

fn schemes(c: &mut Criterion) {
    let mut g = c.benchmark_group("step");
    g.sample_size(10).measurement_time(Duration::from_secs(5));
    for n in [128, 256] {
        for scheme in [Scheme::CC_BDF2, Scheme::CLASSICAL_BDF2] {
            let (stepper, state) = warm(scheme, n);
            g.bench_with_input(BenchmarkId::new(scheme.name(), n), &n, |b, _| {
                b.iter_batched(
                    || state.clone(),
                    |mut s| stepper.step(&mut s).unwrap(),
                    BatchSize::LargeInput,
                )
            });
        }
    }
    g.finish();
}

fn threads(c: &mut Criterion) {
    let mut g = c.benchmark_group("threads");
    g.sample_size(10).measurement_time(Duration::from_secs(5));
    let n = 256;
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    for scheme in [Scheme::CC_BDF2, Scheme::CLASSICAL_BDF2] {
        let (stepper, state) = warm(scheme, n);
        g.bench_function(BenchmarkId::new(format!("{}/pool", scheme.name()), n), |b| {
            b.iter_batched(
                || state.clone(),
                |mut s| stepper.step(&mut s).unwrap(),
                BatchSize::LargeInput,
            )
        });
        g.bench_function(BenchmarkId::new(format!("{}/one_thread", scheme.name()), n), |b| {
            b.iter_batched(
                || state.clone(),
                |mut s| single.install(|| stepper.step(&mut s).unwrap()),
                BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

criterion_group!(benches, schemes, threads);
criterion_main!(benches);
