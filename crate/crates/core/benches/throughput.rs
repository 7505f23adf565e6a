use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use polqkd_core::chip::PhaseSettings;
use polqkd_core::exec::Execution;
use polqkd_core::harness::{run_recovery_trials, run_stability, Scenario, ScenarioKind};
use polqkd_core::link::{sample_tally_at, DetectorConfig};
use polqkd_core::reference::ReferenceRun;

const POLICIES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn monte_carlo_tally(c: &mut Criterion) {
    let run = ReferenceRun::at_distance(50.0).unwrap();
    let (src, chan, det) = (run.source(), run.channel(), DetectorConfig::default());
    let settings = PhaseSettings::ideal().into();
    let mut g = c.benchmark_group("mc_tally_200s");
    g.sample_size(10);
    for (name, exec) in POLICIES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| sample_tally_at(&src, &chan, &det, &settings, 0.0, black_box(200.0), 1, exec).unwrap())
        });
    }
    g.finish();
}

fn stability_windows(c: &mut Criterion) {
    let mut s = Scenario::defaults(ScenarioKind::Stability);
    s.mode = polqkd_core::harness::Mode::Mc;
    s.seed = Some(1);
    s.duration_s = 3600.0;
    s.window_s = 10.0;
    let mut g = c.benchmark_group("stability_mc_360_windows");
    g.sample_size(10);
    for (name, exec) in POLICIES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| run_stability(black_box(&s), exec).unwrap())
        });
    }
    g.finish();
}

fn recovery_trials(c: &mut Criterion) {
    let mut s = Scenario::defaults(ScenarioKind::Scramble);
    s.seed = Some(2);
    let mut g = c.benchmark_group("recovery_trials_50");
    g.sample_size(10);
    for (name, exec) in POLICIES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| run_recovery_trials(black_box(&s), 50, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, monte_carlo_tally, stability_windows, recovery_trials);
criterion_main!(benches);
