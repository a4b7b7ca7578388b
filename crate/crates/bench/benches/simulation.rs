use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use repair_timer::checkers::run_monitors;
use repair_timer::experiment::{params_for, random_start, run_until_stable};
use repair_timer::fault::{inject, FaultSpec};
use repair_timer::scheduler::execute_step;
use repair_timer::*;

fn steps(c: &mut Criterion) {
    let topo = Topology::grid(4, 4).unwrap();
    let params = params_for(&topo, 11).unwrap();
    let init = random_start(&topo, &params, 1);
    c.bench_function("execute_step/grid4x4 x1000", |b| {
        b.iter_batched(
            || init.clone(),
            |mut s| {
                for i in 0..1000 {
                    black_box(execute_step(&topo, &params, &mut s, i % topo.n()));
                }
                s
            },
            BatchSize::SmallInput,
        )
    });
}

fn runs(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_until_stable");
    group.sample_size(20);
    for n in [7, 9] {
        let topo = Topology::ring(n).unwrap();
        let params = params_for(&topo, 11).unwrap();
        group.bench_function(format!("ring:{n}"), |b| {
            b.iter_batched(
                || random_start(&topo, &params, 3),
                |init| run_until_stable(&topo, &params, init, SchedulerPolicy::new(PolicyKind::SeededRandom, 3, 8), 5000),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

fn monitors(c: &mut Criterion) {
    let topo = Topology::grid(4, 4).unwrap();
    let params = params_for(&topo, 11).unwrap();
    let base = SystemState::timer_final(&topo, &params);
    let inj = inject(&topo, &params, &base, &FaultSpec::count(4, 2)).unwrap();
    let tr = run_until_stable(&topo, &params, inj.state, SchedulerPolicy::new(PolicyKind::SeededRandom, 2, 8), 5000);
    let ctx = RunContext::for_trace(&tr);
    let mut group = c.benchmark_group("run_monitors");
    group.sample_size(20);
    group.bench_function("grid4x4 k=4 all", |b| b.iter(|| run_monitors(black_box(&tr), &ctx)));
    group.finish();
}

criterion_group!(benches, steps, runs, monitors);
criterion_main!(benches);
