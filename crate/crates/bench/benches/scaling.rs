use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ganf_core::bench::{random_batch, ScalingCell};
use ganf_core::dag::acyclicity;
use ganf_core::data::MultiSeriesWindow;
use ganf_core::train::{TrainConfig, TrainState};
use ganf_core::Tensor;

fn config() -> TrainConfig {
    TrainConfig { hidden_dim: 16, flow_hidden: 16, flow_blocks: 2, ..TrainConfig::default() }
}

fn step(c: &mut Criterion, group: &str, cells: &[ScalingCell], label: fn(&ScalingCell) -> usize) {
    let cfg = config();
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    for cell in cells {
        let windows = random_batch(cell, 0);
        let batch: Vec<&MultiSeriesWindow> = windows.iter().collect();
        let mut state = TrainState::new(cell.n, cell.d, &cfg).unwrap();
        state.lagrangian.c = 1.0;
        g.bench_with_input(BenchmarkId::from_parameter(label(cell)), cell, |b, _| {
            b.iter(|| state.step(&batch, &cfg).unwrap())
        });
    }
    g.finish();
}

fn step_vs_t(c: &mut Criterion) {
    let cells: Vec<_> = [10, 20, 40, 80].map(|t| ScalingCell { n: 8, t, d: 1, batch: 16 }).into();
    step(c, "step_vs_t", &cells, |c| c.t);
}

fn step_vs_n(c: &mut Criterion) {
    let cells: Vec<_> = [4, 8, 16, 32].map(|n| ScalingCell { n, t: 20, d: 1, batch: 16 }).into();
    step(c, "step_vs_n", &cells, |c| c.n);
}

fn expm(c: &mut Criterion) {
    let mut g = c.benchmark_group("acyclicity");
    for n in [8, 32, 128] {
        let a = Tensor::new(vec![n, n], (0..n * n).map(|k| ((k * 37 % 101) as f64 - 50.0) / (50.0 * n as f64)).collect()).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &a, |b, a| b.iter(|| acyclicity(a).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, step_vs_t, step_vs_n, expm);
criterion_main!(benches);
