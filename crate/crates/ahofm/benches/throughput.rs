//! Throughput of the row-chunked kernels on the default rayon pool versus a
//! single-thread pool. The single-thread numbers track the sequential
//! fallback (same chunk layout, same fold order), so the pair shows what the
//! `parallel` feature buys on this machine.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ahofm::basis::{build_basis, difference_penalty, eval_design};
use ahofm::sim::{simulate, SimSpec};
use ahofm::smoothing::homogeneous_smoothing;
use ahofm::trainer::{init_params, LossKind, ParamLayout, Problem, TrainConfig};
use ahofm::{fit, ModelConfig};

/// A training problem big enough that per-row work dominates chunk overhead.
struct GradientFixture {
    designs: Vec<Array2<f64>>,
    penalties: Vec<ahofm::PenaltyMatrix>,
    y: Vec<f64>,
    layout: ParamLayout,
    params: Vec<f64>,
    rows: Vec<usize>,
}

impl GradientFixture {
    fn build(n: usize, p: usize, m: usize, factors: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let columns: Vec<Vec<f64>> = (0..p)
            .map(|_| (0..n).map(|_| rng.random::<f64>()).collect())
            .collect();
        let designs: Vec<Array2<f64>> = columns
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let basis = build_basis(c, m, 3, j).expect("basis");
                eval_design(&basis, c).expect("design")
            })
            .collect();
        let penalties: Vec<_> = (0..p)
            .map(|_| difference_penalty(m, 2).expect("penalty"))
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                columns.iter().map(|c| (3.0 * c[i]).sin()).sum::<f64>()
                    + columns[0][i] * columns[1][i]
                    + 0.2 * rng.random::<f64>()
            })
            .collect();
        let layout = ParamLayout {
            num_features: p,
            num_basis: m,
            factor_counts: vec![factors],
        };
        let params = init_params(&layout, LossKind::SquaredError, &y, 0.1, &mut rng);
        GradientFixture {
            designs,
            penalties,
            y,
            layout,
            params,
            rows: (0..n).collect(),
        }
    }

    fn problem<'a>(&'a self, plan: &'a ahofm::smoothing::SmoothingPlan) -> Problem<'a> {
        Problem {
            designs: &self.designs,
            y: &self.y,
            loss: LossKind::SquaredError,
            layout: self.layout.clone(),
            plan,
            penalties: &self.penalties,
        }
    }
}

fn single_thread_pool() -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("pool")
}

fn bench_full_gradient(c: &mut Criterion) {
    let fx = GradientFixture::build(40_000, 6, 8, 5);
    let plan = homogeneous_smoothing(&fx.designs, &fx.penalties, &[6.0, 6.0]).expect("plan");
    let problem = fx.problem(&plan);
    let single = single_thread_pool();

    let mut group = c.benchmark_group("full_gradient_n40k_p6");
    group.sample_size(20);
    group.bench_function("default-pool", |b| {
        b.iter(|| black_box(problem.full_gradient(&fx.params, &fx.rows, 1.0)))
    });
    group.bench_function("single-thread-pool", |b| {
        single.install(|| b.iter(|| black_box(problem.full_gradient(&fx.params, &fx.rows, 1.0))))
    });
    group.finish();
}

fn bench_eta(c: &mut Criterion) {
    let fx = GradientFixture::build(40_000, 6, 8, 5);
    let plan = homogeneous_smoothing(&fx.designs, &fx.penalties, &[6.0, 6.0]).expect("plan");
    let problem = fx.problem(&plan);
    let single = single_thread_pool();

    let mut group = c.benchmark_group("eta_all_n40k_p6");
    group.sample_size(30);
    group.bench_function("default-pool", |b| {
        b.iter(|| black_box(problem.eta_all(&fx.params, &fx.rows)))
    });
    group.bench_function("single-thread-pool", |b| {
        single.install(|| b.iter(|| black_box(problem.eta_all(&fx.params, &fx.rows))))
    });
    group.finish();
}

fn bench_predict(c: &mut Criterion) {
    let sim = simulate(&SimSpec::new(30_000, 6, 1.0, 4)).expect("simulate");
    let cfg = ModelConfig::with_degree(2, 5);
    let train = TrainConfig {
        max_epochs: 3,
        ..TrainConfig::default()
    };
    let fitted = fit(&sim.dataset, &cfg, &train).expect("fit");
    let single = single_thread_pool();

    let mut group = c.benchmark_group("predict_n30k_p6");
    group.sample_size(20);
    group.bench_function("default-pool", |b| {
        b.iter(|| black_box(fitted.model.predict(&sim.dataset.x).expect("predict")))
    });
    group.bench_function("single-thread-pool", |b| {
        single.install(|| {
            b.iter(|| black_box(fitted.model.predict(&sim.dataset.x).expect("predict")))
        })
    });
    group.finish();
}

criterion_group!(benches, bench_full_gradient, bench_eta, bench_predict);
criterion_main!(benches);
