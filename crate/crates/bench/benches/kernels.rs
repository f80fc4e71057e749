use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DMatrix;
use rand::Rng;
use vips_core::accountant::{accountant_epsilon, LogMomentCurve, MechanismSpec, MomentOrders};
use vips_core::lda::{e_step_doc, Doc};
use vips_core::mechanisms::project_psd;
use vips_core::rng::{child_rng, Stream};
use vips_core::sbn::{SbnData, SbnModel};

fn accountant(c: &mut Criterion) {
    let orders = MomentOrders::default();
    let spec = MechanismSpec::new(1.0, 0.01).unwrap();
    c.bench_function("subsampled_gaussian_log_moments", |b| {
        b.iter(|| LogMomentCurve::subsampled_gaussian(black_box(spec), &orders).unwrap())
    });
    c.bench_function("accountant_epsilon_10k_steps", |b| {
        b.iter(|| accountant_epsilon(black_box(spec), 10_000, 1e-4, &orders).unwrap())
    });
}

fn lda(c: &mut Criterion) {
    let (k, v) = (50, 1000);
    let mut rng = child_rng(0, Stream::Synthetic);
    let log_beta: Vec<f64> = (0..k * v).map(|_| -rng.random_range(4.0..10.0)).collect();
    let doc = Doc::new((0..80).map(|i| (i * 11 % v as u32, rng.random_range(1..4))).collect()).unwrap();
    c.bench_function("lda_e_step_doc_k50", |b| {
        b.iter(|| e_step_doc(black_box(&doc), &log_beta, k, v, 0.02, 100, 1e-3))
    });
}

fn sbn(c: &mut Criterion) {
    let (j, k, n) = (64, 16, 200);
    let mut rng = child_rng(0, Stream::Synthetic);
    let rows = (0..n).map(|_| (0..j).map(|_| rng.random_range(0..2u8)).collect()).collect();
    let data = SbnData::new(rows).unwrap();
    let model = SbnModel::new(j, k, 0).unwrap();
    let batch: Vec<usize> = (0..n).collect();
    c.bench_function("sbn_suff_stats_64x16_n200", |b| {
        b.iter(|| model.suff_stats(black_box(&data), &batch, n as f64))
    });
}

fn psd(c: &mut Criterion) {
    let d = 50;
    let mut rng = child_rng(0, Stream::Noise);
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let sym = (&a + a.transpose()) * 0.5;
    c.bench_function("project_psd_50", |b| b.iter(|| project_psd(black_box(&sym), 1e-6).unwrap()));
}

criterion_group!(benches, accountant, lda, sbn, psd);
criterion_main!(benches);
