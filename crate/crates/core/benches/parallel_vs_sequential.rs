//! Sequential vs rayon execution of the two embarrassingly parallel stages:
//! the zero-shot search's initial arm pulls and one batch of policy rollouts.
//! Built without the `parallel` feature both variants run sequentially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ipsd::data::{gen_clean, gen_noise, mix_at_snr, CleanSpec, NoiseKind};
use ipsd::denoiser::{ConvergenceCriterion, DenoiserConfig};
use ipsd::par::Exec;
use ipsd::policy::{train_ipsd, TrainConfig};
use ipsd::rng;
use ipsd::zeroshot::{ArmEvaluator, DenoiserArms};
use ipsd::Signal;

fn noisy(len: usize, seed: u64) -> Signal {
    let mut r = rng::from_seed(seed);
    let spec = CleanSpec {
        duration_s: len as f64 / 256.0,
        ..CleanSpec::default()
    };
    let x = gen_clean(&spec, &mut r).unwrap();
    let n = gen_noise(&NoiseKind::Wgn, len, 256.0, &mut r).unwrap();
    mix_at_snr(&x, &n, 0.0).unwrap().0
}

fn dcfg() -> DenoiserConfig {
    DenoiserConfig {
        criterion: ConvergenceCriterion {
            max_steps: 20,
            ..ConvergenceCriterion::default()
        },
        ..DenoiserConfig::default()
    }
}

fn arm_pulls(c: &mut Criterion) {
    let s = noisy(512, 1);
    let dcfg = dcfg();
    let arms = DenoiserArms::new(&s, 8, &dcfg).unwrap();
    let mut group = c.benchmark_group("arm_pulls_35");
    group.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| exec.map(arms.arms(), |a| black_box(arms.reward(a, &mut rng::derive(0, a as u64)).unwrap())))
        });
    }
    group.finish();
}

fn rollouts(c: &mut Criterion) {
    let train: Vec<Signal> = (0..4).map(|i| noisy(256, 10 + i)).collect();
    let dcfg = dcfg();
    let mut group = c.benchmark_group("policy_update_batch_8");
    group.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        let cfg = TrainConfig {
            batch_size: 8,
            total_updates: 1,
            exec,
            ..TrainConfig::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &cfg, |b, cfg| {
            b.iter(|| black_box(train_ipsd(&train, cfg, &dcfg, 0).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, arm_pulls, rollouts);
criterion_main!(benches);
