//! End-to-end acceptance checks. Each criterion runs in turn inside one test
//! so timings are not disturbed by other work, prints one PASS/FAIL line, and
//! the test fails at the end if any criterion failed.

use std::fs;
use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use ipsd::data::{gen_clean, gen_noise, mix_at_snr, Band, CleanFamily, CleanSpec, Component, NoiseKind};
use ipsd::denoiser::{denoise_with_choice, fit_pair, DenoiserConfig, DenoiserNet, Normalizer, Precision};
use ipsd::metrics::{psnr_db, snr_db, spectral_mse, welch_psd, WelchConfig};
use ipsd::nn::categorical::Logits;
use ipsd::nn::conv::Conv1d;
use ipsd::nn::gradcheck::{grad_check, GradCheck};
use ipsd::nn::gru::{BiGru, GruCell};
use ipsd::nn::linear::Linear;
use ipsd::par::Exec;
use ipsd::policy::{denoise_with_policy, train_ipsd, PolicyNet, TrainConfig};
use ipsd::rng::{self, Rng};
use ipsd::signal::{clean_mismatch, interleaved_choice, symmetric_clean_mismatch, PartitionCatalog, PartitionChoice};
use ipsd::zeroshot::{run_bandit, run_zero_shot, ArmEvaluator, LilUcbConfig, ZeroShotConfig};
use ipsd::{Signal, WindowGrid};

type Outcome = Result<String, String>;

fn sig(v: &[f64]) -> Signal {
    Signal::new(v.to_vec(), 256.0).unwrap()
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, format!("{name}: got {got}, want {want} (tol {tol})"))
}

// Bypasses the test harness capture so the lines land in the log.
fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

// ---------------------------------------------------------------------------
// 1. A zero-mismatch split exists where interleaving fails

fn zero_mismatch_split() -> Outcome {
    let clean = sig(&[1.0, -1.0, 1.0, -1.0]);
    let catalog = PartitionCatalog::enumerate(4).map_err(|e| e.to_string())?;
    ensure(catalog.len() == 3, "W=4 catalog should hold 3 entries")?;
    let grid = WindowGrid::new(4, 4).unwrap();
    let id = interleaved_choice(&grid, &catalog).unwrap();
    let id_mismatch = symmetric_clean_mismatch(&clean, &id, &catalog).unwrap();
    close("interleaved mismatch", id_mismatch, 16.0, 0.0)?;
    let zero: Vec<usize> = (0..catalog.len())
        .filter(|&e| clean_mismatch(&clean, &PartitionChoice::new(vec![e]), &catalog).unwrap() == 0.0)
        .collect();
    ensure(!zero.is_empty(), "no zero-mismatch entry")?;
    Ok(format!(
        "interleaved mismatch {id_mismatch}, zero-mismatch entries {:?}",
        zero.iter().map(|&e| catalog.entry(e).to_vec()).collect::<Vec<_>>()
    ))
}

// ---------------------------------------------------------------------------
// 2. Analytic gradients of every layer and both networks

fn uniform(r: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gradient_fidelity() -> Outcome {
    const EPS: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    let mut r = rng::from_seed(2024);
    let mut worst: Vec<(String, f64)> = Vec::new();

    for (cin, cout) in [(1, 1), (1, 4), (4, 4), (4, 1)] {
        let layer = Conv1d::<f64>::init(cin, cout, &mut r);
        let x = uniform(&mut r, cin * 11);
        let proj = uniform(&mut r, cout * 11);
        let (_, tape) = layer.forward_taped(&x).unwrap();
        let mut g = Conv1d::zeros(cin, cout);
        layer.backward(&tape, &proj, &mut g, false);
        let c = grad_check(&layer, &g, |l| dot(&l.forward(&x).unwrap(), &proj), EPS, None);
        worst.push((format!("conv {cin}->{cout}"), c.max_rel_error));
    }

    let layer = Linear::init(6, 5, &mut r);
    let x = uniform(&mut r, 3 * 6);
    let proj = uniform(&mut r, 3 * 5);
    let (_, tape) = layer.forward_taped(&x).unwrap();
    let mut g = Linear::zeros(6, 5);
    layer.backward(&tape, &proj, &mut g);
    let c = grad_check(&layer, &g, |l| dot(&l.forward(&x).unwrap(), &proj), EPS, None);
    worst.push(("linear".into(), c.max_rel_error));

    for reverse in [false, true] {
        let cell = GruCell::init(3, 5, reverse, &mut r);
        let seq = uniform(&mut r, 7 * 3);
        let proj = uniform(&mut r, 7 * 5);
        let (_, tape) = cell.forward_taped(&seq).unwrap();
        let mut g = GruCell::zeros(3, 5, reverse);
        cell.backward(&tape, &proj, &mut g);
        let c = grad_check(&cell, &g, |n| dot(&n.forward(&seq).unwrap(), &proj), EPS, None);
        worst.push((format!("gru cell (reverse={reverse})"), c.max_rel_error));
    }

    let bi = BiGru::init(3, 4, &mut r);
    let seq = uniform(&mut r, 6 * 3);
    let proj = uniform(&mut r, 6 * 8);
    let (_, tape) = bi.forward_taped(&seq).unwrap();
    let mut g = BiGru::zeros(3, 4);
    bi.backward(&tape, &proj, &mut g);
    let c = grad_check(&bi, &g, |n| dot(&n.forward(&seq).unwrap(), &proj), EPS, None);
    worst.push(("bigru".into(), c.max_rel_error));

    let c = denoiser_check(7);
    worst.push(("denoiser".into(), c.max_rel_error));

    // Same instance as the policy unit test: net, features and projection
    // from seeds 5, 6 and 7.
    let net = PolicyNet::init(8, &mut rng::from_seed(5)).unwrap();
    let features = |seed: u64, n: usize| -> Vec<f64> {
        let mut r = rng::from_seed(seed);
        (0..n).map(|_| r.random_range(-2.0..2.0)).collect()
    };
    let (f, proj) = (features(6, 4 * 8), features(7, 4 * 35));
    let (_, tape) = net.forward_taped(&f).unwrap();
    ensure(tape.kink_margin() > 1e-4, "reference policy input sits on a ReLU kink")?;
    let mut g = PolicyNet::zeros(8).unwrap();
    net.backward(&tape, &proj, &mut g);
    let c = grad_check(&net, &g, |n| dot(n.forward(&f).unwrap().values(), &proj), EPS, Some(64));
    worst.push(("policy".into(), c.max_rel_error));

    // The relative error of coordinates with |g| near 1e-8 is dominated by
    // round-off in the differences; survey further draws to show that.
    let mut survey = String::new();
    for (name, check) in [("denoiser", denoiser_check as fn(u64) -> GradCheck), ("policy", policy_check)] {
        let draws: Vec<GradCheck> = (100..110).map(check).collect();
        let below = draws.iter().filter(|c| c.max_rel_error < TOL).count();
        let gap = draws
            .iter()
            .filter(|c| c.max_rel_error >= TOL)
            .map(|c| (c.analytic - c.numeric).abs())
            .fold(0.0, f64::max);
        survey += &format!("; other {name} draws below 1e-4: {below}/10, largest absolute gap otherwise {gap:.1e}");
    }
    let summary = worst
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    let summary = summary + &survey;
    for (name, e) in &worst {
        ensure(*e < TOL, format!("{name}: max relative error {e:.3e}; {summary}"))?;
    }
    Ok(summary)
}

// Full denoiser on a random 1x64 input drawn clear of the LeakyReLU kink,
// where central differences are meaningless.
fn denoiser_check(seed: u64) -> GradCheck {
    let mut r = rng::from_seed(seed);
    let net = DenoiserNet::<f64>::init(&mut r);
    let (x, tape) = (0..1000)
        .map(|_| uniform(&mut r, 64))
        .map(|x| {
            let tape = net.forward_taped(&x).1;
            (x, tape)
        })
        .find(|(_, t)| t.kink_margin() > 1e-4)
        .expect("an input clear of the kink");
    let proj = uniform(&mut r, 64);
    let mut g = DenoiserNet::zeros();
    net.backward(&tape, &proj, &mut g);
    grad_check(&net, &g, |n| dot(&n.forward(&x), &proj), 1e-5, None)
}

// Full policy net on a random 4-window input clear of the ReLU kinks, at
// most 64 coordinates per tensor.
fn policy_check(seed: u64) -> GradCheck {
    let mut r = rng::from_seed(seed);
    let net = PolicyNet::init(8, &mut r).unwrap();
    let (f, tape) = (0..1000)
        .map(|_| (0..4 * 8).map(|_| r.random_range(-2.0..2.0)).collect::<Vec<f64>>())
        .map(|f| {
            let tape = net.forward_taped(&f).unwrap().1;
            (f, tape)
        })
        .find(|(_, t)| t.kink_margin() > 1e-4)
        .expect("an input clear of the kink");
    let proj = uniform(&mut r, 4 * 35);
    let mut g = PolicyNet::zeros(8).unwrap();
    net.backward(&tape, &proj, &mut g);
    grad_check(&net, &g, |n| dot(n.forward(&f).unwrap().values(), &proj), 1e-5, Some(64))
}

// ---------------------------------------------------------------------------
// 3. Training on independent noisy pairs improves held-out SNR

fn wgn_mix(x: &Signal, r: &mut Rng) -> Signal {
    let n = gen_noise(&NoiseKind::Wgn, x.len(), x.sample_rate_hz(), r).unwrap();
    mix_at_snr(x, &n, 0.0).unwrap().0
}

fn independent_pairs() -> Outcome {
    let mut r = rng::derive(3, 0);
    let x = gen_clean(&CleanSpec::default(), &mut r).unwrap();
    ensure(x.len() == 2560, "bandmix should span 2560 samples")?;
    let (a, b) = (wgn_mix(&x, &mut r), wgn_mix(&x, &mut r));
    let norm = Normalizer::fit(&a);
    let fit = fit_pair(&norm.apply(&a), &norm.apply(&b), &DenoiserConfig::default(), &mut r).map_err(|e| e.to_string())?;
    let mut gains = Vec::new();
    for _ in 0..10 {
        let y = wgn_mix(&x, &mut r);
        let out = norm.invert(&fit.net.denoise(&norm.apply(&y)));
        gains.push(snr_db(&x, &out).unwrap() - snr_db(&x, &y).unwrap());
    }
    let min = gains.iter().copied().fold(f64::INFINITY, f64::min);
    let detail = format!(
        "{} training steps, SNR gain over input min {min:.2} dB, mean {:.2} dB",
        fit.trace.steps(),
        gains.iter().sum::<f64>() / gains.len() as f64
    );
    ensure(min >= 3.0, detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 4. Monte-Carlo score-function gradient on a tabular toy

const TOY_LOGITS: [f64; 6] = [0.5, -0.5, 0.0, -0.7, 0.3, 0.4];
const TOY_REWARD: [[f64; 3]; 3] = [[0.0, 0.0, -5.0], [4.0, 0.0, 1.0], [1.0, 2.0, -1.0]];

fn score_function_toy() -> Outcome {
    let logits = Logits::new(TOY_LOGITS.to_vec(), 2, 3).unwrap();
    let mut exact = vec![0.0; 6];
    let probs = logits.probs();
    for a in 0..3 {
        for b in 0..3 {
            let p = probs[a] * probs[3 + b];
            let g = logits.score_gradient(&[(&[a, b], p * TOY_REWARD[a][b])]);
            exact.iter_mut().zip(&g).for_each(|(e, v)| *e += v);
        }
    }
    const SAMPLES: usize = 100_000;
    let mut r = rng::derive(4, 0);
    let draws: Vec<(Vec<usize>, f64)> = (0..SAMPLES)
        .map(|_| {
            let (picks, _) = logits.sample(&mut r);
            let reward = TOY_REWARD[picks[0]][picks[1]] / SAMPLES as f64;
            (picks, reward)
        })
        .collect();
    let batch: Vec<(&[usize], f64)> = draws.iter().map(|(p, w)| (p.as_slice(), *w)).collect();
    let mc = logits.score_gradient(&batch);
    let rel: Vec<f64> = mc.iter().zip(&exact).map(|(m, e)| (m - e).abs() / e.abs()).collect();
    let worst = rel.iter().copied().fold(0.0, f64::max);
    let detail = format!("exact {exact:.4?}, max relative deviation {:.2}%", 100.0 * worst);
    ensure(worst <= 0.05, detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 5. Learned and searched splits beat interleaving on period-2 signals

fn ablation_direction() -> Outcome {
    const LEN: usize = 64;
    const SEEDS: u64 = 10;
    let dcfg = DenoiserConfig::default();
    let train_cfg = TrainConfig {
        total_updates: 100,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let catalog = PartitionCatalog::enumerate(8).unwrap();
    let spec = CleanSpec::period2(1.0, LEN, 256.0);
    let (mut id, mut learned, mut zero) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..SEEDS {
        let mut r = rng::derive(seed, 5);
        let x = gen_clean(&spec, &mut r).unwrap();
        let train: Vec<Signal> = (0..8).map(|_| wgn_mix(&x, &mut r)).collect();
        let test = wgn_mix(&x, &mut r);
        let grid = WindowGrid::for_signal(&test, 8).unwrap();
        let choice = interleaved_choice(&grid, &catalog).unwrap();
        let d = denoise_with_choice(&test, &choice, &catalog, &dcfg, &mut rng::derive(seed, 6)).unwrap();
        id.push(snr_db(&x, &d.denoised).unwrap());
        let (net, _) = train_ipsd(&train, &train_cfg, &dcfg, seed).unwrap();
        let (_, d) = denoise_with_policy(&net, &test, &dcfg, &mut rng::derive(seed, 6)).unwrap();
        learned.push(snr_db(&x, &d.denoised).unwrap());
        let z = run_zero_shot(&test, &ZeroShotConfig::default(), &dcfg, seed).unwrap();
        zero.push(snr_db(&x, &z.denoised).unwrap());
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m_id, m_learned, m_zero) = (mean(&id), mean(&learned), mean(&zero));
    let detail = format!(
        "mean output SNR over {SEEDS} seeds: ID {m_id:.2} dB, iPSD {m_learned:.2} dB (+{:.2}), iPSD-Zero {m_zero:.2} dB (+{:.2})",
        m_learned - m_id,
        m_zero - m_id
    );
    ensure(m_learned - m_id >= 1.0 && m_zero - m_id >= 1.0, detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 6. lil'UCB on a Gaussian oracle

struct GaussianOracle {
    means: Vec<f64>,
    sd: f64,
}

impl ArmEvaluator for GaussianOracle {
    fn arms(&self) -> usize {
        self.means.len()
    }

    fn reward(&self, arm: usize, rng: &mut Rng) -> ipsd::Result<f64> {
        let z: f64 = StandardNormal.sample(rng);
        Ok(self.means[arm] + self.sd * z)
    }
}

fn bandit_identification() -> Outcome {
    let cfg = LilUcbConfig::default();
    ensure(cfg.alpha() == 9.0 && cfg.beta == 1.0 && cfg.sigma == 0.008, "hyperparameters differ")?;
    ensure(cfg.epsilon == 0.01 && cfg.delta == 0.55e-4 && cfg.max_rounds == 500, "hyperparameters differ")?;
    let mut found = 0;
    let mut pulls = Vec::new();
    for run in 0..20u64 {
        let mut r = rng::derive(6, run);
        let best = r.random_range(0..35);
        let means: Vec<f64> = (0..35).map(|a| if a == best { -0.4 } else { -0.5 }).collect();
        let oracle = GaussianOracle { means, sd: 0.008 };
        let out = run_bandit(&oracle, &cfg, Exec::Sequential, run).unwrap();
        if out.stop.arm == best && !out.stop.capped {
            found += 1;
        }
        pulls.push(out.history.len());
    }
    let detail = format!(
        "best arm found before the cap in {found}/20 runs, pulls {}..{}",
        pulls.iter().min().unwrap(),
        pulls.iter().max().unwrap()
    );
    ensure(found >= 18, detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 7. Zero-shot wall clock on one 2560-sample recording

fn zero_shot_latency() -> Outcome {
    let mut r = rng::derive(7, 0);
    let x = gen_clean(&CleanSpec::default(), &mut r).unwrap();
    let y = wgn_mix(&x, &mut r);
    let dcfg = DenoiserConfig {
        precision: Precision::F32,
        ..DenoiserConfig::default()
    };
    let t = Instant::now();
    let z = run_zero_shot(&y, &ZeroShotConfig::default(), &dcfg, 7).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let detail = format!(
        "{secs:.1} s for {} trainings ({} workers, capped {}), SNR {:.2} -> {:.2} dB",
        z.history.len() + 1,
        rayon_threads(),
        z.capped,
        snr_db(&x, &y).unwrap(),
        snr_db(&x, &z.denoised).unwrap()
    );
    ensure(secs < 60.0, detail.clone())?;
    Ok(detail)
}

fn rayon_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

// ---------------------------------------------------------------------------
// 8. Metric and generator examples

fn metric_examples() -> Outcome {
    const TOL: f64 = 1e-9;
    let x = sig(&[3.0, 4.0]);
    close("snr of zero estimate", snr_db(&x, &sig(&[0.0, 0.0])).unwrap(), 0.0, TOL)?;
    close("snr (3,4) vs (3,4.5)", snr_db(&x, &sig(&[3.0, 4.5])).unwrap(), 20.0, TOL)?;
    ensure(snr_db(&x, &x).unwrap() == f64::INFINITY, "snr of exact estimate is not +inf")?;

    let x = sig(&[1.0, -2.0, 1.0, 0.0]);
    let xhat = sig(&[0.0, -2.0, 1.0, 0.0]);
    let p = psnr_db(&x, &xhat).unwrap();
    close("psnr example", p, 10.0 * 16f64.log10(), TOL)?;
    close("psnr example (rounded)", p, 12.041, 1e-3)?;
    ensure(psnr_db(&x, &x).unwrap() == f64::INFINITY, "psnr of exact estimate is not +inf")?;
    let scale = |s: &Signal, k: f64| s.with_samples(s.samples().iter().map(|v| k * v).collect()).unwrap();
    close("psnr scale invariance", psnr_db(&scale(&x, 7.5), &scale(&xhat, 7.5)).unwrap(), p, TOL)?;

    let mut r = rng::derive(8, 0);
    let unit = |r: &mut Rng| {
        let n = gen_noise(&NoiseKind::Wgn, 2560, 256.0, r).unwrap();
        let rms = (n.energy() / n.len() as f64).sqrt();
        scale(&n, 1.0 / rms)
    };
    let (xs, ns) = (unit(&mut r), unit(&mut r));
    let (_, c) = mix_at_snr(&xs, &ns, 0.0).unwrap();
    close("mix gain at 0 dB", c, 1.0, TOL)?;
    let (mixed, c) = mix_at_snr(&xs, &ns, -5.0).unwrap();
    close("noise power at -5 dB", c * c * ns.energy() / ns.len() as f64, 10f64.powf(0.5), TOL)?;
    for target in [-10.0, -5.0, 0.0, 3.0, 12.5] {
        let (mixed, _) = mix_at_snr(&xs, &ns, target).unwrap();
        close("mixture SNR", snr_db(&xs, &mixed).unwrap(), target, TOL)?;
    }
    ensure(mixed.len() == xs.len(), "mixture length changed")?;

    let welch = WelchConfig::default();
    let mut ratios = Vec::new();
    for seed in 0..50 {
        let n = gen_noise(&NoiseKind::Wgn, 2560, 256.0, &mut rng::derive(8, 100 + seed)).unwrap();
        let psd = welch_psd(&n, &welch).unwrap();
        let df = psd.freqs[1] - psd.freqs[0];
        let mean = n.samples().iter().sum::<f64>() / n.len() as f64;
        let var = n.samples().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n.len() as f64;
        ratios.push(psd.values.iter().sum::<f64>() * df / var);
    }
    let (lo, hi) = ratios
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
    ensure(lo >= 0.9 && hi <= 1.1, format!("Welch power ratio outside [0.9, 1.1]: {lo:.3}..{hi:.3}"))?;

    let tone = sig(&(0..2560).map(|i| (2.0 * std::f64::consts::PI * 10.0 * i as f64 / 256.0).sin()).collect::<Vec<_>>());
    let psd = welch_psd(&tone, &welch).unwrap();
    let peak = (0..psd.values.len()).max_by(|&a, &b| psd.values[a].total_cmp(&psd.values[b])).unwrap();
    let df = psd.freqs[1] - psd.freqs[0];
    ensure((psd.freqs[peak] - 10.0).abs() <= df, format!("tone peak at {} Hz", psd.freqs[peak]))?;
    let psd = welch_psd(&sig(&[0.0; 512]), &welch).unwrap();
    ensure(psd.values.iter().all(|&v| v == welch.floor), "zero signal is not on the floor")?;

    let x = unit(&mut r);
    let y = unit(&mut r);
    close("S-MSE of identical signals", spectral_mse(&x, &x, &welch).unwrap(), 0.0, TOL)?;
    let d = 10.0 * 4f64.log10();
    let doubled = spectral_mse(&x, &scale(&x, 2.0), &welch).unwrap();
    close("S-MSE of doubled signal", doubled, d * d, TOL)?;
    close("S-MSE of doubled signal (rounded)", doubled, 36.25, 0.01)?;
    ensure(
        spectral_mse(&x, &y, &welch).unwrap() == spectral_mse(&y, &x, &welch).unwrap(),
        "S-MSE is not symmetric",
    )?;

    let p2 = gen_clean(&CleanSpec::period2(1.0, 8, 256.0), &mut r).unwrap();
    ensure(p2.samples() == [1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0], "period-2 example differs")?;
    let silent = CleanSpec {
        family: CleanFamily::Bandmix {
            components: Band::ALL.iter().map(|&b| Component::new(b, 0.0)).collect(),
        },
        ..CleanSpec::default()
    };
    ensure(gen_clean(&silent, &mut r).unwrap().samples().iter().all(|&v| v == 0.0), "zero amplitudes give nonzero signal")?;
    let a = gen_clean(&CleanSpec::default(), &mut rng::derive(8, 1)).unwrap();
    let b = gen_clean(&CleanSpec::default(), &mut rng::derive(8, 1)).unwrap();
    ensure(a == b, "clean generation is not reproducible")?;

    Ok(format!("all examples hold, Welch power ratio {lo:.3}..{hi:.3} over 50 WGN draws"))
}

// ---------------------------------------------------------------------------
// 9. Every command is byte-reproducible, including across worker counts

const CLI_CONFIG: &str = "\
window_len = 4

[signal]
family = \"period2\"
amplitude = 1.0
duration_s = 0.25
sample_rate_hz = 256.0

[data]
count = 5

[train]
total_updates = 3
batch_size = 3

[bandit]
max_rounds = 5

[denoiser.criterion]
max_steps = 30
";

const CLI_STEPS: &[&[&str]] = &[
    &["gen-data", "--out", "data"],
    &["train", "--data", "data", "--out", "train"],
    &["denoise", "--policy", "train/policy", "--data", "data", "--out", "denoise"],
    &["denoise", "--policy", "train/policy", "--input", "data/noisy_000.txt", "--clean", "data/clean_000.txt", "--out", "denoise_one"],
    &["zeroshot", "--input", "data/noisy_000.txt", "--clean", "data/clean_000.txt", "--out", "zeroshot"],
    &["zeroshot", "--data", "data", "--out", "zeroshot_set", "--format", "csv"],
    &["ablate", "--data", "data", "--out", "ablate"],
    &["ablate", "--data", "data", "--out", "ablate_csv", "--format", "csv"],
    &["eval", "--clean", "data/clean_000.txt", "--noisy", "data/noisy_000.txt", "--denoised", "zeroshot/noisy_000.denoised.txt", "--out", "eval"],
];

fn run_cli_steps(root: &Path, workers: usize) -> Result<(), String> {
    fs::create_dir_all(root).map_err(|e| e.to_string())?;
    fs::write(root.join("config.toml"), CLI_CONFIG).map_err(|e| e.to_string())?;
    for step in CLI_STEPS {
        let out = Command::new(env!("CARGO_BIN_EXE_ipsd"))
            .current_dir(root)
            .args(*step)
            .args(["--config", "config.toml", "--seed", "11", "--workers", &workers.to_string()])
            .output()
            .map_err(|e| e.to_string())?;
        ensure(
            out.status.success(),
            format!("`ipsd {}` failed: {}", step.join(" "), String::from_utf8_lossy(&out.stderr)),
        )?;
    }
    Ok(())
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs = [(tmp.path().join("a"), 1), (tmp.path().join("b"), 1), (tmp.path().join("c"), 4)];
    for (root, workers) in &runs {
        run_cli_steps(root, *workers)?;
    }
    let reference = files_under(&runs[0].0);
    ensure(reference.len() > 20, format!("only {} output files", reference.len()))?;
    for (root, workers) in &runs[1..] {
        let files = files_under(root);
        ensure(files == reference, format!("file sets differ with {workers} workers"))?;
        for f in &reference {
            let a = fs::read(runs[0].0.join(f)).unwrap();
            let b = fs::read(root.join(f)).unwrap();
            ensure(a == b, format!("{} differs with {workers} workers", f.display()))?;
        }
    }
    Ok(format!(
        "{} commands, {} files identical across 3 runs (1, 1 and 4 workers)",
        CLI_STEPS.len(),
        reference.len()
    ))
}

// ---------------------------------------------------------------------------

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

const CRITERIA: &[Criterion] = &[
    Criterion { id: 1, name: "zero-mismatch split on (1,-1,1,-1)", budget: Some(Duration::from_secs(1)), run: zero_mismatch_split },
    Criterion { id: 2, name: "gradient fidelity", budget: Some(Duration::from_secs(120)), run: gradient_fidelity },
    Criterion { id: 3, name: "independent noisy pairs denoise", budget: Some(Duration::from_secs(600)), run: independent_pairs },
    Criterion { id: 4, name: "score-function gradient", budget: Some(Duration::from_secs(60)), run: score_function_toy },
    Criterion { id: 5, name: "ablation vs interleaving", budget: Some(Duration::from_secs(1800)), run: ablation_direction },
    Criterion { id: 6, name: "bandit identification", budget: Some(Duration::from_secs(60)), run: bandit_identification },
    Criterion { id: 7, name: "zero-shot latency", budget: None, run: zero_shot_latency },
    Criterion { id: 8, name: "metric exactness", budget: None, run: metric_examples },
    Criterion { id: 9, name: "byte-identical CLI outputs", budget: None, run: cli_determinism },
];

#[test]
fn acceptance() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    panic::set_hook(Box::new(|_| {}));
    let mut failed = Vec::new();
    for c in CRITERIA {
        if only.as_ref().is_some_and(|o| !o.contains(&c.id)) {
            continue;
        }
        let t = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = t.elapsed();
        let outcome = match (outcome, c.budget) {
            (Ok(d), Some(b)) if elapsed > b => Err(format!("{d}; took longer than {} s", b.as_secs())),
            (o, _) => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        report(&format!(
            "acceptance {} [{tag}] {} ({:.1} s): {detail}",
            c.id,
            c.name,
            elapsed.as_secs_f64()
        ));
        if outcome.is_err() {
            failed.push(c.id);
        }
    }
    let _ = panic::take_hook();
    assert!(failed.is_empty(), "failed acceptance criteria: {failed:?}");
}
