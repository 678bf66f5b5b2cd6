//! The partition policy and its policy-gradient training loop.
//!
//! The policy reads the signal window by window (each window's raw samples
//! are one step of a bidirectional GRU stack) and emits, per window, a
//! categorical distribution over the partition catalog. Training alternates
//! between sampling a batch of partitions for one signal, scoring each by the
//! reward of a denoiser trained on it, and a policy-gradient step.

use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::denoiser::{denoise_with_choice, fit, ChoiceDenoise, DenoiserConfig, Normalizer};
use crate::error::{IpsdError, Result};
use crate::nn::activation::{relu, relu_backward};
use crate::nn::checkpoint::{self, Checkpoint, TensorSpec};
use crate::nn::gru::BiGruTape;
use crate::nn::{Adam, AdamConfig, BiGru, Linear, LinearTape, Logits, Params};
use crate::par::Exec;
use crate::rng::{self, Rng};
use crate::signal::{PartitionCatalog, PartitionChoice, Signal, WindowGrid};

pub const GRU_HIDDEN: usize = 64;
pub const FC_HIDDEN: usize = 256;

/// Two bidirectional GRU layers followed by three fully connected layers
/// (ReLU between them), mapping `[windows x W]` features to
/// `[windows x catalog size]` logits.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet {
    window_len: usize,
    pub gru1: BiGru,
    pub gru2: BiGru,
    pub fc1: Linear,
    pub fc2: Linear,
    pub head: Linear,
}

pub struct PolicyTape {
    g1: BiGruTape,
    g2: BiGruTape,
    f1: LinearTape,
    a1: Vec<f64>,
    f2: LinearTape,
    a2: Vec<f64>,
    head: LinearTape,
    kink_margin: f64,
}

impl PolicyTape {
    /// Smallest |pre-activation| seen by a ReLU. Finite-difference checks
    /// are only meaningful when this is well above the step size.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }
}

fn min_abs(v: &[f64]) -> f64 {
    v.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()))
}

impl PolicyNet {
    pub fn init(window_len: usize, rng: &mut Rng) -> Result<Self> {
        let k = PartitionCatalog::enumerate(window_len)?.len();
        let two_h = 2 * GRU_HIDDEN;
        Ok(PolicyNet {
            window_len,
            gru1: BiGru::init(window_len, GRU_HIDDEN, rng),
            gru2: BiGru::init(two_h, GRU_HIDDEN, rng),
            fc1: Linear::init(two_h, FC_HIDDEN, rng),
            fc2: Linear::init(FC_HIDDEN, FC_HIDDEN, rng),
            head: Linear::init(FC_HIDDEN, k, rng),
        })
    }

    pub fn zeros(window_len: usize) -> Result<Self> {
        let k = PartitionCatalog::enumerate(window_len)?.len();
        let two_h = 2 * GRU_HIDDEN;
        Ok(PolicyNet {
            window_len,
            gru1: BiGru::zeros(window_len, GRU_HIDDEN),
            gru2: BiGru::zeros(two_h, GRU_HIDDEN),
            fc1: Linear::zeros(two_h, FC_HIDDEN),
            fc2: Linear::zeros(FC_HIDDEN, FC_HIDDEN),
            head: Linear::zeros(FC_HIDDEN, k),
        })
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn num_actions(&self) -> usize {
        self.head.out_dim()
    }

    pub fn forward(&self, features: &[f64]) -> Result<Logits> {
        self.forward_taped(features).map(|(l, _)| l)
    }

    /// `features` holds `windows x W` values, window-major.
    pub fn forward_taped(&self, features: &[f64]) -> Result<(Logits, PolicyTape)> {
        if features.is_empty() || features.len() % self.window_len != 0 {
            return Err(IpsdError::invalid(format!(
                "{} feature values do not form windows of {}",
                features.len(),
                self.window_len
            )));
        }
        let windows = features.len() / self.window_len;
        let (h1, g1) = self.gru1.forward_taped(features)?;
        let (h2, g2) = self.gru2.forward_taped(&h1)?;
        let (mut a1, f1) = self.fc1.forward_taped(&h2)?;
        let mut kink_margin = min_abs(&a1);
        relu(&mut a1);
        let (mut a2, f2) = self.fc2.forward_taped(&a1)?;
        kink_margin = kink_margin.min(min_abs(&a2));
        relu(&mut a2);
        let (out, head) = self.head.forward_taped(&a2)?;
        let logits = Logits::new(out, windows, self.num_actions())?;
        Ok((
            logits,
            PolicyTape {
                g1,
                g2,
                f1,
                a1,
                f2,
                a2,
                head,
                kink_margin,
            },
        ))
    }

    /// Accumulate parameter gradients for an output gradient on the logits.
    pub fn backward(&self, tape: &PolicyTape, grad_logits: &[f64], grads: &mut PolicyNet) {
        let mut d = self.head.backward(&tape.head, grad_logits, &mut grads.head);
        relu_backward(&tape.a2, &mut d);
        let mut d = self.fc2.backward(&tape.f2, &d, &mut grads.fc2);
        relu_backward(&tape.a1, &mut d);
        let d = self.fc1.backward(&tape.f1, &d, &mut grads.fc1);
        let d = self.gru2.backward(&tape.g2, &d, &mut grads.gru2);
        self.gru1.backward(&tape.g1, &d, &mut grads.gru1);
    }

    pub fn save(&self, stem: &Path, mut meta: toml::Table) -> Result<()> {
        meta.insert("window_len".into(), toml::Value::Integer(self.window_len as i64));
        checkpoint::save(self, stem, meta)
    }

    /// Load a checkpoint written by [`PolicyNet::save`].
    pub fn load(stem: &Path) -> Result<Self> {
        let manifest = checkpoint::read_manifest(stem)?;
        let w = manifest
            .meta
            .get("window_len")
            .and_then(|v| v.as_integer())
            .ok_or_else(|| IpsdError::format(checkpoint::paths(stem).1, "missing meta.window_len"))?;
        let mut net = PolicyNet::zeros(w as usize)?;
        checkpoint::load_into(&mut net, stem)?;
        Ok(net)
    }
}

impl Params<f64> for PolicyNet {
    fn params(&self) -> Vec<&[f64]> {
        let mut p = self.gru1.params();
        p.extend(self.gru2.params());
        p.extend(self.fc1.params());
        p.extend(self.fc2.params());
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.gru1.params_mut();
        p.extend(self.gru2.params_mut());
        p.extend(self.fc1.params_mut());
        p.extend(self.fc2.params_mut());
        p.extend(self.head.params_mut());
        p
    }
}

impl Checkpoint for PolicyNet {
    fn kind(&self) -> &'static str {
        "policy"
    }

    fn tensor_specs(&self) -> Vec<TensorSpec> {
        let h3 = 3 * GRU_HIDDEN;
        let gru = |name: &str, input: usize| -> Vec<TensorSpec> {
            ["fwd", "bwd"]
                .into_iter()
                .flat_map(|dir| {
                    [
                        TensorSpec::new(format!("{name}.{dir}.w"), &[h3, input]),
                        TensorSpec::new(format!("{name}.{dir}.u"), &[h3, GRU_HIDDEN]),
                        TensorSpec::new(format!("{name}.{dir}.b"), &[h3]),
                    ]
                })
                .collect()
        };
        let lin = |name: &str, l: &Linear| {
            [
                TensorSpec::new(format!("{name}.weight"), &[l.out_dim(), l.in_dim()]),
                TensorSpec::new(format!("{name}.bias"), &[l.out_dim()]),
            ]
        };
        let mut specs = gru("gru1", self.window_len);
        specs.extend(gru("gru2", 2 * GRU_HIDDEN));
        specs.extend(lin("fc1", &self.fc1));
        specs.extend(lin("fc2", &self.fc2));
        specs.extend(lin("head", &self.head));
        specs
    }
}

/// Samples of each window, in order.
pub fn window_features(s: &Signal, grid: &WindowGrid) -> Result<Vec<Vec<f64>>> {
    if grid.signal_len() != s.len() {
        return Err(IpsdError::invalid(format!(
            "grid covers {} samples, signal has {}",
            grid.signal_len(),
            s.len()
        )));
    }
    Ok(s.samples()
        .chunks_exact(grid.window_len())
        .map(<[f64]>::to_vec)
        .collect())
}

pub fn policy_forward(net: &PolicyNet, features: &[Vec<f64>]) -> Result<Logits> {
    net.forward(&features.concat())
}

/// One independent catalog entry per window, and the joint log-probability.
pub fn sample_partition(logits: &Logits, rng: &mut Rng) -> (PartitionChoice, f64) {
    let (picks, lp) = logits.sample(rng);
    (PartitionChoice::new(picks), lp)
}

pub fn logprob_of(logits: &Logits, choice: &PartitionChoice) -> Result<f64> {
    logits.log_prob_of(choice.indices())
}

/// Most likely entry per window, lowest index on ties.
pub fn argmax_partition(logits: &Logits) -> PartitionChoice {
    PartitionChoice::new(logits.argmax())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyRollout {
    pub choice: PartitionChoice,
    /// Log-probability under the policy that sampled it.
    pub logprob: f64,
    pub reward: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PgMode {
    /// Score-function gradient with a batch-mean baseline.
    #[default]
    Reinforce,
    /// Clipped probability-ratio surrogate, several epochs per batch.
    Clipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub total_updates: usize,
    pub mode: PgMode,
    pub clip: f64,
    /// Surrogate epochs per batch in clipped mode.
    pub epochs: usize,
    /// Stop once the mean reward of the last `plateau_window` iterations
    /// differs from that of the window before by less than `plateau_tol`
    /// (relative). Zero disables the check.
    pub plateau_window: usize,
    pub plateau_tol: f64,
    pub window_len: usize,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 16,
            total_updates: 500,
            mode: PgMode::Reinforce,
            clip: 0.2,
            epochs: 4,
            plateau_window: 50,
            plateau_tol: 1e-3,
            window_len: 8,
            exec: Exec::Parallel,
        }
    }
}

impl TrainConfig {
    /// The full-scale schedule: 20000 updates of 64 rollouts.
    pub fn full_scale() -> Self {
        TrainConfig {
            batch_size: 64,
            total_updates: 20_000,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(IpsdError::invalid("policy learning rate must be positive"));
        }
        if self.batch_size == 0 || self.total_updates == 0 || self.epochs == 0 {
            return Err(IpsdError::invalid("batch size, updates and epochs must be positive"));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(IpsdError::invalid("clip ratio must lie in (0, 1)"));
        }
        if !(self.plateau_tol >= 0.0) {
            return Err(IpsdError::invalid("plateau tolerance must be >= 0"));
        }
        PartitionCatalog::enumerate(self.window_len)?;
        Ok(())
    }
}

fn advantages(rollouts: &[PolicyRollout]) -> Vec<f64> {
    // offset from the first reward so equal rewards give exactly zero
    let r0 = rollouts[0].reward;
    let mean = r0 + rollouts.iter().map(|r| r.reward - r0).sum::<f64>() / rollouts.len() as f64;
    rollouts.iter().map(|r| r.reward - mean).collect()
}

/// Gradient (to ascend) of the policy objective on one batch of rollouts
/// of the signal with window features `features`.
///
/// REINFORCE: `mean_b (R_b - mean R) grad log pi(a_b)`. Clipped: gradient of
/// `mean_b min(rho_b A_b, clip(rho_b, 1 - c, 1 + c) A_b)` with
/// `rho_b = pi(a_b) / pi_old(a_b)`, `pi_old` taken from the stored logprobs.
pub fn policy_gradient(
    net: &PolicyNet,
    features: &[f64],
    rollouts: &[PolicyRollout],
    mode: PgMode,
    clip: f64,
) -> Result<PolicyNet> {
    if rollouts.is_empty() {
        return Err(IpsdError::invalid("policy update needs at least one rollout"));
    }
    let (logits, tape) = net.forward_taped(features)?;
    let adv = advantages(rollouts);
    let n = rollouts.len() as f64;
    let mut weights = Vec::with_capacity(rollouts.len());
    for (r, a) in rollouts.iter().zip(&adv) {
        let w = match mode {
            PgMode::Reinforce => a / n,
            PgMode::Clipped => {
                let ratio = (logprob_of(&logits, &r.choice)? - r.logprob).exp();
                let clipped = (*a > 0.0 && ratio > 1.0 + clip) || (*a < 0.0 && ratio < 1.0 - clip);
                if clipped {
                    0.0
                } else {
                    a * ratio / n
                }
            }
        };
        weights.push(w);
    }
    let batch: Vec<(&[usize], f64)> = rollouts
        .iter()
        .zip(&weights)
        .map(|(r, &w)| (r.choice.indices(), w))
        .collect();
    let g_logits = logits.score_gradient(&batch);
    let mut grads = PolicyNet::zeros(net.window_len)?;
    net.backward(&tape, &g_logits, &mut grads);
    Ok(grads)
}

/// One policy update (one step in REINFORCE mode, `cfg.epochs` steps in
/// clipped mode).
pub fn policy_update(
    net: &mut PolicyNet,
    adam: &mut Adam<f64>,
    features: &[f64],
    rollouts: &[PolicyRollout],
    cfg: &TrainConfig,
) -> Result<()> {
    let epochs = match cfg.mode {
        PgMode::Reinforce => 1,
        PgMode::Clipped => cfg.epochs,
    };
    for _ in 0..epochs {
        let mut grads = policy_gradient(net, features, rollouts, cfg.mode, cfg.clip)?;
        if !grads.all_finite() {
            return Err(IpsdError::UpdateDiverged("non-finite policy gradient".into()));
        }
        // Adam descends; the objective is maximized
        grads.scale(-1.0);
        adam.step(net, &grads)?;
        if !net.all_finite() {
            return Err(IpsdError::UpdateDiverged("non-finite policy parameters".into()));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Index into the training set of the signal used.
    pub signal: usize,
    pub mean_reward: f64,
    pub reward_std: f64,
    pub mean_steps: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: Vec<IterationRecord>,
    pub plateaued: bool,
}

impl TrainReport {
    pub fn write_csv<W: Write>(&self, mut w: W, header_comment: Option<&str>) -> std::io::Result<()> {
        if let Some(c) = header_comment {
            for line in c.lines() {
                writeln!(w, "# {line}")?;
            }
        }
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["iteration", "mean_reward", "reward_std", "mean_steps", "signal"])?;
        for r in &self.iterations {
            csv.write_record([
                r.iteration.to_string(),
                r.mean_reward.to_string(),
                r.reward_std.to_string(),
                r.mean_steps.to_string(),
                r.signal.to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }

    fn plateaued(&self, window: usize, tol: f64) -> bool {
        let n = self.iterations.len();
        if window == 0 || n < 2 * window {
            return false;
        }
        let mean = |rows: &[IterationRecord]| rows.iter().map(|r| r.mean_reward).sum::<f64>() / rows.len() as f64;
        let last = mean(&self.iterations[n - window..]);
        let prev = mean(&self.iterations[n - 2 * window..n - window]);
        (last - prev).abs() < tol * prev.abs().max(1e-12)
    }
}

const SELECT_KEY: u64 = u64::MAX;
const INIT_KEY: u64 = u64::MAX - 1;

/// Train a policy on `trainset`. Every signal is scaled to unit variance
/// first; rollout `b` of iteration `t` draws from its own stream, so results
/// do not depend on `cfg.exec`.
pub fn train_ipsd(
    trainset: &[Signal],
    cfg: &TrainConfig,
    dcfg: &DenoiserConfig,
    seed: u64,
) -> Result<(PolicyNet, TrainReport)> {
    cfg.validate()?;
    dcfg.criterion.validate()?;
    if trainset.is_empty() {
        return Err(IpsdError::invalid("training set is empty"));
    }
    let catalog = PartitionCatalog::enumerate(cfg.window_len)?;
    let len = trainset[0].len();
    let mut normalized = Vec::with_capacity(trainset.len());
    let mut features = Vec::with_capacity(trainset.len());
    for (i, s) in trainset.iter().enumerate() {
        if s.len() != len {
            return Err(IpsdError::invalid(format!(
                "training signals must share one length: signal {i} has {}, signal 0 has {len}",
                s.len()
            )));
        }
        let grid = WindowGrid::for_signal(s, cfg.window_len).map_err(|e| e.for_signal(i.to_string()))?;
        let sn = Normalizer::fit(s).apply(s);
        features.push(window_features(&sn, &grid)?.concat());
        normalized.push(sn);
    }

    let mut net = PolicyNet::init(cfg.window_len, &mut rng::derive(seed, INIT_KEY))?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), &net);
    let mut select = rng::derive(seed, SELECT_KEY);
    let mut report = TrainReport::default();
    for it in 0..cfg.total_updates {
        let idx = select.random_range(0..trainset.len());
        let (s, feats) = (&normalized[idx], &features[idx]);
        let logits = net.forward(feats)?;
        let results = cfg.exec.try_map(cfg.batch_size, |b| {
            let mut r = rng::derive2(seed, it as u64, b as u64);
            let (choice, logprob) = sample_partition(&logits, &mut r);
            let f = fit(s, &choice, &catalog, dcfg, &mut r).map_err(|e| e.for_signal(idx.to_string()))?;
            let steps = f.trace.steps();
            Ok::<_, IpsdError>((
                PolicyRollout {
                    choice,
                    logprob,
                    reward: f.reward,
                },
                steps,
            ))
        })?;
        let (rollouts, steps): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        policy_update(&mut net, &mut adam, feats, &rollouts, cfg)?;

        let n = rollouts.len() as f64;
        let mean = rollouts.iter().map(|r| r.reward).sum::<f64>() / n;
        let var = rollouts.iter().map(|r| (r.reward - mean).powi(2)).sum::<f64>() / n;
        report.iterations.push(IterationRecord {
            iteration: it + 1,
            signal: idx,
            mean_reward: mean,
            reward_std: var.sqrt(),
            mean_steps: steps.iter().sum::<usize>() as f64 / n,
        });
        if report.plateaued(cfg.plateau_window, cfg.plateau_tol) {
            report.plateaued = true;
            break;
        }
    }
    Ok((net, report))
}

/// Denoise `s` with the policy's most likely partition.
pub fn denoise_with_policy(
    net: &PolicyNet,
    s: &Signal,
    dcfg: &DenoiserConfig,
    rng: &mut Rng,
) -> Result<(PartitionChoice, ChoiceDenoise)> {
    let grid = WindowGrid::for_signal(s, net.window_len())?;
    let catalog = PartitionCatalog::enumerate(net.window_len())?;
    let sn = Normalizer::fit(s).apply(s);
    let logits = net.forward(&window_features(&sn, &grid)?.concat())?;
    let choice = argmax_partition(&logits);
    let out = denoise_with_choice(s, &choice, &catalog, dcfg, rng)?;
    Ok((choice, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::ConvergenceCriterion;
    use crate::nn::gradcheck::grad_check;

    fn sig(v: Vec<f64>) -> Signal {
        Signal::new(v, 256.0).unwrap()
    }

    fn random_features(seed: u64, windows: usize, w: usize) -> Vec<f64> {
        let mut r = rng::from_seed(seed);
        (0..windows * w).map(|_| r.random_range(-2.0..2.0)).collect()
    }

    #[test]
    fn architecture_dimensions() {
        let net = PolicyNet::init(8, &mut rng::from_seed(0)).unwrap();
        assert_eq!(net.num_actions(), 35);
        assert_eq!(net.gru1.output_dim(), 128);
        assert_eq!(net.gru2.output_dim(), 128);
        assert_eq!((net.fc1.in_dim(), net.fc1.out_dim()), (128, 256));
        assert_eq!((net.fc2.in_dim(), net.fc2.out_dim()), (256, 256));
        assert_eq!((net.head.in_dim(), net.head.out_dim()), (256, 35));
        let specs = net.tensor_specs();
        assert_eq!(specs.iter().map(TensorSpec::numel).sum::<usize>(), net.num_params());
        let logits = net.forward(&random_features(1, 5, 8)).unwrap();
        assert_eq!((logits.rows(), logits.classes()), (5, 35));
        assert!(net.forward(&[0.0; 7]).is_err());
    }

    #[test]
    fn window_features_examples() {
        let s = sig((0..16).map(|v| v as f64).collect());
        let grid = WindowGrid::new(16, 8).unwrap();
        let f = window_features(&s, &grid).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f[1], (8..16).map(|v| v as f64).collect::<Vec<_>>());
        let c = window_features(&sig(vec![0.7; 16]), &grid).unwrap();
        assert_eq!(c[0], c[1]);
        assert!(window_features(&sig(vec![0.0; 24]), &grid).is_err());
        assert!(WindowGrid::new(20, 8).is_err());
    }

    #[test]
    fn zero_net_is_uniform() {
        let net = PolicyNet::zeros(8).unwrap();
        let logits = net.forward(&random_features(2, 4, 8)).unwrap();
        assert!(logits.values().iter().all(|&v| v == 0.0));
        assert_eq!(argmax_partition(&logits).indices(), &[0, 0, 0, 0]);
    }

    #[test]
    fn softmax_rows_normalize_on_random_nets() {
        for seed in 0..5 {
            let net = PolicyNet::init(8, &mut rng::from_seed(seed)).unwrap();
            let logits = net.forward(&random_features(seed + 10, 6, 8)).unwrap();
            for row in logits.probs().chunks_exact(35) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bidirectional_context_matters() {
        let net = PolicyNet::init(8, &mut rng::from_seed(3)).unwrap();
        let f = random_features(4, 4, 8);
        let mut swapped = f[8..16].to_vec();
        swapped.extend_from_slice(&f[..8]);
        swapped.extend_from_slice(&f[16..]);
        let a = net.forward(&f).unwrap();
        let b = net.forward(&swapped).unwrap();
        // window 3 is unchanged but sees a different past
        assert_ne!(a.row(3), b.row(3));
        // window 0 in `b` holds the old window 1 and vice versa
        assert_ne!(a.row(1), b.row(0));
    }

    #[test]
    fn full_policy_gradient_check() {
        let net = PolicyNet::init(8, &mut rng::from_seed(5)).unwrap();
        let f = random_features(6, 4, 8);
        let proj = random_features(7, 4, 35);
        let (_, tape) = net.forward_taped(&f).unwrap();
        let mut grads = PolicyNet::zeros(8).unwrap();
        net.backward(&tape, &proj, &mut grads);
        let loss = |n: &PolicyNet| -> f64 {
            n.forward(&f).unwrap().values().iter().zip(&proj).map(|(a, b)| a * b).sum()
        };
        let check = grad_check(&net, &grads, loss, 1e-5, Some(64));
        assert!(check.max_rel_error < 1e-4, "{check:?}");
    }

    fn rollouts_for(net: &PolicyNet, f: &[f64], rewards: &[f64], seed: u64) -> Vec<PolicyRollout> {
        let logits = net.forward(f).unwrap();
        let mut r = rng::from_seed(seed);
        rewards
            .iter()
            .map(|&reward| {
                let (choice, logprob) = sample_partition(&logits, &mut r);
                PolicyRollout {
                    choice,
                    logprob,
                    reward,
                }
            })
            .collect()
    }

    #[test]
    fn constant_rewards_give_zero_update() {
        let net = PolicyNet::init(8, &mut rng::from_seed(8)).unwrap();
        let f = random_features(9, 3, 8);
        let rollouts = rollouts_for(&net, &f, &[-0.4; 6], 1);
        for mode in [PgMode::Reinforce, PgMode::Clipped] {
            let g = policy_gradient(&net, &f, &rollouts, mode, 0.2).unwrap();
            assert!(g.flatten().iter().all(|&v| v == 0.0));
        }
        let mut moved = net.clone();
        let mut adam = Adam::new(AdamConfig::with_lr(1e-4), &moved);
        policy_update(&mut moved, &mut adam, &f, &rollouts, &TrainConfig::default()).unwrap();
        assert_eq!(moved, net);
    }

    #[test]
    fn clipped_gradient_at_unit_ratio_equals_reinforce() {
        let net = PolicyNet::init(8, &mut rng::from_seed(10)).unwrap();
        let f = random_features(11, 3, 8);
        let rollouts = rollouts_for(&net, &f, &[-0.1, -0.5, -0.3, -0.9], 2);
        let a = policy_gradient(&net, &f, &rollouts, PgMode::Reinforce, 0.2).unwrap();
        let b = policy_gradient(&net, &f, &rollouts, PgMode::Clipped, 0.2).unwrap();
        for (x, y) in a.flatten().iter().zip(b.flatten()) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-12), "{x} vs {y}");
        }
        assert!(a.flatten().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn clipped_mode_stops_pushing_past_the_clip() {
        let net = PolicyNet::init(8, &mut rng::from_seed(12)).unwrap();
        let f = random_features(13, 3, 8);
        let mut rollouts = rollouts_for(&net, &f, &[1.0, 0.0], 3);
        // pretend the old policy was far less likely to take rollout 0, whose
        // advantage is positive: ratio >> 1.2, so it contributes nothing
        rollouts[0].logprob -= 5.0;
        let only_second = vec![rollouts[1].clone()];
        let g = policy_gradient(&net, &f, &rollouts, PgMode::Clipped, 0.2).unwrap();
        // rollout 1 alone with the same advantage (-0.5) and batch size 2
        let logits = net.forward(&f).unwrap();
        let (_, tape) = net.forward_taped(&f).unwrap();
        let ratio = (logprob_of(&logits, &only_second[0].choice).unwrap() - only_second[0].logprob).exp();
        let gl = logits.score_gradient(&[(only_second[0].choice.indices(), -0.5 * ratio / 2.0)]);
        let mut expect = PolicyNet::zeros(8).unwrap();
        net.backward(&tape, &gl, &mut expect);
        for (x, y) in g.flatten().iter().zip(expect.flatten()) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-9));
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("policy");
        let net = PolicyNet::init(4, &mut rng::from_seed(14)).unwrap();
        net.save(&stem, toml::Table::new()).unwrap();
        assert_eq!(PolicyNet::load(&stem).unwrap(), net);
    }

    fn tiny_cfgs(updates: usize) -> (TrainConfig, DenoiserConfig) {
        let cfg = TrainConfig {
            batch_size: 3,
            total_updates: updates,
            window_len: 4,
            ..Default::default()
        };
        let dcfg = DenoiserConfig {
            criterion: ConvergenceCriterion {
                max_steps: 30,
                ..Default::default()
            },
            ..Default::default()
        };
        (cfg, dcfg)
    }

    fn tiny_set() -> Vec<Signal> {
        let mut r = rng::from_seed(15);
        (0..2)
            .map(|_| sig((0..16).map(|i| (i as f64).sin() + r.random_range(-0.5..0.5)).collect()))
            .collect()
    }

    #[test]
    fn single_update_report() {
        let (cfg, dcfg) = tiny_cfgs(1);
        let set = &tiny_set()[..1];
        let (net, report) = train_ipsd(set, &cfg, &dcfg, 3).unwrap();
        assert_eq!(report.iterations.len(), 1);
        let init = PolicyNet::init(4, &mut rng::derive(3, INIT_KEY)).unwrap();
        assert_ne!(net, init, "exactly one step was taken");
        let mut csv = Vec::new();
        report.write_csv(&mut csv, Some("seed = 3")).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("iteration,mean_reward,reward_std,mean_steps"));
    }

    #[test]
    fn training_is_deterministic_across_exec_modes() {
        let (mut cfg, dcfg) = tiny_cfgs(3);
        let set = tiny_set();
        cfg.exec = Exec::Parallel;
        let (n1, r1) = train_ipsd(&set, &cfg, &dcfg, 21).unwrap();
        cfg.exec = Exec::Sequential;
        let (n2, r2) = train_ipsd(&set, &cfg, &dcfg, 21).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(n1, n2);
        cfg.mode = PgMode::Clipped;
        let (n3, _) = train_ipsd(&set, &cfg, &dcfg, 21).unwrap();
        let (n4, _) = train_ipsd(&set, &cfg, &dcfg, 21).unwrap();
        assert_eq!(n3, n4);
    }

    #[test]
    fn training_input_validation() {
        let (cfg, dcfg) = tiny_cfgs(1);
        assert!(train_ipsd(&[], &cfg, &dcfg, 0).is_err());
        let mixed = vec![sig(vec![1.0; 16]), sig(vec![1.0; 8])];
        assert!(train_ipsd(&mixed, &cfg, &dcfg, 0).is_err());
        let bad = TrainConfig { clip: 1.5, ..cfg.clone() };
        assert!(train_ipsd(&tiny_set(), &bad, &dcfg, 0).is_err());
    }

    #[test]
    fn plateau_detection() {
        let mut report = TrainReport::default();
        for i in 0..4 {
            report.iterations.push(IterationRecord {
                iteration: i + 1,
                signal: 0,
                mean_reward: -1.0,
                reward_std: 0.0,
                mean_steps: 10.0,
            });
        }
        assert!(report.plateaued(2, 1e-3));
        assert!(!report.plateaued(3, 1e-3));
        report.iterations[3].mean_reward = -1.1;
        assert!(!report.plateaued(2, 1e-3));
        assert!(!report.plateaued(0, 1e-3));
    }

    #[test]
    fn inference_uses_argmax_and_matches_sampling_when_deterministic() {
        let (_, dcfg) = tiny_cfgs(1);
        let s = &tiny_set()[0];
        let mut net = PolicyNet::zeros(4).unwrap();
        let (choice, out) = denoise_with_policy(&net, s, &dcfg, &mut rng::from_seed(1)).unwrap();
        assert_eq!(choice.indices(), &[0; 4]);
        assert_eq!(out.denoised.len(), s.len());

        // a huge bias on entry 2 makes sampling deterministic
        net.head.bias[2] = 1e6;
        let (choice, out) = denoise_with_policy(&net, s, &dcfg, &mut rng::from_seed(1)).unwrap();
        assert_eq!(choice.indices(), &[2; 4]);
        let logits = net.forward(&vec![0.0; 16]).unwrap();
        let (sampled, lp) = sample_partition(&logits, &mut rng::from_seed(99));
        assert_eq!(sampled, choice);
        assert!(lp.abs() < 1e-12);
        let cat = PartitionCatalog::enumerate(4).unwrap();
        let direct = denoise_with_choice(s, &sampled, &cat, &dcfg, &mut rng::from_seed(1)).unwrap();
        assert_eq!(direct.denoised, out.denoised);
    }
}
