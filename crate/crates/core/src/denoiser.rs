//! The denoising network and its self-supervised training loop.
//!
//! The network is three same-padded convolutions, `1 -> 48 -> 48 -> 1`, with
//! LeakyReLU after the first two. It is fully convolutional, so it runs on
//! sub-signals of length `L/2` during training and on the full signal at
//! inference.
//!
//! Training minimizes the Noise2Noise loss between the two halves of a
//! partition plus two consistency terms that ask partition-then-denoise to
//! agree with denoise-then-partition. The reward handed to the partition
//! search is computed from the Noise2Noise part alone.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IpsdError, Result};
use crate::nn::activation::{leaky, leaky_relu_backward};
use crate::nn::checkpoint::{Checkpoint, TensorSpec};
use crate::nn::{Adam, AdamConfig, Conv1d, ConvTape, Params, Real, LEAKY_SLOPE};
use crate::rng::Rng;
use crate::signal::{merge_samples, split_samples, PartitionCatalog, PartitionChoice, Signal};

pub const HIDDEN_CHANNELS: usize = 48;

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserNet<T = f64> {
    pub conv1: Conv1d<T>,
    pub conv2: Conv1d<T>,
    pub conv3: Conv1d<T>,
}

#[derive(Clone, Debug)]
pub struct DenoiserTape<T> {
    t1: ConvTape<T>,
    pre1: Vec<T>,
    t2: ConvTape<T>,
    pre2: Vec<T>,
    t3: ConvTape<T>,
    act: Vec<T>,
}

impl<T> Default for DenoiserTape<T> {
    fn default() -> Self {
        DenoiserTape {
            t1: ConvTape::default(),
            pre1: Vec::new(),
            t2: ConvTape::default(),
            pre2: Vec::new(),
            t3: ConvTape::default(),
            act: Vec::new(),
        }
    }
}

/// Buffers for [`DenoiserNet::backward_with`].
#[derive(Clone, Debug)]
pub struct BackwardScratch<T> {
    g1: Vec<T>,
    g2: Vec<T>,
    cols: Vec<T>,
}

impl<T> Default for BackwardScratch<T> {
    fn default() -> Self {
        BackwardScratch {
            g1: Vec::new(),
            g2: Vec::new(),
            cols: Vec::new(),
        }
    }
}

impl<T: Real> DenoiserTape<T> {
    /// Smallest |pre-activation| seen by a LeakyReLU. Finite-difference
    /// checks are only meaningful when this is well above the step size.
    pub fn kink_margin(&self) -> f64 {
        self.pre1
            .iter()
            .chain(&self.pre2)
            .fold(f64::INFINITY, |m, v| m.min(v.to_f64().abs()))
    }
}

impl<T: Real> DenoiserNet<T> {
    pub fn init(rng: &mut Rng) -> Self {
        DenoiserNet {
            conv1: Conv1d::init(1, HIDDEN_CHANNELS, rng),
            conv2: Conv1d::init(HIDDEN_CHANNELS, HIDDEN_CHANNELS, rng),
            conv3: Conv1d::init(HIDDEN_CHANNELS, 1, rng),
        }
    }

    pub fn zeros() -> Self {
        DenoiserNet {
            conv1: Conv1d::zeros(1, HIDDEN_CHANNELS),
            conv2: Conv1d::zeros(HIDDEN_CHANNELS, HIDDEN_CHANNELS),
            conv3: Conv1d::zeros(HIDDEN_CHANNELS, 1),
        }
    }

    /// Weights that reproduce the input.
    ///
    /// Channels 0 and 1 carry `x` and `-x`; since
    /// `leaky(x) - leaky(-x) = (1 + slope) x`, differencing them after each
    /// activation and rescaling at the end recovers `x`.
    pub fn identity() -> Self {
        let mut net = Self::zeros();
        let one = T::ONE;
        net.conv1.set_w(0, 0, 1, one);
        net.conv1.set_w(1, 0, 1, -one);
        net.conv2.set_w(0, 0, 1, one);
        net.conv2.set_w(0, 1, 1, -one);
        net.conv2.set_w(1, 0, 1, -one);
        net.conv2.set_w(1, 1, 1, one);
        let gain = T::from_f64(1.0 / ((1.0 + LEAKY_SLOPE) * (1.0 + LEAKY_SLOPE)));
        net.conv3.set_w(0, 0, 1, gain);
        net.conv3.set_w(0, 1, 1, -gain);
        net
    }

    /// Output depends only on the last bias: every weight is zero.
    pub fn constant(c: T) -> Self {
        let mut net = Self::zeros();
        net.conv3.bias[0] = c;
        net
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        self.forward_taped(x).0
    }

    pub fn forward_taped(&self, x: &[T]) -> (Vec<T>, DenoiserTape<T>) {
        self.forward_segments(x, &[x.len()])
    }

    /// Runs independent signals of lengths `segments`, concatenated in `x`,
    /// through the network in one pass. Panics if the lengths do not tile `x`.
    pub fn forward_segments(&self, x: &[T], segments: &[usize]) -> (Vec<T>, DenoiserTape<T>) {
        let mut out = Vec::new();
        let mut tape = DenoiserTape::default();
        self.forward_into(x, segments, &mut out, &mut tape);
        (out, tape)
    }

    /// [`DenoiserNet::forward_segments`] reusing the allocations of `out` and
    /// `tape`. Training loops keep both alive across steps.
    pub fn forward_into(&self, x: &[T], segments: &[usize], out: &mut Vec<T>, tape: &mut DenoiserTape<T>) {
        let slope = T::from_f64(LEAKY_SLOPE);
        let t = tape;
        self.conv1
            .forward_segments_into(x, segments, &mut t.pre1, &mut t.t1)
            .expect("segments tile the input");
        leaky_into(&t.pre1, slope, &mut t.act);
        self.conv2
            .forward_segments_into(&t.act, segments, &mut t.pre2, &mut t.t2)
            .expect("hidden channels match");
        leaky_into(&t.pre2, slope, &mut t.act);
        self.conv3
            .forward_segments_into(&t.act, segments, out, &mut t.t3)
            .expect("hidden channels match");
    }

    /// Accumulate parameter gradients of a recorded forward pass into `grads`.
    pub fn backward(&self, tape: &DenoiserTape<T>, grad_out: &[T], grads: &mut DenoiserNet<T>) {
        self.backward_with(tape, grad_out, grads, &mut BackwardScratch::default());
    }

    pub fn backward_with(
        &self,
        tape: &DenoiserTape<T>,
        grad_out: &[T],
        grads: &mut DenoiserNet<T>,
        scratch: &mut BackwardScratch<T>,
    ) {
        let slope = T::from_f64(LEAKY_SLOPE);
        let BackwardScratch { g1, g2, cols } = scratch;
        self.conv3
            .backward_into(&tape.t3, grad_out, &mut grads.conv3, Some(&mut *g2), cols);
        leaky_relu_backward(&tape.pre2, g2, slope);
        self.conv2
            .backward_into(&tape.t2, g2, &mut grads.conv2, Some(&mut *g1), cols);
        leaky_relu_backward(&tape.pre1, g1, slope);
        self.conv1.backward_into(&tape.t1, g1, &mut grads.conv1, None, cols);
    }

    pub fn cast<U: Real>(&self) -> DenoiserNet<U> {
        let conv = |c: &Conv1d<T>| {
            let mut out = Conv1d::<U>::zeros(c.in_channels(), c.out_channels());
            out.weight = c.weight.iter().map(|v| U::from_f64(v.to_f64())).collect();
            out.bias = c.bias.iter().map(|v| U::from_f64(v.to_f64())).collect();
            out
        };
        DenoiserNet {
            conv1: conv(&self.conv1),
            conv2: conv(&self.conv2),
            conv3: conv(&self.conv3),
        }
    }
}

impl<T: Real> Params<T> for DenoiserNet<T> {
    fn params(&self) -> Vec<&[T]> {
        let mut p = self.conv1.params();
        p.extend(self.conv2.params());
        p.extend(self.conv3.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut p = self.conv1.params_mut();
        p.extend(self.conv2.params_mut());
        p.extend(self.conv3.params_mut());
        p
    }
}

impl Checkpoint for DenoiserNet<f64> {
    fn kind(&self) -> &'static str {
        "denoiser"
    }

    fn tensor_specs(&self) -> Vec<TensorSpec> {
        let h = HIDDEN_CHANNELS;
        vec![
            TensorSpec::new("conv1.weight", &[h, 1, 3]),
            TensorSpec::new("conv1.bias", &[h]),
            TensorSpec::new("conv2.weight", &[h, h, 3]),
            TensorSpec::new("conv2.bias", &[h]),
            TensorSpec::new("conv3.weight", &[1, h, 3]),
            TensorSpec::new("conv3.bias", &[1]),
        ]
    }
}

/// Apply the network to a whole signal.
pub fn denoise<T: Real>(net: &DenoiserNet<T>, s: &Signal) -> Signal {
    let x: Vec<T> = s.samples().iter().map(|&v| T::from_f64(v)).collect();
    let y = net.forward(&x).into_iter().map(T::to_f64).collect();
    s.with_samples(y).expect("finite network output")
}

fn sq_dist<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y).to_f64();
            d * d
        })
        .sum()
}

/// `||f(s^l) - s^r||^2 + ||f(s^r) - s^l||^2`.
pub fn n2n_loss<T: Real>(net: &DenoiserNet<T>, left: &Signal, right: &Signal) -> Result<f64> {
    if left.len() != right.len() {
        return Err(IpsdError::invalid(format!(
            "sub-signal lengths differ: {} vs {}",
            left.len(),
            right.len()
        )));
    }
    let l: Vec<T> = left.samples().iter().map(|&v| T::from_f64(v)).collect();
    let r: Vec<T> = right.samples().iter().map(|&v| T::from_f64(v)).collect();
    Ok(sq_dist(&net.forward(&l), &r) + sq_dist(&net.forward(&r), &l))
}

/// `||f(pi_l(s)) - pi_l(f(s))||^2 + ||f(pi_r(s)) - pi_r(f(s))||^2`.
pub fn consistency_loss<T: Real>(
    net: &DenoiserNet<T>,
    s: &Signal,
    choice: &PartitionChoice,
    catalog: &PartitionCatalog,
) -> Result<f64> {
    let pair = crate::signal::apply_partition(s, choice, catalog)?;
    let full = denoise(net, s);
    let (pl, pr) = split_samples(full.samples(), choice, catalog);
    let fl = denoise(net, &pair.left);
    let fr = denoise(net, &pair.right);
    Ok(sq_dist(fl.samples(), &pl) + sq_dist(fr.samples(), &pr))
}

/// Stop once the population variance of the last `window` losses drops
/// below `variance_threshold`, or after `max_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceCriterion {
    pub window: usize,
    pub variance_threshold: f64,
    pub max_steps: usize,
}

impl Default for ConvergenceCriterion {
    fn default() -> Self {
        ConvergenceCriterion {
            window: 10,
            variance_threshold: 1e-6,
            max_steps: 2000,
        }
    }
}

impl ConvergenceCriterion {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(IpsdError::invalid("convergence window must be at least 2"));
        }
        if !(self.variance_threshold > 0.0) {
            return Err(IpsdError::invalid("variance threshold must be positive"));
        }
        if self.max_steps < self.window || self.max_steps < REWARD_WINDOW {
            return Err(IpsdError::invalid(format!(
                "step cap {} is below the convergence window",
                self.max_steps
            )));
        }
        Ok(())
    }

    pub fn is_met(&self, losses: &[f64]) -> bool {
        if losses.len() < self.window {
            return false;
        }
        let tail = &losses[losses.len() - self.window..];
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        let var = tail.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / tail.len() as f64;
        var < self.variance_threshold
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub adam: AdamConfig,
    pub criterion: ConvergenceCriterion,
    pub precision: Precision,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            adam: AdamConfig::with_lr(1e-3),
            criterion: ConvergenceCriterion::default(),
            precision: Precision::F64,
        }
    }
}

/// Per-step losses of one training run, both divided by the signal length
/// (mean squared error per predicted sample).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Noise2Noise part, `J^d_n`.
    pub n2n: Vec<f64>,
    /// Noise2Noise plus consistency terms, the quantity being minimized.
    pub full: Vec<f64>,
    pub converged: bool,
}

impl TrainTrace {
    pub fn steps(&self) -> usize {
        self.n2n.len()
    }

    pub fn final_n2n(&self) -> Option<f64> {
        self.n2n.last().copied()
    }

    /// CSV with columns `step,n2n,full` (1-based steps).
    pub fn write_csv<W: Write>(&self, mut w: W, header_comment: Option<&str>) -> std::io::Result<()> {
        if let Some(c) = header_comment {
            for line in c.lines() {
                writeln!(w, "# {line}")?;
            }
        }
        writeln!(w, "step,n2n,full")?;
        for (i, (j, f)) in self.n2n.iter().zip(&self.full).enumerate() {
            writeln!(w, "{},{},{}", i + 1, j, f)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, header_comment: Option<&str>) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| IpsdError::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file), header_comment)
            .map_err(|e| IpsdError::io(path, e))
    }
}

/// Number of trailing losses averaged into the reward.
pub const REWARD_WINDOW: usize = 10;

/// Negative mean of the last ten Noise2Noise losses.
pub fn reward_from_trace(trace: &TrainTrace) -> Result<f64> {
    let n = trace.steps();
    if n < REWARD_WINDOW {
        return Err(IpsdError::invalid(format!(
            "reward needs at least {REWARD_WINDOW} training steps, trace has {n}"
        )));
    }
    let tail = &trace.n2n[n - REWARD_WINDOW..];
    Ok(-tail.iter().sum::<f64>() / REWARD_WINDOW as f64)
}

/// Train a freshly initialized network on the partition `choice` of `s`.
pub fn train_to_convergence<T: Real>(
    s: &Signal,
    choice: &PartitionChoice,
    catalog: &PartitionCatalog,
    cfg: &DenoiserConfig,
    rng: &mut Rng,
) -> Result<(DenoiserNet<T>, TrainTrace)> {
    let net = DenoiserNet::<T>::init(rng);
    train_from(net, s, choice, catalog, cfg)
}

/// Train starting from `net`. Gradient steps are full-batch and deterministic.
pub fn train_from<T: Real>(
    mut net: DenoiserNet<T>,
    s: &Signal,
    choice: &PartitionChoice,
    catalog: &PartitionCatalog,
    cfg: &DenoiserConfig,
) -> Result<(DenoiserNet<T>, TrainTrace)> {
    cfg.criterion.validate()?;
    // validates lengths and catalog indices
    crate::signal::apply_partition(s, choice, catalog)?;
    let full: Vec<T> = s.samples().iter().map(|&v| T::from_f64(v)).collect();
    let (sl, sr) = split_samples(&full, choice, catalog);
    let scale = 1.0 / s.len() as f64;
    let two_scale = T::from_f64(2.0 * scale);

    // one batched pass over [sl | sr | s]
    let h = sl.len();
    let segments = [h, h, full.len()];
    let mut input = Vec::with_capacity(2 * full.len());
    input.extend_from_slice(&sl);
    input.extend_from_slice(&sr);
    input.extend_from_slice(&full);

    let mut adam = Adam::new(cfg.adam, &net);
    let mut grads = DenoiserNet::<T>::zeros();
    let mut trace = TrainTrace::default();
    let mut grad_out = vec![T::ZERO; input.len()];
    let (mut out, mut tape, mut scratch) = (Vec::new(), DenoiserTape::default(), BackwardScratch::default());
    for _ in 0..cfg.criterion.max_steps {
        net.forward_into(&input, &segments, &mut out, &mut tape);
        let (yl, rest) = out.split_at(h);
        let (yr, y) = rest.split_at(h);
        let (pl, pr) = split_samples(y, choice, catalog);

        let n2n = sq_dist(yl, &sr) + sq_dist(yr, &sl);
        let cons = sq_dist(yl, &pl) + sq_dist(yr, &pr);
        trace.n2n.push(n2n * scale);
        trace.full.push((n2n + cons) * scale);
        if !(n2n.is_finite() && cons.is_finite()) {
            return Err(IpsdError::TrainingDiverged {
                trace: Box::new(trace),
            });
        }
        if cfg.criterion.is_met(&trace.full) {
            trace.converged = true;
            break;
        }

        // d/dyl: 2(yl - sr) + 2(yl - pl); d/dy gathers -2(yl - pl), -2(yr - pr)
        let mut cl = Vec::with_capacity(h);
        let mut cr = Vec::with_capacity(h);
        {
            let (gl, rest) = grad_out.split_at_mut(h);
            let (gr, _) = rest.split_at_mut(h);
            for j in 0..h {
                let (dl, dr) = (yl[j] - pl[j], yr[j] - pr[j]);
                gl[j] = two_scale * (yl[j] - sr[j] + dl);
                gr[j] = two_scale * (yr[j] - sl[j] + dr);
                cl.push(-two_scale * dl);
                cr.push(-two_scale * dr);
            }
        }
        let gy = merge_samples(&cl, &cr, choice, catalog);
        grad_out[2 * h..].copy_from_slice(&gy);

        grads.set_zero();
        net.backward_with(&tape, &grad_out, &mut grads, &mut scratch);
        adam.step(&mut net, &grads)?;
    }
    Ok((net, trace))
}

fn leaky_into<T: Real>(pre: &[T], slope: T, out: &mut Vec<T>) {
    out.clear();
    out.extend(pre.iter().map(|&v| leaky(v, slope)));
}

/// A trained network in whichever precision it was trained.
#[derive(Clone, Debug)]
pub enum TrainedDenoiser {
    F32(DenoiserNet<f32>),
    F64(DenoiserNet<f64>),
}

impl TrainedDenoiser {
    pub fn denoise(&self, s: &Signal) -> Signal {
        match self {
            TrainedDenoiser::F32(n) => denoise(n, s),
            TrainedDenoiser::F64(n) => denoise(n, s),
        }
    }

    pub fn to_f64(&self) -> DenoiserNet<f64> {
        match self {
            TrainedDenoiser::F32(n) => n.cast(),
            TrainedDenoiser::F64(n) => n.clone(),
        }
    }
}

/// One training run at the configured precision.
#[derive(Clone, Debug)]
pub struct Fit {
    pub net: TrainedDenoiser,
    pub trace: TrainTrace,
    pub reward: f64,
}

pub fn fit(
    s: &Signal,
    choice: &PartitionChoice,
    catalog: &PartitionCatalog,
    cfg: &DenoiserConfig,
    rng: &mut Rng,
) -> Result<Fit> {
    let (net, trace) = match cfg.precision {
        Precision::F32 => {
            let (n, t) = train_to_convergence::<f32>(s, choice, catalog, cfg, rng)?;
            (TrainedDenoiser::F32(n), t)
        }
        Precision::F64 => {
            let (n, t) = train_to_convergence::<f64>(s, choice, catalog, cfg, rng)?;
            (TrainedDenoiser::F64(n), t)
        }
    };
    let reward = reward_from_trace(&trace)?;
    Ok(Fit { net, trace, reward })
}

/// Train on two independent noisy realizations of the same clean signal with
/// the N2N loss alone. There is no full signal, so there is no consistency
/// term and `trace.full` equals `trace.n2n`.
pub fn train_pair<T: Real>(
    left: &Signal,
    right: &Signal,
    cfg: &DenoiserConfig,
    rng: &mut Rng,
) -> Result<(DenoiserNet<T>, TrainTrace)> {
    cfg.criterion.validate()?;
    if left.len() != right.len() {
        return Err(IpsdError::invalid(format!(
            "pair lengths differ: {} vs {}",
            left.len(),
            right.len()
        )));
    }
    let mut net = DenoiserNet::<T>::init(rng);
    let l: Vec<T> = left.samples().iter().map(|&v| T::from_f64(v)).collect();
    let r: Vec<T> = right.samples().iter().map(|&v| T::from_f64(v)).collect();
    let h = l.len();
    let scale = 1.0 / (2 * h) as f64;
    let two_scale = T::from_f64(2.0 * scale);
    let input: Vec<T> = l.iter().chain(&r).copied().collect();
    let segments = [h, h];

    let mut adam = Adam::new(cfg.adam, &net);
    let mut grads = DenoiserNet::<T>::zeros();
    let mut trace = TrainTrace::default();
    let mut grad_out = vec![T::ZERO; 2 * h];
    let (mut out, mut tape, mut scratch) = (Vec::new(), DenoiserTape::default(), BackwardScratch::default());
    for _ in 0..cfg.criterion.max_steps {
        net.forward_into(&input, &segments, &mut out, &mut tape);
        let (yl, yr) = out.split_at(h);
        let n2n = sq_dist(yl, &r) + sq_dist(yr, &l);
        trace.n2n.push(n2n * scale);
        trace.full.push(n2n * scale);
        if !n2n.is_finite() {
            return Err(IpsdError::TrainingDiverged {
                trace: Box::new(trace),
            });
        }
        if cfg.criterion.is_met(&trace.full) {
            trace.converged = true;
            break;
        }
        for j in 0..h {
            grad_out[j] = two_scale * (yl[j] - r[j]);
            grad_out[h + j] = two_scale * (yr[j] - l[j]);
        }
        grads.set_zero();
        net.backward_with(&tape, &grad_out, &mut grads, &mut scratch);
        adam.step(&mut net, &grads)?;
    }
    Ok((net, trace))
}

/// [`train_pair`] at the configured precision.
pub fn fit_pair(left: &Signal, right: &Signal, cfg: &DenoiserConfig, rng: &mut Rng) -> Result<Fit> {
    let (net, trace) = match cfg.precision {
        Precision::F32 => {
            let (n, t) = train_pair::<f32>(left, right, cfg, rng)?;
            (TrainedDenoiser::F32(n), t)
        }
        Precision::F64 => {
            let (n, t) = train_pair::<f64>(left, right, cfg, rng)?;
            (TrainedDenoiser::F64(n), t)
        }
    };
    let reward = reward_from_trace(&trace)?;
    Ok(Fit { net, trace, reward })
}

/// Denoised output of a fit on the unit-variance version of `s`.
#[derive(Clone, Debug)]
pub struct ChoiceDenoise {
    /// In the units of the input signal.
    pub denoised: Signal,
    pub fit: Fit,
    pub normalizer: Normalizer,
}

/// Normalize `s`, train on `choice`, denoise the full signal and undo the
/// normalization.
pub fn denoise_with_choice(
    s: &Signal,
    choice: &PartitionChoice,
    catalog: &PartitionCatalog,
    cfg: &DenoiserConfig,
    rng: &mut Rng,
) -> Result<ChoiceDenoise> {
    let normalizer = Normalizer::fit(s);
    let sn = normalizer.apply(s);
    let fit = fit(&sn, choice, catalog, cfg, rng)?;
    let denoised = normalizer.invert(&fit.net.denoise(&sn));
    Ok(ChoiceDenoise {
        denoised,
        fit,
        normalizer,
    })
}

/// Scales a signal to unit sample variance and back.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub scale: f64,
}

impl Normalizer {
    /// Standard deviation of `s`; a constant signal gets scale 1.
    pub fn fit(s: &Signal) -> Self {
        let n = s.len() as f64;
        let mean = s.samples().iter().sum::<f64>() / n;
        let var = s.samples().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        Normalizer {
            scale: if sd > 0.0 && sd.is_finite() { sd } else { 1.0 },
        }
    }

    pub fn apply(&self, s: &Signal) -> Signal {
        s.with_samples(s.samples().iter().map(|v| v / self.scale).collect())
            .expect("finite after scaling")
    }

    pub fn invert(&self, s: &Signal) -> Signal {
        s.with_samples(s.samples().iter().map(|v| v * self.scale).collect())
            .expect("finite after scaling")
    }
}
