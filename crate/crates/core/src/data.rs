//! Synthetic clean signals, noise generators and SNR-exact mixing.
//!
//! Clean signals come in two synthetic families: `bandmix`, a sum of
//! sinusoids in the classical EEG bands with 1/f amplitude decay, and
//! `period2`, an alternating `+a, -a, ...` sequence on which interleaved
//! partitioning fails by construction. Real recordings can be loaded from
//! files.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{IpsdError, Result};
use crate::rng::{self, Rng};
use crate::signal::Signal;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Delta,
    Theta,
    Alpha,
    Beta,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::Delta, Band::Theta, Band::Alpha, Band::Beta];

    /// Frequency range in Hz.
    pub fn range_hz(self) -> (f64, f64) {
        match self {
            Band::Delta => (0.5, 4.0),
            Band::Theta => (4.0, 8.0),
            Band::Alpha => (8.0, 13.0),
            Band::Beta => (13.0, 30.0),
        }
    }
}

/// Sinusoids drawn from one band. Each tone at frequency `f` has amplitude
/// `amplitude / f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub band: Band,
    pub amplitude: f64,
    #[serde(default = "default_tones")]
    pub tones: usize,
    /// Fixes the tone frequencies and phases across signals. Without it they
    /// are drawn from the generator's stream, so every signal differs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_seed: Option<u64>,
}

fn default_tones() -> usize {
    3
}

impl Component {
    pub fn new(band: Band, amplitude: f64) -> Self {
        Component {
            band,
            amplitude,
            tones: default_tones(),
            phase_seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum CleanFamily {
    Bandmix { components: Vec<Component> },
    Period2 { amplitude: f64 },
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleanSpec {
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    #[serde(flatten)]
    pub family: CleanFamily,
}

impl Default for CleanSpec {
    fn default() -> Self {
        CleanSpec {
            duration_s: 10.0,
            sample_rate_hz: 256.0,
            family: CleanFamily::Bandmix {
                components: Band::ALL.iter().map(|&b| Component::new(b, 1.0)).collect(),
            },
        }
    }
}

impl CleanSpec {
    pub fn period2(amplitude: f64, len: usize, sample_rate_hz: f64) -> Self {
        CleanSpec {
            duration_s: len as f64 / sample_rate_hz,
            sample_rate_hz,
            family: CleanFamily::Period2 { amplitude },
        }
    }

    /// Number of samples a synthetic family produces.
    pub fn len(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).round() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(IpsdError::invalid("sample rate must be positive"));
        }
        if matches!(self.family, CleanFamily::File { .. }) {
            return Ok(());
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) || self.is_empty() {
            return Err(IpsdError::invalid("duration must cover at least one sample"));
        }
        match &self.family {
            CleanFamily::Bandmix { components } => {
                for c in components {
                    if !(c.amplitude >= 0.0 && c.amplitude.is_finite()) {
                        return Err(IpsdError::invalid("component amplitudes must be >= 0"));
                    }
                }
            }
            CleanFamily::Period2 { amplitude } => {
                if !(*amplitude >= 0.0 && amplitude.is_finite()) {
                    return Err(IpsdError::invalid("period-2 amplitude must be >= 0"));
                }
            }
            CleanFamily::File { .. } => {}
        }
        Ok(())
    }
}

/// Generate (or load) one clean signal.
pub fn gen_clean(spec: &CleanSpec, rng: &mut Rng) -> Result<Signal> {
    spec.validate()?;
    let fs = spec.sample_rate_hz;
    let n = spec.len();
    let samples = match &spec.family {
        CleanFamily::File { path } => return crate::io::read_signal(path),
        CleanFamily::Period2 { amplitude } => (0..n)
            .map(|i| if i % 2 == 0 { *amplitude } else { -amplitude })
            .collect(),
        CleanFamily::Bandmix { components } => {
            let mut x = vec![0.0; n];
            for c in components {
                let mut own;
                let r: &mut Rng = match c.phase_seed {
                    Some(seed) => {
                        own = rng::from_seed(seed);
                        &mut own
                    }
                    None => rng,
                };
                let (lo, hi) = c.band.range_hz();
                let hi = hi.min(fs / 2.0);
                for _ in 0..c.tones {
                    let f = if hi > lo { r.random_range(lo..hi) } else { lo };
                    let phase = r.random_range(0.0..2.0 * PI);
                    let a = c.amplitude / f;
                    if a == 0.0 {
                        continue;
                    }
                    for (i, v) in x.iter_mut().enumerate() {
                        *v += a * (2.0 * PI * f * i as f64 / fs + phase).sin();
                    }
                }
            }
            x
        }
    };
    Signal::new(samples, fs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseKind {
    Wgn,
    Emg,
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub kind: NoiseKind,
    pub target_snr_db: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            kind: NoiseKind::Wgn,
            target_snr_db: 0.0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.target_snr_db.is_finite() {
            return Err(IpsdError::invalid("target SNR must be finite"));
        }
        Ok(())
    }
}

/// Unscaled noise of the requested kind and length. File noise must hold at
/// least `len` samples; the first `len` are used.
pub fn gen_noise(kind: &NoiseKind, len: usize, sample_rate_hz: f64, rng: &mut Rng) -> Result<Signal> {
    match kind {
        NoiseKind::Wgn => {
            let v = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            Signal::new(v, sample_rate_hz)
        }
        NoiseKind::Emg => gen_emg_surrogate(len, sample_rate_hz, rng),
        NoiseKind::File { path } => {
            let s = crate::io::read_signal(path)?;
            if s.len() < len {
                return Err(IpsdError::format(
                    path,
                    format!("noise file has {} samples, need {len}", s.len()),
                ));
            }
            Signal::new(s.samples()[..len].to_vec(), sample_rate_hz)
        }
    }
}

/// `x + c n` with `c` chosen so the mixture has exactly `target_db` SNR.
pub fn mix_at_snr(x: &Signal, n: &Signal, target_db: f64) -> Result<(Signal, f64)> {
    if x.len() != n.len() {
        return Err(IpsdError::invalid(format!(
            "clean has {} samples, noise {}",
            x.len(),
            n.len()
        )));
    }
    if !target_db.is_finite() {
        return Err(IpsdError::invalid("target SNR must be finite"));
    }
    let (px, pn) = (x.energy(), n.energy());
    if px == 0.0 || pn == 0.0 {
        return Err(IpsdError::invalid("mixing needs nonzero clean and noise power"));
    }
    let c = (px / (pn * 10f64.powf(target_db / 10.0))).sqrt();
    let mixed = x
        .samples()
        .iter()
        .zip(n.samples())
        .map(|(a, b)| a + c * b)
        .collect();
    Ok((x.with_samples(mixed)?, c))
}

pub const EMG_BAND_HZ: (f64, f64) = (20.0, 120.0);
const EMG_MIN_LEN: usize = 256;
const BURST_S: (f64, f64) = (0.2, 1.5);
/// Gaps are 1.5x the burst range on average, for a duty cycle near 40%.
const GAP_S: (f64, f64) = (0.3, 2.25);
const ENVELOPE_FLOOR: f64 = 0.05;

/// Bursty band-limited noise standing in for muscle artifacts: Gaussian
/// noise restricted to 20-120 Hz (clipped at Nyquist), multiplied by
/// Hann-shaped bursts of 0.2-1.5 s, then scaled to zero mean and unit
/// variance.
pub fn gen_emg_surrogate(length: usize, sample_rate_hz: f64, rng: &mut Rng) -> Result<Signal> {
    if length < EMG_MIN_LEN {
        return Err(IpsdError::invalid(format!(
            "EMG surrogate needs at least {EMG_MIN_LEN} samples, got {length}"
        )));
    }
    let nyquist = sample_rate_hz / 2.0;
    let (lo, hi) = (EMG_BAND_HZ.0, EMG_BAND_HZ.1.min(nyquist));
    if !(lo < hi) {
        return Err(IpsdError::invalid(format!(
            "sample rate {sample_rate_hz} Hz leaves no room for the EMG band"
        )));
    }

    let mut buf: Vec<Complex<f64>> = (0..length)
        .map(|_| Complex::new(rng.sample(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(length).process(&mut buf);
    let df = sample_rate_hz / length as f64;
    for (k, v) in buf.iter_mut().enumerate() {
        let f = k.min(length - k) as f64 * df;
        if f < lo || f > hi {
            *v = Complex::new(0.0, 0.0);
        }
    }
    let inverse: Arc<dyn rustfft::Fft<f64>> = planner.plan_fft_inverse(length);
    inverse.process(&mut buf);

    let env = burst_envelope(length, sample_rate_hz, rng);
    let mut x: Vec<f64> = buf.iter().zip(&env).map(|(c, e)| c.re * e).collect();
    let mean = x.iter().sum::<f64>() / length as f64;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / length as f64;
    let sd = var.sqrt();
    for v in &mut x {
        *v = (*v - mean) / sd;
    }
    Signal::new(x, sample_rate_hz)
}

fn burst_envelope(length: usize, fs: f64, rng: &mut Rng) -> Vec<f64> {
    let mut env = vec![ENVELOPE_FLOOR; length];
    // random start inside the first gap so bursts do not align with t = 0
    let mut t = -rng.random_range(0.0..GAP_S.1);
    let end = length as f64 / fs;
    while t < end {
        let dur = rng.random_range(BURST_S.0..BURST_S.1);
        let first = (t.max(0.0) * fs).ceil() as usize;
        let last = (((t + dur) * fs).floor() as usize).min(length.saturating_sub(1));
        for (i, e) in env.iter_mut().enumerate().take(last + 1).skip(first) {
            let u = (i as f64 / fs - t) / dur;
            let w = (PI * u).sin().powi(2);
            *e = e.max(w);
        }
        t += dur + rng.random_range(GAP_S.0..GAP_S.1);
    }
    env
}
