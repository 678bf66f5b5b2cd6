//! Evaluation metrics: SNR, PSNR and the spectral MSE between Welch PSDs.
//!
//! A zero residual yields `+inf` from [`snr_db`] and [`psnr_db`]; reports
//! spell it `"inf"` so it stays distinguishable from a missing value.

use std::f64::consts::PI;
use std::io::Write;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{IpsdError, Result};
use crate::signal::Signal;

fn check_lengths(x: &Signal, xhat: &Signal) -> Result<()> {
    if x.len() != xhat.len() {
        return Err(IpsdError::invalid(format!(
            "reference has {} samples, estimate {}",
            x.len(),
            xhat.len()
        )));
    }
    Ok(())
}

fn residual_energy(x: &Signal, xhat: &Signal) -> f64 {
    x.samples()
        .iter()
        .zip(xhat.samples())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// `10 log10(||x||^2 / ||x - xhat||^2)`.
pub fn snr_db(x: &Signal, xhat: &Signal) -> Result<f64> {
    check_lengths(x, xhat)?;
    let r = residual_energy(x, xhat);
    if r == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (x.energy() / r).log10())
}

/// `10 log10(max|x|^2 / mean((x - xhat)^2))`.
pub fn psnr_db(x: &Signal, xhat: &Signal) -> Result<f64> {
    check_lengths(x, xhat)?;
    let r = residual_energy(x, xhat);
    if r == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = x.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(10.0 * (peak * peak / (r / x.len() as f64)).log10())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Hann,
}

/// Welch estimator settings. Segments are detrended by their mean and the
/// one-sided density is scaled so that `sum(psd) * df` approximates the
/// signal variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchConfig {
    pub segment_len: usize,
    pub overlap: f64,
    pub window: Window,
    /// Lower clamp applied before taking logarithms.
    pub floor: f64,
}

impl Default for WelchConfig {
    fn default() -> Self {
        WelchConfig {
            segment_len: 256,
            overlap: 0.5,
            window: Window::Hann,
            floor: 1e-12,
        }
    }
}

impl WelchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segment_len < 2 {
            return Err(IpsdError::invalid("Welch segment must hold at least 2 samples"));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(IpsdError::invalid("Welch overlap must lie in [0, 1)"));
        }
        if !(self.floor > 0.0) {
            return Err(IpsdError::invalid("PSD floor must be positive"));
        }
        Ok(())
    }

    /// The same settings with the segment shortened to at most `len`
    /// samples. Metric records use this so short signals still get an
    /// S-MSE; the recorded hash is that of the shortened settings.
    pub fn for_len(&self, len: usize) -> WelchConfig {
        WelchConfig {
            segment_len: self.segment_len.min(len),
            ..*self
        }
    }

    fn step(&self) -> usize {
        let overlap = (self.overlap * self.segment_len as f64).round() as usize;
        (self.segment_len - overlap).max(1)
    }

    /// Short stable fingerprint of the settings, recorded next to S-MSE
    /// values since they are only comparable under one configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("plain struct serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Psd {
    pub freqs: Vec<f64>,
    pub values: Vec<f64>,
}

/// Periodic Hann window of length `n`.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

pub fn welch_psd(s: &Signal, cfg: &WelchConfig) -> Result<Psd> {
    cfg.validate()?;
    let n = cfg.segment_len;
    if s.len() < n {
        return Err(IpsdError::invalid(format!(
            "Welch needs at least {n} samples, signal has {}",
            s.len()
        )));
    }
    let fs = s.sample_rate_hz();
    let win = hann(n);
    let scale = 1.0 / (fs * win.iter().map(|w| w * w).sum::<f64>());
    let fft = FftPlanner::new().plan_fft_forward(n);
    let bins = n / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut count = 0usize;
    let step = cfg.step();
    let mut start = 0;
    while start + n <= s.len() {
        let seg = &s.samples()[start..start + n];
        let mean = seg.iter().sum::<f64>() / n as f64;
        for ((b, &v), &w) in buf.iter_mut().zip(seg).zip(&win) {
            *b = Complex::new((v - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        count += 1;
        start += step;
    }
    let values = acc
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            // one-sided: fold negative frequencies except DC and Nyquist
            let fold = if k == 0 || (n % 2 == 0 && k == n / 2) { 1.0 } else { 2.0 };
            (fold * scale * p / count as f64).max(cfg.floor)
        })
        .collect();
    let freqs = (0..bins).map(|k| k as f64 * fs / n as f64).collect();
    Ok(Psd { freqs, values })
}

/// Mean over frequency bins of the squared difference of the dB PSDs.
pub fn spectral_mse(x: &Signal, xhat: &Signal, cfg: &WelchConfig) -> Result<f64> {
    check_lengths(x, xhat)?;
    let a = welch_psd(x, cfg)?;
    let b = welch_psd(xhat, cfg)?;
    let sum: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(p, q)| {
            let d = 10.0 * p.log10() - 10.0 * q.log10();
            d * d
        })
        .sum();
    Ok(sum / a.values.len() as f64)
}

/// Metrics of one denoised signal.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRecord {
    pub signal_id: String,
    #[serde(serialize_with = "ser_db")]
    pub input_snr_db: f64,
    #[serde(serialize_with = "ser_db")]
    pub output_snr_db: f64,
    #[serde(serialize_with = "ser_db")]
    pub psnr_db: f64,
    pub spectral_mse: f64,
    pub welch_hash: String,
}

impl MetricRecord {
    pub fn evaluate(
        signal_id: impl Into<String>,
        clean: &Signal,
        noisy: &Signal,
        denoised: &Signal,
        welch: &WelchConfig,
    ) -> Result<Self> {
        let welch = welch.for_len(clean.len());
        Ok(MetricRecord {
            signal_id: signal_id.into(),
            input_snr_db: snr_db(clean, noisy)?,
            output_snr_db: snr_db(clean, denoised)?,
            psnr_db: psnr_db(clean, denoised)?,
            spectral_mse: spectral_mse(clean, denoised, &welch)?,
            welch_hash: welch.hash(),
        })
    }
}

/// Formats a dB value, spelling infinities as `inf` / `-inf`.
pub fn fmt_db(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&fmt_db(*v))
    }
}

pub fn write_records_csv<W: Write>(
    mut w: W,
    records: &[MetricRecord],
    header_comment: Option<&str>,
) -> std::io::Result<()> {
    if let Some(c) = header_comment {
        for line in c.lines() {
            writeln!(w, "# {line}")?;
        }
    }
    let mut csv = csv::Writer::from_writer(w);
    for r in records {
        csv.serialize(r)?;
    }
    csv.flush()?;
    Ok(())
}
