//! Signal files.
//!
//! Two formats are supported:
//!
//! * text: one decimal sample per line. Lines starting with `#` are comments;
//!   a comment `# sample_rate_hz: 256` sets the sample rate (default 256).
//! * raw: little-endian `f32` samples in `name.f32` plus a TOML sidecar
//!   `name.toml` with `sample_rate_hz`, `length` and `dtype = "f32le"`.
//!
//! The format is picked from the extension: `.f32` is raw, anything else text.
//! Text output uses the shortest representation that parses back to the same
//! `f64`, so text files round-trip exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{IpsdError, Result};
use crate::signal::Signal;

pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 256.0;
const RATE_KEY: &str = "sample_rate_hz:";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignalFormat {
    Text,
    RawF32,
}

impl SignalFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("f32") => SignalFormat::RawF32,
            _ => SignalFormat::Text,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub sample_rate_hz: f64,
    pub length: usize,
    pub dtype: String,
    /// Free-form provenance, e.g. the resolved run configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
}

pub fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("toml")
}

pub fn read_signal(path: &Path) -> Result<Signal> {
    match SignalFormat::from_path(path) {
        SignalFormat::Text => read_text(path),
        SignalFormat::RawF32 => read_raw(path),
    }
}

/// Writes `signal`; `comment` lines are embedded as `#` lines (text) or in
/// the sidecar (raw).
pub fn write_signal(path: &Path, signal: &Signal, comment: Option<&str>) -> Result<()> {
    match SignalFormat::from_path(path) {
        SignalFormat::Text => write_text(path, signal, comment),
        SignalFormat::RawF32 => write_raw(path, signal, comment),
    }
}

pub fn read_text(path: &Path) -> Result<Signal> {
    let text = fs::read_to_string(path).map_err(|e| IpsdError::io(path, e))?;
    parse_text(&text).map_err(|msg| IpsdError::format(path, msg))
}

fn parse_text(text: &str) -> std::result::Result<Signal, String> {
    let mut rate = DEFAULT_SAMPLE_RATE_HZ;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            if let Some(v) = c.trim().strip_prefix(RATE_KEY) {
                rate = v
                    .trim()
                    .parse()
                    .map_err(|_| format!("line {}: bad sample rate {v:?}", i + 1))?;
            }
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| format!("line {}: not a number: {line:?}", i + 1))?;
        samples.push(v);
    }
    if samples.is_empty() {
        return Err("no samples".into());
    }
    Signal::new(samples, rate).map_err(|e| e.to_string())
}

pub fn format_text(signal: &Signal, comment: Option<&str>) -> String {
    let mut out = String::with_capacity(signal.len() * 20);
    if let Some(c) = comment {
        for line in c.lines() {
            let _ = writeln!(out, "# | {line}");
        }
    }
    let _ = writeln!(out, "# {RATE_KEY} {}", signal.sample_rate_hz());
    for v in signal.samples() {
        let _ = writeln!(out, "{v}");
    }
    out
}

pub fn write_text(path: &Path, signal: &Signal, comment: Option<&str>) -> Result<()> {
    fs::write(path, format_text(signal, comment)).map_err(|e| IpsdError::io(path, e))
}

pub fn read_raw(path: &Path) -> Result<Signal> {
    let side = sidecar_path(path);
    let meta_text = fs::read_to_string(&side).map_err(|e| IpsdError::io(&side, e))?;
    let meta: Sidecar = toml::from_str(&meta_text).map_err(|e| IpsdError::format(&side, e.to_string()))?;
    if meta.dtype != "f32le" {
        return Err(IpsdError::format(&side, format!("unsupported dtype {:?}", meta.dtype)));
    }
    let bytes = fs::read(path).map_err(|e| IpsdError::io(path, e))?;
    if bytes.len() != meta.length * 4 {
        return Err(IpsdError::format(
            path,
            format!("expected {} bytes for {} samples, found {}", meta.length * 4, meta.length, bytes.len()),
        ));
    }
    let samples = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Signal::new(samples, meta.sample_rate_hz).map_err(|e| IpsdError::format(path, e.to_string()))
}

pub fn write_raw(path: &Path, signal: &Signal, comment: Option<&str>) -> Result<()> {
    let side = sidecar_path(path);
    let meta = Sidecar {
        sample_rate_hz: signal.sample_rate_hz(),
        length: signal.len(),
        dtype: "f32le".into(),
        comment: comment.map(str::to_owned),
    };
    let bytes: Vec<u8> = signal
        .samples()
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect();
    let text = toml::to_string(&meta).map_err(|e| IpsdError::format(&side, e.to_string()))?;
    fs::write(path, bytes).map_err(|e| IpsdError::io(path, e))?;
    fs::write(&side, text).map_err(|e| IpsdError::io(&side, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        let s = Signal::new(vec![0.1, -1e-300, 1.0 / 3.0, 12345.678, 0.0], 200.0).unwrap();
        write_signal(&p, &s, Some("seed = 3\n[noise]\nkind = \"wgn\"")).unwrap();
        let back = read_signal(&p).unwrap();
        assert_eq!(back, s);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# | seed = 3\n"));
    }

    #[test]
    fn text_accepts_comments_and_defaults_rate() {
        let s = parse_text("# hello\n1.5\n\n  -2\n# trailing\n").unwrap();
        assert_eq!(s.samples(), &[1.5, -2.0]);
        assert_eq!(s.sample_rate_hz(), DEFAULT_SAMPLE_RATE_HZ);
        assert!(parse_text("1\nabc\n").unwrap_err().contains("line 2"));
        assert!(parse_text("# only comments\n").is_err());
        assert!(parse_text("1\nNaN\n").is_err());
    }

    #[test]
    fn raw_round_trip_through_f32() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.f32");
        let s = Signal::new(vec![0.5, -0.25, 3.0], 512.0).unwrap();
        write_signal(&p, &s, None).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 12);
        assert_eq!(read_signal(&p).unwrap(), s);
        let meta: Sidecar = toml::from_str(&fs::read_to_string(sidecar_path(&p)).unwrap()).unwrap();
        assert_eq!(meta.length, 3);
        assert_eq!(meta.dtype, "f32le");
    }

    #[test]
    fn raw_rejects_truncated_data_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.f32");
        let s = Signal::new(vec![0.5, -0.25, 3.0], 512.0).unwrap();
        write_signal(&p, &s, None).unwrap();
        fs::write(&p, [0u8; 8]).unwrap();
        assert!(matches!(read_signal(&p), Err(IpsdError::Format { .. })));
        let missing = dir.path().join("none.txt");
        match read_signal(&missing) {
            Err(IpsdError::Io { path, .. }) => assert_eq!(path, missing),
            other => panic!("{other:?}"),
        }
    }
}
