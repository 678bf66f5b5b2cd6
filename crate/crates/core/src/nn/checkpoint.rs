//! Parameter checkpoints: a flat little-endian `f64` file plus a TOML
//! manifest listing each tensor's name and shape in canonical order.
//!
//! `save(net, "run/policy")` writes `run/policy.bin` and `run/policy.toml`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Params;
use crate::error::{IpsdError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn new(name: impl Into<String>, shape: &[usize]) -> Self {
        TensorSpec {
            name: name.into(),
            shape: shape.to_vec(),
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// A network whose tensors can be named for a manifest.
pub trait Checkpoint: Params<f64> {
    /// Architecture tag written to the manifest, e.g. `"denoiser"`.
    fn kind(&self) -> &'static str;
    fn tensor_specs(&self) -> Vec<TensorSpec>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub dtype: String,
    pub total: usize,
    /// Free-form architecture or run metadata.
    #[serde(default)]
    pub meta: toml::Table,
    pub tensors: Vec<TensorSpec>,
}

pub fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("toml"))
}

pub fn save<N: Checkpoint>(net: &N, stem: &Path, meta: toml::Table) -> Result<()> {
    let specs = net.tensor_specs();
    let params = net.params();
    debug_assert_eq!(specs.len(), params.len());
    let manifest = Manifest {
        kind: net.kind().to_string(),
        dtype: "f64le".to_string(),
        total: net.num_params(),
        meta,
        tensors: specs,
    };
    let (bin, man) = paths(stem);
    let mut bytes = Vec::with_capacity(manifest.total * 8);
    for p in params {
        for v in p {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| IpsdError::format(&man, e.to_string()))?;
    fs::write(&bin, bytes).map_err(|e| IpsdError::io(&bin, e))?;
    fs::write(&man, text).map_err(|e| IpsdError::io(&man, e))?;
    Ok(())
}

pub fn read_manifest(stem: &Path) -> Result<Manifest> {
    let (_, man) = paths(stem);
    let text = fs::read_to_string(&man).map_err(|e| IpsdError::io(&man, e))?;
    toml::from_str(&text).map_err(|e| IpsdError::format(&man, e.to_string()))
}

/// Fill `net` from a checkpoint whose manifest matches its architecture.
pub fn load_into<N: Checkpoint>(net: &mut N, stem: &Path) -> Result<Manifest> {
    let manifest = read_manifest(stem)?;
    let (bin, man) = paths(stem);
    if manifest.kind != net.kind() {
        return Err(IpsdError::format(
            &man,
            format!("checkpoint holds a {}, expected a {}", manifest.kind, net.kind()),
        ));
    }
    if manifest.dtype != "f64le" {
        return Err(IpsdError::format(&man, format!("unsupported dtype {}", manifest.dtype)));
    }
    if manifest.tensors != net.tensor_specs() {
        return Err(IpsdError::format(&man, "tensor shapes do not match the network"));
    }
    let bytes = fs::read(&bin).map_err(|e| IpsdError::io(&bin, e))?;
    if bytes.len() != manifest.total * 8 || manifest.total != net.num_params() {
        return Err(IpsdError::format(
            &bin,
            format!("expected {} values, found {} bytes", manifest.total, bytes.len()),
        ));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    for p in net.params_mut() {
        for v in p.iter_mut() {
            *v = values.next().expect("length checked above");
        }
    }
    Ok(manifest)
}
