//! Checkpoint directory: `manifest.json` plus one little-endian `f32` file
//! per tensor, named in the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BatchNorm, Dense, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::model::{SpectralModel, Variant};
use crate::trainer::FixedComponentBank;

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT: &str = "skewmix-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankSnapshot {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub architecture: EncoderConfig,
    pub k: usize,
    pub bands: usize,
    pub sigma_floor: f64,
    pub leaky_slope: f64,
    pub seed: u64,
    pub epoch: usize,
    pub variant: Variant,
    /// Activated bank shapes, informational; the tensors are authoritative.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bank: Option<BankSnapshot>,
    pub tensors: Vec<TensorEntry>,
}

fn tensor_shapes(model: &SpectralModel<f32>) -> Vec<(String, Vec<usize>, &[f32])> {
    let enc = &model.encoder;
    let mut out = Vec::new();
    for (l, d) in enc.dense.iter().enumerate() {
        out.push((format!("dense{l}.weight"), vec![d.outputs, d.inputs], d.weight.as_slice()));
        out.push((format!("dense{l}.bias"), vec![d.outputs], d.bias.as_slice()));
    }
    for (l, n) in enc.norms.iter().enumerate() {
        let w = n.gamma.len();
        out.push((format!("bn{l}.gamma"), vec![w], n.gamma.as_slice()));
        out.push((format!("bn{l}.beta"), vec![w], n.beta.as_slice()));
        out.push((format!("bn{l}.running_mean"), vec![w], n.running_mean.as_slice()));
        out.push((format!("bn{l}.running_var"), vec![w], n.running_var.as_slice()));
    }
    if let Some(b) = &model.bank {
        out.push(("bank.mu".into(), vec![b.k()], b.mu.as_slice()));
        out.push(("bank.sigma".into(), vec![b.k()], b.sigma.as_slice()));
        out.push(("bank.alpha".into(), vec![b.k()], b.alpha.as_slice()));
    }
    out
}

pub fn build_manifest(model: &SpectralModel<f32>, seed: u64, epoch: usize) -> CheckpointManifest {
    let cfg = model.config().clone();
    let bank = model.bank.as_ref().map(|b| {
        let act = b.activated(&cfg);
        BankSnapshot {
            mu: act.iter().map(|a| a.0).collect(),
            sigma: act.iter().map(|a| a.1).collect(),
            alpha: act.iter().map(|a| a.2).collect(),
        }
    });
    CheckpointManifest {
        format: FORMAT.into(),
        version: VERSION,
        k: cfg.k,
        bands: cfg.bands,
        sigma_floor: cfg.sigma_floor,
        leaky_slope: cfg.leaky_slope,
        architecture: cfg,
        seed,
        epoch,
        variant: model.variant(),
        bank,
        tensors: tensor_shapes(model)
            .into_iter()
            .map(|(name, shape, _)| TensorEntry {
                file: format!("{name}.f32"),
                name,
                shape,
            })
            .collect(),
    }
}

/// Writes the checkpoint into `dir` (created if needed) and returns the
/// manifest.
pub fn save_checkpoint(
    model: &SpectralModel<f32>,
    seed: u64,
    epoch: usize,
    dir: impl AsRef<Path>,
) -> Result<CheckpointManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = build_manifest(model, seed, epoch);
    for ((_, _, data), entry) in tensor_shapes(model).into_iter().zip(&manifest.tensors) {
        let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = dir.join(&entry.file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn resolve(path: &Path) -> (PathBuf, PathBuf) {
    if path.is_dir() {
        (path.join(MANIFEST_FILE), path.to_path_buf())
    } else {
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        (path.to_path_buf(), dir)
    }
}

fn read_tensor(dir: &Path, entry: &TensorEntry) -> Result<Vec<f32>> {
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let expected = entry.shape.iter().product::<usize>() * 4;
    if bytes.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

/// Loads from a checkpoint directory or its manifest path.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(SpectralModel<f32>, CheckpointManifest)> {
    let (manifest_path, dir) = resolve(path.as_ref());
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint {} v{}",
            manifest.format, manifest.version
        )));
    }
    let cfg = manifest.architecture.clone();
    cfg.validate()?;
    let template = SpectralModel::<f32>::init(cfg.clone(), manifest.variant, 0)?;
    let expected = build_manifest(&template, manifest.seed, manifest.epoch);
    if expected.tensors != manifest.tensors {
        return Err(Error::Format(
            "manifest tensor list does not match its architecture".into(),
        ));
    }
    let mut tensors = manifest
        .tensors
        .iter()
        .map(|e| read_tensor(&dir, e))
        .collect::<Result<Vec<_>>>()?
        .into_iter();
    let mut next = || tensors.next().expect("tensor count checked");
    let dense = cfg
        .layer_dims()
        .iter()
        .map(|&(inputs, outputs)| Dense {
            inputs,
            outputs,
            weight: next(),
            bias: next(),
        })
        .collect();
    let norms = (0..4)
        .map(|_| BatchNorm {
            gamma: next(),
            beta: next(),
            running_mean: next(),
            running_var: next(),
        })
        .collect();
    let bank = match manifest.variant {
        Variant::Full => None,
        Variant::Fixed => Some(FixedComponentBank {
            mu: next(),
            sigma: next(),
            alpha: next(),
        }),
    };
    let encoder = Encoder {
        config: template.encoder.config().clone(),
        dense,
        norms,
    };
    Ok((SpectralModel { encoder, bank }, manifest))
}
