//! Versioned JSON checkpoints with a sha256 content checksum.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, Wiring};

pub const FORMAT: &str = "sigtrust-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub wiring: Wiring,
    pub in_dim: usize,
    /// Free-form provenance such as the split checksum.
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<TensorRecord>,
    pub checksum: String,
}

fn content_checksum(
    config: &ModelConfig,
    wiring: &Wiring,
    in_dim: usize,
    metadata: &BTreeMap<String, String>,
    tensors: &[TensorRecord],
) -> String {
    let mut h = Sha256::new();
    h.update(FORMAT.as_bytes());
    h.update(VERSION.to_le_bytes());
    h.update(serde_json::to_vec(config).expect("config serializes"));
    h.update(serde_json::to_vec(wiring).expect("wiring serializes"));
    h.update((in_dim as u64).to_le_bytes());
    h.update(serde_json::to_vec(metadata).expect("metadata serializes"));
    for t in tensors {
        h.update((t.name.len() as u64).to_le_bytes());
        h.update(t.name.as_bytes());
        h.update((t.shape.len() as u64).to_le_bytes());
        for &d in &t.shape {
            h.update((d as u64).to_le_bytes());
        }
        for x in &t.data {
            h.update(x.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

impl Checkpoint {
    pub fn from_params(params: &ModelParams, metadata: BTreeMap<String, String>) -> Self {
        let shapes = params.tensor_shapes();
        let tensors: Vec<TensorRecord> = params
            .tensors()
            .into_iter()
            .zip(shapes)
            .map(|((name, _, data), shape)| TensorRecord {
                name,
                shape,
                data: data.to_vec(),
            })
            .collect();
        let checksum = content_checksum(
            &params.config,
            &params.wiring,
            params.in_dim,
            &metadata,
            &tensors,
        );
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            config: params.config,
            wiring: params.wiring,
            in_dim: params.in_dim,
            metadata,
            tensors,
            checksum,
        }
    }

    pub fn encode(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    /// Rebuilds parameters, checking format, version, checksum and the tensor
    /// schema implied by the stored config.
    pub fn to_params(&self) -> Result<ModelParams> {
        if self.format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format {:?}",
                self.format
            )));
        }
        if self.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {VERSION})",
                self.version
            )));
        }
        let expected = content_checksum(
            &self.config,
            &self.wiring,
            self.in_dim,
            &self.metadata,
            &self.tensors,
        );
        if expected != self.checksum {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        self.config
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if self.config.num_layers > self.tensors.len() {
            return Err(Error::Checkpoint("fewer tensors than layers".into()));
        }
        let shapes = expected_shapes(&self.config, &self.wiring, self.in_dim);
        let stored: Vec<&[usize]> = self.tensors.iter().map(|t| t.shape.as_slice()).collect();
        let wanted: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
        if stored != wanted {
            return Err(Error::Checkpoint(format!(
                "tensor shapes {stored:?} do not match the stored config, expected {wanted:?}"
            )));
        }
        if let Some(t) = self.tensors.iter().find(|t| {
            t.shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)) != Some(t.data.len())
        }) {
            return Err(Error::Checkpoint(format!(
                "tensor {} has the wrong number of values",
                t.name
            )));
        }
        let mut params = ModelParams::init(&self.config, &self.wiring, self.in_dim)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let shapes = params.tensor_shapes();
        let slots = params.tensors_mut();
        for (((name, _, dst), shape), rec) in slots.into_iter().zip(shapes).zip(&self.tensors) {
            if rec.name != name || rec.shape != shape || rec.data.len() != dst.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {:?} {:?} does not match expected {name:?} {shape:?}",
                    rec.name, rec.shape
                )));
            }
            if rec.data.iter().any(|x| !x.is_finite()) {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} holds non-finite values"
                )));
            }
            dst.copy_from_slice(&rec.data);
        }
        Ok(params)
    }
}

/// Tensor shapes in schema order, computed without allocating the tensors.
fn expected_shapes(config: &ModelConfig, wiring: &Wiring, in_dim: usize) -> Vec<Vec<usize>> {
    let channels = wiring.channels.num_channels();
    let h = config.hidden_dim;
    let mut out = Vec::new();
    for l in 0..config.num_layers {
        let fan_in = if l == 0 {
            in_dim
        } else {
            channels.saturating_mul(h)
        };
        out.extend((0..channels).map(|_| vec![fan_in, h]));
        if wiring.attention {
            out.extend((0..channels).map(|_| vec![h.saturating_mul(2).saturating_add(1)]));
        }
    }
    out.push(vec![channels.saturating_mul(h), config.mlp_hidden]);
    out.push(vec![config.mlp_hidden]);
    out.push(vec![config.mlp_hidden]);
    out.push(vec![1]);
    out
}

/// Parses and validates checkpoint text.
pub fn decode(text: &str) -> Result<Checkpoint> {
    let ckpt: Checkpoint = serde_json::from_str(text)
        .map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
    ckpt.to_params()?;
    Ok(ckpt)
}

pub fn save(path: &Path, params: &ModelParams, metadata: BTreeMap<String, String>) -> Result<()> {
    std::fs::write(path, Checkpoint::from_params(params, metadata).encode())
        .map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint; when `expected` is given the stored config must equal it.
pub fn load(
    path: &Path,
    expected: Option<(&ModelConfig, &Wiring)>,
) -> Result<(ModelParams, Checkpoint)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt = decode(&text)?;
    if let Some((cfg, wiring)) = expected {
        if ckpt.config != *cfg || ckpt.wiring != *wiring {
            return Err(Error::Checkpoint(format!(
                "checkpoint config {:?}/{:?} differs from requested {:?}/{:?}",
                ckpt.config, ckpt.wiring, cfg, wiring
            )));
        }
    }
    Ok((ckpt.to_params()?, ckpt))
}
