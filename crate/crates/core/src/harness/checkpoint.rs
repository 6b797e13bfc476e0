//! Binary checkpoint format.
//!
//! ```text
//! magic     8 bytes  "PRIQCKPT"
//! version   u32 LE
//! length    u64 LE   byte length of the manifest
//! manifest  JSON     format version, run config, seed, loss curve,
//!                    parameter names, shapes and byte offsets
//! blob      f32 LE   parameters back to back, in manifest order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::error::{Error, Result};
use crate::model::PriqModel;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"PRIQCKPT";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: RunConfig,
    seed: u64,
    initial_loss: f64,
    loss_curve: Vec<f64>,
    params: Vec<ParamEntry>,
}

/// A trained model with the configuration and seed that produced it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub seed: u64,
    /// Loss of the very first training step, before any update.
    pub initial_loss: f64,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
    pub model: PriqModel<f32>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut params = Vec::new();
        let mut blob = Vec::with_capacity(self.model.num_params() * 4);
        for p in self.model.params() {
            params.push(ParamEntry { name: p.name.clone(), shape: p.value.shape().to_vec(), offset: blob.len() });
            blob.extend(p.value.data().iter().flat_map(|v| v.to_le_bytes()));
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            seed: self.seed,
            initial_loss: self.initial_loss,
            loss_curve: self.loss_curve.clone(),
            params,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(HEADER_LEN + json.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        out
    }

    /// Decodes a checkpoint, rebuilding the model from its stored config.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::decode(bytes, None)
    }

    /// Decodes a checkpoint into the architecture described by `config`
    /// (with the stored seed); parameters must match it name for name and
    /// shape for shape.
    pub fn from_bytes_as(bytes: &[u8], config: &RunConfig) -> Result<Self> {
        Self::decode(bytes, Some(config))
    }

    fn decode(bytes: &[u8], config: Option<&RunConfig>) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(corrupt(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch { found: version, expected: FORMAT_VERSION });
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let json_end = usize::try_from(len)
            .ok()
            .and_then(|l| HEADER_LEN.checked_add(l))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| corrupt("manifest extends past end of file"))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[HEADER_LEN..json_end])
            .map_err(|e| corrupt(format!("unreadable manifest: {e}")))?;
        if manifest.format_version != version {
            return Err(corrupt("manifest and header disagree on the format version"));
        }
        let blob = &bytes[json_end..];

        let run_config = config.cloned().unwrap_or(manifest.config);
        let mut model = PriqModel::<f32>::build(&run_config.model_config(manifest.seed))?;
        let expected = model.params().count();
        if expected != manifest.params.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} parameter tensors, configured model has {expected}",
                manifest.params.len()
            )));
        }
        let mut consumed = 0;
        for (param, entry) in model.params_mut().zip(&manifest.params) {
            if param.name != entry.name {
                return Err(Error::Config(format!("checkpoint parameter {} where {} was expected", entry.name, param.name)));
            }
            if param.value.shape() != entry.shape.as_slice() {
                return Err(Error::ParamShape {
                    name: entry.name.clone(),
                    found: entry.shape.clone(),
                    expected: param.value.shape().to_vec(),
                });
            }
            let n = param.value.len() * 4;
            let chunk = entry
                .offset
                .checked_add(n)
                .and_then(|end| blob.get(entry.offset..end))
                .ok_or_else(|| corrupt(format!("parameter {} extends past end of file", entry.name)))?;
            let data: Vec<f32> = chunk.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(corrupt(format!("parameter {} holds non-finite values", entry.name)));
            }
            param.value = Tensor::new(entry.shape.clone(), data)?;
            consumed += n;
        }
        if consumed != blob.len() {
            return Err(corrupt(format!("{} trailing bytes after the parameter blob", blob.len() as isize - consumed as isize)));
        }
        Ok(Self {
            config: run_config,
            seed: manifest.seed,
            initial_loss: manifest.initial_loss,
            loss_curve: manifest.loss_curve,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn load_as(path: &Path, config: &RunConfig) -> Result<Self> {
        Self::from_bytes_as(&fs::read(path).map_err(|e| Error::io(path, e))?, config)
    }
}
