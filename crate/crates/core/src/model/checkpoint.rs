use std::path::Path;

use numgrad::Matrix;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, ModelParams, TrajectoryModel};
use crate::container::{self, BodyReader, BodyWriter, ContainerError};
use crate::features::WindowingConfig;
use crate::types::NormStats;

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 4] = b"CKPT";

/// Everything needed to run inference: model, normalization statistics and
/// the windowing the model was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub windowing: WindowingConfig,
    pub stats: NormStats,
    pub params: ModelParams,
    /// Free-form provenance (seed, epochs, config hash).
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    model: ModelConfig,
    windowing: WindowingConfig,
    stats: NormStats,
    tensors: Vec<TensorEntry>,
    meta: serde_json::Value,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = CheckpointHeader {
            version: CHECKPOINT_VERSION,
            model: self.model.clone(),
            windowing: self.windowing.clone(),
            stats: self.stats.clone(),
            tensors: self
                .params
                .layout
                .names
                .iter()
                .zip(&self.params.tensors)
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    rows: t.rows(),
                    cols: t.cols(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let mut body = BodyWriter::default();
        for t in &self.params.tensors {
            body.f64s(t.data());
        }
        container::encode(
            CHECKPOINT_MAGIC,
            CHECKPOINT_VERSION,
            &serde_json::to_string_pretty(&header).expect("header serializes"),
            &body.buf,
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let decoded = container::decode(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let h: CheckpointHeader = serde_json::from_str(&decoded.header)
            .map_err(|e| ContainerError::Corrupt(format!("header: {e}")))?;
        let mut r = BodyReader::new(decoded.body);
        let tensors = h
            .tensors
            .iter()
            .map(|e| {
                let data = r.f64s(e.rows * e.cols)?;
                Matrix::new(e.rows, e.cols, data)
                    .map_err(|err| ContainerError::Corrupt(format!("tensor {}: {err}", e.name)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        r.finish()?;
        let params = ModelParams::from_tensors(&h.model, tensors)?;
        if params.layout.names.iter().zip(&h.tensors).any(|(a, b)| *a != b.name) {
            return Err(ContainerError::Corrupt("tensor names disagree with the model config".into()).into());
        }
        Ok(Self {
            model: h.model,
            windowing: h.windowing,
            stats: h.stats,
            params,
            meta: h.meta,
        })
    }

    pub fn write_file(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self, ModelError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn to_model(&self) -> Result<TrajectoryModel, ModelError> {
        TrajectoryModel::new(self.model.clone(), self.params.clone(), self.stats.clone())
    }
}
