//! Transformer encoder-decoder over velocity-increment sequences.

mod checkpoint;
mod encoding;
mod network;
mod params;
mod predict;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use encoding::positional_encoding;
pub use network::{
    causal_mask, decode, embed, encode, multi_head_attention, teacher_forced_output, Bound, ForwardCtx,
};
pub use params::{Attention, DecoderLayer, EncoderLayer, FeedForward, Layout, Linear, ModelParams, Norm};
pub use predict::TrajectoryModel;

use crate::container::ContainerError;
use crate::features::FeatureError;

/// How positional information is combined with the input projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeMode {
    /// Project to `d_model` and add the encoding.
    Additive,
    /// Project to `d_model / 2` and append a `d_model / 2` wide encoding.
    Concat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// 2 for planar increments, 3 when normalized heading is appended.
    pub feature_dim: usize,
    pub pe_mode: PeMode,
    pub dropout: f64,
    pub max_len: usize,
    pub norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 512,
            n_layers: 6,
            n_heads: 8,
            d_ff: 2048,
            feature_dim: 2,
            pe_mode: PeMode::Additive,
            dropout: 0.0,
            max_len: 64,
            norm_eps: 1e-6,
        }
    }
}

impl ModelConfig {
    /// A small configuration with `d_ff = 4 · d_model`.
    pub fn small(d_model: usize, n_layers: usize, n_heads: usize, feature_dim: usize) -> Self {
        Self {
            d_model,
            n_layers,
            n_heads,
            d_ff: 4 * d_model,
            feature_dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 || self.d_ff == 0 {
            return bad("d_model, n_layers, n_heads and d_ff must be positive");
        }
        if self.d_model % self.n_heads != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        if !matches!(self.feature_dim, 2 | 3) {
            return bad("feature_dim must be 2 or 3");
        }
        if self.pe_width() % 2 != 0 {
            return bad("positional encoding width must be even");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.max_len == 0 {
            return bad("max_len must be positive");
        }
        if !(self.norm_eps > 0.0) {
            return bad("norm_eps must be positive");
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Width of the input projection.
    pub fn embed_width(&self) -> usize {
        match self.pe_mode {
            PeMode::Additive => self.d_model,
            PeMode::Concat => self.d_model / 2,
        }
    }

    pub fn pe_width(&self) -> usize {
        match self.pe_mode {
            PeMode::Additive => self.d_model,
            PeMode::Concat => self.d_model - self.d_model / 2,
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("positional encoding width {0} is odd")]
    OddWidth(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Numeric(#[from] numgrad::NumError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
