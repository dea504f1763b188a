use std::sync::Arc;

use numgrad::{Matrix, Tape};

use super::network::{decode, encode, feature_matrix, ForwardCtx};
use super::{ModelConfig, ModelError, ModelParams};
use crate::features::{denormalize_vec, normalize_vec};
use crate::types::{integrate, FeatureVec, NormStats, WindowSample};

/// A trained model together with the statistics its inputs were normalized
/// with. Safe to share across threads for concurrent prediction.
#[derive(Debug, Clone)]
pub struct TrajectoryModel {
    cfg: ModelConfig,
    params: ModelParams,
    stats: NormStats,
    shared: Vec<Arc<Matrix>>,
}

impl TrajectoryModel {
    pub fn new(cfg: ModelConfig, params: ModelParams, stats: NormStats) -> Result<Self, ModelError> {
        cfg.validate()?;
        if stats.dim() != cfg.feature_dim {
            return Err(ModelError::ShapeMismatch(format!(
                "statistics have {} features, model has {}",
                stats.dim(),
                cfg.feature_dim
            )));
        }
        if params.layout.shapes != super::Layout::new(&cfg).shapes {
            return Err(ModelError::ShapeMismatch("parameters do not match config".into()));
        }
        let shared = params.tensors.iter().cloned().map(Arc::new).collect();
        Ok(Self {
            cfg,
            params,
            stats,
            shared,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    pub fn into_parts(self) -> (ModelConfig, ModelParams, NormStats) {
        (self.cfg, self.params, self.stats)
    }

    /// Greedy autoregressive decoding in normalized space. Starts from a zero
    /// token and feeds each output back as the next decoder input.
    pub fn predict_normalized(&self, obs: &[FeatureVec], pred_len: usize) -> Result<Vec<FeatureVec>, ModelError> {
        let dim = self.cfg.feature_dim;
        if obs.iter().any(|f| f.dim() != dim) {
            return Err(ModelError::ShapeMismatch(format!("observed features must have {dim} components")));
        }
        if obs.is_empty() || pred_len == 0 {
            return Err(ModelError::ShapeMismatch("empty observation or horizon".into()));
        }
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx::with_shared(&mut tape, &self.cfg, &self.params.layout, &self.shared);
        let obs_rows: Vec<Vec<f64>> = obs.iter().map(FeatureVec::to_vec).collect();
        let obs_var = tape.leaf(feature_matrix(&obs_rows, dim)?);
        let enc_pos: Vec<usize> = (0..obs.len()).collect();
        let memory = encode(&mut tape, &mut ctx, obs_var, &enc_pos)?;

        let mut inputs = vec![vec![0.0; dim]];
        let mut outputs = Vec::with_capacity(pred_len);
        for step in 0..pred_len {
            let tgt = tape.leaf(feature_matrix(&inputs, dim)?);
            let pos: Vec<usize> = (0..=step).collect();
            let out = decode(&mut tape, &mut ctx, tgt, &pos, memory)?;
            let last = tape.value(out).row(step).to_vec();
            outputs.push(FeatureVec::from_slice(&last));
            inputs.push(last);
        }
        Ok(outputs)
    }

    /// Predicted velocity features in physical units for a raw window.
    pub fn predict_features(&self, window: &WindowSample) -> Result<Vec<FeatureVec>, ModelError> {
        let obs = window
            .obs
            .iter()
            .map(|f| normalize_vec(f, &self.stats))
            .collect::<Result<Vec<_>, _>>()?;
        self.predict_normalized(&obs, window.target.len())?
            .iter()
            .map(|f| Ok(denormalize_vec(f, &self.stats)?))
            .collect()
    }

    /// Absolute future positions for a raw (unnormalized) window, one per
    /// target step.
    pub fn predict(&self, window: &WindowSample) -> Result<Vec<[f64; 2]>, ModelError> {
        let feats = self.predict_features(window)?;
        Ok(integrate(window.last_obs_position, &feats, window.dt))
    }
}
