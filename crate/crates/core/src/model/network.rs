//! Forward pass recorded on a [`Tape`]. Post-norm residual blocks.

use std::sync::Arc;

use numgrad::{Matrix, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{Attention, DecoderLayer, EncoderLayer, FeedForward, Linear, Norm};
use super::{positional_encoding, Layout, ModelConfig, ModelError, ModelParams, PeMode};

/// Additive mask logit for blocked positions.
const BLOCKED: f64 = -1e9;

/// Parameters recorded as leaves of one tape, in [`Layout`] order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn bind(tape: &mut Tape, tensors: &[Arc<Matrix>]) -> Self {
        Self {
            vars: tensors.iter().map(|t| tape.leaf_shared(Arc::clone(t))).collect(),
        }
    }

    pub fn var(&self, idx: usize) -> Var {
        self.vars[idx]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Everything a forward pass needs besides the tape.
pub struct ForwardCtx<'a> {
    pub cfg: &'a ModelConfig,
    pub layout: &'a Layout,
    pub bound: Bound,
    dropout: Option<ChaCha8Rng>,
}

impl<'a> ForwardCtx<'a> {
    /// Inference context; dropout is off.
    pub fn new(tape: &mut Tape, cfg: &'a ModelConfig, params: &'a ModelParams) -> Self {
        let shared: Vec<Arc<Matrix>> = params.tensors.iter().cloned().map(Arc::new).collect();
        Self::with_shared(tape, cfg, &params.layout, &shared)
    }

    /// Binds pre-shared tensors, avoiding a copy per tape.
    pub fn with_shared(tape: &mut Tape, cfg: &'a ModelConfig, layout: &'a Layout, shared: &[Arc<Matrix>]) -> Self {
        Self {
            cfg,
            layout,
            bound: Bound::bind(tape, shared),
            dropout: None,
        }
    }

    /// Enables dropout at `cfg.dropout` using a generator seeded with `seed`.
    pub fn training(mut self, seed: u64) -> Self {
        if self.cfg.dropout > 0.0 {
            self.dropout = Some(ChaCha8Rng::seed_from_u64(seed));
        }
        self
    }

    fn dropout(&mut self, tape: &mut Tape, x: Var) -> Result<Var, ModelError> {
        let p = self.cfg.dropout;
        let Some(rng) = self.dropout.as_mut() else {
            return Ok(x);
        };
        let (r, c) = tape.value(x).shape();
        let keep = 1.0 / (1.0 - p);
        let data = (0..r * c)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        Ok(tape.mask_mul(x, Matrix::new(r, c, data)?)?)
    }

    fn linear(&self, tape: &mut Tape, x: Var, l: Linear) -> Result<Var, ModelError> {
        let y = tape.matmul(x, self.bound.var(l.weight))?;
        Ok(tape.add_row(y, self.bound.var(l.bias))?)
    }

    fn norm(&self, tape: &mut Tape, x: Var, n: Norm) -> Result<Var, ModelError> {
        Ok(tape.layer_norm(x, self.bound.var(n.gamma), self.bound.var(n.beta), self.cfg.norm_eps)?)
    }

    fn feed_forward(&mut self, tape: &mut Tape, x: Var, ff: FeedForward) -> Result<Var, ModelError> {
        let h = self.linear(tape, x, ff.hidden)?;
        let h = tape.relu(h)?;
        let h = self.dropout(tape, h)?;
        self.linear(tape, h, ff.output)
    }

    /// `norm(x + dropout(sub))`
    fn residual(&mut self, tape: &mut Tape, x: Var, sub: Var, n: Norm) -> Result<Var, ModelError> {
        let sub = self.dropout(tape, sub)?;
        let s = tape.add(x, sub)?;
        self.norm(tape, s, n)
    }
}

/// Additive causal mask: 0 where column ≤ row, a large negative value above
/// the diagonal.
pub fn causal_mask(n: usize) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for r in 0..n {
        for c in r + 1..n {
            m.set(r, c, BLOCKED);
        }
    }
    m
}

/// Projects a normalized feature sequence and combines it with the
/// positional encoding of `positions`.
pub fn embed(
    tape: &mut Tape,
    ctx: &mut ForwardCtx<'_>,
    features: Var,
    positions: &[usize],
    proj: Linear,
) -> Result<Var, ModelError> {
    let (rows, cols) = tape.value(features).shape();
    if cols != ctx.cfg.feature_dim || rows != positions.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "embedding expects {} × {}, got {rows} × {cols}",
            positions.len(),
            ctx.cfg.feature_dim
        )));
    }
    if positions.iter().any(|&p| p >= ctx.cfg.max_len) {
        return Err(ModelError::ShapeMismatch(format!(
            "position beyond max_len {}",
            ctx.cfg.max_len
        )));
    }
    let x = ctx.linear(tape, features, proj)?;
    let pe = positional_encoding(positions, ctx.cfg.pe_width())?;
    let out = match ctx.cfg.pe_mode {
        PeMode::Additive => tape.add_const(x, &pe)?,
        PeMode::Concat => {
            let pe = tape.leaf(pe);
            tape.concat_cols(&[x, pe])?
        }
    };
    ctx.dropout(tape, out)
}

/// Scaled dot-product attention over `n_heads` column groups, followed by
/// the output projection. `mask` is additive and shaped (queries, keys).
pub fn multi_head_attention(
    tape: &mut Tape,
    ctx: &ForwardCtx<'_>,
    query_in: Var,
    kv_in: Var,
    mask: Option<&Matrix>,
    attn: Attention,
) -> Result<Var, ModelError> {
    let nq = tape.value(query_in).rows();
    let nk = tape.value(kv_in).rows();
    if let Some(m) = mask {
        if m.shape() != (nq, nk) {
            return Err(ModelError::ShapeMismatch(format!(
                "mask is {:?}, attention is {nq} × {nk}",
                m.shape()
            )));
        }
    }
    let q = ctx.linear(tape, query_in, attn.query)?;
    let k = ctx.linear(tape, kv_in, attn.key)?;
    let v = ctx.linear(tape, kv_in, attn.value)?;
    let dh = ctx.cfg.d_head();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(ctx.cfg.n_heads);
    for h in 0..ctx.cfg.n_heads {
        let qh = tape.select_cols(q, h * dh, dh)?;
        let kh = tape.select_cols(k, h * dh, dh)?;
        let vh = tape.select_cols(v, h * dh, dh)?;
        let scores = tape.matmul_t(qh, kh)?;
        let mut scores = tape.scale(scores, scale)?;
        if let Some(m) = mask {
            scores = tape.add_const(scores, m)?;
        }
        let weights = tape.softmax_rows(scores)?;
        heads.push(tape.matmul(weights, vh)?);
    }
    let joined = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)?
    };
    ctx.linear(tape, joined, attn.output)
}

fn encoder_layer(tape: &mut Tape, ctx: &mut ForwardCtx<'_>, x: Var, layer: EncoderLayer) -> Result<Var, ModelError> {
    let sa = multi_head_attention(tape, ctx, x, x, None, layer.self_attn)?;
    let x = ctx.residual(tape, x, sa, layer.norm1)?;
    let ff = ctx.feed_forward(tape, x, layer.ff)?;
    ctx.residual(tape, x, ff, layer.norm2)
}

fn decoder_layer(
    tape: &mut Tape,
    ctx: &mut ForwardCtx<'_>,
    y: Var,
    memory: Var,
    mask: &Matrix,
    layer: DecoderLayer,
) -> Result<Var, ModelError> {
    let sa = multi_head_attention(tape, ctx, y, y, Some(mask), layer.self_attn)?;
    let y = ctx.residual(tape, y, sa, layer.norm1)?;
    let ca = multi_head_attention(tape, ctx, y, memory, None, layer.cross_attn)?;
    let y = ctx.residual(tape, y, ca, layer.norm2)?;
    let ff = ctx.feed_forward(tape, y, layer.ff)?;
    ctx.residual(tape, y, ff, layer.norm3)
}

/// Embeds the observed features and runs the encoder stack. The result has
/// one row per observed step and `d_model` columns.
pub fn encode(tape: &mut Tape, ctx: &mut ForwardCtx<'_>, obs: Var, positions: &[usize]) -> Result<Var, ModelError> {
    let mut x = embed(tape, ctx, obs, positions, ctx.layout.src_embed)?;
    for i in 0..ctx.layout.encoder.len() {
        let layer = ctx.layout.encoder[i];
        x = encoder_layer(tape, ctx, x, layer)?;
    }
    Ok(x)
}

/// Embeds decoder inputs, runs the causally masked decoder stack against
/// `memory` and projects back to feature space.
pub fn decode(
    tape: &mut Tape,
    ctx: &mut ForwardCtx<'_>,
    tgt: Var,
    positions: &[usize],
    memory: Var,
) -> Result<Var, ModelError> {
    let mut y = embed(tape, ctx, tgt, positions, ctx.layout.tgt_embed)?;
    let mask = causal_mask(positions.len());
    for i in 0..ctx.layout.decoder.len() {
        let layer = ctx.layout.decoder[i];
        y = decoder_layer(tape, ctx, y, memory, &mask, layer)?;
    }
    ctx.linear(tape, y, ctx.layout.output)
}

/// Rows of a feature sequence as a matrix.
pub(crate) fn feature_matrix(rows: &[Vec<f64>], dim: usize) -> Result<Matrix, ModelError> {
    if rows.iter().any(|r| r.len() != dim) {
        return Err(ModelError::ShapeMismatch(format!("feature rows must have {dim} components")));
    }
    let data = rows.iter().flatten().copied().collect();
    Ok(Matrix::new(rows.len(), dim, data)?)
}

/// Teacher-forced decoder output for one normalized window: the decoder sees
/// `[0, target[0], …, target[n-2]]` and its output rows line up with
/// `target`.
pub fn teacher_forced_output(
    tape: &mut Tape,
    ctx: &mut ForwardCtx<'_>,
    obs: &Matrix,
    target: &Matrix,
) -> Result<Var, ModelError> {
    let dim = ctx.cfg.feature_dim;
    if obs.cols() != dim || target.cols() != dim {
        return Err(ModelError::ShapeMismatch(format!(
            "window has {} / {} features, model expects {dim}",
            obs.cols(),
            target.cols()
        )));
    }
    let n_obs = obs.rows();
    let n_pred = target.rows();
    let start = Matrix::zeros(1, dim);
    let shifted = if n_pred > 1 {
        Matrix::concat_rows(&[&start, &target.rows_slice(0, n_pred - 1)?])?
    } else {
        start
    };
    let obs_var = tape.leaf(obs.clone());
    let enc_pos: Vec<usize> = (0..n_obs).collect();
    let memory = encode(tape, ctx, obs_var, &enc_pos)?;
    let tgt_var = tape.leaf(shifted);
    let dec_pos: Vec<usize> = (0..n_pred).collect();
    decode(tape, ctx, tgt_var, &dec_pos, memory)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (ModelConfig, ModelParams) {
        let cfg = ModelConfig::small(8, 1, 2, 2);
        let params = ModelParams::init(&cfg, 11).unwrap();
        (cfg, params)
    }

    fn seq(n: usize, dim: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::new(n, dim, (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn causal_mask_shape() {
        let m = causal_mask(3);
        assert_eq!(m.row(0), &[0.0, BLOCKED, BLOCKED]);
        assert_eq!(m.row(2), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_features_embed_to_pe() {
        let (cfg, params) = tiny();
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx::new(&mut tape, &cfg, &params);
        let x = tape.leaf(Matrix::zeros(3, 2));
        let e = embed(&mut tape, &mut ctx, x, &[0, 1, 2], params.layout.src_embed).unwrap();
        let pe = positional_encoding(&[0, 1, 2], 8).unwrap();
        assert_eq!(tape.value(e), &pe);
    }

    #[test]
    fn concat_width_is_d_model() {
        let cfg = ModelConfig {
            pe_mode: PeMode::Concat,
            ..ModelConfig::small(8, 1, 2, 3)
        };
        let params = ModelParams::init(&cfg, 0).unwrap();
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx::new(&mut tape, &cfg, &params);
        let x = tape.leaf(seq(4, 3, 1));
        let e = embed(&mut tape, &mut ctx, x, &[0, 1, 2, 3], params.layout.src_embed).unwrap();
        assert_eq!(tape.value(e).shape(), (4, 8));
    }

    #[test]
    fn embed_rejects_wrong_dim() {
        let (cfg, params) = tiny();
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx::new(&mut tape, &cfg, &params);
        let x = tape.leaf(Matrix::zeros(3, 3));
        assert!(embed(&mut tape, &mut ctx, x, &[0, 1, 2], params.layout.src_embed).is_err());
    }

    #[test]
    fn singleton_attention_returns_projected_value() {
        let (cfg, params) = tiny();
        let attn = params.layout.encoder[0].self_attn;
        let mut tape = Tape::new();
        let ctx = ForwardCtx::new(&mut tape, &cfg, &params);
        let x = seq(1, 8, 2);
        let xv = tape.leaf(x.clone());
        let out = multi_head_attention(&mut tape, &ctx, xv, xv, None, attn).unwrap();
        let lin = |m: &Matrix, l: Linear| {
            let mut y = m.matmul(params.get(l.weight)).unwrap();
            y.add_assign(params.get(l.bias)).unwrap();
            y
        };
        let expected = lin(&lin(&x, attn.value), attn.output);
        assert!(tape.value(out).max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn identical_keys_average_values() {
        let (cfg, params) = tiny();
        let attn = params.layout.encoder[0].self_attn;
        let mut tape = Tape::new();
        let ctx = ForwardCtx::new(&mut tape, &cfg, &params);
        // a repeated memory row: uniform weights, so the mean equals the
        // single-row result
        let mem_row = seq(1, 8, 3);
        let memory = Matrix::concat_rows(&[&mem_row, &mem_row, &mem_row]).unwrap();
        let q = tape.leaf(seq(2, 8, 4));
        let m = tape.leaf(memory);
        let out = multi_head_attention(&mut tape, &ctx, q, m, None, attn).unwrap();
        let single = tape.leaf(mem_row);
        let one = multi_head_attention(&mut tape, &ctx, q, single, None, attn).unwrap();
        assert!(tape.value(out).max_abs_diff(tape.value(one)) < 1e-12);
    }

    #[test]
    fn mask_shape_checked() {
        let (cfg, params) = tiny();
        let attn = params.layout.encoder[0].self_attn;
        let mut tape = Tape::new();
        let ctx = ForwardCtx::new(&mut tape, &cfg, &params);
        let x = tape.leaf(seq(3, 8, 1));
        let bad = causal_mask(2);
        assert!(multi_head_attention(&mut tape, &ctx, x, x, Some(&bad), attn).is_err());
    }

    #[test]
    fn encoder_shape_and_determinism() {
        let (cfg, params) = tiny();
        let run = |obs: &Matrix| {
            let mut tape = Tape::new();
            let mut ctx = ForwardCtx::new(&mut tape, &cfg, &params);
            let o = tape.leaf(obs.clone());
            let m = encode(&mut tape, &mut ctx, o, &[0, 1, 2, 3, 4]).unwrap();
            tape.value(m).clone()
        };
        let obs = seq(5, 2, 9);
        let a = run(&obs);
        assert_eq!(a.shape(), (5, 8));
        assert_eq!(a, run(&obs));
        let mut rows: Vec<Vec<f64>> = (0..5).map(|r| obs.row(r).to_vec()).collect();
        rows.swap(0, 4);
        let permuted = run(&Matrix::from_rows(&rows).unwrap());
        // undo the permutation on the output: without positional information
        // this would match exactly
        let mut back: Vec<Vec<f64>> = (0..5).map(|r| permuted.row(r).to_vec()).collect();
        back.swap(0, 4);
        assert!(Matrix::from_rows(&back).unwrap().max_abs_diff(&a) > 1e-6);
    }

    #[test]
    fn decoder_is_causal() {
        let (cfg, params) = tiny();
        let memory = seq(4, 8, 5);
        let run = |tgt: &Matrix| {
            let mut tape = Tape::new();
            let mut ctx = ForwardCtx::new(&mut tape, &cfg, &params);
            let m = tape.leaf(memory.clone());
            let t = tape.leaf(tgt.clone());
            let out = decode(&mut tape, &mut ctx, t, &[0, 1, 2, 3, 4], m).unwrap();
            tape.value(out).clone()
        };
        let tgt = seq(5, 2, 6);
        let base = run(&tgt);
        assert_eq!(base.shape(), (5, 2));
        for t_prime in 1..5 {
            let mut changed = tgt.clone();
            changed.set(t_prime, 0, changed.get(t_prime, 0) + 3.0);
            let out = run(&changed);
            for r in 0..t_prime {
                for c in 0..2 {
                    assert!((out.get(r, c) - base.get(r, c)).abs() <= 1e-12);
                }
            }
            assert!((out.get(t_prime, 0) - base.get(t_prime, 0)).abs() > 0.0);
        }
    }

    #[test]
    fn zero_cross_attention_ignores_memory() {
        let (cfg, mut params) = tiny();
        let ca = params.layout.decoder[0].cross_attn;
        for l in [ca.query, ca.key, ca.value, ca.output] {
            let (r, c) = params.get(l.weight).shape();
            *params.get_mut(l.weight) = Matrix::zeros(r, c);
        }
        let tgt = seq(3, 2, 8);
        let run = |memory: Matrix| {
            let mut tape = Tape::new();
            let mut ctx = ForwardCtx::new(&mut tape, &cfg, &params);
            let m = tape.leaf(memory);
            let t = tape.leaf(tgt.clone());
            let out = decode(&mut tape, &mut ctx, t, &[0, 1, 2], m).unwrap();
            tape.value(out).clone()
        };
        assert_eq!(run(Matrix::zeros(4, 8)), run(seq(4, 8, 1)));
    }

    #[test]
    fn teacher_forcing_shapes() {
        let cfg = ModelConfig::small(8, 2, 2, 3);
        let params = ModelParams::init(&cfg, 1).unwrap();
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx::new(&mut tape, &cfg, &params);
        let out = teacher_forced_output(&mut tape, &mut ctx, &seq(4, 3, 1), &seq(3, 3, 2)).unwrap();
        assert_eq!(tape.value(out).shape(), (3, 3));
    }

    #[test]
    fn dropout_changes_training_output_only() {
        let cfg = ModelConfig {
            dropout: 0.5,
            ..ModelConfig::small(8, 1, 2, 2)
        };
        let params = ModelParams::init(&cfg, 1).unwrap();
        let run = |train: bool| {
            let mut tape = Tape::new();
            let ctx = ForwardCtx::new(&mut tape, &cfg, &params);
            let mut ctx = if train { ctx.training(5) } else { ctx };
            let out = teacher_forced_output(&mut tape, &mut ctx, &seq(4, 2, 1), &seq(3, 2, 2)).unwrap();
            tape.value(out).clone()
        };
        assert_eq!(run(false), run(false));
        assert_eq!(run(true), run(true));
        assert_ne!(run(true), run(false));
    }
}
