//! Parameter layout: every learnable tensor lives in one flat list, and the
//! layer structs below hold indices into it.

use numgrad::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Norm {
    pub gamma: usize,
    pub beta: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedForward {
    pub hidden: Linear,
    pub output: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderLayer {
    pub self_attn: Attention,
    pub norm1: Norm,
    pub ff: FeedForward,
    pub norm2: Norm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderLayer {
    pub self_attn: Attention,
    pub norm1: Norm,
    pub cross_attn: Attention,
    pub norm2: Norm,
    pub ff: FeedForward,
    pub norm3: Norm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Xavier,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub src_embed: Linear,
    pub tgt_embed: Linear,
    pub encoder: Vec<EncoderLayer>,
    pub decoder: Vec<DecoderLayer>,
    pub output: Linear,
    pub names: Vec<String>,
    pub shapes: Vec<(usize, usize)>,
    inits: Vec<Init>,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    inits: Vec<Init>,
}

impl Builder {
    fn tensor(&mut self, name: String, shape: (usize, usize), init: Init) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.inits.push(init);
        self.names.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            weight: self.tensor(format!("{name}.weight"), (fan_in, fan_out), Init::Xavier),
            bias: self.tensor(format!("{name}.bias"), (1, fan_out), Init::Zeros),
        }
    }

    fn attention(&mut self, name: &str, d: usize) -> Attention {
        Attention {
            query: self.linear(&format!("{name}.query"), d, d),
            key: self.linear(&format!("{name}.key"), d, d),
            value: self.linear(&format!("{name}.value"), d, d),
            output: self.linear(&format!("{name}.output"), d, d),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            gamma: self.tensor(format!("{name}.gamma"), (1, d), Init::Ones),
            beta: self.tensor(format!("{name}.beta"), (1, d), Init::Zeros),
        }
    }

    fn ff(&mut self, name: &str, d: usize, d_ff: usize) -> FeedForward {
        FeedForward {
            hidden: self.linear(&format!("{name}.hidden"), d, d_ff),
            output: self.linear(&format!("{name}.output"), d_ff, d),
        }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let mut b = Builder {
            names: Vec::new(),
            shapes: Vec::new(),
            inits: Vec::new(),
        };
        let src_embed = b.linear("src_embed", cfg.feature_dim, cfg.embed_width());
        let tgt_embed = b.linear("tgt_embed", cfg.feature_dim, cfg.embed_width());
        let encoder = (0..cfg.n_layers)
            .map(|l| EncoderLayer {
                self_attn: b.attention(&format!("encoder.{l}.self_attn"), d),
                norm1: b.norm(&format!("encoder.{l}.norm1"), d),
                ff: b.ff(&format!("encoder.{l}.ff"), d, cfg.d_ff),
                norm2: b.norm(&format!("encoder.{l}.norm2"), d),
            })
            .collect();
        let decoder = (0..cfg.n_layers)
            .map(|l| DecoderLayer {
                self_attn: b.attention(&format!("decoder.{l}.self_attn"), d),
                norm1: b.norm(&format!("decoder.{l}.norm1"), d),
                cross_attn: b.attention(&format!("decoder.{l}.cross_attn"), d),
                norm2: b.norm(&format!("decoder.{l}.norm2"), d),
                ff: b.ff(&format!("decoder.{l}.ff"), d, cfg.d_ff),
                norm3: b.norm(&format!("decoder.{l}.norm3"), d),
            })
            .collect();
        let output = b.linear("output", d, cfg.feature_dim);
        Self {
            src_embed,
            tgt_embed,
            encoder,
            decoder,
            output,
            names: b.names,
            shapes: b.shapes,
            inits: b.inits,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn scalar_count(&self) -> usize {
        self.shapes.iter().map(|(r, c)| r * c).sum()
    }
}

/// All learnable tensors of a model, in [`Layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layout: Layout,
    pub tensors: Vec<Matrix>,
}

impl ModelParams {
    /// Xavier-uniform weights, zero biases, unit layer-norm gains.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let layout = Layout::new(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = layout
            .shapes
            .iter()
            .zip(&layout.inits)
            .map(|(&(r, c), init)| match init {
                Init::Zeros => Matrix::zeros(r, c),
                Init::Ones => Matrix::filled(r, c, 1.0),
                Init::Xavier => {
                    let bound = (6.0 / (r + c) as f64).sqrt();
                    let data = (0..r * c).map(|_| rng.random_range(-bound..bound)).collect();
                    Matrix::new(r, c, data).expect("shape from layout")
                }
            })
            .collect();
        Ok(Self { layout, tensors })
    }

    /// Wraps tensors loaded from elsewhere after checking them against `cfg`.
    pub fn from_tensors(cfg: &ModelConfig, tensors: Vec<Matrix>) -> Result<Self, ModelError> {
        cfg.validate()?;
        let layout = Layout::new(cfg);
        if tensors.len() != layout.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "expected {} tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((t, shape), name) in tensors.iter().zip(&layout.shapes).zip(&layout.names) {
            if t.shape() != *shape {
                return Err(ModelError::ShapeMismatch(format!(
                    "{name}: expected {shape:?}, got {:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(ModelError::ShapeMismatch(format!("{name}: non-finite values")));
            }
        }
        Ok(Self { layout, tensors })
    }

    pub fn get(&self, idx: usize) -> &Matrix {
        &self.tensors[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Matrix {
        &mut self.tensors[idx]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PeMode;

    #[test]
    fn shapes_follow_config() {
        let cfg = ModelConfig::small(16, 2, 2, 3);
        let p = ModelParams::init(&cfg, 0).unwrap();
        assert_eq!(p.get(p.layout.src_embed.weight).shape(), (3, 16));
        assert_eq!(p.get(p.layout.output.weight).shape(), (16, 3));
        assert_eq!(p.get(p.layout.encoder[1].ff.hidden.weight).shape(), (16, 64));
        assert_eq!(p.layout.decoder.len(), 2);
        assert!(p.is_finite());
    }

    #[test]
    fn concat_mode_halves_projection() {
        let cfg = ModelConfig {
            pe_mode: PeMode::Concat,
            ..ModelConfig::small(16, 1, 2, 2)
        };
        let p = ModelParams::init(&cfg, 0).unwrap();
        assert_eq!(p.get(p.layout.src_embed.weight).shape(), (2, 8));
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::small(8, 1, 2, 2);
        assert_eq!(ModelParams::init(&cfg, 3).unwrap(), ModelParams::init(&cfg, 3).unwrap());
        assert_ne!(ModelParams::init(&cfg, 3).unwrap(), ModelParams::init(&cfg, 4).unwrap());
    }

    #[test]
    fn names_are_unique() {
        let layout = Layout::new(&ModelConfig::small(8, 2, 2, 2));
        let mut names = layout.names.clone();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), layout.len());
    }

    #[test]
    fn from_tensors_checks_shapes() {
        let cfg = ModelConfig::small(8, 1, 2, 2);
        let mut t = ModelParams::init(&cfg, 0).unwrap().tensors;
        t[0] = Matrix::zeros(1, 1);
        assert!(ModelParams::from_tensors(&cfg, t).is_err());
    }

    #[test]
    fn invalid_head_split() {
        let cfg = ModelConfig::small(10, 1, 3, 2);
        assert!(ModelParams::init(&cfg, 0).is_err());
    }
}
