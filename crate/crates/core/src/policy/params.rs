use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, UrpError};
use crate::numeric::{Precision, Real};
use crate::seeding::{rng_for, stream};

/// Architecture of the policy network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Number of prefix vectors produced from the raster.
    pub n_prefix: usize,
    /// Maximum number of positions (prefix + prompt + generated).
    pub context: usize,
    /// Length of the pooled raster feature vector.
    pub raster_features: usize,
    /// Side of the square pooling patch.
    pub patch: usize,
    /// Maximum generated tokens per candidate.
    pub max_len: usize,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 75,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            n_prefix: 4,
            context: 160,
            raster_features: 48,
            patch: 4,
            max_len: 96,
            precision: Precision::F64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(UrpError::Config(m.to_string()));
        if self.vocab_size < 2 || self.d_model == 0 || self.n_heads == 0 || self.context == 0 {
            return bad("model dimensions must be positive");
        }
        if self.d_model % self.n_heads != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        if self.patch == 0 || self.max_len == 0 {
            return bad("patch and max_len must be positive");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn ff_dim(&self) -> usize {
        4 * self.d_model
    }

    /// Closed-form parameter count:
    /// `L(12d^2 + 7d) + d(P*F + P + 1 + 2V + ctx + 1) + V`.
    pub fn analytic_param_count(&self) -> usize {
        let (d, l, v) = (self.d_model, self.n_layers, self.vocab_size);
        let (p, f, ctx) = (self.n_prefix, self.raster_features, self.context);
        l * (12 * d * d + 7 * d) + d * (p * f + p + 1 + 2 * v + ctx + 1) + v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LayerOffsets {
    pub ln1: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ln2: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Names, shapes and offsets of every tensor in the flat parameter buffer,
/// in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub entries: Vec<ParamEntry>,
    pub total: usize,
    pub(crate) raster_w: usize,
    pub(crate) raster_b: usize,
    pub(crate) null_prefix: usize,
    pub(crate) tok_emb: usize,
    pub(crate) pos_emb: usize,
    pub(crate) layers: Vec<LayerOffsets>,
    pub(crate) ln_f: usize,
    pub(crate) out_w: usize,
    pub(crate) out_b: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut entries = Vec::new();
        let mut total = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let offset = total;
            total += shape.iter().product::<usize>();
            entries.push(ParamEntry { name, shape, offset });
            offset
        };
        let (d, v, p) = (cfg.d_model, cfg.vocab_size, cfg.n_prefix);
        let raster_w = push("raster_proj.weight".into(), vec![p * d, cfg.raster_features]);
        let raster_b = push("raster_proj.bias".into(), vec![p * d]);
        let null_prefix = push("null_prefix".into(), vec![d]);
        let tok_emb = push("tok_emb".into(), vec![v, d]);
        let pos_emb = push("pos_emb".into(), vec![cfg.context, d]);
        let layers = (0..cfg.n_layers)
            .map(|l| LayerOffsets {
                ln1: push(format!("blocks.{l}.ln1.gain"), vec![d]),
                wq: push(format!("blocks.{l}.attn.wq"), vec![d, d]),
                wk: push(format!("blocks.{l}.attn.wk"), vec![d, d]),
                wv: push(format!("blocks.{l}.attn.wv"), vec![d, d]),
                wo: push(format!("blocks.{l}.attn.wo"), vec![d, d]),
                ln2: push(format!("blocks.{l}.ln2.gain"), vec![d]),
                w1: push(format!("blocks.{l}.mlp.w1"), vec![cfg.ff_dim(), d]),
                b1: push(format!("blocks.{l}.mlp.b1"), vec![cfg.ff_dim()]),
                w2: push(format!("blocks.{l}.mlp.w2"), vec![d, cfg.ff_dim()]),
                b2: push(format!("blocks.{l}.mlp.b2"), vec![d]),
            })
            .collect();
        let ln_f = push("ln_f.gain".into(), vec![d]);
        let out_w = push("out.weight".into(), vec![v, d]);
        let out_b = push("out.bias".into(), vec![v]);
        ParamLayout {
            entries,
            total,
            raster_w,
            raster_b,
            null_prefix,
            tok_emb,
            pos_emb,
            layers,
            ln_f,
            out_w,
            out_b,
        }
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// All trainable parameters of the policy in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams<T> {
    pub config: ModelConfig,
    pub layout: Arc<ParamLayout>,
    pub data: Vec<T>,
}

impl<T: Real> PolicyParams<T> {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Arc::new(ParamLayout::new(config));
        Ok(PolicyParams {
            config: config.clone(),
            data: vec![T::zero(); layout.total],
            layout,
        })
    }

    /// Scaled-normal initialization (std 0.02), unit norm gains, zero biases.
    /// Residual output projections are further scaled by `1/sqrt(2L)` so each
    /// block starts close to the identity.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let mut rng = rng_for(seed, &[stream::INIT]);
        let residual_scale = 1.0 / (2.0 * config.n_layers.max(1) as f64).sqrt();
        let entries = params.layout.entries.clone();
        for e in &entries {
            let name = e.name.as_str();
            let slice = &mut params.data[e.offset..e.offset + e.len()];
            if name.ends_with(".gain") {
                slice.iter_mut().for_each(|x| *x = T::one());
            } else if name.ends_with("bias") || name.ends_with(".b1") || name.ends_with(".b2") {
                // zeros
            } else {
                let std = if name.ends_with(".wo") || name.ends_with(".w2") {
                    0.02 * residual_scale
                } else {
                    0.02
                };
                for x in slice.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *x = T::lit(std * z);
                }
            }
        }
        Ok(params)
    }

    pub fn param_count(&self) -> usize {
        self.data.len()
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        let e = self.layout.entry(name)?;
        Some(&self.data[e.offset..e.offset + e.len()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let e = self.layout.entry(name)?.clone();
        Some(&mut self.data[e.offset..e.offset + e.len()])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn zeros_like(&self) -> Self {
        PolicyParams {
            config: self.config.clone(),
            layout: Arc::clone(&self.layout),
            data: vec![T::zero(); self.data.len()],
        }
    }

    /// Euclidean distance between two parameter sets of the same layout.
    pub fn distance(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    pub fn from_f64(config: &ModelConfig, values: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        if values.len() != p.data.len() {
            return Err(UrpError::Data(format!(
                "expected {} parameters, got {}",
                p.data.len(),
                values.len()
            )));
        }
        p.data.iter_mut().zip(values).for_each(|(d, &v)| *d = T::lit(v));
        Ok(p)
    }
}
