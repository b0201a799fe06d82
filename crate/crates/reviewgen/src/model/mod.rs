//! The generation network: multi-source encoder with type embeddings and
//! source dropout, aspect-attentive pointer-generator decoder, teacher-forced
//! training and beam-search generation.
//!
//! Layout convention throughout: activations are row-major `[positions, D]`
//! matrices and weights multiply from the right (`h · W`), so a "D×D"
//! projection is stored as a `[D, D]` tensor applied per row.

mod generate;
mod net;
mod train;


use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};
use crate::text::TextError;

pub use generate::{generate, generate_greedy};
pub use net::{
    prepare_sample, source_dropout, EncoderOutput, Net, PreparedSample, SourceSet, StepOutputs,
};
pub use train::{
    gradcheck, prepare_all, teacher_forced_accuracy, train, GradCheckReport, TrainOptions,
    TrainOutcome,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("input length {len} exceeds maximum {max}; caller must truncate")]
    OverLength { len: usize, max: usize },
    #[error("decoder prefix length {len} exceeds max generation length {max}")]
    PrefixTooLong { len: usize, max: usize },
    #[error("no aspect markers in encoder output")]
    NoAspects,
    #[error("empty training split")]
    NoTrainingData,
    #[error("parameter io failed for {path}: {msg}")]
    ParamIo { path: String, msg: String },
    #[error("parameter file does not match config: {0}")]
    ParamMismatch(String),
}

/// Architecture and generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden width D; must be divisible by `heads`.
    pub hidden: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub ff: usize,
    /// Max tokens kept from the segmented review block.
    pub max_review: usize,
    pub max_title: usize,
    pub max_store: usize,
    /// Max tokens per knowledge pair after assembly.
    pub pair_cap: usize,
    /// Max product properties per sample (l).
    pub max_properties: usize,
    /// Recalled prior pairs per sample (m).
    pub recalled: usize,
    pub vocab_size: usize,
    /// Regular dropout rate on embeddings and feed-forward activations.
    pub dropout: f64,
    /// Source-dropout probabilities: [properties, recalled pairs, title, store].
    pub sd_probs: [f64; 4],
    pub beam: usize,
    pub max_gen: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale default configuration.
    pub fn desk() -> Self {
        ModelConfig {
            hidden: 64,
            enc_layers: 2,
            dec_layers: 2,
            heads: 4,
            ff: 256,
            max_review: 48,
            max_title: 8,
            max_store: 6,
            pair_cap: 24,
            max_properties: 4,
            recalled: 8,
            vocab_size: 512,
            dropout: 0.0,
            sd_probs: [0.2, 0.2, 0.2, 0.2],
            beam: 3,
            max_gen: 64,
            seed: 42,
        }
    }

    /// Micro configuration for gradient checking.
    pub fn micro() -> Self {
        ModelConfig {
            hidden: 16,
            enc_layers: 1,
            dec_layers: 1,
            heads: 2,
            ff: 32,
            max_review: 12,
            max_title: 4,
            max_store: 4,
            pair_cap: 8,
            max_properties: 2,
            recalled: 2,
            vocab_size: 32,
            dropout: 0.0,
            sd_probs: [0.0; 4],
            beam: 1,
            max_gen: 12,
            seed: 7,
        }
    }

    /// Longest text block the encoder accepts: review + 2×[SEP] + title + store.
    pub fn max_input_len(&self) -> usize {
        self.max_review + self.max_title + self.max_store + 2
    }

    fn max_positions(&self) -> usize {
        self.max_input_len().max(self.max_gen + 1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(ModelError::BadConfig(format!(
                "hidden {} must be a positive multiple of heads {}",
                self.hidden, self.heads
            )));
        }
        for (name, v) in [
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("ff", self.ff),
            ("max_review", self.max_review),
            ("max_title", self.max_title),
            ("max_store", self.max_store),
            ("pair_cap", self.pair_cap),
            ("max_properties", self.max_properties),
            ("vocab_size", self.vocab_size),
            ("beam", self.beam),
            ("max_gen", self.max_gen),
        ] {
            if v == 0 {
                return Err(ModelError::BadConfig(format!("{name} must be >= 1")));
            }
        }
        if self.vocab_size <= crate::text::RESERVED.len() {
            return Err(ModelError::BadConfig(format!(
                "vocab_size {} leaves no room beyond reserved tokens",
                self.vocab_size
            )));
        }
        let mut probs = vec![self.dropout];
        probs.extend_from_slice(&self.sd_probs);
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(ModelError::BadConfig(
                "dropout probabilities must lie in [0, 1]".to_string(),
            ));
        }
        Ok(())
    }
}

/// Optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Learning rate (delta).
    pub lr: f64,
    /// Warmup fraction (gamma) of total steps.
    pub warmup: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip: f64,
    /// Hard cap on optimizer steps; 0 means unlimited.
    pub max_steps: u64,
    /// Stop early once the epoch mean loss drops to this value; 0 disables.
    pub target_loss: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            warmup: 0.075,
            batch: 20,
            epochs: 10,
            clip: 1.0,
            max_steps: 0,
            target_loss: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.lr <= 0.0 {
            return Err(ModelError::BadConfig("lr must be > 0".to_string()));
        }
        if !(0.0..=1.0).contains(&self.warmup) {
            return Err(ModelError::BadConfig("warmup must lie in [0, 1]".to_string()));
        }
        if self.batch == 0 || self.epochs == 0 {
            return Err(ModelError::BadConfig(
                "batch and epochs must be >= 1".to_string(),
            ));
        }
        if self.clip < 0.0 {
            return Err(ModelError::BadConfig("clip must be >= 0".to_string()));
        }
        Ok(())
    }
}

/// How each parameter tensor is initialized.
enum Init {
    Normal,
    Zero,
    One,
}

/// All learned weights, keyed by stable names so the optimizer, the gradient
/// checker and persistence all iterate the same groups in the same order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub config: ModelConfig,
    /// Optimizer steps taken so far; lets training resume its schedule.
    pub step: u64,
    tensors: BTreeMap<String, Tensor>,
}

fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.hidden;
    let f = cfg.ff;
    let v = cfg.vocab_size;
    let mut spec: Vec<(String, Vec<usize>, Init)> = vec![
        ("embed.tok".into(), vec![v, d], Init::Normal),
        ("embed.pos".into(), vec![cfg.max_positions(), d], Init::Normal),
        ("type.0".into(), vec![d], Init::Normal),
        ("type.1".into(), vec![d], Init::Normal),
        ("type.2".into(), vec![d], Init::Normal),
    ];
    let attn = |spec: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str| {
        for w in ["wq", "wk", "wv", "wo"] {
            spec.push((format!("{prefix}.{w}"), vec![d, d], Init::Normal));
        }
    };
    let block = |spec: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str, norms: usize| {
        for i in 1..=norms {
            spec.push((format!("{prefix}.ln{i}.g"), vec![d], Init::One));
            spec.push((format!("{prefix}.ln{i}.b"), vec![d], Init::Zero));
        }
        spec.push((format!("{prefix}.ff.w1"), vec![d, f], Init::Normal));
        spec.push((format!("{prefix}.ff.b1"), vec![f], Init::Zero));
        spec.push((format!("{prefix}.ff.w2"), vec![f, d], Init::Normal));
        spec.push((format!("{prefix}.ff.b2"), vec![d], Init::Zero));
    };
    for i in 0..cfg.enc_layers {
        let p = format!("enc{i}");
        attn(&mut spec, &format!("{p}.attn"));
        block(&mut spec, &p, 2);
    }
    for i in 0..cfg.dec_layers {
        let p = format!("dec{i}");
        attn(&mut spec, &format!("{p}.self"));
        attn(&mut spec, &format!("{p}.cross"));
        block(&mut spec, &p, 3);
    }
    for p in ["enc.out", "dec.out"] {
        spec.push((format!("{p}.g"), vec![d], Init::One));
        spec.push((format!("{p}.b"), vec![d], Init::Zero));
    }
    // Aspect attention: e = v . tanh(h_s W1 + h_t W2 + b1).
    spec.push(("aspect.w1".into(), vec![d, d], Init::Normal));
    spec.push(("aspect.w2".into(), vec![d, d], Init::Normal));
    spec.push(("aspect.b1".into(), vec![d], Init::Zero));
    spec.push(("aspect.v".into(), vec![d], Init::Normal));
    // Output head: P_v = softmax((h W3 + a W4 + b2) W5 + b3).
    spec.push(("head.w3".into(), vec![d, d], Init::Normal));
    spec.push(("head.w4".into(), vec![d, d], Init::Normal));
    spec.push(("head.b2".into(), vec![d], Init::Zero));
    spec.push(("head.w5".into(), vec![d, v], Init::Normal));
    spec.push(("head.b3".into(), vec![v], Init::Zero));
    // Copy attention: alpha = v . tanh(x W6 + h W7 + b6).
    spec.push(("copy.w6".into(), vec![d, d], Init::Normal));
    spec.push(("copy.w7".into(), vec![d, d], Init::Normal));
    spec.push(("copy.b6".into(), vec![d], Init::Zero));
    spec.push(("copy.v".into(), vec![d], Init::Normal));
    // Generation gate: eps = sigmoid(h w + b).
    spec.push(("gate.w".into(), vec![d, 1], Init::Normal));
    spec.push(("gate.b".into(), vec![1], Init::Zero));
    spec
}

/// Standard normal via Box-Muller; scaled by the caller.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

impl Parameters {
    /// Fresh parameters: weights and embeddings from N(0, 0.02²), biases
    /// zero, layer-norm gains one.
    pub fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut tensors = BTreeMap::new();
        for (name, shape, init) in layout(cfg) {
            let numel: usize = shape.iter().product();
            let data = match init {
                Init::Normal => (0..numel).map(|_| 0.02 * normal(rng)).collect(),
                Init::Zero => vec![0.0; numel],
                Init::One => vec![1.0; numel],
            };
            tensors.insert(name, Tensor::param(shape, data));
        }
        Ok(Parameters {
            config: cfg.clone(),
            step: 0,
            tensors,
        })
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter group {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter group {name}"))
    }

    pub fn set(&mut self, name: &str, t: Tensor) {
        let slot = self.get_mut(name);
        assert_eq!(slot.shape, t.shape, "shape change for group {name}");
        *slot = t;
    }

    /// Group names in iteration order (stable, sorted).
    pub fn group_names(&self) -> Vec<String> {
        self.tensors.keys().cloned().collect()
    }

    pub fn groups(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let body = serde_json::to_string(self).map_err(|e| ModelError::ParamIo {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        std::fs::write(path, body).map_err(|e| ModelError::ParamIo {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let body = std::fs::read_to_string(path).map_err(|e| ModelError::ParamIo {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let params: Parameters = serde_json::from_str(&body).map_err(|e| ModelError::ParamIo {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        // Guard against files edited or produced under a different layout.
        let mut expect: Vec<String> = layout(&params.config)
            .into_iter()
            .map(|(n, _, _)| n)
            .collect();
        expect.sort();
        let have = params.group_names();
        if expect != have {
            return Err(ModelError::ParamMismatch(format!(
                "expected {} groups, found {}",
                expect.len(),
                have.len()
            )));
        }
        for (name, shape, _) in layout(&params.config) {
            if params.get(&name).shape != shape {
                return Err(ModelError::ParamMismatch(format!(
                    "group {name} has shape {:?}, expected {shape:?}",
                    params.get(&name).shape
                )));
            }
        }
        Ok(params)
    }
}
