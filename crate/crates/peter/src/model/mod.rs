//! The PETER network: four embedding tables (user, item, word, position),
//! a stack of masked transformer layers, and three task heads sharing the
//! final representations — word prediction (explanation and context) and
//! rating regression.

mod checkpoint;
mod forward;
mod mask;

pub use checkpoint::{load_checkpoint, load_checkpoint_matching, save_checkpoint};
pub use forward::{
    bind, extract_output, forward_sample, pull_grads, sample_mask, BoundLayer, BoundParams,
    ForwardOutput, SampleForward,
};
pub use mask::{build_mask, AttentionMask};

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tensor};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("sequence length {0} is too short for peter masking (need at least 2)")]
    SequenceTooShort(usize),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("parameter '{0}' received no gradient")]
    MissingGrad(String),
    #[error("checkpoint io on {path}: {source}")]
    CheckpointIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad checkpoint: {0}")]
    CheckpointFormat(String),
    #[error("checkpoint config disagrees with the requested one: {0}")]
    CheckpointMismatch(String),
}

/// Which positions may attend to which. Both modes are causal; peter masking
/// additionally lets position 1 (the user) attend to position 2 (the item).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    Peter,
    LeftToRight,
}

impl FromStr for MaskMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "peter" => Ok(MaskMode::Peter),
            "left_to_right" => Ok(MaskMode::LeftToRight),
            other => Err(format!(
                "unknown mask mode '{other}', expected 'peter' or 'left_to_right'"
            )),
        }
    }
}

/// Model hyperparameters plus the data-derived table sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeterConfig {
    pub n_users: usize,
    pub n_items: usize,
    /// Word-vocabulary size including the four specials.
    pub vocab_size: usize,
    /// Rows of the positional table; the longest sequence the model accepts.
    pub max_seq_len: usize,
    /// Embedding size.
    pub d: usize,
    pub ffn_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub word_budget: usize,
    pub mask_mode: MaskMode,
    pub use_features: bool,
    pub lambda_e: f64,
    pub lambda_c: f64,
    pub lambda_r: f64,
    /// Scale attention scores by 1/√d instead of the default per-head
    /// 1/√(d/H).
    pub scale_full_d: bool,
}

impl PeterConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d == 0 || self.ffn_dim == 0 || self.n_layers == 0 || self.n_heads == 0 {
            return Err(ModelError::Config("all dimensions must be >= 1".into()));
        }
        if self.d % self.n_heads != 0 {
            return Err(ModelError::Config(format!(
                "embedding size {} not divisible by {} heads",
                self.d, self.n_heads
            )));
        }
        if self.word_budget == 0 {
            return Err(ModelError::Config("word budget must be >= 1".into()));
        }
        if self.lambda_e < 0.0 || self.lambda_c < 0.0 || self.lambda_r < 0.0 {
            return Err(ModelError::Config("loss weights must be >= 0".into()));
        }
        if self.n_users == 0 || self.n_items == 0 || self.vocab_size < 5 {
            return Err(ModelError::Config(
                "need at least one user, one item, and a non-empty vocabulary".into(),
            ));
        }
        if self.max_seq_len < 3 + self.word_budget {
            return Err(ModelError::Config(format!(
                "max_seq_len {} cannot hold user + item + bos + {} words",
                self.max_seq_len, self.word_budget
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.n_heads
    }

    /// Multiplier applied to raw attention scores.
    pub fn attn_scale(&self) -> f64 {
        let denom = if self.scale_full_d {
            self.d as f64
        } else {
            self.head_dim() as f64
        };
        1.0 / denom.sqrt()
    }
}

/// Weights of one transformer layer.
#[derive(Debug, Clone)]
pub struct LayerParams {
    /// Per-head query/key/value projections, each d × d/H.
    pub wq: Vec<Tensor>,
    pub wk: Vec<Tensor>,
    pub wv: Vec<Tensor>,
    /// Output projection after head concatenation, d × d.
    pub wo: Tensor,
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

/// All trainable tensors.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub user_embed: Tensor,
    pub item_embed: Tensor,
    pub word_embed: Tensor,
    pub pos_embed: Tensor,
    pub layers: Vec<LayerParams>,
    /// Word head, vocab × d; shared by explanation and context prediction.
    pub word_head_w: Tensor,
    pub word_head_b: Tensor,
    /// Rating head hidden layer, d × d, plus its bias.
    pub rating_w1: Tensor,
    pub rating_b1: Tensor,
    /// Rating output row vector, 1 × d, plus the scalar bias.
    pub rating_w2: Tensor,
    pub rating_b2: Tensor,
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, limit: f64) -> Tensor {
    let n = shape.iter().product();
    let values = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape, values)
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    uniform_tensor(rng, vec![rows, cols], limit)
}

impl ModelParams {
    /// Fresh parameters: embedding tables uniform in (-0.1, 0.1), projections
    /// Xavier-uniform, biases zero, layer-norm gains one. Bit-reproducible
    /// for a given seed.
    pub fn init(config: &PeterConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d;
        let dh = config.head_dim();
        let user_embed = uniform_tensor(&mut rng, vec![config.n_users, d], 0.1);
        let item_embed = uniform_tensor(&mut rng, vec![config.n_items, d], 0.1);
        let word_embed = uniform_tensor(&mut rng, vec![config.vocab_size, d], 0.1);
        let pos_embed = uniform_tensor(&mut rng, vec![config.max_seq_len, d], 0.1);
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                wq: (0..config.n_heads).map(|_| xavier(&mut rng, d, dh)).collect(),
                wk: (0..config.n_heads).map(|_| xavier(&mut rng, d, dh)).collect(),
                wv: (0..config.n_heads).map(|_| xavier(&mut rng, d, dh)).collect(),
                wo: xavier(&mut rng, d, d),
                ffn_w1: xavier(&mut rng, d, config.ffn_dim),
                ffn_b1: Tensor::zeros(vec![config.ffn_dim]),
                ffn_w2: xavier(&mut rng, config.ffn_dim, d),
                ffn_b2: Tensor::zeros(vec![d]),
                ln1_gain: Tensor::new(vec![d], vec![1.0; d]),
                ln1_bias: Tensor::zeros(vec![d]),
                ln2_gain: Tensor::new(vec![d], vec![1.0; d]),
                ln2_bias: Tensor::zeros(vec![d]),
            })
            .collect();
        let word_head_w = xavier(&mut rng, config.vocab_size, d);
        let word_head_b = Tensor::zeros(vec![config.vocab_size]);
        let rating_w1 = xavier(&mut rng, d, d);
        let rating_b1 = Tensor::zeros(vec![d]);
        let rating_w2 = xavier(&mut rng, 1, d);
        let rating_b2 = Tensor::zeros(vec![1]);
        ModelParams {
            user_embed,
            item_embed,
            word_embed,
            pos_embed,
            layers,
            word_head_w,
            word_head_b,
            rating_w1,
            rating_b1,
            rating_w2,
            rating_b2,
        }
    }

    /// All tensors with stable names, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("user_embed".into(), &self.user_embed),
            ("item_embed".into(), &self.item_embed),
            ("word_embed".into(), &self.word_embed),
            ("pos_embed".into(), &self.pos_embed),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            for (h, t) in layer.wq.iter().enumerate() {
                out.push((format!("layer{l}.q{h}"), t));
            }
            for (h, t) in layer.wk.iter().enumerate() {
                out.push((format!("layer{l}.k{h}"), t));
            }
            for (h, t) in layer.wv.iter().enumerate() {
                out.push((format!("layer{l}.v{h}"), t));
            }
            out.push((format!("layer{l}.attn_out"), &layer.wo));
            out.push((format!("layer{l}.ffn_w1"), &layer.ffn_w1));
            out.push((format!("layer{l}.ffn_b1"), &layer.ffn_b1));
            out.push((format!("layer{l}.ffn_w2"), &layer.ffn_w2));
            out.push((format!("layer{l}.ffn_b2"), &layer.ffn_b2));
            out.push((format!("layer{l}.ln1_gain"), &layer.ln1_gain));
            out.push((format!("layer{l}.ln1_bias"), &layer.ln1_bias));
            out.push((format!("layer{l}.ln2_gain"), &layer.ln2_gain));
            out.push((format!("layer{l}.ln2_bias"), &layer.ln2_bias));
        }
        out.push(("word_head.w".into(), &self.word_head_w));
        out.push(("word_head.b".into(), &self.word_head_b));
        out.push(("rating.w1".into(), &self.rating_w1));
        out.push(("rating.b1".into(), &self.rating_b1));
        out.push(("rating.w2".into(), &self.rating_w2));
        out.push(("rating.b2".into(), &self.rating_b2));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("user_embed".into(), &mut self.user_embed),
            ("item_embed".into(), &mut self.item_embed),
            ("word_embed".into(), &mut self.word_embed),
            ("pos_embed".into(), &mut self.pos_embed),
        ];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (h, t) in layer.wq.iter_mut().enumerate() {
                out.push((format!("layer{l}.q{h}"), t));
            }
            for (h, t) in layer.wk.iter_mut().enumerate() {
                out.push((format!("layer{l}.k{h}"), t));
            }
            for (h, t) in layer.wv.iter_mut().enumerate() {
                out.push((format!("layer{l}.v{h}"), t));
            }
            out.push((format!("layer{l}.attn_out"), &mut layer.wo));
            out.push((format!("layer{l}.ffn_w1"), &mut layer.ffn_w1));
            out.push((format!("layer{l}.ffn_b1"), &mut layer.ffn_b1));
            out.push((format!("layer{l}.ffn_w2"), &mut layer.ffn_w2));
            out.push((format!("layer{l}.ffn_b2"), &mut layer.ffn_b2));
            out.push((format!("layer{l}.ln1_gain"), &mut layer.ln1_gain));
            out.push((format!("layer{l}.ln1_bias"), &mut layer.ln1_bias));
            out.push((format!("layer{l}.ln2_gain"), &mut layer.ln2_gain));
            out.push((format!("layer{l}.ln2_bias"), &mut layer.ln2_bias));
        }
        out.push(("word_head.w".into(), &mut self.word_head_w));
        out.push(("word_head.b".into(), &mut self.word_head_b));
        out.push(("rating.w1".into(), &mut self.rating_w1));
        out.push(("rating.b1".into(), &mut self.rating_b1));
        out.push(("rating.w2".into(), &mut self.rating_w2));
        out.push(("rating.b2".into(), &mut self.rating_b2));
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }

    /// One SGD step with global-norm clipping over every parameter; clears
    /// gradients afterwards.
    pub fn sgd_step(&mut self, lr: f64, clip_threshold: f64) -> Result<(), AutodiffError> {
        let mut named = self.named_mut();
        crate::autodiff::sgd_step_with_clip(&mut named, lr, clip_threshold)
    }
}
