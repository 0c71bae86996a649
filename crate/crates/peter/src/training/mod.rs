//! Multi-task loss assembly, the SGD training loop with learning-rate decay
//! early stopping, and the ablation switches.

mod graph;
mod trainer;

pub use graph::{batch_objective, BatchLoss};
pub use trainer::{
    train, DecaySchedule, EarlyStopMetric, EpochLog, ScheduleAction, TrainReport, TrainSchedule,
    TrainState,
};

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::EncodedSample;
use crate::model::{ForwardOutput, MaskMode, ModelError, PeterConfig};

/// Probabilities are floored here before the log so underflow cannot produce
/// an infinite loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(
        "non-finite loss at epoch {epoch}, batch {batch} (lr {lr}): \
         L_e={l_e} L_c={l_c} L_r={l_r}"
    )]
    NonFinite {
        epoch: usize,
        batch: usize,
        lr: f64,
        l_e: f64,
        l_c: f64,
        l_r: f64,
    },
    #[error("encoded samples must share one length, found both {0} and {1}")]
    MixedLengths(usize, usize),
    #[error("{0} set is empty")]
    EmptySet(&'static str),
}

/// Per-step loss values; the objective is their weighted sum by
/// construction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_e: f64,
    pub l_c: f64,
    pub l_r: f64,
    pub j: f64,
}

impl LossBreakdown {
    pub fn from_parts(l_e: f64, l_c: f64, l_r: f64, config: &PeterConfig) -> Self {
        let j = config.lambda_e * l_e + config.lambda_c * l_c + config.lambda_r * l_r;
        LossBreakdown { l_e, l_c, l_r, j }
    }

    pub fn is_finite(&self) -> bool {
        self.l_e.is_finite() && self.l_c.is_finite() && self.l_r.is_finite() && self.j.is_finite()
    }
}

/// Negative log-likelihood of the explanation words: per sample, the mean
/// over the loss-masked target slots (the words plus `<eos>`) of
/// `-log c[target]`, then the mean over samples.
pub fn explanation_loss(outputs: &[ForwardOutput], samples: &[&EncodedSample]) -> f64 {
    assert_eq!(outputs.len(), samples.len());
    let mut total = 0.0;
    for (out, sample) in outputs.iter().zip(samples) {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (slot, (&target, &on)) in sample.targets.iter().zip(&sample.loss_mask).enumerate() {
            if on {
                sum += -out.word_dists[slot][target].max(PROB_FLOOR).ln();
                count += 1;
            }
        }
        total += sum / count as f64;
    }
    total / outputs.len() as f64
}

/// Negative log-likelihood of the explanation words as a bag, all read from
/// the item position's single distribution. Repeated words count per
/// occurrence; `<eos>` is not part of the bag.
pub fn context_loss(outputs: &[ForwardOutput], samples: &[&EncodedSample]) -> f64 {
    assert_eq!(outputs.len(), samples.len());
    let mut total = 0.0;
    for (out, sample) in outputs.iter().zip(samples) {
        let n_words = sample.n_words();
        let mut sum = 0.0;
        for &target in &sample.targets[..n_words] {
            sum += -out.context_dist[target].max(PROB_FLOOR).ln();
        }
        total += sum / n_words as f64;
    }
    total / outputs.len() as f64
}

/// Mean squared error between true and predicted ratings.
pub fn rating_loss(r_true: &[f64], r_pred: &[f64]) -> f64 {
    assert_eq!(r_true.len(), r_pred.len());
    let n = r_true.len() as f64;
    r_true
        .iter()
        .zip(r_pred)
        .map(|(r, p)| (r - p) * (r - p))
        .sum::<f64>()
        / n
}

/// Table-6 style ablation switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Set the context-prediction weight to zero.
    DisableContext,
    /// Set the rating-prediction weight to zero.
    DisableRating,
    /// Replace peter masking with plain left-to-right masking.
    LeftToRight,
}

impl AblationMode {
    pub fn label(&self) -> &'static str {
        match self {
            AblationMode::DisableContext => "disable_lc",
            AblationMode::DisableRating => "disable_lr",
            AblationMode::LeftToRight => "left_to_right",
        }
    }
}

impl FromStr for AblationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "disable_lc" => Ok(AblationMode::DisableContext),
            "disable_lr" => Ok(AblationMode::DisableRating),
            "left_to_right" => Ok(AblationMode::LeftToRight),
            other => Err(format!(
                "unknown ablation mode '{other}', expected disable_lc, disable_lr, or left_to_right"
            )),
        }
    }
}

/// Apply one ablation to a base config, leaving everything else untouched.
pub fn ablate(base: &PeterConfig, mode: AblationMode) -> PeterConfig {
    let mut config = base.clone();
    match mode {
        AblationMode::DisableContext => config.lambda_c = 0.0,
        AblationMode::DisableRating => config.lambda_r = 0.0,
        AblationMode::LeftToRight => config.mask_mode = MaskMode::LeftToRight,
    }
    config
}
