//! Epoch loop: batch SGD with gradient clipping, per-epoch validation, and
//! the save-or-decay schedule — save a checkpoint whenever validation
//! improves, otherwise multiply the learning rate by the decay factor, and
//! stop after the configured number of decays, reloading the best
//! checkpoint.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{epoch_batches, EncodedSample};
use crate::model::{
    bind, load_checkpoint_matching, pull_grads, save_checkpoint, ModelParams, PeterConfig,
};

use super::{batch_objective, LossBreakdown, TrainError};
use crate::autodiff::Tape;

/// What the early-stopping schedule monitors on the validation set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStopMetric {
    /// The combined multi-task objective.
    TotalObjective,
    /// The explanation loss alone.
    ExplanationLoss,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub initial_lr: f64,
    pub clip_threshold: f64,
    pub batch_size: usize,
    pub decay_factor: f64,
    pub max_decays: u32,
    pub max_epochs: usize,
    pub early_stop: EarlyStopMetric,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            initial_lr: 1.0,
            clip_threshold: 1.0,
            batch_size: 128,
            decay_factor: 0.25,
            max_decays: 5,
            max_epochs: 100,
            early_stop: EarlyStopMetric::TotalObjective,
        }
    }
}

/// Save-or-decay state machine. Learning rate never increases; the decay
/// count never exceeds `max_decays`.
#[derive(Debug, Clone)]
pub struct DecaySchedule {
    pub lr: f64,
    pub best: Option<f64>,
    pub decay_count: u32,
    factor: f64,
    max_decays: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleAction {
    /// Validation improved; the caller should checkpoint.
    Improved,
    /// No improvement; the learning rate was decayed.
    Decayed { stop: bool },
}

impl DecaySchedule {
    pub fn new(initial_lr: f64, factor: f64, max_decays: u32) -> Self {
        DecaySchedule {
            lr: initial_lr,
            best: None,
            decay_count: 0,
            factor,
            max_decays,
        }
    }

    pub fn observe(&mut self, monitored: f64) -> ScheduleAction {
        let improved = self.best.map_or(true, |b| monitored < b);
        if improved {
            self.best = Some(monitored);
            ScheduleAction::Improved
        } else {
            self.decay_count += 1;
            self.lr *= self.factor;
            ScheduleAction::Decayed {
                stop: self.decay_count >= self.max_decays,
            }
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_l_e: f64,
    pub train_l_c: f64,
    pub train_l_r: f64,
    pub train_j: f64,
    pub valid_j: f64,
    pub decayed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainState {
    pub epochs_run: usize,
    pub lr: f64,
    pub best_valid: f64,
    pub decay_count: u32,
    pub seed: u64,
}

#[derive(Debug)]
pub struct TrainReport {
    pub state: TrainState,
    pub epochs: Vec<EpochLog>,
    /// Loss breakdown of every SGD step, in order.
    pub steps: Vec<LossBreakdown>,
}

fn check_uniform_lengths(samples: &[EncodedSample]) -> Result<usize, TrainError> {
    let len = samples[0].seq_len();
    for s in samples {
        if s.seq_len() != len {
            return Err(TrainError::MixedLengths(len, s.seq_len()));
        }
    }
    Ok(len)
}

/// Forward-only loss over a sample set, weighted by batch size so the result
/// is the exact per-sample mean.
pub fn evaluate_objective(
    params: &ModelParams,
    config: &PeterConfig,
    samples: &[EncodedSample],
    batch_size: usize,
) -> Result<LossBreakdown, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptySet("evaluation"));
    }
    let mut sums = (0.0, 0.0, 0.0);
    for chunk in samples.chunks(batch_size) {
        let batch: Vec<&EncodedSample> = chunk.iter().collect();
        let mut tape = Tape::new();
        let bound = bind(&mut tape, params)?;
        let loss = batch_objective(&mut tape, &bound, &batch, config)?;
        let w = chunk.len() as f64;
        sums.0 += tape.scalar_value(loss.l_e) * w;
        sums.1 += tape.scalar_value(loss.l_c) * w;
        sums.2 += tape.scalar_value(loss.l_r) * w;
    }
    let n = samples.len() as f64;
    Ok(LossBreakdown::from_parts(
        sums.0 / n,
        sums.1 / n,
        sums.2 / n,
        config,
    ))
}

/// Run the full training loop. On return `params` holds the weights of the
/// best validation epoch (reloaded from the checkpoint at `checkpoint_path`).
pub fn train(
    params: &mut ModelParams,
    config: &PeterConfig,
    train_samples: &[EncodedSample],
    valid_samples: &[EncodedSample],
    schedule: &TrainSchedule,
    seed: u64,
    checkpoint_path: &Path,
) -> Result<TrainReport, TrainError> {
    if train_samples.is_empty() {
        return Err(TrainError::EmptySet("training"));
    }
    if valid_samples.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    check_uniform_lengths(train_samples)?;
    check_uniform_lengths(valid_samples)?;

    let mut decay = DecaySchedule::new(
        schedule.initial_lr,
        schedule.decay_factor,
        schedule.max_decays,
    );
    let mut epochs = Vec::new();
    let mut steps: Vec<LossBreakdown> = Vec::new();

    for epoch in 0..schedule.max_epochs {
        let lr = decay.lr;
        let batches = epoch_batches(train_samples.len(), schedule.batch_size, seed, epoch as u64);
        let mut epoch_sums = (0.0, 0.0, 0.0);
        for (batch_idx, batch_indices) in batches.iter().enumerate() {
            let batch: Vec<&EncodedSample> =
                batch_indices.iter().map(|&i| &train_samples[i]).collect();
            let mut tape = Tape::new();
            let bound = bind(&mut tape, params)?;
            let loss = batch_objective(&mut tape, &bound, &batch, config)?;
            let breakdown = LossBreakdown::from_parts(
                tape.scalar_value(loss.l_e),
                tape.scalar_value(loss.l_c),
                tape.scalar_value(loss.l_r),
                config,
            );
            debug_assert_eq!(breakdown.j.to_bits(), tape.scalar_value(loss.j).to_bits());
            if !breakdown.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: batch_idx,
                    lr,
                    l_e: breakdown.l_e,
                    l_c: breakdown.l_c,
                    l_r: breakdown.l_r,
                });
            }
            let j = loss.j;
            tape.backward(j).map_err(crate::model::ModelError::from)?;
            pull_grads(&tape, &bound, params)?;
            params
                .sgd_step(lr, schedule.clip_threshold)
                .map_err(crate::model::ModelError::from)?;

            let w = batch.len() as f64;
            epoch_sums.0 += breakdown.l_e * w;
            epoch_sums.1 += breakdown.l_c * w;
            epoch_sums.2 += breakdown.l_r * w;
            steps.push(breakdown);
        }
        let n = train_samples.len() as f64;
        let train_breakdown = LossBreakdown::from_parts(
            epoch_sums.0 / n,
            epoch_sums.1 / n,
            epoch_sums.2 / n,
            config,
        );

        let valid = evaluate_objective(params, config, valid_samples, schedule.batch_size)?;
        if !valid.is_finite() {
            return Err(TrainError::NonFinite {
                epoch,
                batch: usize::MAX,
                lr,
                l_e: valid.l_e,
                l_c: valid.l_c,
                l_r: valid.l_r,
            });
        }
        let monitored = match schedule.early_stop {
            EarlyStopMetric::TotalObjective => valid.j,
            EarlyStopMetric::ExplanationLoss => valid.l_e,
        };
        let action = decay.observe(monitored);
        let decayed = matches!(action, ScheduleAction::Decayed { .. });
        if action == ScheduleAction::Improved {
            save_checkpoint(checkpoint_path, config, params)?;
        }
        epochs.push(EpochLog {
            epoch,
            lr,
            train_l_e: train_breakdown.l_e,
            train_l_c: train_breakdown.l_c,
            train_l_r: train_breakdown.l_r,
            train_j: train_breakdown.j,
            valid_j: valid.j,
            decayed,
        });
        if matches!(action, ScheduleAction::Decayed { stop: true }) {
            break;
        }
    }

    *params = load_checkpoint_matching(checkpoint_path, config)?;
    let state = TrainState {
        epochs_run: epochs.len(),
        lr: decay.lr,
        best_valid: decay.best.unwrap_or(f64::INFINITY),
        decay_count: decay.decay_count,
        seed,
    };
    Ok(TrainReport {
        state,
        epochs,
        steps,
    })
}
