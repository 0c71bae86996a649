//! Tape-side assembly of the multi-task objective for one batch. Mirrors the
//! value-level loss functions in this module's parent so the logged numbers
//! and the differentiated graph agree exactly.

use crate::autodiff::{Tape, Tensor, TensorId};
use crate::corpus::EncodedSample;
use crate::model::{forward_sample, sample_mask, BoundParams, ModelError, PeterConfig, SampleForward};

use super::PROB_FLOOR;

/// Handles to the batch losses: `j = λ_e·l_e + λ_c·l_c + λ_r·l_r`.
pub struct BatchLoss {
    pub l_e: TensorId,
    pub l_c: TensorId,
    pub l_r: TensorId,
    pub j: TensorId,
    pub forwards: Vec<SampleForward>,
}

/// Record forwards and losses for every sample of a batch on one tape.
pub fn batch_objective(
    tape: &mut Tape,
    bound: &BoundParams,
    samples: &[&EncodedSample],
    config: &PeterConfig,
) -> Result<BatchLoss, ModelError> {
    assert!(!samples.is_empty());
    let inv_batch = 1.0 / samples.len() as f64;
    let mut le_parts = Vec::with_capacity(samples.len());
    let mut lc_parts = Vec::with_capacity(samples.len());
    let mut lr_parts = Vec::with_capacity(samples.len());
    let mut forwards = Vec::with_capacity(samples.len());

    for sample in samples {
        let mask = sample_mask(sample, config.mask_mode)?;
        let fwd = forward_sample(tape, bound, sample, config, &mask)?;

        let n_explained = sample.n_words() + 1;
        let n_words = sample.n_words();

        // Explanation NLL over the masked word slots.
        let word_probs = tape.slice_rows(fwd.probs, 1, n_explained)?;
        let picked = tape.gather_per_row(word_probs, &sample.targets[..n_explained])?;
        let floored = tape.clamp_min(picked, PROB_FLOOR)?;
        let logs = tape.log(floored)?;
        let neg = tape.scale(logs, -1.0)?;
        let sum_e = tape.sum(neg)?;
        le_parts.push(tape.scale(sum_e, 1.0 / n_explained as f64)?);

        // Context NLL: the word bag read entirely from the item position's
        // distribution (row 0 of the head output).
        let ctx_row = tape.slice_rows(fwd.probs, 0, 1)?;
        let ctx_rows = tape.repeat_rows(ctx_row, n_words)?;
        let picked_c = tape.gather_per_row(ctx_rows, &sample.targets[..n_words])?;
        let floored_c = tape.clamp_min(picked_c, PROB_FLOOR)?;
        let logs_c = tape.log(floored_c)?;
        let neg_c = tape.scale(logs_c, -1.0)?;
        let sum_c = tape.sum(neg_c)?;
        lc_parts.push(tape.scale(sum_c, 1.0 / n_words as f64)?);

        // Squared rating error.
        let neg_truth = tape.constant(Tensor::scalar(-sample.rating));
        let diff = tape.add(fwd.rating, neg_truth)?;
        lr_parts.push(tape.mul(diff, diff)?);

        forwards.push(fwd);
    }

    let le_sum = tape.add_n(&le_parts)?;
    let l_e = tape.scale(le_sum, inv_batch)?;
    let lc_sum = tape.add_n(&lc_parts)?;
    let l_c = tape.scale(lc_sum, inv_batch)?;
    let lr_sum = tape.add_n(&lr_parts)?;
    let l_r = tape.scale(lr_sum, inv_batch)?;

    let we = tape.scale(l_e, config.lambda_e)?;
    let wc = tape.scale(l_c, config.lambda_c)?;
    let wr = tape.scale(l_r, config.lambda_r)?;
    let j = tape.add_n(&[we, wc, wr])?;

    Ok(BatchLoss {
        l_e,
        l_c,
        l_r,
        j,
        forwards,
    })
}
