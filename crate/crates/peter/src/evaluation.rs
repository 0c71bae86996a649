//! Text-quality, explainability, and recommendation metrics over a
//! generation run: BLEU, ROUGE, USR, FMR, FCR, DIV, RMSE, MAE.
//!
//! All functions are pure and sum in input order, so results are
//! reproducible bit-for-bit.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::tokenize;
use crate::inference::GenerationResult;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0} must not be empty")]
    EmptyInput(&'static str),
    #[error("candidates ({0}) and references ({1}) must pair up")]
    LengthMismatch(usize, usize),
    #[error("n-gram order {0} unsupported (expected 1..=4)")]
    BadOrder(usize),
    #[error("feature universe is empty")]
    EmptyFeatureUniverse,
    #[error("DIV needs at least two candidates, got {0}")]
    NeedTwoCandidates(usize),
}

type Tokens = Vec<String>;

fn ngram_counts(words: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if words.len() >= n {
        for gram in words.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence-level BLEU-n averaged over pairs, as a percentage.
///
/// Per pair: modified (clipped) n-gram precision for orders 1..=n, geometric
/// mean, with add-one smoothing on orders above 1 when the clipped count is
/// zero, times the brevity penalty `min(1, e^(1 - r/c))`. Empty candidates
/// score 0 and still count toward the mean.
pub fn bleu_n(candidates: &[Tokens], references: &[Tokens], n: usize) -> Result<f64, EvalError> {
    if candidates.len() != references.len() {
        return Err(EvalError::LengthMismatch(candidates.len(), references.len()));
    }
    if candidates.is_empty() {
        return Err(EvalError::EmptyInput("candidate list"));
    }
    if n == 0 || n > 4 {
        return Err(EvalError::BadOrder(n));
    }
    let mut total = 0.0;
    for (cand, reference) in candidates.iter().zip(references) {
        total += sentence_bleu(cand, reference, n);
    }
    Ok(total / candidates.len() as f64 * 100.0)
}

fn sentence_bleu(cand: &[String], reference: &[String], n: usize) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for order in 1..=n {
        let cand_counts = ngram_counts(cand, order);
        let ref_counts = ngram_counts(reference, order);
        let total: usize = cand_counts.values().sum();
        let clipped: usize = cand_counts
            .iter()
            .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
        let p = if clipped == 0 && order > 1 {
            (clipped + 1) as f64 / (total + 1) as f64
        } else if total == 0 {
            0.0
        } else {
            clipped as f64 / total as f64
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln();
    }
    let precision = (log_sum / n as f64).exp();
    let c = cand.len() as f64;
    let r = reference.len() as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * precision
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScores {
    /// Percentages.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Pairs whose reference was shorter than the order and were skipped.
    pub pairs_skipped: usize,
}

/// ROUGE-n precision/recall/F1 with clipped counts, averaged over pairs, as
/// percentages. Pairs whose reference has no n-grams are skipped and
/// counted.
pub fn rouge_n(
    candidates: &[Tokens],
    references: &[Tokens],
    n: usize,
) -> Result<RougeScores, EvalError> {
    if candidates.len() != references.len() {
        return Err(EvalError::LengthMismatch(candidates.len(), references.len()));
    }
    if candidates.is_empty() {
        return Err(EvalError::EmptyInput("candidate list"));
    }
    if n == 0 || n > 4 {
        return Err(EvalError::BadOrder(n));
    }
    let mut sums = (0.0, 0.0, 0.0);
    let mut used = 0usize;
    let mut skipped = 0usize;
    for (cand, reference) in candidates.iter().zip(references) {
        if reference.len() < n {
            skipped += 1;
            continue;
        }
        let cand_counts = ngram_counts(cand, n);
        let ref_counts = ngram_counts(reference, n);
        let cand_total: usize = cand_counts.values().sum();
        let ref_total: usize = ref_counts.values().sum();
        let matches: usize = cand_counts
            .iter()
            .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
        let p = if cand_total == 0 {
            0.0
        } else {
            matches as f64 / cand_total as f64
        };
        let r = matches as f64 / ref_total as f64;
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        sums.0 += p;
        sums.1 += r;
        sums.2 += f;
        used += 1;
    }
    let denom = if used == 0 { 1.0 } else { used as f64 };
    Ok(RougeScores {
        precision: sums.0 / denom * 100.0,
        recall: sums.1 / denom * 100.0,
        f1: sums.2 / denom * 100.0,
        pairs_skipped: skipped,
    })
}

/// Unique Sentence Ratio: distinct token sequences over total candidates.
pub fn usr(candidates: &[Tokens]) -> Result<f64, EvalError> {
    if candidates.is_empty() {
        return Err(EvalError::EmptyInput("candidate list"));
    }
    let distinct: HashSet<&Tokens> = candidates.iter().collect();
    Ok(distinct.len() as f64 / candidates.len() as f64)
}

/// True iff `needle` occurs as a contiguous subsequence of `haystack`.
fn contains_contiguous(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty()
        && (haystack.len() >= needle.len())
        && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Feature Matching Ratio: the fraction of candidates that mention their
/// pair's ground-truth feature. Multi-word features must appear contiguously.
pub fn fmr(candidates: &[Tokens], features: &[Tokens]) -> Result<f64, EvalError> {
    if candidates.len() != features.len() {
        return Err(EvalError::LengthMismatch(candidates.len(), features.len()));
    }
    if candidates.is_empty() {
        return Err(EvalError::EmptyInput("candidate list"));
    }
    let hits = candidates
        .iter()
        .zip(features)
        .filter(|(cand, feat)| contains_contiguous(cand, feat))
        .count();
    Ok(hits as f64 / candidates.len() as f64)
}

/// Feature Coverage Ratio: distinct universe features mentioned by at least
/// one candidate, over the universe size.
pub fn fcr(candidates: &[Tokens], universe: &BTreeSet<Tokens>) -> Result<f64, EvalError> {
    if universe.is_empty() {
        return Err(EvalError::EmptyFeatureUniverse);
    }
    let covered = universe
        .iter()
        .filter(|feat| candidates.iter().any(|c| contains_contiguous(c, feat)))
        .count();
    Ok(covered as f64 / universe.len() as f64)
}

/// Feature diversity: mean pairwise intersection size of the candidates'
/// feature sets (universe members they mention). Exact over all pairs when
/// their number fits the budget, otherwise a seeded uniform sample of
/// `pair_budget` pairs. Lower means more diverse.
pub fn div(
    candidates: &[Tokens],
    universe: &BTreeSet<Tokens>,
    pair_budget: usize,
    seed: u64,
) -> Result<f64, EvalError> {
    if candidates.len() < 2 {
        return Err(EvalError::NeedTwoCandidates(candidates.len()));
    }
    let feature_sets: Vec<Vec<&Tokens>> = candidates
        .iter()
        .map(|cand| {
            universe
                .iter()
                .filter(|feat| contains_contiguous(cand, feat))
                .collect()
        })
        .collect();
    let intersection = |a: usize, b: usize| -> f64 {
        feature_sets[a]
            .iter()
            .filter(|f| feature_sets[b].contains(f))
            .count() as f64
    };
    let n = candidates.len();
    let all_pairs = n * (n - 1) / 2;
    if all_pairs <= pair_budget {
        let mut sum = 0.0;
        for a in 0..n {
            for b in (a + 1)..n {
                sum += intersection(a, b);
            }
        }
        Ok(sum / all_pairs as f64)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sum = 0.0;
        for _ in 0..pair_budget {
            let a = rng.gen_range(0..n);
            let mut b = rng.gen_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            sum += intersection(a, b);
        }
        Ok(sum / pair_budget as f64)
    }
}

/// Root mean squared error and mean absolute error.
pub fn rmse_mae(r_true: &[f64], r_pred: &[f64]) -> Result<(f64, f64), EvalError> {
    if r_true.len() != r_pred.len() {
        return Err(EvalError::LengthMismatch(r_true.len(), r_pred.len()));
    }
    if r_true.is_empty() {
        return Err(EvalError::EmptyInput("rating list"));
    }
    let n = r_true.len() as f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    for (t, p) in r_true.iter().zip(r_pred) {
        sq += (t - p) * (t - p);
        abs += (t - p).abs();
    }
    Ok(((sq / n).sqrt(), abs / n))
}

/// The full metric vector for one generation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fmr: f64,
    pub fcr: f64,
    pub div: f64,
    pub usr: f64,
    pub bleu1: f64,
    pub bleu4: f64,
    pub rouge1_p: f64,
    pub rouge1_r: f64,
    pub rouge1_f: f64,
    pub rouge2_p: f64,
    pub rouge2_r: f64,
    pub rouge2_f: f64,
    pub rmse: f64,
    pub mae: f64,
    pub pairs_evaluated: usize,
    pub empty_candidates: usize,
    pub rouge1_skipped: usize,
    pub rouge2_skipped: usize,
    pub div_pair_budget: usize,
    pub div_seed: u64,
}

/// Compute every metric over a generation run. The feature universe is the
/// set of distinct (tokenized) features of the whole dataset.
pub fn compute_report(
    generations: &[GenerationResult],
    dataset_features: &BTreeSet<Tokens>,
    pair_budget: usize,
    seed: u64,
) -> Result<MetricsReport, EvalError> {
    if generations.is_empty() {
        return Err(EvalError::EmptyInput("generation list"));
    }
    let candidates: Vec<Tokens> = generations.iter().map(|g| tokenize(&g.generated)).collect();
    let references: Vec<Tokens> = generations.iter().map(|g| tokenize(&g.reference)).collect();
    let features: Vec<Tokens> = generations.iter().map(|g| tokenize(&g.feature)).collect();
    let truths: Vec<f64> = generations.iter().map(|g| g.rating_true).collect();
    let preds: Vec<f64> = generations.iter().map(|g| g.rating_pred).collect();

    let bleu1 = bleu_n(&candidates, &references, 1)?;
    let bleu4 = bleu_n(&candidates, &references, 4)?;
    let rouge1 = rouge_n(&candidates, &references, 1)?;
    let rouge2 = rouge_n(&candidates, &references, 2)?;
    let usr_score = usr(&candidates)?;
    let fmr_score = fmr(&candidates, &features)?;
    let fcr_score = fcr(&candidates, dataset_features)?;
    let div_score = if candidates.len() >= 2 {
        div(&candidates, dataset_features, pair_budget, seed)?
    } else {
        0.0
    };
    let (rmse, mae) = rmse_mae(&truths, &preds)?;

    Ok(MetricsReport {
        fmr: fmr_score,
        fcr: fcr_score,
        div: div_score,
        usr: usr_score,
        bleu1,
        bleu4,
        rouge1_p: rouge1.precision,
        rouge1_r: rouge1.recall,
        rouge1_f: rouge1.f1,
        rouge2_p: rouge2.precision,
        rouge2_r: rouge2.recall,
        rouge2_f: rouge2.f1,
        rmse,
        mae,
        pairs_evaluated: generations.len(),
        empty_candidates: candidates.iter().filter(|c| c.is_empty()).count(),
        rouge1_skipped: rouge1.pairs_skipped,
        rouge2_skipped: rouge2.pairs_skipped,
        div_pair_budget: pair_budget,
        div_seed: seed,
    })
}

impl MetricsReport {
    /// Aligned text table mirroring the usual reporting column order.
    pub fn render_table(&self) -> String {
        let header = format!(
            "{:>6} {:>6} {:>6} {:>6} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
            "FMR", "FCR", "DIV", "USR", "B1", "B4", "R1-P", "R1-R", "R1-F", "R2-P", "R2-R", "R2-F",
            "RMSE", "MAE"
        );
        let row = format!(
            "{:>6.3} {:>6.3} {:>6.2} {:>6.3} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.3} {:>7.3}",
            self.fmr,
            self.fcr,
            self.div,
            self.usr,
            self.bleu1,
            self.bleu4,
            self.rouge1_p,
            self.rouge1_r,
            self.rouge1_f,
            self.rouge2_p,
            self.rouge2_r,
            self.rouge2_f,
            self.rmse,
            self.mae
        );
        format!("{header}\n{row}")
    }
}
