//! Greedy explanation decoding, rating prediction, and context-word
//! reporting over trained, frozen parameters. Decoding re-runs the full
//! forward pass for every emitted token; everything here is deterministic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tape;
use crate::corpus::{EncodedSample, InteractionRecord, Vocabulary};
use crate::model::{bind, forward_sample, sample_mask, ModelError, ModelParams, PeterConfig};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("unknown user '{id}' (model knows {known} users)")]
    UnknownUser { id: String, known: usize },
    #[error("unknown item '{id}' (model knows {known} items)")]
    UnknownItem { id: String, known: usize },
    #[error("asked for top {k} context words but the vocabulary has only {vocab}")]
    KTooLarge { k: usize, vocab: usize },
    #[error("model was trained with features; provide them at inference time")]
    FeaturesRequired,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One decoded test pair, carrying the reference through for evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationResult {
    pub user: String,
    pub item: String,
    pub feature: String,
    pub reference: String,
    pub generated: String,
    pub rating_true: f64,
    pub rating_pred: f64,
    pub context_top_k: Vec<ContextWord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextWord {
    pub word: String,
    pub prob: f64,
}

/// Build a pad-free decode-time sample: `[u, i, F?, <bos>, w_1..w_k]`.
fn decode_sample(
    user: usize,
    item: usize,
    features: &[usize],
    emitted: &[usize],
    vocab: &Vocabulary,
) -> EncodedSample {
    let mut inputs = Vec::with_capacity(1 + emitted.len());
    inputs.push(vocab.bos());
    inputs.extend_from_slice(emitted);
    let n = inputs.len();
    EncodedSample {
        user,
        item,
        features: features.to_vec(),
        inputs,
        targets: vec![vocab.pad(); n],
        loss_mask: vec![true; n],
        rating: 0.0,
    }
}

struct InferStep {
    /// Distribution at the last filled word slot (predicts the next word).
    next_word_dist: Vec<f64>,
    /// The item position's distribution over the vocabulary.
    context_dist: Vec<f64>,
    rating_raw: f64,
}

fn run_forward(
    sample: &EncodedSample,
    params: &ModelParams,
    config: &PeterConfig,
) -> Result<InferStep, ModelError> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params)?;
    let mask = sample_mask(sample, config.mask_mode)?;
    let fwd = forward_sample(&mut tape, &bound, sample, config, &mask)?;
    let probs = tape.value(fwd.probs);
    let vocab = probs.cols();
    let rows = probs.values();
    let last = probs.rows() - 1;
    Ok(InferStep {
        next_word_dist: rows[last * vocab..(last + 1) * vocab].to_vec(),
        context_dist: rows[..vocab].to_vec(),
        rating_raw: tape.scalar_value(fwd.rating),
    })
}

/// Argmax with ties broken by the lowest vocabulary index.
fn argmax(dist: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > dist[best] {
            best = i;
        }
    }
    best
}

fn resolve_ids(
    user: &str,
    item: &str,
    vocab: &Vocabulary,
) -> Result<(usize, usize), InferenceError> {
    let u = vocab.user_idx(user).map_err(|_| InferenceError::UnknownUser {
        id: user.to_string(),
        known: vocab.n_users(),
    })?;
    let i = vocab.item_idx(item).map_err(|_| InferenceError::UnknownItem {
        id: item.to_string(),
        known: vocab.n_items(),
    })?;
    Ok((u, i))
}

fn encode_features(
    features: &[String],
    vocab: &Vocabulary,
    config: &PeterConfig,
) -> Result<Vec<usize>, InferenceError> {
    if !config.use_features {
        return Ok(Vec::new());
    }
    if features.is_empty() {
        return Err(InferenceError::FeaturesRequired);
    }
    Ok(features.iter().map(|w| vocab.encode_word(w)).collect())
}

fn greedy_decode_ids(
    user: usize,
    item: usize,
    features: &[usize],
    params: &ModelParams,
    vocab: &Vocabulary,
    config: &PeterConfig,
) -> Result<(Vec<usize>, usize), ModelError> {
    let mut emitted: Vec<usize> = Vec::new();
    let mut forwards = 0usize;
    loop {
        let sample = decode_sample(user, item, features, &emitted, vocab);
        let step = run_forward(&sample, params, config)?;
        forwards += 1;
        let next = argmax(&step.next_word_dist);
        if next == vocab.eos() {
            break;
        }
        emitted.push(next);
        if emitted.len() >= config.word_budget {
            break;
        }
    }
    Ok((emitted, forwards))
}

/// Generate an explanation for a (user, item) pair: start from
/// `[u, i, F, <bos>]`, repeatedly append the argmax word, and stop at
/// `<eos>` or the word budget. Special tokens are stripped from the output.
pub fn greedy_decode(
    user: &str,
    item: &str,
    features: &[String],
    params: &ModelParams,
    vocab: &Vocabulary,
    config: &PeterConfig,
) -> Result<Vec<String>, InferenceError> {
    let (u, i) = resolve_ids(user, item, vocab)?;
    let feat_ids = encode_features(features, vocab, config)?;
    let (ids, _) = greedy_decode_ids(u, i, &feat_ids, params, vocab, config)?;
    Ok(ids
        .into_iter()
        .filter(|&id| !vocab.is_special(id))
        .map(|id| vocab.word(id).to_string())
        .collect())
}

/// Predict the rating for a pair, clamped into the dataset's rating bounds
/// for reporting.
pub fn predict_rating(
    user: &str,
    item: &str,
    features: &[String],
    params: &ModelParams,
    vocab: &Vocabulary,
    config: &PeterConfig,
    rating_bounds: (f64, f64),
) -> Result<f64, InferenceError> {
    let (u, i) = resolve_ids(user, item, vocab)?;
    let feat_ids = encode_features(features, vocab, config)?;
    let sample = decode_sample(u, i, &feat_ids, &[], vocab);
    let step = run_forward(&sample, params, config)?;
    Ok(step.rating_raw.clamp(rating_bounds.0, rating_bounds.1))
}

/// The `k` most probable words under the item position's distribution,
/// descending, ties broken by vocabulary index. Specials are reported as-is.
pub fn top_context_words(
    user: &str,
    item: &str,
    params: &ModelParams,
    vocab: &Vocabulary,
    config: &PeterConfig,
    k: usize,
) -> Result<Vec<(String, f64)>, InferenceError> {
    if k > vocab.n_words() {
        return Err(InferenceError::KTooLarge {
            k,
            vocab: vocab.n_words(),
        });
    }
    let (u, i) = resolve_ids(user, item, vocab)?;
    let sample = decode_sample(u, i, &[], &[], vocab);
    let step = run_forward(&sample, params, config)?;
    let mut order: Vec<usize> = (0..step.context_dist.len()).collect();
    order.sort_by(|&a, &b| {
        step.context_dist[b]
            .partial_cmp(&step.context_dist[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    Ok(order
        .into_iter()
        .take(k)
        .map(|idx| (vocab.word(idx).to_string(), step.context_dist[idx]))
        .collect())
}

/// Decode every record of a test set into [`GenerationResult`]s.
pub fn generate_for_records(
    records: &[&InteractionRecord],
    params: &ModelParams,
    vocab: &Vocabulary,
    config: &PeterConfig,
    rating_bounds: (f64, f64),
    context_k: usize,
) -> Result<Vec<GenerationResult>, InferenceError> {
    let k = context_k.min(vocab.n_words());
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let features = rec.feature_words();
        let generated = greedy_decode(&rec.user, &rec.item, &features, params, vocab, config)?;
        let rating_pred = predict_rating(
            &rec.user,
            &rec.item,
            &features,
            params,
            vocab,
            config,
            rating_bounds,
        )?;
        let context = top_context_words(&rec.user, &rec.item, params, vocab, config, k)?;
        out.push(GenerationResult {
            user: rec.user.clone(),
            item: rec.item.clone(),
            feature: rec.feature.clone(),
            reference: rec.explanation.join(" "),
            generated: generated.join(" "),
            rating_true: rec.rating,
            rating_pred,
            context_top_k: context
                .into_iter()
                .map(|(word, prob)| ContextWord { word, prob })
                .collect(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, synth_generate};
    use crate::model::MaskMode;

    fn setup() -> (PeterConfig, ModelParams, Vocabulary) {
        let records = synth_generate(3, 3, 6, 4, 17);
        let vocab = build_vocab(&records, 100).unwrap();
        let config = PeterConfig {
            n_users: vocab.n_users(),
            n_items: vocab.n_items(),
            vocab_size: vocab.n_words(),
            max_seq_len: 24,
            d: 8,
            ffn_dim: 16,
            n_layers: 2,
            n_heads: 2,
            word_budget: 6,
            mask_mode: MaskMode::Peter,
            use_features: false,
            lambda_e: 1.0,
            lambda_c: 1.0,
            lambda_r: 0.1,
            scale_full_d: false,
        };
        let params = ModelParams::init(&config, 3);
        (config, params, vocab)
    }

    fn rig_word_head(params: &mut ModelParams, winner: usize) {
        params.word_head_w.values_mut().fill(0.0);
        params.word_head_b.values_mut().fill(0.0);
        params.word_head_b.values_mut()[winner] = 100.0;
    }

    #[test]
    fn rigged_eos_gives_empty_explanation() {
        let (config, mut params, vocab) = setup();
        rig_word_head(&mut params, vocab.eos());
        let words =
            greedy_decode(vocab.user(0), vocab.item(0), &[], &params, &vocab, &config).unwrap();
        assert!(words.is_empty());
    }

    #[test]
    fn rigged_word_repeats_until_budget() {
        let (config, mut params, vocab) = setup();
        rig_word_head(&mut params, 0);
        let words =
            greedy_decode(vocab.user(0), vocab.item(0), &[], &params, &vocab, &config).unwrap();
        assert_eq!(words, vec![vocab.word(0).to_string(); config.word_budget]);
    }

    #[test]
    fn decode_is_deterministic() {
        let (config, params, vocab) = setup();
        let a = greedy_decode(vocab.user(1), vocab.item(2), &[], &params, &vocab, &config).unwrap();
        let b = greedy_decode(vocab.user(1), vocab.item(2), &[], &params, &vocab, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn decode_forward_count_is_tokens_plus_one_on_eos_stop() {
        let (config, mut params, vocab) = setup();
        rig_word_head(&mut params, vocab.eos());
        let (ids, forwards) = greedy_decode_ids(0, 0, &[], &params, &vocab, &config).unwrap();
        assert_eq!(ids.len(), 0);
        assert_eq!(forwards, 1);

        rig_word_head(&mut params, 2);
        let (ids, forwards) = greedy_decode_ids(0, 0, &[], &params, &vocab, &config).unwrap();
        assert_eq!(ids.len(), config.word_budget);
        assert_eq!(forwards, config.word_budget);
    }

    #[test]
    fn unknown_ids_report_known_counts() {
        let (config, params, vocab) = setup();
        let err =
            greedy_decode("nobody", vocab.item(0), &[], &params, &vocab, &config).unwrap_err();
        assert!(err.to_string().contains("3 users"), "{err}");
    }

    #[test]
    fn rating_is_clamped_for_reporting() {
        let (config, mut params, vocab) = setup();
        // zero head → raw 0 → clamped to the lower bound
        params.rating_w1.values_mut().fill(0.0);
        params.rating_b1.values_mut().fill(0.0);
        params.rating_w2.values_mut().fill(0.0);
        params.rating_b2.values_mut().fill(0.0);
        let rating = |params: &ModelParams| {
            predict_rating(
                vocab.user(0),
                vocab.item(0),
                &[],
                params,
                &vocab,
                &config,
                (1.0, 5.0),
            )
            .unwrap()
        };
        assert_eq!(rating(&params), 1.0);

        // push the scalar bias above the range
        params.rating_b2.values_mut()[0] = 6.2;
        assert_eq!(rating(&params), 5.0);

        params.rating_b2.values_mut()[0] = 3.7;
        assert!((rating(&params) - 3.7).abs() < 1e-12);
    }

    #[test]
    fn top_context_words_sorted_and_bounded() {
        let (config, params, vocab) = setup();
        let k = 5;
        let words =
            top_context_words(vocab.user(0), vocab.item(1), &params, &vocab, &config, k).unwrap();
        assert_eq!(words.len(), k);
        for pair in words.windows(2) {
            assert!(pair[0].1 >= pair[1].1);
        }
        let err = top_context_words(
            vocab.user(0),
            vocab.item(1),
            &params,
            &vocab,
            &config,
            vocab.n_words() + 1,
        )
        .unwrap_err();
        assert!(matches!(err, InferenceError::KTooLarge { .. }));
    }

    #[test]
    fn top_k_equal_to_vocab_is_a_permutation() {
        let (config, params, vocab) = setup();
        let words = top_context_words(
            vocab.user(0),
            vocab.item(0),
            &params,
            &vocab,
            &config,
            vocab.n_words(),
        )
        .unwrap();
        let mut names: Vec<&str> = words.iter().map(|(w, _)| w.as_str()).collect();
        names.sort_unstable();
        let mut all: Vec<&str> = (0..vocab.n_words()).map(|i| vocab.word(i)).collect();
        all.sort_unstable();
        assert_eq!(names, all);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5, 0.1]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn feature_model_requires_features() {
        let (mut config, params, vocab) = setup();
        config.use_features = true;
        let err =
            greedy_decode(vocab.user(0), vocab.item(0), &[], &params, &vocab, &config).unwrap_err();
        assert!(matches!(err, InferenceError::FeaturesRequired));
    }
}
