//! Tape-recorded forward pass for one encoded sample.
//!
//! Sequence positions (0-based): 0 = user, 1 = item, 2..2+|F| = features,
//! then `<bos>` and the word slots. The word head runs over the item
//! position (row 0 of `probs`, the context distribution) together with every
//! word-segment position; the rating head reads the user position.

use crate::autodiff::{Tape, Tensor, TensorId};
use crate::corpus::EncodedSample;

use super::{AttentionMask, MaskMode, ModelError, ModelParams, PeterConfig};

/// Tape handles for one layer's parameters.
pub struct BoundLayer {
    pub wq: Vec<TensorId>,
    pub wk: Vec<TensorId>,
    pub wv: Vec<TensorId>,
    pub wo: TensorId,
    pub ffn_w1: TensorId,
    pub ffn_b1: TensorId,
    pub ffn_w2: TensorId,
    pub ffn_b2: TensorId,
    pub ln1_gain: TensorId,
    pub ln1_bias: TensorId,
    pub ln2_gain: TensorId,
    pub ln2_bias: TensorId,
}

/// All parameters registered on a tape, plus the transposed weight nodes
/// shared by every sample recorded on that tape.
pub struct BoundParams {
    pub user_embed: TensorId,
    pub item_embed: TensorId,
    pub word_embed: TensorId,
    pub pos_embed: TensorId,
    pub layers: Vec<BoundLayer>,
    pub word_head_b: TensorId,
    pub rating_w1: TensorId,
    pub rating_b1: TensorId,
    pub rating_b2: TensorId,
    /// Transpose of the vocab × d word head, created once per tape.
    pub word_head_w_t: TensorId,
    /// Transpose of the 1 × d rating output row.
    pub rating_w2_t: TensorId,
    /// (name, id) for every parameter, aligned with [`ModelParams::named`].
    ids: Vec<(String, TensorId)>,
}

/// Register every parameter on the tape and pre-transpose the two weights
/// used in transposed orientation.
pub fn bind(tape: &mut Tape, params: &ModelParams) -> Result<BoundParams, ModelError> {
    let mut ids = Vec::new();
    let mut bind_one = |tape: &mut Tape, name: String, t: &Tensor| -> TensorId {
        let id = tape.param(t);
        ids.push((name, id));
        id
    };

    let user_embed = bind_one(tape, "user_embed".into(), &params.user_embed);
    let item_embed = bind_one(tape, "item_embed".into(), &params.item_embed);
    let word_embed = bind_one(tape, "word_embed".into(), &params.word_embed);
    let pos_embed = bind_one(tape, "pos_embed".into(), &params.pos_embed);

    let mut layers = Vec::with_capacity(params.layers.len());
    for (l, layer) in params.layers.iter().enumerate() {
        let wq = layer
            .wq
            .iter()
            .enumerate()
            .map(|(h, t)| bind_one(tape, format!("layer{l}.q{h}"), t))
            .collect();
        let wk = layer
            .wk
            .iter()
            .enumerate()
            .map(|(h, t)| bind_one(tape, format!("layer{l}.k{h}"), t))
            .collect();
        let wv = layer
            .wv
            .iter()
            .enumerate()
            .map(|(h, t)| bind_one(tape, format!("layer{l}.v{h}"), t))
            .collect();
        layers.push(BoundLayer {
            wq,
            wk,
            wv,
            wo: bind_one(tape, format!("layer{l}.attn_out"), &layer.wo),
            ffn_w1: bind_one(tape, format!("layer{l}.ffn_w1"), &layer.ffn_w1),
            ffn_b1: bind_one(tape, format!("layer{l}.ffn_b1"), &layer.ffn_b1),
            ffn_w2: bind_one(tape, format!("layer{l}.ffn_w2"), &layer.ffn_w2),
            ffn_b2: bind_one(tape, format!("layer{l}.ffn_b2"), &layer.ffn_b2),
            ln1_gain: bind_one(tape, format!("layer{l}.ln1_gain"), &layer.ln1_gain),
            ln1_bias: bind_one(tape, format!("layer{l}.ln1_bias"), &layer.ln1_bias),
            ln2_gain: bind_one(tape, format!("layer{l}.ln2_gain"), &layer.ln2_gain),
            ln2_bias: bind_one(tape, format!("layer{l}.ln2_bias"), &layer.ln2_bias),
        });
    }

    let word_head_w = bind_one(tape, "word_head.w".into(), &params.word_head_w);
    let word_head_b = bind_one(tape, "word_head.b".into(), &params.word_head_b);
    let rating_w1 = bind_one(tape, "rating.w1".into(), &params.rating_w1);
    let rating_b1 = bind_one(tape, "rating.b1".into(), &params.rating_b1);
    let rating_w2 = bind_one(tape, "rating.w2".into(), &params.rating_w2);
    let rating_b2 = bind_one(tape, "rating.b2".into(), &params.rating_b2);

    let word_head_w_t = tape.transpose(word_head_w)?;
    let rating_w2_t = tape.transpose(rating_w2)?;

    Ok(BoundParams {
        user_embed,
        item_embed,
        word_embed,
        pos_embed,
        layers,
        word_head_b,
        rating_w1,
        rating_b1,
        rating_b2,
        word_head_w_t,
        rating_w2_t,
        ids,
    })
}

/// Copy gradients accumulated on the tape back into the parameter tensors.
/// Every parameter must have received one.
pub fn pull_grads(
    tape: &Tape,
    bound: &BoundParams,
    params: &mut ModelParams,
) -> Result<(), ModelError> {
    let mut named = params.named_mut();
    debug_assert_eq!(named.len(), bound.ids.len());
    for ((name, tensor), (bname, id)) in named.iter_mut().zip(&bound.ids) {
        debug_assert_eq!(name, bname);
        let grad = tape
            .grad(*id)
            .ok_or_else(|| ModelError::MissingGrad(name.clone()))?;
        tensor.set_grad(grad.to_vec());
    }
    Ok(())
}

/// Tape handles produced by [`forward_sample`].
pub struct SampleForward {
    /// Input representations S0 (token + positional embeddings), |S| × d.
    pub s_input: TensorId,
    /// Final representations, |S| × d.
    pub s_final: TensorId,
    /// Output of each layer, for structural checks.
    pub layer_outputs: Vec<TensorId>,
    /// Word-head distributions, (1 + word slots) × vocab. Row 0 is the
    /// context distribution from the item position; rows 1.. align with the
    /// word-segment slots.
    pub probs: TensorId,
    /// Raw (unclamped) predicted rating, scalar.
    pub rating: TensorId,
    pub n_features: usize,
    pub word_slots: usize,
}

/// Build the per-sample attention mask: the configured mode plus pad-key
/// masking so no query attends to padding.
pub fn sample_mask(sample: &EncodedSample, mode: MaskMode) -> Result<AttentionMask, ModelError> {
    let mut mask = super::build_mask(sample.seq_len(), mode)?;
    mask.mask_pad_keys(sample.first_pad_pos());
    Ok(mask)
}

/// Record the full forward pass of one sample: embeddings, the layer stack,
/// and both heads.
pub fn forward_sample(
    tape: &mut Tape,
    bound: &BoundParams,
    sample: &EncodedSample,
    config: &PeterConfig,
    mask: &AttentionMask,
) -> Result<SampleForward, ModelError> {
    let seq_len = sample.seq_len();
    debug_assert_eq!(mask.seq_len(), seq_len);

    // S0: token embeddings from the three tables, plus positions.
    let u_row = tape.embedding_lookup(bound.user_embed, &[sample.user])?;
    let i_row = tape.embedding_lookup(bound.item_embed, &[sample.item])?;
    let mut word_ids = sample.features.clone();
    word_ids.extend_from_slice(&sample.inputs);
    let w_rows = tape.embedding_lookup(bound.word_embed, &word_ids)?;
    let tok = tape.concat_rows(&[u_row, i_row, w_rows])?;
    let positions: Vec<usize> = (0..seq_len).collect();
    let pos_rows = tape.embedding_lookup(bound.pos_embed, &positions)?;
    let s_input = tape.add(tok, pos_rows)?;

    let mut s = s_input;
    let mut layer_outputs = Vec::with_capacity(bound.layers.len());
    for layer in &bound.layers {
        s = transformer_layer(tape, s, layer, mask, config)?;
        layer_outputs.push(s);
    }

    // Word head over the item position plus every word-segment slot.
    let ctx_row = tape.slice_rows(s, 1, 1)?;
    let word_rows = tape.slice_rows(s, sample.bos_pos(), sample.inputs.len())?;
    let head_rows = tape.concat_rows(&[ctx_row, word_rows])?;
    let n_head_rows = 1 + sample.inputs.len();
    let logits_mm = tape.matmul(head_rows, bound.word_head_w_t)?;
    let bias_rows = tape.repeat_rows(bound.word_head_b, n_head_rows)?;
    let logits = tape.add(logits_mm, bias_rows)?;
    let probs = tape.softmax_rows(logits)?;

    // Rating head: one-hidden-layer MLP on the user position.
    let s1 = tape.slice_rows(s, 0, 1)?;
    let pre = tape.matmul(s1, bound.rating_w1)?;
    let b1_row = tape.repeat_rows(bound.rating_b1, 1)?;
    let hidden_in = tape.add(pre, b1_row)?;
    let hidden = tape.sigmoid(hidden_in)?;
    let out = tape.matmul(hidden, bound.rating_w2_t)?;
    let rating = tape.add(out, bound.rating_b2)?;

    Ok(SampleForward {
        s_input,
        s_final: s,
        layer_outputs,
        probs,
        rating,
        n_features: sample.features.len(),
        word_slots: sample.inputs.len(),
    })
}

/// Multi-head self-attention followed by the position-wise feed-forward
/// network, each wrapped with a residual connection and layer norm
/// (post-norm).
fn transformer_layer(
    tape: &mut Tape,
    x: TensorId,
    layer: &BoundLayer,
    mask: &AttentionMask,
    config: &PeterConfig,
) -> Result<TensorId, ModelError> {
    let seq_len = mask.seq_len();
    let scale = config.attn_scale();

    let mut heads = Vec::with_capacity(config.n_heads);
    for h in 0..config.n_heads {
        let q = tape.matmul(x, layer.wq[h])?;
        let k = tape.matmul(x, layer.wk[h])?;
        let v = tape.matmul(x, layer.wv[h])?;
        let k_t = tape.transpose(k)?;
        let scores_raw = tape.matmul(q, k_t)?;
        let scores = tape.scale(scores_raw, scale)?;
        let attn = tape.masked_softmax(scores, mask.tensor())?;
        heads.push(tape.matmul(attn, v)?);
    }
    let concat = tape.concat_cols(&heads)?;
    let proj = tape.matmul(concat, layer.wo)?;
    let res1 = tape.add(x, proj)?;
    let norm1 = tape.layer_norm(res1, layer.ln1_gain, layer.ln1_bias)?;

    let ff_mm1 = tape.matmul(norm1, layer.ffn_w1)?;
    let b1 = tape.repeat_rows(layer.ffn_b1, seq_len)?;
    let ff_pre = tape.add(ff_mm1, b1)?;
    let ff_act = tape.relu(ff_pre)?;
    let ff_mm2 = tape.matmul(ff_act, layer.ffn_w2)?;
    let b2 = tape.repeat_rows(layer.ffn_b2, seq_len)?;
    let ff_out = tape.add(ff_mm2, b2)?;
    let res2 = tape.add(norm1, ff_out)?;
    Ok(tape.layer_norm(res2, layer.ln2_gain, layer.ln2_bias)?)
}

/// Values extracted from a recorded forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Final representations S_L, |S| × d.
    pub s_final: Tensor,
    /// One distribution over the vocabulary per word-segment slot.
    pub word_dists: Vec<Vec<f64>>,
    /// The item position's distribution over the vocabulary.
    pub context_dist: Vec<f64>,
    /// Raw predicted rating.
    pub rating: f64,
}

pub fn extract_output(tape: &Tape, fwd: &SampleForward) -> ForwardOutput {
    let probs = tape.value(fwd.probs);
    let vocab = probs.cols();
    let rows = probs.values();
    let context_dist = rows[..vocab].to_vec();
    let word_dists = (1..probs.rows())
        .map(|r| rows[r * vocab..(r + 1) * vocab].to_vec())
        .collect();
    ForwardOutput {
        s_final: tape.value(fwd.s_final).clone(),
        word_dists,
        context_dist,
        rating: tape.scalar_value(fwd.rating),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EncodedSample;
    use crate::model::MaskMode;

    fn tiny_config() -> PeterConfig {
        PeterConfig {
            n_users: 3,
            n_items: 4,
            vocab_size: 12,
            max_seq_len: 12,
            d: 8,
            ffn_dim: 16,
            n_layers: 2,
            n_heads: 2,
            word_budget: 5,
            mask_mode: MaskMode::Peter,
            use_features: true,
            lambda_e: 1.0,
            lambda_c: 1.0,
            lambda_r: 0.1,
            scale_full_d: false,
        }
    }

    // vocab layout mirror: specials at 8..12 of a 12-word vocabulary
    const BOS: usize = 8;
    const EOS: usize = 9;
    const PAD: usize = 10;

    fn sample(user: usize, item: usize, words: &[usize]) -> EncodedSample {
        let budget = 5;
        let mut inputs = vec![BOS];
        inputs.extend_from_slice(words);
        if inputs.len() < budget + 1 {
            inputs.push(EOS);
        }
        while inputs.len() < budget + 1 {
            inputs.push(PAD);
        }
        let mut targets: Vec<usize> = words.to_vec();
        targets.push(EOS);
        let mut loss_mask = vec![true; targets.len()];
        while targets.len() < budget + 1 {
            targets.push(PAD);
            loss_mask.push(false);
        }
        EncodedSample {
            user,
            item,
            features: vec![0],
            inputs,
            targets,
            loss_mask,
            rating: 4.0,
        }
    }

    fn run_forward(
        params: &ModelParams,
        config: &PeterConfig,
        s: &EncodedSample,
    ) -> (Tape, SampleForward) {
        let mut tape = Tape::new();
        let bound = bind(&mut tape, params).unwrap();
        let mask = sample_mask(s, config.mask_mode).unwrap();
        let fwd = forward_sample(&mut tape, &bound, s, config, &mask).unwrap();
        (tape, fwd)
    }

    #[test]
    fn zero_tables_leave_only_positions() {
        let config = tiny_config();
        let mut params = ModelParams::init(&config, 0);
        for t in [
            &mut params.user_embed,
            &mut params.item_embed,
            &mut params.word_embed,
        ] {
            t.values_mut().fill(0.0);
        }
        let s = sample(0, 0, &[1, 2]);
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &params).unwrap();
        let mask = sample_mask(&s, config.mask_mode).unwrap();
        let fwd = forward_sample(&mut tape, &bound, &s, &config, &mask).unwrap();
        let s0 = tape.value(fwd.s_input);
        let pos = &params.pos_embed;
        for r in 0..s.seq_len() {
            assert_eq!(
                &s0.values()[r * config.d..(r + 1) * config.d],
                &pos.values()[r * config.d..(r + 1) * config.d]
            );
        }
    }

    #[test]
    fn swapping_user_changes_only_row_one_of_input() {
        let config = tiny_config();
        let params = ModelParams::init(&config, 3);
        let (tape_a, fwd_a) = run_forward(&params, &config, &sample(0, 1, &[1, 2]));
        let (tape_b, fwd_b) = run_forward(&params, &config, &sample(1, 1, &[1, 2]));
        let a = tape_a.value(fwd_a.s_input);
        let b = tape_b.value(fwd_b.s_input);
        let d = config.d;
        assert_ne!(&a.values()[..d], &b.values()[..d]);
        assert_eq!(&a.values()[d..], &b.values()[d..]);
    }

    #[test]
    fn first_feature_row_is_word_plus_position() {
        let config = tiny_config();
        let params = ModelParams::init(&config, 4);
        let s = sample(1, 2, &[3]);
        let (tape, fwd) = run_forward(&params, &config, &s);
        let s0 = tape.value(fwd.s_input);
        let d = config.d;
        let f = s.features[0];
        for j in 0..d {
            let expect = params.word_embed.values()[f * d + j] + params.pos_embed.values()[2 * d + j];
            assert_eq!(s0.values()[2 * d + j], expect);
        }
    }

    #[test]
    fn output_shapes_and_normalization() {
        let config = tiny_config();
        let params = ModelParams::init(&config, 5);
        let s = sample(2, 3, &[4, 5, 6]);
        let (tape, fwd) = run_forward(&params, &config, &s);
        let out = extract_output(&tape, &fwd);
        assert_eq!(out.s_final.shape(), &[s.seq_len(), config.d]);
        assert_eq!(out.word_dists.len(), s.inputs.len());
        for dist in out.word_dists.iter().chain(std::iter::once(&out.context_dist)) {
            let total: f64 = dist.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
            assert!(dist.iter().all(|p| *p >= 0.0));
        }
        assert!(out.rating.is_finite());
    }

    #[test]
    fn word_head_zero_weights_give_uniform() {
        let config = tiny_config();
        let mut params = ModelParams::init(&config, 6);
        params.word_head_w.values_mut().fill(0.0);
        params.word_head_b.values_mut().fill(0.0);
        let s = sample(0, 0, &[1]);
        let (tape, fwd) = run_forward(&params, &config, &s);
        let out = extract_output(&tape, &fwd);
        for p in &out.context_dist {
            assert!((p - 1.0 / config.vocab_size as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn word_head_huge_bias_dominates_argmax() {
        let config = tiny_config();
        let mut params = ModelParams::init(&config, 6);
        params.word_head_b.values_mut()[7] = 1e4;
        let s = sample(0, 0, &[1]);
        let (tape, fwd) = run_forward(&params, &config, &s);
        let out = extract_output(&tape, &fwd);
        let argmax = out.context_dist
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 7);
    }

    #[test]
    fn rating_zero_head_gives_zero() {
        let config = tiny_config();
        let mut params = ModelParams::init(&config, 7);
        params.rating_w1.values_mut().fill(0.0);
        params.rating_b1.values_mut().fill(0.0);
        params.rating_w2.values_mut().fill(0.0);
        params.rating_b2.values_mut().fill(0.0);
        let s = sample(0, 0, &[1]);
        let (tape, fwd) = run_forward(&params, &config, &s);
        assert_eq!(tape.scalar_value(fwd.rating), 0.0);
    }

    #[test]
    fn rating_all_ones_output_row_gives_half_d() {
        // W1 = 0 and b1 = 0 make the hidden layer sigmoid(0) = 0.5
        // everywhere; an all-ones output row then yields d/2.
        let config = tiny_config();
        let mut params = ModelParams::init(&config, 7);
        params.rating_w1.values_mut().fill(0.0);
        params.rating_b1.values_mut().fill(0.0);
        params.rating_w2.values_mut().fill(1.0);
        params.rating_b2.values_mut().fill(0.0);
        let s = sample(0, 0, &[1]);
        let (tape, fwd) = run_forward(&params, &config, &s);
        assert!((tape.scalar_value(fwd.rating) - config.d as f64 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn left_to_right_rating_ignores_item() {
        let config = PeterConfig {
            mask_mode: MaskMode::LeftToRight,
            ..tiny_config()
        };
        let params = ModelParams::init(&config, 8);
        let (tape_a, fwd_a) = run_forward(&params, &config, &sample(1, 0, &[2, 3]));
        let (tape_b, fwd_b) = run_forward(&params, &config, &sample(1, 3, &[2, 3]));
        let d = config.d;
        let row_a = &tape_a.value(fwd_a.s_final).values()[..d];
        let row_b = &tape_b.value(fwd_b.s_final).values()[..d];
        assert_eq!(row_a, row_b);
        assert_eq!(
            tape_a.scalar_value(fwd_a.rating).to_bits(),
            tape_b.scalar_value(fwd_b.rating).to_bits()
        );
    }

    #[test]
    fn peter_rating_sees_item() {
        let config = tiny_config();
        let params = ModelParams::init(&config, 8);
        let (tape_a, fwd_a) = run_forward(&params, &config, &sample(1, 0, &[2, 3]));
        let (tape_b, fwd_b) = run_forward(&params, &config, &sample(1, 3, &[2, 3]));
        assert_ne!(
            tape_a.scalar_value(fwd_a.rating),
            tape_b.scalar_value(fwd_b.rating)
        );
    }

    #[test]
    fn mask_mode_difference_confined_to_position_one_at_layer_one() {
        let base = tiny_config();
        let params = ModelParams::init(&base, 9);
        let s = sample(2, 2, &[1, 2, 3]);
        let l2r = PeterConfig {
            mask_mode: MaskMode::LeftToRight,
            ..base.clone()
        };
        let (tape_a, fwd_a) = run_forward(&params, &base, &s);
        let (tape_b, fwd_b) = run_forward(&params, &l2r, &s);
        let d = base.d;
        let a1 = tape_a.value(fwd_a.layer_outputs[0]).values();
        let b1 = tape_b.value(fwd_b.layer_outputs[0]).values();
        assert_ne!(&a1[..d], &b1[..d], "position 1 must differ across modes");
        assert_eq!(&a1[d..], &b1[d..], "later positions must match bit-exactly");
    }

    #[test]
    fn causal_perturbation_only_flows_forward() {
        let config = PeterConfig {
            mask_mode: MaskMode::LeftToRight,
            ..tiny_config()
        };
        let params = ModelParams::init(&config, 10);
        let s_a = sample(0, 0, &[1, 2, 3]);
        // perturb word at sequence position bos_pos()+2 by swapping the token
        let mut s_b = s_a.clone();
        s_b.inputs[2] = 5;
        let (tape_a, fwd_a) = run_forward(&params, &config, &s_a);
        let (tape_b, fwd_b) = run_forward(&params, &config, &s_b);
        let d = config.d;
        let changed_pos = s_a.bos_pos() + 2;
        let out_a = tape_a.value(fwd_a.s_final).values();
        let out_b = tape_b.value(fwd_b.s_final).values();
        for r in 0..changed_pos {
            assert_eq!(
                &out_a[r * d..(r + 1) * d],
                &out_b[r * d..(r + 1) * d],
                "row {r} before the perturbation must not change"
            );
        }
        assert_ne!(
            &out_a[changed_pos * d..(changed_pos + 1) * d],
            &out_b[changed_pos * d..(changed_pos + 1) * d]
        );
    }
}
