//! Assembly of one record into the model's input sequence.
//!
//! The sequence is `[u][i][f_1..f_|F|][<bos>][e_1..e_T][<eos>][<pad>..]`
//! padded to a fixed word budget, so every sample with the same feature
//! count has the same total length. The target at each word-segment slot is
//! the input shifted left by one: the slot holding `<bos>` predicts `e_1`,
//! the slot holding `e_T` predicts `<eos>`, and pad slots predict nothing.

use super::{CorpusError, InteractionRecord, Vocabulary};

/// A record encoded into index space, ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub user: usize,
    pub item: usize,
    /// Feature word indices; empty when features are disabled.
    pub features: Vec<usize>,
    /// Word-segment inputs: `<bos>`, the (truncated) explanation words, then
    /// `<eos>` and padding. Length is always `word_budget + 1`.
    pub inputs: Vec<usize>,
    /// Targets aligned with `inputs`: the explanation words shifted left by
    /// one, ending in `<eos>`; `<pad>` elsewhere.
    pub targets: Vec<usize>,
    /// Which target slots contribute to the explanation loss. Exactly the
    /// first `n_words + 1` slots are on; pad slots never are.
    pub loss_mask: Vec<bool>,
    pub rating: f64,
}

impl EncodedSample {
    /// Total sequence length: user + item + features + bos + word budget.
    pub fn seq_len(&self) -> usize {
        2 + self.features.len() + self.inputs.len()
    }

    /// Number of explanation words retained after truncation.
    pub fn n_words(&self) -> usize {
        self.loss_mask.iter().filter(|m| **m).count() - 1
    }

    /// 0-based sequence position of the `<bos>` slot.
    pub fn bos_pos(&self) -> usize {
        2 + self.features.len()
    }

    /// 0-based sequence position of the first `<pad>` input, i.e. the number
    /// of real tokens in the sequence.
    pub fn first_pad_pos(&self) -> usize {
        let real_words = self.n_words() + 1 + usize::from(self.n_words() + 1 < self.inputs.len());
        2 + self.features.len() + real_words
    }

    /// All token ids of the word segment (features excluded), in order.
    pub fn word_segment(&self) -> &[usize] {
        &self.inputs
    }
}

/// Encode one record. The explanation is truncated to `word_budget` words;
/// `<bos>`/`<eos>` are scaffolding added here and do not count against the
/// budget. Unknown users or items are errors; unknown words map to `<unk>`.
pub fn encode_sample(
    record: &InteractionRecord,
    vocab: &Vocabulary,
    use_features: bool,
    word_budget: usize,
) -> Result<EncodedSample, CorpusError> {
    assert!(word_budget >= 1, "word budget must be at least 1");
    let user = vocab.user_idx(&record.user)?;
    let item = vocab.item_idx(&record.item)?;
    let features: Vec<usize> = if use_features {
        record
            .feature_words()
            .iter()
            .map(|w| vocab.encode_word(w))
            .collect()
    } else {
        Vec::new()
    };

    let n_words = record.explanation.len().min(word_budget);
    let slots = word_budget + 1;
    let mut inputs = Vec::with_capacity(slots);
    let mut targets = Vec::with_capacity(slots);
    let mut loss_mask = Vec::with_capacity(slots);

    inputs.push(vocab.bos());
    for w in &record.explanation[..n_words] {
        inputs.push(vocab.encode_word(w));
    }
    if inputs.len() < slots {
        inputs.push(vocab.eos());
    }
    while inputs.len() < slots {
        inputs.push(vocab.pad());
    }

    for t in 0..slots {
        if t < n_words {
            targets.push(vocab.encode_word(&record.explanation[t]));
            loss_mask.push(true);
        } else if t == n_words {
            targets.push(vocab.eos());
            loss_mask.push(true);
        } else {
            targets.push(vocab.pad());
            loss_mask.push(false);
        }
    }

    Ok(EncodedSample {
        user,
        item,
        features,
        inputs,
        targets,
        loss_mask,
        rating: record.rating,
    })
}

/// Recover the truncated explanation words from an encoded sample.
pub fn decode_explanation(sample: &EncodedSample, vocab: &Vocabulary) -> Vec<String> {
    sample
        .targets
        .iter()
        .zip(&sample.loss_mask)
        .take_while(|(t, m)| **m && **t != vocab.eos())
        .map(|(t, _)| vocab.word(*t).to_string())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, tokenize};

    fn fixture() -> (Vec<InteractionRecord>, Vocabulary) {
        let records = vec![InteractionRecord {
            user: "u1".to_string(),
            item: "i1".to_string(),
            rating: 4.0,
            explanation: tokenize("a b"),
            feature: "f".to_string(),
        }];
        let vocab = build_vocab(&records, 100).unwrap();
        (records, vocab)
    }

    #[test]
    fn layout_matches_position_arithmetic() {
        // |F|=1, explanation "a b", budget 15:
        // tokens [u, i, f, <bos>, a, b, <eos>, <pad>...], targets [a, b, <eos>]
        // at the mask-on slots.
        let (records, vocab) = fixture();
        let s = encode_sample(&records[0], &vocab, true, 15).unwrap();
        assert_eq!(s.seq_len(), 2 + 1 + 1 + 15);
        assert_eq!(s.features.len(), 1);
        assert_eq!(s.inputs[0], vocab.bos());
        assert_eq!(s.inputs[1], vocab.encode_word("a"));
        assert_eq!(s.inputs[2], vocab.encode_word("b"));
        assert_eq!(s.inputs[3], vocab.eos());
        assert!(s.inputs[4..].iter().all(|&t| t == vocab.pad()));
        let on: Vec<usize> = s
            .targets
            .iter()
            .zip(&s.loss_mask)
            .filter(|(_, m)| **m)
            .map(|(t, _)| *t)
            .collect();
        assert_eq!(
            on,
            vec![
                vocab.encode_word("a"),
                vocab.encode_word("b"),
                vocab.eos()
            ]
        );
        assert_eq!(s.bos_pos(), 3);
        assert_eq!(s.first_pad_pos(), 2 + 1 + 1 + 3); // u,i,f + bos,a,b,eos
    }

    #[test]
    fn without_features_offset_shrinks_to_two() {
        let (records, vocab) = fixture();
        let s = encode_sample(&records[0], &vocab, false, 15).unwrap();
        assert!(s.features.is_empty());
        assert_eq!(s.bos_pos(), 2);
        assert_eq!(s.seq_len(), 2 + 0 + 1 + 15);
    }

    #[test]
    fn long_explanation_truncates_to_budget() {
        let words: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
        let records = vec![InteractionRecord {
            user: "u".into(),
            item: "i".into(),
            rating: 3.0,
            explanation: words.clone(),
            feature: "w0".into(),
        }];
        let vocab = build_vocab(&records, 100).unwrap();
        let s = encode_sample(&records[0], &vocab, false, 15).unwrap();
        assert_eq!(s.n_words(), 15);
        // budget-filling explanation leaves no room for an <eos> input slot
        assert_eq!(s.inputs.len(), 16);
        assert_eq!(s.targets[15], vocab.eos());
        assert!(s.loss_mask[15]);
        assert_eq!(s.first_pad_pos(), s.seq_len());
    }

    #[test]
    fn unknown_user_is_an_error() {
        let (records, vocab) = fixture();
        let mut rec = records[0].clone();
        rec.user = "stranger".to_string();
        assert!(matches!(
            encode_sample(&rec, &vocab, true, 15),
            Err(CorpusError::UnknownUser(_))
        ));
    }

    #[test]
    fn pad_slots_never_carry_loss() {
        let (records, vocab) = fixture();
        let s = encode_sample(&records[0], &vocab, true, 15).unwrap();
        for (t, m) in s.targets.iter().zip(&s.loss_mask) {
            if *t == vocab.pad() {
                assert!(!*m);
            }
        }
    }

    #[test]
    fn decode_round_trips_truncated_explanation() {
        let words: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
        let records = vec![InteractionRecord {
            user: "u".into(),
            item: "i".into(),
            rating: 3.0,
            explanation: words.clone(),
            feature: "w0".into(),
        }];
        let vocab = build_vocab(&records, 100).unwrap();
        let s = encode_sample(&records[0], &vocab, false, 15).unwrap();
        assert_eq!(decode_explanation(&s, &vocab), words[..15].to_vec());
    }
}
