//! Shared test helpers: deliberately naive metric oracles (list scans and
//! explicit loops, no hash maps) and small random-corpus generators. These
//! stay independent of the library's implementations.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Toks = Vec<String>;

fn grams(words: &[String], n: usize) -> Vec<Vec<String>> {
    if words.len() < n {
        return Vec::new();
    }
    words.windows(n).map(|w| w.to_vec()).collect()
}

fn count_of(gram: &[String], grams: &[Vec<String>]) -> usize {
    grams.iter().filter(|g| g.as_slice() == gram).count()
}

/// Clipped match count between candidate and reference n-grams, by scanning
/// distinct candidate grams one at a time.
fn clipped_matches(cand: &[Vec<String>], reference: &[Vec<String>]) -> usize {
    let mut seen: Vec<&Vec<String>> = Vec::new();
    let mut total = 0;
    for gram in cand {
        if seen.iter().any(|g| *g == gram) {
            continue;
        }
        seen.push(gram);
        let c = count_of(gram, cand);
        let r = count_of(gram, reference);
        total += c.min(r);
    }
    total
}

/// Sentence BLEU-n by the textbook formula: clipped precisions per order,
/// add-one smoothing on zero counts for orders above 1, geometric mean,
/// brevity penalty min(1, e^(1-r/c)).
pub fn oracle_sentence_bleu(cand: &[String], reference: &[String], n: usize) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let mut product = 1.0f64;
    for order in 1..=n {
        let cg = grams(cand, order);
        let rg = grams(reference, order);
        let total = cg.len();
        let matched = clipped_matches(&cg, &rg);
        let p = if matched == 0 && order > 1 {
            1.0 / (total as f64 + 1.0)
        } else if total == 0 {
            0.0
        } else {
            matched as f64 / total as f64
        };
        if p == 0.0 {
            return 0.0;
        }
        product *= p;
    }
    let gm = product.powf(1.0 / n as f64);
    let bp = if cand.len() > reference.len() {
        1.0
    } else {
        (1.0 - reference.len() as f64 / cand.len() as f64).exp()
    };
    bp * gm
}

pub fn oracle_bleu(cands: &[Toks], refs: &[Toks], n: usize) -> f64 {
    let sum: f64 = cands
        .iter()
        .zip(refs)
        .map(|(c, r)| oracle_sentence_bleu(c, r, n))
        .sum();
    sum / cands.len() as f64 * 100.0
}

/// ROUGE-n precision/recall/F1 means over pairs whose reference has at least
/// one n-gram, as percentages.
pub fn oracle_rouge(cands: &[Toks], refs: &[Toks], n: usize) -> (f64, f64, f64, usize) {
    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    let mut f_sum = 0.0;
    let mut used = 0;
    let mut skipped = 0;
    for (cand, reference) in cands.iter().zip(refs) {
        let rg = grams(reference, n);
        if rg.is_empty() {
            skipped += 1;
            continue;
        }
        let cg = grams(cand, n);
        let matched = clipped_matches(&cg, &rg);
        let p = if cg.is_empty() {
            0.0
        } else {
            matched as f64 / cg.len() as f64
        };
        let r = matched as f64 / rg.len() as f64;
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        p_sum += p;
        r_sum += r;
        f_sum += f;
        used += 1;
    }
    let d = if used == 0 { 1.0 } else { used as f64 };
    (
        p_sum / d * 100.0,
        r_sum / d * 100.0,
        f_sum / d * 100.0,
        skipped,
    )
}

pub fn oracle_usr(cands: &[Toks]) -> f64 {
    let mut distinct = 0;
    for (i, c) in cands.iter().enumerate() {
        if !cands[..i].contains(c) {
            distinct += 1;
        }
    }
    distinct as f64 / cands.len() as f64
}

fn occurs_contiguously(hay: &[String], needle: &[String]) -> bool {
    if needle.is_empty() || hay.len() < needle.len() {
        return false;
    }
    for start in 0..=(hay.len() - needle.len()) {
        if &hay[start..start + needle.len()] == needle.as_slice() {
            return true;
        }
    }
    false
}

pub fn oracle_fmr(cands: &[Toks], features: &[Toks]) -> f64 {
    let mut hits = 0;
    for (c, f) in cands.iter().zip(features) {
        if occurs_contiguously(c, f) {
            hits += 1;
        }
    }
    hits as f64 / cands.len() as f64
}

pub fn oracle_fcr(cands: &[Toks], universe: &[Toks]) -> f64 {
    let mut covered = 0;
    for feat in universe {
        let mut found = false;
        for c in cands {
            if occurs_contiguously(c, feat) {
                found = true;
            }
        }
        if found {
            covered += 1;
        }
    }
    covered as f64 / universe.len() as f64
}

/// Exact all-pairs DIV by nested loops.
pub fn oracle_div(cands: &[Toks], universe: &[Toks]) -> f64 {
    let sets: Vec<Vec<&Toks>> = cands
        .iter()
        .map(|c| universe.iter().filter(|f| occurs_contiguously(c, f)).collect())
        .collect();
    let n = cands.len();
    let mut sum = 0.0;
    let mut pairs = 0;
    for a in 0..n {
        for b in (a + 1)..n {
            let inter = sets[a].iter().filter(|f| sets[b].contains(f)).count();
            sum += inter as f64;
            pairs += 1;
        }
    }
    sum / pairs as f64
}

pub fn oracle_rmse_mae(truths: &[f64], preds: &[f64]) -> (f64, f64) {
    let n = truths.len() as f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    for i in 0..truths.len() {
        let e = truths[i] - preds[i];
        sq += e * e;
        abs += e.abs();
    }
    ((sq / n).sqrt(), abs / n)
}

/// A random tiny evaluation corpus over a small alphabet so n-gram overlap
/// actually happens: up to 6 pairs with sentences of 1..=8 words.
pub struct TinyCorpus {
    pub candidates: Vec<Toks>,
    pub references: Vec<Toks>,
    pub features: Vec<Toks>,
    pub universe: Vec<Toks>,
    pub truths: Vec<f64>,
    pub preds: Vec<f64>,
}

pub fn random_tiny_corpus(seed: u64) -> TinyCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alphabet = ["a", "b", "c", "d", "e", "f"];
    let mut sentence = |rng: &mut ChaCha8Rng, min_len: usize| -> Toks {
        let len = rng.gen_range(min_len..=8);
        (0..len)
            .map(|_| alphabet[rng.gen_range(0..alphabet.len())].to_string())
            .collect()
    };
    let n = rng.gen_range(2..=6);
    let mut candidates = Vec::new();
    let mut references = Vec::new();
    let mut features = Vec::new();
    let mut truths = Vec::new();
    let mut preds = Vec::new();
    for _ in 0..n {
        // candidates may be empty; references keep at least one word
        let c_len_min = usize::from(rng.gen_range(0..5) == 0);
        candidates.push(if rng.gen_range(0..6) == 0 {
            Vec::new()
        } else {
            sentence(&mut rng, c_len_min.max(1))
        });
        references.push(sentence(&mut rng, 1));
        let f_len = rng.gen_range(1..=2);
        features.push(
            (0..f_len)
                .map(|_| alphabet[rng.gen_range(0..alphabet.len())].to_string())
                .collect(),
        );
        truths.push(rng.gen_range(1.0..5.0));
        preds.push(rng.gen_range(1.0..5.0));
    }
    let mut universe: Vec<Toks> = Vec::new();
    for f in &features {
        if !universe.contains(f) {
            universe.push(f.clone());
        }
    }
    for w in alphabet.iter().take(3) {
        let f = vec![w.to_string()];
        if !universe.contains(&f) {
            universe.push(f);
        }
    }
    TinyCorpus {
        candidates,
        references,
        features,
        universe,
        truths,
        preds,
    }
}

/// Central finite-difference gradient of a scalar function.
pub fn finite_difference<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        grad.push((plus - minus) / (2.0 * h));
    }
    grad
}

/// Relative error with a floor so near-zero gradients compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}
