//! Synthetic explainable-recommendation corpus with a recoverable
//! personalization signal: each user prefers a feature subset, each item has
//! a characteristic feature subset, explanations talk about a feature the
//! pair shares, and ratings track the overlap between the two subsets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{tokenize, InteractionRecord};

const ASPECTS: [&str; 24] = [
    "pool", "breakfast", "staff", "room", "view", "location", "price", "bed", "bathroom", "wifi",
    "parking", "service", "menu", "music", "decor", "lobby", "gym", "bar", "terrace", "garden",
    "spa", "shuttle", "balcony", "kitchen",
];

const POSITIVE: [&str; 8] = [
    "great",
    "lovely",
    "spotless",
    "excellent",
    "wonderful",
    "comfortable",
    "superb",
    "perfect",
];

const NEGATIVE: [&str; 6] = ["noisy", "dated", "cramped", "disappointing", "overpriced", "dull"];

const NEUTRAL: [&str; 4] = ["decent", "okay", "average", "fine"];

fn feature_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| {
            if i < ASPECTS.len() {
                ASPECTS[i].to_string()
            } else {
                format!("aspect{i}")
            }
        })
        .collect()
}

fn subset(rng: &mut ChaCha8Rng, pool: &[String]) -> Vec<String> {
    let k = rng.gen_range(4..=7.min(pool.len()));
    let mut picks = pool.to_vec();
    picks.shuffle(rng);
    picks.truncate(k);
    picks
}

/// Generate `n_users * records_per_user` records. Deterministic given the
/// seed. Every explanation contains its record's feature; ratings are
/// integers in 1..=5 correlated with the user–item feature overlap. The
/// first `n_items` records cycle through all items so the split's coverage
/// constraint is satisfiable.
pub fn synth_generate(
    n_users: usize,
    n_items: usize,
    n_features: usize,
    records_per_user: usize,
    seed: u64,
) -> Vec<InteractionRecord> {
    generate_with_profiles(n_users, n_items, n_features, records_per_user, seed).0
}

fn generate_with_profiles(
    n_users: usize,
    n_items: usize,
    n_features: usize,
    records_per_user: usize,
    seed: u64,
) -> (Vec<InteractionRecord>, Vec<Vec<String>>, Vec<Vec<String>>) {
    assert!(n_users >= 2 && n_items >= 2 && n_features >= 2 && records_per_user >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = feature_names(n_features);

    let user_prefs: Vec<Vec<String>> = (0..n_users).map(|_| subset(&mut rng, &features)).collect();
    let item_traits: Vec<Vec<String>> = (0..n_items).map(|_| subset(&mut rng, &features)).collect();
    // Per-item quality offset; recovering it requires the item identity, so
    // rating models that only see the user have an irreducible handicap.
    let item_bias: Vec<f64> = (0..n_items).map(|_| rng.gen_range(-1.25..1.25)).collect();

    let mut records = Vec::with_capacity(n_users * records_per_user);
    for u in 0..n_users {
        // Items without replacement (reshuffled per pass), so user-item
        // pairs stay unique whenever records_per_user <= n_items and the
        // model must generalize to unseen pairs at test time.
        let mut item_order: Vec<usize> = (0..n_items).collect();
        item_order.shuffle(&mut rng);
        for r in 0..records_per_user {
            if r > 0 && r % n_items == 0 {
                item_order.shuffle(&mut rng);
            }
            let item = item_order[r % n_items];

            let prefs = &user_prefs[u];
            let traits = &item_traits[item];
            let shared = traits.iter().filter(|f| prefs.contains(f)).count();
            // The user talks about their highest-priority preference the
            // item actually has. Predicting it requires combining both
            // sides; neither the user's favorite nor the item's lead trait
            // alone recovers it.
            let feature = prefs
                .iter()
                .find(|p| traits.contains(p))
                .unwrap_or(&traits[0])
                .clone();

            let overlap = shared as f64 / prefs.len().min(traits.len()) as f64;
            let raw = 1.0 + 3.5 * overlap + item_bias[item] + rng.gen_range(-0.4..0.4);
            let rating = raw.round().clamp(1.0, 5.0);

            // Second-priority shared aspect when there is one, else another
            // item trait; also a function of the pair.
            let secondary = prefs
                .iter()
                .filter(|p| traits.contains(p))
                .nth(1)
                .or_else(|| traits.iter().find(|f| **f != feature))
                .unwrap_or(&traits[0])
                .clone();
            let care_rank = prefs.iter().position(|p| *p == feature).unwrap_or(prefs.len());
            let explanation =
                render_explanation(&mut rng, rating, &feature, &secondary, care_rank);

            records.push(InteractionRecord {
                user: format!("user{u:03}"),
                item: format!("item{item:03}"),
                rating,
                explanation: tokenize(&explanation),
                feature,
            });
        }
    }
    (records, user_prefs, item_traits)
}

const LEAD_INS: [&str; 5] = ["the", "overall the", "honestly the", "clearly the", "frankly the"];

const FILLERS: [&str; 6] = [
    "during our stay",
    "for what it is",
    "to be fair",
    "all things considered",
    "on this visit",
    "as far as we could tell",
];

const TAILS: [&str; 5] = [
    "in the end",
    "without a doubt",
    "for sure",
    "i have to say",
    "no question about it",
];

fn pick<'a>(pool: &[&'a str], key: &str) -> &'a str {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in key.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    pool[(h % pool.len() as u64) as usize]
}

/// Review-like sentence: generic lead-in and filler drawn independently of
/// the pair, the feature mid-sentence. Only the aspect words carry
/// personalization signal; the rest is language-model noise.
fn render_explanation(
    rng: &mut ChaCha8Rng,
    rating: f64,
    feature: &str,
    secondary: &str,
    care_rank: usize,
) -> String {
    let adj_pool: &[&str] = if rating >= 4.0 {
        &POSITIVE
    } else if rating <= 2.0 {
        &NEGATIVE
    } else {
        &NEUTRAL
    };
    // The wording tracks how highly the user ranks the aspect, so the
    // adjective is a function of the pair too; generated diversity then
    // reflects personalization rather than sampling luck.
    let adj = adj_pool[care_rank % adj_pool.len()];
    let adj2 = pick(adj_pool, secondary);
    let lead = LEAD_INS[rng.gen_range(0..LEAD_INS.len())];
    let filler = FILLERS[rng.gen_range(0..FILLERS.len())];
    let tail = TAILS[rng.gen_range(0..TAILS.len())];
    match rng.gen_range(0..6) {
        0 | 1 => format!("{lead} {feature} was {adj} {filler}"),
        2 | 3 => format!("{lead} {feature} was {adj} and the {secondary} was {adj2}"),
        4 => format!("{filler} the {feature} seemed {adj} {tail}"),
        _ => format!("{lead} {feature} was really {adj} {tail}"),
    }
}
