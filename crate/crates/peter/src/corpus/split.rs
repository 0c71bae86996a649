//! 8:1:1 train/valid/test split with a coverage guarantee: the training set
//! holds at least one record for every user and every item.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, InteractionRecord};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    /// Reserve one record per user and per item into train before shuffling.
    pub reserve_coverage: bool,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        SplitSpec {
            seed,
            reserve_coverage: true,
        }
    }
}

/// Record indices per split, replayable as a manifest file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("split serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Partition records 8:1:1. Coverage records are reserved into train first
/// (the first record of each user, then of each uncovered item, in dataset
/// order); the remainder is shuffled with the seeded generator and dealt out
/// to fill train, then valid, then test.
pub fn split(records: &[InteractionRecord], spec: &SplitSpec) -> Result<Split, CorpusError> {
    let n = records.len();
    if n < 3 {
        return Err(CorpusError::DatasetTooSmall(format!(
            "need at least 3 records for a 8:1:1 split, have {n}"
        )));
    }
    let n_train = (n * 8) / 10;
    let n_valid = (n - n_train) / 2;

    let mut reserved: Vec<usize> = Vec::new();
    let mut reserved_set: HashSet<usize> = HashSet::new();
    if spec.reserve_coverage {
        let mut covered_users: HashSet<&str> = HashSet::new();
        let mut covered_items: HashSet<&str> = HashSet::new();
        for (i, rec) in records.iter().enumerate() {
            if covered_users.insert(&rec.user) {
                if reserved_set.insert(i) {
                    reserved.push(i);
                }
                covered_items.insert(&rec.item);
            }
        }
        for (i, rec) in records.iter().enumerate() {
            if !covered_items.contains(rec.item.as_str()) {
                covered_items.insert(&rec.item);
                if reserved_set.insert(i) {
                    reserved.push(i);
                }
            }
        }
    }
    if reserved.len() > n_train {
        return Err(CorpusError::DatasetTooSmall(format!(
            "coverage needs {} train records but the 80% share is only {}",
            reserved.len(),
            n_train
        )));
    }

    let mut rest: Vec<usize> = (0..n).filter(|i| !reserved_set.contains(i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rest.shuffle(&mut rng);

    let mut train = reserved;
    let fill = n_train - train.len();
    train.extend_from_slice(&rest[..fill]);
    let valid = rest[fill..fill + n_valid].to_vec();
    let test = rest[fill + n_valid..].to_vec();

    Ok(Split {
        seed: spec.seed,
        train,
        valid,
        test,
    })
}
