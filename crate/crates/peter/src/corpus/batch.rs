//! Seeded, epoch-aware batch iteration.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Shuffle `n` sample indices with a generator derived from `(seed, epoch)`
/// and chunk them into batches. The final partial batch is emitted. Identical
/// `(seed, epoch)` pairs produce identical batch orders; different epochs use
/// independent generator streams.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}
