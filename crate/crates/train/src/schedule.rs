use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::seeds::derive_seed;

/// Minibatches of `n` examples for one epoch, from a permutation keyed by
/// the run seed, the stream name and the epoch.
pub fn minibatches(n: usize, batch: usize, seed: u64, stream: &str, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, epoch as u64));
    order.shuffle(&mut rng);
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

/// What an epoch callback asks the loop to do next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}
