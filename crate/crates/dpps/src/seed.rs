//! Seed derivation for per-node RNG streams.
//!
//! Each node owns independent streams for noise, weight initialization and
//! data shuffling, all derived from `(master_seed, node_id, purpose)`. The
//! derivation is a splitmix64 finalizer chain, so distinct inputs map to
//! well-separated ChaCha seeds without any shared state.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a derived stream is used for. Keeps the noise, init and data
/// streams disjoint even for the same node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    NoiseLaplace,
    WeightInit,
    DataShuffle,
    DatasetTrain,
    DatasetTest,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::NoiseLaplace => 0x6e6f_6973,
            Purpose::WeightInit => 0x696e_6974,
            Purpose::DataShuffle => 0x7368_7566,
            Purpose::DatasetTrain => 0x7472_6169,
            Purpose::DatasetTest => 0x7465_7374,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a 64-bit seed from the master seed, a node id and a purpose tag.
pub fn derive(master_seed: u64, node_id: u64, purpose: Purpose) -> u64 {
    let mut h = splitmix64(master_seed);
    h = splitmix64(h ^ node_id);
    splitmix64(h ^ purpose.tag())
}

/// Derive a seed additionally keyed on an epoch (for per-epoch shuffles).
pub fn derive_epoch(master_seed: u64, node_id: u64, purpose: Purpose, epoch: u64) -> u64 {
    splitmix64(derive(master_seed, node_id, purpose) ^ splitmix64(epoch))
}

/// A seeded ChaCha stream for `(master_seed, node_id, purpose)`.
pub fn stream(master_seed: u64, node_id: u64, purpose: Purpose) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master_seed, node_id, purpose))
}
