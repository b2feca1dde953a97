//! Labeled random streams.
//!
//! Every source of randomness (data order, augmentation, member drop, dropout,
//! episode sampling, initialization) gets its own stream derived from the
//! master seed, a label and an index. Toggling one randomization therefore
//! leaves every other stream untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha8Rng;

pub fn derive_seed(master: u64, label: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}

pub fn stream(master: u64, label: &str, index: u64) -> Stream {
    ChaCha8Rng::from_seed(derive_seed(master, label, index))
}

/// Derive a child `u64` seed, for handing to APIs that take plain seeds.
pub fn child_seed(master: u64, label: &str, index: u64) -> u64 {
    let s = derive_seed(master, label, index);
    u64::from_le_bytes([s[0], s[1], s[2], s[3], s[4], s[5], s[6], s[7]])
}
