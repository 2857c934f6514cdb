//! Seeding and small shared helpers.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Seed for any deterministic generator in the pipeline. Same seed, same
/// output, bit for bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Derive an independent child seed from a purpose tag and an index.
    /// Used to fan one master seed out to workspaces, tasks and init/shuffle
    /// streams without overlap.
    pub fn derive(self, tag: &str, index: u64) -> RngSeed {
        let mut x = self.0 ^ fnv1a(tag.as_bytes());
        x = splitmix64(x);
        x = splitmix64(x ^ index);
        RngSeed(x)
    }
}

impl From<u64> for RngSeed {
    fn from(v: u64) -> Self {
        RngSeed(v)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Initialize the global rayon pool, honoring the STP_THREADS cap.
/// Safe to call more than once; later calls are no-ops.
pub fn init_thread_pool() {
    if let Ok(v) = std::env::var("STP_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_deterministic_and_spreads() {
        let s = RngSeed(42);
        assert_eq!(s.derive("workspace", 3), s.derive("workspace", 3));
        assert_ne!(s.derive("workspace", 3), s.derive("workspace", 4));
        assert_ne!(s.derive("workspace", 3), s.derive("task", 3));
        assert_ne!(s.derive("workspace", 0).0, s.0);
    }
}
