//! Counter-keyed RNG substreams.
//!
//! Every random quantity is drawn from a ChaCha8 stream whose 256-bit key is
//! derived from `(seed, domain, indices...)` with SplitMix64 finalizers, so a
//! unit's draws never depend on which thread produced them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains keep simulation, counterfactual and study draws apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Panel = 0x5049_4d55,
    Counterfactual = 0x4346_4154,
    Study = 0x5354_5544,
    Restart = 0x5253_5452,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream keyed by `(seed, domain, path)`.
pub fn substream(seed: u64, domain: Domain, path: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix64(seed ^ splitmix64(domain as u64));
    for &p in path {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    let mut key = [0u8; 32];
    let mut s = h;
    for chunk in key.chunks_exact_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Seed for a nested job (a replication, a restart), for APIs that take `u64` seeds.
pub fn derive_seed(seed: u64, domain: Domain, path: &[u64]) -> u64 {
    use rand::RngCore;
    substream(seed, domain, path).next_u64()
}
