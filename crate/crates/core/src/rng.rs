//! Deterministic random streams.
//!
//! All randomness flows from one master seed; independent subsystems
//! (emission, state switching, evaluation repetitions) pull named streams so
//! that adding draws in one place never perturbs another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stable 64-bit FNV-1a. The std hasher is not guaranteed stable across
/// releases, and stream seeds must never change under a compiler upgrade.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Clone, Copy)]
pub struct SeedStreams {
    master: u64,
}

impl SeedStreams {
    pub fn new(master: u64) -> Self {
        SeedStreams { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// A named stream, e.g. `stream("emit")`, `stream("switch")`.
    pub fn stream(&self, name: &str) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(self.master ^ fnv1a(name.as_bytes()))
    }

    /// A name + counter stream for per-repetition or per-window isolation.
    pub fn indexed(&self, name: &str, index: u64) -> ChaCha12Rng {
        let tag = fnv1a(name.as_bytes()) ^ index.wrapping_mul(0x9e3779b97f4a7c15);
        ChaCha12Rng::seed_from_u64(self.master ^ tag)
    }
}
