//! Counter-based, splittable random streams.
//!
//! A [`StreamKey`] names a node in a derivation tree (root seed → replication →
//! row, or root seed → candidate → bootstrap replicate). Every node owns an
//! independent stream whose `i`-th output is a pure function of `(key, i)`, so
//! results never depend on how work is scheduled across threads.
//!
//! Outputs use the SplitMix64 finaliser over a Weyl sequence offset by the key.

use rand_core::RngCore;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const ROOT_TAG: u64 = 0x6C8E_9CF5_7093_2BD5;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn root(seed: u64) -> Self {
        StreamKey(mix64(seed ^ ROOT_TAG))
    }

    /// Key of the `index`-th child. Children of distinct parents, or distinct
    /// indices of one parent, are decorrelated by two rounds of mixing.
    pub fn child(self, index: u64) -> Self {
        StreamKey(mix64(self.0 ^ mix64(index.wrapping_add(GOLDEN_GAMMA))))
    }

    /// Convenience for a two-level path.
    pub fn path(self, indices: &[u64]) -> Self {
        indices.iter().fold(self, |k, &i| k.child(i))
    }

    pub fn rng(self) -> CounterRng {
        CounterRng {
            key: self.0,
            counter: 0,
        }
    }

    pub fn raw(self) -> u64 {
        self.0
    }
}

/// Stream generator: output `i` is `mix64(key + (i + 1) * gamma)`.
#[derive(Clone, Debug)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    /// Position the stream at an absolute counter value.
    pub fn seek(&mut self, counter: u64) {
        self.counter = counter;
    }

    pub fn position(&self) -> u64 {
        self.counter
    }

    /// Uniform in the open interval (0, 1) with 53 bits of resolution.
    pub fn open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for CounterRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
