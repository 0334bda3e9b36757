//! Reproducible random streams keyed by `(master seed, domain, index)`.
//!
//! Each stream is a ChaCha8 keystream: the key comes from the master seed and
//! domain, the stream id is the replicate index, so any replicate can be
//! regenerated without drawing the ones before it.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::stats::normal_quantile;

/// Stream domains keep data generation and bootstrap multipliers apart.
pub mod domain {
    pub const DATA: u64 = 0x6461_7461;
    pub const BOOTSTRAP: u64 = 0x626f_6f74;
    pub const MULTIPLIERS: u64 = 0x6d75_6c74;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives a sub-seed, e.g. for the data of one Monte Carlo replicate.
pub fn derive_seed(master: u64, domain: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(domain)) ^ index)
}

#[derive(Debug, Clone)]
pub struct Stream(ChaCha8Rng);

impl Stream {
    pub fn new(master: u64, domain: u64, index: u64) -> Self {
        let mut key = [0u8; 32];
        let mut s = splitmix64(master ^ splitmix64(domain));
        for chunk in key.chunks_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        Self(rng)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform on the open interval `(0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal by inversion.
    pub fn normal(&mut self) -> f64 {
        normal_quantile(self.uniform())
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }
}
