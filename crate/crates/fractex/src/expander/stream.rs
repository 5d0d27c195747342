//! Per-block pseudo-random streams.
//!
//! Every block `(i, j)` of an expansion draws from its own ChaCha8 stream
//! keyed by `(master_seed, i, j)`, so blocks can be generated in any order and
//! on any number of workers with identical results.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Domain tag occupying the last 8 bytes of every block key.
const STREAM_TAG: [u8; 8] = *b"fractexB";

/// Deterministic random source for one block.
///
/// The 256-bit ChaCha key is the little-endian concatenation
/// `master_seed ‖ block_row ‖ block_col ‖ "fractexB"`. The mapping from
/// `(seed, i, j)` to keys is injective, so distinct blocks never share a
/// stream, and ChaCha makes streams under distinct keys independent for
/// practical purposes.
///
/// Only `next_u64` of the underlying generator is used, and the derived
/// draws ([`Self::unit_f64`], [`Self::below`]) are defined here, so output
/// does not depend on `rand`'s distribution implementations.
#[derive(Debug, Clone)]
pub struct BlockRandomStream {
    master_seed: u64,
    block_row: usize,
    block_col: usize,
    rng: ChaCha8Rng,
}

/// Stream for block `(i, j)` of an expansion seeded with `master_seed`.
pub fn derive_block_stream(master_seed: u64, i: usize, j: usize) -> BlockRandomStream {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&(i as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(j as u64).to_le_bytes());
    key[24..].copy_from_slice(&STREAM_TAG);
    BlockRandomStream {
        master_seed,
        block_row: i,
        block_col: j,
        rng: ChaCha8Rng::from_seed(key),
    }
}

impl BlockRandomStream {
    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn block(&self) -> (usize, usize) {
        (self.block_row, self.block_col)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// One Bernoulli draw: `true` with probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit_f64() < p
    }

    /// Uniform integer in `0..n` (Lemire's multiply-and-reject). `n > 0`.
    pub fn below(&mut self, n: usize) -> usize {
        let n = n as u64;
        debug_assert!(n > 0);
        let mut m = u128::from(self.next_u64()) * u128::from(n);
        if (m as u64) < n {
            let threshold = n.wrapping_neg() % n;
            while (m as u64) < threshold {
                m = u128::from(self.next_u64()) * u128::from(n);
            }
        }
        (m >> 64) as usize
    }

    /// Fisher–Yates shuffle of `0..n`; `perm[old] = new`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            perm.swap(i, j);
        }
        perm
    }
}
