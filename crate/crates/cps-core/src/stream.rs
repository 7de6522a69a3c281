//! Seeded deterministic byte derivation.
//!
//! Cards draw their challenge bytes and the middleware draws its random
//! numbers from [`ByteStream`], a counter-indexed SHA-256 stream. Compared
//! to a stateful RNG this keeps the generator a plain value: the position
//! is part of the state, so snapshots compare, order and hash like any
//! other field, and restoring a snapshot rewinds the stream exactly.

use alloc::vec::Vec;
use sha2::{Digest, Sha256};

const STREAM_DOMAIN: &[u8] = b"cps.stream.v1";
const EXPAND_DOMAIN: &[u8] = b"cps.expand.v1";

/// Stream lane used by simulated cards.
pub const LANE_CARD: u8 = 0;
/// Stream lane used by the middleware for wildcard bindings.
pub const LANE_BINDER: u8 = 1;

/// A reproducible stream of 8-byte blocks, identified by seed and lane.
///
/// Two streams with the same seed and lane yield the same blocks in the
/// same order on every platform.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ByteStream {
    seed: u64,
    lane: u8,
    drawn: u64,
}

impl ByteStream {
    pub fn new(seed: u64, lane: u8) -> Self {
        ByteStream {
            seed,
            lane,
            drawn: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of blocks drawn so far; doubles as the stream position.
    pub fn position(&self) -> u64 {
        self.drawn
    }

    pub fn next_block(&mut self) -> [u8; 8] {
        let mut h = Sha256::new();
        h.update(STREAM_DOMAIN);
        h.update(self.seed.to_le_bytes());
        h.update([self.lane]);
        h.update(self.drawn.to_le_bytes());
        self.drawn += 1;
        let digest = h.finalize();
        let mut block = [0u8; 8];
        block.copy_from_slice(&digest[..8]);
        block
    }
}

/// Expands the given parts into `out_len` bytes, keyed by `domain`.
///
/// Parts are length-prefixed before hashing so distinct part lists never
/// collide by concatenation.
pub fn expand(domain: &[u8], parts: &[&[u8]], out_len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(out_len);
    let mut block_index: u32 = 0;
    while out.len() < out_len {
        let mut h = Sha256::new();
        h.update(EXPAND_DOMAIN);
        h.update((domain.len() as u32).to_le_bytes());
        h.update(domain);
        h.update(block_index.to_le_bytes());
        for part in parts {
            h.update((part.len() as u32).to_le_bytes());
            h.update(part);
        }
        let digest = h.finalize();
        let take = core::cmp::min(out_len - out.len(), digest.len());
        out.extend_from_slice(&digest[..take]);
        block_index += 1;
    }
    out
}
