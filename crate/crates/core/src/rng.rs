//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream addressed by
//! `(master_seed, domain, index)`. Streams for different indices are
//! independent, so frames, protocol runs and splitter decisions can be
//! regenerated individually, in any order, on any number of workers.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Purpose of a stream; separates draws that share an index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Frame = 1,
    SplitStokes = 2,
    SplitAntiStokes = 3,
    ProtocolWrite = 4,
    ProtocolReadout = 5,
    Synthetic = 6,
}

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub type Stream = ChaCha12Rng;

/// Random stream number `index` of `domain` under `master_seed`.
pub fn stream(master_seed: u64, domain: Domain, index: u64) -> Stream {
    let mut key = [0u8; 32];
    let words = [
        mix(master_seed),
        mix(master_seed ^ mix(domain as u64)),
        mix(domain as u64 ^ 0x9e37_79b9_7f4a_7c15),
        master_seed,
    ];
    for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    let mut rng = ChaCha12Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
