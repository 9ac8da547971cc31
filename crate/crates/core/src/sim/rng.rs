//! Counter-based random substreams.
//!
//! Every random draw in an experiment comes from a ChaCha8 generator keyed by
//! a hash of `(seed, tag, indices...)`, so results depend only on the seed and
//! the position of the draw, never on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TAG_DATASET: u64 = 0x6461_7461;
pub const TAG_REPLICATE: u64 = 0x7265_706c;
pub const TAG_BOOTSTRAP: u64 = 0x626f_6f74;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for the position `(seed, path...)`.
pub fn substream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut state = seed;
    let mut h = splitmix64(&mut state);
    for &p in path {
        state ^= p.wrapping_mul(0xd6e8_feb8_6659_fd93) ^ h;
        h = splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
