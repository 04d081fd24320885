//! Seeded frame-pair sampling for Mode 2.
//!
//! The pair list is a pure function of `(seed, video_id, n_valid, num_pairs)`
//! and is reproducible in any language:
//!
//! 1. `h = fnv1a64(video_id as UTF-8 bytes)`
//! 2. `stream_seed = splitmix64(seed ^ h)` (one splitmix64 output step with
//!    state `seed ^ h`)
//! 3. draws come from a SplitMix64 stream whose initial state is
//!    `stream_seed`
//! 4. per pair: `i = next() % n_valid`, then `j = next() % n_valid` redrawn
//!    until `j != i`
//!
//! Indices refer to positions in the video's valid-frame list, not to frame
//! numbers.

use super::ScoreError;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Output of a SplitMix64 generator whose state is `x`, after one step.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(state: u64) -> Self {
        SplitMix64 { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        let out = splitmix64(self.state);
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        out
    }
}

/// Per-video stream seed.
pub fn video_stream_seed(seed: u64, video_id: &str) -> u64 {
    splitmix64(seed ^ fnv1a64(video_id.as_bytes()))
}

/// Draws `num_pairs` ordered index pairs `(i, j)` with `i != j` from
/// `0..n_valid`. Frames may repeat across pairs.
pub fn sample_pairs(
    n_valid: usize,
    num_pairs: usize,
    seed: u64,
    video_id: &str,
) -> Result<Vec<(usize, usize)>, ScoreError> {
    if n_valid < 2 {
        return Err(ScoreError::TooFewFrames {
            video_id: video_id.to_string(),
            valid: n_valid,
        });
    }
    let n = n_valid as u64;
    let mut rng = SplitMix64::new(video_stream_seed(seed, video_id));
    let pairs = (0..num_pairs)
        .map(|_| {
            let i = rng.next_u64() % n;
            let mut j = rng.next_u64() % n;
            while j == i {
                j = rng.next_u64() % n;
            }
            (i as usize, j as usize)
        })
        .collect();
    Ok(pairs)
}
