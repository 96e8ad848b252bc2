//! Counter-based random streams.
//!
//! Every random quantity used by an experiment comes from a ChaCha8 stream whose
//! key is derived from `(master_seed, purpose)` and whose 64-bit stream id is the
//! work-item index. A stream is therefore a pure function of its coordinates and
//! does not depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent families of streams drawn from one master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    /// fBm paths driving schemes and reference solutions.
    FbmPath = 1,
    /// Fresh fBm draws for the limit-law reference sample.
    LimitReference = 2,
    /// Independent Gaussian factors of the limit law.
    LimitNoise = 3,
    /// Paths used for the `σ_H` calibration.
    Calibration = 4,
    /// Paths used for variation statistics.
    Variation = 5,
    /// Anything ad hoc (tests, CLI one-offs).
    Auxiliary = 6,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_key(master_seed: u64, purpose: Purpose) -> [u8; 32] {
    let mut state = master_seed ^ (purpose as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

/// The stream for work item `index` of the given purpose.
pub fn stream(master_seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(derive_key(master_seed, purpose));
    rng.set_stream(index);
    rng
}

/// Reproducibility token attached to sampled paths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedTag {
    pub master_seed: u64,
    pub purpose: Purpose,
    pub index: u64,
}

impl SeedTag {
    pub fn new(master_seed: u64, purpose: Purpose, index: u64) -> Self {
        Self {
            master_seed,
            purpose,
            index,
        }
    }

    pub fn stream(&self) -> ChaCha8Rng {
        stream(self.master_seed, self.purpose, self.index)
    }
}
