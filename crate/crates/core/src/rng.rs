//! Seed derivation.
//!
//! Every stochastic operation takes an explicit [`Seed`]. Child seeds are
//! derived by mixing a parent with a tag through SplitMix64, which is a
//! bijection on `u64`; for a fixed parent, distinct tags therefore always
//! yield distinct children. Streams are ChaCha8, a counter-based generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Generator type used everywhere in the crate.
pub type Rng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Named stream tags, so call sites never collide by accident.
pub mod stream {
    pub const TRAIN: u64 = 1;
    pub const TEST: u64 = 2;
    pub const NORMALIZATION: u64 = 3;
    pub const MODEL: u64 = 4;
    pub const EXPLAINER: u64 = 5;
    pub const METRIC: u64 = 6;
    pub const BACKGROUND: u64 = 7;
    pub const NOISE: u64 = 8;
    pub const TRIAL: u64 = 9;
    pub const FRESH: u64 = 10;
    pub const PERTURBATION: u64 = 11;
    pub const COALITION: u64 = 12;
    pub const SIMULATION: u64 = 13;
}

impl Seed {
    pub fn derive(self, tag: u64) -> Seed {
        Seed(splitmix64(self.0 ^ splitmix64(tag)))
    }

    /// Derives a child from a sequence of floats, keyed on their bit patterns.
    pub fn derive_floats(self, values: &[f64]) -> Seed {
        values
            .iter()
            .fold(self.derive(values.len() as u64), |s, v| s.derive(v.to_bits()))
    }

    pub fn rng(self) -> Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}
