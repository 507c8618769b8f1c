use std::fmt;

use serde::{Deserialize, Serialize};

/// Upper bound on the dimension a [`FeatureSet`] can address.
pub const MAX_FEATURES: usize = 64;

/// A set of feature indices stored as a bitmask.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureSet(u64);

impl FeatureSet {
    pub const fn empty() -> Self {
        FeatureSet(0)
    }

    pub fn full(dim: usize) -> Self {
        assert!(dim <= MAX_FEATURES, "at most {MAX_FEATURES} features are supported");
        if dim == MAX_FEATURES {
            FeatureSet(u64::MAX)
        } else {
            FeatureSet((1u64 << dim) - 1)
        }
    }

    pub fn singleton(i: usize) -> Self {
        FeatureSet::empty().with(i)
    }

    pub fn from_bits(bits: u64) -> Self {
        FeatureSet(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn from_indices(indices: &[usize]) -> Self {
        indices.iter().fold(FeatureSet::empty(), |s, &i| s.with(i))
    }

    pub fn contains(self, i: usize) -> bool {
        i < MAX_FEATURES && self.0 & (1u64 << i) != 0
    }

    #[must_use]
    pub fn with(self, i: usize) -> Self {
        assert!(i < MAX_FEATURES);
        FeatureSet(self.0 | (1u64 << i))
    }

    #[must_use]
    pub fn without(self, i: usize) -> Self {
        assert!(i < MAX_FEATURES);
        FeatureSet(self.0 & !(1u64 << i))
    }

    #[must_use]
    pub fn complement(self, dim: usize) -> Self {
        FeatureSet(!self.0 & FeatureSet::full(dim).0)
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Indices in ascending order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let i = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            Some(i)
        })
    }

    pub fn to_vec(self) -> Vec<usize> {
        self.iter().collect()
    }

    /// All subsets of `{0..dim}` ordered by size, then lexicographically by
    /// their sorted index lists.
    pub fn all_subsets(dim: usize) -> Vec<FeatureSet> {
        assert!(dim < MAX_FEATURES);
        let mut subsets: Vec<FeatureSet> = (0..(1u64 << dim)).map(FeatureSet).collect();
        subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.to_vec().cmp(&b.to_vec())));
        subsets
    }
}

impl fmt::Debug for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}
