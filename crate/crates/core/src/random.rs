//! Counter-based splittable randomness.
//!
//! A [`RandomKey`] is an immutable 256-bit ChaCha key. Draws come from the key's
//! stream 0; children are read from stream 1 at a position fixed by the child index,
//! so `(seed, split path)` always reproduces the same numbers regardless of how many
//! threads are involved or in which order chains run.

use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::params::{Layout, ParameterVector};

const DRAW_STREAM: u64 = 0;
const SPLIT_STREAM: u64 = 1;

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct RandomKey {
    key: [u8; 32],
}

impl std::fmt::Debug for RandomKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RandomKey(")?;
        for b in &self.key[..8] {
            write!(f, "{b:02x}")?;
        }
        write!(f, "..)")
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomKey {
    pub fn new(seed: u64) -> Self {
        let mut state = seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Self { key }
    }

    /// Child `index` of this key; `split(k)[i] == fold_in(i)`.
    pub fn fold_in(&self, index: u64) -> Self {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(SPLIT_STREAM);
        // 32 bytes per child = 8 words of 32 bits
        rng.set_word_pos(index as u128 * 8);
        let mut key = [0u8; 32];
        rng.fill_bytes(&mut key);
        Self { key }
    }

    pub fn split(&self, count: usize) -> Result<Vec<Self>> {
        if count == 0 {
            return Err(Error::Argument("split count must be at least 1".into()));
        }
        Ok((0..count as u64).map(|i| self.fold_in(i)).collect())
    }

    /// Fresh generator positioned at the start of this key's draw stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(DRAW_STREAM);
        rng
    }

    pub fn uniform(&self) -> f64 {
        self.rng().random::<f64>()
    }

    /// `len` i.i.d. draws from `Normal(0, scale^2)`.
    pub fn normal_vec(&self, len: usize, scale: f64) -> Result<Vec<f64>> {
        if !(scale >= 0.0) || !scale.is_finite() {
            return Err(Error::Argument(format!(
                "noise scale must be finite and non-negative, got {scale}"
            )));
        }
        if scale == 0.0 {
            return Ok(vec![0.0; len]);
        }
        let mut rng = self.rng();
        Ok((0..len).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
    }

    pub fn gaussian_like(&self, layout: &Arc<Layout>, scale: f64) -> Result<ParameterVector> {
        let values = self.normal_vec(layout.size(), scale)?;
        ParameterVector::structure(Arc::clone(layout), values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn zero_scale_gives_exact_zeros() {
        let layout = Layout::new([("w", vec![5])]).unwrap();
        let pv = RandomKey::new(1).gaussian_like(&layout, 0.0).unwrap();
        assert!(pv.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negative_scale_is_rejected() {
        assert!(RandomKey::new(1).normal_vec(3, -1.0).is_err());
    }

    #[test]
    fn same_key_same_draws() {
        let layout = Layout::new([("w", vec![7])]).unwrap();
        let key = RandomKey::new(42);
        let a = key.gaussian_like(&layout, 1.0).unwrap();
        let b = key.gaussian_like(&layout, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empirical_variance_of_unit_noise() {
        let draws = RandomKey::new(3).normal_vec(1_000_000, 1.0).unwrap();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 1.0).abs() < 0.01, "variance {var}");
    }

    #[test]
    fn split_is_deterministic_and_distinct() {
        let key = RandomKey::new(9);
        let a = key.split(2).unwrap();
        let b = key.split(2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        assert_eq!(a[1], key.fold_in(1));
        assert!(key.split(0).is_err());
    }

    #[test]
    fn children_of_distinct_parents_do_not_collide() {
        let mut seen = HashSet::new();
        for parent in 0..50_000u64 {
            for child in RandomKey::new(parent).split(2).unwrap() {
                assert!(seen.insert(child), "collision under parent {parent}");
            }
        }
        assert_eq!(seen.len(), 100_000);
    }

    #[test]
    fn sibling_draws_pass_independence_chi_square() {
        // 4x4 contingency table of quantile bins for paired draws from sibling keys.
        let root = RandomKey::new(2024);
        let trials = 20_000;
        let mut table = [[0usize; 4]; 4];
        let bin = |u: f64| ((u * 4.0) as usize).min(3);
        for t in 0..trials {
            let pair = root.fold_in(t).split(2).unwrap();
            table[bin(pair[0].uniform())][bin(pair[1].uniform())] += 1;
        }
        let expected = trials as f64 / 16.0;
        let chi2: f64 = table
            .iter()
            .flatten()
            .map(|&o| (o as f64 - expected).powi(2) / expected)
            .sum();
        // 9 degrees of freedom, p = 0.01 critical value
        assert!(chi2 < 21.666, "chi-square {chi2}");
    }
}
