use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_range, Result};

/// Per-position visibility flags; `true` hides the action token from the encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskVector {
    pub flags: Vec<bool>,
}

impl MaskVector {
    pub fn empty(len: usize) -> Self {
        Self {
            flags: vec![false; len],
        }
    }

    pub fn full(len: usize) -> Self {
        Self {
            flags: vec![true; len],
        }
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }

    pub fn masked(&self) -> impl Iterator<Item = usize> + '_ {
        self.flags.iter().enumerate().filter(|(_, f)| **f).map(|(i, _)| i)
    }

    pub fn visible(&self) -> impl Iterator<Item = usize> + '_ {
        self.flags.iter().enumerate().filter(|(_, f)| !**f).map(|(i, _)| i)
    }
}

/// Training mask ratio for level `k`: `m * (1 - k / T)`.
pub fn adaptive_mask_ratio(k: usize, horizon: usize, m: f64) -> Result<f64> {
    check_range("horizon", horizon as f64, 1.0, f64::INFINITY)?;
    check_range("k", k as f64, 0.0, horizon as f64)?;
    check_range("m", m, 0.0, 1.0)?;
    Ok(m * (1.0 - k as f64 / horizon as f64))
}

/// Draws from Normal(mean, std) restricted to [0, 1] by rejection.
pub fn truncated_normal(mean: f64, std: f64, rng: &mut impl Rng) -> f64 {
    let normal = Normal::new(mean, std).expect("std is positive");
    loop {
        let v = normal.sample(rng);
        if (0.0..=1.0).contains(&v) {
            return v;
        }
    }
}

/// Samples a mask whose size follows a truncated normal around `ratio`.
///
/// The effective ratio is drawn from Normal(ratio, std) truncated to [0, 1],
/// rounded to a count, and that many positions are hidden uniformly at random.
/// The endpoints are exact: 0 never masks and 1 always masks everything.
pub fn sample_mask(ratio: f64, horizon: usize, std: f64, rng: &mut impl Rng) -> Result<MaskVector> {
    check_range("mask ratio", ratio, 0.0, 1.0)?;
    if ratio == 0.0 {
        return Ok(MaskVector::empty(horizon));
    }
    if ratio == 1.0 {
        return Ok(MaskVector::full(horizon));
    }
    let effective = truncated_normal(ratio, std, rng);
    let count = ((effective * horizon as f64).round() as usize).min(horizon);
    Ok(mask_with_count(horizon, count, rng))
}

/// Hides exactly `count` uniformly chosen positions.
pub fn mask_with_count(horizon: usize, count: usize, rng: &mut impl Rng) -> MaskVector {
    let mut mask = MaskVector::empty(horizon);
    for i in sample(rng, horizon, count.min(horizon)) {
        mask.flags[i] = true;
    }
    mask
}

/// Shrinks `mask` to `count` hidden positions, revealing a uniformly random
/// subset of the currently hidden ones.
pub fn reveal_to_count(mask: &MaskVector, count: usize, rng: &mut impl Rng) -> MaskVector {
    let hidden: Vec<usize> = mask.masked().collect();
    if count >= hidden.len() {
        return mask.clone();
    }
    let mut out = MaskVector::empty(mask.len());
    for i in sample(rng, hidden.len(), count) {
        out.flags[hidden[i]] = true;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adaptive_ratio_values() {
        assert_eq!(adaptive_mask_ratio(0, 16, 0.7).unwrap(), 0.7);
        assert_eq!(adaptive_mask_ratio(16, 16, 0.7).unwrap(), 0.0);
        assert!((adaptive_mask_ratio(8, 16, 0.7).unwrap() - 0.35).abs() < 1e-15);
        assert!(adaptive_mask_ratio(17, 16, 0.7).is_err());
        assert!(adaptive_mask_ratio(0, 16, 1.5).is_err());
        assert!(adaptive_mask_ratio(0, 0, 0.5).is_err());
    }

    #[test]
    fn endpoint_ratios_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            assert_eq!(sample_mask(0.0, 16, 0.1, &mut rng).unwrap().count(), 0);
            assert_eq!(sample_mask(1.0, 16, 0.1, &mut rng).unwrap().count(), 16);
        }
        assert!(sample_mask(1.1, 16, 0.1, &mut rng).is_err());
    }

    #[test]
    fn count_tracks_drawn_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            // the ratio is the first draw sample_mask makes
            let r = truncated_normal(0.4, 0.1, &mut rng.clone());
            let m = sample_mask(0.4, 16, 0.1, &mut rng).unwrap();
            assert!((m.count() as f64 / 16.0 - r).abs() <= 0.5 / 16.0 + 1e-12);
        }
    }

    #[test]
    fn reveal_is_nested() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let full = MaskVector::full(16);
        let m1 = reveal_to_count(&full, 11, &mut rng);
        let m2 = reveal_to_count(&m1, 6, &mut rng);
        assert_eq!(m1.count(), 11);
        assert_eq!(m2.count(), 6);
        for i in m2.masked() {
            assert!(m1.flags[i]);
        }
        assert_eq!(reveal_to_count(&m2, 0, &mut rng).count(), 0);
    }
}
