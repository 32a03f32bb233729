//! Scalar <-> categorical codec over a fixed support of evenly spaced
//! bin centers. Scalars are encoded as proximity-weighted mass on the
//! two bracketing bins; distributions decode to their expectation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarSupport {
    pub v_min: f64,
    pub v_max: f64,
    pub bins: usize,
}

impl ScalarSupport {
    pub fn new(v_min: f64, v_max: f64, bins: usize) -> Result<Self> {
        let support = ScalarSupport { v_min, v_max, bins };
        support.validate()?;
        Ok(support)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_min < self.v_max) {
            return Err(Error::Config(format!(
                "support v_min {} must be below v_max {}",
                self.v_min, self.v_max
            )));
        }
        if self.bins < 2 {
            return Err(Error::Config(format!("support bins {} < 2", self.bins)));
        }
        if !self.v_min.is_finite() || !self.v_max.is_finite() {
            return Err(Error::Config("support bounds must be finite".into()));
        }
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        (self.v_max - self.v_min) / (self.bins - 1) as f64
    }

    pub fn center(&self, bin: usize) -> f64 {
        self.v_min + self.delta() * bin as f64
    }

    /// Two-hot encoding of `x`, clamped into [v_min, v_max].
    pub fn encode_two_hot(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.bins];
        let x = x.clamp(self.v_min, self.v_max);
        let u = (x - self.v_min) / self.delta();
        let lo = u.floor() as usize;
        if lo >= self.bins - 1 {
            out[self.bins - 1] = 1.0;
        } else {
            let frac = u - lo as f64;
            out[lo] = 1.0 - frac;
            out[lo + 1] = frac;
        }
        out
    }

    /// Expectation of a distribution over the bin centers.
    pub fn decode_expectation(&self, distribution: &[f64]) -> f64 {
        debug_assert_eq!(distribution.len(), self.bins);
        let mut total = 0.0;
        for (bin, &p) in distribution.iter().enumerate() {
            total += p * self.center(bin);
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bin_center_is_one_hot() {
        let s = ScalarSupport::new(-1.0, 1.0, 21).unwrap();
        let enc = s.encode_two_hot(s.center(7));
        assert_eq!(enc[7], 1.0);
        assert_eq!(enc.iter().filter(|&&p| p != 0.0).count(), 1);
    }

    #[test]
    fn decode_encode_is_identity_on_the_support() {
        let s = ScalarSupport::new(-1.0, 1.0, 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let x = rng.random_range(-1.0..=1.0);
            let enc = s.encode_two_hot(x);
            assert!((s.decode_expectation(&enc) - x).abs() <= 1e-9, "x={x}");
            assert!((enc.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(enc.iter().all(|&p| p >= 0.0));
        }
        for x in [-1.0, 1.0, 0.0] {
            assert!((s.decode_expectation(&s.encode_two_hot(x)) - x).abs() <= 1e-9);
        }
    }

    #[test]
    fn out_of_range_values_clamp_to_the_edge_bins() {
        let s = ScalarSupport::new(-1.0, 1.0, 21).unwrap();
        let enc = s.encode_two_hot(6.0);
        assert_eq!(enc[20], 1.0);
        assert_eq!(s.decode_expectation(&enc), 1.0);
        let enc = s.encode_two_hot(-4.5);
        assert_eq!(enc[0], 1.0);
        assert_eq!(s.decode_expectation(&enc), -1.0);
    }

    #[test]
    fn asymmetric_support_round_trips() {
        let s = ScalarSupport::new(-200.0, 0.0, 51).unwrap();
        for x in [-200.0, -137.25, -0.5, 0.0] {
            assert!((s.decode_expectation(&s.encode_two_hot(x)) - x).abs() <= 1e-9);
        }
    }

    #[test]
    fn invalid_supports_are_rejected() {
        assert!(ScalarSupport::new(1.0, 1.0, 21).is_err());
        assert!(ScalarSupport::new(-1.0, 1.0, 1).is_err());
        assert!(ScalarSupport::new(f64::NAN, 1.0, 5).is_err());
    }
}
