//! Brightness-shift augmentation: one frame of a training pair gets a random
//! additive intensity offset `gamma` drawn uniformly from `[-delta, delta]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::tensor::RgbFrame;

pub const DEFAULT_DELTA: f64 = 0.3;
/// Iterations without shifting before augmentation starts, at full scale.
pub const DEFAULT_WARMUP_ITERS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftConfig {
    pub delta: f64,
    pub warmup_iters: usize,
    pub seed: u64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            warmup_iters: DEFAULT_WARMUP_ITERS,
            seed: 0,
        }
    }
}

impl ShiftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(invalid(format!("shift range must lie in [0, 1], got {}", self.delta)));
        }
        Ok(())
    }

    pub fn active_at(&self, iter: usize) -> bool {
        iter >= self.warmup_iters
    }
}

/// Draws `gamma` uniformly from `[-delta, delta]`.
pub fn sample_shift<R: Rng + ?Sized>(rng: &mut R, delta: f64) -> Result<f64> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(invalid(format!("shift range must be non-negative, got {delta}")));
    }
    if delta == 0.0 {
        return Ok(0.0);
    }
    Ok(rng.gen_range(-delta..=delta))
}

/// Seeded generator owning the shift state of one training run.
#[derive(Debug, Clone)]
pub struct ShiftSampler {
    config: ShiftConfig,
    rng: ChaCha8Rng,
}

impl ShiftSampler {
    pub fn new(config: ShiftConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        })
    }

    pub fn config(&self) -> &ShiftConfig {
        &self.config
    }

    pub fn sample(&mut self) -> f64 {
        sample_shift(&mut self.rng, self.config.delta).expect("validated on construction")
    }
}

/// `clamp(v + gamma, 0, 1)` on every channel.
pub fn apply_shift(frame: &RgbFrame, gamma: f64) -> RgbFrame {
    frame.map_clamped(|v| v + gamma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_range_gives_zero() {
        let mut s = ShiftSampler::new(ShiftConfig {
            delta: 0.0,
            ..ShiftConfig::default()
        })
        .unwrap();
        assert!((0..100).all(|_| s.sample() == 0.0));
    }

    #[test]
    fn samples_stay_in_range_and_center() {
        let mut s = ShiftSampler::new(ShiftConfig {
            seed: 7,
            ..ShiftConfig::default()
        })
        .unwrap();
        let xs: Vec<f64> = (0..10_000).map(|_| s.sample()).collect();
        assert!(xs.iter().all(|g| (-0.3..=0.3).contains(g)));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let cfg = ShiftConfig {
            seed: 42,
            ..ShiftConfig::default()
        };
        let a: Vec<f64> = {
            let mut s = ShiftSampler::new(cfg).unwrap();
            (0..50).map(|_| s.sample()).collect()
        };
        let mut s = ShiftSampler::new(cfg).unwrap();
        let b: Vec<f64> = (0..50).map(|_| s.sample()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn apply_examples() {
        let f = RgbFrame::filled(2, 2, 0.9).unwrap();
        assert_eq!(apply_shift(&f, 0.0), f);
        assert!(apply_shift(&f, 0.3).data().iter().all(|&v| v == 1.0));
        let f = RgbFrame::filled(2, 2, 0.5).unwrap();
        assert!(apply_shift(&f, -0.2).data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn rejects_bad_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_shift(&mut rng, -0.1).is_err());
        assert!(ShiftSampler::new(ShiftConfig {
            delta: 1.5,
            ..ShiftConfig::default()
        })
        .is_err());
    }
}
