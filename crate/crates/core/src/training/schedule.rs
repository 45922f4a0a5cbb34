use crate::error::{Error, Result};

/// How the norm weight `λ` evolves with the batch counter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaSchedule {
    /// Linear ramp from 0 to 1 over the first `snorm_step` batches.
    Linear { snorm_step: u64 },
    Constant(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda: LambdaSchedule,
    pub kl_anneal_steps: u64,
    pub seed: u64,
    /// Global gradient-norm ceiling.
    pub grad_clip: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 64,
            epochs: 50,
            lambda: LambdaSchedule::Linear { snorm_step: 20_000 },
            kl_anneal_steps: 10_000,
            seed: 123_456,
            grad_clip: 5.0,
        }
    }
}

impl TrainingConfig {
    /// Settings for the larger corpus: batch 32, norm weight held at 1.
    pub fn opensubtitles() -> Self {
        Self {
            batch_size: 32,
            lambda: LambdaSchedule::Constant(1.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, ok: bool| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Domain(format!("{name} must be positive")))
            }
        };
        pos("learning_rate", self.learning_rate > 0.0 && self.learning_rate.is_finite())?;
        pos("batch_size", self.batch_size > 0)?;
        pos("kl_anneal_steps", self.kl_anneal_steps > 0)?;
        pos("grad_clip", self.grad_clip > 0.0)?;
        match self.lambda {
            LambdaSchedule::Linear { snorm_step } => pos("snorm_step", snorm_step > 0),
            LambdaSchedule::Constant(v) if (0.0..=1.0).contains(&v) => Ok(()),
            LambdaSchedule::Constant(v) => Err(Error::Domain(format!("lambda {v} outside [0, 1]"))),
        }
    }
}

fn ramp(step: u64, span: u64) -> f64 {
    if span == 0 || step >= span {
        1.0
    } else {
        step as f64 / span as f64
    }
}

/// Norm weight at batch `step`.
pub fn lambda_schedule(step: u64, cfg: &TrainingConfig) -> f64 {
    match cfg.lambda {
        LambdaSchedule::Linear { snorm_step } => ramp(step, snorm_step),
        LambdaSchedule::Constant(v) => v,
    }
}

/// KL weight at batch `step`.
pub fn kl_anneal(step: u64, cfg: &TrainingConfig) -> f64 {
    ramp(step, cfg.kl_anneal_steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lambda_examples() {
        let cfg = TrainingConfig::default();
        assert_eq!(lambda_schedule(0, &cfg), 0.0);
        assert_eq!(lambda_schedule(10_000, &cfg), 0.5);
        assert_eq!(lambda_schedule(20_000, &cfg), 1.0);
        assert_eq!(lambda_schedule(50_000, &cfg), 1.0);
        let flat = TrainingConfig {
            lambda: LambdaSchedule::Constant(1.0),
            ..cfg
        };
        for s in [0, 7, 20_000, 1 << 40] {
            assert_eq!(lambda_schedule(s, &flat), 1.0);
        }
    }

    #[test]
    fn kl_examples() {
        let cfg = TrainingConfig::default();
        assert_eq!(kl_anneal(0, &cfg), 0.0);
        assert_eq!(kl_anneal(5_000, &cfg), 0.5);
        assert_eq!(kl_anneal(10_000, &cfg), 1.0);
        assert_eq!(kl_anneal(10_001, &cfg), 1.0);
    }

    #[test]
    fn defaults_and_validation() {
        let cfg = TrainingConfig::default();
        assert_eq!(cfg.learning_rate, 0.001);
        assert_eq!(cfg.seed, 123_456);
        assert_eq!(cfg.batch_size, 64);
        assert_eq!(TrainingConfig::opensubtitles().batch_size, 32);
        assert_eq!(lambda_schedule(0, &TrainingConfig::opensubtitles()), 1.0);
        cfg.validate().unwrap();
        let bad = TrainingConfig {
            lambda: LambdaSchedule::Constant(2.0),
            ..TrainingConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn schedules_are_monotone_and_clamped(a in 0u64..100_000, b in 0u64..100_000, span in 1u64..50_000) {
            let cfg = TrainingConfig {
                lambda: LambdaSchedule::Linear { snorm_step: span },
                kl_anneal_steps: span,
                ..TrainingConfig::default()
            };
            let (lo, hi) = (a.min(b), a.max(b));
            for f in [lambda_schedule, kl_anneal] {
                prop_assert!(f(lo, &cfg) <= f(hi, &cfg));
                prop_assert!((0.0..=1.0).contains(&f(hi, &cfg)));
                if hi >= span {
                    prop_assert_eq!(f(hi, &cfg), 1.0);
                }
            }
        }
    }
}
