//! Learning-rate schedules applied between gradient steps or epochs.

use serde::{Deserialize, Serialize};

/// KL above `KL_HIGH * threshold` shrinks the rate.
pub const KL_HIGH: f64 = 2.0;
/// KL below `KL_LOW * threshold` grows the rate.
pub const KL_LOW: f64 = 0.5;
pub const KL_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SchedulerError {
    #[error("scheduler: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchedulerConfig {
    #[default]
    Constant,
    /// Decays linearly to `min_lr` over the run.
    Linear {
        #[serde(default = "default_min_lr")]
        min_lr: f64,
    },
    KlAdaptive {
        #[serde(default = "default_kl_threshold")]
        kl_threshold: f64,
        #[serde(default = "default_min_lr")]
        min_lr: f64,
        #[serde(default = "default_max_lr")]
        max_lr: f64,
    },
}

fn default_min_lr() -> f64 {
    1e-6
}

fn default_max_lr() -> f64 {
    1e-2
}

fn default_kl_threshold() -> f64 {
    0.008
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Constant,
    Linear,
    KlAdaptive { threshold: f64 },
}

/// Current learning rate plus the bounds it is kept within.
#[derive(Debug, Clone, PartialEq)]
pub struct Scheduler {
    kind: Kind,
    initial_lr: f64,
    current_lr: f64,
    min_lr: f64,
    max_lr: f64,
}

impl Scheduler {
    pub fn new(config: &SchedulerConfig, initial_lr: f64) -> Result<Self, SchedulerError> {
        if !(initial_lr > 0.0) {
            return Err(SchedulerError::Invalid(format!("learning rate must be positive, got {initial_lr}")));
        }
        let (kind, min_lr, max_lr) = match *config {
            SchedulerConfig::Constant => (Kind::Constant, initial_lr, initial_lr),
            SchedulerConfig::Linear { min_lr } => (Kind::Linear, min_lr, initial_lr),
            SchedulerConfig::KlAdaptive {
                kl_threshold,
                min_lr,
                max_lr,
            } => {
                if !(kl_threshold > 0.0) {
                    return Err(SchedulerError::Invalid(format!(
                        "kl_threshold must be positive, got {kl_threshold}"
                    )));
                }
                (Kind::KlAdaptive { threshold: kl_threshold }, min_lr, max_lr)
            }
        };
        if !(min_lr > 0.0 && min_lr <= initial_lr && initial_lr <= max_lr) {
            return Err(SchedulerError::Invalid(format!(
                "need 0 < min_lr <= lr <= max_lr, got {min_lr}, {initial_lr}, {max_lr}"
            )));
        }
        Ok(Self {
            kind,
            initial_lr,
            current_lr: initial_lr,
            min_lr,
            max_lr,
        })
    }

    pub fn current_lr(&self) -> f64 {
        self.current_lr
    }

    pub fn min_lr(&self) -> f64 {
        self.min_lr
    }

    pub fn max_lr(&self) -> f64 {
        self.max_lr
    }

    pub fn is_kl_adaptive(&self) -> bool {
        matches!(self.kind, Kind::KlAdaptive { .. })
    }

    /// Applies the KL rule; other schedules ignore the measurement.
    pub fn observe_kl(&mut self, measured_kl: f64) -> f64 {
        if let Kind::KlAdaptive { threshold } = self.kind {
            self.current_lr = kl_adaptive_lr(self.current_lr, threshold, measured_kl, self.min_lr, self.max_lr);
        }
        self.current_lr
    }

    /// Applies the linear decay for progress `step / total_steps`; other
    /// schedules ignore it.
    pub fn observe_progress(&mut self, step: usize, total_steps: usize) -> f64 {
        if self.kind == Kind::Linear {
            self.current_lr = linear_lr(self.initial_lr, self.min_lr, step, total_steps);
        }
        self.current_lr
    }
}

/// `lr / 1.5` when `kl > 2 * threshold`, `lr * 1.5` when `kl < threshold / 2`,
/// else unchanged; clamped to `[min_lr, max_lr]`.
pub fn kl_adaptive_lr(lr: f64, threshold: f64, measured_kl: f64, min_lr: f64, max_lr: f64) -> f64 {
    let next = if measured_kl > KL_HIGH * threshold {
        lr / KL_FACTOR
    } else if measured_kl < KL_LOW * threshold {
        lr * KL_FACTOR
    } else {
        lr
    };
    next.clamp(min_lr, max_lr)
}

/// Linear interpolation from `initial` at step 0 to `min_lr` at `total_steps`.
pub fn linear_lr(initial: f64, min_lr: f64, step: usize, total_steps: usize) -> f64 {
    if total_steps == 0 {
        return min_lr;
    }
    let frac = (step.min(total_steps)) as f64 / total_steps as f64;
    initial + (min_lr - initial) * frac
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;

    fn kl(lr: f64) -> Scheduler {
        Scheduler::new(
            &SchedulerConfig::KlAdaptive {
                kl_threshold: 0.008,
                min_lr: 1e-6,
                max_lr: 1e-2,
            },
            lr,
        )
        .unwrap()
    }

    #[test]
    fn kl_at_threshold_keeps_rate() {
        let mut s = kl(1e-3);
        assert_eq!(s.observe_kl(0.008), 1e-3);
    }

    #[test]
    fn high_kl_shrinks_rate() {
        let mut s = kl(1e-3);
        assert_abs_diff_eq!(s.observe_kl(0.02), 6.667e-4, epsilon = 1e-7);
        assert_abs_diff_eq!(s.current_lr(), 1e-3 / 1.5, epsilon = 1e-18);
    }

    #[test]
    fn low_kl_grows_rate() {
        let mut s = kl(1e-3);
        assert_abs_diff_eq!(s.observe_kl(0.001), 1.5e-3, epsilon = 1e-15);
    }

    #[test]
    fn repeated_shrink_clamps_at_min() {
        let mut s = kl(1e-3);
        for _ in 0..100 {
            s.observe_kl(1.0);
        }
        assert_eq!(s.current_lr(), 1e-6);
        for _ in 0..100 {
            s.observe_kl(0.0);
        }
        assert_eq!(s.current_lr(), 1e-2);
    }

    #[test]
    fn linear_schedule_endpoints_and_midpoint() {
        let mut s = Scheduler::new(&SchedulerConfig::Linear { min_lr: 1e-5 }, 1e-3).unwrap();
        assert_eq!(s.observe_progress(0, 100), 1e-3);
        assert_abs_diff_eq!(s.observe_progress(50, 100), 0.5 * (1e-3 + 1e-5), epsilon = 1e-18);
        assert_abs_diff_eq!(s.observe_progress(100, 100), 1e-5, epsilon = 1e-18);
        assert_eq!(s.observe_kl(10.0), s.current_lr());
    }

    #[test]
    fn constant_schedule_never_moves() {
        let mut s = Scheduler::new(&SchedulerConfig::Constant, 3e-4).unwrap();
        s.observe_kl(5.0);
        s.observe_progress(9, 10);
        assert_eq!(s.current_lr(), 3e-4);
    }

    #[test]
    fn invalid_configs() {
        assert!(Scheduler::new(&SchedulerConfig::Constant, 0.0).is_err());
        assert!(Scheduler::new(&SchedulerConfig::Linear { min_lr: 1.0 }, 1e-3).is_err());
        let bad = SchedulerConfig::KlAdaptive {
            kl_threshold: 0.0,
            min_lr: 1e-6,
            max_lr: 1.0,
        };
        assert!(Scheduler::new(&bad, 1e-3).is_err());
    }

    #[test]
    fn config_parses() {
        let c: SchedulerConfig = toml::from_str("kind = \"kl_adaptive\"\nkl_threshold = 0.01").unwrap();
        assert!(Scheduler::new(&c, 1e-3).unwrap().is_kl_adaptive());
        assert!(toml::from_str::<SchedulerConfig>("kind = \"cosine\"").is_err());
    }

    proptest! {
        #[test]
        fn rate_stays_in_bounds(kls in proptest::collection::vec(0.0f64..0.1, 1..50)) {
            let mut s = kl(1e-3);
            for k in kls {
                let lr = s.observe_kl(k);
                prop_assert!((1e-6..=1e-2).contains(&lr));
            }
        }

        #[test]
        fn dead_zone_is_idempotent(k in 0.004f64..=0.016, lr in 1e-6f64..1e-2) {
            prop_assert_eq!(kl_adaptive_lr(lr, 0.008, k, 1e-6, 1e-2), lr);
        }
    }
}
