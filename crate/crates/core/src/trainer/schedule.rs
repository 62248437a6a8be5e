use serde::{Deserialize, Serialize};

use crate::error::{LormaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    LinearWarmupDecay,
    Cosine,
}

/// Learning-rate multiplier over `total_steps` updates.
///
/// Warmup lasts `ceil(warmup_ratio · total_steps)` steps and ramps linearly
/// from 0 to 1; `linear_warmup_decay` then falls linearly to 0 at
/// `total_steps` and `cosine` follows a half cosine to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    #[serde(default)]
    pub warmup_ratio: f64,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(kind: ScheduleKind, warmup_ratio: f64, total_steps: usize) -> Result<Self> {
        let s = Self {
            kind,
            warmup_ratio,
            total_steps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(total_steps: usize) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            warmup_ratio: 0.0,
            total_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(LormaError::Config(format!(
                "warmup_ratio {} outside [0, 1)",
                self.warmup_ratio
            )));
        }
        if self.total_steps == 0 {
            return Err(LormaError::Config("total_steps must be positive".into()));
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> usize {
        if self.kind == ScheduleKind::Constant {
            return 0;
        }
        (self.warmup_ratio * self.total_steps as f64).ceil() as usize
    }

    /// Multiplier applied to the base learning rate at update `step`
    /// (0-based). Never negative.
    pub fn multiplier(&self, step: usize) -> f64 {
        let warm = self.warmup_steps();
        if step < warm {
            return step as f64 / warm as f64;
        }
        let total = self.total_steps;
        if step >= total {
            return if self.kind == ScheduleKind::Constant {
                1.0
            } else {
                0.0
            };
        }
        let progress = (step - warm) as f64 / (total - warm).max(1) as f64;
        match self.kind {
            ScheduleKind::Constant => 1.0,
            ScheduleKind::LinearWarmupDecay => (1.0 - progress).max(0.0),
            ScheduleKind::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_peaks_at_end_of_warmup_and_reaches_zero() {
        let s = LrSchedule::new(ScheduleKind::LinearWarmupDecay, 0.06, 1000).unwrap();
        assert_eq!(s.warmup_steps(), 60);
        assert_eq!(s.multiplier(0), 0.0);
        assert_eq!(s.multiplier(30), 0.5);
        assert_eq!(s.multiplier(60), 1.0);
        assert_eq!(s.multiplier(1000), 0.0);
        assert!((s.multiplier(530) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cosine_boundaries() {
        let s = LrSchedule::new(ScheduleKind::Cosine, 0.0, 200).unwrap();
        assert_eq!(s.multiplier(0), 1.0);
        assert!((s.multiplier(100) - 0.5).abs() < 1e-15);
        assert!(s.multiplier(199) < 1e-3);
        assert_eq!(s.multiplier(200), 0.0);
    }

    #[test]
    fn never_negative() {
        for kind in [ScheduleKind::Constant, ScheduleKind::LinearWarmupDecay, ScheduleKind::Cosine] {
            let s = LrSchedule::new(kind, 0.1, 97).unwrap();
            for step in 0..150 {
                assert!(s.multiplier(step) >= 0.0);
            }
        }
    }

    #[test]
    fn constant_is_flat() {
        let s = LrSchedule::constant(10);
        assert!((0..20).all(|i| s.multiplier(i) == 1.0));
    }

    #[test]
    fn invalid_rejected() {
        assert!(LrSchedule::new(ScheduleKind::Cosine, 1.0, 10).is_err());
        assert!(LrSchedule::new(ScheduleKind::Cosine, 0.1, 0).is_err());
    }
}
