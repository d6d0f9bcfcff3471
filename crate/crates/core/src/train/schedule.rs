//! Poly learning-rate decay: `lr(it) = base * (1 - it/max_iter)^power`.

use serde::{Deserialize, Serialize};

use crate::error::{AvError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub power: f64,
    pub max_iter: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base_lr: 1e-4,
            power: 0.9,
            max_iter: 1,
        }
    }
}

impl LrSchedule {
    pub fn new(base_lr: f64, power: f64, max_iter: usize) -> Result<Self> {
        let s = LrSchedule {
            base_lr,
            power,
            max_iter,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_lr <= 0.0 || !self.base_lr.is_finite() {
            return Err(AvError::arg(format!(
                "base_lr must be positive, got {}",
                self.base_lr
            )));
        }
        if self.power <= 0.0 || !self.power.is_finite() {
            return Err(AvError::arg(format!(
                "poly power must be positive, got {}",
                self.power
            )));
        }
        if self.max_iter == 0 {
            return Err(AvError::arg("max_iter must be at least 1"));
        }
        Ok(())
    }

    /// Learning rate at `iteration` in `0..=max_iter`.
    pub fn poly_lr(&self, iteration: usize) -> Result<f64> {
        if iteration > self.max_iter {
            return Err(AvError::arg(format!(
                "iteration {iteration} exceeds max_iter {}",
                self.max_iter
            )));
        }
        let frac = 1.0 - iteration as f64 / self.max_iter as f64;
        Ok(self.base_lr * frac.powf(self.power))
    }
}
