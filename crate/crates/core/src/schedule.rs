//! Cosine-annealed learning rate.

use crate::error::{Error, Result};

/// `lr(t) = lr_min + ½ (lr_max − lr_min)(1 + cos(π t / T))`.
///
/// The endpoints are returned exactly: `lr(0) = lr_max`, `lr(T) = lr_min`.
/// Monotone non-increasing in `t`.
pub fn cosine_lr(step: usize, total: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::Argument("cosine_lr: total steps must be at least 1".into()));
    }
    if step > total {
        return Err(Error::Argument(format!(
            "cosine_lr: step {step} exceeds total {total}"
        )));
    }
    if step == 0 {
        return Ok(lr_max);
    }
    if step == total {
        return Ok(lr_min);
    }
    let progress = step as f64 / total as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * progress).cos()))
}
