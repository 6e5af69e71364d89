use std::f64::consts::PI;

use crate::error::{invalid, Result};

/// Linear warmup over `round(warmup_fraction * total)` updates (at least
/// one), then cosine decay to zero at `step == total`.
pub fn lr_schedule(step: usize, total: usize, warmup_fraction: f64, base_lr: f64) -> Result<f64> {
    if total == 0 {
        return Err(invalid("schedule needs at least one step"));
    }
    if step > total {
        return Err(invalid(format!("step {step} beyond schedule of {total}")));
    }
    let w = ((warmup_fraction * total as f64).round() as usize).clamp(1, total);
    if step < w {
        return Ok(base_lr * step as f64 / w as f64);
    }
    if total == w {
        return Ok(0.0);
    }
    let progress = (step - w) as f64 / (total - w) as f64;
    Ok(base_lr * 0.5 * (1.0 + (PI * progress).cos()))
}
