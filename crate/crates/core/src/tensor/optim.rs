//! SGD with momentum and the 1cycle learning-rate schedule.

use crate::error::{Error, Result};

/// Piecewise-cosine 1cycle schedule: warm up from `lr_max/div_factor` to
/// `lr_max` over the first `pct_warmup` of steps, then decay to
/// `lr_max/final_div`. Endpoints and peak are exact by construction.
#[derive(Clone, Copy, Debug)]
pub struct OneCycleSchedule {
    pub total_steps: usize,
    pub lr_max: f32,
    pub div_factor: f32,
    pub final_div: f32,
    pub pct_warmup: f32,
}

impl OneCycleSchedule {
    /// Schedule with the method's common defaults (div 25, final div 1e4,
    /// 25% warmup).
    pub fn with_defaults(total_steps: usize, lr_max: f32) -> Result<Self> {
        Self::new(total_steps, lr_max, 25.0, 1e4, 0.25)
    }

    pub fn new(total_steps: usize, lr_max: f32, div_factor: f32, final_div: f32, pct_warmup: f32) -> Result<Self> {
        if total_steps < 2 {
            return Err(Error::Config(format!("onecycle needs total_steps >= 2, got {total_steps}")));
        }
        if lr_max <= 0.0 || div_factor <= 1.0 || final_div <= 1.0 {
            return Err(Error::Config(format!(
                "onecycle needs lr_max > 0 and div factors > 1, got lr_max={lr_max} div={div_factor} final={final_div}"
            )));
        }
        if !(0.0 < pct_warmup && pct_warmup < 1.0) {
            return Err(Error::Config(format!("pct_warmup must be in (0,1), got {pct_warmup}")));
        }
        Ok(OneCycleSchedule { total_steps, lr_max, div_factor, final_div, pct_warmup })
    }

    /// Step index where the peak learning rate is reached.
    pub fn warmup_steps(&self) -> usize {
        let w = (self.pct_warmup as f64 * self.total_steps as f64).round() as usize;
        w.clamp(1, self.total_steps - 1)
    }
}

/// Learning rate at `step`, valid for `0 <= step <= total_steps`.
pub fn onecycle_lr(schedule: &OneCycleSchedule, step: usize) -> Result<f32> {
    let total = schedule.total_steps;
    if step > total {
        return Err(Error::Schedule { step, total });
    }
    let warmup = schedule.warmup_steps();
    let start = schedule.lr_max / schedule.div_factor;
    let end = schedule.lr_max / schedule.final_div;
    // Exact endpoints; cosine interpolation strictly between them.
    if step == 0 {
        return Ok(start);
    }
    if step == warmup {
        return Ok(schedule.lr_max);
    }
    if step == total {
        return Ok(end);
    }
    let lr = if step < warmup {
        let t = step as f64 / warmup as f64;
        let blend = (1.0 - (std::f64::consts::PI * t).cos()) / 2.0;
        f64::from(start) + (f64::from(schedule.lr_max) - f64::from(start)) * blend
    } else {
        let t = (step - warmup) as f64 / (total - warmup) as f64;
        let blend = (1.0 + (std::f64::consts::PI * t).cos()) / 2.0;
        f64::from(end) + (f64::from(schedule.lr_max) - f64::from(end)) * blend
    };
    Ok(lr as f32)
}

/// One SGD step: v <- momentum*v + g; w <- w - lr*v.
pub fn sgd_momentum_step(param: &mut [f32], grad: &[f32], velocity: &mut [f32], lr: f32, momentum: f32) {
    assert_eq!(param.len(), grad.len(), "sgd: param/grad length mismatch");
    assert_eq!(param.len(), velocity.len(), "sgd: param/velocity length mismatch");
    for ((w, g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v + *g;
        *w -= lr * *v;
    }
}
