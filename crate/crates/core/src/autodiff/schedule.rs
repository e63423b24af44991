/// One-cycle learning-rate schedule followed by a constant fine-tune phase.
///
/// For steps inside the cycle: a cosine ramp from `max_lr/start_div` up to
/// `max_lr` over the first `warmup_fraction` of `total_steps`, then a cosine
/// anneal down to `max_lr/(start_div·final_div)`. Every step at or past
/// `total_steps` yields exactly `fine_tune_lr`.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub max_lr: f64,
    pub total_steps: usize,
    pub warmup_fraction: f64,
    pub start_div: f64,
    pub final_div: f64,
    pub fine_tune_lr: f64,
}

impl LrSchedule {
    pub fn new(max_lr: f64, total_steps: usize, fine_tune_lr: f64) -> Self {
        LrSchedule {
            max_lr,
            total_steps,
            warmup_fraction: 0.25,
            start_div: 25.0,
            final_div: 1e4,
            fine_tune_lr,
        }
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_fraction * self.total_steps as f64).floor() as usize
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step >= self.total_steps {
            return self.fine_tune_lr;
        }
        let warm = self.warmup_steps();
        if step == warm {
            // The peak must be the configured maximum exactly, not within
            // float rounding of it.
            return self.max_lr;
        }
        let low = self.max_lr / self.start_div;
        if step < warm {
            let t = step as f64 / warm as f64;
            cosine(low, self.max_lr, t)
        } else {
            let end = self.max_lr / (self.start_div * self.final_div);
            let t = (step - warm) as f64 / (self.total_steps - warm) as f64;
            cosine(self.max_lr, end, t)
        }
    }
}

/// Cosine interpolation from `from` (t=0) to `to` (t=1).
fn cosine(from: f64, to: f64, t: f64) -> f64 {
    to + (from - to) * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0
}
