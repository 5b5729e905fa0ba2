use std::f64::consts::PI;

/// One-cycle schedule: linear warmup from 0 to `peak` over `warmup` steps,
/// then cosine decay to 0 at `total`.
pub fn lr_at(step: usize, total: usize, warmup: usize, peak: f64) -> f64 {
    let step = step.min(total);
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    let span = (total - warmup).max(1) as f64;
    let t = (step - warmup) as f64 / span;
    0.5 * peak * (1.0 + (PI * t).cos())
}
