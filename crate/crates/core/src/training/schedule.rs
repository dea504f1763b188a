/// Warmup-then-decay learning rate:
/// `base_scale · d_model^-0.5 · min(step^-0.5, step · W^-1.5)` with
/// `W = warmup_epochs · steps_per_epoch`. Rises linearly to its peak at
/// `step = W`, then decays with the inverse square root of the step.
///
/// # Panics
/// Panics if `step`, `steps_per_epoch`, `warmup_epochs` or `d_model` is zero.
pub fn lr(step: u64, steps_per_epoch: u64, warmup_epochs: u64, base_scale: f64, d_model: usize) -> f64 {
    assert!(step >= 1, "steps are counted from 1");
    assert!(steps_per_epoch >= 1 && warmup_epochs >= 1 && d_model >= 1);
    let w = (warmup_epochs * steps_per_epoch) as f64;
    let s = step as f64;
    base_scale * (d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
}
