/// Cosine annealing with warm restarts every `period` epochs:
/// `floor + (base - floor) * (1 + cos(pi * frac)) / 2`, where `frac` is the
/// position inside the current period.
///
/// `epoch_position` is fractional so the rate can move every batch.
pub fn cosine_restart_lr(epoch_position: f64, base_lr: f64, period: f64, floor_lr: f64) -> f64 {
    assert!(period > 0.0, "restart period must be positive");
    let frac = epoch_position.rem_euclid(period) / period;
    floor_lr + 0.5 * (base_lr - floor_lr) * (1.0 + (std::f64::consts::PI * frac).cos())
}
