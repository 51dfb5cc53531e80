use candle_core::Tensor;

use crate::error::{ensure, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a single logit, in the overflow-free form
/// `max(x, 0) - x*y + ln(1 + e^-|x|)`.
pub fn bce_with_logits(logit: f64, target: u8) -> Result<f64> {
    ensure!(target <= 1, "BCE target must be 0 or 1, got {target}");
    ensure!(logit.is_finite(), "BCE logit must be finite");
    let y = target as f64;
    Ok(logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p())
}

/// d BCE / d logit.
pub fn bce_grad(logit: f64, target: u8) -> Result<f64> {
    ensure!(target <= 1, "BCE target must be 0 or 1, got {target}");
    Ok(sigmoid(logit) - target as f64)
}

/// Batch mean of [`bce_with_logits`].
pub fn bce_mean(logits: &[f64], targets: &[u8]) -> Result<f64> {
    ensure!(
        !logits.is_empty() && logits.len() == targets.len(),
        "BCE batch needs equal, non-empty logits and targets"
    );
    let mut total = 0.0;
    for (&x, &y) in logits.iter().zip(targets) {
        total += bce_with_logits(x, y)?;
    }
    Ok(total / logits.len() as f64)
}

/// Differentiable batch-mean BCE. `logits` and `targets` share a shape.
pub fn bce_with_logits_tensor(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let softplus = logits.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?;
    let loss = ((logits.relu()? - (logits * targets)?)? + softplus)?;
    Ok(loss.mean_all()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::DEVICE;

    #[test]
    fn closed_forms() {
        assert!((bce_with_logits(0.0, 1).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let big = bce_with_logits(100.0, 1).unwrap();
        assert!(big >= 0.0 && big < 1e-40);
        assert!((bce_with_logits(100.0, 0).unwrap() - 100.0).abs() < 1e-12);
        assert!((bce_with_logits(-100.0, 1).unwrap() - 100.0).abs() < 1e-12);
        assert!(bce_with_logits(0.0, 2).is_err());
        assert!(bce_with_logits(f64::NAN, 1).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let h = 1e-5;
        for i in 0..=40 {
            let x = -10.0 + 0.5 * i as f64;
            for y in [0u8, 1] {
                let fd = (bce_with_logits(x + h, y).unwrap() - bce_with_logits(x - h, y).unwrap()) / (2.0 * h);
                let g = bce_grad(x, y).unwrap();
                let err = (fd - g).abs() / g.abs().max(1e-3);
                assert!(err < 1e-6, "x={x} y={y}: {fd} vs {g}");
            }
        }
    }

    #[test]
    fn tensor_form_matches_scalar_and_autograd() {
        let xs = [-7.5f64, -1.0, 0.0, 0.3, 12.0];
        let ys = [1u8, 0, 1, 0, 1];
        let logits = candle_core::Var::new(&xs[..], &DEVICE).unwrap();
        let targets = Tensor::new(&ys.map(|y| y as f64)[..], &DEVICE).unwrap();
        let loss = bce_with_logits_tensor(logits.as_tensor(), &targets).unwrap();
        let expected = bce_mean(&xs, &ys).unwrap();
        assert!((loss.to_scalar::<f64>().unwrap() - expected).abs() < 1e-12);
        let grads = loss.backward().unwrap();
        let g = grads.get(logits.as_tensor()).unwrap().to_vec1::<f64>().unwrap();
        for i in 0..xs.len() {
            let want = bce_grad(xs[i], ys[i]).unwrap() / xs.len() as f64;
            assert!((g[i] - want).abs() < 1e-12, "{i}: {} vs {want}", g[i]);
        }
    }
}
