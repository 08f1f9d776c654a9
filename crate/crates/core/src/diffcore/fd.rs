use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Central-difference gradient of a scalar function at `x`.
pub fn finite_difference_grad<F>(mut f: F, x: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::domain(
            "finite_difference_grad",
            format!("eps must be > 0, got {eps}"),
        ));
    }
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let fp = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let fm = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite {
                context: "finite_difference_grad".into(),
                index: Some(i),
            });
        }
        out.push((fp - fm) / (2.0 * eps));
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Elementwise agreement test: `|a - n| <= max(rel * max(|a|, |n|), floor)`.
///
/// Returns the worst relative error and whether every element passed.
pub fn grad_agreement(analytic: &Tensor, numeric: &Tensor, rel: f64, floor: f64) -> (f64, bool) {
    let mut worst: f64 = 0.0;
    let mut ok = analytic.shape() == numeric.shape();
    for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
        let diff = (a - n).abs();
        let scale = a.abs().max(n.abs());
        if diff > floor {
            worst = worst.max(diff / scale.max(f64::MIN_POSITIVE));
        }
        if diff > (rel * scale).max(floor) {
            ok = false;
        }
    }
    (worst, ok)
}
