//! Central finite differences, the oracle the analytic gradients are
//! checked against.

use super::{Tensor, TensorError};

/// Central-difference gradient of a scalar-valued `f` at `p`:
/// (f(p + h e_i) - f(p - h e_i)) / 2h per coordinate.
pub fn finite_diff_grad<F>(mut f: F, p: &Tensor, h: f64) -> Result<Tensor, TensorError>
where
    F: FnMut(&Tensor) -> Result<f64, TensorError>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = p.clone();
    let mut grad = Tensor::zeros(p.shape.clone());
    for i in 0..p.data.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let f_plus = f(&probe)?;
        probe.data[i] = orig - h;
        let f_minus = f(&probe)?;
        probe.data[i] = orig;
        if !f_plus.is_finite() || !f_minus.is_finite() {
            return Err(TensorError::NonFinite {
                op: "finite_diff_grad",
            });
        }
        grad.data[i] = (f_plus - f_minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Relative error between two gradient vectors of one parameter group:
/// ||a - n||_2 / max(||a||_2, ||n||_2, tiny).
pub fn group_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nn = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        diff += (a - n) * (a - n);
        na += a * a;
        nn += n * n;
    }
    let denom = na.sqrt().max(nn.sqrt()).max(1e-12);
    diff.sqrt() / denom
}
