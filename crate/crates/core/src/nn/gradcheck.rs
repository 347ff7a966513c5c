//! Central finite-difference gradient checking, used by the per-module
//! gradient tests and the acceptance suite.

/// Central-difference gradient of `loss()` with respect to `w`.
///
/// `loss` must be a pure function of `w` (re-run the whole forward pass each
/// call). Perturbation is scaled per coordinate.
pub fn finite_diff_grad(w: &mut [f64], eps: f64, loss: &mut dyn FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut grad = vec![0.0; w.len()];
    for i in 0..w.len() {
        let orig = w[i];
        let h = eps * orig.abs().max(1.0);
        w[i] = orig + h;
        let up = loss(w);
        w[i] = orig - h;
        let down = loss(w);
        w[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Relative error between two gradient vectors: ||a-b|| / max(||a||, ||b||).
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}
