//! Central-difference gradient checking.
//!
//! Only forward evaluations are used here, so the results are independent
//! of the reverse pass they are compared against.

use super::Matrix;

/// Central-difference gradient of `f` with respect to every entry of every
/// matrix in `params`.
pub fn numeric_grad(mut f: impl FnMut(&[Matrix]) -> f64, params: &[Matrix], h: f64) -> Vec<Matrix> {
    let mut work: Vec<Matrix> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let (r, c) = params[p].shape();
        let mut g = Matrix::zeros(r, c);
        for k in 0..params[p].len() {
            let orig = params[p].data()[k];
            work[p].data_mut()[k] = orig + h;
            let up = f(&work);
            work[p].data_mut()[k] = orig - h;
            let down = f(&work);
            work[p].data_mut()[k] = orig;
            g.data_mut()[k] = (up - down) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// Largest entrywise `min(absolute, relative)` discrepancy.
pub fn max_grad_error(analytic: &[Matrix], numeric: &[Matrix]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        assert_eq!(a.shape(), n.shape());
        for (&x, &y) in a.data().iter().zip(n.data()) {
            let abs = (x - y).abs();
            let rel = abs / x.abs().max(y.abs()).max(f64::MIN_POSITIVE);
            worst = worst.max(abs.min(rel));
        }
    }
    worst
}
