//! Central finite differences used as an independent gradient oracle.

use crate::numerics::Matrix;

pub fn central_difference(
    at: &Matrix<f64>,
    h: f64,
    mut f: impl FnMut(&Matrix<f64>) -> f64,
) -> Matrix<f64> {
    let mut probe = at.clone();
    let mut out = Matrix::zeros(at.rows(), at.cols());
    for i in 0..at.data().len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * h);
    }
    out
}

/// `|a - b| / max(|a| + |b|, 1e-12)` over the flattened tensors.
pub fn rel_error(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    let norm = |m: &Matrix<f64>| m.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    norm(&a.sub(b).unwrap()) / (norm(a) + norm(b)).max(1e-12)
}
