use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

/// A scalar loss together with its gradient with respect to the logits it
/// was computed from.
#[derive(Debug, Clone)]
pub struct LossValue<T> {
    pub value: T,
    pub grad: Matrix<T>,
}

/// Mean cross-entropy of `softmax(logits)` against integer labels.
///
/// Each row is shifted by its maximum before exponentiation, so large logits
/// do not overflow. The gradient is `(softmax - one_hot) / rows`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Matrix<T>, labels: &[usize]) -> Result<LossValue<T>> {
    let (rows, classes) = logits.shape();
    if rows != labels.len() {
        return Err(Error::dim(
            "softmax_cross_entropy",
            logits.shape(),
            (labels.len(), classes),
        ));
    }
    if rows == 0 {
        return Err(Error::Shape("cross-entropy over an empty batch".into()));
    }
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::Label {
            row,
            label,
            classes,
        });
    }

    let inv_n = T::one() / T::from_count(rows);
    let mut grad = Matrix::zeros(rows, classes);
    let mut total = T::zero();
    for (r, (row, &label)) in logits.row_iter().zip(labels).enumerate() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let g = grad.row_mut(r);
        let mut denom = T::zero();
        for (gi, &z) in g.iter_mut().zip(row) {
            let e = (z - max).exp();
            *gi = e;
            denom += e;
        }
        total += denom.ln() - (row[label] - max);
        for gi in g.iter_mut() {
            *gi = *gi / denom * inv_n;
        }
        g[label] -= inv_n;
    }

    Ok(LossValue {
        value: total * inv_n,
        grad,
    })
}

/// Batch mean of the per-row squared L2 distance between `z_new` and a
/// constant target `z_ref`. The gradient flows only into `z_new`.
pub fn logit_mse<T: Scalar>(z_new: &Matrix<T>, z_ref: &Matrix<T>) -> Result<LossValue<T>> {
    z_new.ensure_same_shape(z_ref, "logit_mse")?;
    let rows = z_new.rows();
    if rows == 0 {
        return Err(Error::Shape("logit MSE over an empty batch".into()));
    }
    let inv_n = T::one() / T::from_count(rows);
    let two = T::lit(2.0);
    let diff = z_new.sub(z_ref)?;
    let value = diff.data().iter().map(|&d| d * d).sum::<T>() * inv_n;
    let grad = diff.map(|d| two * d * inv_n);
    Ok(LossValue { value, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::fd::{central_difference, rel_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix<f64> {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
    }

    /// Log-sum-exp by pairwise log-add folding; shares no code with the
    /// max-shift used by the implementation.
    fn lse_oracle(row: &[f64]) -> f64 {
        row.iter().skip(1).fold(row[0], |acc, &x| {
            let hi = acc.max(x);
            let lo = acc.min(x);
            hi + (lo - hi).exp().ln_1p()
        })
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Matrix::<f64>::filled(3, 10, 0.7);
        let loss = softmax_cross_entropy(&logits, &[0, 4, 9]).unwrap();
        assert!((loss.value - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_correct_class_has_no_loss() {
        let mut logits = Matrix::<f64>::zeros(2, 4);
        logits.set(0, 1, 1e3);
        logits.set(1, 3, 1e3);
        let loss = softmax_cross_entropy(&logits, &[1, 3]).unwrap();
        assert!(loss.value.abs() < 1e-12);
        assert!(loss.grad.data().iter().all(|g| g.abs() < 1e-12));
        assert!(loss.grad.is_finite());
    }

    #[test]
    fn matches_log_sum_exp_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits = random(4, 6, 5.0, &mut rng);
        let labels = [0usize, 5, 2, 2];
        let loss = softmax_cross_entropy(&logits, &labels).unwrap();

        let n = labels.len() as f64;
        let mut value = 0.0;
        let mut grad = Matrix::zeros(4, 6);
        for (r, &y) in labels.iter().enumerate() {
            let lse = lse_oracle(logits.row(r));
            value += (lse - logits.get(r, y)) / n;
            for c in 0..6 {
                let p = (logits.get(r, c) - lse).exp();
                let target = if c == y { 1.0 } else { 0.0 };
                grad.set(r, c, (p - target) / n);
            }
        }
        assert!(((loss.value - value) / value).abs() < 1e-10);
        assert!(rel_error(&loss.grad, &grad) < 1e-10);
    }

    #[test]
    fn cross_entropy_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let logits = random(5, 7, 3.0, &mut rng);
        let labels = [6usize, 0, 3, 1, 1];
        let loss = softmax_cross_entropy(&logits, &labels).unwrap();
        let fd = central_difference(&logits, 1e-5, |z| {
            softmax_cross_entropy(z, &labels).unwrap().value
        });
        assert!(rel_error(&loss.grad, &fd) < 1e-6);
    }

    #[test]
    fn out_of_range_label_reports_row() {
        let logits = Matrix::<f64>::zeros(3, 4);
        let err = softmax_cross_entropy(&logits, &[0, 4, 1]).unwrap_err();
        assert!(matches!(
            err,
            Error::Label {
                row: 1,
                label: 4,
                classes: 4
            }
        ));
    }

    #[test]
    fn label_count_must_match_rows() {
        let logits = Matrix::<f64>::zeros(3, 4);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[0, 1]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn mse_identity_and_arithmetic() {
        let a = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let same = logit_mse(&a, &a).unwrap();
        assert_eq!(same.value, 0.0);
        assert!(same.grad.data().iter().all(|&g| g == 0.0));

        let loss = logit_mse(&a, &Matrix::zeros(1, 2)).unwrap();
        assert_eq!(loss.value, 5.0);
        assert_eq!(loss.grad.data(), &[2.0, 4.0]);
    }

    #[test]
    fn mse_averages_over_rows_and_sums_over_classes() {
        let a = Matrix::from_rows(&[[1.0, 0.0], [0.0, 3.0]]).unwrap();
        let loss = logit_mse(&a, &Matrix::zeros(2, 2)).unwrap();
        assert_eq!(loss.value, 5.0);
        assert_eq!(loss.grad.data(), &[1.0, 0.0, 0.0, 3.0]);
    }

    #[test]
    fn mse_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(6, 5, 2.0, &mut rng);
        let b = random(6, 5, 2.0, &mut rng);
        let loss = logit_mse(&a, &b).unwrap();
        let fd = central_difference(&a, 1e-5, |z| logit_mse(z, &b).unwrap().value);
        assert!(rel_error(&loss.grad, &fd) < 1e-6);
    }

    #[test]
    fn mse_shape_mismatch() {
        assert!(matches!(
            logit_mse(&Matrix::<f64>::zeros(2, 3), &Matrix::zeros(3, 2)),
            Err(Error::Dimension { .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn cross_entropy_is_non_negative(seed in any::<u64>(), rows in 1usize..6, classes in 2usize..8) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let logits = random(rows, classes, 50.0, &mut rng);
                let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..classes)).collect();
                let loss = softmax_cross_entropy(&logits, &labels).unwrap();
                prop_assert!(loss.value >= 0.0);
                prop_assert!(loss.grad.is_finite());
            }

            #[test]
            fn uniform_logits_are_exactly_ln_k(value in -100.0f64..100.0, classes in 2usize..50) {
                let logits = Matrix::filled(2, classes, value);
                let loss = softmax_cross_entropy(&logits, &[0, classes - 1]).unwrap();
                prop_assert!((loss.value - (classes as f64).ln()).abs() < 1e-12);
            }

            #[test]
            fn mse_is_symmetric_and_non_negative(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..8) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random(rows, cols, 10.0, &mut rng);
                let b = random(rows, cols, 10.0, &mut rng);
                let ab = logit_mse(&a, &b).unwrap().value;
                let ba = logit_mse(&b, &a).unwrap().value;
                prop_assert_eq!(ab, ba);
                prop_assert!(ab >= 0.0);
                prop_assert_eq!(logit_mse(&a, &a).unwrap().value, 0.0);
            }
        }
    }
}
