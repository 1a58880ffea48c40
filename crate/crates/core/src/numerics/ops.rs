use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

/// Gradients of an affine layer with respect to its input, weight and bias.
#[derive(Debug, Clone)]
pub struct AffineGrads<T> {
    pub dx: Matrix<T>,
    pub dw: Matrix<T>,
    pub db: Matrix<T>,
}

/// `x * w + b`, with the 1 x n bias broadcast over rows.
pub fn affine_forward<T: Scalar>(x: &Matrix<T>, w: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if b.rows() != 1 || b.cols() != w.cols() {
        return Err(Error::dim("affine_forward(bias)", b.shape(), (1, w.cols())));
    }
    let mut out = x.matmul(w)?;
    let bias = b.data();
    for r in 0..out.rows() {
        for (o, &bv) in out.row_mut(r).iter_mut().zip(bias) {
            *o += bv;
        }
    }
    Ok(out)
}

pub fn affine_backward<T: Scalar>(
    x: &Matrix<T>,
    w: &Matrix<T>,
    upstream: &Matrix<T>,
) -> Result<AffineGrads<T>> {
    if x.cols() != w.rows() {
        return Err(Error::dim("affine_backward", x.shape(), w.shape()));
    }
    if upstream.shape() != (x.rows(), w.cols()) {
        return Err(Error::dim(
            "affine_backward(upstream)",
            upstream.shape(),
            (x.rows(), w.cols()),
        ));
    }
    Ok(AffineGrads {
        dx: upstream.matmul_nt(w)?,
        dw: x.matmul_tn(upstream)?,
        db: upstream.sum_rows(),
    })
}

pub fn relu_forward<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `upstream` through where `x > 0`. The subgradient at 0 is 0.
pub fn relu_backward<T: Scalar>(x: &Matrix<T>, upstream: &Matrix<T>) -> Result<Matrix<T>> {
    x.zip_map(upstream, "relu_backward", |xv, g| {
        if xv > T::zero() {
            g
        } else {
            T::zero()
        }
    })
}

/// `param <- param - lr * grad`
pub fn sgd_update<T: Scalar>(param: &mut Matrix<T>, grad: &Matrix<T>, lr: T) -> Result<()> {
    if lr.is_nan() || lr <= T::zero() {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    param.add_scaled(grad, -lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::fd::{central_difference, rel_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Scalar objective sum(forward(x) * upstream) whose gradient is what
    /// backward returns.
    fn weighted_sum(out: &Matrix<f64>, upstream: &Matrix<f64>) -> f64 {
        out.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn identity_affine_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(4, 3, &mut rng);
        let out = affine_forward(&x, &Matrix::identity(3), &Matrix::zeros(1, 3)).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(4, 3, &mut rng);
        let w = random(3, 5, &mut rng);
        let g = affine_backward(&x, &w, &Matrix::zeros(4, 5)).unwrap();
        assert!(g.dx.data().iter().all(|&v| v == 0.0));
        assert!(g.dw.data().iter().all(|&v| v == 0.0));
        assert!(g.db.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_rejects_bad_bias() {
        let x = Matrix::<f64>::zeros(2, 3);
        let w = Matrix::<f64>::zeros(3, 4);
        assert!(matches!(
            affine_forward(&x, &w, &Matrix::zeros(1, 3)),
            Err(Error::Dimension { .. })
        ));
        assert!(affine_forward(&x, &Matrix::zeros(2, 4), &Matrix::zeros(1, 4)).is_err());
    }

    #[test]
    fn affine_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (n, d, k) in [(3, 4, 2), (5, 7, 3), (1, 2, 6)] {
            let x = random(n, d, &mut rng);
            let w = random(d, k, &mut rng);
            let b = random(1, k, &mut rng);
            let up = random(n, k, &mut rng);
            let g = affine_backward(&x, &w, &up).unwrap();

            let fx = central_difference(&x, 1e-5, |xp| {
                weighted_sum(&affine_forward(xp, &w, &b).unwrap(), &up)
            });
            let fw = central_difference(&w, 1e-5, |wp| {
                weighted_sum(&affine_forward(&x, wp, &b).unwrap(), &up)
            });
            let fb = central_difference(&b, 1e-5, |bp| {
                weighted_sum(&affine_forward(&x, &w, bp).unwrap(), &up)
            });
            assert!(rel_error(&g.dx, &fx) < 1e-6);
            assert!(rel_error(&g.dw, &fw) < 1e-6);
            assert!(rel_error(&g.db, &fb) < 1e-6);
        }
    }

    #[test]
    fn relu_saturated_and_linear_regions() {
        let neg = Matrix::from_rows(&[[-1.0, -0.5], [-3.0, -1e-9]]).unwrap();
        let up = Matrix::filled(2, 2, 7.0);
        assert!(relu_forward(&neg).data().iter().all(|&v| v == 0.0));
        assert!(relu_backward(&neg, &up).unwrap().data().iter().all(|&v| v == 0.0));

        let pos = Matrix::from_rows(&[[1.0, 0.5], [3.0, 1e-9]]).unwrap();
        assert_eq!(relu_forward(&pos), pos);
        assert_eq!(relu_backward(&pos, &up).unwrap(), up);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let x = Matrix::from_rows(&[[0.0, -0.0]]).unwrap();
        let g = relu_backward(&x, &Matrix::filled(1, 2, 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0]);
    }

    #[test]
    fn relu_matches_finite_differences_away_from_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Matrix::from_fn(6, 5, |_, _| {
            let v: f64 = rng.random_range(1e-3..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        });
        let up = random(6, 5, &mut rng);
        let g = relu_backward(&x, &up).unwrap();
        let f = central_difference(&x, 1e-5, |xp| weighted_sum(&relu_forward(xp), &up));
        assert!(rel_error(&g, &f) < 1e-6);
    }

    #[test]
    fn sgd_update_arithmetic() {
        let mut p = Matrix::filled(1, 1, 1.0);
        sgd_update(&mut p, &Matrix::filled(1, 1, 0.25), 1.0).unwrap();
        assert_eq!(p.get(0, 0), 0.75);

        let before = p.clone();
        sgd_update(&mut p, &Matrix::zeros(1, 1), 0.5).unwrap();
        assert_eq!(p, before);

        assert!(sgd_update(&mut p, &Matrix::zeros(1, 1), 0.0).is_err());
        assert!(sgd_update(&mut p, &Matrix::zeros(2, 1), 0.1).is_err());
    }

    #[test]
    fn sgd_step_decreases_convex_quadratic() {
        // f(p) = 0.5 * |p - c|^2, grad = p - c
        let c = Matrix::from_rows(&[[1.0, -2.0, 0.5]]).unwrap();
        let mut p = Matrix::from_rows(&[[4.0, 3.0, -1.0]]).unwrap();
        let f = |p: &Matrix<f64>| 0.5 * p.sub(&c).unwrap().data().iter().map(|v| v * v).sum::<f64>();
        let before = f(&p);
        let g = p.sub(&c).unwrap();
        sgd_update(&mut p, &g, 0.1).unwrap();
        assert!(f(&p) < before);
    }
}
