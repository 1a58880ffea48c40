//! The per-step replay objective.
//!
//! ```text
//! L = CE(f(x), y) + CE(f(x'), y') + alpha * MSE(f(x''), z'') + beta * MSE(f(x), f_old(x))
//! ```
//!
//! The stream batch `x`, replay batch `x'` and distillation batch `x''` are
//! stacked into one forward pass. Each term contributes a gradient at its
//! block of logits, and a single backward pass turns the summed logit
//! gradients into parameter gradients.

use crate::error::{Error, Result};
use crate::model::{Gradients, ModelParams};
use crate::numerics::{logit_mse, softmax_cross_entropy, Matrix};
use crate::scalar::Scalar;

/// Inputs of one optimisation step. Absent parts contribute nothing.
#[derive(Debug, Clone)]
pub struct StepInputs<T> {
    pub x: Matrix<T>,
    pub y: Vec<usize>,
    /// Replayed inputs and labels for the buffer classification term.
    pub replay: Option<(Matrix<T>, Vec<usize>)>,
    /// Replayed inputs and their stored logits for the backward consistency term.
    pub distill: Option<(Matrix<T>, Matrix<T>)>,
    /// Frozen previous model's logits on `x` for the forward consistency term.
    pub old_logits: Option<Matrix<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss<T> {
    pub stream_cls: T,
    pub buffer_cls: Option<T>,
    /// Unweighted MSE against stored logits.
    pub backward: Option<T>,
    /// Unweighted MSE against the frozen model.
    pub forward: Option<T>,
    pub total: T,
}

#[derive(Debug, Clone)]
pub struct StepOutput<T> {
    pub loss: StepLoss<T>,
    pub grads: Gradients<T>,
    /// Logits of the stream batch under the parameters the loss was taken at.
    pub stream_logits: Matrix<T>,
}

pub fn composite_loss<T: Scalar>(
    params: &ModelParams<T>,
    inputs: &StepInputs<T>,
    alpha: T,
    beta: T,
) -> Result<StepOutput<T>> {
    let n = inputs.x.rows();
    if n == 0 {
        return Err(Error::Shape("empty stream batch".into()));
    }
    let mut parts = vec![&inputs.x];
    if let Some((xr, _)) = &inputs.replay {
        parts.push(xr);
    }
    if let Some((xd, _)) = &inputs.distill {
        parts.push(xd);
    }
    let stacked;
    let batch = if parts.len() == 1 {
        &inputs.x
    } else {
        stacked = Matrix::vstack(&parts)?;
        &stacked
    };

    let cache = params.forward_cached(batch)?;
    let logits = cache.logits();
    let stream_logits = logits.slice_rows(0..n);

    let cls = softmax_cross_entropy(&stream_logits, &inputs.y)?;
    let mut total = cls.value;
    let mut stream_grad = cls.grad;

    let forward = match &inputs.old_logits {
        Some(old) => {
            let fc = logit_mse(&stream_logits, old)?;
            stream_grad.add_scaled(&fc.grad, beta)?;
            total += beta * fc.value;
            Some(fc.value)
        }
        None => None,
    };

    let mut grad_blocks = vec![stream_grad];
    let mut offset = n;

    let buffer_cls = match &inputs.replay {
        Some((xr, yr)) => {
            let block = logits.slice_rows(offset..offset + xr.rows());
            offset += xr.rows();
            let l = softmax_cross_entropy(&block, yr)?;
            total += l.value;
            grad_blocks.push(l.grad);
            Some(l.value)
        }
        None => None,
    };

    let backward = match &inputs.distill {
        Some((xd, zd)) => {
            let block = logits.slice_rows(offset..offset + xd.rows());
            let l = logit_mse(&block, zd)?;
            total += alpha * l.value;
            grad_blocks.push(l.grad.scale(alpha));
            Some(l.value)
        }
        None => None,
    };

    let logit_grads = if grad_blocks.len() == 1 {
        grad_blocks.pop().expect("one block")
    } else {
        let refs: Vec<&Matrix<T>> = grad_blocks.iter().collect();
        Matrix::vstack(&refs)?
    };
    let grads = params.backward(&cache, &logit_grads)?;

    Ok(StepOutput {
        loss: StepLoss {
            stream_cls: cls.value,
            buffer_cls,
            backward,
            forward,
            total,
        },
        grads,
        stream_logits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Dense;

    fn linear(w: &[&[f64]], b: &[f64]) -> ModelParams<f64> {
        ModelParams::from_layers(vec![Dense {
            weight: Matrix::from_rows(w).unwrap(),
            bias: Matrix::row_vector(b),
        }])
        .unwrap()
    }

    #[test]
    fn total_is_sum_of_hand_computed_terms() {
        // logits = x W + b with W = I, b = 0 on two classes
        let model = linear(&[&[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0]);
        let inputs = StepInputs {
            x: Matrix::from_rows(&[[0.0, 0.0]]).unwrap(),
            y: vec![0],
            replay: Some((Matrix::from_rows(&[[1.0, 0.0]]).unwrap(), vec![0])),
            distill: Some((
                Matrix::from_rows(&[[1.0, 2.0]]).unwrap(),
                Matrix::from_rows(&[[0.0, 0.0]]).unwrap(),
            )),
            old_logits: Some(Matrix::from_rows(&[[1.0, -1.0]]).unwrap()),
        };
        let out = composite_loss(&model, &inputs, 0.5, 0.25).unwrap();
        let ln2 = 2f64.ln();
        let ce_replay = (1.0 + (-1f64).exp()).ln();
        assert!((out.loss.stream_cls - ln2).abs() < 1e-15);
        assert!((out.loss.buffer_cls.unwrap() - ce_replay).abs() < 1e-15);
        assert_eq!(out.loss.backward, Some(5.0));
        assert_eq!(out.loss.forward, Some(2.0));
        let expected = ln2 + ce_replay + 0.5 * 5.0 + 0.25 * 2.0;
        assert!((out.loss.total - expected).abs() < 1e-14);
    }

    #[test]
    fn missing_terms_leave_plain_cross_entropy() {
        let model = linear(&[&[1.0, -1.0], &[0.5, 2.0]], &[0.1, 0.0]);
        let x = Matrix::from_rows(&[[0.3, -0.2], [1.0, 1.0]]).unwrap();
        let y = vec![1, 0];
        let out = composite_loss(
            &model,
            &StepInputs {
                x: x.clone(),
                y: y.clone(),
                replay: None,
                distill: None,
                old_logits: None,
            },
            1.0,
            1.0,
        )
        .unwrap();
        let ce = softmax_cross_entropy(&model.forward(&x).unwrap(), &y).unwrap();
        assert_eq!(out.loss.total, ce.value);
        assert_eq!(out.loss.buffer_cls, None);
        let g = model.forward_backward(&x, &ce.grad).unwrap();
        assert_eq!(out.grads.max_abs_diff(&g).unwrap(), 0.0);
    }

    #[test]
    fn stacked_pass_matches_separate_passes() {
        let model = linear(&[&[0.2, -0.4, 1.0], &[0.7, 0.1, -0.3]], &[0.0, 0.5, -0.5]);
        let x = Matrix::from_rows(&[[0.1, 0.9], [0.4, 0.4]]).unwrap();
        let xr = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let xd = Matrix::from_rows(&[[0.3, 0.3], [0.0, 1.0]]).unwrap();
        let zd = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 0.0, 2.0]]).unwrap();
        let old = Matrix::from_rows(&[[0.0, 1.0, 0.0], [0.5, 0.5, 0.5]]).unwrap();
        let (alpha, beta) = (0.7, 0.3);
        let out = composite_loss(
            &model,
            &StepInputs {
                x: x.clone(),
                y: vec![2, 0],
                replay: Some((xr.clone(), vec![1])),
                distill: Some((xd.clone(), zd.clone())),
                old_logits: Some(old.clone()),
            },
            alpha,
            beta,
        )
        .unwrap();

        let zx = model.forward(&x).unwrap();
        let ce = softmax_cross_entropy(&zx, &[2, 0]).unwrap();
        let fc = logit_mse(&zx, &old).unwrap();
        let mut gx = ce.grad.clone();
        gx.add_scaled(&fc.grad, beta).unwrap();
        let g1 = model.forward_backward(&x, &gx).unwrap();
        let cer = softmax_cross_entropy(&model.forward(&xr).unwrap(), &[1]).unwrap();
        let g2 = model.forward_backward(&xr, &cer.grad).unwrap();
        let bc = logit_mse(&model.forward(&xd).unwrap(), &zd).unwrap();
        let g3 = model.forward_backward(&xd, &bc.grad.scale(alpha)).unwrap();
        let sum = g1.add(&g2).unwrap().add(&g3).unwrap();
        assert!(out.grads.max_abs_diff(&sum).unwrap() < 1e-14);
        let total = ce.value + cer.value + alpha * bc.value + beta * fc.value;
        assert!((out.loss.total - total).abs() < 1e-14);
    }

    #[test]
    fn stream_logits_are_returned() {
        let model = linear(&[&[1.0, 2.0]], &[0.0, 1.0]);
        let x = Matrix::from_rows(&[[3.0]]).unwrap();
        let out = composite_loss(
            &model,
            &StepInputs {
                x,
                y: vec![0],
                replay: Some((Matrix::from_rows(&[[9.0]]).unwrap(), vec![1])),
                distill: None,
                old_logits: None,
            },
            1.0,
            1.0,
        )
        .unwrap();
        assert_eq!(out.stream_logits.data(), &[3.0, 7.0]);
    }
}
