use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "k")]
pub enum Augmentation {
    #[default]
    Identity,
    /// Translate each square image by independent integer offsets drawn
    /// from `[-k, k]` on both axes, filling vacated pixels with zero.
    PixelShift(usize),
}

impl Augmentation {
    pub fn is_identity(&self) -> bool {
        matches!(self, Augmentation::Identity)
    }
}

/// Applies `kind` to every row of `x`. The identity never touches `rng`.
pub fn augment<T: Scalar>(x: &Matrix<T>, kind: Augmentation, rng: &mut Rng) -> Result<Matrix<T>> {
    let k = match kind {
        Augmentation::Identity => return Ok(x.clone()),
        Augmentation::PixelShift(k) => k as i64,
    };
    let side = (x.cols() as f64).sqrt().round() as usize;
    if side * side != x.cols() {
        return Err(Error::Shape(format!(
            "pixel shift needs square images, got rows of width {}",
            x.cols()
        )));
    }
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let dy = rng.random_range(-k..=k);
        let dx = rng.random_range(-k..=k);
        let src = x.row(r);
        let dst = out.row_mut(r);
        for i in 0..side as i64 {
            let si = i - dy;
            if si < 0 || si >= side as i64 {
                continue;
            }
            for j in 0..side as i64 {
                let sj = j - dx;
                if sj < 0 || sj >= side as i64 {
                    continue;
                }
                dst[(i as usize) * side + j as usize] = src[(si as usize) * side + sj as usize];
            }
        }
    }
    Ok(out)
}
