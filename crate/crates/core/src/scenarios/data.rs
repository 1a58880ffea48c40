use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;
use crate::scenarios::idx::{read_idx_images, read_idx_labels, IdxImages};

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// One IDX image/label file pair kept as raw bytes.
#[derive(Debug, Clone)]
pub struct MnistSplit {
    images: IdxImages,
    labels: Vec<u8>,
}

impl MnistSplit {
    pub fn load(images_path: &Path, labels_path: &Path) -> Result<Self> {
        let images = read_idx_images(images_path)?;
        let labels = read_idx_labels(labels_path)?;
        if images.count != labels.len() {
            return Err(Error::Format {
                path: labels_path.to_path_buf(),
                offset: 4,
                msg: format!(
                    "label count {} does not match image count {} in {}",
                    labels.len(),
                    images.count,
                    images_path.display()
                ),
            });
        }
        Ok(Self { images, labels })
    }

    pub fn from_raw(rows: usize, cols: usize, pixels: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        if pixels.len() != rows * cols * labels.len() {
            return Err(Error::Shape(format!(
                "{} pixel bytes for {} images of {rows}x{cols}",
                pixels.len(),
                labels.len()
            )));
        }
        Ok(Self {
            images: IdxImages {
                count: labels.len(),
                rows,
                cols,
                pixels,
            },
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> (usize, usize) {
        (self.images.rows, self.images.cols)
    }

    pub fn pixels_per_image(&self) -> usize {
        self.images.pixels_per_image()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        self.images.image(i)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Pixels scaled to `[0, 1]`.
    pub fn to_matrix<T: Scalar>(&self) -> Matrix<T> {
        let n = self.pixels_per_image();
        let data = self.images.pixels.iter().map(|&p| pixel_value(p)).collect();
        Matrix::new(self.len(), n, data).expect("IDX sizes are consistent")
    }
}

/// Loads an image/label pair, scaling pixels to `[0, 1]`.
pub fn load_mnist<T: Scalar>(images_path: &Path, labels_path: &Path) -> Result<(Matrix<T>, Vec<usize>)> {
    let split = MnistSplit::load(images_path, labels_path)?;
    let labels = split.labels.iter().map(|&l| l as usize).collect();
    Ok((split.to_matrix(), labels))
}

/// The standard MNIST train and test sets.
#[derive(Debug, Clone)]
pub struct Mnist {
    pub train: Arc<MnistSplit>,
    pub test: Arc<MnistSplit>,
}

impl Mnist {
    /// Loads the four standard files from `dir`, raw or `.gz`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let find = |name: &str| -> Result<PathBuf> {
            let raw = dir.join(name);
            if raw.is_file() {
                return Ok(raw);
            }
            let gz = dir.join(format!("{name}.gz"));
            if gz.is_file() {
                return Ok(gz);
            }
            Err(Error::Format {
                path: raw,
                offset: 0,
                msg: format!("missing MNIST file (looked for {name} and {name}.gz)"),
            })
        };
        let train = MnistSplit::load(&find(TRAIN_IMAGES)?, &find(TRAIN_LABELS)?)?;
        let test = MnistSplit::load(&find(TEST_IMAGES)?, &find(TEST_LABELS)?)?;
        if train.image_shape() != test.image_shape() {
            return Err(Error::Shape("train and test images differ in size".into()));
        }
        Ok(Self {
            train: Arc::new(train),
            test: Arc::new(test),
        })
    }

    pub fn from_splits(train: MnistSplit, test: MnistSplit) -> Self {
        Self {
            train: Arc::new(train),
            test: Arc::new(test),
        }
    }

    pub fn image_shape(&self) -> (usize, usize) {
        self.train.image_shape()
    }
}

#[inline]
pub(crate) fn pixel_value<T: Scalar>(p: u8) -> T {
    T::lit(p as f64 / 255.0)
}

/// Per-task pixel transform applied when rows are materialised.
#[derive(Debug, Clone, PartialEq)]
pub enum PixelTransform {
    Identity,
    /// `out[i] = in[perm[i]]`
    Permute(Vec<u32>),
    /// Four bilinear taps `(source index, weight)` per output pixel.
    Bilinear(Vec<[(u32, f64); 4]>),
}

impl PixelTransform {
    /// Rotation by `angle` radians about the image centre, bilinear
    /// interpolation, zero fill outside the source image.
    pub fn rotation(rows: usize, cols: usize, angle: f64) -> Self {
        let (sin, cos) = angle.sin_cos();
        let cy = (rows as f64 - 1.0) / 2.0;
        let cx = (cols as f64 - 1.0) / 2.0;
        let mut taps = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let dx = c as f64 - cx;
                let dy = r as f64 - cy;
                let sx = cos * dx + sin * dy + cx;
                let sy = -sin * dx + cos * dy + cy;
                let x0 = sx.floor();
                let y0 = sy.floor();
                let fx = sx - x0;
                let fy = sy - y0;
                let mut cell = [(0u32, 0.0f64); 4];
                let corners = [
                    (y0, x0, (1.0 - fx) * (1.0 - fy)),
                    (y0, x0 + 1.0, fx * (1.0 - fy)),
                    (y0 + 1.0, x0, (1.0 - fx) * fy),
                    (y0 + 1.0, x0 + 1.0, fx * fy),
                ];
                for (slot, (y, x, w)) in cell.iter_mut().zip(corners) {
                    if y >= 0.0 && x >= 0.0 && (y as usize) < rows && (x as usize) < cols {
                        *slot = ((y as usize * cols + x as usize) as u32, w);
                    }
                }
                taps.push(cell);
            }
        }
        PixelTransform::Bilinear(taps)
    }

    fn apply<T: Scalar>(&self, src: &[u8], out: &mut [T]) {
        match self {
            PixelTransform::Identity => {
                for (o, &p) in out.iter_mut().zip(src) {
                    *o = pixel_value(p);
                }
            }
            PixelTransform::Permute(perm) => {
                for (o, &j) in out.iter_mut().zip(perm) {
                    *o = pixel_value(src[j as usize]);
                }
            }
            PixelTransform::Bilinear(taps) => {
                for (o, cell) in out.iter_mut().zip(taps) {
                    let v: f64 = cell
                        .iter()
                        .map(|&(j, w)| w * (src[j as usize] as f64 / 255.0))
                        .sum();
                    *o = T::lit(v.clamp(0.0, 1.0));
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Rows<T> {
    Dense(Arc<Matrix<T>>),
    Pixels {
        base: Arc<MnistSplit>,
        /// Rows of `base` in this split; `None` means all of them.
        indices: Option<Arc<Vec<u32>>>,
        transform: Arc<PixelTransform>,
    },
}

/// Inputs and labels of one task's train or test portion. MNIST-backed
/// splits keep only raw bytes plus a transform and materialise rows on
/// demand.
#[derive(Debug, Clone)]
pub struct Split<T> {
    rows: Rows<T>,
    labels: Arc<Vec<usize>>,
    dim: usize,
}

impl<T: Scalar> Split<T> {
    pub fn dense(x: Matrix<T>, labels: Vec<usize>) -> Result<Self> {
        if x.rows() != labels.len() {
            return Err(Error::dim("split", x.shape(), (labels.len(), x.cols())));
        }
        let dim = x.cols();
        Ok(Self {
            rows: Rows::Dense(Arc::new(x)),
            labels: Arc::new(labels),
            dim,
        })
    }

    pub(crate) fn pixels(
        base: Arc<MnistSplit>,
        indices: Option<Vec<u32>>,
        transform: Arc<PixelTransform>,
    ) -> Self {
        let labels: Vec<usize> = match &indices {
            Some(idx) => idx.iter().map(|&i| base.labels()[i as usize] as usize).collect(),
            None => base.labels().iter().map(|&l| l as usize).collect(),
        };
        let dim = base.pixels_per_image();
        Self {
            rows: Rows::Pixels {
                base,
                indices: indices.map(Arc::new),
                transform,
            },
            labels: Arc::new(labels),
            dim,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn write_row(&self, i: usize, out: &mut [T]) {
        match &self.rows {
            Rows::Dense(m) => out.copy_from_slice(m.row(i)),
            Rows::Pixels {
                base,
                indices,
                transform,
            } => {
                let src = match indices {
                    Some(idx) => idx[i] as usize,
                    None => i,
                };
                transform.apply(base.image(src), out);
            }
        }
    }

    pub fn gather(&self, indices: &[usize]) -> Matrix<T> {
        let mut out = Matrix::zeros(indices.len(), self.dim);
        for (r, &i) in indices.iter().enumerate() {
            self.write_row(i, out.row_mut(r));
        }
        out
    }

    pub fn gather_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn rows_range(&self, start: usize, end: usize) -> Matrix<T> {
        let idx: Vec<usize> = (start..end).collect();
        self.gather(&idx)
    }

    pub fn to_matrix(&self) -> Matrix<T> {
        self.rows_range(0, self.len())
    }
}
