//! Benchmark task streams built from MNIST, plus a synthetic Gaussian
//! stream for fast runs.

mod data;
mod idx;

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::Rng;
use crate::scalar::Scalar;

pub use data::{
    load_mnist, Mnist, MnistSplit, PixelTransform, Split, TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES,
    TRAIN_LABELS,
};
pub use idx::{read_idx_images, read_idx_labels, IdxImages, IMAGES_MAGIC, LABELS_MAGIC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    ClassIl,
    TaskIl,
    DomainIl,
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::ClassIl => "class_il",
            ScenarioKind::TaskIl => "task_il",
            ScenarioKind::DomainIl => "domain_il",
        })
    }
}

/// One task `D_t`: train and test portions plus the global classes it uses.
#[derive(Debug, Clone)]
pub struct TaskDataset<T> {
    pub task_id: usize,
    pub class_set: BTreeSet<usize>,
    pub train: Split<T>,
    pub test: Split<T>,
}

/// Ordered tasks of one scenario.
#[derive(Debug, Clone)]
pub struct TaskStream<T> {
    pub kind: ScenarioKind,
    pub total_classes: usize,
    pub tasks: Vec<TaskDataset<T>>,
}

impl<T: Scalar> TaskStream<T> {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn input_dim(&self) -> usize {
        self.tasks.first().map_or(0, |t| t.train.dim())
    }

    /// Checks the label/class-set contract for the stream's kind.
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Config("a task stream needs at least one task".into()));
        }
        let dim = self.input_dim();
        for task in &self.tasks {
            if task.train.dim() != dim || task.test.dim() != dim {
                return Err(Error::Invariant(format!("task {} has a different input width", task.task_id)));
            }
            for &y in task.train.labels().iter().chain(task.test.labels()) {
                if !task.class_set.contains(&y) || y >= self.total_classes {
                    return Err(Error::Invariant(format!(
                        "task {} has label {y} outside its class set",
                        task.task_id
                    )));
                }
            }
        }
        match self.kind {
            ScenarioKind::DomainIl => {
                let first = &self.tasks[0].class_set;
                if self.tasks.iter().any(|t| &t.class_set != first) {
                    return Err(Error::Invariant("domain-IL tasks must share one class set".into()));
                }
            }
            ScenarioKind::ClassIl | ScenarioKind::TaskIl => {
                let mut seen = BTreeSet::new();
                for t in &self.tasks {
                    if !t.class_set.is_disjoint(&seen) {
                        return Err(Error::Invariant(format!(
                            "task {} reuses classes of an earlier task",
                            t.task_id
                        )));
                    }
                    seen.extend(t.class_set.iter().copied());
                }
            }
        }
        Ok(())
    }
}

fn all_digits() -> BTreeSet<usize> {
    (0..10).collect()
}

fn check_task_count(num_tasks: usize) -> Result<()> {
    if num_tasks == 0 {
        return Err(Error::Config("number of tasks must be at least 1".into()));
    }
    Ok(())
}

fn transformed_stream<T: Scalar>(base: &Mnist, transforms: Vec<PixelTransform>) -> TaskStream<T> {
    let tasks = transforms
        .into_iter()
        .enumerate()
        .map(|(t, tr)| {
            let tr = Arc::new(tr);
            TaskDataset {
                task_id: t,
                class_set: all_digits(),
                train: Split::pixels(base.train.clone(), None, tr.clone()),
                test: Split::pixels(base.test.clone(), None, tr),
            }
        })
        .collect();
    TaskStream {
        kind: ScenarioKind::DomainIl,
        total_classes: 10,
        tasks,
    }
}

/// Domain-IL stream where task `t` applies a fixed random pixel permutation
/// to every train and test image. The first task uses the identity.
pub fn permuted_mnist<T: Scalar>(base: &Mnist, num_tasks: usize, seed: u64) -> Result<TaskStream<T>> {
    check_task_count(num_tasks)?;
    let mut rng = Rng::seed_from_u64(seed);
    let n = base.train.pixels_per_image();
    let transforms = (0..num_tasks)
        .map(|t| {
            if t == 0 {
                PixelTransform::Identity
            } else {
                let mut perm: Vec<u32> = (0..n as u32).collect();
                perm.shuffle(&mut rng);
                PixelTransform::Permute(perm)
            }
        })
        .collect();
    Ok(transformed_stream(base, transforms))
}

/// Angles used by [`rotated_mnist`]: 0 for the first task, then uniform in
/// `[0, pi)`.
pub fn rotation_angles(num_tasks: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::seed_from_u64(seed);
    (0..num_tasks)
        .map(|t| if t == 0 { 0.0 } else { rng.random_range(0.0..PI) })
        .collect()
}

/// Domain-IL stream where task `t` rotates every image by a fixed angle.
pub fn rotated_mnist<T: Scalar>(base: &Mnist, num_tasks: usize, seed: u64) -> Result<TaskStream<T>> {
    check_task_count(num_tasks)?;
    let (rows, cols) = base.image_shape();
    let transforms = rotation_angles(num_tasks, seed)
        .into_iter()
        .map(|a| {
            if a == 0.0 {
                PixelTransform::Identity
            } else {
                PixelTransform::rotation(rows, cols, a)
            }
        })
        .collect();
    Ok(transformed_stream(base, transforms))
}

/// Class-IL stream splitting the ten digits into `num_tasks` contiguous
/// groups in ascending order.
pub fn split_mnist<T: Scalar>(base: &Mnist, num_tasks: usize) -> Result<TaskStream<T>> {
    check_task_count(num_tasks)?;
    if 10 % num_tasks != 0 {
        return Err(Error::Config(format!(
            "split MNIST needs a task count dividing 10, got {num_tasks}"
        )));
    }
    let per = 10 / num_tasks;
    let ident = Arc::new(PixelTransform::Identity);
    let select = |split: &MnistSplit, classes: &BTreeSet<usize>| -> Vec<u32> {
        split
            .labels()
            .iter()
            .enumerate()
            .filter(|(_, &l)| classes.contains(&(l as usize)))
            .map(|(i, _)| i as u32)
            .collect()
    };
    let tasks = (0..num_tasks)
        .map(|t| {
            let class_set: BTreeSet<usize> = (t * per..(t + 1) * per).collect();
            TaskDataset {
                task_id: t,
                train: Split::pixels(base.train.clone(), Some(select(&base.train, &class_set)), ident.clone()),
                test: Split::pixels(base.test.clone(), Some(select(&base.test, &class_set)), ident.clone()),
                class_set,
            }
        })
        .collect();
    Ok(TaskStream {
        kind: ScenarioKind::ClassIl,
        total_classes: 10,
        tasks,
    })
}

/// Parameters of [`synthetic_gaussian`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_tasks: usize,
    pub classes_per_task: usize,
    pub dim: usize,
    pub n_per_class: usize,
    pub separation: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_tasks: 5,
            classes_per_task: 2,
            dim: 20,
            n_per_class: 200,
            separation: 4.0,
        }
    }
}

/// Class-IL stream of isotropic unit-variance Gaussian blobs. Each class
/// centre is a random direction scaled to norm `separation`. Train and test
/// sets hold `n_per_class` independent draws per class each.
pub fn synthetic_gaussian<T: Scalar>(spec: SyntheticSpec, seed: u64) -> Result<TaskStream<T>> {
    let SyntheticSpec {
        num_tasks,
        classes_per_task,
        dim,
        n_per_class,
        separation,
    } = spec;
    if num_tasks == 0 || classes_per_task == 0 || dim == 0 || n_per_class == 0 {
        return Err(Error::Config(format!("synthetic stream counts must be positive: {spec:?}")));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::Config(format!("separation must be finite and >= 0, got {separation}")));
    }
    let mut rng = Rng::seed_from_u64(seed);
    let total = num_tasks * classes_per_task;
    let centres: Vec<Vec<f64>> = (0..total)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|a| a / norm * separation).collect()
        })
        .collect();

    let draw = |classes: &[usize], rng: &mut Rng| -> Result<Split<T>> {
        let mut data = Vec::with_capacity(classes.len() * n_per_class * dim);
        let mut labels = Vec::with_capacity(classes.len() * n_per_class);
        for &c in classes {
            for _ in 0..n_per_class {
                for &m in &centres[c] {
                    let noise: f64 = StandardNormal.sample(rng);
                    data.push(T::lit(m + noise));
                }
                labels.push(c);
            }
        }
        Split::dense(Matrix::new(labels.len(), dim, data)?, labels)
    };

    let mut tasks = Vec::with_capacity(num_tasks);
    for t in 0..num_tasks {
        let classes: Vec<usize> = (t * classes_per_task..(t + 1) * classes_per_task).collect();
        let train = draw(&classes, &mut rng)?;
        let test = draw(&classes, &mut rng)?;
        tasks.push(TaskDataset {
            task_id: t,
            class_set: classes.into_iter().collect(),
            train,
            test,
        });
    }
    Ok(TaskStream {
        kind: ScenarioKind::ClassIl,
        total_classes: total,
        tasks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Small fake MNIST: 28x28 images with a bright blob whose position
    /// depends on the label.
    fn fake_mnist(train_per_class: usize, test_per_class: usize) -> Mnist {
        let make = |per: usize, salt: u64| {
            let mut rng = Rng::seed_from_u64(salt);
            let mut pixels = Vec::new();
            let mut labels = Vec::new();
            for digit in 0..10u8 {
                for _ in 0..per {
                    let cy = 9.0 + (digit % 3) as f64 * 5.0 + rng.random_range(-1.0..1.0);
                    let cx = 9.0 + (digit / 3) as f64 * 3.0 + rng.random_range(-1.0..1.0);
                    for r in 0..28 {
                        for c in 0..28 {
                            let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                            pixels.push((255.0 * (-d2 / 8.0).exp()).round() as u8);
                        }
                    }
                    labels.push(digit);
                }
            }
            MnistSplit::from_raw(28, 28, pixels, labels).unwrap()
        };
        Mnist::from_splits(make(train_per_class, 1), make(test_per_class, 2))
    }

    fn sorted_row(m: &Matrix<f64>, r: usize) -> Vec<f64> {
        let mut v = m.row(r).to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    #[test]
    fn permuted_first_task_is_identity_and_rest_preserve_pixels() {
        let base = fake_mnist(3, 2);
        let stream = permuted_mnist::<f64>(&base, 3, 7).unwrap();
        stream.validate().unwrap();
        assert_eq!(stream.kind, ScenarioKind::DomainIl);
        let raw: Matrix<f64> = base.train.to_matrix();
        assert_eq!(stream.tasks[0].train.to_matrix(), raw);
        for task in &stream.tasks[1..] {
            let m = task.train.to_matrix();
            assert_ne!(m, raw);
            for r in 0..m.rows() {
                assert_eq!(sorted_row(&m, r), sorted_row(&raw, r));
            }
            assert_eq!(task.train.labels(), stream.tasks[0].train.labels());
        }
    }

    #[test]
    fn permutations_are_seed_deterministic() {
        let base = fake_mnist(1, 1);
        let a = permuted_mnist::<f64>(&base, 3, 11).unwrap();
        let b = permuted_mnist::<f64>(&base, 3, 11).unwrap();
        let c = permuted_mnist::<f64>(&base, 3, 12).unwrap();
        assert_eq!(a.tasks[2].test.to_matrix(), b.tasks[2].test.to_matrix());
        assert_ne!(a.tasks[2].test.to_matrix(), c.tasks[2].test.to_matrix());
    }

    #[test]
    fn rotation_angles_are_in_range_and_deterministic() {
        let a = rotation_angles(20, 3);
        assert_eq!(a[0], 0.0);
        assert!(a[1..].iter().all(|&t| (0.0..PI).contains(&t)));
        assert_eq!(a, rotation_angles(20, 3));
        assert_ne!(a, rotation_angles(20, 4));
    }

    #[test]
    fn rotation_preserves_mass_within_two_percent() {
        let base = fake_mnist(10, 1);
        let stream = rotated_mnist::<f64>(&base, 6, 5).unwrap();
        stream.validate().unwrap();
        let raw: Matrix<f64> = base.train.to_matrix();
        assert_eq!(stream.tasks[0].train.to_matrix(), raw);
        for task in &stream.tasks[1..] {
            let m = task.train.to_matrix();
            for r in 0..m.rows() {
                let before: f64 = raw.row(r).iter().sum();
                let after: f64 = m.row(r).iter().sum();
                assert!(((after - before) / before).abs() < 0.02, "{before} vs {after}");
                assert!(m.row(r).iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn split_partitions_classes() {
        let base = fake_mnist(4, 2);
        let stream = split_mnist::<f64>(&base, 5).unwrap();
        stream.validate().unwrap();
        assert_eq!(stream.kind, ScenarioKind::ClassIl);
        assert_eq!(stream.tasks[2].class_set, BTreeSet::from([4, 5]));
        let union: BTreeSet<usize> = stream.tasks.iter().flat_map(|t| t.class_set.clone()).collect();
        assert_eq!(union, all_digits());
        let total: usize = stream.tasks.iter().map(|t| t.train.len()).sum();
        assert_eq!(total, base.train.len());
        assert!(matches!(split_mnist::<f64>(&base, 3), Err(Error::Config(_))));
    }

    #[test]
    fn validate_catches_overlapping_classes() {
        let base = fake_mnist(1, 1);
        let mut stream = split_mnist::<f64>(&base, 2).unwrap();
        stream.tasks[1].class_set.insert(0);
        assert!(matches!(stream.validate(), Err(Error::Invariant(_))));
    }

    #[test]
    fn synthetic_is_deterministic_and_disjoint() {
        let spec = SyntheticSpec {
            num_tasks: 3,
            classes_per_task: 2,
            dim: 5,
            n_per_class: 10,
            separation: 5.0,
        };
        let a = synthetic_gaussian::<f64>(spec, 1).unwrap();
        let b = synthetic_gaussian::<f64>(spec, 1).unwrap();
        a.validate().unwrap();
        assert_eq!(a.total_classes, 6);
        assert_eq!(a.tasks[1].class_set, BTreeSet::from([2, 3]));
        assert_eq!(a.tasks[2].train.to_matrix(), b.tasks[2].train.to_matrix());
        assert_eq!(a.tasks[0].train.len(), 20);
        assert!(synthetic_gaussian::<f64>(SyntheticSpec { dim: 0, ..spec }, 1).is_err());
    }

    #[test]
    fn synthetic_centres_have_requested_norm() {
        let spec = SyntheticSpec {
            num_tasks: 1,
            classes_per_task: 1,
            dim: 8,
            n_per_class: 4000,
            separation: 6.0,
        };
        let s = synthetic_gaussian::<f64>(spec, 2).unwrap();
        let m = s.tasks[0].train.to_matrix();
        let mean = m.sum_rows().scale(1.0 / m.rows() as f64);
        let norm = mean.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 6.0).abs() < 0.2, "{norm}");
    }
}
