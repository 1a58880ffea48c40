//! Stream construction on the real digits. Skipped with a notice when the
//! four IDX files are not available.

use std::collections::BTreeSet;
use std::path::PathBuf;

use ser_core::scenarios::{load_mnist, permuted_mnist, rotated_mnist, split_mnist, Mnist, TRAIN_IMAGES, TRAIN_LABELS};
use ser_core::{ScenarioKind, Split};

fn data_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("SER_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    let present = dir.join(TRAIN_IMAGES).is_file() || dir.join(format!("{TRAIN_IMAGES}.gz")).is_file();
    if !present {
        eprintln!("MNIST not found in {}, skipping", dir.display());
        return None;
    }
    Some(dir)
}

fn mnist() -> Option<Mnist> {
    data_dir().map(|d| Mnist::load_dir(&d).unwrap())
}

fn row(split: &Split<f64>, i: usize) -> Vec<f64> {
    let mut out = vec![0.0; split.dim()];
    split.write_row(i, &mut out);
    out
}

#[test]
fn published_sizes_and_value_range() {
    let Some(dir) = data_dir() else { return };
    let images = dir.join(TRAIN_IMAGES);
    let labels = dir.join(TRAIN_LABELS);
    if !images.is_file() {
        return;
    }
    let (x, y) = load_mnist::<f32>(&images, &labels).unwrap();
    assert_eq!(x.shape(), (60_000, 784));
    assert!(x.data().iter().all(|v| (0.0..=1.0).contains(v)));
    let mut hist = [0usize; 10];
    y.iter().for_each(|&l| hist[l] += 1);
    assert!(hist.iter().all(|&c| c > 0), "{hist:?}");

    let m = mnist().unwrap();
    assert_eq!(m.train.len(), 60_000);
    assert_eq!(m.test.len(), 10_000);
}

#[test]
fn permuted_tasks_reorder_pixels_only() {
    let Some(m) = mnist() else { return };
    let s = permuted_mnist::<f64>(&m, 4, 7).unwrap();
    assert_eq!(s.kind, ScenarioKind::DomainIl);
    let base = &s.tasks[0];
    for i in [0, 1, 59_999] {
        let raw: Vec<f64> = m.train.image(i).iter().map(|&p| p as f64 / 255.0).collect();
        assert_eq!(row(&base.train, i), raw);
    }
    for t in &s.tasks[1..] {
        assert_eq!(t.train.labels(), base.train.labels());
        for i in [3, 500, 12_345] {
            let mut a = row(&base.train, i);
            let mut b = row(&t.train, i);
            assert_ne!(a, b);
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            assert_eq!(a, b);
        }
    }
    let again = permuted_mnist::<f64>(&m, 4, 7).unwrap();
    assert_eq!(row(&again.tasks[3].test, 9), row(&s.tasks[3].test, 9));
}

#[test]
fn rotation_keeps_pixel_mass_within_two_percent() {
    let Some(m) = mnist() else { return };
    let s = rotated_mnist::<f64>(&m, 6, 0).unwrap();
    for i in 0..100 {
        assert_eq!(row(&s.tasks[0].train, i), row(&permuted_mnist::<f64>(&m, 1, 0).unwrap().tasks[0].train, i));
    }
    for t in &s.tasks[1..] {
        let (mut before, mut after) = (0.0, 0.0);
        for i in 0..100 {
            before += row(&s.tasks[0].train, i).iter().sum::<f64>();
            after += row(&t.train, i).iter().sum::<f64>();
        }
        let rel = (after - before).abs() / before;
        assert!(rel < 0.02, "task {} loses {:.4} of its mass", t.task_id, rel);
    }
}

#[test]
fn split_partitions_the_digits() {
    let Some(m) = mnist() else { return };
    let s = split_mnist::<f64>(&m, 5).unwrap();
    assert_eq!(s.kind, ScenarioKind::ClassIl);
    assert_eq!(s.tasks[2].class_set, BTreeSet::from([4, 5]));
    let total: usize = s.tasks.iter().map(|t| t.train.len()).sum();
    assert_eq!(total, 60_000);
    let test_total: usize = s.tasks.iter().map(|t| t.test.len()).sum();
    assert_eq!(test_total, 10_000);
    for t in &s.tasks {
        assert!(t.train.labels().iter().all(|l| t.class_set.contains(l)));
    }
    s.validate().unwrap();
    assert!(split_mnist::<f64>(&m, 3).is_err());
}
