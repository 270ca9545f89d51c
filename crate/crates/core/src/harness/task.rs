use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::autodiff::{Shape, Tensor};
use crate::rng::{derive_rng, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

/// A dataset with disjoint train/valid/test row splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub name: String,
    pub kind: TaskKind,
    /// `n x d` features.
    pub x: Tensor,
    /// Regression targets, or class indices stored as `f64`.
    pub y: Vec<f64>,
    /// Number of classes; 1 for regression.
    pub classes: usize,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
    pub norm: Option<Normalization>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Targets of one batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Task {
    pub fn features(&self) -> usize {
        self.x.cols()
    }

    /// Width of the model head.
    pub fn outputs(&self) -> usize {
        match self.kind {
            TaskKind::Regression => 1,
            TaskKind::Classification => self.classes,
        }
    }

    pub fn rows(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn batch(&self, idx: &[usize]) -> (Tensor, Targets) {
        let x = self.x.select_rows(idx);
        let t = match self.kind {
            TaskKind::Regression => Targets::Values(idx.iter().map(|&i| self.y[i]).collect()),
            TaskKind::Classification => {
                Targets::Classes(idx.iter().map(|&i| self.y[i] as usize).collect())
            }
        };
        (x, t)
    }

    pub fn split_batch(&self, split: Split) -> (Tensor, Targets) {
        self.batch(self.rows(split))
    }

    /// Add large label noise to a fraction of training rows. Valid and test
    /// rows are left clean.
    pub fn inject_outliers(&mut self, fraction: f64, magnitude: f64, seed: u64) {
        assert_eq!(
            self.kind,
            TaskKind::Regression,
            "outliers apply to regression labels"
        );
        let mut rng = derive_rng(seed, &[0x0u64, 0x7]);
        let mut rows = self.train.clone();
        rows.shuffle(&mut rng);
        let k = (rows.len() as f64 * fraction).round() as usize;
        for &i in &rows[..k] {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            self.y[i] += sign * magnitude * (1.0 + rng.random::<f64>());
        }
    }
}

/// Shuffled 60:20:20 split of `n` rows.
pub fn split_rows<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_train = (n as f64 * 0.6).round() as usize;
    let n_valid = (n as f64 * 0.2).round() as usize;
    let test = idx.split_off(n_train + n_valid);
    let valid = idx.split_off(n_train);
    (idx, valid, test)
}

fn mean_std(vals: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = vals.clone().count() as f64;
    let mean = vals.clone().sum::<f64>() / n;
    let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 0.0 { std } else { 1.0 })
}

/// Z-score features (and regression targets) with train-split statistics.
pub fn normalize(task: &mut Task) {
    let d = task.x.cols();
    let mut x_mean = Vec::with_capacity(d);
    let mut x_std = Vec::with_capacity(d);
    for j in 0..d {
        let (m, s) = mean_std(task.train.iter().map(|&i| task.x.get(i, j)));
        x_mean.push(m);
        x_std.push(s);
    }
    let data = task.x.data_mut();
    for row in data.chunks_mut(d) {
        for j in 0..d {
            row[j] = (row[j] - x_mean[j]) / x_std[j];
        }
    }
    let (y_mean, y_std) = if task.kind == TaskKind::Regression {
        let (m, s) = mean_std(task.train.iter().map(|&i| task.y[i]));
        for v in &mut task.y {
            *v = (*v - m) / s;
        }
        (m, s)
    } else {
        (0.0, 1.0)
    };
    task.norm = Some(Normalization {
        x_mean,
        x_std,
        y_mean,
        y_std,
    });
}

fn check_size(n: usize) -> Result<(), HarnessError> {
    if n < 30 {
        return Err(HarnessError::Config(format!(
            "synthetic tasks need at least 30 rows, got {n}"
        )));
    }
    Ok(())
}

/// `y = sin(x) + 0.1 x^2 + noise`, `x ~ U(-3, 3)`.
pub fn make_synthetic_regression(seed: u64, n: usize, noise: f64) -> Result<Task, HarnessError> {
    check_size(n)?;
    let mut rng = rng_from(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random_range(-3.0..3.0);
        let e: f64 = StandardNormal.sample(&mut rng);
        xs.push(x);
        ys.push(x.sin() + 0.1 * x * x + noise * e);
    }
    let (train, valid, test) = split_rows(n, &mut rng);
    let mut task = Task {
        name: "synth-reg".into(),
        kind: TaskKind::Regression,
        x: Tensor::column(xs),
        y: ys,
        classes: 1,
        train,
        valid,
        test,
        norm: None,
    };
    normalize(&mut task);
    Ok(task)
}

/// Two interleaving half circles with Gaussian jitter.
pub fn make_two_moons(seed: u64, n: usize, noise: f64) -> Result<Task, HarnessError> {
    check_size(n)?;
    let mut rng = rng_from(seed);
    let mut xs = Vec::with_capacity(2 * n);
    let mut ys = Vec::with_capacity(n);
    let outer = n / 2;
    for i in 0..n {
        let (px, py, label) = if i < outer {
            let t = std::f64::consts::PI * i as f64 / (outer.max(2) - 1) as f64;
            (t.cos(), t.sin(), 0.0)
        } else {
            let k = i - outer;
            let t = std::f64::consts::PI * k as f64 / ((n - outer).max(2) - 1) as f64;
            (1.0 - t.cos(), 0.5 - t.sin(), 1.0)
        };
        let ex: f64 = StandardNormal.sample(&mut rng);
        let ey: f64 = StandardNormal.sample(&mut rng);
        xs.push(px + noise * ex);
        xs.push(py + noise * ey);
        ys.push(label);
    }
    let (train, valid, test) = split_rows(n, &mut rng);
    let mut task = Task {
        name: "two-moons".into(),
        kind: TaskKind::Classification,
        x: Tensor::new(Shape::new(n, 2), xs),
        y: ys,
        classes: 2,
        train,
        valid,
        test,
        norm: None,
    };
    normalize(&mut task);
    Ok(task)
}

/// CSV with a header row and a `target` column; all other columns are
/// numeric features.
pub fn load_csv_task(path: &Path, kind: TaskKind, seed: u64) -> Result<Task, HarnessError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| HarnessError::Data(e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| HarnessError::Data(e.to_string()))?
        .clone();
    let label_col = headers
        .iter()
        .position(|h| h.trim() == "target")
        .ok_or(HarnessError::MissingLabel)?;
    let d = headers.len() - 1;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| HarnessError::Data(e.to_string()))?;
        if rec.len() != headers.len() {
            return Err(HarnessError::Data(format!(
                "row {} has {} fields, expected {}",
                line + 2,
                rec.len(),
                headers.len()
            )));
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                HarnessError::Data(format!("row {}: `{field}` is not a number", line + 2))
            })?;
            if j == label_col {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    let n = ys.len();
    if n < 5 {
        return Err(HarnessError::Data(format!("need at least 5 rows, got {n}")));
    }
    let classes = match kind {
        TaskKind::Regression => 1,
        TaskKind::Classification => {
            if ys.iter().any(|&v| v < 0.0 || v.fract() != 0.0) {
                return Err(HarnessError::Data(
                    "class labels must be non-negative integers".into(),
                ));
            }
            ys.iter().fold(0.0f64, |a, &b| a.max(b)) as usize + 1
        }
    };
    let (train, valid, test) = split_rows(n, &mut rng_from(seed));
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    let mut task = Task {
        name,
        kind,
        x: Tensor::new(Shape::new(n, d), xs),
        y: ys,
        classes,
        train,
        valid,
        test,
        norm: None,
    };
    normalize(&mut task);
    Ok(task)
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn be_u32(b: &[u8], at: usize) -> Result<u32, HarnessError> {
    b.get(at..at + 4)
        .map(|s| u32::from_be_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| HarnessError::Data("truncated IDX header".into()))
}

fn read_idx(path: &Path, magic: u32) -> Result<(Vec<usize>, Vec<u8>), HarnessError> {
    let bytes =
        fs::read(path).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
    let got = be_u32(&bytes, 0)?;
    if got != magic {
        return Err(HarnessError::BadMagic {
            expected: magic,
            got,
        });
    }
    let ndim = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndim);
    for k in 0..ndim {
        dims.push(be_u32(&bytes, 4 + 4 * k)? as usize);
    }
    let start = 4 + 4 * ndim;
    let len: usize = dims.iter().product();
    let body = bytes
        .get(start..start + len)
        .ok_or_else(|| HarnessError::Data("truncated IDX body".into()))?;
    Ok((dims, body.to_vec()))
}

fn read_idx_pair(
    images: &Path,
    labels: &Path,
) -> Result<(Vec<f64>, Vec<f64>, usize), HarnessError> {
    let (idims, pixels) = read_idx(images, IDX_IMAGES)?;
    let (ldims, labs) = read_idx(labels, IDX_LABELS)?;
    if idims[0] != ldims[0] {
        return Err(HarnessError::Data(format!(
            "{} images but {} labels",
            idims[0], ldims[0]
        )));
    }
    let d = idims[1] * idims[2];
    Ok((
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        labs.iter().map(|&l| l as f64).collect(),
        d,
    ))
}

/// Images and labels in IDX format. With a separate test pair the training
/// file is split 90:10 into train and valid; otherwise all rows are split
/// 60:20:20. Pixels are scaled to [0, 1].
pub fn load_idx_images(
    images: &Path,
    labels: &Path,
    test: Option<(&Path, &Path)>,
    seed: u64,
) -> Result<Task, HarnessError> {
    let (mut xs, mut ys, d) = read_idx_pair(images, labels)?;
    let n_fit = ys.len();
    let mut rng = rng_from(seed);
    let (train, valid, test_rows) = match test {
        Some((ti, tl)) => {
            let (tx, ty, td) = read_idx_pair(ti, tl)?;
            if td != d {
                return Err(HarnessError::Data(
                    "train and test images differ in size".into(),
                ));
            }
            let mut idx: Vec<usize> = (0..n_fit).collect();
            idx.shuffle(&mut rng);
            let n_train = (n_fit as f64 * 0.9).round() as usize;
            let valid = idx.split_off(n_train);
            let test_rows = (n_fit..n_fit + ty.len()).collect();
            xs.extend(tx);
            ys.extend(ty);
            (idx, valid, test_rows)
        }
        None => split_rows(n_fit, &mut rng),
    };
    let n = ys.len();
    let classes = ys.iter().fold(0.0f64, |a, &b| a.max(b)) as usize + 1;
    Ok(Task {
        name: images
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "idx".into()),
        kind: TaskKind::Classification,
        x: Tensor::new(Shape::new(n, d), xs),
        y: ys,
        classes: classes.max(2),
        train,
        valid,
        test: test_rows,
        norm: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_are_disjoint_and_exhaustive() {
        let t = make_synthetic_regression(3, 100, 0.1).unwrap();
        assert_eq!((t.train.len(), t.valid.len(), t.test.len()), (60, 20, 20));
        let mut all: Vec<usize> = t
            .train
            .iter()
            .chain(&t.valid)
            .chain(&t.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(
            make_two_moons(4, 200, 0.1).unwrap(),
            make_two_moons(4, 200, 0.1).unwrap()
        );
        assert_ne!(
            make_two_moons(4, 200, 0.1).unwrap().x,
            make_two_moons(5, 200, 0.1).unwrap().x
        );
    }

    #[test]
    fn train_statistics_are_standard() {
        let t = make_synthetic_regression(1, 300, 0.2).unwrap();
        let n = t.train.len() as f64;
        let m = t.train.iter().map(|&i| t.x.get(i, 0)).sum::<f64>() / n;
        let s = (t
            .train
            .iter()
            .map(|&i| (t.x.get(i, 0) - m).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        assert!(m.abs() < 1e-10 && (s - 1.0).abs() < 1e-10);
        let my = t.train.iter().map(|&i| t.y[i]).sum::<f64>() / n;
        assert!(my.abs() < 1e-10);
    }

    #[test]
    fn too_small_is_rejected() {
        assert!(make_two_moons(0, 10, 0.1).is_err());
    }

    #[test]
    fn outliers_touch_train_only() {
        let clean = make_synthetic_regression(2, 200, 0.1).unwrap();
        let mut noisy = clean.clone();
        noisy.inject_outliers(0.1, 5.0, 9);
        let changed: Vec<usize> = (0..200).filter(|&i| clean.y[i] != noisy.y[i]).collect();
        assert_eq!(changed.len(), 12);
        assert!(changed.iter().all(|i| clean.train.contains(i)));
    }
}
