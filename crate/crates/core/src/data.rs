//! Datasets: Gaussian blobs (vectors), procedurally drawn shapes (images), and
//! the CIFAR-10 binary format.
//!
//! Features are stored sample-major: `[n, dim]` for vectors and `[n, H, W, C]`
//! for images. Labels are one-hot `[n, classes]`.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from, tag};
use crate::tensor::Tensor;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const MAX_SHAPE_CLASSES: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Short identifier used in cache keys and ledgers.
    pub name: String,
    pub features: Tensor,
    pub labels: Tensor,
    pub classes: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    fn new(name: String, features: Tensor, labels: Tensor, classes: usize) -> Self {
        let n = features.rows();
        Self { name, features, labels, classes, train: (0..n).collect(), val: Vec::new(), test: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Shape of one sample: `[dim]` or `[H, W, C]`.
    pub fn sample_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    pub fn is_image(&self) -> bool {
        self.sample_shape().len() == 3
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn label_of(&self, i: usize) -> usize {
        let row = self.labels.row(i);
        row.iter().position(|&v| v == 1.0).unwrap_or(0)
    }

    /// Features and labels for the given sample indices.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Tensor) {
        (self.features.select_rows(idx), self.labels.select_rows(idx))
    }

    /// Moves `count` uniformly chosen training samples into the validation split.
    pub fn holdout(mut self, count: usize, seed: u64) -> Result<Self> {
        if count >= self.train.len() {
            return Err(Error::Config(format!(
                "validation holdout of {count} leaves no training data ({} samples)",
                self.train.len()
            )));
        }
        let mut pool = std::mem::take(&mut self.train);
        pool.shuffle(&mut rng_from(derive_seed(seed, &[tag("holdout")])));
        let mut val = pool.split_off(pool.len() - count);
        pool.sort_unstable();
        val.sort_unstable();
        self.val.extend(val);
        self.val.sort_unstable();
        self.train = pool;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.labels.shape() != [n, self.classes] {
            return Err(Error::Shape(format!("labels {:?} for {n} samples of {} classes", self.labels.shape(), self.classes)));
        }
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Config(format!("sample {i} is out of range or in two splits")));
            }
        }
        Ok(())
    }
}

fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut t = Tensor::zeros(vec![labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        t.row_mut(i)[l] = 1.0;
    }
    t
}

/// `n` samples of `classes` isotropic unit-variance Gaussian clusters in `dim`
/// dimensions. Centers sit on a circle of radius `separation` in the first two
/// coordinates (on a line when `dim == 1`). Labels cycle so classes are balanced.
pub fn gaussian_blobs(n: usize, classes: usize, dim: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || dim == 0 || n == 0 {
        return Err(Error::Config(format!("blobs need n > 0, classes >= 2, dim >= 1 (got {n}, {classes}, {dim})")));
    }
    let mut rng = rng_from(derive_seed(seed, &[tag("blobs")]));
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let mut x = Vec::with_capacity(n * dim);
    for &l in &labels {
        let angle = 2.0 * PI * l as f64 / classes as f64;
        for d in 0..dim {
            let c = match (dim, d) {
                (1, _) => separation * l as f64,
                (_, 0) => separation * angle.cos(),
                (_, 1) => separation * angle.sin(),
                _ => 0.0,
            };
            x.push(c + noise.sample(&mut rng));
        }
    }
    let name = format!("blobs-n{n}-c{classes}-d{dim}-s{separation}-seed{seed}");
    Ok(Dataset::new(name, Tensor::new(vec![n, dim], x)?, one_hot(&labels, classes), classes))
}

/// Nominal shape for class `c` at offset `(dx, dy)` from the shape center, with
/// characteristic radius `r`.
fn shape_covers(class: usize, dx: f64, dy: f64, r: f64) -> bool {
    let w = (r * 0.3).max(0.75);
    let d = dx.hypot(dy);
    match class {
        0 => dy.abs() <= w && dx.abs() <= 1.6 * r,
        1 => dx.abs() <= w && dy.abs() <= 1.6 * r,
        2 => d <= 1.1 * r,
        3 => (dx.abs() <= 0.8 * w && dy.abs() <= r) || (dy.abs() <= 0.8 * w && dx.abs() <= r),
        4 => (d - r * 0.8).abs() <= w * 0.8,
        _ => (dx - dy).abs() <= w * 1.2 && dx.abs() <= r && dy.abs() <= r,
    }
}

/// Binary mask of a centered, nominal-size shape.
pub fn shape_mask(class: usize, side: usize) -> Vec<bool> {
    let c = (side as f64 - 1.0) / 2.0;
    let r = side as f64 * 0.3;
    (0..side * side)
        .map(|p| shape_covers(class, (p % side) as f64 - c, (p / side) as f64 - c, r))
        .collect()
}

/// `n` grayscale `side × side` images of up to six shape classes: horizontal bar,
/// vertical bar, disc, cross, ring and diagonal. Position, size and intensity are
/// jittered and mild pixel noise is added; pixels stay in [0, 1].
pub fn synthetic_shapes(n: usize, classes: usize, side: usize, seed: u64) -> Result<Dataset> {
    if !(2..=MAX_SHAPE_CLASSES).contains(&classes) || side < 8 || n == 0 {
        return Err(Error::Config(format!(
            "shapes need n > 0, 2..={MAX_SHAPE_CLASSES} classes and side >= 8 (got {n}, {classes}, {side})"
        )));
    }
    let mut rng = rng_from(derive_seed(seed, &[tag("shapes")]));
    let shift = side as f64 / 8.0;
    let jitter = Uniform::new_inclusive(-shift, shift).expect("valid range");
    let scale = Uniform::new_inclusive(0.22, 0.36).expect("valid range");
    let level = Uniform::new_inclusive(0.6, 1.0).expect("valid range");
    let noise = Normal::new(0.0, 0.05).expect("valid sigma");
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let mut x = Vec::with_capacity(n * side * side);
    let c = (side as f64 - 1.0) / 2.0;
    for &l in &labels {
        let (cx, cy) = (c + jitter.sample(&mut rng), c + jitter.sample(&mut rng));
        let r = side as f64 * scale.sample(&mut rng);
        let v = level.sample(&mut rng);
        for p in 0..side * side {
            let on = shape_covers(l, (p % side) as f64 - cx, (p / side) as f64 - cy, r);
            let base: f64 = if on { v } else { 0.0 };
            x.push((base + noise.sample(&mut rng)).clamp(0.0, 1.0));
        }
    }
    let name = format!("shapes-n{n}-c{classes}-h{side}-seed{seed}");
    Ok(Dataset::new(name, Tensor::new(vec![n, side, side, 1], x)?, one_hot(&labels, classes), classes))
}

fn format_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Format { file: path.display().to_string(), message: message.into() }
}

/// Reads one CIFAR-10 binary batch file into `[n, 32, 32, 3]` pixels in [0, 1]
/// and raw labels.
pub fn read_cifar_file(path: &Path) -> Result<(Tensor, Vec<usize>)> {
    let bytes = fs::read(path).map_err(|e| format_error(path, e.to_string()))?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(format_error(
            path,
            format!("size {} is not a positive multiple of the {CIFAR_RECORD}-byte record", bytes.len()),
        ));
    }
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut x = vec![0.0; n * 3 * plane];
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(format_error(path, format!("record {i} has label byte {}", rec[0])));
        }
        labels.push(rec[0] as usize);
        let out = &mut x[i * 3 * plane..(i + 1) * 3 * plane];
        for ch in 0..3 {
            for p in 0..plane {
                out[p * 3 + ch] = rec[1 + ch * plane + p] as f64 / 255.0;
            }
        }
    }
    Ok((Tensor::new(vec![n, CIFAR_SIDE, CIFAR_SIDE, 3], x)?, labels))
}

/// Loads CIFAR-10 training batches and an optional test batch. A uniformly
/// chosen tenth of the training samples becomes the validation split.
pub fn load_cifar_binary(train_files: &[PathBuf], test_file: Option<&Path>, seed: u64) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for f in train_files {
        let (x, l) = read_cifar_file(f)?;
        pixels.extend(x.into_data());
        labels.extend(l);
    }
    let n_train = labels.len();
    if let Some(f) = test_file {
        let (x, l) = read_cifar_file(f)?;
        pixels.extend(x.into_data());
        labels.extend(l);
    }
    if n_train < 2 {
        return Err(Error::Config("CIFAR training files hold fewer than two records".into()));
    }
    let n = labels.len();
    let features = Tensor::new(vec![n, CIFAR_SIDE, CIFAR_SIDE, 3], pixels)?;
    let mut ds = Dataset::new(format!("cifar10-{n_train}-seed{seed}"), features, one_hot(&labels, 10), 10);
    ds.train.truncate(n_train);
    ds.test = (n_train..n).collect();
    ds.holdout(n_train / 10, seed)
}

/// Writes the given samples in CIFAR-10 binary layout. Single-channel images are
/// replicated into all three planes; images must be 32×32 and classes ≤ 10.
pub fn write_cifar_file(path: &Path, ds: &Dataset, idx: &[usize]) -> Result<()> {
    let shape = ds.sample_shape();
    if !(shape.len() == 3 && shape[0] == CIFAR_SIDE && shape[1] == CIFAR_SIDE && (shape[2] == 1 || shape[2] == 3)) {
        return Err(format_error(path, format!("cannot encode samples of shape {shape:?}")));
    }
    if ds.classes > 10 {
        return Err(format_error(path, format!("cannot encode {} classes in a label byte", ds.classes)));
    }
    let channels = shape[2];
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut out = Vec::with_capacity(idx.len() * CIFAR_RECORD);
    for &i in idx {
        out.push(ds.label_of(i) as u8);
        let px = ds.features.row(i);
        for ch in 0..3 {
            let src = if channels == 1 { 0 } else { ch };
            out.extend((0..plane).map(|p| (px[p * channels + src].clamp(0.0, 1.0) * 255.0).round() as u8));
        }
    }
    fs::write(path, out).map_err(|e| format_error(path, e.to_string()))
}
