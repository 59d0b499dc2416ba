//! MNIST and CIFAR-10 readers, train/validation splitting, normalization and
//! augmentation.

use std::fs;
use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ReadBytesExt};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("invalid split: {0}")]
    Split(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
        }
    }

    /// `[C, H, W]` of one image.
    pub fn image_shape(self) -> [usize; 3] {
        match self {
            DatasetKind::Mnist => [1, 28, 28],
            DatasetKind::Cifar10 => [3, 32, 32],
        }
    }

    /// Subdirectory of the data root holding this dataset.
    pub fn default_dir(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar-10-batches-bin",
        }
    }

    pub fn load(self, dir: &Path) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetKind::Mnist => load_mnist(dir),
            DatasetKind::Cifar10 => load_cifar10(dir),
        }
    }
}

/// Images `[N, C, H, W]` with pixel values in `[0, 1]` and their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        let n = images.shape().first().copied().unwrap_or(0);
        if images.ndim() != 4 || n != labels.len() {
            return Err(DataError::Split(format!(
                "images {:?} do not match {} labels",
                images.shape(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(DataError::Split(format!("label {bad} outside 0..{classes}")));
        }
        Ok(Self {
            images,
            labels,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]`.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    fn image_len(&self) -> usize {
        self.image_shape().iter().product()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let len = self.image_len();
        &self.images.data()[i * len..(i + 1) * len]
    }

    /// New dataset holding the given samples in the given order.
    pub fn subset(&self, indices: &[usize], split: Split) -> Dataset {
        let [c, h, w] = self.image_shape();
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Dataset {
            images: Tensor::new(vec![indices.len(), c, h, w], data).expect("sizes agree"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            split,
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn format_err(path: &Path, msg: impl Into<String>) -> DataError {
    DataError::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Parses an IDX image file into `(count, rows, cols, pixels)`.
fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = read_file(path)?;
    let mut cur = Cursor::new(&bytes);
    let mut header = [0u32; 4];
    for h in &mut header {
        *h = cur
            .read_u32::<BigEndian>()
            .map_err(|_| format_err(path, "truncated IDX header"))?;
    }
    let [magic, n, rows, cols] = header;
    if magic != 2051 {
        return Err(format_err(path, format!("bad magic {magic}, expected 2051 for images")));
    }
    let (n, rows, cols) = (n as usize, rows as usize, cols as usize);
    let expected = n * rows * cols;
    let mut pixels = Vec::with_capacity(expected);
    cur.read_to_end(&mut pixels).expect("reading from memory");
    if pixels.len() != expected {
        return Err(format_err(
            path,
            format!("expected {expected} pixel bytes for {n} images, found {}", pixels.len()),
        ));
    }
    Ok((n, rows, cols, pixels))
}

fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    let mut cur = Cursor::new(&bytes);
    let mut header = [0u32; 2];
    for h in &mut header {
        *h = cur
            .read_u32::<BigEndian>()
            .map_err(|_| format_err(path, "truncated IDX header"))?;
    }
    let [magic, n] = header;
    if magic != 2049 {
        return Err(format_err(path, format!("bad magic {magic}, expected 2049 for labels")));
    }
    let mut labels = Vec::with_capacity(n as usize);
    cur.read_to_end(&mut labels).expect("reading from memory");
    if labels.len() != n as usize {
        return Err(format_err(
            path,
            format!("expected {n} labels, found {}", labels.len()),
        ));
    }
    Ok(labels)
}

fn load_idx_pair(dir: &Path, images: &str, labels: &str, split: Split) -> Result<Dataset> {
    let img_path = dir.join(images);
    let lbl_path = dir.join(labels);
    let (n, rows, cols, pixels) = read_idx_images(&img_path)?;
    let labels = read_idx_labels(&lbl_path)?;
    if labels.len() != n {
        return Err(format_err(
            &lbl_path,
            format!("{} labels for {n} images in {}", labels.len(), img_path.display()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(format_err(&lbl_path, format!("label {bad} outside 0..10")));
    }
    let data = pixels.iter().map(|&b| b as f32 / 255.0).collect();
    let images = Tensor::new(vec![n, 1, rows, cols], data).expect("sizes agree");
    Dataset::new(images, labels.into_iter().map(usize::from).collect(), 10, split)
}

/// Reads the four uncompressed IDX files from `dir`.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_idx_pair(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte", Split::Train)?;
    let test = load_idx_pair(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", Split::Test)?;
    Ok((train, test))
}

const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

fn read_cifar_batches(paths: &[PathBuf], split: Split) -> Result<Dataset> {
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for path in paths {
        let bytes = read_file(path)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(format_err(
                path,
                format!("length {} is not a multiple of the {CIFAR_RECORD}-byte record", bytes.len()),
            ));
        }
        for rec in bytes.chunks_exact(CIFAR_RECORD) {
            if rec[0] > 9 {
                return Err(format_err(path, format!("label {} outside 0..10", rec[0])));
            }
            labels.push(rec[0] as usize);
            data.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
        }
    }
    let images = Tensor::new(vec![labels.len(), 3, 32, 32], data).expect("sizes agree");
    Dataset::new(images, labels, 10, split)
}

/// Reads `data_batch_{1..5}.bin` and `test_batch.bin` from `dir`.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train: Vec<PathBuf> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
    let train = read_cifar_batches(&train, Split::Train)?;
    let test = read_cifar_batches(&[dir.join("test_batch.bin")], Split::Test)?;
    Ok((train, test))
}

/// Seeded random partition into `(train, val)` with `round(n * val_fraction)`
/// validation samples. Each part keeps the shuffled order.
pub fn split_train_val(data: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(DataError::Split(format!(
            "val_fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    let (train_idx, val_idx) = split_indices(data.len(), val_fraction, seed);
    Ok((data.subset(&train_idx, Split::Train), data.subset(&val_idx, Split::Val)))
}

/// Index sets of [`split_train_val`].
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, Stream::Split));
    let n_val = (n as f64 * val_fraction).round() as usize;
    let val = idx.split_off(n - n_val.min(n));
    (idx, val)
}

/// Per-channel mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn compute(data: &Dataset) -> NormStats {
        let [c, h, w] = data.image_shape();
        let plane = h * w;
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        for i in 0..data.len() {
            for (ch, px) in data.image(i).chunks_exact(plane).enumerate() {
                for &v in px {
                    let v = v as f64;
                    sum[ch] += v;
                    sq[ch] += v * v;
                }
            }
        }
        let count = (data.len() * plane).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / count - m * m).max(0.0).sqrt().max(1e-8))
            .collect();
        NormStats { mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Augment {
    None,
    /// Horizontal flip with probability one half.
    Flip,
    /// Zero-pad by 4 and crop back to the original size at a random offset.
    Crop,
    FlipCrop,
}

impl Augment {
    fn flips(self) -> bool {
        matches!(self, Augment::Flip | Augment::FlipCrop)
    }

    fn crops(self) -> bool {
        matches!(self, Augment::Crop | Augment::FlipCrop)
    }
}

const CROP_PAD: usize = 4;

/// Mirrors each row of every channel plane of a `[C, H, W]` image in place.
pub fn flip_horizontal(image: &mut [f32], width: usize) {
    for row in image.chunks_exact_mut(width) {
        row.reverse();
    }
}

/// Padded random crop: output pixel `(y, x)` reads input `(y + dy - 4, x + dx - 4)`,
/// zero outside, for offsets `dy, dx` in `0..=8`.
fn crop_shift(image: &[f32], c: usize, h: usize, w: usize, dy: usize, dx: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; image.len()];
    for ch in 0..c {
        for y in 0..h {
            let Some(sy) = (y + dy).checked_sub(CROP_PAD).filter(|&v| v < h) else {
                continue;
            };
            for x in 0..w {
                if let Some(sx) = (x + dx).checked_sub(CROP_PAD).filter(|&v| v < w) {
                    out[(ch * h + y) * w + x] = image[(ch * h + sy) * w + sx];
                }
            }
        }
    }
    out
}

/// Gathers the samples `indices` into a standardized `[B, C, H, W]` batch,
/// applying augmentation before standardization. Padding from cropping is
/// filled with raw zero pixels.
pub fn normalize_and_augment(
    data: &Dataset,
    indices: &[usize],
    stats: &NormStats,
    augment: Augment,
    rng: &mut impl Rng,
) -> (Tensor<f32>, Vec<usize>) {
    let [c, h, w] = data.image_shape();
    let plane = h * w;
    let mut out = Vec::with_capacity(indices.len() * c * plane);
    for &i in indices {
        let mut img = data.image(i).to_vec();
        if augment.flips() && rng.random::<bool>() {
            flip_horizontal(&mut img, w);
        }
        if augment.crops() {
            let dy = rng.random_range(0..=2 * CROP_PAD);
            let dx = rng.random_range(0..=2 * CROP_PAD);
            img = crop_shift(&img, c, h, w, dy, dx);
        }
        for (ch, px) in img.chunks_exact(plane).enumerate() {
            let (m, s) = (stats.mean[ch] as f32, stats.std[ch] as f32);
            out.extend(px.iter().map(|&v| (v - m) / s));
        }
    }
    let labels = indices.iter().map(|&i| data.labels[i]).collect();
    (
        Tensor::new(vec![indices.len(), c, h, w], out).expect("sizes agree"),
        labels,
    )
}
