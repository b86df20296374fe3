//! Datasets, IDX ingestion, synthetic blobs and minibatching.

mod idx;
mod rng;

pub use idx::{encode_idx_images, encode_idx_labels, load_idx, parse_idx, write_idx};
pub use rng::RngState;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Environment variable naming the directory that holds IDX files.
pub const DATA_DIR_ENV: &str = "BPRG_DATA_DIR";

/// Labelled samples; features are scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Tensor<f32>,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(features: Tensor<f32>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.shape()[0] != labels.len() {
            return Err(Error::Format(format!(
                "{} feature rows but {} labels",
                features.shape()[0],
                labels.len()
            )));
        }
        if class_count == 0 {
            return Err(Error::Config("class_count must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Format(format!(
                "label {bad} ≥ class count {class_count}"
            )));
        }
        Ok(Self {
            features,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Tensor<f32> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Shape of one sample, e.g. `[784]` or `[1, 28, 28]`.
    pub fn sample_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    fn sample_len(&self) -> usize {
        self.sample_shape().iter().product()
    }

    /// Gathers the given rows into a batch tensor plus labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let d = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&self.features.data()[i * d..(i + 1) * d]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor::from_parts_unchecked(shape, data), labels)
    }

    /// First `n` samples (all of them when `n ≥ len`).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let (features, labels) = self.batch(&(0..n).collect::<Vec<_>>());
        Dataset {
            features,
            labels,
            class_count: self.class_count,
        }
    }

    /// Reinterprets every sample with a new per-sample shape of equal size.
    pub fn reshape_samples(&self, sample_shape: &[usize]) -> Result<Dataset> {
        let mut shape = vec![self.len()];
        shape.extend_from_slice(sample_shape);
        Ok(Dataset {
            features: self.features.reshape(shape)?,
            labels: self.labels.clone(),
            class_count: self.class_count,
        })
    }
}

/// Gaussian-free blobs: class `c` sits at the binary pattern of `c` in
/// `{0,1}^d` (bit `j` → coordinate `j`), perturbed by `spread·(2u − 1)` per
/// coordinate and clamped to `[0, 1]`. Classes are assigned round-robin.
pub fn synth_blobs(
    n: usize,
    d: usize,
    classes: usize,
    spread: f64,
    rng: &mut RngState,
) -> Result<Dataset> {
    if n == 0 || d == 0 || classes == 0 {
        return Err(Error::Config(
            "synth_blobs needs n, d and classes positive".into(),
        ));
    }
    let fits = d >= usize::BITS as usize || classes <= (1usize << d);
    if !fits {
        return Err(Error::Config(format!(
            "{classes} classes do not fit in {{0,1}}^{d}"
        )));
    }
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        labels.push(c);
        for j in 0..d {
            let mean = if j < usize::BITS as usize && (c >> j) & 1 == 1 {
                1.0
            } else {
                0.0
            };
            let v = mean + spread * (2.0 * rng.next_f64() - 1.0);
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Dataset::new(Tensor::new(vec![n, d], data)?, labels, classes)
}

/// Shuffled index chunks covering `0..n` exactly once.
pub fn minibatches(n: usize, batch_size: usize, rng: &mut RngState) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Standard MNIST file names inside `dir`, as (train images, train labels,
/// test images, test labels).
pub fn mnist_paths(dir: &Path) -> [PathBuf; 4] {
    [
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
        dir.join("t10k-images-idx3-ubyte"),
        dir.join("t10k-labels-idx1-ubyte"),
    ]
}

/// The MNIST directory from the environment, if it holds all four files.
pub fn mnist_dir_from_env() -> Option<PathBuf> {
    let dir = PathBuf::from(std::env::var_os(DATA_DIR_ENV)?);
    mnist_paths(&dir).iter().all(|p| p.is_file()).then_some(dir)
}
