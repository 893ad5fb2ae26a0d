use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Labeled samples held by one client (or the pooled dataset).
///
/// Features are stored row-major; `dim` counts every column including the
/// constant bias column added by the loaders.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<f64>,
}

impl ClientDataset {
    pub fn from_flat(features: Vec<f64>, dim: usize, labels: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        if labels.is_empty() {
            return Err(Error::invalid("dataset must hold at least one sample"));
        }
        if features.len() != dim * labels.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * labels.len(),
                found: features.len(),
            });
        }
        if features.iter().chain(&labels).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset"));
        }
        Ok(ClientDataset {
            features,
            dim,
            labels,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<f64>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        Self::from_flat(rows.concat(), dim, labels)
    }

    /// Number of samples, `D_i`.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.features.chunks_exact(self.dim)
    }

    /// Samples at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!("sample index {i} out of range")));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::from_flat(features, self.dim, labels)
    }

    /// Concatenation of several datasets, in order.
    pub fn pooled<'a>(parts: impl IntoIterator<Item = &'a ClientDataset>) -> Result<Self> {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut dim = None;
        for part in parts {
            match dim {
                None => dim = Some(part.dim),
                Some(d) if d != part.dim => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: part.dim,
                    })
                }
                Some(_) => {}
            }
            features.extend_from_slice(&part.features);
            labels.extend_from_slice(&part.labels);
        }
        Self::from_flat(features, dim.unwrap_or(0), labels)
    }

    /// Seeded random split into `(train, held_out)` with
    /// `round(fraction · len)` held-out samples.
    pub fn split_holdout(&self, fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
            return Err(Error::invalid(format!(
                "holdout fraction must lie in (0, 1), got {fraction}"
            )));
        }
        let held = ((self.len() as f64) * fraction).round() as usize;
        if held == 0 || held >= self.len() {
            return Err(Error::invalid("holdout split leaves an empty side"));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (eval, train) = order.split_at(held);
        Ok((self.subset(train)?, self.subset(eval)?))
    }
}

/// Two-class Gaussian blobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    /// Informative feature count; a bias column is appended.
    pub dim: usize,
    /// Distance between the two class means.
    pub separation: f64,
    pub seed: u64,
}

/// Balanced two-class blobs with unit-variance noise. Class means sit at
/// `±separation/2` along a seeded random unit direction; labels are `0`/`1`.
pub fn synthetic_blobs(spec: &SyntheticSpec) -> Result<ClientDataset> {
    if spec.n_samples < 2 || spec.dim == 0 {
        return Err(Error::invalid(
            "synthetic data needs at least 2 samples and 1 dimension",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut direction: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    direction.iter_mut().for_each(|v| *v /= norm);

    let mut labels: Vec<f64> = (0..spec.n_samples)
        .map(|i| if i < spec.n_samples / 2 { 0.0 } else { 1.0 })
        .collect();
    labels.shuffle(&mut rng);

    let width = spec.dim + 1;
    let mut features = Vec::with_capacity(spec.n_samples * width);
    for &y in &labels {
        let offset = (2.0 * y - 1.0) * spec.separation / 2.0;
        for &u in &direction {
            let noise: f64 = rng.sample(StandardNormal);
            features.push(offset * u + noise);
        }
        features.push(1.0);
    }
    ClientDataset::from_flat(features, width, labels)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Loads an IDX image/label pair (MNIST layout) as an even/odd task: label
/// `1` for odd digits. Pixels are scaled to `[0, 1]` and a bias column is
/// appended. `subset` keeps only the first `n` samples.
pub fn load_idx_dataset(
    images: &Path,
    labels: &Path,
    subset: Option<usize>,
) -> Result<ClientDataset> {
    let image_bytes = fs::read(images).map_err(|e| Error::io(images, e))?;
    let label_bytes = fs::read(labels).map_err(|e| Error::io(labels, e))?;

    let idx_err = |path: &Path, reason: &str| Error::Idx {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };

    let header = |bytes: &[u8], words: usize, path: &Path| -> Result<Vec<u32>> {
        if bytes.len() < 4 * words {
            return Err(idx_err(path, "truncated header"));
        }
        Ok(bytes[..4 * words]
            .chunks_exact(4)
            .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    };

    let ih = header(&image_bytes, 4, images)?;
    if ih[0] != IDX_IMAGES_MAGIC {
        return Err(idx_err(images, "bad magic for image file"));
    }
    let lh = header(&label_bytes, 2, labels)?;
    if lh[0] != IDX_LABELS_MAGIC {
        return Err(idx_err(labels, "bad magic for label file"));
    }
    let (count, rows, cols) = (ih[1] as usize, ih[2] as usize, ih[3] as usize);
    if lh[1] as usize != count {
        return Err(idx_err(labels, "label count differs from image count"));
    }
    let pixels = rows * cols;
    if image_bytes.len() != 16 + count * pixels {
        return Err(idx_err(images, "payload length does not match header"));
    }
    if label_bytes.len() != 8 + count {
        return Err(idx_err(labels, "payload length does not match header"));
    }

    let n = subset.map_or(count, |s| s.min(count));
    let width = pixels + 1;
    let mut features = Vec::with_capacity(n * width);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let img = &image_bytes[16 + i * pixels..16 + (i + 1) * pixels];
        features.extend(img.iter().map(|&p| f64::from(p) / 255.0));
        features.push(1.0);
        ys.push(f64::from(label_bytes[8 + i] % 2));
    }
    ClientDataset::from_flat(features, width, ys)
}
