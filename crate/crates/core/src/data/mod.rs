//! Point clouds, datasets, and the loaders/generators that produce them.

pub mod mesh;
pub mod mnist;
pub mod store;
pub mod synth;
pub mod xyz;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub use mesh::{load_off, parse_off, sample_mesh, Mesh};
pub use mnist::{load_idx_images, load_idx_labels, load_mnist, mnist_to_points, MnistMode};
pub use store::{load_splits, save_splits};
pub use synth::{synth_segmentation, synth_shapes, Shape, SHAPE_NAMES};
pub use xyz::{format_xyz, load_xyz, parse_xyz, write_xyz};

/// `n` points with coordinates, optional per-point features (zero columns
/// when absent) and optional per-point labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub coords: Matrix,
    pub features: Matrix,
    pub labels: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn new(coords: Matrix) -> Self {
        let n = coords.rows();
        Self { coords, features: Matrix::zeros(n, 0), labels: None }
    }

    pub fn with_features(coords: Matrix, features: Matrix) -> Result<Self> {
        if features.rows() != coords.rows() {
            return Err(Error::Input(format!(
                "{} feature rows for {} points",
                features.rows(),
                coords.rows()
            )));
        }
        Ok(Self { coords, features, labels: None })
    }

    pub fn len(&self) -> usize {
        self.coords.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.coords.cols()
    }

    /// Rows reordered by `perm` (coordinates, features and labels alike).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            coords: self.coords.select_rows(perm),
            features: self.features.select_rows(perm),
            labels: self.labels.as_ref().map(|l| perm.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Centers on the centroid and scales to unit maximum radius.
    pub fn normalize(&mut self) {
        let (n, d) = self.coords.shape();
        if n == 0 {
            return;
        }
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(self.coords.row(i)) {
                *m += v / n as f64;
            }
        }
        let mut radius: f64 = 0.0;
        for i in 0..n {
            let row = self.coords.row_mut(i);
            for (v, m) in row.iter_mut().zip(&mean) {
                *v -= m;
            }
            radius = radius.max(row.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        if radius > 0.0 {
            self.coords = self.coords.scale(1.0 / radius);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub cloud: PointCloud,
    /// Class label (0 when the dataset is segmentation-only).
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub items: Vec<Sample>,
    pub class_names: Vec<String>,
    /// Number of distinct per-point labels; 0 for classification data.
    pub n_part_labels: usize,
    pub split: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Checks labels are in range and per-point labels (if any) cover every point.
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.items.iter().enumerate() {
            if s.label >= self.class_names.len().max(1) {
                return Err(Error::Input(format!("item {i}: class label {} out of range", s.label)));
            }
            if let Some(l) = &s.cloud.labels {
                if l.len() != s.cloud.len() {
                    return Err(Error::Input(format!("item {i}: {} labels for {} points", l.len(), s.cloud.len())));
                }
                if l.iter().any(|&v| v >= self.n_part_labels) {
                    return Err(Error::Input(format!("item {i}: part label out of range")));
                }
            }
        }
        Ok(())
    }

    /// Canonical little-endian serialization; equal datasets give equal bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let put = |out: &mut Vec<u8>, v: u64| out.extend_from_slice(&v.to_le_bytes());
        put(&mut out, self.class_names.len() as u64);
        for n in &self.class_names {
            put(&mut out, n.len() as u64);
            out.extend_from_slice(n.as_bytes());
        }
        put(&mut out, self.n_part_labels as u64);
        put(&mut out, self.items.len() as u64);
        for s in &self.items {
            put(&mut out, s.label as u64);
            for m in [&s.cloud.coords, &s.cloud.features] {
                put(&mut out, m.rows() as u64);
                put(&mut out, m.cols() as u64);
                for v in m.as_slice() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            match &s.cloud.labels {
                Some(l) => {
                    put(&mut out, l.len() as u64);
                    for &v in l {
                        put(&mut out, v as u64);
                    }
                }
                None => put(&mut out, u64::MAX),
            }
        }
        out
    }

    /// Hex SHA-256 of [`Dataset::to_bytes`].
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A train/test pair.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.train.to_bytes());
        h.update(self.test.to_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_centers_and_scales() {
        let mut c = PointCloud::new(Matrix::from_rows(&[&[1.0, 1.0], &[3.0, 1.0]]));
        c.normalize();
        assert_eq!(c.coords, Matrix::from_rows(&[&[-1.0, 0.0], &[1.0, 0.0]]));
    }

    #[test]
    fn fingerprint_tracks_content() {
        let mk = |v: f64| Dataset {
            items: vec![Sample { cloud: PointCloud::new(Matrix::filled(2, 3, v)), label: 0 }],
            class_names: vec!["a".into()],
            n_part_labels: 0,
            split: "train".into(),
        };
        assert_eq!(mk(1.0).fingerprint(), mk(1.0).fingerprint());
        assert_ne!(mk(1.0).fingerprint(), mk(2.0).fingerprint());
    }
}
