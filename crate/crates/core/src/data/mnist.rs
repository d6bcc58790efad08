//! MNIST IDX files and the image → point-set conversion.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PointCloud, Sample, Splits};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

const LABEL_MAGIC: u32 = 2049;
const IMAGE_MAGIC: u32 = 2051;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MnistMode {
    /// Every pixel center, intensity as the single feature.
    FullGrid,
    /// The `n` brightest pixels; equal intensities go in row-major order.
    Subsample(usize),
}

impl MnistMode {
    /// `full` or `subsample:<n>`.
    pub fn parse(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "full" => Ok(MnistMode::FullGrid),
            Some(("subsample", n)) => n
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .map(MnistMode::Subsample)
                .ok_or_else(|| Error::Config(format!("invalid subsample size {n:?}"))),
            _ => Err(Error::Config(format!("unknown MNIST mode {s:?} (expected full or subsample:<n>)"))),
        }
    }
}

fn be_u32(buf: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(buf[at..at + 4].try_into().expect("4 bytes"))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Images as `(rows, cols, pixels)`, one `rows·cols` byte vector per image.
pub fn load_idx_images(path: &Path) -> Result<(usize, usize, Vec<Vec<u8>>)> {
    parse_idx_images(&read(path)?, &path.display().to_string())
}

pub fn parse_idx_images(buf: &[u8], source: &str) -> Result<(usize, usize, Vec<Vec<u8>>)> {
    let bad = |msg: String| Error::Input(format!("{source}: {msg}"));
    if buf.len() < 16 {
        return Err(bad("too short for an IDX image header".into()));
    }
    let magic = be_u32(buf, 0);
    if magic != IMAGE_MAGIC {
        return Err(bad(format!("bad magic {magic}, expected {IMAGE_MAGIC}")));
    }
    let (n, rows, cols) = (be_u32(buf, 4) as usize, be_u32(buf, 8) as usize, be_u32(buf, 12) as usize);
    let size = rows * cols;
    if buf.len() - 16 != n * size {
        return Err(bad(format!("{} pixel bytes for {n} images of {rows}x{cols}", buf.len() - 16)));
    }
    Ok((rows, cols, buf[16..].chunks(size.max(1)).take(n).map(<[u8]>::to_vec).collect()))
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    parse_idx_labels(&read(path)?, &path.display().to_string())
}

pub fn parse_idx_labels(buf: &[u8], source: &str) -> Result<Vec<u8>> {
    let bad = |msg: String| Error::Input(format!("{source}: {msg}"));
    if buf.len() < 8 {
        return Err(bad("too short for an IDX label header".into()));
    }
    let magic = be_u32(buf, 0);
    if magic != LABEL_MAGIC {
        return Err(bad(format!("bad magic {magic}, expected {LABEL_MAGIC}")));
    }
    let n = be_u32(buf, 4) as usize;
    if buf.len() - 8 != n {
        return Err(bad(format!("{} label bytes, header says {n}", buf.len() - 8)));
    }
    Ok(buf[8..].to_vec())
}

/// Pixel `(r, c)` center mapped affinely into `[−1, 1]²` as `(x, y)`:
/// columns along x, rows along y.
pub fn pixel_center(r: usize, c: usize, rows: usize, cols: usize) -> [f64; 2] {
    [(2 * c + 1) as f64 / cols as f64 - 1.0, (2 * r + 1) as f64 / rows as f64 - 1.0]
}

pub fn mnist_to_points(pixels: &[u8], rows: usize, cols: usize, mode: MnistMode) -> Result<PointCloud> {
    if pixels.len() != rows * cols {
        return Err(Error::Input(format!("{} pixels for a {rows}x{cols} image", pixels.len())));
    }
    let chosen: Vec<usize> = match mode {
        MnistMode::FullGrid => (0..pixels.len()).collect(),
        MnistMode::Subsample(n) => {
            if n > pixels.len() {
                return Err(Error::Input(format!("cannot pick {n} of {} pixels", pixels.len())));
            }
            let mut idx: Vec<usize> = (0..pixels.len()).collect();
            idx.sort_by(|&a, &b| pixels[b].cmp(&pixels[a]).then(a.cmp(&b)));
            idx.truncate(n);
            idx.sort_unstable();
            idx
        }
    };
    let coords = Matrix::from_fn(chosen.len(), 2, |i, j| pixel_center(chosen[i] / cols, chosen[i] % cols, rows, cols)[j]);
    let feats = Matrix::from_fn(chosen.len(), 1, |i, _| pixels[chosen[i]] as f64 / 255.0);
    PointCloud::with_features(coords, feats)
}

fn split(dir: &Path, images: &str, labels: &str, limit: usize, mode: MnistMode, tag: &str) -> Result<Dataset> {
    let (rows, cols, imgs) = load_idx_images(&dir.join(images))?;
    let labs = load_idx_labels(&dir.join(labels))?;
    if imgs.len() != labs.len() {
        return Err(Error::Input(format!("{tag}: {} images but {} labels", imgs.len(), labs.len())));
    }
    if limit > imgs.len() {
        return Err(Error::Input(format!("{tag}: requested {limit} images, file has {}", imgs.len())));
    }
    let items = imgs
        .iter()
        .zip(&labs)
        .take(limit)
        .map(|(img, &l)| Ok(Sample { cloud: mnist_to_points(img, rows, cols, mode)?, label: l as usize }))
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset {
        items,
        class_names: (0..10).map(|d| d.to_string()).collect(),
        n_part_labels: 0,
        split: tag.into(),
    };
    ds.validate()?;
    Ok(ds)
}

/// Reads the standard four IDX files from `dir`, keeping the first
/// `n_train` / `n_test` images of each split.
pub fn load_mnist(dir: &Path, n_train: usize, n_test: usize, mode: MnistMode) -> Result<Splits> {
    Ok(Splits {
        train: split(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte", n_train, mode, "train")?,
        test: split(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", n_test, mode, "test")?,
    })
}

/// Serializes images in IDX format (used by tests and fixtures).
pub fn idx_images_bytes(rows: usize, cols: usize, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::new();
    for v in [IMAGE_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    images.iter().for_each(|i| out.extend_from_slice(i));
    out
}

pub fn idx_labels_bytes(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    for v in [LABEL_MAGIC, labels.len() as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(labels);
    out
}
