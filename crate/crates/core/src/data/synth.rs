//! Synthetic shape families for desk-scale experiments.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::data::{Dataset, PointCloud, Sample};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const SHAPE_NAMES: [&str; 4] = ["sphere", "cube", "cylinder", "disk"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    /// Unit sphere surface.
    Sphere,
    /// Surface of the axis-aligned cube with side 1.
    Cube,
    /// Closed cylinder, radius 0.5, height 2, axis along z.
    Cylinder,
    /// Unit disk in the z = 0 plane.
    Disk,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Sphere, Shape::Cube, Shape::Cylinder, Shape::Disk];

    pub fn parse(s: &str) -> Result<Self> {
        SHAPE_NAMES
            .iter()
            .position(|&n| n == s)
            .map(|i| Self::ALL[i])
            .ok_or_else(|| Error::Config(format!("unknown shape {s:?} (expected one of {SHAPE_NAMES:?})")))
    }

    pub fn name(self) -> &'static str {
        SHAPE_NAMES[self as usize]
    }
}

/// One uniform surface point and its planted part label:
/// sphere upper/lower hemisphere, cube side/top-bottom faces, cylinder
/// wall/caps, disk inner/outer ring of equal area.
fn surface_point(shape: Shape, rng: &mut impl Rng) -> ([f64; 3], usize) {
    match shape {
        Shape::Sphere => loop {
            let v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
            let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if r > 1e-12 {
                let p = [v[0] / r, v[1] / r, v[2] / r];
                break (p, usize::from(p[2] < 0.0));
            }
        },
        Shape::Cube => {
            let face = rng.random_range(0..6);
            let (u, v): (f64, f64) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            let s = if face % 2 == 0 { 0.5 } else { -0.5 };
            let p = match face / 2 {
                0 => [s, u, v],
                1 => [u, s, v],
                _ => [u, v, s],
            };
            (p, usize::from(face / 2 == 2))
        }
        Shape::Cylinder => {
            // wall area 2π·r·h = 2π, caps 2·π·r² = π/2
            let theta = rng.random_range(0.0..2.0 * PI);
            if rng.random::<f64>() < 0.8 {
                ([0.5 * theta.cos(), 0.5 * theta.sin(), rng.random_range(-1.0..1.0)], 0)
            } else {
                let r = 0.5 * rng.random::<f64>().sqrt();
                let z = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                ([r * theta.cos(), r * theta.sin(), z], 1)
            }
        }
        Shape::Disk => {
            let theta = rng.random_range(0.0..2.0 * PI);
            let r = rng.random::<f64>().sqrt();
            ([r * theta.cos(), r * theta.sin(), 0.0], usize::from(r * r >= 0.5))
        }
    }
}

/// Uniformly random rotation from a normalized Gaussian quaternion.
pub fn random_rotation(rng: &mut impl Rng) -> [[f64; 3]; 3] {
    let mut q: [f64; 4] = [0.0; 4];
    loop {
        q.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-12 {
            q.iter_mut().for_each(|v| *v /= n);
            break;
        }
    }
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// `n` points of `shape`, randomly rotated, with Gaussian coordinate noise.
/// Returns the cloud with part labels attached.
pub fn sample_shape(shape: Shape, n: usize, noise: f64, rng: &mut impl Rng) -> Result<PointCloud> {
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config(format!("noise must be a finite non-negative number, got {noise}")));
    }
    let rot = random_rotation(rng);
    let jitter = Normal::new(0.0, noise).expect("valid normal");
    let mut coords = Matrix::zeros(n, 3);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (p, part) = surface_point(shape, rng);
        for (j, v) in coords.row_mut(i).iter_mut().enumerate() {
            *v = rot[j][0] * p[0] + rot[j][1] * p[1] + rot[j][2] * p[2];
            if noise > 0.0 {
                *v += jitter.sample(rng);
            }
        }
        labels.push(part);
    }
    let mut cloud = PointCloud::new(coords);
    cloud.labels = Some(labels);
    Ok(cloud)
}

/// Four-class dataset, `n_per_class` items per shape, classes interleaved
/// (item `i` has class `i mod 4`). Part labels are stripped.
pub fn synth_shapes(n_per_class: usize, n_points: usize, noise: f64, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(4 * n_per_class);
    for _ in 0..n_per_class {
        for (label, &shape) in Shape::ALL.iter().enumerate() {
            let mut cloud = sample_shape(shape, n_points, noise, &mut rng)?;
            cloud.labels = None;
            items.push(Sample { cloud, label });
        }
    }
    Ok(Dataset {
        items,
        class_names: SHAPE_NAMES.iter().map(|s| s.to_string()).collect(),
        n_part_labels: 0,
        split: String::new(),
    })
}

/// Part-segmentation dataset of one shape with its two planted labels.
pub fn synth_segmentation(shape: Shape, n_items: usize, n_points: usize, noise: f64, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = (0..n_items)
        .map(|_| Ok(Sample { cloud: sample_shape(shape, n_points, noise, &mut rng)?, label: 0 }))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { items, class_names: vec![shape.name().to_string()], n_part_labels: 2, split: String::new() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_sphere_has_unit_radii() {
        let ds = synth_shapes(2, 200, 0.0, 1).unwrap();
        for s in ds.items.iter().filter(|s| s.label == 0) {
            for i in 0..s.cloud.len() {
                let r: f64 = s.cloud.coords.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((r - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn noiseless_disk_is_planar() {
        let ds = synth_shapes(3, 300, 0.0, 2).unwrap();
        for s in ds.items.iter().filter(|s| s.label == 3) {
            // covariance determinant vanishes iff rank < 3
            let c = &s.cloud.coords;
            let n = c.rows() as f64;
            let mean: Vec<f64> = (0..3).map(|j| c.column(j).iter().sum::<f64>() / n).collect();
            let cov = Matrix::from_fn(3, 3, |a, b| (0..c.rows()).map(|i| (c[(i, a)] - mean[a]) * (c[(i, b)] - mean[b])).sum::<f64>() / n);
            let eig = crate::linalg::jacobi_eigh(&cov).unwrap();
            assert!(eig.eigenvalues[0].abs() < 1e-12, "{:?}", eig.eigenvalues);
            assert!(eig.eigenvalues[1] > 1e-3);
        }
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let a = synth_shapes(2, 64, 0.02, 5).unwrap();
        assert_eq!(a.to_bytes(), synth_shapes(2, 64, 0.02, 5).unwrap().to_bytes());
        assert_ne!(a.fingerprint(), synth_shapes(2, 64, 0.02, 6).unwrap().fingerprint());
    }

    #[test]
    fn cylinder_parts_follow_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut caps, n) = (0, 4000);
        for _ in 0..n {
            let (p, part) = surface_point(Shape::Cylinder, &mut rng);
            let on_cap = (p[2].abs() - 1.0).abs() < 1e-12;
            assert_eq!(part == 1, on_cap);
            caps += part;
        }
        // caps hold a fifth of the area
        assert!((caps as f64 / n as f64 - 0.2).abs() < 0.03);
        let ds = synth_segmentation(Shape::Cylinder, 2, 100, 0.0, 1).unwrap();
        ds.validate().unwrap();
    }
}
