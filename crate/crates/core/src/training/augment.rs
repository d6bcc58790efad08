//! Training-time augmentation, applied in a fixed order: rotation about the
//! up axis (y), small rotations about x, y and z, per-point jitter, global
//! scale, global translation.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::PointCloud;

pub const PERTURB_SIGMA: f64 = 0.06;
pub const PERTURB_CLIP: f64 = 0.18;
pub const JITTER_SIGMA: f64 = 0.01;
pub const JITTER_CLIP: f64 = 0.05;
pub const SCALE_RANGE: (f64, f64) = (0.8, 1.25);
pub const TRANSLATE_RANGE: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Augment {
    pub up_rotation: bool,
    pub perturb_rotation: bool,
    pub jitter: bool,
    pub scale: bool,
    pub translate: bool,
    /// Rotate 3-channel features along with the coordinates.
    pub features_are_normals: bool,
}

impl Augment {
    pub fn all() -> Self {
        Self { up_rotation: true, perturb_rotation: true, jitter: true, scale: true, translate: true, features_are_normals: false }
    }

    pub fn is_identity(&self) -> bool {
        !(self.up_rotation || self.perturb_rotation || self.jitter || self.scale || self.translate)
    }
}

type Mat3 = [[f64; 3]; 3];

fn mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn rot_x(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn rot_y(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

fn rot_z(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn clipped(rng: &mut impl Rng, sigma: f64, clip: f64) -> f64 {
    Normal::new(0.0, sigma).expect("valid sigma").sample(rng).clamp(-clip, clip)
}

fn rotate_rows(m: &mut crate::linalg::Matrix, r: &Mat3) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let p = [row[0], row[1], row[2]];
        for (j, v) in row.iter_mut().enumerate() {
            *v = r[j][0] * p[0] + r[j][1] * p[1] + r[j][2] * p[2];
        }
    }
}

/// Returns an augmented copy. Rotations only apply to 3-D clouds; every
/// other transform works in any dimension.
pub fn augment(cloud: &PointCloud, seed: u64, switches: &Augment) -> PointCloud {
    let mut out = cloud.clone();
    if switches.is_identity() {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cloud.dim();
    if d == 3 && (switches.up_rotation || switches.perturb_rotation) {
        let mut r: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        if switches.up_rotation {
            r = rot_y(rng.random_range(0.0..2.0 * PI));
        }
        if switches.perturb_rotation {
            let (ax, ay, az) = (
                clipped(&mut rng, PERTURB_SIGMA, PERTURB_CLIP),
                clipped(&mut rng, PERTURB_SIGMA, PERTURB_CLIP),
                clipped(&mut rng, PERTURB_SIGMA, PERTURB_CLIP),
            );
            r = mul(&mul(&rot_z(az), &mul(&rot_y(ay), &rot_x(ax))), &r);
        }
        rotate_rows(&mut out.coords, &r);
        if switches.features_are_normals && out.features.cols() == 3 {
            rotate_rows(&mut out.features, &r);
        }
    }
    if switches.jitter {
        for v in out.coords.as_mut_slice() {
            *v += clipped(&mut rng, JITTER_SIGMA, JITTER_CLIP);
        }
    }
    if switches.scale {
        let s = rng.random_range(SCALE_RANGE.0..SCALE_RANGE.1);
        out.coords = out.coords.scale(s);
    }
    if switches.translate {
        let shift: Vec<f64> = (0..d).map(|_| rng.random_range(-TRANSLATE_RANGE..TRANSLATE_RANGE)).collect();
        for i in 0..out.len() {
            out.coords.row_mut(i).iter_mut().zip(&shift).for_each(|(v, s)| *v += s);
        }
    }
    out
}
