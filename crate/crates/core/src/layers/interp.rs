//! Feature propagation: inverse-distance interpolation from a coarse point
//! set back onto a finer one, followed by a shared per-point affine + ReLU.

use crate::error::{Error, Result};
use crate::layers::point_mlp::{point_mlp_backward, point_mlp_forward, PointMlpTape};
use crate::linalg::Matrix;

const NEIGHBORS: usize = 3;
const DIST_EPS: f64 = 1e-10;

/// For each fine point: up to three coarse neighbors and normalized weights.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpWeights {
    pub fine: usize,
    pub coarse: usize,
    pub neighbors: Vec<Vec<(usize, f64)>>,
}

pub fn interp_weights(coarse_coords: &Matrix, fine_coords: &Matrix) -> Result<InterpWeights> {
    let n_coarse = coarse_coords.rows();
    if n_coarse == 0 {
        return Err(Error::Input("feature propagation: empty coarse set".into()));
    }
    if coarse_coords.cols() != fine_coords.cols() {
        return Err(Error::Config("feature propagation: coordinate dimensions differ".into()));
    }
    let nn = NEIGHBORS.min(n_coarse);
    let neighbors = (0..fine_coords.rows())
        .map(|i| {
            let f = fine_coords.row(i);
            let mut d: Vec<(f64, usize)> = (0..n_coarse)
                .map(|c| {
                    let sq: f64 = coarse_coords.row(c).iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum();
                    (sq.sqrt(), c)
                })
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.truncate(nn);
            let inv: Vec<f64> = d.iter().map(|(dist, _)| 1.0 / (dist + DIST_EPS)).collect();
            let total: f64 = inv.iter().sum();
            d.iter().zip(inv).map(|(&(_, c), w)| (c, w / total)).collect()
        })
        .collect();
    Ok(InterpWeights { fine: fine_coords.rows(), coarse: n_coarse, neighbors })
}

pub fn interpolate(coarse_feats: &Matrix, weights: &InterpWeights) -> Result<Matrix> {
    if coarse_feats.rows() != weights.coarse {
        return Err(Error::Config(format!(
            "interpolate: {} coarse feature rows, weights expect {}",
            coarse_feats.rows(),
            weights.coarse
        )));
    }
    let mut out = Matrix::zeros(weights.fine, coarse_feats.cols());
    for (i, nb) in weights.neighbors.iter().enumerate() {
        let row = out.row_mut(i);
        for &(c, w) in nb {
            for (o, v) in row.iter_mut().zip(coarse_feats.row(c)) {
                *o += w * v;
            }
        }
    }
    Ok(out)
}

/// Transpose of [`interpolate`].
pub fn interpolate_backward(grad: &Matrix, weights: &InterpWeights) -> Matrix {
    let mut out = Matrix::zeros(weights.coarse, grad.cols());
    for (i, nb) in weights.neighbors.iter().enumerate() {
        for &(c, w) in nb {
            for (o, v) in out.row_mut(c).iter_mut().zip(grad.row(i)) {
                *o += w * v;
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct FpTape {
    pub interp_cols: usize,
    pub mlp: PointMlpTape,
}

#[derive(Clone, Debug)]
pub struct FpGrads {
    pub coarse_feats: Matrix,
    pub skip_feats: Matrix,
    pub w: Matrix,
    pub b: Vec<f64>,
}

/// Interpolates `coarse_feats` onto the fine points, concatenates
/// `skip_feats` (may have zero columns), then applies `relu(·W + b)`.
pub fn fp_forward(
    coarse_feats: &Matrix,
    weights: &InterpWeights,
    skip_feats: &Matrix,
    w: &Matrix,
    b: &[f64],
) -> Result<(Matrix, FpTape)> {
    let interp = interpolate(coarse_feats, weights)?;
    let input = interp.hconcat(skip_feats)?;
    let (out, mlp) = point_mlp_forward(&input, w, b)?;
    Ok((out, FpTape { interp_cols: interp.cols(), mlp }))
}

pub fn fp_backward(grad: &Matrix, tape: &FpTape, weights: &InterpWeights, w: &Matrix) -> Result<FpGrads> {
    let g = point_mlp_backward(grad, &tape.mlp, w)?;
    let total = g.x.cols();
    let g_interp = g.x.col_range(0, tape.interp_cols);
    let skip_feats = g.x.col_range(tape.interp_cols, total);
    Ok(FpGrads { coarse_feats: interpolate_backward(&g_interp, weights), skip_feats, w: g.w, b: g.b })
}

/// Convenience wrapper computing the interpolation weights on the fly.
pub fn fp_interpolate(
    coarse_coords: &Matrix,
    coarse_feats: &Matrix,
    fine_coords: &Matrix,
    skip_feats: &Matrix,
    w: &Matrix,
    b: &[f64],
) -> Result<Matrix> {
    let weights = interp_weights(coarse_coords, fine_coords)?;
    Ok(fp_forward(coarse_feats, &weights, skip_feats, w, b)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check::{max_rel_error, numeric_grad};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn coincident_point_takes_coarse_value() {
        let coarse = Matrix::from_rows(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[5.0, 5.0]]);
        let feats = Matrix::from_rows(&[&[1.0], &[2.0], &[3.0], &[4.0]]);
        let w = interp_weights(&coarse, &Matrix::from_rows(&[&[1.0, 0.0]])).unwrap();
        let v = interpolate(&feats, &w).unwrap();
        assert!((v[(0, 0)] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn constant_field_is_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let coarse = rand_mat(6, 3, &mut rng);
        let fine = rand_mat(20, 3, &mut rng);
        let feats = Matrix::from_fn(6, 2, |_, j| [0.5, -2.0][j]);
        let v = interpolate(&feats, &interp_weights(&coarse, &fine).unwrap()).unwrap();
        for i in 0..20 {
            assert!((v[(i, 0)] - 0.5).abs() < 1e-12 && (v[(i, 1)] + 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn midpoint_weights_by_hand() {
        let coarse = Matrix::from_rows(&[&[0.0], &[2.0], &[100.0]]);
        let w = interp_weights(&coarse, &Matrix::from_rows(&[&[1.0]])).unwrap();
        let inv = [1.0 / (1.0 + DIST_EPS), 1.0 / (1.0 + DIST_EPS), 1.0 / (99.0 + DIST_EPS)];
        let total: f64 = inv.iter().sum();
        let got: Vec<f64> = w.neighbors[0].iter().map(|&(_, x)| x).collect();
        for (g, e) in got.iter().zip(inv.iter().map(|v| v / total)) {
            assert!((g - e).abs() < 1e-15);
        }
        assert_eq!(w.neighbors[0].iter().map(|&(c, _)| c).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn fewer_than_three_coarse_points() {
        let coarse = Matrix::from_rows(&[&[0.0]]);
        let w = interp_weights(&coarse, &Matrix::from_rows(&[&[3.0], &[4.0]])).unwrap();
        assert_eq!(w.neighbors[1], vec![(0, 1.0)]);
        assert!(interp_weights(&Matrix::zeros(0, 1), &coarse).is_err());
    }

    #[test]
    fn fp_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let coarse = rand_mat(5, 3, &mut rng);
        let fine = rand_mat(9, 3, &mut rng);
        let weights = interp_weights(&coarse, &fine).unwrap();
        let feats = rand_mat(5, 2, &mut rng);
        let skip = rand_mat(9, 1, &mut rng);
        let w = rand_mat(3, 4, &mut rng);
        let b = vec![0.1, -0.1, 0.2, 0.0];
        let cot = rand_mat(9, 4, &mut rng);
        let loss = |f: &Matrix, s: &Matrix| {
            let (o, _) = fp_forward(f, &weights, s, &w, &b).unwrap();
            o.as_slice().iter().zip(cot.as_slice()).map(|(a, c)| a * c).sum::<f64>()
        };
        let (_, tape) = fp_forward(&feats, &weights, &skip, &w, &b).unwrap();
        let g = fp_backward(&cot, &tape, &weights, &w).unwrap();
        let nf = numeric_grad(feats.as_slice(), 1e-5, |v| loss(&Matrix::from_vec(5, 2, v.to_vec()).unwrap(), &skip));
        let ns = numeric_grad(skip.as_slice(), 1e-5, |v| loss(&feats, &Matrix::from_vec(9, 1, v.to_vec()).unwrap()));
        assert!(max_rel_error(g.coarse_feats.as_slice(), &nf) < 1e-4);
        assert!(max_rel_error(g.skip_feats.as_slice(), &ns) < 1e-4);
    }
}
