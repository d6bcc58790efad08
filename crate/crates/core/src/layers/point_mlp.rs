use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_nt, matmul_tn, Matrix};

/// Mask of positive pre-activations from a bias + ReLU step.
#[derive(Clone, Debug)]
pub struct ReluTape {
    pub active: Vec<bool>,
    pub shape: (usize, usize),
}

/// `relu(y + b)` with `b` broadcast over rows.
pub fn bias_relu_forward(y: &Matrix, bias: &[f64]) -> Result<(Matrix, ReluTape)> {
    if bias.len() != y.cols() {
        return Err(Error::Config(format!("bias length {} for {} channels", bias.len(), y.cols())));
    }
    let mut out = y.clone();
    let mut active = Vec::with_capacity(y.rows() * y.cols());
    for i in 0..y.rows() {
        for (v, b) in out.row_mut(i).iter_mut().zip(bias) {
            let pre = *v + b;
            active.push(pre > 0.0);
            *v = pre.max(0.0);
        }
    }
    Ok((out, ReluTape { active, shape: y.shape() }))
}

/// Returns `(grad_pre, grad_bias)`.
pub fn bias_relu_backward(grad: &Matrix, tape: &ReluTape) -> (Matrix, Vec<f64>) {
    assert_eq!(grad.shape(), tape.shape, "relu backward shape mismatch");
    let mut g = grad.clone();
    for (v, &on) in g.as_mut_slice().iter_mut().zip(&tape.active) {
        if !on {
            *v = 0.0;
        }
    }
    let mut gb = vec![0.0; g.cols()];
    for i in 0..g.rows() {
        for (s, v) in gb.iter_mut().zip(g.row(i)) {
            *s += v;
        }
    }
    (g, gb)
}

#[derive(Clone, Debug)]
pub struct PointMlpTape {
    pub x: Matrix,
    pub relu: ReluTape,
}

#[derive(Clone, Debug)]
pub struct PointMlpGrads {
    pub x: Matrix,
    pub w: Matrix,
    pub b: Vec<f64>,
}

/// Shared per-point affine map followed by ReLU: `relu(x·W + b)` row by row.
pub fn point_mlp_forward(x: &Matrix, w: &Matrix, b: &[f64]) -> Result<(Matrix, PointMlpTape)> {
    let pre = matmul(x, w)?;
    let (out, relu) = bias_relu_forward(&pre, b)?;
    Ok((out, PointMlpTape { x: x.clone(), relu }))
}

pub fn point_mlp_backward(grad: &Matrix, tape: &PointMlpTape, w: &Matrix) -> Result<PointMlpGrads> {
    let (g_pre, b) = bias_relu_backward(grad, &tape.relu);
    Ok(PointMlpGrads { x: matmul_nt(&g_pre, w)?, w: matmul_tn(&tape.x, &g_pre)?, b })
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
    fn zero_weights_give_relu_bias() {
        let x = Matrix::filled(4, 3, 2.0);
        let (y, _) = point_mlp_forward(&x, &Matrix::zeros(3, 2), &[0.5, -0.5]).unwrap();
        for i in 0..4 {
            assert_eq!(y.row(i), &[0.5, 0.0]);
        }
    }

    #[test]
    fn rows_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = rand_mat(3, 4, &mut rng);
        let b: Vec<f64> = (0..4).map(|_| rng.random_range(-0.5..0.5)).collect();
        let mut x = rand_mat(5, 3, &mut rng);
        let dup = x.row(1).to_vec();
        x.row_mut(3).copy_from_slice(&dup);
        let (y, _) = point_mlp_forward(&x, &w, &b).unwrap();
        assert_eq!(y.row(1), y.row(3));
        for i in 0..5 {
            for j in 0..4 {
                let pre: f64 = (0..3).map(|p| x[(i, p)] * w[(p, j)]).sum::<f64>() + b[j];
                assert!((y[(i, j)] - pre.max(0.0)).abs() < 1e-12);
            }
        }
        let mut x2 = x.clone();
        x2[(2, 0)] += 0.3;
        let (y2, _) = point_mlp_forward(&x2, &w, &b).unwrap();
        for i in [0, 1, 3, 4] {
            assert_eq!(y.row(i), y2.row(i));
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_mat(6, 3, &mut rng);
        let w = rand_mat(3, 4, &mut rng);
        let b: Vec<f64> = (0..4).map(|_| rng.random_range(-0.5..0.5)).collect();
        let cot = rand_mat(6, 4, &mut rng);
        let loss = |x: &Matrix, w: &Matrix, b: &[f64]| {
            let (y, _) = point_mlp_forward(x, w, b).unwrap();
            y.as_slice().iter().zip(cot.as_slice()).map(|(a, c)| a * c).sum::<f64>()
        };
        let (_, tape) = point_mlp_forward(&x, &w, &b).unwrap();
        let g = point_mlp_backward(&cot, &tape, &w).unwrap();
        let nx = numeric_grad(x.as_slice(), 1e-5, |v| loss(&Matrix::from_vec(6, 3, v.to_vec()).unwrap(), &w, &b));
        let nw = numeric_grad(w.as_slice(), 1e-5, |v| loss(&x, &Matrix::from_vec(3, 4, v.to_vec()).unwrap(), &b));
        let nb = numeric_grad(&b, 1e-5, |v| loss(&x, &w, v));
        assert!(max_rel_error(g.x.as_slice(), &nx) < 1e-4);
        assert!(max_rel_error(g.w.as_slice(), &nw) < 1e-4);
        assert!(max_rel_error(&g.b, &nb) < 1e-4);
    }
}
