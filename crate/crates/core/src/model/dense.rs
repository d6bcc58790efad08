//! Fully connected layer: affine → batch norm → ReLU → dropout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_nt, matmul_tn, Matrix};

pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnStats {
    pub fn new(n: usize) -> Self {
        Self { mean: vec![0.0; n], var: vec![1.0; n] }
    }

    /// `run = momentum·run + (1 − momentum)·batch`.
    pub fn update(&mut self, mean: &[f64], var: &[f64], momentum: f64) {
        for (r, b) in self.mean.iter_mut().zip(mean) {
            *r = momentum * *r + (1.0 - momentum) * b;
        }
        for (r, b) in self.var.iter_mut().zip(var) {
            *r = momentum * *r + (1.0 - momentum) * b;
        }
    }
}

pub struct BatchNorm<'a> {
    pub gamma: &'a [f64],
    pub beta: &'a [f64],
    /// Used in eval mode; train mode normalizes with batch statistics and
    /// leaves the running update to the caller (see [`DenseTape::batch_stats`]).
    pub running: &'a BnStats,
}

#[derive(Clone, Debug)]
pub struct DenseTape {
    x: Matrix,
    mode: Mode,
    /// Normalized pre-activations and `1/sqrt(var + ε)` per channel, when BN is on.
    bn: Option<(Matrix, Vec<f64>)>,
    batch_stats: Option<(Vec<f64>, Vec<f64>)>,
    active: Option<Vec<bool>>,
    dropout: Option<Matrix>,
}

#[derive(Clone, Debug)]
pub struct DenseGrads {
    pub x: Matrix,
    pub w: Matrix,
    pub b: Vec<f64>,
    pub gamma: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
}

/// `dropout_mask` holds `0` or `1/keep` per entry and only applies in train mode.
pub fn dense_forward(
    x: &Matrix,
    w: &Matrix,
    b: &[f64],
    bn: Option<BatchNorm<'_>>,
    relu: bool,
    dropout_mask: Option<&Matrix>,
    mode: Mode,
) -> Result<(Matrix, DenseTape)> {
    if b.len() != w.cols() {
        return Err(Error::Config(format!("dense: bias length {} for {} outputs", b.len(), w.cols())));
    }
    let mut z = matmul(x, w)?;
    let (rows, cols) = z.shape();
    for i in 0..rows {
        z.row_mut(i).iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
    }
    let mut batch_stats = None;
    let bn_tape = match bn {
        None => None,
        Some(bn) => {
            if bn.gamma.len() != cols || bn.beta.len() != cols {
                return Err(Error::Config("dense: batch-norm parameter length mismatch".into()));
            }
            let (mean, var) = match mode {
                Mode::Train => {
                    if rows < 2 {
                        return Err(Error::Input(format!("batch norm in train mode needs a batch of at least 2, got {rows}")));
                    }
                    let mut mean = vec![0.0; cols];
                    for i in 0..rows {
                        mean.iter_mut().zip(z.row(i)).for_each(|(m, v)| *m += v);
                    }
                    mean.iter_mut().for_each(|m| *m /= rows as f64);
                    let mut var = vec![0.0; cols];
                    for i in 0..rows {
                        for (j, v) in z.row(i).iter().enumerate() {
                            var[j] += (v - mean[j]) * (v - mean[j]);
                        }
                    }
                    var.iter_mut().for_each(|s| *s /= rows as f64);
                    (mean, var)
                }
                Mode::Eval => (bn.running.mean.clone(), bn.running.var.clone()),
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            let mut xhat = z.clone();
            for i in 0..rows {
                for (j, v) in xhat.row_mut(i).iter_mut().enumerate() {
                    *v = (*v - mean[j]) * inv_std[j];
                }
            }
            for i in 0..rows {
                for (j, (o, h)) in z.row_mut(i).iter_mut().zip(xhat.row(i)).enumerate() {
                    *o = bn.gamma[j] * h + bn.beta[j];
                }
            }
            if mode == Mode::Train {
                batch_stats = Some((mean, var));
            }
            Some((xhat, inv_std))
        }
    };
    let active = relu.then(|| {
        z.as_mut_slice()
            .iter_mut()
            .map(|v| {
                let on = *v > 0.0;
                if !on {
                    *v = 0.0;
                }
                on
            })
            .collect()
    });
    let dropout = match (mode, dropout_mask) {
        (Mode::Train, Some(mask)) => {
            if mask.shape() != z.shape() {
                return Err(Error::Config("dense: dropout mask shape mismatch".into()));
            }
            z.as_mut_slice().iter_mut().zip(mask.as_slice()).for_each(|(v, m)| *v *= m);
            Some(mask.clone())
        }
        _ => None,
    };
    Ok((z, DenseTape { x: x.clone(), mode, bn: bn_tape, batch_stats, active, dropout }))
}

impl DenseTape {
    /// Batch mean and (biased) variance, for train-mode batch norm.
    pub fn batch_stats(&self) -> Option<(&[f64], &[f64])> {
        self.batch_stats.as_ref().map(|(m, v)| (m.as_slice(), v.as_slice()))
    }
}

pub fn dense_backward(grad: &Matrix, tape: &DenseTape, w: &Matrix, gamma: Option<&[f64]>) -> Result<DenseGrads> {
    let mut g = grad.clone();
    if let Some(mask) = &tape.dropout {
        g.as_mut_slice().iter_mut().zip(mask.as_slice()).for_each(|(v, m)| *v *= m);
    }
    if let Some(active) = &tape.active {
        g.as_mut_slice().iter_mut().zip(active).for_each(|(v, &on)| {
            if !on {
                *v = 0.0;
            }
        });
    }
    let (rows, cols) = g.shape();
    let (g_pre, g_gamma, g_beta) = match &tape.bn {
        None => (g, None, None),
        Some((xhat, inv_std)) => {
            let gamma = gamma.ok_or_else(|| Error::Config("dense backward: missing gamma".into()))?;
            let mut d_gamma = vec![0.0; cols];
            let mut d_beta = vec![0.0; cols];
            for i in 0..rows {
                for j in 0..cols {
                    d_gamma[j] += g[(i, j)] * xhat[(i, j)];
                    d_beta[j] += g[(i, j)];
                }
            }
            let mut out = Matrix::zeros(rows, cols);
            match tape.mode {
                Mode::Train => {
                    let n = rows as f64;
                    for i in 0..rows {
                        for j in 0..cols {
                            let dxhat = g[(i, j)] * gamma[j];
                            // d_beta·γ = Σ dxhat, d_gamma·γ = Σ dxhat·xhat
                            out[(i, j)] = inv_std[j] / n
                                * (n * dxhat - d_beta[j] * gamma[j] - xhat[(i, j)] * d_gamma[j] * gamma[j]);
                        }
                    }
                }
                Mode::Eval => {
                    for i in 0..rows {
                        for j in 0..cols {
                            out[(i, j)] = g[(i, j)] * gamma[j] * inv_std[j];
                        }
                    }
                }
            }
            (out, Some(d_gamma), Some(d_beta))
        }
    };
    let mut d_b = vec![0.0; cols];
    for i in 0..rows {
        d_b.iter_mut().zip(g_pre.row(i)).for_each(|(s, v)| *s += v);
    }
    Ok(DenseGrads {
        x: matmul_nt(&g_pre, w)?,
        w: matmul_tn(&tape.x, &g_pre)?,
        b: d_b,
        gamma: g_gamma,
        beta: g_beta,
    })
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
    fn eval_identity_is_relu() {
        let x = Matrix::from_rows(&[&[1.0, -2.0], &[-0.5, 3.0]]);
        let stats = BnStats::new(2);
        let bn = BatchNorm { gamma: &[1.0, 1.0], beta: &[0.0, 0.0], running: &stats };
        let (y, _) = dense_forward(&x, &Matrix::identity(2), &[0.0, 0.0], Some(bn), true, None, Mode::Eval).unwrap();
        let expect = x.map(|v| v.max(0.0));
        assert!(y.max_abs_diff(&expect) < 1e-5 * 3.0);
    }

    #[test]
    fn constant_batch_normalizes_to_beta() {
        let x = Matrix::filled(4, 3, 0.7);
        let mut stats = BnStats::new(2);
        let w = Matrix::from_rows(&[&[1.0, -1.0], &[2.0, 0.5], &[0.0, 1.0]]);
        let bn = BatchNorm { gamma: &[2.0, 3.0], beta: &[0.0, 0.0], running: &stats.clone() };
        let (y, tape) = dense_forward(&x, &w, &[0.1, 0.2], Some(bn), false, None, Mode::Train).unwrap();
        assert!(y.max_abs() < 1e-12);
        let (mean, var) = tape.batch_stats().unwrap();
        stats.update(mean, var, 0.5);
        // running stats moved halfway towards the batch statistics
        assert!((stats.var[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn train_batch_of_one_is_rejected() {
        let stats = BnStats::new(1);
        let bn = BatchNorm { gamma: &[1.0], beta: &[0.0], running: &stats };
        let r = dense_forward(&Matrix::zeros(1, 1), &Matrix::identity(1), &[0.0], Some(bn), true, None, Mode::Train);
        assert!(matches!(r, Err(Error::Input(_))));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_mat(6, 4, &mut rng);
        let w = rand_mat(4, 5, &mut rng);
        let b: Vec<f64> = (0..5).map(|_| rng.random_range(-0.2..0.2)).collect();
        let gamma: Vec<f64> = (0..5).map(|_| rng.random_range(0.5..1.5)).collect();
        let beta: Vec<f64> = (0..5).map(|_| rng.random_range(0.1..0.4)).collect();
        let mask = Matrix::from_fn(6, 5, |_, _| if rng.random_bool(0.5) { 2.0 } else { 0.0 });
        let cot = rand_mat(6, 5, &mut rng);
        for mode in [Mode::Train, Mode::Eval] {
            let loss = |x: &Matrix, w: &Matrix, b: &[f64], gamma: &[f64], beta: &[f64]| {
                let stats = BnStats { mean: vec![0.1; 5], var: vec![0.8; 5] };
                let bn = BatchNorm { gamma, beta, running: &stats };
                let (y, _) = dense_forward(x, w, b, Some(bn), true, Some(&mask), mode).unwrap();
                y.as_slice().iter().zip(cot.as_slice()).map(|(a, c)| a * c).sum::<f64>()
            };
            let stats = BnStats { mean: vec![0.1; 5], var: vec![0.8; 5] };
            let bn = BatchNorm { gamma: &gamma, beta: &beta, running: &stats };
            let (_, tape) = dense_forward(&x, &w, &b, Some(bn), true, Some(&mask), mode).unwrap();
            let g = dense_backward(&cot, &tape, &w, Some(&gamma)).unwrap();
            let nx = numeric_grad(x.as_slice(), 1e-5, |v| loss(&Matrix::from_vec(6, 4, v.to_vec()).unwrap(), &w, &b, &gamma, &beta));
            let nw = numeric_grad(w.as_slice(), 1e-5, |v| loss(&x, &Matrix::from_vec(4, 5, v.to_vec()).unwrap(), &b, &gamma, &beta));
            let nb = numeric_grad(&b, 1e-5, |v| loss(&x, &w, v, &gamma, &beta));
            let ng = numeric_grad(&gamma, 1e-5, |v| loss(&x, &w, &b, v, &beta));
            let nbe = numeric_grad(&beta, 1e-5, |v| loss(&x, &w, &b, &gamma, v));
            assert!(max_rel_error(g.x.as_slice(), &nx) < 1e-4, "{mode:?} x");
            assert!(max_rel_error(g.w.as_slice(), &nw) < 1e-4, "{mode:?} w");
            assert!(max_rel_error(&g.b, &nb) < 1e-4, "{mode:?} b");
            assert!(max_rel_error(g.gamma.as_ref().unwrap(), &ng) < 1e-4, "{mode:?} gamma");
            assert!(max_rel_error(g.beta.as_ref().unwrap(), &nbe) < 1e-4, "{mode:?} beta");
        }
    }
}
