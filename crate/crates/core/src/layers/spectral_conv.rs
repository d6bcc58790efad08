use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_nt, matmul_tn, Matrix};

/// Learnable state of a spectral graph convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct SpecConvParams {
    /// Diagonal of the spectral modulation kernel, one entry per frequency.
    pub g: Vec<f64>,
    /// Feature filter, `m × m′`.
    pub w_f: Matrix,
}

impl SpecConvParams {
    pub fn identity(k: usize, m: usize) -> Self {
        Self { g: vec![1.0; k], w_f: Matrix::identity(m) }
    }
}

/// Cached forward values.
#[derive(Clone, Debug)]
pub struct SpecConvTape {
    pub basis: Arc<Matrix>,
    /// `Uᵀ x`
    pub x_hat: Matrix,
    /// `diag(g) · x_hat`
    pub p: Matrix,
    /// `U · p`, the spatially filtered signal before feature filtering.
    pub r: Matrix,
}

#[derive(Clone, Debug)]
pub struct SpecConvGrads {
    pub x: Matrix,
    pub g: Vec<f64>,
    pub w_f: Matrix,
}

/// `y = U · ((diag(g) · Uᵀx) · w_f)`.
///
/// Evaluated as `(U · diag(g) · Uᵀx) · w_f`, which is the same product
/// reassociated: the two `k × k` multiplies then run on `m` columns rather
/// than `m′`.
pub fn spectral_conv_forward(
    x: &Matrix,
    basis: Arc<Matrix>,
    params: &SpecConvParams,
) -> Result<(Matrix, SpecConvTape)> {
    let k = basis.rows();
    if basis.cols() != k || x.rows() != k || params.g.len() != k {
        return Err(Error::Config(format!(
            "spectral conv: basis {:?}, signal {:?}, kernel length {}",
            basis.shape(),
            x.shape(),
            params.g.len()
        )));
    }
    if params.w_f.rows() != x.cols() {
        return Err(Error::Config(format!(
            "spectral conv: feature filter {:?} for {} input channels",
            params.w_f.shape(),
            x.cols()
        )));
    }
    let x_hat = matmul_tn(&basis, x)?;
    let mut p = x_hat.clone();
    for (i, &gi) in params.g.iter().enumerate() {
        p.row_mut(i).iter_mut().for_each(|v| *v *= gi);
    }
    let r = matmul(&basis, &p)?;
    let y = matmul(&r, &params.w_f)?;
    Ok((y, SpecConvTape { basis, x_hat, p, r }))
}

pub fn spectral_conv_backward(
    grad_y: &Matrix,
    tape: &SpecConvTape,
    params: &SpecConvParams,
) -> Result<SpecConvGrads> {
    if grad_y.rows() != tape.r.rows() || grad_y.cols() != params.w_f.cols() {
        return Err(Error::Config(format!(
            "spectral conv backward: cotangent {:?} does not match output {}x{}",
            grad_y.shape(),
            tape.r.rows(),
            params.w_f.cols()
        )));
    }
    let w_f = matmul_tn(&tape.r, grad_y)?;
    let grad_r = matmul_nt(grad_y, &params.w_f)?;
    let mut grad_p = matmul_tn(&tape.basis, &grad_r)?;
    let g: Vec<f64> = (0..grad_p.rows())
        .map(|i| grad_p.row(i).iter().zip(tape.x_hat.row(i)).map(|(a, b)| a * b).sum())
        .collect();
    for (i, &gi) in params.g.iter().enumerate() {
        grad_p.row_mut(i).iter_mut().for_each(|v| *v *= gi);
    }
    let x = matmul(&tape.basis, &grad_p)?;
    Ok(SpecConvGrads { x, g, w_f })
}
