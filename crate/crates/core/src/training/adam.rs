use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// First/second moment accumulators mirroring the parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[Matrix]) -> Self {
        let zeros = || params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self { m: zeros(), v: zeros(), step: 0 }
    }
}

/// One bias-corrected Adam update. A zero gradient leaves its parameter
/// untouched on every step, whatever the accumulated moments.
pub fn adam_step(params: &mut [Matrix], grads: &[Matrix], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Config(format!(
            "adam: {} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = (0..params.len())
        .find(|&i| params[i].shape() != grads[i].shape() || params[i].shape() != state.m[i].shape())
    {
        return Err(Error::Config(format!(
            "adam: slot {i} has parameter {:?} but gradient {:?}",
            params[i].shape(),
            grads[i].shape()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let (p, g, m, v) = (p.as_mut_slice(), g.as_slice(), m.as_mut_slice(), v.as_mut_slice());
        for i in 0..p.len() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            if g[i] == 0.0 {
                continue;
            }
            p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Matrix::zeros(1, 1)];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[Matrix::filled(1, 1, 1.0)], &mut s, 0.001).unwrap();
        assert!((p[0][(0, 0)] + 0.001).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![Matrix::filled(2, 2, 0.5)];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[Matrix::filled(2, 2, 1.0)], &mut s, 0.01).unwrap();
        let before = p.clone();
        adam_step(&mut p, &[Matrix::zeros(2, 2)], &mut s, 0.01).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn identical_gradients_identical_updates() {
        let mut p = vec![Matrix::from_rows(&[&[0.3, 0.3]])];
        let mut s = AdamState::new(&p);
        for _ in 0..5 {
            adam_step(&mut p, &[Matrix::from_rows(&[&[0.7, 0.7]])], &mut s, 0.01).unwrap();
        }
        assert_eq!(p[0][(0, 0)], p[0][(0, 1)]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = vec![Matrix::zeros(1, 2)];
        let mut s = AdamState::new(&p);
        assert!(adam_step(&mut p, &[Matrix::zeros(2, 1)], &mut s, 0.1).is_err());
    }
}
