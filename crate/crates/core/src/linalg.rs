//! Dense row-major matrices and a cyclic Jacobi eigensolver for the small
//! symmetric matrices that arise from local neighborhood graphs.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Config(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows. Panics on ragged input; meant
    /// for literals in tests and examples.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Diagonal matrix with `diag` on the diagonal.
    pub fn diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Rows selected by `indices`, in that order (repeats allowed).
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: indices.len(), cols: self.cols, data }
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hconcat(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Config(format!(
                "hconcat row mismatch: {} vs {}",
                self.rows, other.rows
            )));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Matrix { rows: self.rows, cols, data })
    }

    /// Columns `start..end` as a new matrix.
    pub fn col_range(&self, start: usize, end: usize) -> Matrix {
        Matrix::from_fn(self.rows, end - start, |i, j| self[(i, start + j)])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::Config(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

fn check_inner(what: &str, left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::Config(format!("{what}: inner dimensions differ ({left} vs {right})")));
    }
    Ok(())
}

/// `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_inner("matmul", a.cols, b.rows)?;
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (p, &aip) in a.row(i).iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            for (o, &bv) in out_row.iter_mut().zip(b.row(p)) {
                *o += aip * bv;
            }
        }
    }
    Ok(out)
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_inner("matmul_tn", a.rows, b.rows)?;
    let mut out = Matrix::zeros(a.cols, b.cols);
    for p in 0..a.rows {
        let b_row = b.row(p);
        for (i, &api) in a.row(p).iter().enumerate() {
            if api == 0.0 {
                continue;
            }
            let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += api * bv;
            }
        }
    }
    Ok(out)
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_inner("matmul_nt", a.cols, b.cols)?;
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let a_row = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = dot(a_row, b.row(j));
        }
    }
    Ok(out)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Eigen-decomposition of a real symmetric matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EighResult {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Column `j` pairs with `eigenvalues[j]`.
    pub eigenvectors: Matrix,
}

const SYMMETRY_TOL: f64 = 1e-9;
const MAX_SWEEPS: usize = 64;
const OFFDIAG_TOL: f64 = 1e-12;

/// Cyclic Jacobi eigensolver.
///
/// The input is symmetrized by averaging before iterating. Sweeps run in
/// row-major `(p, q)` order until the largest off-diagonal magnitude falls
/// below `1e-12 · ‖a‖∞`. Eigenpairs are then sorted ascending (stable, so
/// equal eigenvalues keep their diagonal order) and every eigenvector is
/// flipped so that its largest-magnitude component (lowest index on ties) is
/// non-negative. Output is a deterministic function of the input bits.
pub fn jacobi_eigh(a: &Matrix) -> Result<EighResult> {
    let n = a.rows;
    if a.rows != a.cols {
        return Err(Error::Input(format!("jacobi_eigh: matrix is {}x{}, not square", a.rows, a.cols)));
    }
    if !a.is_finite() {
        return Err(Error::Input("jacobi_eigh: non-finite entry".into()));
    }
    let norm = a.norm_inf();
    let sym_tol = SYMMETRY_TOL * norm.max(1.0);
    let mut m = a.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let (aij, aji) = (a[(i, j)], a[(j, i)]);
            if (aij - aji).abs() > sym_tol {
                return Err(Error::Input(format!(
                    "jacobi_eigh: asymmetric at ({i},{j}): {aij} vs {aji}"
                )));
            }
            let avg = 0.5 * (aij + aji);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }

    let mut v = Matrix::identity(n);
    let threshold = OFFDIAG_TOL * norm;
    let mut converged = n < 2 || max_offdiag(&m) <= threshold;
    let mut sweeps = 0;
    while !converged && sweeps < MAX_SWEEPS {
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                rotate(&mut m, &mut v, p, q);
            }
        }
        sweeps += 1;
        converged = max_offdiag(&m) <= threshold;
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "jacobi_eigh: no convergence after {MAX_SWEEPS} sweeps, off-diagonal residual {:e}",
            max_offdiag(&m)
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| m[(i, i)]).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            eigenvectors[(r, dst)] = v[(r, src)];
        }
    }
    canonicalize_signs(&mut eigenvectors);
    Ok(EighResult { eigenvalues, eigenvectors })
}

fn max_offdiag(m: &Matrix) -> f64 {
    let n = m.rows;
    let mut best = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            best = best.max(m[(i, j)].abs());
        }
    }
    best
}

/// One Jacobi rotation annihilating `m[p][q]`, accumulated into `v`.
fn rotate(m: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let apq = m[(p, q)];
    if apq == 0.0 {
        return;
    }
    let app = m[(p, p)];
    let aqq = m[(q, q)];
    let theta = (aqq - app) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    // theta == 0 gives signum 1.0, t = 1 (45 degree rotation)
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let n = m.rows;
    let cols = m.cols;
    let data = m.as_mut_slice();
    for k in 0..n {
        let akp = data[k * cols + p];
        let akq = data[k * cols + q];
        data[k * cols + p] = c * akp - s * akq;
        data[k * cols + q] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = data[p * cols + k];
        let aqk = data[q * cols + k];
        data[p * cols + k] = c * apk - s * aqk;
        data[q * cols + k] = s * apk + c * aqk;
    }
    data[p * cols + q] = 0.0;
    data[q * cols + p] = 0.0;
    let vd = v.as_mut_slice();
    for k in 0..n {
        let vkp = vd[k * n + p];
        let vkq = vd[k * n + q];
        vd[k * n + p] = c * vkp - s * vkq;
        vd[k * n + q] = s * vkp + c * vkq;
    }
}

/// Flips each column so its largest-magnitude entry (first on ties) is >= 0.
pub fn canonicalize_signs(u: &mut Matrix) {
    let (rows, cols) = u.shape();
    for j in 0..cols {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for i in 0..rows {
            let a = u[(i, j)].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if rows > 0 && u[(best, j)] < 0.0 {
            for i in 0..rows {
                u[(i, j)] = -u[(i, j)];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let a = random(n, n, rng);
        Matrix::from_fn(n, n, |i, j| a[(i, j)] + a[(j, i)])
    }

    fn reconstruct(r: &EighResult) -> Matrix {
        let u = &r.eigenvectors;
        let ul = Matrix::from_fn(u.rows(), u.cols(), |i, j| u[(i, j)] * r.eigenvalues[j]);
        matmul_nt(&ul, u).unwrap()
    }

    #[test]
    fn matmul_identity_and_selection() {
        let a = Matrix::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], &[7.0, 8.0, 9.0]]);
        assert_eq!(matmul(&Matrix::identity(3), &a).unwrap(), a);
        let b = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let e = Matrix::from_rows(&[&[0.0], &[1.0]]);
        assert_eq!(matmul(&b, &e).unwrap(), Matrix::from_rows(&[&[2.0], &[4.0]]));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(5, 4, &mut rng);
        let b = random(4, 3, &mut rng);
        let got = matmul(&a, &b).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut s = 0.0;
                for p in 0..4 {
                    s += a[(i, p)] * b[(p, j)];
                }
                assert!((got[(i, j)] - s).abs() < 1e-12);
            }
        }
        let tn = matmul_tn(&a.transpose(), &b).unwrap();
        let nt = matmul_nt(&a, &b.transpose()).unwrap();
        assert!(tn.max_abs_diff(&got) < 1e-12);
        assert!(nt.max_abs_diff(&got) < 1e-12);
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &a), Err(Error::Config(_))));
    }

    #[test]
    fn eigh_identity() {
        let r = jacobi_eigh(&Matrix::identity(4)).unwrap();
        assert_eq!(r.eigenvalues, vec![1.0; 4]);
        assert_eq!(r.eigenvectors, Matrix::identity(4));
    }

    #[test]
    fn eigh_two_by_two_by_hand() {
        let a = Matrix::from_rows(&[&[1.0, -1.0], &[-1.0, 1.0]]);
        let r = jacobi_eigh(&a).unwrap();
        assert!(r.eigenvalues[0].abs() < 1e-14);
        assert!((r.eigenvalues[1] - 2.0).abs() < 1e-14);
        let h = 1.0 / 2f64.sqrt();
        let u = &r.eigenvectors;
        assert!((u[(0, 0)] - h).abs() < 1e-14 && (u[(1, 0)] - h).abs() < 1e-14);
        // largest-magnitude tie resolves to index 0, which must be positive
        assert!((u[(0, 1)] - h).abs() < 1e-14 && (u[(1, 1)] + h).abs() < 1e-14);
    }

    #[test]
    fn eigh_random_32_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let a = random_symmetric(32, &mut rng);
        let r = jacobi_eigh(&a).unwrap();
        assert!(reconstruct(&r).max_abs_diff(&a) < 1e-9);
    }

    #[test]
    fn eigh_rejects_bad_input() {
        assert!(matches!(jacobi_eigh(&Matrix::zeros(2, 3)), Err(Error::Input(_))));
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[0.0, 1.0]]);
        assert!(matches!(jacobi_eigh(&a), Err(Error::Input(_))));
    }

    #[test]
    fn eigh_invariants_up_to_128() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &n in &[1usize, 2, 3, 7, 16, 50, 128] {
            let a = random_symmetric(n, &mut rng);
            let r = jacobi_eigh(&a).unwrap();
            let u = &r.eigenvectors;
            let utu = matmul_tn(u, u).unwrap();
            assert!(utu.max_abs_diff(&Matrix::identity(n)) < 1e-9, "n={n}");
            let tol = 1e-9 * a.norm_inf().max(1.0);
            assert!(reconstruct(&r).max_abs_diff(&a) < tol, "n={n}");
            assert!(r.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
            let again = jacobi_eigh(&a).unwrap();
            assert_eq!(again, r);
        }
    }

    #[test]
    fn sign_canonicalization_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = jacobi_eigh(&random_symmetric(9, &mut rng)).unwrap();
        let mut u = r.eigenvectors.clone();
        canonicalize_signs(&mut u);
        assert_eq!(u, r.eigenvectors);
    }
}
