//! Local neighborhood graphs: weighted adjacency, the normalized Laplacian,
//! its eigenbasis (the graph Fourier basis), the forward/inverse graph
//! Fourier transform, and Fiedler ordering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{jacobi_eigh, matmul, matmul_tn, Matrix};

/// How pairwise distances become edge weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightKind {
    /// `exp(-d² / σ²)`: near points get large weights.
    GaussianSimilarity,
    /// `d` itself.
    RawDistance,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SigmaRule {
    Fixed(f64),
    /// Mean pairwise distance within the neighborhood (1 if that is 0).
    MeanPairwise,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightScheme {
    pub kind: WeightKind,
    pub sigma: SigmaRule,
}

impl Default for WeightScheme {
    fn default() -> Self {
        Self::gaussian()
    }
}

impl WeightScheme {
    pub fn gaussian() -> Self {
        Self { kind: WeightKind::GaussianSimilarity, sigma: SigmaRule::MeanPairwise }
    }

    pub fn raw_distance() -> Self {
        Self { kind: WeightKind::RawDistance, sigma: SigmaRule::MeanPairwise }
    }

    pub fn gaussian_fixed(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("gaussian sigma must be positive, got {sigma}")));
        }
        Ok(Self { kind: WeightKind::GaussianSimilarity, sigma: SigmaRule::Fixed(sigma) })
    }

    /// Parses `gaussian`, `gaussian:<sigma>`, or `raw_distance`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian" | "gaussian_similarity" => Ok(Self::gaussian()),
            "raw_distance" | "distance" => Ok(Self::raw_distance()),
            other => match other.strip_prefix("gaussian:") {
                Some(v) => {
                    let sigma = v
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad gaussian sigma {v:?}")))?;
                    Self::gaussian_fixed(sigma)
                }
                None => Err(Error::Config(format!(
                    "unknown weight scheme {other:?} (expected gaussian, gaussian:<sigma>, raw_distance)"
                ))),
            },
        }
    }

    pub fn name(&self) -> String {
        match (self.kind, self.sigma) {
            (WeightKind::RawDistance, _) => "raw_distance".into(),
            (WeightKind::GaussianSimilarity, SigmaRule::MeanPairwise) => "gaussian".into(),
            (WeightKind::GaussianSimilarity, SigmaRule::Fixed(s)) => format!("gaussian:{s}"),
        }
    }
}

/// Symmetric, zero-diagonal adjacency over the rows of `points`.
pub fn adjacency(points: &Matrix, scheme: &WeightScheme) -> Matrix {
    let k = points.rows();
    let mut dist = Matrix::zeros(k, k);
    let mut total = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            let d = points
                .row(i)
                .iter()
                .zip(points.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            dist[(i, j)] = d;
            dist[(j, i)] = d;
            total += d;
        }
    }
    match scheme.kind {
        WeightKind::RawDistance => dist,
        WeightKind::GaussianSimilarity => {
            let sigma = match scheme.sigma {
                SigmaRule::Fixed(s) => s,
                SigmaRule::MeanPairwise => {
                    let pairs = k * k.saturating_sub(1) / 2;
                    let mean = if pairs > 0 { total / pairs as f64 } else { 0.0 };
                    if mean > 0.0 {
                        mean
                    } else {
                        1.0
                    }
                }
            };
            let inv = 1.0 / (sigma * sigma);
            let mut w = Matrix::zeros(k, k);
            for i in 0..k {
                for j in (i + 1)..k {
                    let v = (-dist[(i, j)] * dist[(i, j)] * inv).exp();
                    w[(i, j)] = v;
                    w[(j, i)] = v;
                }
            }
            w
        }
    }
}

fn inv_sqrt_degrees(w: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let degrees: Vec<f64> = (0..w.rows()).map(|i| w.row(i).iter().sum()).collect();
    let inv = degrees.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
    (degrees, inv)
}

/// `L = I − D^{-1/2} W D^{-1/2}`; isolated vertices get `D^{-1/2}_ii = 0`.
pub fn normalized_laplacian(w: &Matrix) -> Matrix {
    let (_, inv) = inv_sqrt_degrees(w);
    let k = w.rows();
    Matrix::from_fn(k, k, |i, j| {
        let off = inv[i] * w[(i, j)] * inv[j];
        if i == j {
            1.0 - off
        } else {
            -off
        }
    })
}

/// A neighborhood graph together with its spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborhoodGraph {
    pub w: Matrix,
    pub degrees: Vec<f64>,
    pub laplacian: Matrix,
    /// Graph frequencies, ascending.
    pub eigenvalues: Vec<f64>,
    /// Graph Fourier basis; column `j` pairs with `eigenvalues[j]`.
    pub basis: Matrix,
}

pub fn build_graph(points: &Matrix, scheme: &WeightScheme) -> Result<NeighborhoodGraph> {
    if points.rows() == 0 {
        return Err(Error::Input("build_graph: empty neighborhood".into()));
    }
    let w = adjacency(points, scheme);
    let (degrees, _) = inv_sqrt_degrees(&w);
    let laplacian = normalized_laplacian(&w);
    let eig = jacobi_eigh(&laplacian)?;
    Ok(NeighborhoodGraph {
        w,
        degrees,
        laplacian,
        eigenvalues: eig.eigenvalues,
        basis: eig.eigenvectors,
    })
}

/// Graph Fourier transform `Uᵀ x`.
pub fn gft(u: &Matrix, x: &Matrix) -> Result<Matrix> {
    matmul_tn(u, x)
}

/// Inverse graph Fourier transform `U x̃`.
pub fn igft(u: &Matrix, xt: &Matrix) -> Result<Matrix> {
    matmul(u, xt)
}

/// Vertex indices sorted ascending by their Fiedler-vector entries (ties by
/// index). The Fiedler vector is basis column 1.
pub fn fiedler_order(graph: &NeighborhoodGraph) -> Result<Vec<usize>> {
    fiedler_order_of_basis(&graph.basis)
}

pub fn fiedler_order_of_basis(basis: &Matrix) -> Result<Vec<usize>> {
    let k = basis.rows();
    if k < 2 {
        return Err(Error::Input(format!("fiedler_order: need at least 2 vertices, got {k}")));
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| basis[(a, 1)].total_cmp(&basis[(b, 1)]).then(a.cmp(&b)));
    Ok(order)
}
