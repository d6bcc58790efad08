//! Centroid selection by farthest point sampling and k-NN grouping.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// One centroid's k-NN, translated so the centroid sits at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighborhood {
    pub centroid_index: usize,
    /// Sorted by (distance to centroid, index); the centroid is first unless
    /// it has exact duplicates with lower indices.
    pub member_indices: Vec<usize>,
    pub rel_coords: Matrix,
    pub features: Matrix,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

/// Index of the lexicographically smallest row (lowest index on ties).
pub fn lexicographic_min(points: &Matrix) -> Option<usize> {
    (0..points.rows()).min_by(|&i, &j| lex_cmp(points.row(i), points.row(j)).then(i.cmp(&j)))
}

/// Farthest point sampling.
///
/// Seeds with the lexicographically smallest point, then repeatedly picks the
/// point whose distance to the selected set is largest (lowest index on
/// ties). Returned in selection order.
pub fn fps(points: &Matrix, m_centroids: usize) -> Result<Vec<usize>> {
    let n = points.rows();
    if m_centroids == 0 || m_centroids > n {
        return Err(Error::Input(format!("fps: cannot select {m_centroids} centroids from {n} points")));
    }
    let seed = lexicographic_min(points).expect("n >= 1");
    let mut selected = Vec::with_capacity(m_centroids);
    selected.push(seed);
    let mut min_d: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(seed))).collect();
    while selected.len() < m_centroids {
        let mut best = 0usize;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in min_d.iter().enumerate() {
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        selected.push(best);
        let p = points.row(best);
        for (i, d) in min_d.iter_mut().enumerate() {
            let nd = sq_dist(points.row(i), p);
            if nd < *d {
                *d = nd;
            }
        }
    }
    Ok(selected)
}

/// The `k` nearest points to row `query_index`, itself included, ordered by
/// (distance, index). Exhaustive scan.
pub fn knn(points: &Matrix, query_index: usize, k: usize) -> Result<Vec<usize>> {
    let n = points.rows();
    if query_index >= n {
        return Err(Error::Input(format!("knn: query {query_index} out of range for {n} points")));
    }
    if k == 0 || k > n {
        return Err(Error::Input(format!("knn: k = {k} invalid for {n} points")));
    }
    let q = points.row(query_index);
    let mut cand: Vec<(f64, usize)> = (0..n).map(|i| (sq_dist(points.row(i), q), i)).collect();
    let by_key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < n {
        cand.select_nth_unstable_by(k - 1, by_key);
        cand.truncate(k);
    }
    cand.sort_unstable_by(by_key);
    Ok(cand.into_iter().map(|(_, i)| i).collect())
}

/// Builds one [`Neighborhood`] per centroid. `features` may have zero columns.
pub fn group(
    points: &Matrix,
    features: &Matrix,
    centroid_indices: &[usize],
    k: usize,
) -> Result<Vec<Neighborhood>> {
    if features.rows() != points.rows() {
        return Err(Error::Config(format!(
            "group: {} feature rows for {} points",
            features.rows(),
            points.rows()
        )));
    }
    centroid_indices
        .iter()
        .map(|&c| {
            let members = knn(points, c, k)?;
            Ok(Neighborhood {
                centroid_index: c,
                rel_coords: relative_coords(points, &members, c),
                features: features.select_rows(&members),
                member_indices: members,
            })
        })
        .collect()
}

/// Coordinates of `members` minus the coordinates of `center`.
pub fn relative_coords(points: &Matrix, members: &[usize], center: usize) -> Matrix {
    let c = points.row(center);
    let mut rel = points.select_rows(members);
    for i in 0..rel.rows() {
        for (v, cv) in rel.row_mut(i).iter_mut().zip(c) {
            *v -= cv;
        }
    }
    rel
}
