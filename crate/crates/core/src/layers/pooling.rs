//! Set activations: plain max pooling and recursive cluster pooling.
//!
//! Recursive cluster pooling repeatedly sorts the current vertices along the
//! Fiedler vector of their local graph, cuts the sorted sequence into
//! consecutive clusters of `csize`, and pools within each cluster. Pooling
//! alternates MAX, AVG, MAX, ... starting with MAX. Once at most `csize`
//! vertices remain, one final pool over all of them uses the mode that is
//! current at that point.
//!
//! Graphs, orderings and cluster assignments are constants of the forward
//! pass: gradients flow only through the pooled values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_graph, fiedler_order_of_basis, WeightScheme};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolMode {
    Max,
    Avg,
}

impl PoolMode {
    pub fn toggled(self) -> Self {
        match self {
            PoolMode::Max => PoolMode::Avg,
            PoolMode::Avg => PoolMode::Max,
        }
    }
}

/// Column-wise max; ties go to the lowest row. Returns the argmax row per column.
pub fn max_pool_set(h: &Matrix) -> Result<(Matrix, Vec<usize>)> {
    if h.rows() == 0 {
        return Err(Error::Input("max_pool_set: empty set".into()));
    }
    let mut out = Matrix::from_vec(1, h.cols(), h.row(0).to_vec())?;
    let mut arg = vec![0usize; h.cols()];
    for i in 1..h.rows() {
        for (j, &v) in h.row(i).iter().enumerate() {
            if v > out[(0, j)] {
                out[(0, j)] = v;
                arg[j] = i;
            }
        }
    }
    Ok((out, arg))
}

pub fn max_pool_set_backward(grad: &Matrix, argmax: &[usize], rows: usize) -> Matrix {
    let mut g = Matrix::zeros(rows, argmax.len());
    for (j, &i) in argmax.iter().enumerate() {
        g[(i, j)] += grad[(0, j)];
    }
    g
}

/// Cluster size of a recursive cluster pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub csize: usize,
}

impl PoolSpec {
    pub fn new(csize: usize) -> Result<Self> {
        if csize < 2 {
            return Err(Error::Config(format!("cluster size must be at least 2, got {csize}")));
        }
        Ok(Self { csize })
    }

    /// The cluster size `c` with `k = 2c²`, if one exists.
    pub fn for_neighborhood(k: usize) -> Result<Self> {
        match canonical_csize(k) {
            Some(c) => Self::new(c),
            None => Err(Error::Config(format!(
                "cluster pooling needs k = 2c² for an integer c >= 2; k = {k} has no such c"
            ))),
        }
    }
}

pub fn canonical_csize(k: usize) -> Option<usize> {
    if k % 2 != 0 {
        return None;
    }
    let half = k / 2;
    let c = (half as f64).sqrt().round() as usize;
    (c >= 1 && c * c == half).then_some(c)
}

/// One coarsening step: `order` lists current rows in Fiedler order, padded
/// by repeating its last entry to a multiple of `csize`.
#[derive(Clone, Debug, PartialEq)]
pub struct Recurrence {
    pub order: Vec<usize>,
    pub mode: PoolMode,
}

/// Feature-independent part of a cluster pool: every permutation and mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterPlan {
    pub input_rows: usize,
    pub csize: usize,
    pub recurrences: Vec<Recurrence>,
    pub terminal: PoolMode,
}

fn padded(mut order: Vec<usize>, csize: usize) -> Vec<usize> {
    let last = *order.last().expect("non-empty order");
    while order.len() % csize != 0 {
        order.push(last);
    }
    order
}

/// Mean of each consecutive `csize` group of `order`-selected rows.
fn group_centroids(coords: &Matrix, order: &[usize], csize: usize) -> Matrix {
    let groups = order.len() / csize;
    let mut out = Matrix::zeros(groups, coords.cols());
    for (g, chunk) in order.chunks(csize).enumerate() {
        let row = out.row_mut(g);
        for &i in chunk {
            for (o, v) in row.iter_mut().zip(coords.row(i)) {
                *o += v;
            }
        }
        row.iter_mut().for_each(|v| *v /= csize as f64);
    }
    debug_assert_eq!(groups * csize, order.len());
    out
}

/// Plans a cluster pool from vertex coordinates alone. A pooled cluster's
/// coordinate is the centroid of its member rows.
///
/// `first_basis`, when given, must be the graph basis of `coords` under
/// `scheme`; it skips one eigendecomposition.
pub fn cluster_plan(
    coords: &Matrix,
    spec: PoolSpec,
    scheme: &WeightScheme,
    first_basis: Option<&Matrix>,
) -> Result<ClusterPlan> {
    let k = coords.rows();
    if k < 1 {
        return Err(Error::Input("cluster pooling: empty neighborhood".into()));
    }
    let mut current = coords.clone();
    let mut mode = PoolMode::Max;
    let mut recurrences = Vec::new();
    let mut first = first_basis;
    while current.rows() > spec.csize {
        let order = match first.take() {
            Some(basis) if basis.rows() == current.rows() => fiedler_order_of_basis(basis)?,
            _ => fiedler_order_of_basis(&build_graph(&current, scheme)?.basis)?,
        };
        let order = padded(order, spec.csize);
        current = group_centroids(&current, &order, spec.csize);
        recurrences.push(Recurrence { order, mode });
        mode = mode.toggled();
    }
    Ok(ClusterPlan { input_rows: k, csize: spec.csize, recurrences, terminal: mode })
}

/// Per-recurrence record needed by the backward pass.
#[derive(Clone, Debug)]
pub struct PoolStep {
    pub order: Vec<usize>,
    pub mode: PoolMode,
    /// For MAX steps: `groups × m` winning row indices (into the step's input).
    pub argmax: Vec<usize>,
    pub rows_in: usize,
}

#[derive(Clone, Debug)]
pub struct ClusterPoolTape {
    pub csize: usize,
    pub cols: usize,
    pub steps: Vec<PoolStep>,
    pub terminal_mode: PoolMode,
    pub terminal_rows: usize,
    pub terminal_argmax: Vec<usize>,
}

fn pool_groups(x: &Matrix, order: &[usize], csize: usize, mode: PoolMode) -> (Matrix, Vec<usize>) {
    let m = x.cols();
    let groups = order.len() / csize;
    let mut out = Matrix::zeros(groups, m);
    let mut argmax = Vec::new();
    match mode {
        PoolMode::Max => {
            argmax.reserve(groups * m);
            for (g, chunk) in order.chunks(csize).enumerate() {
                let first = chunk[0];
                let row = out.row_mut(g);
                row.copy_from_slice(x.row(first));
                let start = argmax.len();
                argmax.extend(std::iter::repeat_n(first, m));
                for &i in &chunk[1..] {
                    for (j, &v) in x.row(i).iter().enumerate() {
                        if v > row[j] {
                            row[j] = v;
                            argmax[start + j] = i;
                        }
                    }
                }
            }
        }
        PoolMode::Avg => {
            let inv = 1.0 / csize as f64;
            for (g, chunk) in order.chunks(csize).enumerate() {
                let row = out.row_mut(g);
                for &i in chunk {
                    for (o, v) in row.iter_mut().zip(x.row(i)) {
                        *o += v;
                    }
                }
                row.iter_mut().for_each(|v| *v *= inv);
            }
        }
    }
    (out, argmax)
}

fn terminal_pool(x: &Matrix, mode: PoolMode) -> Result<(Matrix, Vec<usize>)> {
    match mode {
        PoolMode::Max => max_pool_set(x),
        PoolMode::Avg => {
            let mut out = Matrix::zeros(1, x.cols());
            for i in 0..x.rows() {
                for (o, v) in out.row_mut(0).iter_mut().zip(x.row(i)) {
                    *o += v;
                }
            }
            let n = x.rows() as f64;
            Ok((out.scale(1.0 / n), Vec::new()))
        }
    }
}

/// Runs a precomputed plan on features `x` (`k × m`).
pub fn cluster_pool_apply(x: &Matrix, plan: &ClusterPlan) -> Result<(Matrix, ClusterPoolTape)> {
    if x.rows() != plan.input_rows {
        return Err(Error::Config(format!(
            "cluster pool: {} feature rows for a plan over {} vertices",
            x.rows(),
            plan.input_rows
        )));
    }
    let mut current = x.clone();
    let mut steps = Vec::with_capacity(plan.recurrences.len());
    for rec in &plan.recurrences {
        let (next, argmax) = pool_groups(&current, &rec.order, plan.csize, rec.mode);
        steps.push(PoolStep { order: rec.order.clone(), mode: rec.mode, argmax, rows_in: current.rows() });
        current = next;
    }
    let (out, terminal_argmax) = terminal_pool(&current, plan.terminal)?;
    Ok((
        out,
        ClusterPoolTape {
            csize: plan.csize,
            cols: x.cols(),
            steps,
            terminal_mode: plan.terminal,
            terminal_rows: current.rows(),
            terminal_argmax,
        },
    ))
}

/// Recursive cluster pooling with graphs built on spatial coordinates.
pub fn cluster_pool_forward(
    x: &Matrix,
    cluster_coords: &Matrix,
    spec: PoolSpec,
    scheme: &WeightScheme,
) -> Result<(Matrix, ClusterPoolTape)> {
    if x.rows() != cluster_coords.rows() {
        return Err(Error::Config(format!(
            "cluster pool: {} feature rows but {} coordinate rows",
            x.rows(),
            cluster_coords.rows()
        )));
    }
    let plan = cluster_plan(cluster_coords, spec, scheme, None)?;
    cluster_pool_apply(x, &plan)
}

/// Recursive cluster pooling with each recurrence's graph built on the
/// current pooled features instead of coordinates.
pub fn cluster_pool_forward_on_features(
    x: &Matrix,
    spec: PoolSpec,
    scheme: &WeightScheme,
) -> Result<(Matrix, ClusterPoolTape)> {
    if x.rows() < 1 {
        return Err(Error::Input("cluster pooling: empty neighborhood".into()));
    }
    let mut current = x.clone();
    let mut mode = PoolMode::Max;
    let mut steps = Vec::new();
    while current.rows() > spec.csize {
        let basis = build_graph(&current, scheme)?.basis;
        let order = padded(fiedler_order_of_basis(&basis)?, spec.csize);
        let (next, argmax) = pool_groups(&current, &order, spec.csize, mode);
        steps.push(PoolStep { order, mode, argmax, rows_in: current.rows() });
        current = next;
        mode = mode.toggled();
    }
    let (out, terminal_argmax) = terminal_pool(&current, mode)?;
    Ok((
        out,
        ClusterPoolTape {
            csize: spec.csize,
            cols: x.cols(),
            steps,
            terminal_mode: mode,
            terminal_rows: current.rows(),
            terminal_argmax,
        },
    ))
}

pub fn cluster_pool_backward(grad: &Matrix, tape: &ClusterPoolTape) -> Result<Matrix> {
    if grad.shape() != (1, tape.cols) {
        return Err(Error::Config(format!(
            "cluster pool backward: cotangent {:?}, expected 1x{}",
            grad.shape(),
            tape.cols
        )));
    }
    let m = tape.cols;
    let mut g = match tape.terminal_mode {
        PoolMode::Max => max_pool_set_backward(grad, &tape.terminal_argmax, tape.terminal_rows),
        PoolMode::Avg => {
            let share = grad.scale(1.0 / tape.terminal_rows as f64);
            Matrix::from_fn(tape.terminal_rows, m, |_, j| share[(0, j)])
        }
    };
    for step in tape.steps.iter().rev() {
        let mut prev = Matrix::zeros(step.rows_in, m);
        match step.mode {
            PoolMode::Max => {
                for grp in 0..g.rows() {
                    for j in 0..m {
                        prev[(step.argmax[grp * m + j], j)] += g[(grp, j)];
                    }
                }
            }
            PoolMode::Avg => {
                let inv = 1.0 / tape.csize as f64;
                for (grp, chunk) in step.order.chunks(tape.csize).enumerate() {
                    for &i in chunk {
                        for j in 0..m {
                            prev[(i, j)] += g[(grp, j)] * inv;
                        }
                    }
                }
            }
        }
        g = prev;
    }
    Ok(g)
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
    fn max_pool_cases() {
        let row = Matrix::from_rows(&[&[3.0, -1.0]]);
        assert_eq!(max_pool_set(&row).unwrap().0, row);
        let two = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let (out, arg) = max_pool_set(&two).unwrap();
        assert_eq!(out, Matrix::from_rows(&[&[1.0, 1.0]]));
        assert_eq!(arg, vec![0, 1]);
        let tied = Matrix::from_rows(&[&[2.0], &[2.0]]);
        assert_eq!(max_pool_set(&tied).unwrap().1, vec![0]);
    }

    #[test]
    fn max_pool_matches_scan_and_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = rand_mat(9, 4, &mut rng);
        let (out, arg) = max_pool_set(&h).unwrap();
        for j in 0..4 {
            let col = h.column(j);
            assert_eq!(out[(0, j)], col.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        }
        let cot = rand_mat(1, 4, &mut rng);
        let g = max_pool_set_backward(&cot, &arg, 9);
        let num = numeric_grad(h.as_slice(), 1e-5, |v| {
            let (o, _) = max_pool_set(&Matrix::from_vec(9, 4, v.to_vec()).unwrap()).unwrap();
            o.as_slice().iter().zip(cot.as_slice()).map(|(a, b)| a * b).sum()
        });
        assert!(max_rel_error(g.as_slice(), &num) < 1e-4);
    }

    #[test]
    fn canonical_sizes() {
        assert_eq!(canonical_csize(32), Some(4));
        assert_eq!(canonical_csize(8), Some(2));
        assert_eq!(canonical_csize(2), Some(1));
        assert_eq!(canonical_csize(10), None);
        assert_eq!(canonical_csize(16), None);
        assert!(PoolSpec::for_neighborhood(10).is_err());
        assert!(PoolSpec::for_neighborhood(2).is_err());
    }

    #[test]
    fn canonical_counts_and_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let plan = cluster_plan(&rand_mat(32, 3, &mut rng), PoolSpec::new(4).unwrap(), &WeightScheme::gaussian(), None).unwrap();
        let sizes: Vec<usize> = plan.recurrences.iter().map(|r| r.order.len()).collect();
        assert_eq!(sizes, vec![32, 8]);
        assert_eq!(plan.recurrences[0].mode, PoolMode::Max);
        assert_eq!(plan.recurrences[1].mode, PoolMode::Avg);
        assert_eq!(plan.terminal, PoolMode::Max);
        for r in &plan.recurrences {
            let mut o = r.order.clone();
            o.sort_unstable();
            assert_eq!(o, (0..r.order.len()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn constant_rows_pass_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let coords = rand_mat(8, 3, &mut rng);
        let v = [0.25, -1.5, 3.0];
        let x = Matrix::from_fn(8, 3, |_, j| v[j]);
        let (out, _) = cluster_pool_forward(&x, &coords, PoolSpec::new(2).unwrap(), &WeightScheme::gaussian()).unwrap();
        assert_eq!(out.row(0), &v);
    }

    #[test]
    fn loop_bypass_is_max_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let coords = rand_mat(4, 3, &mut rng);
        let x = rand_mat(4, 5, &mut rng);
        let (out, tape) = cluster_pool_forward(&x, &coords, PoolSpec::new(4).unwrap(), &WeightScheme::gaussian()).unwrap();
        assert!(tape.steps.is_empty());
        assert_eq!(out, max_pool_set(&x).unwrap().0);
    }

    /// Eight points on a line with unit gaps except one wide gap; the
    /// Fiedler sort is then the line order (or its reverse).
    #[test]
    fn hand_trace_k8_c2() {
        let xs = [0.0, 1.0, 2.0, 3.0, 10.0, 11.0, 12.0, 13.0];
        let coords = Matrix::from_fn(8, 1, |i, _| xs[i]);
        let feats = [5.0, 1.0, 4.0, 2.0, 8.0, 6.0, 3.0, 7.0];
        let x = Matrix::from_fn(8, 1, |i, _| feats[i]);
        let scheme = WeightScheme::gaussian();
        let (out, tape) = cluster_pool_forward(&x, &coords, PoolSpec::new(2).unwrap(), &scheme).unwrap();

        // hand execution with the solver's orderings
        let o1 = fiedler_order_of_basis(&build_graph(&coords, &scheme).unwrap().basis).unwrap();
        assert!(o1 == (0..8).collect::<Vec<_>>() || o1 == (0..8).rev().collect::<Vec<_>>());
        let pairs1: Vec<[usize; 2]> = o1.chunks(2).map(|c| [c[0], c[1]]).collect();
        let lvl1: Vec<f64> = pairs1.iter().map(|p| feats[p[0]].max(feats[p[1]])).collect();
        let c1: Vec<f64> = pairs1.iter().map(|p| 0.5 * (xs[p[0]] + xs[p[1]])).collect();
        let o2 = fiedler_order_of_basis(
            &build_graph(&Matrix::from_fn(4, 1, |i, _| c1[i]), &scheme).unwrap().basis,
        )
        .unwrap();
        let lvl2: Vec<f64> = o2.chunks(2).map(|c| 0.5 * (lvl1[c[0]] + lvl1[c[1]])).collect();
        let expect = lvl2[0].max(lvl2[1]);
        // whichever direction the sort runs: max pairs (5,4,8,7), averaged
        // in line order (4.5, 7.5), terminal max 7.5
        assert_eq!(expect, 7.5);
        assert_eq!(out[(0, 0)], expect);
        assert_eq!(tape.steps.len(), 2);
        assert_eq!(tape.terminal_mode, PoolMode::Max);
    }

    #[test]
    fn all_avg_backward_is_uniform() {
        let tape = ClusterPoolTape {
            csize: 2,
            cols: 2,
            steps: vec![PoolStep { order: vec![3, 0, 2, 1], mode: PoolMode::Avg, argmax: vec![], rows_in: 4 }],
            terminal_mode: PoolMode::Avg,
            terminal_rows: 2,
            terminal_argmax: vec![],
        };
        let g = cluster_pool_backward(&Matrix::from_rows(&[&[1.0, -2.0]]), &tape).unwrap();
        for i in 0..4 {
            assert_eq!(g.row(i), &[0.25, -0.5]);
        }
        let zero = cluster_pool_backward(&Matrix::zeros(1, 2), &tape).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (k, c) in [(8, 2), (32, 4), (12, 3)] {
            let coords = rand_mat(k, 3, &mut rng);
            let x = rand_mat(k, 3, &mut rng);
            let cot = rand_mat(1, 3, &mut rng);
            let plan = cluster_plan(&coords, PoolSpec::new(c).unwrap(), &WeightScheme::gaussian(), None).unwrap();
            let (_, tape) = cluster_pool_apply(&x, &plan).unwrap();
            let g = cluster_pool_backward(&cot, &tape).unwrap();
            let num = numeric_grad(x.as_slice(), 1e-5, |v| {
                let (o, _) = cluster_pool_apply(&Matrix::from_vec(k, 3, v.to_vec()).unwrap(), &plan).unwrap();
                o.as_slice().iter().zip(cot.as_slice()).map(|(a, b)| a * b).sum()
            });
            assert!(max_rel_error(g.as_slice(), &num) < 1e-4, "k={k}");
        }
    }

    #[test]
    fn permutation_invariant_on_generic_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let coords = rand_mat(32, 3, &mut rng);
        let x = rand_mat(32, 4, &mut rng);
        let spec = PoolSpec::new(4).unwrap();
        let scheme = WeightScheme::gaussian();
        let (a, _) = cluster_pool_forward(&x, &coords, spec, &scheme).unwrap();
        let mut perm: Vec<usize> = (0..32).collect();
        perm.rotate_left(11);
        perm.swap(0, 30);
        let (b, _) = cluster_pool_forward(&x.select_rows(&perm), &coords.select_rows(&perm), spec, &scheme).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn padding_repeats_last_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let coords = rand_mat(5, 2, &mut rng);
        let plan = cluster_plan(&coords, PoolSpec::new(2).unwrap(), &WeightScheme::gaussian(), None).unwrap();
        let first = &plan.recurrences[0].order;
        assert_eq!(first.len(), 6);
        assert_eq!(first[4], first[5]);
    }

    #[test]
    fn feature_graph_variant_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = rand_mat(8, 3, &mut rng);
        let (out, tape) = cluster_pool_forward_on_features(&x, PoolSpec::new(2).unwrap(), &WeightScheme::gaussian()).unwrap();
        assert_eq!(out.shape(), (1, 3));
        assert_eq!(tape.steps.len(), 2);
        let g = cluster_pool_backward(&Matrix::filled(1, 3, 1.0), &tape).unwrap();
        assert_eq!(g.shape(), (8, 3));
    }
}
