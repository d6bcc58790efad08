//! Property suites shared by `pointspec selftest` and the acceptance tests.
//! Each suite draws seeded random instances, compares against an oracle and
//! reports the worst deviation per check.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

use crate::check::{max_rel_error, numeric_grad};
use crate::data::PointCloud;
use crate::error::Result;
use crate::graph::{adjacency, build_graph, gft, igft, normalized_laplacian, WeightScheme};
use crate::layers::pooling::{cluster_pool_backward, cluster_pool_forward, ClusterPoolTape, PoolSpec};
use crate::layers::point_mlp::{point_mlp_backward, point_mlp_forward};
use crate::layers::spectral_conv::{spectral_conv_backward, spectral_conv_forward, SpecConvParams};
use crate::linalg::{jacobi_eigh, matmul, Matrix};
use crate::model::dense::{dense_backward, dense_forward, BatchNorm, BnStats, Mode};
use crate::model::{ArchSpec, Network, Variant};
use crate::training::loss::cross_entropy;

/// Deliberate defects for checking that the suites catch them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Faults {
    /// Negate the forward graph Fourier transform.
    pub gft_sign_flip: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub worst: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn ok(&self) -> bool {
        self.worst < self.tolerance
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    /// Cases whose every check was within tolerance.
    pub passed: usize,
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn ok(&self) -> bool {
        self.passed == self.cases && self.checks.iter().all(Check::ok)
    }

    pub fn summary(&self) -> String {
        let detail: Vec<String> =
            self.checks.iter().map(|c| format!("{} {:.2e} (< {:.0e})", c.name, c.worst, c.tolerance)).collect();
        format!(
            "{}: {}/{} cases passed in {:.1}s; worst {}",
            self.name,
            self.passed,
            self.cases,
            self.seconds,
            detail.join(", ")
        )
    }
}

/// Accumulates per-case results for named checks.
struct Tally {
    checks: Vec<Check>,
    cases: usize,
    passed: usize,
}

impl Tally {
    fn new(specs: &[(&str, f64)]) -> Self {
        Self {
            checks: specs.iter().map(|&(n, t)| Check { name: n.into(), worst: 0.0, tolerance: t }).collect(),
            cases: 0,
            passed: 0,
        }
    }

    /// One case: a value per check, in declaration order.
    fn case(&mut self, values: &[f64]) {
        let mut ok = true;
        for (c, &v) in self.checks.iter_mut().zip(values) {
            let v = if v.is_nan() { f64::INFINITY } else { v };
            c.worst = c.worst.max(v);
            ok &= v < c.tolerance;
        }
        self.cases += 1;
        self.passed += usize::from(ok);
    }

    fn finish(self, name: &'static str, start: Instant) -> SuiteReport {
        SuiteReport { name, cases: self.cases, passed: self.passed, checks: self.checks, seconds: start.elapsed().as_secs_f64() }
    }
}

fn rand_mat(r: usize, c: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn transform(u: &Matrix, x: &Matrix, faults: Faults) -> Result<Matrix> {
    let t = gft(u, x)?;
    Ok(if faults.gft_sign_flip { t.scale(-1.0) } else { t })
}

/// Eigenvalue range, `L = UΛUᵀ`, GFT round trip and the null eigenvector on
/// `n` random neighborhoods (k cycling through 8, 16, 32; both schemes).
pub fn spectral(n: usize, seed: u64, faults: Faults) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new(&[
        ("eigenvalue range excess", 1e-9),
        ("reconstruction", 1e-9),
        ("gft round trip", 1e-9),
        ("null residual", 1e-8),
    ]);
    for i in 0..n {
        let k = [8, 16, 32][i % 3];
        let scheme = if (i / 3) % 2 == 0 { WeightScheme::gaussian() } else { WeightScheme::raw_distance() };
        let pts = rand_mat(k, 3, &mut rng);
        let g = build_graph(&pts, &scheme)?;
        let range = g.eigenvalues.iter().map(|&l| (-l).max(l - 2.0).max(0.0)).fold(0.0, f64::max);
        let recon = matmul(&matmul(&g.basis, &Matrix::diag(&g.eigenvalues))?, &g.basis.transpose())?;
        let x = rand_mat(k, 4, &mut rng);
        let round = igft(&g.basis, &transform(&g.basis, &x, faults)?)?;
        // every weight is positive for distinct points, so the graph is connected
        let sqrt_d = Matrix::from_fn(k, 1, |r, _| g.degrees[r].sqrt());
        let null = matmul(&g.laplacian, &sqrt_d)?.max_abs();
        t.case(&[range, recon.max_abs_diff(&g.laplacian), round.max_abs_diff(&x), null]);
    }
    Ok(t.finish("spectral identities", start))
}

/// Spectral convolution against closed forms: `g = Λ, W = I` gives `L·X`;
/// `g = 1, W = I` gives `X`; the element-wise form `U((Uᵀx) ⊙ g)` (single
/// channel, `W = [[1]]`) and the dense product `U·diag(g)·Uᵀ·X` (`W = I`)
/// agree with the transform → modulate → filter → inverse pipeline.
pub fn conv_oracle(n: usize, seed: u64, faults: Faults) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new(&[
        ("g=eigenvalues vs L·X", 1e-8),
        ("g=1 vs X", 1e-10),
        ("hadamard vs pipeline", 1e-10),
        ("dense product vs pipeline", 1e-9),
    ]);
    for i in 0..n {
        let k = [8, 16, 32][i % 3];
        let m = rng.random_range(1..6);
        let g = build_graph(&rand_mat(k, 3, &mut rng), &WeightScheme::gaussian())?;
        let basis = Arc::new(g.basis.clone());
        let x = rand_mat(k, m, &mut rng);
        let (lx, _) = spectral_conv_forward(&x, basis.clone(), &SpecConvParams { g: g.eigenvalues.clone(), w_f: Matrix::identity(m) })?;
        let e1 = lx.max_abs_diff(&matmul(&g.laplacian, &x)?);
        let (id, _) = spectral_conv_forward(&x, basis.clone(), &SpecConvParams::identity(k, m))?;
        let e2 = id.max_abs_diff(&x);
        let kernel: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();

        let x1 = rand_mat(k, 1, &mut rng);
        let (y1, _) = spectral_conv_forward(&x1, basis.clone(), &SpecConvParams { g: kernel.clone(), w_f: Matrix::identity(1) })?;
        let xt = transform(&g.basis, &x1, faults)?;
        let had = Matrix::from_fn(k, 1, |r, _| xt[(r, 0)] * kernel[r]);
        let e3 = y1.max_abs_diff(&igft(&g.basis, &had)?);

        let (ym, _) = spectral_conv_forward(&x, basis.clone(), &SpecConvParams { g: kernel.clone(), w_f: Matrix::identity(m) })?;
        let ut = g.basis.transpose();
        let ut = if faults.gft_sign_flip { ut.scale(-1.0) } else { ut };
        let dense = matmul(&matmul(&matmul(&g.basis, &Matrix::diag(&kernel))?, &ut)?, &x)?;
        t.case(&[e1, e2, e3, ym.max_abs_diff(&dense)]);
    }
    Ok(t.finish("convolution oracle", start))
}

fn cot_loss(y: &Matrix, cot: &Matrix) -> f64 {
    y.as_slice().iter().zip(cot.as_slice()).map(|(a, b)| a * b).sum()
}

fn reshape(v: &[f64], like: &Matrix) -> Matrix {
    Matrix::from_vec(like.rows(), like.cols(), v.to_vec()).expect("same size")
}

const FD_H: f64 = 1e-5;

fn same_routing(a: &ClusterPoolTape, b: &ClusterPoolTape) -> bool {
    a.terminal_argmax == b.terminal_argmax && a.steps.iter().zip(&b.steps).all(|(s, t)| s.argmax == t.argmax)
}

/// Central finite differences (`h = 1e-5`) against every hand-written
/// backward, `n` instances per layer.
pub fn gradients(n: usize, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = 1e-4;
    let mut t = Tally::new(&[
        ("spec-conv dx", tol),
        ("spec-conv dg", tol),
        ("spec-conv dw", tol),
        ("cluster-pool dx", tol),
        ("point-mlp dx", tol),
        ("point-mlp dw", tol),
        ("point-mlp db", tol),
        ("dense dx", tol),
        ("dense dw", tol),
        ("dense dgamma", tol),
        ("dense dbeta", tol),
        ("cross-entropy", tol),
    ]);
    let mut i = 0;
    while t.cases < n {
        i += 1;
        // spectral convolution
        let k = rng.random_range(3..12);
        let (m, m2) = (rng.random_range(1..5), rng.random_range(1..5));
        let basis = Arc::new(build_graph(&rand_mat(k, 3, &mut rng), &WeightScheme::gaussian())?.basis);
        let x = rand_mat(k, m, &mut rng);
        let p = SpecConvParams { g: (0..k).map(|_| rng.random_range(-1.0..1.0)).collect(), w_f: rand_mat(m, m2, &mut rng) };
        let cot = rand_mat(k, m2, &mut rng);
        let (_, tape) = spectral_conv_forward(&x, basis.clone(), &p)?;
        let sg = spectral_conv_backward(&cot, &tape, &p)?;
        let f = |x: &Matrix, p: &SpecConvParams| cot_loss(&spectral_conv_forward(x, basis.clone(), p).expect("shapes").0, &cot);
        let nx = numeric_grad(x.as_slice(), FD_H, |v| f(&reshape(v, &x), &p));
        let ng = numeric_grad(&p.g, FD_H, |v| f(&x, &SpecConvParams { g: v.to_vec(), w_f: p.w_f.clone() }));
        let nw = numeric_grad(p.w_f.as_slice(), FD_H, |v| f(&x, &SpecConvParams { g: p.g.clone(), w_f: reshape(v, &p.w_f) }));
        let spec = [max_rel_error(sg.x.as_slice(), &nx), max_rel_error(&sg.g, &ng), max_rel_error(sg.w_f.as_slice(), &nw)];

        // cluster pooling; instances whose max routing flips within ±h are ties and are redrawn
        let c = [2, 3, 4][i % 3];
        let kc = 2 * c * c;
        let coords = rand_mat(kc, 3, &mut rng);
        let xc = rand_mat(kc, rng.random_range(1..4), &mut rng);
        let spec_c = PoolSpec::new(c)?;
        let scheme = WeightScheme::gaussian();
        let (out, ctape) = cluster_pool_forward(&xc, &coords, spec_c, &scheme)?;
        let cot_c = rand_mat(1, out.cols(), &mut rng);
        let gx = cluster_pool_backward(&cot_c, &ctape)?;
        let mut tie = false;
        let nxc = numeric_grad(xc.as_slice(), FD_H, |v| {
            let (o, tp) = cluster_pool_forward(&reshape(v, &xc), &coords, spec_c, &scheme).expect("shapes");
            tie |= !same_routing(&tp, &ctape);
            cot_loss(&o, &cot_c)
        });
        if tie {
            continue;
        }
        let pool = max_rel_error(gx.as_slice(), &nxc);

        // point MLP
        let (r, a, b) = (rng.random_range(2..8), rng.random_range(1..5), rng.random_range(1..5));
        let xm = rand_mat(r, a, &mut rng);
        let w = rand_mat(a, b, &mut rng);
        let bias: Vec<f64> = (0..b).map(|_| rng.random_range(-0.5..0.5)).collect();
        let cot_m = rand_mat(r, b, &mut rng);
        let (_, mt) = point_mlp_forward(&xm, &w, &bias)?;
        let mg = point_mlp_backward(&cot_m, &mt, &w)?;
        let fm = |x: &Matrix, w: &Matrix, b: &[f64]| cot_loss(&point_mlp_forward(x, w, b).expect("shapes").0, &cot_m);
        let mlp = [
            max_rel_error(mg.x.as_slice(), &numeric_grad(xm.as_slice(), FD_H, |v| fm(&reshape(v, &xm), &w, &bias))),
            max_rel_error(mg.w.as_slice(), &numeric_grad(w.as_slice(), FD_H, |v| fm(&xm, &reshape(v, &w), &bias))),
            max_rel_error(&mg.b, &numeric_grad(&bias, FD_H, |v| fm(&xm, &w, v))),
        ];

        // dense + batch norm + ReLU + dropout, alternating train/eval mode
        let mode = if i % 2 == 0 { Mode::Train } else { Mode::Eval };
        let (r, a, b) = (rng.random_range(2..8), rng.random_range(1..5), rng.random_range(1..5));
        let xd = rand_mat(r, a, &mut rng);
        let wd = rand_mat(a, b, &mut rng);
        let bd: Vec<f64> = (0..b).map(|_| rng.random_range(-0.5..0.5)).collect();
        let gamma: Vec<f64> = (0..b).map(|_| rng.random_range(0.5..1.5)).collect();
        let beta: Vec<f64> = (0..b).map(|_| rng.random_range(0.0..0.5)).collect();
        let stats = BnStats { mean: (0..b).map(|_| rng.random_range(-0.2..0.2)).collect(), var: vec![0.9; b] };
        let mask = Matrix::from_fn(r, b, |_, _| if rng.random_bool(0.5) { 2.0 } else { 0.0 });
        let cot_d = rand_mat(r, b, &mut rng);
        let fd = |x: &Matrix, w: &Matrix, gamma: &[f64], beta: &[f64]| {
            let bn = BatchNorm { gamma, beta, running: &stats };
            cot_loss(&dense_forward(x, w, &bd, Some(bn), true, Some(&mask), mode).expect("shapes").0, &cot_d)
        };
        let (_, dt) = dense_forward(&xd, &wd, &bd, Some(BatchNorm { gamma: &gamma, beta: &beta, running: &stats }), true, Some(&mask), mode)?;
        let dg = dense_backward(&cot_d, &dt, &wd, Some(&gamma))?;
        let dense = [
            max_rel_error(dg.x.as_slice(), &numeric_grad(xd.as_slice(), FD_H, |v| fd(&reshape(v, &xd), &wd, &gamma, &beta))),
            max_rel_error(dg.w.as_slice(), &numeric_grad(wd.as_slice(), FD_H, |v| fd(&xd, &reshape(v, &wd), &gamma, &beta))),
            max_rel_error(dg.gamma.as_deref().unwrap_or(&[]), &numeric_grad(&gamma, FD_H, |v| fd(&xd, &wd, v, &beta))),
            max_rel_error(dg.beta.as_deref().unwrap_or(&[]), &numeric_grad(&beta, FD_H, |v| fd(&xd, &wd, &gamma, v))),
        ];

        // cross-entropy
        let nc = rng.random_range(2..10);
        let logits: Vec<f64> = (0..nc).map(|_| rng.random_range(-3.0..3.0)).collect();
        let label = rng.random_range(0..nc);
        let (_, g) = cross_entropy(&logits, label);
        let ce = max_rel_error(&g, &numeric_grad(&logits, FD_H, |v| cross_entropy(v, label).0));

        let mut values = spec.to_vec();
        values.push(pool);
        values.extend(mlp);
        values.extend(dense);
        values.push(ce);
        t.case(&values);
    }
    Ok(t.finish("gradient checks", start))
}

/// Recursive cluster pooling written out step by step, independently of the
/// layer code: Fiedler-sort, pad with the last index, pool consecutive groups
/// (MAX first, then alternating), move each cluster to its members' mean,
/// repeat until at most `c` rows remain, then pool everything.
pub fn literal_cluster_pool(x: &Matrix, coords: &Matrix, c: usize, scheme: &WeightScheme) -> Result<Vec<f64>> {
    let mut feats: Vec<Vec<f64>> = (0..x.rows()).map(|i| x.row(i).to_vec()).collect();
    let mut pos: Vec<Vec<f64>> = (0..coords.rows()).map(|i| coords.row(i).to_vec()).collect();
    let mut use_max = true;
    while feats.len() > c {
        let cm = Matrix::from_fn(pos.len(), pos[0].len(), |i, j| pos[i][j]);
        let lap = normalized_laplacian(&adjacency(&cm, scheme));
        let eig = jacobi_eigh(&lap)?;
        let fiedler = eig.eigenvectors.column(1);
        let mut order: Vec<usize> = (0..feats.len()).collect();
        order.sort_by(|&a, &b| fiedler[a].total_cmp(&fiedler[b]).then(a.cmp(&b)));
        while order.len() % c != 0 {
            order.push(*order.last().expect("non-empty"));
        }
        let mut next_feats = Vec::new();
        let mut next_pos = Vec::new();
        for group in order.chunks(c) {
            let m = feats[0].len();
            let mut pooled = Vec::with_capacity(m);
            for j in 0..m {
                if use_max {
                    let mut best = feats[group[0]][j];
                    for &g in &group[1..] {
                        if feats[g][j] > best {
                            best = feats[g][j];
                        }
                    }
                    pooled.push(best);
                } else {
                    let mut sum = 0.0;
                    for &g in group {
                        sum += feats[g][j];
                    }
                    pooled.push(sum * (1.0 / c as f64));
                }
            }
            let d = pos[0].len();
            let mut centre = vec![0.0; d];
            for &g in group {
                for (cj, v) in centre.iter_mut().zip(&pos[g]) {
                    *cj += v;
                }
            }
            centre.iter_mut().for_each(|v| *v /= c as f64);
            next_feats.push(pooled);
            next_pos.push(centre);
        }
        feats = next_feats;
        pos = next_pos;
        use_max = !use_max;
    }
    let m = feats[0].len();
    Ok((0..m)
        .map(|j| {
            if use_max {
                let mut best = feats[0][j];
                for f in &feats[1..] {
                    if f[j] > best {
                        best = f[j];
                    }
                }
                best
            } else {
                let mut sum = 0.0;
                for f in &feats {
                    sum += f[j];
                }
                sum * (1.0 / feats.len() as f64)
            }
        })
        .collect())
}

/// Bit-for-bit comparison of the pooling layer with [`literal_cluster_pool`]
/// on `n` instances each of (k = 8, c = 2) and (k = 32, c = 4).
pub fn algorithm_oracle(n: usize, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new(&[("mismatched outputs", 0.5)]);
    for (k, c) in [(8, 2), (32, 4)] {
        for i in 0..n {
            let scheme = if i % 2 == 0 { WeightScheme::gaussian() } else { WeightScheme::raw_distance() };
            let coords = rand_mat(k, 3, &mut rng);
            let x = rand_mat(k, rng.random_range(1..6), &mut rng);
            let (got, _) = cluster_pool_forward(&x, &coords, PoolSpec::new(c)?, &scheme)?;
            let want = literal_cluster_pool(&x, &coords, c, &scheme)?;
            let same = got.as_slice().iter().zip(&want).all(|(a, b)| a.to_bits() == b.to_bits())
                && got.as_slice().len() == want.len();
            t.case(&[if same { 0.0 } else { 1.0 }]);
        }
    }
    Ok(t.finish("cluster-pool oracle", start))
}

/// Eval-mode classifier logits under `perms` random row permutations of
/// each of `clouds` generic random clouds.
pub fn permutation(clouds: usize, perms: usize, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new(&[("logit change", 1e-6)]);
    let net = Network::new(ArchSpec::desk_classifier(Variant::SpecCp4, 4, 3, 0), seed)?;
    for _ in 0..clouds {
        let cloud = PointCloud::new(rand_mat(128, 3, &mut rng));
        let base = net.forward_classify(&cloud)?;
        for _ in 0..perms {
            let mut perm: Vec<usize> = (0..cloud.len()).collect();
            perm.shuffle(&mut rng);
            let out = net.forward_classify(&cloud.permuted(&perm))?;
            let diff = base.iter().zip(&out).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            t.case(&[diff]);
        }
    }
    Ok(t.finish("permutation invariance", start))
}

/// The default selftest: every suite at full size.
pub fn run_all(seed: u64, faults: Faults) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        spectral(200, seed, faults)?,
        conv_oracle(100, seed + 1, faults)?,
        gradients(50, seed + 2)?,
        algorithm_oracle(100, seed + 3)?,
        permutation(10, 20, seed + 4)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        assert!(spectral(12, 1, Faults::default()).unwrap().ok());
        assert!(conv_oracle(6, 1, Faults::default()).unwrap().ok());
        assert!(gradients(4, 1).unwrap().ok());
        assert!(algorithm_oracle(4, 1).unwrap().ok());
        assert!(permutation(1, 3, 1).unwrap().ok());
    }

    #[test]
    fn sign_flip_is_caught() {
        let f = Faults { gft_sign_flip: true };
        assert!(!spectral(6, 1, f).unwrap().ok());
        assert!(!conv_oracle(6, 1, f).unwrap().ok());
    }

    #[test]
    fn literal_oracle_on_the_hand_example() {
        // four points on a line, two clusters: MAX within clusters then AVG
        let coords = Matrix::from_rows(&[&[0.0], &[1.0], &[2.0], &[3.0], &[4.0], &[5.0], &[6.0], &[7.0]]);
        let x = Matrix::from_fn(8, 1, |i, _| i as f64);
        let got = literal_cluster_pool(&x, &coords, 2, &WeightScheme::gaussian()).unwrap();
        let (layer, _) = cluster_pool_forward(&x, &coords, PoolSpec::new(2).unwrap(), &WeightScheme::gaussian()).unwrap();
        assert_eq!(got, layer.as_slice());
    }
}
