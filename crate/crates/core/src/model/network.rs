//! Parameters, forward passes and hand-written backward passes of the
//! hierarchical networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::layers::interp::{fp_backward, fp_forward, FpTape};
use crate::layers::pooling::{
    cluster_pool_apply, cluster_pool_backward, cluster_pool_forward_on_features, max_pool_set,
    max_pool_set_backward, ClusterPoolTape, PoolSpec,
};
use crate::layers::point_mlp::{bias_relu_backward, bias_relu_forward, ReluTape};
use crate::layers::spectral_conv::{spectral_conv_backward, spectral_conv_forward, SpecConvParams, SpecConvTape};
use crate::linalg::{matmul, Matrix};
use crate::model::arch::{ArchSpec, ClusterGraph, Head, Kernel, Pooling, HEAD_KEEP};
use crate::model::dense::{dense_backward, dense_forward, BatchNorm, BnStats, DenseTape, Mode};
use crate::model::geometry::CloudGeometry;
use crate::training::loss::{argmax, cross_entropy};

/// Parameter slots of one encoder layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelSlots {
    Spec { g: usize, w: usize },
    Mlp { w: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderSlots {
    pub kernel: KernelSlots,
    pub b: usize,
}

/// Parameter slots of a dense layer; `bn` holds `(gamma, beta)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenseSlots {
    pub w: usize,
    pub b: usize,
    pub bn: Option<(usize, usize)>,
    pub relu: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub encoder: Vec<EncoderSlots>,
    /// Segmentation only: `fp[t]` maps level `t + 1` features onto level `t`.
    pub fp: Vec<DenseSlots>,
    /// Classification: FC-BN-ReLU-dropout ×2 then a linear layer.
    /// Segmentation: per-point ReLU layer then a linear layer.
    pub head: Vec<DenseSlots>,
    /// Parameters `[0, head_start)` belong to per-cloud computation.
    pub head_start: usize,
}

/// Shapes of every parameter tensor, in storage order, plus the slot map.
pub fn parameter_shapes(arch: &ArchSpec) -> (Vec<(usize, usize)>, Layout) {
    let mut shapes = Vec::new();
    let mut push = |s: (usize, usize)| {
        shapes.push(s);
        shapes.len() - 1
    };
    let mut encoder = Vec::new();
    for (i, l) in arch.layers.iter().enumerate() {
        let in_dim = arch.layer_in_dim(i);
        let kernel = match l.kernel {
            Kernel::SpecConv => KernelSlots::Spec { g: push((1, l.k)), w: push((in_dim, l.out_dim)) },
            Kernel::PointMlp => KernelSlots::Mlp { w: push((in_dim, l.out_dim)) },
        };
        encoder.push(EncoderSlots { kernel, b: push((1, l.out_dim)) });
    }
    let mut fp = Vec::new();
    let mut head = Vec::new();
    let n_layers = arch.layers.len();
    match arch.head {
        Head::Classify { n_classes } => {
            let mut width = arch.layers[n_layers - 1].out_dim;
            for &h in &arch.head_hidden {
                let w = push((width, h));
                let b = push((1, h));
                let bn = Some((push((1, h)), push((1, h))));
                head.push(DenseSlots { w, b, bn, relu: true });
                width = h;
            }
            let w = push((width, n_classes));
            head.push(DenseSlots { w, b: push((1, n_classes)), bn: None, relu: false });
        }
        Head::Segment { n_labels } => {
            // Slots are allocated coarse to fine, the order they run in.
            let mut slots = vec![None; n_layers];
            let mut width = arch.layers[n_layers - 1].out_dim;
            for t in (0..n_layers).rev() {
                let skip = fp_skip_dim(arch, t);
                let out = arch.layers[t.max(1) - 1].out_dim;
                let w = push((width + skip, out));
                slots[t] = Some(DenseSlots { w, b: push((1, out)), bn: None, relu: true });
                width = out;
            }
            fp = slots.into_iter().map(|s| s.expect("all levels assigned")).collect();
            let w = push((width, width));
            head.push(DenseSlots { w, b: push((1, width)), bn: None, relu: true });
            let w = push((width, n_labels));
            head.push(DenseSlots { w, b: push((1, n_labels)), bn: None, relu: false });
        }
    }
    let head_start = match arch.head {
        Head::Classify { .. } => head[0].w,
        Head::Segment { .. } => shapes.len(),
    };
    (shapes, Layout { encoder, fp, head, head_start })
}

/// Skip-connection width at decoder level `t`: the encoder features of that
/// level, or coordinates plus input features at the input level.
fn fp_skip_dim(arch: &ArchSpec, t: usize) -> usize {
    if t == 0 {
        arch.coord_dim + arch.in_features
    } else {
        arch.layers[t - 1].out_dim
    }
}

/// Total number of scalar parameters, counted directly from the layer table.
pub fn closed_form_param_count(arch: &ArchSpec) -> usize {
    let mut total = 0;
    let mut prev = arch.in_features;
    for l in &arch.layers {
        let in_dim = arch.coord_dim + prev;
        total += in_dim * l.out_dim + l.out_dim;
        if l.kernel == Kernel::SpecConv {
            total += l.k;
        }
        prev = l.out_dim;
    }
    match arch.head {
        Head::Classify { n_classes } => {
            // weights + bias + BN scale and shift per hidden layer
            let mut width = prev;
            for &h in &arch.head_hidden {
                total += (width + 3) * h;
                width = h;
            }
            total += (width + 1) * n_classes;
        }
        Head::Segment { n_labels } => {
            let dims: Vec<usize> = arch.layers.iter().map(|l| l.out_dim).collect();
            let n = dims.len();
            let mut width = dims[n - 1];
            for t in (0..n).rev() {
                let out = dims[t.max(1) - 1];
                total += (width + fp_skip_dim(arch, t) + 1) * out;
                width = out;
            }
            total += (width + 1) * width + (width + 1) * n_labels;
        }
    }
    total
}

/// All learnable and running state of a network.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub arch: ArchSpec,
    pub params: Vec<Matrix>,
    /// Running statistics, one per batch-normalized head layer.
    pub bn: Vec<BnStats>,
    pub step: u64,
    pub layout: Layout,
}

/// Gradients, shaped like [`Network::params`]. Slots a computation does not
/// touch may be left as `0 × 0` matrices.
pub type Grads = Vec<Matrix>;

/// Adds `src` into `dst`, skipping empty slots.
pub fn accumulate(dst: &mut [Matrix], src: &[Matrix]) {
    for (d, s) in dst.iter_mut().zip(src) {
        if s.rows() * s.cols() == 0 {
            continue;
        }
        if d.rows() * d.cols() == 0 {
            *d = s.clone();
        } else {
            d.add_assign(s);
        }
    }
}

/// Result of a training forward/backward over one batch.
#[derive(Clone, Debug)]
pub struct BatchOutput {
    /// Mean loss over the batch.
    pub loss: f64,
    pub correct: usize,
    /// Examples (classification) or points (segmentation) scored.
    pub total: usize,
    pub grads: Grads,
}

enum KernelTape {
    Spec(SpecConvTape),
    Mlp(Matrix),
}

enum PoolTape {
    Max(Vec<usize>, usize),
    Cluster(ClusterPoolTape),
}

struct HoodTape {
    kernel: KernelTape,
    relu: ReluTape,
    pool: PoolTape,
}

struct EncoderTape {
    hoods: Vec<Vec<HoodTape>>,
    level_shapes: Vec<(usize, usize)>,
}

/// `[rel | feats[members]]`
fn gather_input(rel: &Matrix, feats: &Matrix, members: &[usize]) -> Matrix {
    let d = rel.cols();
    let mut x = Matrix::zeros(members.len(), d + feats.cols());
    for (r, &i) in members.iter().enumerate() {
        let row = x.row_mut(r);
        row[..d].copy_from_slice(rel.row(r));
        row[d..].copy_from_slice(feats.row(i));
    }
    x
}

fn row_vec(m: &Matrix) -> Matrix {
    Matrix::from_vec(1, m.cols() * m.rows(), m.as_slice().to_vec()).expect("flat row")
}

impl Network {
    /// Deterministic initialization: Glorot-uniform weights, zero biases,
    /// unit spectral kernels and BN scales.
    pub fn new(arch: ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let (shapes, layout) = parameter_shapes(&arch);
        let mut params: Vec<Matrix> = shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |m: &mut Matrix| {
            let bound = (6.0 / (m.rows() + m.cols()) as f64).sqrt();
            m.as_mut_slice().iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
        };
        for e in &layout.encoder {
            match e.kernel {
                KernelSlots::Spec { g, w } => {
                    params[g] = Matrix::filled(1, params[g].cols(), 1.0);
                    glorot(&mut params[w]);
                }
                KernelSlots::Mlp { w } => glorot(&mut params[w]),
            }
        }
        for d in layout.fp.iter().chain(&layout.head) {
            glorot(&mut params[d.w]);
            if let Some((gamma, _)) = d.bn {
                params[gamma] = Matrix::filled(1, params[gamma].cols(), 1.0);
            }
        }
        let bn = layout.head.iter().filter_map(|d| d.bn.map(|(g, _)| BnStats::new(params[g].cols()))).collect();
        Ok(Self { arch, params, bn, step: 0, layout })
    }

    /// Reassembles a network from stored tensors, checking every shape.
    pub fn from_parts(arch: ArchSpec, params: Vec<Matrix>, bn: Vec<BnStats>, step: u64) -> Result<Self> {
        arch.validate()?;
        let (shapes, layout) = parameter_shapes(&arch);
        if shapes.len() != params.len() || shapes.iter().zip(&params).any(|(s, p)| *s != p.shape()) {
            return Err(Error::Input("checkpoint tensors do not match the architecture".into()));
        }
        let widths: Vec<usize> =
            layout.head.iter().filter_map(|d| d.bn.map(|(g, _)| shapes[g].1)).collect();
        if widths.len() != bn.len()
            || widths.iter().zip(&bn).any(|(&w, s)| s.mean.len() != w || s.var.len() != w)
        {
            return Err(Error::Input("checkpoint batch-norm statistics do not match the architecture".into()));
        }
        Ok(Self { arch, params, bn, step, layout })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.rows() * p.cols()).sum()
    }

    pub fn zero_grads(&self) -> Grads {
        self.params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect()
    }

    fn empty_grads(&self) -> Grads {
        vec![Matrix::zeros(0, 0); self.params.len()]
    }

    pub fn geometry(&self, cloud: &PointCloud) -> Result<CloudGeometry> {
        self.check_cloud(cloud)?;
        CloudGeometry::build(&self.arch, &cloud.coords)
    }

    fn check_cloud(&self, cloud: &PointCloud) -> Result<()> {
        if cloud.features.cols() != self.arch.in_features {
            return Err(Error::Input(format!(
                "cloud has {} feature channels, network expects {}",
                cloud.features.cols(),
                self.arch.in_features
            )));
        }
        Ok(())
    }

    fn spec_params(&self, slots: &EncoderSlots) -> Option<SpecConvParams> {
        match slots.kernel {
            KernelSlots::Spec { g, w } => {
                Some(SpecConvParams { g: self.params[g].as_slice().to_vec(), w_f: self.params[w].clone() })
            }
            KernelSlots::Mlp { .. } => None,
        }
    }

    /// Per-level features: `[input features, layer 1 output, …]`.
    fn encode(&self, cloud: &PointCloud, geom: &CloudGeometry) -> Result<(Vec<Matrix>, EncoderTape)> {
        let mut feats = vec![cloud.features.clone()];
        let mut tapes = Vec::with_capacity(self.arch.layers.len());
        for (l, (layer, slots)) in self.arch.layers.iter().zip(&self.layout.encoder).enumerate() {
            let level = &geom.levels[l];
            let spec = self.spec_params(slots);
            let bias = self.params[slots.b].as_slice();
            let mut out = Matrix::zeros(level.hoods.len(), layer.out_dim);
            let mut hood_tapes = Vec::with_capacity(level.hoods.len());
            for (h, hood) in level.hoods.iter().enumerate() {
                let x = gather_input(&hood.rel, &feats[l], &hood.members);
                let (y, kernel) = match (&spec, slots.kernel) {
                    (Some(p), _) => {
                        let basis = hood.basis.clone().ok_or_else(|| Error::Config("missing graph basis".into()))?;
                        let (y, t) = spectral_conv_forward(&x, basis, p)?;
                        (y, KernelTape::Spec(t))
                    }
                    (None, KernelSlots::Mlp { w }) => (matmul(&x, &self.params[w])?, KernelTape::Mlp(x)),
                    (None, KernelSlots::Spec { .. }) => unreachable!("spec params exist for spec slots"),
                };
                let (act, relu) = bias_relu_forward(&y, bias)?;
                let (pooled, pool) = match (layer.pooling, self.arch.cluster_graph) {
                    (Pooling::Max, _) => {
                        let (p, arg) = max_pool_set(&act)?;
                        (p, PoolTape::Max(arg, act.rows()))
                    }
                    (Pooling::ClusterPool, ClusterGraph::Spatial) => {
                        let plan = hood.plan.as_ref().ok_or_else(|| Error::Config("missing cluster plan".into()))?;
                        let (p, t) = cluster_pool_apply(&act, plan)?;
                        (p, PoolTape::Cluster(t))
                    }
                    (Pooling::ClusterPool, ClusterGraph::Features) => {
                        let spec = PoolSpec::new(self.arch.csize(l).expect("validated cluster size"))?;
                        let (p, t) = cluster_pool_forward_on_features(&act, spec, &self.arch.weight_scheme)?;
                        (p, PoolTape::Cluster(t))
                    }
                };
                out.row_mut(h).copy_from_slice(pooled.row(0));
                hood_tapes.push(HoodTape { kernel, relu, pool });
            }
            feats.push(out);
            tapes.push(hood_tapes);
        }
        let level_shapes = feats.iter().map(Matrix::shape).collect();
        Ok((feats, EncoderTape { hoods: tapes, level_shapes }))
    }

    /// `level_grads[l]` is the loss gradient w.r.t. level-`l` features from
    /// outside the encoder (the top level plus any skip connections).
    fn encode_backward(
        &self,
        geom: &CloudGeometry,
        tape: EncoderTape,
        mut level_grads: Vec<Matrix>,
        grads: &mut Grads,
    ) -> Result<()> {
        let d = self.arch.coord_dim;
        for (l, hood_tapes) in tape.hoods.into_iter().enumerate().rev() {
            let slots = self.layout.encoder[l];
            let spec = self.spec_params(&slots);
            let (rows, cols) = tape.level_shapes[l];
            let mut below = if level_grads[l].shape() == (rows, cols) {
                std::mem::replace(&mut level_grads[l], Matrix::zeros(0, 0))
            } else {
                Matrix::zeros(rows, cols)
            };
            let out_grad = &level_grads[l + 1];
            let mut g_kernel_w = Matrix::zeros(self.params[match slots.kernel {
                KernelSlots::Spec { w, .. } | KernelSlots::Mlp { w } => w,
            }]
            .rows(), self.params[slots.b].cols());
            let mut g_g = vec![0.0; match slots.kernel {
                KernelSlots::Spec { g, .. } => self.params[g].cols(),
                KernelSlots::Mlp { .. } => 0,
            }];
            let mut g_b = vec![0.0; self.params[slots.b].cols()];
            for (h, ht) in hood_tapes.into_iter().enumerate() {
                let g_row = Matrix::from_vec(1, out_grad.cols(), out_grad.row(h).to_vec())?;
                let g_act = match &ht.pool {
                    PoolTape::Max(arg, k) => max_pool_set_backward(&g_row, arg, *k),
                    PoolTape::Cluster(t) => cluster_pool_backward(&g_row, t)?,
                };
                let (g_pre, gb) = bias_relu_backward(&g_act, &ht.relu);
                g_b.iter_mut().zip(&gb).for_each(|(s, v)| *s += v);
                let g_x = match (&ht.kernel, &spec, slots.kernel) {
                    (KernelTape::Spec(t), Some(p), _) => {
                        let sg = spectral_conv_backward(&g_pre, t, p)?;
                        g_kernel_w.add_assign(&sg.w_f);
                        g_g.iter_mut().zip(&sg.g).for_each(|(s, v)| *s += v);
                        sg.x
                    }
                    (KernelTape::Mlp(x), _, KernelSlots::Mlp { w }) => {
                        g_kernel_w.add_assign(&crate::linalg::matmul_tn(x, &g_pre)?);
                        crate::linalg::matmul_nt(&g_pre, &self.params[w])?
                    }
                    _ => unreachable!("tape matches kernel"),
                };
                if cols > 0 {
                    for (r, &i) in geom.levels[l].hoods[h].members.iter().enumerate() {
                        below.row_mut(i).iter_mut().zip(&g_x.row(r)[d..]).for_each(|(s, v)| *s += v);
                    }
                }
            }
            match slots.kernel {
                KernelSlots::Spec { g, w } => {
                    add_slot(grads, g, &Matrix::from_vec(1, g_g.len(), g_g)?);
                    add_slot(grads, w, &g_kernel_w);
                }
                KernelSlots::Mlp { w } => add_slot(grads, w, &g_kernel_w),
            }
            add_slot(grads, slots.b, &Matrix::from_vec(1, g_b.len(), g_b)?);
            level_grads[l] = below;
        }
        Ok(())
    }

    fn head_forward(&self, x: &Matrix, mode: Mode, masks: &[Option<Matrix>]) -> Result<(Matrix, Vec<DenseTape>)> {
        let mut h = x.clone();
        let mut tapes = Vec::with_capacity(self.layout.head.len());
        let mut bn_i = 0;
        for (i, d) in self.layout.head.iter().enumerate() {
            let bn = d.bn.map(|(g, b)| {
                let bn = BatchNorm {
                    gamma: self.params[g].as_slice(),
                    beta: self.params[b].as_slice(),
                    running: &self.bn[bn_i],
                };
                bn_i += 1;
                bn
            });
            let mask = masks.get(i).and_then(Option::as_ref);
            let (y, t) = dense_forward(&h, &self.params[d.w], self.params[d.b].as_slice(), bn, d.relu, mask, mode)?;
            h = y;
            tapes.push(t);
        }
        Ok((h, tapes))
    }

    fn head_backward(&self, grad: &Matrix, tapes: &[DenseTape], grads: &mut Grads) -> Result<Matrix> {
        let mut g = grad.clone();
        for (d, t) in self.layout.head.iter().zip(tapes).rev() {
            let gamma = d.bn.map(|(gi, _)| self.params[gi].as_slice());
            let dg = dense_backward(&g, t, &self.params[d.w], gamma)?;
            add_slot(grads, d.w, &dg.w);
            add_slot(grads, d.b, &Matrix::from_vec(1, dg.b.len(), dg.b)?);
            if let (Some((gi, bi)), Some(gg), Some(gb)) = (d.bn, dg.gamma, dg.beta) {
                add_slot(grads, gi, &Matrix::from_vec(1, gg.len(), gg)?);
                add_slot(grads, bi, &Matrix::from_vec(1, gb.len(), gb)?);
            }
            g = dg.x;
        }
        Ok(g)
    }

    fn global_feature(&self, cloud: &PointCloud, geom: &CloudGeometry) -> Result<Matrix> {
        let (mut feats, _) = self.encode(cloud, geom)?;
        Ok(row_vec(&feats.pop().expect("at least one level")))
    }

    fn require_head(&self, classify: bool) -> Result<()> {
        match (self.arch.head, classify) {
            (Head::Classify { .. }, true) | (Head::Segment { .. }, false) => Ok(()),
            _ => Err(Error::Config(format!(
                "network {} has a {} head",
                self.arch.name,
                if classify { "segmentation" } else { "classification" }
            ))),
        }
    }

    /// Eval-mode class logits for one cloud.
    pub fn forward_classify(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        let geom = self.geometry(cloud)?;
        self.forward_classify_with(cloud, &geom)
    }

    pub fn forward_classify_with(&self, cloud: &PointCloud, geom: &CloudGeometry) -> Result<Vec<f64>> {
        self.require_head(true)?;
        self.check_cloud(cloud)?;
        let g = self.global_feature(cloud, geom)?;
        Ok(self.head_forward(&g, Mode::Eval, &[])?.0.into_vec())
    }

    /// Eval-mode logits for many clouds, one row each.
    pub fn classify_batch(&self, items: &[(&PointCloud, &CloudGeometry)]) -> Result<Matrix> {
        self.require_head(true)?;
        let rows = items
            .par_iter()
            .map(|(c, g)| {
                self.check_cloud(c)?;
                self.global_feature(c, g)
            })
            .collect::<Result<Vec<_>>>()?;
        let x = stack_rows(&rows)?;
        Ok(self.head_forward(&x, Mode::Eval, &[])?.0)
    }

    /// Eval-mode per-point label logits, `n × n_labels`.
    pub fn forward_segment(&self, cloud: &PointCloud) -> Result<Matrix> {
        let geom = self.geometry(cloud)?;
        self.forward_segment_with(cloud, &geom)
    }

    pub fn forward_segment_with(&self, cloud: &PointCloud, geom: &CloudGeometry) -> Result<Matrix> {
        self.require_head(false)?;
        self.check_cloud(cloud)?;
        Ok(self.segment_pass(cloud, geom, None)?.0)
    }

    /// Forward, and backward when `labels` is given. Returns the logits, the
    /// summed per-point loss and the gradients of that sum scaled by `scale`.
    fn segment_pass(
        &self,
        cloud: &PointCloud,
        geom: &CloudGeometry,
        labels: Option<(&[usize], f64)>,
    ) -> Result<(Matrix, f64, Option<Grads>)> {
        let (feats, enc_tape) = self.encode(cloud, geom)?;
        let n_layers = self.arch.layers.len();
        let skip0 = cloud.coords.hconcat(&cloud.features)?;
        let mut cur = feats[n_layers].clone();
        let mut fp_tapes: Vec<Option<FpTape>> = (0..n_layers).map(|_| None).collect();
        for t in (0..n_layers).rev() {
            let slots = self.layout.fp[t];
            let skip = if t == 0 { &skip0 } else { &feats[t] };
            let (y, tape) = fp_forward(&cur, &geom.fp[t], skip, &self.params[slots.w], self.params[slots.b].as_slice())?;
            cur = y;
            fp_tapes[t] = Some(tape);
        }
        let (logits, head_tapes) = self.head_forward(&cur, Mode::Eval, &[])?;
        let Some((labels, scale)) = labels else {
            return Ok((logits, 0.0, None));
        };
        if labels.len() != logits.rows() {
            return Err(Error::Input(format!("{} labels for {} points", labels.len(), logits.rows())));
        }
        let mut loss = 0.0;
        let mut g_logits = Matrix::zeros(logits.rows(), logits.cols());
        for (i, &y) in labels.iter().enumerate() {
            if y >= logits.cols() {
                return Err(Error::Input(format!("part label {y} out of range")));
            }
            let (l, g) = cross_entropy(logits.row(i), y);
            loss += l;
            g_logits.row_mut(i).iter_mut().zip(g).for_each(|(o, v)| *o = v * scale);
        }
        let mut grads = self.empty_grads();
        let mut g = self.head_backward(&g_logits, &head_tapes, &mut grads)?;
        let mut level_grads: Vec<Matrix> = vec![Matrix::zeros(0, 0); n_layers + 1];
        for t in 0..n_layers {
            let slots = self.layout.fp[t];
            let tape = fp_tapes[t].take().expect("forward ran");
            let fg = fp_backward(&g, &tape, &geom.fp[t], &self.params[slots.w])?;
            add_slot(&mut grads, slots.w, &fg.w);
            add_slot(&mut grads, slots.b, &Matrix::from_vec(1, fg.b.len(), fg.b)?);
            if t > 0 {
                level_grads[t] = fg.skip_feats;
            }
            g = fg.coarse_feats;
        }
        level_grads[n_layers] = g;
        self.encode_backward(geom, enc_tape, level_grads, &mut grads)?;
        Ok((logits, loss, Some(grads)))
    }

    /// Train-mode forward and backward of the classifier over a batch.
    /// Dropout masks are drawn from `rng` when given; the BN running
    /// statistics are updated with `momentum`.
    pub fn classify_train_batch<R: Rng>(
        &mut self,
        batch: &[(&PointCloud, &CloudGeometry, usize)],
        momentum: f64,
        rng: Option<&mut R>,
    ) -> Result<BatchOutput> {
        self.require_head(true)?;
        let Head::Classify { n_classes } = self.arch.head else { unreachable!() };
        if let Some(&(_, _, y)) = batch.iter().find(|b| b.2 >= n_classes) {
            return Err(Error::Input(format!("class label {y} out of range")));
        }
        let encoded = batch
            .par_iter()
            .map(|(c, g, _)| {
                self.check_cloud(c)?;
                self.encode(c, g)
            })
            .collect::<Result<Vec<_>>>()?;
        let rows: Vec<Matrix> = encoded.iter().map(|(f, _)| row_vec(f.last().expect("levels"))).collect();
        let x = stack_rows(&rows)?;
        let bsz = batch.len();
        let masks: Vec<Option<Matrix>> = match rng {
            Some(rng) => self
                .layout
                .head
                .iter()
                .map(|d| {
                    d.bn.map(|_| {
                        let cols = self.params[d.w].cols();
                        Matrix::from_fn(bsz, cols, |_, _| if rng.random::<f64>() < HEAD_KEEP { 1.0 / HEAD_KEEP } else { 0.0 })
                    })
                })
                .collect(),
            None => Vec::new(),
        };
        let (logits, tapes) = self.head_forward(&x, Mode::Train, &masks)?;
        let mut loss = 0.0;
        let mut correct = 0;
        let mut g_logits = Matrix::zeros(bsz, n_classes);
        for (i, &(_, _, y)) in batch.iter().enumerate() {
            let (l, g) = cross_entropy(logits.row(i), y);
            loss += l;
            correct += usize::from(argmax(logits.row(i)) == y);
            g_logits.row_mut(i).iter_mut().zip(g).for_each(|(o, v)| *o = v / bsz as f64);
        }
        let mut grads = self.empty_grads();
        let g_x = self.head_backward(&g_logits, &tapes, &mut grads)?;
        let n_layers = self.arch.layers.len();
        let per_item = encoded
            .into_par_iter()
            .zip(batch.par_iter())
            .enumerate()
            .map(|(i, ((feats, tape), (_, geom, _)))| {
                let mut level_grads = vec![Matrix::zeros(0, 0); n_layers + 1];
                level_grads[n_layers] = Matrix::from_vec(1, g_x.cols(), g_x.row(i).to_vec())?;
                drop(feats);
                let mut g = self.empty_grads();
                self.encode_backward(geom, tape, level_grads, &mut g)?;
                Ok(g)
            })
            .collect::<Result<Vec<_>>>()?;
        for g in &per_item {
            accumulate(&mut grads, g);
        }
        let mut bn_i = 0;
        for (d, t) in self.layout.head.iter().zip(&tapes) {
            if d.bn.is_some() {
                let (mean, var) = t.batch_stats().expect("train-mode batch norm");
                self.bn[bn_i].update(mean, var, momentum);
                bn_i += 1;
            }
        }
        Ok(BatchOutput { loss: loss / bsz as f64, correct, total: bsz, grads: self.fill_grads(grads) })
    }

    /// Forward and backward of the segmenter over a batch. The loss is the
    /// mean over clouds of each cloud's mean per-point cross-entropy.
    pub fn segment_train_batch(&self, batch: &[(&PointCloud, &CloudGeometry)]) -> Result<BatchOutput> {
        self.require_head(false)?;
        let bsz = batch.len() as f64;
        let per_item = batch
            .par_iter()
            .map(|(c, g)| {
                self.check_cloud(c)?;
                let labels = c.labels.as_deref().ok_or_else(|| Error::Input("cloud has no part labels".into()))?;
                let scale = 1.0 / (bsz * labels.len() as f64);
                let (logits, loss, grads) = self.segment_pass(c, g, Some((labels, scale)))?;
                let correct = (0..logits.rows()).filter(|&i| argmax(logits.row(i)) == labels[i]).count();
                Ok((loss / labels.len() as f64, correct, labels.len(), grads.expect("backward ran")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut grads = self.empty_grads();
        let (mut loss, mut correct, mut total) = (0.0, 0, 0);
        for (l, c, n, g) in &per_item {
            loss += l;
            correct += c;
            total += n;
            accumulate(&mut grads, g);
        }
        Ok(BatchOutput { loss: loss / bsz, correct, total, grads: self.fill_grads(grads) })
    }

    /// Replaces untouched slots with zeros of the right shape.
    fn fill_grads(&self, mut grads: Grads) -> Grads {
        for (g, p) in grads.iter_mut().zip(&self.params) {
            if g.shape() != p.shape() {
                *g = Matrix::zeros(p.rows(), p.cols());
            }
        }
        grads
    }
}

fn add_slot(grads: &mut Grads, slot: usize, g: &Matrix) {
    accumulate(&mut grads[slot..slot + 1], std::slice::from_ref(g));
}

fn stack_rows(rows: &[Matrix]) -> Result<Matrix> {
    let cols = rows.first().map_or(0, Matrix::cols);
    let mut data = Vec::with_capacity(rows.len() * cols);
    for r in rows {
        data.extend_from_slice(r.as_slice());
    }
    Matrix::from_vec(rows.len(), cols, data)
}
