//! Everything a forward pass needs that depends only on point coordinates:
//! sampled centroids, neighborhoods, graph bases, cluster-pool plans and
//! interpolation weights. Built once per cloud and reused across epochs
//! when the cloud does not change.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::build_graph;
use crate::layers::interp::{interp_weights, InterpWeights};
use crate::layers::pooling::{cluster_plan, ClusterPlan, PoolSpec};
use crate::linalg::Matrix;
use crate::model::arch::{ArchSpec, ClusterGraph, Head, Kernel, Pooling};
use crate::sampling::{fps, knn, relative_coords};

#[derive(Clone, Debug)]
pub struct HoodGeometry {
    pub members: Vec<usize>,
    pub rel: Matrix,
    /// Graph Fourier basis of `rel`, present for spectral kernels.
    pub basis: Option<Arc<Matrix>>,
    /// Present for spatial cluster pooling.
    pub plan: Option<ClusterPlan>,
}

#[derive(Clone, Debug)]
pub struct LevelGeometry {
    pub centroids: Vec<usize>,
    pub hoods: Vec<HoodGeometry>,
}

#[derive(Clone, Debug)]
pub struct CloudGeometry {
    /// `positions[0]` is the input cloud; `positions[l + 1]` holds layer
    /// `l`'s centroids.
    pub positions: Vec<Matrix>,
    pub levels: Vec<LevelGeometry>,
    /// Segmentation only: `fp[l]` interpolates level `l + 1` onto level `l`.
    pub fp: Vec<InterpWeights>,
}

impl CloudGeometry {
    pub fn build(arch: &ArchSpec, coords: &Matrix) -> Result<Self> {
        if coords.cols() != arch.coord_dim {
            return Err(Error::Input(format!(
                "cloud has {}-d coordinates, network expects {}",
                coords.cols(),
                arch.coord_dim
            )));
        }
        if coords.rows() < arch.min_points() {
            return Err(Error::Input(format!(
                "cloud has {} points, network needs at least {}",
                coords.rows(),
                arch.min_points()
            )));
        }
        let mut positions = vec![coords.clone()];
        let mut levels = Vec::with_capacity(arch.layers.len());
        for (i, layer) in arch.layers.iter().enumerate() {
            let pts = &positions[i];
            let centroids = fps(pts, layer.centroids)?;
            let needs_basis = layer.kernel == Kernel::SpecConv;
            let plan_spec = match (layer.pooling, arch.cluster_graph) {
                (Pooling::ClusterPool, ClusterGraph::Spatial) => {
                    Some(PoolSpec::new(arch.csize(i).expect("validated cluster size"))?)
                }
                _ => None,
            };
            let hoods = centroids
                .iter()
                .map(|&c| {
                    let members = knn(pts, c, layer.k)?;
                    let rel = relative_coords(pts, &members, c);
                    let basis = if needs_basis || plan_spec.is_some_and(|s| rel.rows() > s.csize) {
                        Some(Arc::new(build_graph(&rel, &arch.weight_scheme)?.basis))
                    } else {
                        None
                    };
                    let plan = match plan_spec {
                        Some(spec) => Some(cluster_plan(&rel, spec, &arch.weight_scheme, basis.as_deref())?),
                        None => None,
                    };
                    let basis = if needs_basis { basis } else { None };
                    Ok(HoodGeometry { members, rel, basis, plan })
                })
                .collect::<Result<Vec<_>>>()?;
            positions.push(pts.select_rows(&centroids));
            levels.push(LevelGeometry { centroids, hoods });
        }
        let fp = match arch.head {
            Head::Segment { .. } => (0..arch.layers.len())
                .map(|l| interp_weights(&positions[l + 1], &positions[l]))
                .collect::<Result<Vec<_>>>()?,
            Head::Classify { .. } => Vec::new(),
        };
        Ok(Self { positions, levels, fp })
    }
}
