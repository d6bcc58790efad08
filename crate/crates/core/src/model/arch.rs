use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::WeightScheme;
use crate::layers::pooling::canonical_csize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kernel {
    PointMlp,
    SpecConv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pooling {
    Max,
    ClusterPool,
}

/// What the cluster-pool graphs are built from at each recurrence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterGraph {
    /// Member coordinates relative to the centroid; pooled clusters sit at
    /// the centroid of their members.
    Spatial,
    /// The pooled features themselves.
    Features,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub centroids: usize,
    pub k: usize,
    pub out_dim: usize,
    pub kernel: Kernel,
    pub pooling: Pooling,
    /// Cluster size for a global (single-centroid) cluster-pool layer whose
    /// `k` is not of the form `2c²`. Ignored otherwise.
    pub csize: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    Classify { n_classes: usize },
    Segment { n_labels: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    /// Coordinate dimension (3 for shapes, 2 for images).
    pub coord_dim: usize,
    /// Per-point input feature channels besides coordinates.
    pub in_features: usize,
    pub layers: Vec<LayerSpec>,
    pub head: Head,
    pub weight_scheme: WeightScheme,
    pub cluster_graph: ClusterGraph,
    /// Widths of the batch-normalized, dropout-regularized classifier layers.
    #[serde(default = "default_head_hidden")]
    pub head_hidden: Vec<usize>,
}

fn default_head_hidden() -> Vec<usize> {
    HEAD_HIDDEN.to_vec()
}

/// Classification head widths.
pub const HEAD_HIDDEN: [usize; 2] = [512, 256];
pub const HEAD_KEEP: f64 = 0.5;

/// The four network families compared in the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    PointNet3,
    PointNet4,
    SpecMax4,
    SpecCp4,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "3l-pointnet++" => Ok(Variant::PointNet3),
            "4l-pointnet++" => Ok(Variant::PointNet4),
            "4l-spec-max" => Ok(Variant::SpecMax4),
            "4l-spec-cp" => Ok(Variant::SpecCp4),
            other => Err(Error::Config(format!(
                "unknown architecture {other:?} (expected 3l-pointnet++, 4l-pointnet++, 4l-spec-max, 4l-spec-cp)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::PointNet3 => "3l-pointnet++",
            Variant::PointNet4 => "4l-pointnet++",
            Variant::SpecMax4 => "4l-spec-max",
            Variant::SpecCp4 => "4l-spec-cp",
        }
    }

    fn kernel_pooling(self) -> (Kernel, Pooling) {
        match self {
            Variant::PointNet3 | Variant::PointNet4 => (Kernel::PointMlp, Pooling::Max),
            Variant::SpecMax4 => (Kernel::SpecConv, Pooling::Max),
            Variant::SpecCp4 => (Kernel::SpecConv, Pooling::ClusterPool),
        }
    }
}

impl ArchSpec {
    fn from_table(
        variant: Variant,
        centroids: &[usize],
        ks: &[usize],
        dims: &[usize],
        coord_dim: usize,
        in_features: usize,
        head: Head,
    ) -> Self {
        let (kernel, pooling) = variant.kernel_pooling();
        let layers = centroids
            .iter()
            .zip(ks)
            .zip(dims)
            .map(|((&c, &k), &m)| LayerSpec {
                centroids: c,
                k,
                out_dim: m,
                kernel,
                pooling,
                csize: (pooling == Pooling::ClusterPool && c == 1 && canonical_csize(k).is_none()).then_some(4),
            })
            .collect();
        ArchSpec {
            name: variant.name().to_string(),
            coord_dim,
            in_features,
            layers,
            head,
            weight_scheme: WeightScheme::gaussian(),
            cluster_graph: ClusterGraph::Spatial,
            head_hidden: default_head_hidden(),
        }
    }

    /// Full-size classification networks for 1024-point inputs.
    pub fn table_1k(variant: Variant, n_classes: usize, in_features: usize) -> Self {
        let head = Head::Classify { n_classes };
        match variant {
            Variant::PointNet3 => {
                Self::from_table(variant, &[512, 128, 1], &[64, 64, 128], &[128, 256, 1024], 3, in_features, head)
            }
            _ => Self::from_table(
                variant,
                &[512, 128, 32, 1],
                &[32, 32, 8, 32],
                &[128, 256, 512, 1024],
                3,
                in_features,
                head,
            ),
        }
    }

    /// Full-size classification networks for 2048-point inputs.
    pub fn table_2k(variant: Variant, n_classes: usize, in_features: usize) -> Self {
        let head = Head::Classify { n_classes };
        match variant {
            Variant::PointNet3 => {
                Self::from_table(variant, &[1024, 256, 1], &[64, 64, 256], &[128, 256, 1024], 3, in_features, head)
            }
            _ => Self::from_table(
                variant,
                &[1024, 256, 64, 1],
                &[32, 32, 8, 64],
                &[128, 256, 512, 1024],
                3,
                in_features,
                head,
            ),
        }
    }

    /// Desk-scale classifier: centroids (64, 16, 1), k (32, 8, 16).
    /// The two "4l" point-MLP and spectral variants share this geometry.
    pub fn desk_classifier(variant: Variant, n_classes: usize, coord_dim: usize, in_features: usize) -> Self {
        Self::from_table(
            variant,
            &[64, 16, 1],
            &[32, 8, 16],
            &DESK_DIMS,
            coord_dim,
            in_features,
            Head::Classify { n_classes },
        )
    }

    /// Desk-scale segmentation encoder: centroids (128, 32, 1), k (32, 8, 32).
    /// The global layer gives every point whole-shape context through the decoder.
    pub fn desk_segmenter(variant: Variant, n_labels: usize, coord_dim: usize, in_features: usize) -> Self {
        Self::from_table(
            variant,
            &[128, 32, 1],
            &[32, 8, 32],
            &DESK_DIMS,
            coord_dim,
            in_features,
            Head::Segment { n_labels },
        )
    }

    /// Checks structural rules; the error names the rule that failed.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config(format!("{}: at least one layer required", self.name)));
        }
        if self.coord_dim == 0 {
            return Err(Error::Config(format!("{}: coordinate dimension must be positive", self.name)));
        }
        let mut prev_c: Option<usize> = None;
        for (i, l) in self.layers.iter().enumerate() {
            let at = |rule: &str| Error::Config(format!("{} layer {}: {rule}", self.name, i + 1));
            if l.centroids == 0 || l.k == 0 || l.out_dim == 0 {
                return Err(at("centroid count, k and output dim must be positive"));
            }
            if let Some(p) = prev_c {
                if l.centroids > p {
                    return Err(at("centroid counts must be non-increasing across layers"));
                }
                if l.k > p {
                    return Err(at("k exceeds the number of points produced by the previous layer"));
                }
            }
            if l.pooling == Pooling::ClusterPool {
                let global = l.centroids == 1;
                match (canonical_csize(l.k), l.csize) {
                    (Some(c), _) if c >= 2 => {}
                    (_, Some(c)) if global && c >= 2 => {}
                    _ => return Err(at(&format!("cluster pooling requires k = 2c² with c >= 2 (k = {})", l.k))),
                }
            }
            prev_c = Some(l.centroids);
        }
        match self.head {
            Head::Classify { n_classes } => {
                if n_classes == 0 {
                    return Err(Error::Config(format!("{}: classifier needs at least one class", self.name)));
                }
                if self.head_hidden.contains(&0) {
                    return Err(Error::Config(format!("{}: head widths must be positive", self.name)));
                }
                if self.layers.last().map(|l| l.centroids) != Some(1) {
                    return Err(Error::Config(format!(
                        "{}: final layer must have a single centroid for classification",
                        self.name
                    )));
                }
            }
            Head::Segment { n_labels } => {
                if n_labels == 0 {
                    return Err(Error::Config(format!("{}: segmenter needs at least one label", self.name)));
                }
            }
        }
        Ok(())
    }

    /// Cluster size used by layer `i`, when it cluster-pools.
    pub fn csize(&self, i: usize) -> Option<usize> {
        let l = &self.layers[i];
        if l.pooling != Pooling::ClusterPool {
            return None;
        }
        canonical_csize(l.k).filter(|&c| c >= 2).or(l.csize)
    }

    /// Input width of layer `i`: relative coordinates plus incoming features.
    pub fn layer_in_dim(&self, i: usize) -> usize {
        let prev = if i == 0 { self.in_features } else { self.layers[i - 1].out_dim };
        self.coord_dim + prev
    }

    /// Smallest cloud the network accepts.
    pub fn min_points(&self) -> usize {
        self.layers[0].centroids.max(self.layers[0].k)
    }
}

/// Per-layer widths of the desk-scale networks.
pub const DESK_DIMS: [usize; 3] = [32, 64, 128];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_spec_cp_csizes() {
        let a = ArchSpec::table_1k(Variant::SpecCp4, 40, 0);
        a.validate().unwrap();
        let cs: Vec<_> = (0..4).map(|i| a.csize(i).unwrap()).collect();
        assert_eq!(cs, vec![4, 4, 2, 4]);
        ArchSpec::table_2k(Variant::SpecCp4, 40, 3).validate().unwrap();
        ArchSpec::table_1k(Variant::PointNet3, 40, 0).validate().unwrap();
    }

    #[test]
    fn rejects_non_square_cluster_neighborhood() {
        let mut a = ArchSpec::desk_classifier(Variant::SpecCp4, 4, 3, 0);
        a.layers[0].k = 10;
        let err = a.validate().unwrap_err().to_string();
        assert!(err.contains("2c²"), "{err}");
    }

    #[test]
    fn rejects_growing_centroids_and_missing_global_layer() {
        let mut a = ArchSpec::desk_classifier(Variant::PointNet4, 4, 3, 0);
        a.layers[1].centroids = 100;
        assert!(a.validate().unwrap_err().to_string().contains("non-increasing"));
        let mut b = ArchSpec::desk_classifier(Variant::PointNet4, 4, 3, 0);
        b.layers.pop();
        assert!(b.validate().unwrap_err().to_string().contains("single centroid"));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in [Variant::PointNet3, Variant::PointNet4, Variant::SpecMax4, Variant::SpecCp4] {
            assert_eq!(Variant::parse(v.name()).unwrap(), v);
        }
        assert!(Variant::parse("5l").is_err());
    }
}
