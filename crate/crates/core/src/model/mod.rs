//! Network assembly: architecture tables, per-cloud geometry, parameters,
//! forward/backward passes and checkpoints.

pub mod arch;
pub mod checkpoint;
pub mod dense;
pub mod geometry;
pub mod network;

pub use arch::{ArchSpec, ClusterGraph, Head, Kernel, LayerSpec, Pooling, Variant};
pub use dense::{dense_backward, dense_forward, BatchNorm, BnStats, DenseTape, Mode};
pub use geometry::CloudGeometry;
pub use network::{closed_form_param_count, BatchOutput, Grads, Network};
