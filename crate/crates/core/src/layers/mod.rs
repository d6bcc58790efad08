//! Differentiable building blocks. Every forward returns the output plus a
//! tape holding what the matching backward needs.

pub mod interp;
pub mod point_mlp;
pub mod pooling;
pub mod spectral_conv;

pub use interp::{fp_backward, fp_forward, fp_interpolate, interp_weights, interpolate, FpTape, InterpWeights};
pub use point_mlp::{
    bias_relu_backward, bias_relu_forward, point_mlp_backward, point_mlp_forward, PointMlpTape, ReluTape,
};
pub use pooling::{
    cluster_plan, cluster_pool_apply, cluster_pool_backward, cluster_pool_forward,
    cluster_pool_forward_on_features, max_pool_set, max_pool_set_backward, ClusterPlan, ClusterPoolTape,
    PoolMode, PoolSpec,
};
pub use spectral_conv::{spectral_conv_backward, spectral_conv_forward, SpecConvParams, SpecConvTape};
