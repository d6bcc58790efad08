//! Point-set feature learning with local spectral graph convolution and
//! recursive cluster pooling.
//!
//! Each layer samples centroids by farthest point sampling, groups their
//! k nearest neighbors, builds a small graph per neighborhood, filters the
//! neighborhood's features in that graph's Fourier basis, and summarizes the
//! filtered features with either max pooling or recursive cluster pooling
//! along the Fiedler vector. Everything is dense `f64` and CPU-only; gradients
//! are written out by hand.

pub mod check;
pub mod cli;
pub mod data;
pub mod error;
pub mod graph;
pub mod layers;
pub mod linalg;
pub mod model;
pub mod sampling;
pub mod suites;
pub mod training;

pub use error::{Error, Result};
pub use linalg::Matrix;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/spectral-graphs.md")]
    mod spectral_graphs {}
    #[doc = include_str!("../../../book/src/spectral-convolution.md")]
    mod spectral_convolution {}
    #[doc = include_str!("../../../book/src/cluster-pooling.md")]
    mod cluster_pooling {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
}
