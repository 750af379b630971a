//! Samplers for the reduction from planted-clique detection to sparse PCA
//! and sparse CCA, with the accompanying numerical checks.
//!
//! [`graph`] draws Erdős–Rényi graphs with an optional planted clique,
//! [`density`] holds the two Gaussianization densities used to turn edge
//! indicators into continuous entries, [`pipeline`] maps graphs to
//! spiked-covariance data and that data to canonical-pair data,
//! [`discrete`] covers the finite-precision variants, and [`tv`] computes
//! total variation distances by quadrature.

pub mod density;
pub mod discrete;
pub mod graph;
pub mod pipeline;
pub mod tv;

pub use density::{EdgeIndicator, GaussianizationDensity, GaussianizedMixture, ReductionParams};
pub use discrete::{quantize, DyadicParams, DyadicTable};
pub use graph::{sample_graph, CliqueInstance};
pub use pipeline::{cca_to_pca_estimator, pca_test, pca_to_cca, reduce_to_pca};
pub use tv::tv_numeric;
