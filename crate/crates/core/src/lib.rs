//! Two-stage sparse canonical correlation analysis.
//!
//! The estimator first solves an ℓ1-penalized convex relaxation of sparse CCA
//! with ADMM ([`stage1`]), then refines the leading singular vectors of the
//! solution by a row-sparse group-Lasso regression with a cross-validated
//! penalty ([`stage2`]). An exhaustive combinatorial estimator usable at tiny
//! dimensions lives in [`oracle`], and [`reduction`] implements the samplers
//! that map planted-clique graphs to spiked-covariance and canonical-pair data.
//!
//! Matrices are dense `nalgebra` matrices of `f64`; see [`linalg::Matrix`].

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod quadrature;
pub mod reduction;
pub mod stage1;
pub mod stage2;

pub use error::{Error, Result};
pub use experiment::{
    run_experiment, run_misspec, run_reduction_checks, CheckRow, ExperimentConfig,
    ExperimentSummary, Misspecification, ReductionCheckConfig, ResultRow,
};
pub use linalg::{Matrix, SvdResult};
pub use model::{
    CanonicalPairModel, CovarianceKind, SampleSet, SparsityProfile,
};
pub use stage1::{AdmmConfig, AdmmState};
pub use stage2::{CvConfig, EstimatorOutput, GroupLassoConfig};
