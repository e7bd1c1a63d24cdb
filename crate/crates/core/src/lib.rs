//! Geometric mean metric learning: closed-form Mahalanobis metrics on the
//! SPD geodesic between inverse similarity scatter and dissimilarity
//! scatter, with a k-NN evaluation harness and file I/O.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod io;
pub mod learn;
pub mod spd;
pub mod synthetic;

pub use dataset::{DatasetFingerprint, LabeledDataset, Standardizer};
pub use error::{Error, Result};
pub use learn::{
    learn, scatter_matrices, solve_plain, solve_regularized, solve_weighted, GmmlConfig, LearnedMetric,
    MetricPath, PairConstraints, Prior, ScatterMatrices,
};
pub use spd::{geodesic, riemannian_distance, Matrix, SpdMatrix, SymMatrix};
