//! Model-based clustering of multidimensional arrays.
//!
//! Each observation is an order-`D` array ([`Mda`]) modelled as a draw from a
//! finite mixture of multilinear normal distributions, whose vec-covariance is
//! the Kronecker product of one scale matrix per dimension. The crate covers
//!
//! * array plumbing: vectorization, mode-1 matricization, axis permutation,
//!   mode products ([`mda`]);
//! * the multilinear normal density, evaluated through per-slice trace sums
//!   without ever forming the full Kronecker covariance ([`mlnd`]);
//! * an ECM fitting loop with k-means starts, log-sum-exp responsibilities,
//!   Aitken stopping, regularization and identifiability normalization ([`em`]);
//! * parsimonious scale families per dimension ([`parsimony`]);
//! * BIC and grid scans over group counts and scale families ([`selection`]);
//! * agreement and recovery metrics ([`metrics`]);
//! * a reproducible, parallel simulation harness ([`simulate`]);
//! * dataset/result file formats and the command-line front end ([`cli`]).
//!
//! Axis indices in the public API are zero-based: axis `0` is the first
//! dimension of an array.
//!
//! # Examples
//!
//! ```text
//! cargo run --example tensor_ops
//! cargo run --example density
//! cargo run --release --example fit_mixture
//! cargo run --release --example parsimonious_models
//! cargo run --release --example model_selection
//! cargo run --example clustering_metrics
//! cargo run --release --example dataset_io
//! cargo run --release --example simulation_study -- 25
//! ```

pub mod cli;
pub mod em;
pub mod error;
mod linalg;
pub mod mda;
pub mod metrics;
pub mod mlnd;
pub mod parsimony;
pub mod selection;
pub mod simulate;

pub use em::{fit, FitOptions, FitReport, MixtureModel, Responsibilities};
pub use error::{Error, Result};
pub use mda::{Matricization, Mda};
pub use mlnd::MlndParams;
pub use parsimony::ScaleModelSpec;
