//! Tools for judging the quality of feature embeddings.
//!
//! The crate covers the full post-processing and evaluation chain that sits
//! between "I have feature vectors" and "I have comparable scores":
//!
//! - [`dataio`] — a compact binary feature format (EMB1), label CSVs,
//!   class-disjoint train/test splits, and per-class subsampling.
//! - [`transforms`] — L2 normalization and dimensionality reduction
//!   (PCA, random orthogonal projection, identity).
//! - [`metrics`] — softmax/cross-entropy primitives, pairwise distances,
//!   and a distance that quotients out shifts a softmax head cannot see.
//! - [`clustering`] — seeded k-means with repeated runs scored by
//!   normalized mutual information.
//! - [`retrieval`] — exact nearest-neighbor search and Recall@K.
//! - [`training`] — desk-scale softmax classifiers (with optional
//!   bottleneck/dropout variants) and a contrastive-loss embedder, both
//!   with analytic gradients.
//! - [`experiment`] — a config-driven runner that ties the above into a
//!   reproducible report.
//!
//! Everything that draws random numbers takes an explicit seed and uses
//! ChaCha8 streams, so results are reproducible across platforms. Features
//! are stored on disk as 32-bit floats; all in-memory arithmetic is f64.
//!
//! The `embed-eval` binary exposes the same functionality as subcommands;
//! the `examples/` directory has one runnable example per capability.

pub mod clustering;
pub mod dataio;
pub mod experiment;
mod linalg;
pub mod matrix;
pub mod metrics;
pub mod retrieval;
pub mod training;
pub mod transforms;

pub use matrix::FeatureMatrix;

use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed or inconsistent data in a file (bad magic, shape mismatch,
    /// non-finite values, broken CSV).
    #[error("data format error: {0}")]
    Format(String),
    /// Invalid argument, configuration, or precondition violation.
    #[error("invalid input: {0}")]
    Invalid(String),
    /// Numerical failure (rank deficiency, degenerate subspace).
    #[error("numeric error: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// An [`Error::Io`] tagged with the path being touched.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
