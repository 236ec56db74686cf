//! Low-rank plus sparse covariance estimation for approximate factor models.
//!
//! The crate provides the ALCE/UNALCE estimators, the POET baseline, factor
//! score computation, a simulation lab with a Monte Carlo driver, evaluation
//! metrics, and plain-text I/O for fits and datasets.

pub mod alce;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod poet;
pub mod report;
pub mod scores;
pub mod sim;
pub mod study;

pub use error::{Error, Result};
pub use linalg::{EigenPair, LowRankComponent, NormKind, SparseComponent, SymMatrix};
