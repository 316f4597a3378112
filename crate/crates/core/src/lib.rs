//! Lasso variable-selection p-values from first-activation strengths, and
//! a battery of tests for the quality and cross-batch comparability of
//! batched p-values or generic significance statistics.

pub mod dataset;
pub mod error;
pub mod evalsuite;
pub mod lars;
pub mod lassopv;
pub mod netharness;
pub mod pipeline;

pub use dataset::{load_matrix, DataMatrix, TableFormat};
pub use error::{Error, Result};
pub use lars::{compute_path, first_activation, residual_at_entry, verify_kkt, PathOptions, RegularizationPath};
