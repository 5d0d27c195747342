//! Randomized Kronecker fractal expansion of sparse binary user/item
//! interaction matrices.
//!
//! The pipeline is:
//!
//! 1. [`ingest`]: parse a ratings file, binarize, drop low-activity users and
//!    split each user's latest interaction into a test matrix.
//! 2. [`reducer`]: build a small dense matrix `R̂` sharing the leading singular
//!    spectrum of the training matrix.
//! 3. [`expander`]: expand `R̂ ⊗ R` block by block, either as a plain
//!    Kronecker product or with per-block Bernoulli thinning and row/column
//!    shuffles, writing sharded output.
//! 4. [`stats`]: compare ranked row sums, column sums and spectra of the
//!    original and expanded matrices.

pub mod dense;
pub mod error;
pub mod expander;
pub mod ingest;
pub mod reducer;
pub mod sparse;
pub mod spectral;
pub mod stats;

pub use dense::DenseSmallMatrix;
pub use error::{Error, Result};
pub use sparse::{LinearOperator, SignedSparseMatrix, SparseBinaryMatrix, SparseRealMatrix};
