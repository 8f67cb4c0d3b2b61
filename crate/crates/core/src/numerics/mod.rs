//! Sparse and dense linear algebra used by the rest of the crate.

pub mod cholesky;
pub mod dense;
pub mod eigen;
pub mod mtx;
pub mod sparse;

pub use cholesky::{factorize_spd, SpdFactorization};
pub use dense::{
    condition_estimate, dense_inverse, dense_solve, frobenius_norm, spectral_norm_estimate,
    FnOperator, LinearOperator,
};
pub use eigen::{sym_eig_topk, EigenPairs};
pub use sparse::SparseMatrix;
