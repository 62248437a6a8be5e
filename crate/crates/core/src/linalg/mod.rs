//! Dense linear algebra written for this crate: products, SVD, QR,
//! eigenvalues, inverses and numerical rank.

// Index loops mirror the textbook formulations of these algorithms.
#![allow(clippy::needless_range_loop)]

mod eigen;
pub mod io;
mod lu;
mod matrix;
mod qr;
mod svd;

pub use eigen::eigenvalues;
pub use lu::inverse;
pub use matrix::{FlopCounter, Matrix};
pub use qr::qr_decompose;
pub use svd::{
    left_pseudo_inverse, numerical_rank, pseudo_inverse, svd, SvdResult, MAX_SWEEPS,
    ORTHOGONALITY_TOL,
};
