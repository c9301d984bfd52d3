//! Deterministic low-level kernels: small dense matrices, Jacobi SVD, real
//! DFT, least squares and seeded random streams.

mod dft;
mod linalg;
mod matrix;
mod rng;
mod svd;

pub use dft::{dft_real, idft_real, ComplexSpectrum};
pub use linalg::{cholesky_solve, least_squares, sample_gaussian_matrix};
pub use matrix::Matrix;
pub(crate) use matrix::{gemm, Op};
pub use rng::{sample_truncated_normal, truncated_normal, RngStream};
pub use svd::{svd, Svd};

pub use num_complex::Complex64;
