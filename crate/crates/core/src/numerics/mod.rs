//! Dense linear algebra and seeded sampling shared by every other module.

mod linalg;
mod matrix;
mod rng;

pub use linalg::{
    covariance, haar_rotation, psd_factor, sample_standard_gaussian, symmetric_eigen,
    whitening_matrix, Whitening, DEFAULT_EIGEN_FLOOR, DEFAULT_JITTER,
};
pub use matrix::{dot, Matrix};
pub use rng::Rng;
