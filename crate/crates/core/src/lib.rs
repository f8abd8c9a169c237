//! Morphometric pipelines for 3D landmark curves.
//!
//! Classical geometric morphometrics (GPA + PCA), functional data
//! morphometrics (B-spline smoothing + multivariate FPCA) and their
//! arc-length and square-root-velocity (elastic / soft) variants, together
//! with the classifiers and cross-validation harness used to compare them.

pub mod basis;
pub mod classify;
pub mod curvetools;
pub mod error;
pub mod fpca;
pub mod io;
pub mod landmarks;
pub mod linalg;
pub mod pca;
pub mod pipelines;
pub mod simgen;
pub mod srvf;

pub use error::{Result, ShapeError};
