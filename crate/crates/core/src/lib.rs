//! Planar-target camera calibration: feature extraction from images of a
//! square-box target, closed-form intrinsics from homographies, radial
//! distortion estimation, nonlinear refinement, and single-view pose tools.

pub mod calib;
pub mod cli;
pub mod distortion;
pub mod error;
pub mod formats;
pub mod geometry;
pub mod homography;
pub mod imaging;
pub mod optim;
pub mod pose;
pub mod synth;

pub use error::{Error, Result};
