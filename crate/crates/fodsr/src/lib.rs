//! FOD angular super-resolution toolkit.
//!
//! Fits and manipulates spherical-harmonic fiber-orientation-distribution
//! (FOD) volumes, trains a 3D shifted-window transformer encoder-decoder to
//! map degraded single-shell-like FOD coefficients to high-quality targets on
//! synthetic phantoms, reconstructs whole volumes by overlap-blended sliding
//! windows, and evaluates results with the Angular Correlation Coefficient
//! stratified by tissue composition.

mod seeds;
pub mod error;
pub mod eval;
pub mod infer;
pub mod model;
pub mod nifti;
pub mod patch;
pub mod phantom;
pub mod sh;
pub mod sphere;
pub mod train;
pub mod volume;

pub use error::{FodError, Result};
pub use volume::{FodVolume, TissueFractions, VolumeHeader};
