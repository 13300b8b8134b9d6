//! Desk-scale benchmark toolkit for segmentation of undersampled multi-coil
//! MRI: acquisition simulation, classical data-consistent reconstruction,
//! baseline segmentation, quality metrics and nonparametric statistics.

pub mod coil;
pub mod container;
pub mod error;
pub mod fourier;
pub mod harness;
pub mod metrics;
pub mod operator;
pub mod phantom;
pub mod recon;
pub mod rng;
pub mod sampling;
pub mod segment;
pub mod stats;
pub mod transforms;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{AcquisitionMode, Domain, ImageVolume, KSpaceData};
