//! Saddle-center homoclinic orbits of symplectic 4-D maps: local normal forms,
//! scattering of the center plane along the orbit, KAM curves of the center
//! map and their stable/unstable cylinders on a cross-section.

pub mod center_dynamics;
pub mod cli_io;
pub mod error;
pub mod fixed_point_analysis;
pub mod homoclinic;
pub mod model_zoo;
pub mod poly;
pub mod scattering;
pub mod sigma_analysis;
pub mod symplectic_core;

pub use error::{Error, Result};
