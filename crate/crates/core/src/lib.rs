//! Polarization-chain simulator for a ground-to-satellite entangled-photon
//! uplink: coated-mirror optics, pass geometry from TLEs, half-wave-plate
//! motion compensation, and a CHSH coincidence engine.

pub mod angles;
pub mod antenna;
pub mod cli;
pub mod compensation;
pub mod config;
pub mod error;
pub mod exec;
pub mod jones;
pub mod link_sim;
pub mod thinfilm;
pub mod tle_pass;

pub use error::{Error, Result};
pub use exec::Exec;
