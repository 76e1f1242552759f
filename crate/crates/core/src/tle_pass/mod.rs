//! Two-line elements, two-body propagation, station geometry and passes.

pub mod orbit;
pub mod pass;
pub mod tle;

pub use orbit::{propagate, solve_kepler, topocentric, GroundStation, LookAngles, StateVector};
pub use pass::{beta_angle, extract_passes, BetaModel, PassProfile, PassSample, PassSearch};
pub use tle::{format_tle, parse_tle, TleRecord};
