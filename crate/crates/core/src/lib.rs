//! Transmitter motion tracking from per-packet channel state information.
//!
//! The pipeline, per access point:
//!
//! 1. [`aod`]: MUSIC over a trailing window of packets estimates the departure
//!    angles of the propagation paths.
//! 2. [`displacement`]: least-squares path weights of two consecutive packets
//!    give each path's attenuation change; ratios against a reference path
//!    cancel the clock-offset phase and leave linear equations in the
//!    displacement, which are stacked across APs and solved.
//! 3. [`tracker`]: integrates displacements into a trajectory.
//!
//! [`sim`] synthesizes CSI with multipath, clock offsets, noise and 8-bit
//! quantization; [`eval`] scores trajectories; [`io`] reads and writes traces,
//! configs and reports.

pub mod aod;
pub mod displacement;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod io;
pub mod scenario;
pub mod sim;
pub mod tracker;
pub mod types;

pub use error::{Error, Result};
pub use geometry::{direction_unit_vector, ArrayGeometry};
pub use types::{ApId, CsiRecord, Displacement, PathSet, Trajectory, TrajectoryPoint};
