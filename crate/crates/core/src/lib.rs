//! Reconstruction of particle trajectories on a cylinder observed through a
//! narrow window.
//!
//! Particles are born uniformly on the unwrapped surface `[-L, 0] x [0, H]`,
//! move by Brownian motion with drift, wrap around the seam at `x = -L ≡ 0`
//! and die at a constant rate. Only the strip `[-l, 0] x [0, H]` is observed.
//! The crate simulates such movies ([`simulator`]), estimates the dynamics
//! from the observed strip alone ([`estimators`]), links exits to later
//! re-entries by maximum likelihood ([`stats`], [`solver`]) and scores the
//! reconstruction ([`evaluation`]). [`experiment`] drives full parameter
//! sweeps and [`io`] holds the CSV formats.

pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod experiment;
pub mod io;
pub mod model;
pub mod rng;
pub mod simulator;
pub mod solver;
pub mod stats;

pub use error::{Error, Result};
pub use model::{
    wrap_x, Configuration, CylinderGeometry, DynamicsParams, InputEvent, OutputEvent, Point,
    SegmentId, TrajectoryId,
};
