//! Bilinear model predictive control for a tendon-steered needle.
//!
//! The tip is modelled as a position and a unit direction driven by an
//! insertion speed and two bending rates. [`mpc`] solves the finite-horizon
//! tracking problem over those virtual inputs and [`mapping`] turns them into
//! tendon tensions. [`sim`] closes the loop around a simulated plant.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod error;
pub mod io;
pub mod kinematics;
pub mod mapping;
pub mod mpc;
pub mod optimizer;
pub mod references;
pub mod scenario;
pub mod sim;

pub use nalgebra;

pub use error::{Error, Result};
pub use kinematics::{Integrator, NeedleState, VirtualInput};
pub use mapping::{TendonCommand, TendonGeometry};
pub use mpc::{MpcConfig, MpcController};
pub use references::{Reference, ReferenceSpec};
pub use scenario::Scenario;
pub use sim::{PlantConfig, RunConfig, ScenarioResult};
