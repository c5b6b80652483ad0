//! Shared inputs for the benchmarks.

use needle_mpc::nalgebra::Vector3;
use needle_mpc::{MpcConfig, NeedleState, VirtualInput};

/// Tip state part-way to Target 1, slightly off the insertion axis.
pub fn mid_run_state() -> NeedleState {
    NeedleState::new(Vector3::new(1.2, -3.5, 60.0), Vector3::new(0.05, -0.12, 1.0)).expect("valid state")
}

pub fn target1_refs(cfg: &MpcConfig) -> Vec<Vector3<f64>> {
    vec![Vector3::new(5.0, -15.0, 150.0); cfg.horizon + 1]
}

pub fn typical_input() -> VirtualInput {
    VirtualInput::new(20.0, 0.03, -0.02)
}
