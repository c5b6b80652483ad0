//! Receding-horizon controller for the bilinear needle model.
//!
//! Over an `N`-step horizon the controller minimizes
//!
//! ```text
//! J = Σ_{i=0..N} e_iᵀ Q e_i + Σ_{i=0..N−1} u_iᵀ R u_i,    e_i = p_i − p_i^ref
//! ```
//!
//! where `p_i` comes from the (renormalized) Euler model, subject to box
//! bounds on every input. Only the first input of the optimal sequence is
//! applied; the rest seeds the next solve.

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_config, invalid_input, Error, Result};
use crate::kinematics::{rollout, Integrator, NeedleState, VirtualInput};
use crate::optimizer::{BoxNlp, SolverSettings, SolverStatus};

/// Closed interval `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

impl Bounds {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputBounds {
    pub us_mm_s: Bounds,
    pub ux_rad_s: Bounds,
    pub uy_rad_s: Bounds,
}

impl Default for InputBounds {
    fn default() -> Self {
        Self {
            us_mm_s: Bounds::new(-1.0, 24.0),
            ux_rad_s: Bounds::new(-5.0, 5.0),
            uy_rad_s: Bounds::new(-5.0, 5.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    pub sample_time_s: f64,
    pub horizon: usize,
    /// Diagonal of the position-error weight (x, y, z).
    pub q_diag: [f64; 3],
    /// Diagonal of the input weight (u_s, u_x, u_y).
    pub r_diag: [f64; 3],
    pub bounds: InputBounds,
    /// Forces `u_y = 0`.
    pub planar_mode: bool,
    pub solver: SolverSettings,
    /// Solver starts per horizon; extra starts are seeded uniform draws in the box.
    pub starts: usize,
    pub start_seed: u64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            sample_time_s: 0.05,
            horizon: 5,
            q_diag: [100.0, 100.0, 200.0],
            r_diag: [1.0, 1.0, 1.0],
            bounds: InputBounds::default(),
            planar_mode: false,
            solver: SolverSettings::default(),
            starts: 1,
            start_seed: 0,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_time_s.is_finite() && self.sample_time_s > 0.0) {
            return Err(invalid_config(format!(
                "mpc.sample_time_s must be positive, got {}",
                self.sample_time_s
            )));
        }
        if self.horizon == 0 {
            return Err(invalid_config("mpc.horizon must be at least 1, got 0"));
        }
        if self
            .q_diag
            .iter()
            .chain(self.r_diag.iter())
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(invalid_config("mpc.q_diag and mpc.r_diag must be finite and nonnegative"));
        }
        for (name, b) in [
            ("us_mm_s", self.bounds.us_mm_s),
            ("ux_rad_s", self.bounds.ux_rad_s),
            ("uy_rad_s", self.bounds.uy_rad_s),
        ] {
            if !(b.min.is_finite() && b.max.is_finite() && b.min <= b.max) {
                return Err(invalid_config(format!(
                    "mpc.bounds.{name} must satisfy min <= max, got [{}, {}]",
                    b.min, b.max
                )));
            }
        }
        if self.planar_mode && !self.bounds.uy_rad_s.contains(0.0) {
            return Err(invalid_config("mpc.planar_mode requires 0 within mpc.bounds.uy_rad_s"));
        }
        if self.starts == 0 {
            return Err(invalid_config("mpc.starts must be at least 1"));
        }
        self.solver.validate()
    }

    /// Bounds actually enforced, with `u_y` pinned to zero in planar mode.
    pub fn effective_bounds(&self) -> InputBounds {
        let mut b = self.bounds;
        if self.planar_mode {
            b.uy_rad_s = Bounds::new(0.0, 0.0);
        }
        b
    }

    fn stacked_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let b = self.effective_bounds();
        let n = self.horizon;
        let lo = [b.us_mm_s.min, b.ux_rad_s.min, b.uy_rad_s.min];
        let hi = [b.us_mm_s.max, b.ux_rad_s.max, b.uy_rad_s.max];
        (
            DVector::from_iterator(3 * n, (0..3 * n).map(|k| lo[k % 3])),
            DVector::from_iterator(3 * n, (0..3 * n).map(|k| hi[k % 3])),
        )
    }

    pub fn admits(&self, u: &VirtualInput) -> bool {
        let b = self.effective_bounds();
        b.us_mm_s.contains(u.speed) && b.ux_rad_s.contains(u.rate_x) && b.uy_rad_s.contains(u.rate_y)
    }
}

/// Optimal input sequence for one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSolution {
    pub inputs: Vec<VirtualInput>,
    /// Euler rollout of `inputs` from the measured state (`N + 1` entries).
    pub predicted_states: Vec<NeedleState>,
    pub cost: f64,
    pub status: SolverStatus,
    pub iterations: usize,
    /// Projected-gradient norm at the solution, scaled by `1 + J`.
    pub projected_gradient: f64,
}

fn flatten(inputs: &[VirtualInput]) -> DVector<f64> {
    DVector::from_iterator(inputs.len() * 3, inputs.iter().flat_map(|u| u.as_array()))
}

fn unflatten(x: &DVector<f64>) -> Vec<VirtualInput> {
    x.as_slice()
        .chunks_exact(3)
        .map(|c| VirtualInput::new(c[0], c[1], c[2]))
        .collect()
}

/// Horizon cost and its gradient with respect to the stacked inputs
/// `(u_s, u_x, u_y)_0, …, (u_s, u_x, u_y)_{N−1}`.
pub fn horizon_cost(
    s0: &NeedleState,
    inputs: &[VirtualInput],
    refs: &[Vector3<f64>],
    cfg: &MpcConfig,
) -> Result<(f64, DVector<f64>)> {
    if inputs.is_empty() {
        return Err(invalid_input("horizon needs at least one input"));
    }
    if refs.len() != inputs.len() + 1 {
        return Err(invalid_input(format!(
            "expected {} reference points for {} inputs, got {}",
            inputs.len() + 1,
            inputs.len(),
            refs.len()
        )));
    }
    Ok(cost_and_gradient(s0, flatten(inputs).as_slice(), refs, cfg))
}

/// Euler rollout plus reverse-mode sweep. `u` holds `3·N` stacked inputs.
fn cost_and_gradient(
    s0: &NeedleState,
    u: &[f64],
    refs: &[Vector3<f64>],
    cfg: &MpcConfig,
) -> (f64, DVector<f64>) {
    let n = u.len() / 3;
    let ts = cfg.sample_time_s;
    let q = Vector3::from(cfg.q_diag);
    let r = cfg.r_diag;

    let mut ps = Vec::with_capacity(n + 1);
    let mut ds = Vec::with_capacity(n + 1);
    let mut norms = Vec::with_capacity(n);
    ps.push(s0.position());
    ds.push(s0.direction());
    for i in 0..n {
        let (us, ux, uy) = (u[3 * i], u[3 * i + 1], u[3 * i + 2]);
        let d = ds[i];
        let omega = Vector3::new(ux, uy, 0.0);
        ps.push(ps[i] + d * (ts * us));
        let dt = d + d.cross(&omega) * ts;
        let nrm = dt.norm();
        norms.push(nrm);
        ds.push(dt / nrm);
    }

    let mut cost = 0.0;
    let errors: Vec<Vector3<f64>> = ps.iter().zip(refs).map(|(p, pr)| p - pr).collect();
    for e in &errors {
        cost += e.component_mul(e).dot(&q);
    }
    for i in 0..n {
        for k in 0..3 {
            cost += r[k] * u[3 * i + k] * u[3 * i + k];
        }
    }

    let mut grad = DVector::zeros(3 * n);
    let mut lp = errors[n].component_mul(&q) * 2.0;
    let mut ld = Vector3::zeros();
    for i in (0..n).rev() {
        let (us, ux, uy) = (u[3 * i], u[3 * i + 1], u[3 * i + 2]);
        let omega = Vector3::new(ux, uy, 0.0);
        let d = ds[i];
        let d_next = ds[i + 1];
        // Through d_next = dt / ‖dt‖.
        let ldt = (ld - d_next * d_next.dot(&ld)) / norms[i];
        let g_omega = ldt.cross(&d) * ts;
        grad[3 * i] = ts * d.dot(&lp) + 2.0 * r[0] * us;
        grad[3 * i + 1] = g_omega.x + 2.0 * r[1] * ux;
        grad[3 * i + 2] = g_omega.y + 2.0 * r[2] * uy;
        ld = ldt + omega.cross(&ldt) * ts + lp * (ts * us);
        lp += errors[i].component_mul(&q) * 2.0;
    }
    (cost, grad)
}

/// Minimizes the horizon cost over the input box.
///
/// The solver starts from `warm` shifted by one step (last input repeated),
/// or from zero inputs without a warm start.
pub fn solve_horizon(
    s0: &NeedleState,
    refs: &[Vector3<f64>],
    cfg: &MpcConfig,
    warm: Option<&HorizonSolution>,
) -> Result<HorizonSolution> {
    cfg.validate()?;
    let n = cfg.horizon;
    if refs.len() != n + 1 {
        return Err(invalid_input(format!(
            "expected {} reference points for horizon {n}, got {}",
            n + 1,
            refs.len()
        )));
    }
    let x0 = match warm {
        Some(w) if !w.inputs.is_empty() => {
            let mut shifted: Vec<VirtualInput> = w.inputs.iter().skip(1).copied().collect();
            let last = *w.inputs.last().expect("nonempty");
            shifted.resize(n, last);
            flatten(&shifted)
        }
        _ => DVector::zeros(3 * n),
    };
    let (lower, upper) = cfg.stacked_bounds();
    let objective = |x: &DVector<f64>| cost_and_gradient(s0, x.as_slice(), refs, cfg);
    let problem = BoxNlp::with_settings(objective, lower, upper, cfg.solver)?;
    let sol = if cfg.starts > 1 {
        problem.minimize_multistart(&x0, cfg.starts, cfg.start_seed)?
    } else {
        problem.minimize(&x0)?
    };
    let inputs = unflatten(&sol.x);
    let predicted_states = rollout(s0, &inputs, cfg.sample_time_s, Integrator::Euler)?;
    Ok(HorizonSolution {
        inputs,
        predicted_states,
        cost: sol.value,
        status: sol.status,
        iterations: sol.iterations,
        projected_gradient: sol.projected_gradient,
    })
}

/// Solves the horizon and returns its first input.
pub fn receding_step(
    measured: &NeedleState,
    refs: &[Vector3<f64>],
    cfg: &MpcConfig,
    warm: Option<&HorizonSolution>,
) -> Result<(VirtualInput, HorizonSolution)> {
    let solution = solve_horizon(measured, refs, cfg, warm)?;
    Ok((solution.inputs[0], solution))
}

/// Outcome of one controller update.
#[derive(Debug, Clone)]
pub struct ControlStep {
    pub applied: VirtualInput,
    pub solution: Option<HorizonSolution>,
    pub fault: Option<Error>,
}

/// Stateful receding-horizon controller; keeps only the warm start.
#[derive(Debug, Clone)]
pub struct MpcController {
    config: MpcConfig,
    warm: Option<HorizonSolution>,
}

impl MpcController {
    pub fn new(config: MpcConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, warm: None })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.config
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    /// Applies the first optimal input, or zero input if the solve fails.
    pub fn step(&mut self, measured: &NeedleState, refs: &[Vector3<f64>]) -> ControlStep {
        match receding_step(measured, refs, &self.config, self.warm.as_ref()) {
            Ok((applied, solution)) => {
                self.warm = Some(solution.clone());
                ControlStep {
                    applied,
                    solution: Some(solution),
                    fault: None,
                }
            }
            Err(err) => {
                log::warn!("horizon solve failed, applying zero input: {err}");
                self.warm = None;
                ControlStep {
                    applied: VirtualInput::ZERO,
                    solution: None,
                    fault: Some(err),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::step_euler;
    use crate::optimizer::gradient_check;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn refs_const(p: Vector3<f64>, n: usize) -> Vec<Vector3<f64>> {
        vec![p; n + 1]
    }

    #[test]
    fn zero_inputs_at_reference_cost_nothing() {
        let cfg = MpcConfig::default();
        let s0 = NeedleState::new(Vector3::new(1.0, 2.0, 3.0), Vector3::new(0.0, 1.0, 1.0)).unwrap();
        let refs = refs_const(s0.position(), 5);
        let (j, g) = horizon_cost(&s0, &[VirtualInput::ZERO; 5], &refs, &cfg).unwrap();
        assert_eq!(j, 0.0);
        // Only u_s moves the tip at zero input; with zero error its gradient vanishes too.
        assert!(g.norm() < 1e-15);
    }

    #[test]
    fn one_step_cost_by_hand() {
        let cfg = MpcConfig {
            horizon: 1,
            q_diag: [1.0; 3],
            r_diag: [0.0; 3],
            ..Default::default()
        };
        let s0 = NeedleState::origin();
        let (j, g) = horizon_cost(&s0, &[VirtualInput::new(7.0, 0.0, 0.0)], &refs_const(Vector3::zeros(), 1), &cfg)
            .unwrap();
        assert_relative_eq!(j, (7.0 * 0.05f64).powi(2), epsilon = 1e-15);
        assert_relative_eq!(g[0], 2.0 * 7.0 * 0.05 * 0.05, epsilon = 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let cfg = MpcConfig::default();
        let s0 = NeedleState::origin();
        assert!(horizon_cost(&s0, &[VirtualInput::ZERO; 3], &refs_const(Vector3::zeros(), 2), &cfg).is_err());
        assert!(solve_horizon(&s0, &refs_const(Vector3::zeros(), 3), &cfg, None).is_err());
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.random_range(1..=6);
            let cfg = MpcConfig {
                horizon: n,
                ..Default::default()
            };
            let s0 = NeedleState::new(
                Vector3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(0.0..100.0)),
                Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.2..1.0)),
            )
            .unwrap();
            let refs: Vec<_> = (0..=n)
                .map(|_| Vector3::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), rng.random_range(50.0..200.0)))
                .collect();
            let x = DVector::from_iterator(
                3 * n,
                (0..3 * n).map(|k| if k % 3 == 0 { rng.random_range(-1.0..24.0) } else { rng.random_range(-5.0..5.0) }),
            );
            let err = gradient_check(|v| cost_and_gradient(&s0, v.as_slice(), &refs, &cfg), &x, 1e-8);
            assert!(err <= 1e-5, "relative gradient error {err}");
        }
    }

    #[test]
    fn symmetric_target_needs_no_bending() {
        let cfg = MpcConfig::default();
        let s0 = NeedleState::origin();
        let sol = solve_horizon(&s0, &refs_const(Vector3::new(0.0, 0.0, 50.0), 5), &cfg, None).unwrap();
        for u in &sol.inputs {
            assert!(u.rate_x.abs() < 1e-9 && u.rate_y.abs() < 1e-9);
        }
        assert!(sol.inputs[0].speed > 0.0);
        assert_eq!(sol.predicted_states.len(), 6);
    }

    #[test]
    fn far_target_saturates_speed() {
        let cfg = MpcConfig::default();
        let (u, _) = receding_step(&NeedleState::origin(), &refs_const(Vector3::new(0.0, 0.0, 150.0), 5), &cfg, None)
            .unwrap();
        assert_eq!(u.speed, 24.0);
    }

    #[test]
    fn target_behind_reverses() {
        let cfg = MpcConfig::default();
        let s0 = NeedleState::new(Vector3::new(0.0, 0.0, 40.0), Vector3::z()).unwrap();
        let sol = solve_horizon(&s0, &refs_const(Vector3::new(0.0, 0.0, 38.0), 5), &cfg, None).unwrap();
        assert!(sol.inputs[0].speed < 0.0);
        assert!(sol.inputs[0].speed >= -1.0);
    }

    #[test]
    fn at_target_applies_nothing() {
        let cfg = MpcConfig::default();
        let s0 = NeedleState::new(Vector3::new(5.0, -15.0, 150.0), Vector3::z()).unwrap();
        let (u, sol) = receding_step(&s0, &refs_const(s0.position(), 5), &cfg, None).unwrap();
        assert_eq!(u, VirtualInput::ZERO);
        assert_eq!(sol.cost, 0.0);
    }

    #[test]
    fn warm_start_never_raises_cost_and_applies_first_input() {
        let cfg = MpcConfig::default();
        let target = Vector3::new(5.0, -15.0, 150.0);
        let mut ctrl = MpcController::new(cfg).unwrap();
        let mut s = NeedleState::origin();
        for _ in 0..40 {
            let refs = refs_const(target, 5);
            let warm = ctrl.warm.clone();
            let step = ctrl.step(&s, &refs);
            let sol = step.solution.unwrap();
            assert_eq!(step.applied, sol.inputs[0]);
            if let Some(w) = warm {
                let mut shifted: Vec<_> = w.inputs[1..].to_vec();
                shifted.push(*w.inputs.last().unwrap());
                let (j_warm, _) = horizon_cost(&s, &shifted, &refs, &cfg).unwrap();
                assert!(sol.cost <= j_warm);
            }
            // Plant equals the prediction model: one-step prediction is exact.
            let next = step_euler(&s, &step.applied, cfg.sample_time_s).unwrap();
            assert!((next.position() - sol.predicted_states[1].position()).norm() <= 1e-9);
            s = next;
        }
    }

    #[test]
    fn planar_mode_pins_lateral_rate() {
        let cfg = MpcConfig {
            planar_mode: true,
            ..Default::default()
        };
        let sol = solve_horizon(&NeedleState::origin(), &refs_const(Vector3::new(10.0, 10.0, 30.0), 5), &cfg, None)
            .unwrap();
        assert!(sol.inputs.iter().all(|u| u.rate_y == 0.0 && cfg.admits(u)));
    }

    #[test]
    fn config_validation_names_fields() {
        let cfg = MpcConfig {
            horizon: 0,
            ..Default::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("horizon"));
        let cfg = MpcConfig {
            bounds: InputBounds {
                us_mm_s: Bounds::new(5.0, 1.0),
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("us_mm_s"));
    }

    #[test]
    fn controller_falls_back_to_zero_on_fault() {
        let mut ctrl = MpcController::new(MpcConfig::default()).unwrap();
        let refs = vec![Vector3::new(f64::NAN, 0.0, 0.0); 6];
        let step = ctrl.step(&NeedleState::origin(), &refs);
        assert_eq!(step.applied, VirtualInput::ZERO);
        assert!(step.fault.is_some());
    }
}
