//! Closed- and open-loop simulation of the needle under MPC.
//!
//! Each closed-loop step runs controller → inverse mapping → plant: the
//! controller's virtual input is turned into tendon tensions with the nominal
//! geometry, and the plant turns those tensions back into bending rates with
//! its own (possibly perturbed) geometry before integrating.

use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_config, invalid_input, Error, Result};
use crate::io::fmt_sig9;
use crate::kinematics::{step, Integrator, NeedleState, VirtualInput};
use crate::mapping::{inverse_map, rates_from_command, TendonCommand, TendonGeometry};
use crate::mpc::MpcController;
use crate::references::Reference;
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    pub integrator: Integrator,
    /// Relative error of the true curvature gain (0.1 = 10% stiffer bending).
    pub gain_error: f64,
    pub theta_e_error_rad: f64,
    pub measurement_noise_std_mm: [f64; 3],
    pub latency_steps: usize,
    pub seed: u64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            integrator: Integrator::Exact,
            gain_error: 0.0,
            theta_e_error_rad: 0.0,
            measurement_noise_std_mm: [0.0; 3],
            latency_steps: 0,
            seed: 0,
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain_error.is_finite() && self.gain_error > -1.0) {
            return Err(invalid_config("plant.gain_error must be finite and > -1"));
        }
        if !self.theta_e_error_rad.is_finite() {
            return Err(invalid_config("plant.theta_e_error_rad must be finite"));
        }
        if self
            .measurement_noise_std_mm
            .iter()
            .any(|s| !(s.is_finite() && *s >= 0.0))
        {
            return Err(invalid_config("plant.measurement_noise_std_mm must be nonnegative"));
        }
        Ok(())
    }

    /// Geometry the plant actually obeys.
    pub fn true_geometry(&self, nominal: &TendonGeometry) -> TendonGeometry {
        TendonGeometry {
            gain: nominal.gain * (1.0 + self.gain_error),
            ..nominal.rotated(self.theta_e_error_rad)
        }
    }

    pub fn has_noise(&self) -> bool {
        self.measurement_noise_std_mm.iter().any(|&s| s > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub steps: usize,
    /// Stop a fixed-target run once it has settled on the target.
    pub early_stop: bool,
    pub stop_tolerance_mm: f64,
    pub speed_tolerance_mm_s: f64,
    /// Trailing time excluded from the max tracking error.
    pub terminal_window_s: f64,
    /// Solver faults tolerated before the run aborts.
    pub fault_budget: usize,
    pub initial_state: NeedleState,
    /// Per-step log, relative to the output directory.
    pub csv_file: String,
    pub summary_file: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            steps: 210,
            early_stop: false,
            stop_tolerance_mm: 0.2,
            speed_tolerance_mm_s: 0.1,
            terminal_window_s: 0.0,
            fault_budget: 10,
            initial_state: NeedleState::origin(),
            csv_file: "steps.csv".into(),
            summary_file: "summary.json".into(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid_config("run.steps must be at least 1"));
        }
        for (name, v) in [
            ("stop_tolerance_mm", self.stop_tolerance_mm),
            ("speed_tolerance_mm_s", self.speed_tolerance_mm_s),
            ("terminal_window_s", self.terminal_window_s),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid_config(format!("run.{name} must be nonnegative")));
            }
        }
        for (name, f) in [("csv_file", &self.csv_file), ("summary_file", &self.summary_file)] {
            if f.trim().is_empty() {
                return Err(invalid_config(format!("run.{name} must not be empty")));
            }
        }
        Ok(())
    }
}

/// State of the loop after one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Time at the end of the step.
    pub t: f64,
    /// True plant state at `t`.
    pub state: NeedleState,
    /// State handed to the controller for this step.
    pub measured: NeedleState,
    pub reference: Vector3<f64>,
    pub applied: VirtualInput,
    pub command: TendonCommand,
    pub saturated: bool,
    /// Horizon cost, NaN when the solve faulted.
    pub cost: f64,
    pub error_mm: f64,
    pub solver_iterations: usize,
    /// Scaled projected-gradient norm at the returned solution, NaN on fault.
    pub projected_gradient: f64,
    pub fault: bool,
    pub solve_time: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub final_error_mm: f64,
    /// Max error outside the terminal window.
    pub max_error_mm: f64,
    /// Max error inside the terminal window (0 when the window is empty).
    pub terminal_max_error_mm: f64,
    pub inserted_length_mm: f64,
    /// `100·final_error / inserted_length`; absent when nothing was inserted.
    pub error_pct_of_inserted: Option<f64>,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub records: Vec<StepRecord>,
    pub summary: Summary,
    pub faults: usize,
}

/// Summary metrics over a run.
pub fn compute_metrics(records: &[StepRecord], ts: f64, terminal_window_s: f64) -> Result<Summary> {
    let last = records
        .last()
        .ok_or_else(|| invalid_input("no step records to summarize"))?;
    let inserted: f64 = records.iter().map(|r| r.applied.speed.abs() * ts).sum();
    let cutoff = last.t - terminal_window_s;
    let in_window = |r: &StepRecord| terminal_window_s > 0.0 && r.t > cutoff + 1e-9;
    let steady = records
        .iter()
        .filter(|r| !in_window(r))
        .map(|r| r.error_mm)
        .fold(f64::NEG_INFINITY, f64::max);
    let terminal = records
        .iter()
        .filter(|r| in_window(r))
        .map(|r| r.error_mm)
        .fold(0.0, f64::max);
    let max_error_mm = if steady.is_finite() { steady } else { terminal };
    Ok(Summary {
        final_error_mm: last.error_mm,
        max_error_mm,
        terminal_max_error_mm: terminal,
        inserted_length_mm: inserted,
        error_pct_of_inserted: (inserted > 0.0).then(|| 100.0 * last.error_mm / inserted),
        steps: records.len(),
    })
}

/// Position noise and delay applied to plant states before the controller sees them.
struct Sensor {
    noise: Option<(ChaCha8Rng, [Option<Normal<f64>>; 3])>,
    latency: usize,
    last_position: Option<Vector3<f64>>,
    direction: Vector3<f64>,
}

impl Sensor {
    fn new(plant: &PlantConfig, initial: &NeedleState) -> Result<Self> {
        let noise = if plant.has_noise() {
            let dists = plant.measurement_noise_std_mm.map(|s| {
                (s > 0.0).then(|| Normal::new(0.0, s).expect("validated std"))
            });
            Some((ChaCha8Rng::seed_from_u64(plant.seed), dists))
        } else {
            None
        };
        Ok(Self {
            noise,
            latency: plant.latency_steps,
            last_position: None,
            direction: initial.direction(),
        })
    }

    /// Measurement at step `k` given the true trajectory so far.
    fn measure(&mut self, history: &[NeedleState], k: usize) -> NeedleState {
        let truth = history[k.saturating_sub(self.latency)];
        let Some((rng, dists)) = self.noise.as_mut() else {
            return truth;
        };
        let mut p = truth.position();
        for (i, d) in dists.iter().enumerate() {
            if let Some(d) = d {
                p[i] += d.sample(rng);
            }
        }
        // Direction from the last two measured positions.
        if let Some(prev) = self.last_position {
            let delta = p - prev;
            if delta.norm() > 1e-9 {
                self.direction = delta.normalize();
            }
        }
        self.last_position = Some(p);
        NeedleState::from_parts_normalized(p, self.direction)
    }
}

/// Runs the receding-horizon loop on the simulated plant.
pub fn run_closed_loop(scenario: &Scenario, reference: &Reference) -> Result<ScenarioResult> {
    scenario.validate()?;
    let cfg = &scenario.mpc;
    let ts = cfg.sample_time_s;
    let plant = &scenario.plant;
    let nominal = scenario.geometry;
    let truth_geom = plant.true_geometry(&nominal);
    let run = &scenario.run;

    let mut controller = MpcController::new(*cfg)?;
    let mut state = run.initial_state;
    let mut history = vec![state];
    let mut sensor = Sensor::new(plant, &state)?;
    let mut records = Vec::with_capacity(run.steps);
    let mut faults = 0;

    for k in 0..run.steps {
        let t = k as f64 * ts;
        let measured = sensor.measure(&history, k);
        let refs = reference.horizon_samples(t, cfg.horizon, ts)?;

        let started = Instant::now();
        let control = controller.step(&measured, &refs);
        let solve_time = started.elapsed();
        if let Some(err) = &control.fault {
            faults += 1;
            if faults > run.fault_budget {
                return Err(Error::NumericalFailure {
                    iteration: k,
                    message: format!("fault budget of {} exceeded: {err}", run.fault_budget),
                    x: Vec::new(),
                });
            }
        }

        let mapped = inverse_map(&control.applied, &nominal);
        let actual = rates_from_command(&mapped.command, &truth_geom)?;
        state = step(&state, &actual, ts, plant.integrator)?;
        history.push(state);

        let t_next = (k + 1) as f64 * ts;
        let reference_now = reference.sample(t_next)?;
        let error_mm = (state.position() - reference_now).norm();
        let solution = control.solution.as_ref();
        records.push(StepRecord {
            t: t_next,
            state,
            measured,
            reference: reference_now,
            applied: control.applied,
            command: mapped.command,
            saturated: mapped.saturated,
            cost: solution.map_or(f64::NAN, |s| s.cost),
            error_mm,
            solver_iterations: solution.map_or(0, |s| s.iterations),
            projected_gradient: solution.map_or(f64::NAN, |s| s.projected_gradient),
            fault: control.fault.is_some(),
            solve_time,
        });

        if run.early_stop
            && reference.is_fixed_target()
            && error_mm < run.stop_tolerance_mm
            && control.applied.speed.abs() < run.speed_tolerance_mm_s
        {
            break;
        }
    }

    let summary = compute_metrics(&records, ts, run.terminal_window_s)?;
    Ok(ScenarioResult {
        records,
        summary,
        faults,
    })
}

pub const STEP_CSV_HEADER: [&str; 19] = [
    "t_s", "x_mm", "y_mm", "z_mm", "dx", "dy", "dz", "ref_x_mm", "ref_y_mm", "ref_z_mm", "us_mm_s",
    "ux_rad_s", "uy_rad_s", "tau1_N", "tau2_N", "tau3_N", "sat_flag", "cost", "err_mm",
];

/// Per-step log in the fixed column order, 9 significant digits.
pub fn records_to_csv(records: &[StepRecord]) -> String {
    let mut out = STEP_CSV_HEADER.join(",");
    out.push('\n');
    for r in records {
        let p = r.state.position();
        let d = r.state.direction();
        let fields = [
            fmt_sig9(r.t),
            fmt_sig9(p.x),
            fmt_sig9(p.y),
            fmt_sig9(p.z),
            fmt_sig9(d.x),
            fmt_sig9(d.y),
            fmt_sig9(d.z),
            fmt_sig9(r.reference.x),
            fmt_sig9(r.reference.y),
            fmt_sig9(r.reference.z),
            fmt_sig9(r.applied.speed),
            fmt_sig9(r.applied.rate_x),
            fmt_sig9(r.applied.rate_y),
            fmt_sig9(r.command.tau[0]),
            fmt_sig9(r.command.tau[1]),
            fmt_sig9(r.command.tau[2]),
            u8::from(r.saturated).to_string(),
            fmt_sig9(r.cost),
            fmt_sig9(r.error_mm),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Nominal-model and perturbed-plant trajectories under the same commands.
#[derive(Debug, Clone)]
pub struct OpenLoopResult {
    pub model_trajectory: Vec<NeedleState>,
    pub plant_trajectory: Vec<NeedleState>,
    /// Tip distance after each command.
    pub errors_mm: Vec<f64>,
    /// Cumulative `Σ|u_s|·ts` after each command.
    pub inserted_mm: Vec<f64>,
}

impl OpenLoopResult {
    pub fn final_error_mm(&self) -> f64 {
        *self.errors_mm.last().expect("nonempty")
    }

    pub fn max_error_mm(&self) -> f64 {
        self.errors_mm.iter().copied().fold(0.0, f64::max)
    }

    /// Largest `100·error/inserted` over steps with nonzero insertion.
    pub fn max_error_pct(&self) -> Option<f64> {
        self.errors_mm
            .iter()
            .zip(&self.inserted_mm)
            .filter(|(_, &l)| l > 0.0)
            .map(|(e, l)| 100.0 * e / l)
            .reduce(f64::max)
    }

    pub fn to_csv(&self, ts: f64) -> String {
        let mut out = String::from(
            "t_s,model_x_mm,model_y_mm,model_z_mm,plant_x_mm,plant_y_mm,plant_z_mm,err_mm,inserted_mm,err_pct\n",
        );
        for k in 0..self.errors_mm.len() {
            let m = self.model_trajectory[k + 1].position();
            let p = self.plant_trajectory[k + 1].position();
            let l = self.inserted_mm[k];
            let pct = if l > 0.0 {
                fmt_sig9(100.0 * self.errors_mm[k] / l)
            } else {
                String::new()
            };
            let fields = [
                fmt_sig9((k + 1) as f64 * ts),
                fmt_sig9(m.x),
                fmt_sig9(m.y),
                fmt_sig9(m.z),
                fmt_sig9(p.x),
                fmt_sig9(p.y),
                fmt_sig9(p.z),
                fmt_sig9(self.errors_mm[k]),
                fmt_sig9(l),
                pct,
            ];
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

/// Applies recorded tendon commands to the nominal model and the perturbed plant.
pub fn run_open_loop(
    commands: &[TendonCommand],
    plant: &PlantConfig,
    model: &TendonGeometry,
    ts: f64,
    initial: &NeedleState,
) -> Result<OpenLoopResult> {
    if commands.is_empty() {
        return Err(invalid_input("open-loop replay needs at least one command"));
    }
    plant.validate()?;
    model.validate()?;
    let truth = plant.true_geometry(model);
    let mut model_traj = vec![*initial];
    let mut plant_traj = vec![*initial];
    let mut errors = Vec::with_capacity(commands.len());
    let mut inserted = Vec::with_capacity(commands.len());
    let mut length = 0.0;
    for cmd in commands {
        let um = rates_from_command(cmd, model)?;
        let up = rates_from_command(cmd, &truth)?;
        let sm = step(model_traj.last().unwrap(), &um, ts, plant.integrator)?;
        let sp = step(plant_traj.last().unwrap(), &up, ts, plant.integrator)?;
        length += cmd.speed.abs() * ts;
        errors.push((sm.position() - sp.position()).norm());
        inserted.push(length);
        model_traj.push(sm);
        plant_traj.push(sp);
    }
    Ok(OpenLoopResult {
        model_trajectory: model_traj,
        plant_trajectory: plant_traj,
        errors_mm: errors,
        inserted_mm: inserted,
    })
}
