//! Bilinear tip kinematics on position × unit-sphere.
//!
//! The tip advances along its direction at the insertion speed and the
//! direction turns as `d' = d × (u_x, u_y, 0)`. Stacked as a 6-vector
//! `s = (p, d)` the model reads `s' = u_s·B1·s + u_x·B2·s + u_y·B3·s`.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_config, invalid_input, Result};

/// Tip position (mm) and unit direction.
///
/// The direction is normalized on construction and after every integration
/// step, so `|‖d‖ − 1| ≤ 1e-9` always holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawState", into = "RawState")]
pub struct NeedleState {
    position: Vector3<f64>,
    direction: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawState {
    position_mm: [f64; 3],
    direction: [f64; 3],
}

impl TryFrom<RawState> for NeedleState {
    type Error = crate::Error;

    fn try_from(raw: RawState) -> Result<Self> {
        NeedleState::new(raw.position_mm.into(), raw.direction.into())
    }
}

impl From<NeedleState> for RawState {
    fn from(s: NeedleState) -> Self {
        RawState {
            position_mm: s.position.into(),
            direction: s.direction.into(),
        }
    }
}

impl NeedleState {
    /// Builds a state, normalizing `direction`.
    pub fn new(position: Vector3<f64>, direction: Vector3<f64>) -> Result<Self> {
        if !position.iter().chain(direction.iter()).all(|v| v.is_finite()) {
            return Err(invalid_input("state components must be finite"));
        }
        let norm = direction.norm();
        if norm < 1e-12 {
            return Err(invalid_input("direction vector must be nonzero"));
        }
        Ok(Self {
            position,
            direction: direction / norm,
        })
    }

    /// Tip at the origin pointing along +z.
    pub fn origin() -> Self {
        Self {
            position: Vector3::zeros(),
            direction: Vector3::z(),
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        self.position
    }

    pub fn direction(&self) -> Vector3<f64> {
        self.direction
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut s = Vector6::zeros();
        s.fixed_rows_mut::<3>(0).copy_from(&self.position);
        s.fixed_rows_mut::<3>(3).copy_from(&self.direction);
        s
    }

    /// Rebuilds a state from a 6-vector, renormalizing the direction block.
    pub fn from_vector(s: &Vector6<f64>) -> Result<Self> {
        Self::new(s.fixed_rows::<3>(0).into(), s.fixed_rows::<3>(3).into())
    }

    pub(crate) fn from_parts_normalized(position: Vector3<f64>, direction: Vector3<f64>) -> Self {
        Self {
            position,
            direction: direction / direction.norm(),
        }
    }
}

/// Insertion speed (mm/s) and bending rates about x and y (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VirtualInput {
    #[serde(rename = "us_mm_s")]
    pub speed: f64,
    #[serde(rename = "ux_rad_s")]
    pub rate_x: f64,
    #[serde(rename = "uy_rad_s")]
    pub rate_y: f64,
}

impl VirtualInput {
    pub const ZERO: VirtualInput = VirtualInput {
        speed: 0.0,
        rate_x: 0.0,
        rate_y: 0.0,
    };

    pub fn new(speed: f64, rate_x: f64, rate_y: f64) -> Self {
        Self {
            speed,
            rate_x,
            rate_y,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.speed.is_finite() && self.rate_x.is_finite() && self.rate_y.is_finite()
    }

    /// Angular velocity vector `(u_x, u_y, 0)`.
    pub fn bend_axis(&self) -> Vector3<f64> {
        Vector3::new(self.rate_x, self.rate_y, 0.0)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.speed, self.rate_x, self.rate_y]
    }

    fn check(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(invalid_input(format!("non-finite virtual input {self:?}")))
        }
    }
}

impl std::ops::Add for VirtualInput {
    type Output = VirtualInput;

    fn add(self, rhs: VirtualInput) -> VirtualInput {
        VirtualInput::new(
            self.speed + rhs.speed,
            self.rate_x + rhs.rate_x,
            self.rate_y + rhs.rate_y,
        )
    }
}

/// The constant input matrices of the bilinear model.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrices {
    pub b1: Matrix6<f64>,
    pub b2: Matrix6<f64>,
    pub b3: Matrix6<f64>,
}

impl SystemMatrices {
    pub fn new() -> Self {
        #[rustfmt::skip]
        let g = Matrix3::new(
            0.0, 0.0, 0.0,
            0.0, 0.0, 1.0,
            0.0, -1.0, 0.0,
        );
        #[rustfmt::skip]
        let h = Matrix3::new(
            0.0, 0.0, -1.0,
            0.0, 0.0, 0.0,
            1.0, 0.0, 0.0,
        );
        let mut b1 = Matrix6::zeros();
        b1.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
        let mut b2 = Matrix6::zeros();
        b2.fixed_view_mut::<3, 3>(3, 3).copy_from(&g);
        let mut b3 = Matrix6::zeros();
        b3.fixed_view_mut::<3, 3>(3, 3).copy_from(&h);
        Self { b1, b2, b3 }
    }

    /// `u_s·B1 + u_x·B2 + u_y·B3`.
    pub fn combined(&self, u: &VirtualInput) -> Matrix6<f64> {
        self.b1 * u.speed + self.b2 * u.rate_x + self.b3 * u.rate_y
    }
}

impl Default for SystemMatrices {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    #[default]
    Exact,
}

/// Time derivative of the stacked state.
pub fn derivative(s: &NeedleState, u: &VirtualInput) -> Result<Vector6<f64>> {
    u.check()?;
    Ok(SystemMatrices::new().combined(u) * s.to_vector())
}

fn check_sample_time(ts: f64) -> Result<()> {
    if ts.is_finite() && ts > 0.0 {
        Ok(())
    } else {
        Err(invalid_config(format!("sample time must be positive, got {ts}")))
    }
}

/// Forward-Euler step followed by renormalization of the direction.
pub fn step_euler(s: &NeedleState, u: &VirtualInput, ts: f64) -> Result<NeedleState> {
    check_sample_time(ts)?;
    u.check()?;
    Ok(euler_unchecked(s, u, ts))
}

pub(crate) fn euler_unchecked(s: &NeedleState, u: &VirtualInput, ts: f64) -> NeedleState {
    let d = s.direction;
    let position = s.position + d * (ts * u.speed);
    if u.rate_x == 0.0 && u.rate_y == 0.0 {
        return NeedleState {
            position,
            direction: d,
        };
    }
    let direction = d + d.cross(&u.bend_axis()) * ts;
    NeedleState::from_parts_normalized(position, direction)
}

/// Exact flow over `[0, ts]` for a constant input.
///
/// The direction rotates about `-(u_x, u_y, 0)` at rate `‖(u_x, u_y)‖` and the
/// tip follows the resulting circular arc.
pub fn step_exact(s: &NeedleState, u: &VirtualInput, ts: f64) -> Result<NeedleState> {
    check_sample_time(ts)?;
    u.check()?;
    Ok(exact_unchecked(s, u, ts))
}

pub(crate) fn exact_unchecked(s: &NeedleState, u: &VirtualInput, ts: f64) -> NeedleState {
    let omega = u.bend_axis();
    let w = omega.norm();
    let d = s.direction;
    if w == 0.0 {
        return NeedleState {
            position: s.position + d * (u.speed * ts),
            direction: d,
        };
    }
    let k = omega / w;
    let d_par = k * k.dot(&d);
    let d_perp = d - d_par;
    let k_cross_d = k.cross(&d);
    let angle = w * ts;
    let (sin_a, cos_a) = angle.sin_cos();
    // Rotation by -angle about k.
    let direction = d_par + d_perp * cos_a - k_cross_d * sin_a;

    // ∫ cos(wτ) dτ and ∫ (1 − cos(wτ))/… over [0, ts], with series for tiny angles.
    let (int_cos, int_sin) = if angle.abs() < 1e-4 {
        let t2 = ts * ts;
        (
            ts - w * w * t2 * ts / 6.0,
            w * t2 / 2.0 - w * w * w * t2 * t2 / 24.0,
        )
    } else {
        (sin_a / w, (1.0 - cos_a) / w)
    };
    let travel = d_par * ts + d_perp * int_cos - k_cross_d * int_sin;
    NeedleState::from_parts_normalized(s.position + travel * u.speed, direction)
}

pub fn step(
    s: &NeedleState,
    u: &VirtualInput,
    ts: f64,
    integrator: Integrator,
) -> Result<NeedleState> {
    match integrator {
        Integrator::Euler => step_euler(s, u, ts),
        Integrator::Exact => step_exact(s, u, ts),
    }
}

/// States visited when applying `inputs` in order; the first entry is `s0`.
pub fn rollout(
    s0: &NeedleState,
    inputs: &[VirtualInput],
    ts: f64,
    integrator: Integrator,
) -> Result<Vec<NeedleState>> {
    if inputs.is_empty() {
        return Err(invalid_input("rollout needs at least one input"));
    }
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(*s0);
    let mut s = *s0;
    for u in inputs {
        s = step(&s, u, ts, integrator)?;
        states.push(s);
    }
    Ok(states)
}
