//! Tendon tensions ↔ bending rates.
//!
//! Three tendons sit at `2π(j−1)/3 − θ_e` around the stylet axis. Each pulls
//! the tip with a curvature linear in its tension, and the contributions add:
//!
//! ```text
//! κ_x = Σ_j cos(2π(j−1)/3 − θ_e)·g·τ_j      u_x = κ_x·u_s
//! κ_y = Σ_j sin(2π(j−1)/3 − θ_e)·g·τ_j      u_y = κ_y·u_s
//! ```
//!
//! The inverse picks the least-effort nonnegative tensions that produce a
//! requested curvature, saturating against `tau_max` when needed.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_config, invalid_input, Error, Result};
use crate::kinematics::VirtualInput;

pub const N_TENDONS: usize = 3;

/// Insertion speeds below this magnitude map to zero tension.
pub const SPEED_EPSILON: f64 = 1e-6;

/// Curvature per unit tension reported for the stylet in phantom tissue (1/(mm·N)).
pub const DEFAULT_GAIN: f64 = 3.7e-4;

pub const DEFAULT_TAU_MAX: f64 = 7.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TendonGeometry {
    /// Angle from the frame's negative y-axis to the first tendon channel.
    #[serde(rename = "theta_e_rad")]
    pub theta_e: f64,
    /// Curvature per unit tension.
    #[serde(rename = "gain_per_mm_n")]
    pub gain: f64,
    #[serde(rename = "tau_max_n")]
    pub tau_max: f64,
}

impl Default for TendonGeometry {
    fn default() -> Self {
        Self {
            theta_e: 0.0,
            gain: DEFAULT_GAIN,
            tau_max: DEFAULT_TAU_MAX,
        }
    }
}

impl TendonGeometry {
    pub fn new(theta_e: f64, gain: f64, tau_max: f64) -> Result<Self> {
        let g = Self {
            theta_e,
            gain,
            tau_max,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain.is_finite() && self.gain > 0.0) {
            return Err(invalid_config(format!("gain must be positive, got {}", self.gain)));
        }
        if !(self.tau_max > 0.0) {
            return Err(invalid_config(format!(
                "tau_max must be positive, got {}",
                self.tau_max
            )));
        }
        if !(self.theta_e.is_finite() && (0.0..2.0 * PI).contains(&self.theta_e)) {
            return Err(invalid_config(format!(
                "theta_e must lie in [0, 2π), got {}",
                self.theta_e
            )));
        }
        Ok(())
    }

    /// Same geometry with `theta_e` shifted and wrapped into `[0, 2π)`.
    pub fn rotated(&self, delta: f64) -> Self {
        let mut theta = (self.theta_e + delta).rem_euclid(2.0 * PI);
        if theta >= 2.0 * PI {
            theta = 0.0;
        }
        Self {
            theta_e: theta,
            ..*self
        }
    }

    /// Unit bending direction of tendon `j` (0-based) in the (κ_x, κ_y) plane.
    pub fn channel_direction(&self, j: usize) -> Vector2<f64> {
        let phi = 2.0 * PI * j as f64 / 3.0 - self.theta_e;
        Vector2::new(phi.cos(), phi.sin())
    }

    fn channels(&self) -> [Vector2<f64>; N_TENDONS] {
        [0, 1, 2].map(|j| self.channel_direction(j))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TendonCommand {
    #[serde(rename = "us_mm_s")]
    pub speed: f64,
    #[serde(rename = "tau_n")]
    pub tau: [f64; N_TENDONS],
}

impl TendonCommand {
    pub fn new(speed: f64, tau: [f64; N_TENDONS]) -> Self {
        Self { speed, tau }
    }
}

/// Result of the rate-to-tension inversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseMapping {
    pub command: TendonCommand,
    /// Set when the requested curvature lies outside the tension box and the
    /// command is the closest reachable one.
    pub saturated: bool,
}

fn check_tension(tau: f64) -> Result<()> {
    if tau.is_finite() && tau >= 0.0 {
        Ok(())
    } else {
        Err(invalid_input(format!("tendon tension must be finite and nonnegative, got {tau}")))
    }
}

pub fn curvature_of_tension(tau: f64, geom: &TendonGeometry) -> Result<f64> {
    check_tension(tau)?;
    Ok(geom.gain * tau)
}

/// Curvature components `(κ_x, κ_y)` produced by the tension triple.
pub fn forward_map(tau: &[f64; N_TENDONS], geom: &TendonGeometry) -> Result<(f64, f64)> {
    let mut kappa = Vector2::zeros();
    for (j, c) in geom.channels().iter().enumerate() {
        kappa += c * curvature_of_tension(tau[j], geom)?;
    }
    Ok((kappa.x, kappa.y))
}

pub fn rates_from_command(cmd: &TendonCommand, geom: &TendonGeometry) -> Result<VirtualInput> {
    let (kx, ky) = forward_map(&cmd.tau, geom)?;
    Ok(VirtualInput::new(cmd.speed, kx * cmd.speed, ky * cmd.speed))
}

/// Tensions realizing the requested bending rates.
///
/// Among all tension triples in `[0, tau_max]³` that reproduce the target
/// curvature `(u_x/u_s, u_y/u_s)` the one with the smallest Euclidean norm is
/// returned. When no such triple exists the curvature residual is minimized
/// over the box instead and the result is flagged as saturated.
pub fn inverse_map(u: &VirtualInput, geom: &TendonGeometry) -> InverseMapping {
    if !u.is_finite() || u.speed.abs() < SPEED_EPSILON {
        // Bending without insertion cannot be produced by any tension.
        return InverseMapping {
            command: TendonCommand::new(u.speed, [0.0; N_TENDONS]),
            saturated: u.rate_x != 0.0 || u.rate_y != 0.0,
        };
    }
    // Work in tension units: the target is κ*/g.
    let target = Vector2::new(u.rate_x / u.speed, u.rate_y / u.speed) / geom.gain;
    let channels = geom.channels();

    if let Some(tau) = min_norm_exact(&channels, &target) {
        if tau.iter().all(|&t| t <= geom.tau_max) {
            return InverseMapping {
                command: TendonCommand::new(u.speed, tau),
                saturated: false,
            };
        }
    }
    InverseMapping {
        command: TendonCommand::new(u.speed, nearest_in_box(&channels, &target, geom.tau_max)),
        saturated: true,
    }
}

/// Least-norm nonnegative solution of `Σ τ_j c_j = target`.
///
/// Adding the same amount to every tendon leaves the curvature unchanged, so
/// the least-norm nonnegative solution leaves at least one tendon slack. Each
/// choice of slack tendon gives a 2×2 system; the feasible one with smallest
/// norm wins.
fn min_norm_exact(channels: &[Vector2<f64>; N_TENDONS], target: &Vector2<f64>) -> Option<[f64; 3]> {
    if target.norm() == 0.0 {
        return Some([0.0; 3]);
    }
    let mut best: Option<[f64; 3]> = None;
    for slack in 0..N_TENDONS {
        let (a, b) = ((slack + 1) % 3, (slack + 2) % 3);
        let m = Matrix2::from_columns(&[channels[a], channels[b]]);
        let Some(sol) = m.lu().solve(target) else {
            continue;
        };
        // Roundoff on a bracketing channel can dip a hair below zero.
        let tol = 1e-12 * target.norm();
        if sol.x < -tol || sol.y < -tol {
            continue;
        }
        let mut tau = [0.0; 3];
        tau[a] = sol.x.max(0.0);
        tau[b] = sol.y.max(0.0);
        let norm = |t: &[f64; 3]| t.iter().map(|v| v * v).sum::<f64>();
        if best.is_none_or(|bt| norm(&tau) < norm(&bt)) {
            best = Some(tau);
        }
    }
    best
}

/// Tensions in `[0, tau_max]³` whose curvature is closest to `target`.
///
/// The reachable set is a hexagon whose vertices are the box corners with
/// mixed 0/tau_max entries; adjacent vertices differ in a single tendon, so
/// each edge pulls one tendon from slack to full. Targets outside the
/// hexagon project onto its boundary, where the preimage is unique.
fn nearest_in_box(
    channels: &[Vector2<f64>; N_TENDONS],
    target: &Vector2<f64>,
    tau_max: f64,
) -> [f64; 3] {
    let mut corners: Vec<([f64; 3], Vector2<f64>)> = (1..7u8)
        .map(|mask| {
            let tau = [0, 1, 2].map(|j| if mask & (1 << j) != 0 { tau_max } else { 0.0 });
            let k = (0..3).map(|j| channels[j] * tau[j]).sum::<Vector2<f64>>();
            (tau, k)
        })
        .collect();
    corners.sort_by(|a, b| a.1.y.atan2(a.1.x).total_cmp(&b.1.y.atan2(b.1.x)));

    let mut best = ([0.0; 3], f64::INFINITY);
    for i in 0..corners.len() {
        let (ta, ka) = corners[i];
        let (tb, kb) = corners[(i + 1) % corners.len()];
        let edge = kb - ka;
        let lambda = ((target - ka).dot(&edge) / edge.norm_squared()).clamp(0.0, 1.0);
        let dist = (ka + edge * lambda - target).norm();
        if dist < best.1 {
            let tau = [0, 1, 2].map(|j| ta[j] + (tb[j] - ta[j]) * lambda);
            best = (tau, dist);
        }
    }
    best.0
}

/// Zero-intercept least-squares slope of curvature against tension.
pub fn fit_gain(samples: &[(f64, f64)]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(invalid_input(format!(
            "gain fit needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|(t, k)| !t.is_finite() || !k.is_finite()) {
        return Err(invalid_input("gain fit samples must be finite"));
    }
    let stt: f64 = samples.iter().map(|(t, _)| t * t).sum();
    if stt == 0.0 {
        return Err(Error::DegenerateFit("all calibration tensions are zero".into()));
    }
    let stk: f64 = samples.iter().map(|(t, k)| t * k).sum();
    Ok(stk / stt)
}

/// Relative spread below which a point set is treated as a straight line.
const COLLINEAR_TOL: f64 = 1e-10;

/// Curvature `1/R` of the least-squares circle through roughly planar points.
///
/// Points are projected onto their best-fit plane, an algebraic circle fit
/// gives the starting circle, and a few Gauss-Newton iterations on the
/// geometric distances refine it. Collinear points return zero.
pub fn estimate_curvature(points: &[Vector3<f64>]) -> Result<f64> {
    if points.len() < 3 {
        return Err(invalid_input(format!(
            "curvature estimate needs at least 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(invalid_input("points must be finite"));
    }
    let n = points.len();
    let centroid = points.iter().sum::<Vector3<f64>>() / n as f64;
    let mut centered = DMatrix::zeros(n, 3);
    for (i, p) in points.iter().enumerate() {
        centered.row_mut(i).copy_from(&(p - centroid).transpose());
    }
    let svd = centered.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    // Sort singular directions by magnitude.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s_major = svd.singular_values[order[0]];
    let s_minor = svd.singular_values[order[1]];
    if s_major == 0.0 || s_minor <= COLLINEAR_TOL * s_major {
        return Ok(0.0);
    }
    let axis = |r: usize| Vector3::new(v_t[(r, 0)], v_t[(r, 1)], v_t[(r, 2)]);
    let e1 = axis(order[0]);
    let e2 = axis(order[1]);
    let planar: Vec<Vector2<f64>> = (0..n)
        .map(|i| {
            let q = Vector3::new(centered[(i, 0)], centered[(i, 1)], centered[(i, 2)]);
            Vector2::new(q.dot(&e1), q.dot(&e2))
        })
        .collect();

    let (center, radius) = fit_circle_2d(&planar)?;
    let (_, radius) = refine_circle(&planar, center, radius);
    Ok(1.0 / radius)
}

/// Algebraic (Kåsa) fit of `x² + y² + Dx + Ey + F = 0`.
fn fit_circle_2d(pts: &[Vector2<f64>]) -> Result<(Vector2<f64>, f64)> {
    let n = pts.len();
    let mut a = DMatrix::zeros(n, 3);
    let mut b = DVector::zeros(n);
    for (i, p) in pts.iter().enumerate() {
        a[(i, 0)] = p.x;
        a[(i, 1)] = p.y;
        a[(i, 2)] = 1.0;
        b[i] = -(p.x * p.x + p.y * p.y);
    }
    let sol = a
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::DegenerateFit(e.to_string()))?;
    let center = Vector2::new(-sol[0] / 2.0, -sol[1] / 2.0);
    let r2 = center.norm_squared() - sol[2];
    if !(r2 > 0.0) {
        return Err(Error::DegenerateFit("circle fit produced no real radius".into()));
    }
    Ok((center, r2.sqrt()))
}

fn circle_cost(pts: &[Vector2<f64>], c: Vector2<f64>, r: f64) -> f64 {
    pts.iter().map(|p| ((p - c).norm() - r).powi(2)).sum()
}

fn refine_circle(pts: &[Vector2<f64>], mut c: Vector2<f64>, mut r: f64) -> (Vector2<f64>, f64) {
    let mut cost = circle_cost(pts, c, r);
    for _ in 0..20 {
        let mut jtj = nalgebra::Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for p in pts {
            let diff = p - c;
            let dist = diff.norm();
            if dist == 0.0 {
                continue;
            }
            let res = dist - r;
            let j = Vector3::new(-diff.x / dist, -diff.y / dist, -1.0);
            jtj += j * j.transpose();
            jtr += j * res;
        }
        let Some(delta) = jtj.lu().solve(&(-jtr)) else {
            break;
        };
        let (c_new, r_new) = (c + Vector2::new(delta.x, delta.y), r + delta.z);
        let cost_new = circle_cost(pts, c_new, r_new);
        if !(cost_new < cost) || r_new <= 0.0 {
            break;
        }
        let converged = cost - cost_new <= 1e-15 * cost.max(1e-300);
        c = c_new;
        r = r_new;
        cost = cost_new;
        if converged {
            break;
        }
    }
    (c, r)
}
