//! Box-constrained smooth minimization.
//!
//! Projected gradient with an Armijo backtracking search along the projection
//! arc. Directions come from a limited-memory BFGS model restricted to the
//! free variables, falling back to steepest descent whenever that model does
//! not give a descent direction. Every trial point is projected, so the
//! objective is never evaluated outside the box.

use std::collections::VecDeque;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_config, invalid_input, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// Projected-gradient tolerance, scaled by `1 + |f|`.
    pub gradient_tolerance: f64,
    /// Relative step length below which the solver reports a stall.
    pub step_tolerance: f64,
    /// Number of curvature pairs kept; zero gives plain projected gradient.
    pub memory: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-14,
            memory: 8,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_tolerance > 0.0 && self.step_tolerance > 0.0) {
            return Err(invalid_config("solver tolerances must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(invalid_config("solver max_iterations must be at least 1"));
        }
        Ok(())
    }
}

/// Accepted point, value and gradient.
type Trial = (DVector<f64>, f64, DVector<f64>);

/// A smooth objective minimized over `lower ≤ x ≤ upper`.
pub struct BoxNlp<F> {
    pub objective: F,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub settings: SolverSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Converged,
    MaxIter,
    Stalled,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: DVector<f64>,
    pub value: f64,
    pub status: SolverStatus,
    pub iterations: usize,
    /// Scaled projected-gradient norm at `x`.
    pub projected_gradient: f64,
    /// Objective after every accepted step, starting with the projected `x0`.
    pub history: Vec<f64>,
}

impl<F> BoxNlp<F>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    pub fn new(objective: F, lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        Self::with_settings(objective, lower, upper, SolverSettings::default())
    }

    pub fn with_settings(
        objective: F,
        lower: DVector<f64>,
        upper: DVector<f64>,
        settings: SolverSettings,
    ) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(invalid_input("bound vectors differ in length"));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u)) {
            return Err(invalid_config("lower bound exceeds upper bound"));
        }
        settings.validate()?;
        Ok(Self {
            objective,
            lower,
            upper,
            settings,
        })
    }

    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        x.zip_zip_map(&self.lower, &self.upper, |v, l, u| v.clamp(l, u))
    }

    fn projected_gradient_norm(&self, x: &DVector<f64>, g: &DVector<f64>) -> f64 {
        (self.project(&(x - g)) - x).norm()
    }

    fn evaluate(&self, x: &DVector<f64>, iteration: usize) -> Result<(f64, DVector<f64>)> {
        let (f, g) = (self.objective)(x);
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure {
                iteration,
                message: format!("objective returned non-finite value {f} or gradient"),
                x: x.iter().copied().collect(),
            });
        }
        Ok((f, g))
    }

    pub fn minimize(&self, x0: &DVector<f64>) -> Result<Solution> {
        let n = self.dimension();
        if x0.len() != n {
            return Err(invalid_input(format!(
                "initial point has dimension {}, problem has {n}",
                x0.len()
            )));
        }
        let s = &self.settings;
        let mut x = self.project(x0);
        let (mut f, mut g) = self.evaluate(&x, 0)?;
        let mut history = vec![f];
        let mut pairs: VecDeque<(DVector<f64>, DVector<f64>)> = VecDeque::new();

        let mut status = SolverStatus::MaxIter;
        let mut iterations = 0;
        for k in 0..s.max_iterations {
            let pg = self.projected_gradient_norm(&x, &g);
            if pg <= s.gradient_tolerance * (1.0 + f.abs()) {
                status = SolverStatus::Converged;
                break;
            }
            iterations = k + 1;

            let free = self.free_mask(&x, &g);
            let mut dir = self.quasi_newton_direction(&g, &free, &pairs);
            let mut accepted = self.line_search(&x, f, &g, &dir, k)?;
            if accepted.is_none() && !pairs.is_empty() {
                pairs.clear();
                dir = self.quasi_newton_direction(&g, &free, &pairs);
                accepted = self.line_search(&x, f, &g, &dir, k)?;
            }
            let Some((x_new, f_new, g_new)) = accepted else {
                status = SolverStatus::Stalled;
                break;
            };

            let step = &x_new - &x;
            let dg = &g_new - &g;
            let sy = step.dot(&dg);
            if s.memory > 0 && sy > 1e-12 * step.norm() * dg.norm() {
                if pairs.len() == s.memory {
                    pairs.pop_front();
                }
                pairs.push_back((step.clone(), dg));
            }
            let small_step = step.norm() <= s.step_tolerance * (1.0 + x.norm());
            x = x_new;
            f = f_new;
            g = g_new;
            history.push(f);
            if small_step {
                status = if self.projected_gradient_norm(&x, &g)
                    <= s.gradient_tolerance * (1.0 + f.abs())
                {
                    SolverStatus::Converged
                } else {
                    SolverStatus::Stalled
                };
                break;
            }
        }
        if status == SolverStatus::MaxIter
            && self.projected_gradient_norm(&x, &g) <= s.gradient_tolerance * (1.0 + f.abs())
        {
            status = SolverStatus::Converged;
        }
        let projected_gradient = self.projected_gradient_norm(&x, &g) / (1.0 + f.abs());
        Ok(Solution {
            x,
            value: f,
            status,
            iterations,
            projected_gradient,
            history,
        })
    }

    /// Variables not held at a bound by the gradient.
    fn free_mask(&self, x: &DVector<f64>, g: &DVector<f64>) -> Vec<bool> {
        (0..x.len())
            .map(|i| {
                let at_lower = x[i] <= self.lower[i] && g[i] > 0.0;
                let at_upper = x[i] >= self.upper[i] && g[i] < 0.0;
                !(at_lower || at_upper)
            })
            .collect()
    }

    /// Two-loop recursion on the free subspace.
    fn quasi_newton_direction(
        &self,
        g: &DVector<f64>,
        free: &[bool],
        pairs: &VecDeque<(DVector<f64>, DVector<f64>)>,
    ) -> DVector<f64> {
        let mask = |v: &DVector<f64>| {
            DVector::from_iterator(
                v.len(),
                v.iter().zip(free).map(|(x, &f)| if f { *x } else { 0.0 }),
            )
        };
        let mut q = mask(g);
        if pairs.is_empty() {
            let gn = q.norm();
            return if gn > 0.0 { -q / gn.max(1.0) } else { q };
        }
        let masked: Vec<(DVector<f64>, DVector<f64>)> =
            pairs.iter().map(|(s, y)| (mask(s), mask(y))).collect();
        let mut alphas = Vec::with_capacity(masked.len());
        for (s, y) in masked.iter().rev() {
            let sy = s.dot(y);
            if sy <= 0.0 {
                alphas.push(0.0);
                continue;
            }
            let a = s.dot(&q) / sy;
            q -= y * a;
            alphas.push(a);
        }
        let (s_last, y_last) = masked.last().expect("nonempty");
        let yy = y_last.dot(y_last);
        let gamma = if yy > 0.0 && s_last.dot(y_last) > 0.0 {
            s_last.dot(y_last) / yy
        } else {
            1.0
        };
        let mut r = q * gamma;
        for ((s, y), a) in masked.iter().zip(alphas.iter().rev()) {
            let sy = s.dot(y);
            if sy <= 0.0 {
                continue;
            }
            let b = y.dot(&r) / sy;
            r += s * (a - b);
        }
        let d = -r;
        let gf = mask(g);
        if d.dot(&gf) < -1e-12 * d.norm() * gf.norm() {
            d
        } else {
            -gf
        }
    }

    /// Armijo backtracking along `α ↦ P(x + α d)`.
    fn line_search(
        &self,
        x: &DVector<f64>,
        f: f64,
        g: &DVector<f64>,
        dir: &DVector<f64>,
        iteration: usize,
    ) -> Result<Option<Trial>> {
        const ARMIJO: f64 = 1e-4;
        let mut alpha = 1.0;
        for _ in 0..60 {
            let trial = self.project(&(x + dir * alpha));
            let step = &trial - x;
            let slope = g.dot(&step);
            if step.norm() == 0.0 || slope >= 0.0 {
                alpha *= 0.5;
                if step.norm() == 0.0 {
                    return Ok(None);
                }
                continue;
            }
            let (ft, gt) = self.evaluate(&trial, iteration)?;
            if ft <= f + ARMIJO * slope {
                return Ok(Some((trial, ft, gt)));
            }
            alpha *= 0.5;
        }
        Ok(None)
    }

    /// Best of `x0` and `starts − 1` seeded uniform restarts in the box.
    pub fn minimize_multistart(&self, x0: &DVector<f64>, starts: usize, seed: u64) -> Result<Solution> {
        let mut best = self.minimize(x0)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 1..starts {
            let start = DVector::from_iterator(
                self.dimension(),
                self.lower.iter().zip(self.upper.iter()).map(|(&l, &u)| {
                    if l == u {
                        l
                    } else {
                        rng.random_range(l..=u)
                    }
                }),
            );
            let sol = self.minimize(&start)?;
            if sol.value < best.value {
                best = sol;
            }
        }
        Ok(best)
    }
}

/// Central-difference gradient with step `1e-6·(1 + |x_i|)`.
pub fn finite_difference_gradient<F>(f: F, x: &DVector<f64>) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut g = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let h = 1e-6 * (1.0 + x[i].abs());
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Relative discrepancy `‖g − g_fd‖ / max(‖g_fd‖, floor)` between a supplied
/// gradient and central differences of its objective.
pub fn gradient_check<F>(objective: F, x: &DVector<f64>, floor: f64) -> f64
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    let (_, analytic) = objective(x);
    let numeric = finite_difference_gradient(|p| objective(p).0, x);
    (analytic - &numeric).norm() / numeric.norm().max(floor)
}
