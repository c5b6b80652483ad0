//! Reference trajectories for the tip.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_config, invalid_input, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    #[default]
    Z,
}

/// Reference description as it appears in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSpec {
    FixedTarget {
        target_mm: [f64; 3],
    },
    /// Axis-aligned helix passing through `start_mm` at `t = 0`.
    Helix {
        radius_mm: f64,
        pitch_mm: f64,
        angular_rate_rad_s: f64,
        axis: Axis,
        start_mm: [f64; 3],
        /// Motion stops (the reference holds) after this time.
        duration_s: f64,
    },
    /// Polyline traversed at constant speed, holding the last corner.
    SharpTurn {
        waypoints_mm: Vec<[f64; 3]>,
        speed_mm_s: f64,
    },
    /// Straight insertion along +z with sinusoidal lateral offsets.
    Sinusoidal {
        start_mm: [f64; 3],
        insertion_speed_mm_s: f64,
        amplitude_mm: [f64; 2],
        frequency_hz: [f64; 2],
        duration_s: f64,
    },
    WaypointPath {
        times_s: Vec<f64>,
        points_mm: Vec<[f64; 3]>,
    },
    /// Recorded `(t_s, x_mm, y_mm, z_mm)` samples read from CSV.
    Replay {
        path: PathBuf,
    },
}

impl ReferenceSpec {
    /// Default helix: radius 10 mm, pitch 40 mm, ~16 mm/s path speed.
    pub fn default_helix() -> Self {
        ReferenceSpec::Helix {
            radius_mm: 10.0,
            pitch_mm: 40.0,
            angular_rate_rad_s: 1.35,
            axis: Axis::Z,
            start_mm: [0.0; 3],
            duration_s: 9.5,
        }
    }

    /// Default corner: two 60 mm legs meeting at a right angle.
    pub fn default_sharp_turn() -> Self {
        ReferenceSpec::SharpTurn {
            waypoints_mm: vec![[0.0, 0.0, 0.0], [0.0, 0.0, 60.0], [60.0, 0.0, 60.0]],
            speed_mm_s: 12.0,
        }
    }

    pub fn default_sinusoidal() -> Self {
        ReferenceSpec::Sinusoidal {
            start_mm: [0.0; 3],
            insertion_speed_mm_s: 15.0,
            amplitude_mm: [8.0, 5.0],
            frequency_hz: [0.2, 0.3],
            duration_s: 10.0,
        }
    }

    /// Validates the parameters and loads any recorded samples.
    ///
    /// Relative replay paths are resolved against `base_dir`.
    pub fn resolve(&self, base_dir: Option<&Path>) -> Result<Reference> {
        let finite3 = |v: &[f64; 3], name: &str| {
            if v.iter().all(|x| x.is_finite()) {
                Ok(Vector3::from(*v))
            } else {
                Err(invalid_config(format!("reference.{name} must be finite")))
            }
        };
        match self {
            ReferenceSpec::FixedTarget { target_mm } => {
                Ok(Reference::Fixed(finite3(target_mm, "target_mm")?))
            }
            ReferenceSpec::Helix {
                radius_mm,
                pitch_mm,
                angular_rate_rad_s,
                axis,
                start_mm,
                duration_s,
            } => {
                let start = finite3(start_mm, "start_mm")?;
                for (name, v) in [
                    ("radius_mm", *radius_mm),
                    ("pitch_mm", *pitch_mm),
                    ("angular_rate_rad_s", *angular_rate_rad_s),
                ] {
                    if !v.is_finite() {
                        return Err(invalid_config(format!("reference.{name} must be finite")));
                    }
                }
                if *radius_mm < 0.0 {
                    return Err(invalid_config("reference.radius_mm must be nonnegative"));
                }
                check_duration(*duration_s)?;
                Ok(Reference::Helix(Helix {
                    radius: *radius_mm,
                    pitch: *pitch_mm,
                    rate: *angular_rate_rad_s,
                    axis: *axis,
                    start,
                    duration: *duration_s,
                }))
            }
            ReferenceSpec::SharpTurn {
                waypoints_mm,
                speed_mm_s,
            } => {
                if waypoints_mm.len() < 2 {
                    return Err(invalid_config("reference.waypoints_mm needs at least 2 points"));
                }
                if !(speed_mm_s.is_finite() && *speed_mm_s > 0.0) {
                    return Err(invalid_config("reference.speed_mm_s must be positive"));
                }
                let pts = waypoints_mm
                    .iter()
                    .map(|p| finite3(p, "waypoints_mm"))
                    .collect::<Result<Vec<_>>>()?;
                let mut times = vec![0.0];
                for w in pts.windows(2) {
                    let len = (w[1] - w[0]).norm();
                    if len == 0.0 {
                        return Err(invalid_config("reference.waypoints_mm has repeated points"));
                    }
                    times.push(times.last().unwrap() + len / speed_mm_s);
                }
                Ok(Reference::Track(Track::new(times, pts, false)?))
            }
            ReferenceSpec::Sinusoidal {
                start_mm,
                insertion_speed_mm_s,
                amplitude_mm,
                frequency_hz,
                duration_s,
            } => {
                let start = finite3(start_mm, "start_mm")?;
                if !amplitude_mm
                    .iter()
                    .chain(frequency_hz.iter())
                    .chain(std::iter::once(insertion_speed_mm_s))
                    .all(|v| v.is_finite())
                {
                    return Err(invalid_config("sinusoidal reference parameters must be finite"));
                }
                check_duration(*duration_s)?;
                Ok(Reference::Sinusoid(Sinusoid {
                    start,
                    speed: *insertion_speed_mm_s,
                    amplitude: *amplitude_mm,
                    frequency: *frequency_hz,
                    duration: *duration_s,
                }))
            }
            ReferenceSpec::WaypointPath { times_s, points_mm } => {
                let pts = points_mm
                    .iter()
                    .map(|p| finite3(p, "points_mm"))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Reference::Track(Track::new(times_s.clone(), pts, false)?))
            }
            ReferenceSpec::Replay { path } => {
                let full = match base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                let (times, pts) = read_reference_csv(&full)?;
                Ok(Reference::Track(Track::new(times, pts, true)?))
            }
        }
    }
}

fn check_duration(d: f64) -> Result<()> {
    if d.is_finite() && d >= 0.0 {
        Ok(())
    } else {
        Err(invalid_config(format!("reference.duration_s must be nonnegative, got {d}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Helix {
    radius: f64,
    pitch: f64,
    rate: f64,
    axis: Axis,
    start: Vector3<f64>,
    duration: f64,
}

impl Helix {
    fn sample(&self, t: f64) -> Vector3<f64> {
        let t = t.min(self.duration);
        let phase = self.rate * t;
        let lateral_a = self.radius * (phase.cos() - 1.0);
        let lateral_b = self.radius * phase.sin();
        let axial = self.pitch * phase / (2.0 * PI);
        let offset = match self.axis {
            Axis::Z => Vector3::new(lateral_a, lateral_b, axial),
            Axis::X => Vector3::new(axial, lateral_a, lateral_b),
            Axis::Y => Vector3::new(lateral_b, axial, lateral_a),
        };
        self.start + offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sinusoid {
    start: Vector3<f64>,
    speed: f64,
    amplitude: [f64; 2],
    frequency: [f64; 2],
    duration: f64,
}

impl Sinusoid {
    fn sample(&self, t: f64) -> Vector3<f64> {
        let t = t.min(self.duration);
        let w = |k: usize| 2.0 * PI * self.frequency[k] * t;
        self.start
            + Vector3::new(
                self.amplitude[0] * w(0).sin(),
                self.amplitude[1] * w(1).sin(),
                self.speed * t,
            )
    }
}

/// Timestamped points, linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    times: Vec<f64>,
    points: Vec<Vector3<f64>>,
    /// Reject times before the first sample instead of holding it.
    strict_start: bool,
}

impl Track {
    pub fn new(times: Vec<f64>, points: Vec<Vector3<f64>>, strict_start: bool) -> Result<Self> {
        if times.is_empty() || times.len() != points.len() {
            return Err(invalid_config(format!(
                "track needs matching nonempty times and points, got {} and {}",
                times.len(),
                points.len()
            )));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(invalid_config("track timestamps must be finite"));
        }
        if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(invalid_config(format!(
                "track timestamps must be strictly increasing (sample {})",
                i + 1
            )));
        }
        Ok(Self {
            times,
            points,
            strict_start,
        })
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().expect("nonempty")
    }

    fn sample(&self, t: f64) -> Result<Vector3<f64>> {
        let first = self.times[0];
        if t < first {
            if self.strict_start {
                return Err(Error::OutOfRange { t, first });
            }
            return Ok(self.points[0]);
        }
        if t >= self.end_time() {
            return Ok(*self.points.last().expect("nonempty"));
        }
        let i = self.times.partition_point(|&x| x <= t) - 1;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let a = (t - t0) / (t1 - t0);
        Ok(self.points[i] * (1.0 - a) + self.points[i + 1] * a)
    }
}

/// A resolved reference generator.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    Fixed(Vector3<f64>),
    Helix(Helix),
    Sinusoid(Sinusoid),
    Track(Track),
}

impl Reference {
    pub fn is_fixed_target(&self) -> bool {
        matches!(self, Reference::Fixed(_))
    }

    /// Reference position at time `t ≥ 0`.
    pub fn sample(&self, t: f64) -> Result<Vector3<f64>> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(invalid_input(format!("reference time must be nonnegative, got {t}")));
        }
        match self {
            Reference::Fixed(p) => Ok(*p),
            Reference::Helix(h) => Ok(h.sample(t)),
            Reference::Sinusoid(s) => Ok(s.sample(t)),
            Reference::Track(tr) => tr.sample(t),
        }
    }

    /// `sample(t + i·ts)` for `i = 0..=n`.
    pub fn horizon_samples(&self, t: f64, n: usize, ts: f64) -> Result<Vec<Vector3<f64>>> {
        (0..=n).map(|i| self.sample(t + i as f64 * ts)).collect()
    }

    /// Largest path speed over `[0, t_end]`, estimated with step `dt`.
    pub fn max_speed(&self, t_end: f64, dt: f64) -> Result<f64> {
        let steps = (t_end / dt).ceil().max(1.0) as usize;
        let mut prev = self.sample(0.0)?;
        let mut vmax: f64 = 0.0;
        for k in 1..=steps {
            let p = self.sample(k as f64 * dt)?;
            vmax = vmax.max((p - prev).norm() / dt);
            prev = p;
        }
        Ok(vmax)
    }

    /// Warning text when the path outruns the insertion-speed bound by more than 5%.
    pub fn speed_warning(&self, t_end: f64, dt: f64, max_insertion_speed: f64) -> Result<Option<String>> {
        let v = self.max_speed(t_end, dt)?;
        Ok((v > max_insertion_speed * 1.05).then(|| {
            format!(
                "reference requires {v:.3} mm/s, above the insertion-speed bound {max_insertion_speed} mm/s"
            )
        }))
    }
}

/// Reads `t_s, x_mm, y_mm, z_mm` rows (header required).
pub fn read_reference_csv(path: &Path) -> Result<(Vec<f64>, Vec<Vector3<f64>>)> {
    let io_err = |e: &dyn std::fmt::Display| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_err(&e))?;
    let headers = rdr.headers().map_err(|e| io_err(&e))?.clone();
    let expected = ["t_s", "x_mm", "y_mm", "z_mm"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::MalformedRow {
            row: 1,
            message: format!("expected header {}", expected.join(",")),
        });
    }
    let mut times = Vec::new();
    let mut pts = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::MalformedRow {
            row,
            message: e.to_string(),
        })?;
        let v = crate::io::parse_fields(&rec, 4, row)?;
        times.push(v[0]);
        pts.push(Vector3::new(v[1], v[2], v[3]));
    }
    if times.is_empty() {
        return Err(io_err(&"no samples"));
    }
    Ok((times, pts))
}
