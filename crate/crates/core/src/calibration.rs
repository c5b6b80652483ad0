//! Curvature-gain calibration from constant-tension insertion runs.

use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Error, Result};
use crate::io::{fmt_sig9, parse_fields, write_file};
use crate::kinematics::{step_exact, NeedleState};
use crate::mapping::{estimate_curvature, fit_gain, rates_from_command, TendonCommand, TendonGeometry};

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRun {
    /// 1-based tendon index.
    pub tendon_index: usize,
    pub tension: f64,
    pub tip_points: Vec<Vector3<f64>>,
}

impl CalibrationRun {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.tendon_index) {
            return Err(invalid_input(format!(
                "tendon_index must be 1..3, got {}",
                self.tendon_index
            )));
        }
        if !(self.tension.is_finite() && self.tension >= 0.0) {
            return Err(invalid_input(format!("tension must be nonnegative, got {}", self.tension)));
        }
        if self.tip_points.len() < 3 {
            return Err(invalid_input(format!(
                "a run needs at least 3 tip points, got {}",
                self.tip_points.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub gain_per_mm_n: f64,
    pub curvatures_per_mm: Vec<f64>,
    /// RMS of `κ − gain·τ` over runs.
    pub residual_rms_per_mm: f64,
}

pub fn calibrate(runs: &[CalibrationRun]) -> Result<Calibration> {
    if runs.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "calibration needs at least 2 runs, got {}",
            runs.len()
        )));
    }
    for r in runs {
        r.validate()?;
    }
    let first = runs[0].tension;
    if runs.iter().all(|r| r.tension == first) {
        return Err(Error::DegenerateFit(
            "calibration runs must span at least 2 distinct tensions".into(),
        ));
    }
    let curvatures = runs
        .iter()
        .map(|r| estimate_curvature(&r.tip_points))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<_> = runs.iter().map(|r| r.tension).zip(curvatures.iter().copied()).collect();
    let gain = fit_gain(&pairs)?;
    let ss: f64 = pairs.iter().map(|(t, k)| (k - gain * t).powi(2)).sum();
    Ok(Calibration {
        gain_per_mm_n: gain,
        curvatures_per_mm: curvatures,
        residual_rms_per_mm: (ss / pairs.len() as f64).sqrt(),
    })
}

/// Tip positions of a constant-tension insertion from the origin along +z.
pub fn insertion_trajectory(
    geom: &TendonGeometry,
    tendon_index: usize,
    tension: f64,
    length_mm: f64,
    step_mm: f64,
) -> Result<Vec<NeedleState>> {
    if !(1..=3).contains(&tendon_index) {
        return Err(invalid_input(format!("tendon_index must be 1..3, got {tendon_index}")));
    }
    if !(length_mm > 0.0 && step_mm > 0.0) {
        return Err(invalid_input("length_mm and step_mm must be positive"));
    }
    let mut tau = [0.0; 3];
    tau[tendon_index - 1] = tension;
    let u = rates_from_command(&TendonCommand::new(1.0, tau), geom)?;
    let steps = (length_mm / step_mm).round() as usize;
    let mut s = NeedleState::origin();
    let mut out = vec![s];
    for _ in 0..steps {
        s = step_exact(&s, &u, step_mm)?;
        out.push(s);
    }
    Ok(out)
}

/// Simulated calibration runs, one per tension, with optional Gaussian point noise.
pub fn synthesize_runs(
    geom: &TendonGeometry,
    tendon_index: usize,
    tensions: &[f64],
    length_mm: f64,
    step_mm: f64,
    noise_std_mm: f64,
    seed: u64,
) -> Result<Vec<CalibrationRun>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = (noise_std_mm > 0.0)
        .then(|| Normal::new(0.0, noise_std_mm))
        .transpose()
        .map_err(|e| invalid_input(format!("noise_std_mm: {e}")))?;
    tensions
        .iter()
        .map(|&tension| {
            let traj = insertion_trajectory(geom, tendon_index, tension, length_mm, step_mm)?;
            let tip_points = traj
                .iter()
                .map(|s| {
                    let mut p = s.position();
                    if let Some(n) = &noise {
                        p += Vector3::from_fn(|_, _| n.sample(&mut rng));
                    }
                    p
                })
                .collect();
            Ok(CalibrationRun {
                tendon_index,
                tension,
                tip_points,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: String,
    pub tendon_index: usize,
    pub tension_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub runs: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn io_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn read_points_csv(path: &Path) -> Result<Vec<Vector3<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_error(path, e))?;
    let headers = rdr.headers().map_err(|e| io_error(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["x_mm", "y_mm", "z_mm"] {
        return Err(io_error(
            path,
            Error::MalformedRow {
                row: 1,
                message: "expected header x_mm,y_mm,z_mm".into(),
            },
        ));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::MalformedRow {
            row,
            message: e.to_string(),
        })?;
        let v = parse_fields(&rec, 3, row).map_err(|e| io_error(path, e))?;
        out.push(Vector3::new(v[0], v[1], v[2]));
    }
    Ok(out)
}

/// Loads runs described by `manifest.json` in `dir`.
pub fn read_runs_dir(dir: &Path) -> Result<Vec<CalibrationRun>> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| io_error(&manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", manifest_path.display())))?;
    if manifest.runs.is_empty() {
        return Err(invalid_input(format!("{} lists no runs", manifest_path.display())));
    }
    manifest
        .runs
        .iter()
        .map(|entry| {
            let run = CalibrationRun {
                tendon_index: entry.tendon_index,
                tension: entry.tension_n,
                tip_points: read_points_csv(&dir.join(&entry.file))?,
            };
            run.validate()?;
            Ok(run)
        })
        .collect()
}

pub fn write_runs_dir(dir: &Path, runs: &[CalibrationRun]) -> Result<()> {
    let mut entries = Vec::with_capacity(runs.len());
    for (i, run) in runs.iter().enumerate() {
        let file = format!("run{:02}.csv", i + 1);
        let mut csv = String::from("x_mm,y_mm,z_mm\n");
        for p in &run.tip_points {
            csv.push_str(&format!("{},{},{}\n", fmt_sig9(p.x), fmt_sig9(p.y), fmt_sig9(p.z)));
        }
        write_file(&dir.join(&file), &csv)?;
        entries.push(ManifestEntry {
            file,
            tendon_index: run.tendon_index,
            tension_n: run.tension,
        });
    }
    let mut manifest = serde_json::to_string_pretty(&Manifest { runs: entries }).expect("serializable");
    manifest.push('\n');
    write_file(&dir.join(MANIFEST_FILE), &manifest)
}
