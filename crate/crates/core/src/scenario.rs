//! Scenario files: parsing, validation, bundled presets and result output.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{invalid_config, Error, Result};
use crate::io::{read_commands_csv, write_file};
use crate::mapping::TendonGeometry;
use crate::mpc::MpcConfig;
use crate::references::{Reference, ReferenceSpec};
use crate::sim::{
    records_to_csv, run_closed_loop, run_open_loop, OpenLoopResult, PlantConfig, RunConfig,
    ScenarioResult,
};

pub const SCHEMA_VERSION: u32 = 1;

/// A complete simulation setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub mpc: MpcConfig,
    #[serde(default)]
    pub geometry: TendonGeometry,
    #[serde(default)]
    pub plant: PlantConfig,
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub run: RunConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: String::new(),
            mpc: MpcConfig::default(),
            geometry: TendonGeometry::default(),
            plant: PlantConfig::default(),
            reference: ReferenceSpec::FixedTarget {
                target_mm: [5.0, -15.0, 150.0],
            },
            run: RunConfig::default(),
        }
    }
}

/// One instance of each reference kind, used to list unknown keys.
fn reference_template(kind: &str) -> Option<ReferenceSpec> {
    Some(match kind {
        "fixed_target" => ReferenceSpec::FixedTarget { target_mm: [0.0; 3] },
        "helix" => ReferenceSpec::default_helix(),
        "sharp_turn" => ReferenceSpec::default_sharp_turn(),
        "sinusoidal" => ReferenceSpec::default_sinusoidal(),
        "waypoint_path" => ReferenceSpec::WaypointPath {
            times_s: vec![],
            points_mm: vec![],
        },
        "replay" => ReferenceSpec::Replay { path: PathBuf::new() },
        _ => return None,
    })
}

fn unknown_keys(doc: &Value, template: &Value, path: &str, out: &mut Vec<String>) {
    let (Value::Object(d), Value::Object(t)) = (doc, template) else {
        return;
    };
    for (k, v) in d {
        let here = if path.is_empty() {
            k.clone()
        } else {
            format!("{path}.{k}")
        };
        match t.get(k) {
            None => out.push(here),
            Some(tv) => unknown_keys(v, tv, &here, out),
        }
    }
}

fn schema_problems(doc: &Value) -> Result<Vec<String>> {
    let Value::Object(obj) = doc else {
        return Err(Error::Schema("scenario must be a JSON object".into()));
    };
    match obj.get("schema_version") {
        None => return Err(Error::Schema("missing required key: schema_version".into())),
        Some(v) if v.as_u64() != Some(SCHEMA_VERSION as u64) => {
            return Err(Error::Schema(format!(
                "unsupported schema_version {v}, expected {SCHEMA_VERSION}"
            )))
        }
        _ => {}
    }
    let mut template = serde_json::to_value(Scenario::default()).expect("serializable");
    if let Some(kind) = obj.get("reference").and_then(|r| r.get("kind")).and_then(Value::as_str) {
        let spec = reference_template(kind)
            .ok_or_else(|| Error::Schema(format!("unknown reference kind '{kind}'")))?;
        template["reference"] = serde_json::to_value(spec).expect("serializable");
    }
    let mut unknown = Vec::new();
    unknown_keys(doc, &template, "", &mut unknown);
    Ok(unknown)
}

impl Scenario {
    /// Parses a scenario document, listing every unknown key on failure.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: Value =
            serde_json::from_str(text).map_err(|e| Error::Schema(format!("invalid JSON: {e}")))?;
        let unknown = schema_problems(&doc)?;
        if !unknown.is_empty() {
            return Err(Error::Schema(format!("unknown keys: {}", unknown.join(", "))));
        }
        let sc: Scenario = serde_json::from_value(doc).map_err(|e| Error::Schema(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported schema_version {}, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        self.mpc.validate()?;
        self.geometry
            .validate()
            .map_err(|e| invalid_config(format!("geometry: {e}")))?;
        self.plant.validate()?;
        self.run.validate()
    }

    /// Overrides every seed in the scenario.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.plant.seed = seed;
        self.mpc.start_seed = seed;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn resolve_reference(&self, base_dir: Option<&Path>) -> Result<Reference> {
        self.reference.resolve(base_dir)
    }

    /// Horizon length in seconds covered by the step budget.
    pub fn duration_s(&self) -> f64 {
        self.run.steps as f64 * self.mpc.sample_time_s
    }
}

/// Bundled preset scenarios as `(name, json)`.
pub const PRESETS: &[(&str, &str)] = &[
    ("target1", include_str!("../presets/target1.json")),
    ("target2", include_str!("../presets/target2.json")),
    ("target3", include_str!("../presets/target3.json")),
    ("helix", include_str!("../presets/helix.json")),
    ("sharp_turn", include_str!("../presets/sharp_turn.json")),
    ("sinusoidal", include_str!("../presets/sinusoidal.json")),
    ("planar_fast", include_str!("../presets/planar_fast.json")),
    ("planar_slow", include_str!("../presets/planar_slow.json")),
    ("replay_mismatch", include_str!("../presets/replay_mismatch.json")),
];

/// Bundled open-loop command sequences as `(name, csv)`.
pub const REPLAY_COMMANDS: &[(&str, &str)] = &[
    ("constant", include_str!("../presets/replays/constant.csv")),
    ("ramp", include_str!("../presets/replays/ramp.csv")),
    ("alternating", include_str!("../presets/replays/alternating.csv")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn preset(name: &str) -> Result<Scenario> {
    let text = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            invalid_config(format!(
                "unknown preset '{name}', expected one of: {}",
                preset_names().collect::<Vec<_>>().join(", ")
            ))
        })?;
    Scenario::from_json_str(text)
}

/// Summary document written next to the per-step log.
pub fn summary_json(scenario: &Scenario, result: &ScenarioResult) -> Value {
    let saturated = result.records.iter().filter(|r| r.saturated).count();
    let max_iterations = result.records.iter().map(|r| r.solver_iterations).max().unwrap_or(0);
    json!({
        "name": scenario.name,
        "seed": scenario.plant.seed,
        "metrics": result.summary,
        "faults": result.faults,
        "saturated_steps": saturated,
        "max_solver_iterations": max_iterations,
        "scenario": scenario,
    })
}

/// Runs a scenario; relative replay paths resolve against `base_dir`.
pub fn run_scenario(scenario: &Scenario, base_dir: Option<&Path>) -> Result<ScenarioResult> {
    scenario.validate()?;
    let reference = scenario.resolve_reference(base_dir)?;
    if let Some(w) = reference.speed_warning(
        scenario.duration_s(),
        scenario.mpc.sample_time_s,
        scenario.mpc.bounds.us_mm_s.max,
    )? {
        log::warn!("{}: {w}", scenario.name);
    }
    run_closed_loop(scenario, &reference)
}

/// Writes the per-step CSV and summary JSON into `out_dir`.
pub fn write_run_outputs(scenario: &Scenario, result: &ScenarioResult, out_dir: &Path) -> Result<()> {
    write_file(&out_dir.join(&scenario.run.csv_file), &records_to_csv(&result.records))?;
    let mut summary = serde_json::to_string_pretty(&summary_json(scenario, result)).expect("serializable");
    summary.push('\n');
    write_file(&out_dir.join(&scenario.run.summary_file), &summary)
}

pub fn replay_summary_json(scenario: &Scenario, result: &OpenLoopResult) -> Value {
    json!({
        "name": scenario.name,
        "final_error_mm": result.final_error_mm(),
        "max_error_mm": result.max_error_mm(),
        "inserted_length_mm": result.inserted_mm.last().copied().unwrap_or(0.0),
        "final_error_pct_of_inserted": result.inserted_mm.last().filter(|&&l| l > 0.0)
            .map(|l| 100.0 * result.final_error_mm() / l),
        "max_error_pct_of_inserted": result.max_error_pct(),
        "steps": result.errors_mm.len(),
        "scenario": scenario,
    })
}

/// Replays a command file against the scenario's plant and geometry.
pub fn replay(commands_csv: &Path, scenario: &Scenario) -> Result<OpenLoopResult> {
    scenario.validate()?;
    let commands = read_commands_csv(commands_csv)?;
    run_open_loop(
        &commands,
        &scenario.plant,
        &scenario.geometry,
        scenario.mpc.sample_time_s,
        &scenario.run.initial_state,
    )
}

pub fn write_replay_outputs(
    scenario: &Scenario,
    result: &OpenLoopResult,
    out_dir: &Path,
    stem: &str,
) -> Result<()> {
    write_file(
        &out_dir.join(format!("{stem}_errors.csv")),
        &result.to_csv(scenario.mpc.sample_time_s),
    )?;
    let mut summary =
        serde_json::to_string_pretty(&replay_summary_json(scenario, result)).expect("serializable");
    summary.push('\n');
    write_file(&out_dir.join(format!("{stem}_summary.json")), &summary)
}
