use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use needle_mpc::calibration::{calibrate, read_runs_dir, synthesize_runs, write_runs_dir};
use needle_mpc::io::parse_commands_csv;
use needle_mpc::mapping::TendonGeometry;
use needle_mpc::scenario::{
    preset, preset_names, replay, run_scenario, write_replay_outputs, write_run_outputs, Scenario,
    REPLAY_COMMANDS,
};
use needle_mpc::sim::run_open_loop;
use needle_mpc::Error;

const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "needle-mpc", version, about = "Bilinear MPC for a tendon-steered needle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop scenario and write the step log and summary.
    Run {
        #[command(flatten)]
        source: ScenarioSource,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the plant and multistart seeds.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run several scenarios in parallel, one output directory each.
    Batch {
        scenarios: Vec<PathBuf>,
        #[arg(long = "preset")]
        presets: Vec<String>,
        /// Run every bundled preset.
        #[arg(long)]
        all_presets: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (0 = all cores).
        #[arg(long, env = "NEEDLE_MPC_THREADS", default_value_t = 0)]
        threads: usize,
    },
    /// Fit the curvature gain from a directory of constant-tension runs.
    Calibrate {
        runs_dir: PathBuf,
        /// Output JSON file.
        #[arg(long, default_value = "calibration.json")]
        out: PathBuf,
    },
    /// Write simulated calibration runs to a directory.
    GenCalibration {
        out_dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7")]
        tensions: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        tendon: usize,
        #[arg(long, default_value_t = needle_mpc::mapping::DEFAULT_GAIN)]
        gain: f64,
        #[arg(long, default_value_t = 100.0)]
        length_mm: f64,
        #[arg(long, default_value_t = 0.0)]
        noise_mm: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Replay recorded tendon commands on the nominal model and the perturbed plant.
    Replay {
        /// Command CSV files (us_mm_s,tau1_N,tau2_N,tau3_N).
        commands: Vec<PathBuf>,
        #[command(flatten)]
        source: ScenarioSource,
        /// Also replay the bundled command sequences.
        #[arg(long)]
        bundled: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// List bundled presets, or print one.
    Presets {
        #[arg(long)]
        show: Option<String>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ScenarioSource {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Bundled preset name.
    #[arg(long)]
    preset: Option<String>,
}

/// Failure carrying the process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NumericalFailure { .. } | Error::OutOfRange { .. } => EXIT_RUNTIME,
        _ => EXIT_VALIDATION,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code(&e),
            error: e.into(),
        }
    }
}

fn validation(error: anyhow::Error) -> Failure {
    Failure {
        code: EXIT_VALIDATION,
        error,
    }
}

fn runtime(error: anyhow::Error) -> Failure {
    Failure {
        code: EXIT_RUNTIME,
        error,
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

/// Scenario plus the directory relative replay paths resolve against.
fn load(source: &ScenarioSource) -> CliResult<(Scenario, Option<PathBuf>)> {
    match (&source.scenario, &source.preset) {
        (Some(path), _) => {
            let sc = Scenario::from_path(path)
                .with_context(|| format!("loading {}", path.display()))
                .map_err(|e| Failure {
                    code: e.downcast_ref::<Error>().map_or(EXIT_VALIDATION, exit_code),
                    error: e,
                })?;
            Ok((sc, path.parent().map(Path::to_path_buf)))
        }
        (None, Some(name)) => Ok((preset(name)?, None)),
        (None, None) => unreachable!("clap requires a scenario source"),
    }
}

fn run_one(sc: &Scenario, base: Option<&Path>, out: &Path) -> CliResult {
    let res = run_scenario(sc, base).map_err(|e| Failure {
        code: exit_code(&e),
        error: anyhow::Error::from(e).context(format!("running {}", sc.name)),
    })?;
    write_run_outputs(sc, &res, out)
        .with_context(|| format!("writing results to {}", out.display()))
        .map_err(runtime)?;
    let s = res.summary;
    println!(
        "{}: final error {:.4} mm, max error {:.4} mm, inserted {:.2} mm{}, {} steps, {} faults",
        if sc.name.is_empty() { "scenario" } else { &sc.name },
        s.final_error_mm,
        s.max_error_mm,
        s.inserted_length_mm,
        s.error_pct_of_inserted
            .map(|p| format!(" ({p:.3}%)"))
            .unwrap_or_default(),
        s.steps,
        res.faults
    );
    if res.faults > 0 {
        log::warn!("{}: {} solver faults fell back to zero input", sc.name, res.faults);
    }
    Ok(())
}

fn cmd_batch(
    scenarios: &[PathBuf],
    presets: &[String],
    all_presets: bool,
    out: &Path,
    seed: Option<u64>,
    threads: usize,
) -> CliResult {
    let mut jobs: Vec<(String, Scenario, Option<PathBuf>)> = Vec::new();
    for path in scenarios {
        let (sc, base) = load(&ScenarioSource {
            scenario: Some(path.clone()),
            preset: None,
        })?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        let name = if sc.name.is_empty() { stem.unwrap_or_default() } else { sc.name.clone() };
        jobs.push((name, sc, base));
    }
    let mut names: Vec<String> = presets.to_vec();
    if all_presets {
        names.extend(preset_names().map(String::from));
    }
    for name in names {
        jobs.push((name.clone(), preset(&name)?, None));
    }
    if jobs.is_empty() {
        return Err(validation(anyhow::anyhow!("batch needs at least one scenario or preset")));
    }
    let mut seen = std::collections::HashSet::new();
    for (name, _, _) in &jobs {
        if !seen.insert(name.as_str()) {
            return Err(validation(anyhow::anyhow!("duplicate scenario name '{name}' in batch")));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("building thread pool")
        .map_err(runtime)?;
    let results: Vec<(String, CliResult)> = pool.install(|| {
        jobs.par_iter()
            .map(|(name, sc, base)| {
                let sc = match seed {
                    Some(s) => sc.clone().with_seed(s),
                    None => sc.clone(),
                };
                (name.clone(), run_one(&sc, base.as_deref(), &out.join(name)))
            })
            .collect()
    });
    let mut worst = 0;
    for (name, r) in results {
        if let Err(f) = r {
            eprintln!("error: {name}: {:#}", f.error);
            worst = worst.max(f.code);
        }
    }
    if worst > 0 {
        return Err(Failure {
            code: worst,
            error: anyhow::anyhow!("some batch scenarios failed"),
        });
    }
    Ok(())
}

fn cmd_calibrate(runs_dir: &Path, out: &Path) -> CliResult {
    let runs = read_runs_dir(runs_dir)?;
    let cal = calibrate(&runs)?;
    let mut text = serde_json::to_string_pretty(&serde_json::json!({
        "gain_per_mm_n": cal.gain_per_mm_n,
        "residual_rms_per_mm": cal.residual_rms_per_mm,
        "runs": runs.iter().zip(&cal.curvatures_per_mm).map(|(r, k)| serde_json::json!({
            "tendon_index": r.tendon_index,
            "tension_n": r.tension,
            "points": r.tip_points.len(),
            "curvature_per_mm": k,
        })).collect::<Vec<_>>(),
    }))
    .expect("serializable");
    text.push('\n');
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))
            .map_err(runtime)?;
    }
    std::fs::write(out, text)
        .with_context(|| format!("writing {}", out.display()))
        .map_err(runtime)?;
    println!(
        "gain {:.6e} 1/(mm N) from {} runs, residual rms {:.3e} 1/mm",
        cal.gain_per_mm_n,
        runs.len(),
        cal.residual_rms_per_mm
    );
    Ok(())
}

fn cmd_replay(commands: &[PathBuf], source: &ScenarioSource, bundled: bool, out: &Path) -> CliResult {
    let (sc, _) = load(source)?;
    if commands.is_empty() && !bundled {
        return Err(validation(anyhow::anyhow!("replay needs command files or --bundled")));
    }
    let mut results = Vec::new();
    for path in commands {
        let res = replay(path, &sc).map_err(|e| Failure {
            code: exit_code(&e),
            error: anyhow::Error::from(e).context(format!("replaying {}", path.display())),
        })?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "replay".into());
        results.push((stem, res));
    }
    if bundled {
        for (name, text) in REPLAY_COMMANDS {
            let cmds = parse_commands_csv(text)?;
            let res = run_open_loop(
                &cmds,
                &sc.plant,
                &sc.geometry,
                sc.mpc.sample_time_s,
                &sc.run.initial_state,
            )?;
            results.push((name.to_string(), res));
        }
    }
    for (stem, res) in &results {
        write_replay_outputs(&sc, res, out, stem)
            .with_context(|| format!("writing results to {}", out.display()))
            .map_err(runtime)?;
        let inserted = res.inserted_mm.last().copied().unwrap_or(0.0);
        println!(
            "{stem}: final error {:.4} mm, max error {:.4} mm over {:.2} mm inserted (max {}% of inserted length)",
            res.final_error_mm(),
            res.max_error_mm(),
            inserted,
            res.max_error_pct()
                .map(|p| format!("{p:.3}"))
                .unwrap_or_else(|| "n/a".into())
        );
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Run { source, out, seed } => {
            let (mut sc, base) = load(&source)?;
            if let Some(s) = seed {
                sc = sc.with_seed(s);
            }
            run_one(&sc, base.as_deref(), &out)
        }
        Command::Batch {
            scenarios,
            presets,
            all_presets,
            out,
            seed,
            threads,
        } => cmd_batch(&scenarios, &presets, all_presets, &out, seed, threads),
        Command::Calibrate { runs_dir, out } => cmd_calibrate(&runs_dir, &out),
        Command::GenCalibration {
            out_dir,
            tensions,
            tendon,
            gain,
            length_mm,
            noise_mm,
            seed,
        } => {
            let geom = TendonGeometry {
                gain,
                ..TendonGeometry::default()
            };
            geom.validate()?;
            let runs = synthesize_runs(&geom, tendon, &tensions, length_mm, 1.0, noise_mm, seed)?;
            write_runs_dir(&out_dir, &runs).map_err(|e| runtime(e.into()))?;
            println!("wrote {} runs to {}", runs.len(), out_dir.display());
            Ok(())
        }
        Command::Replay {
            commands,
            source,
            bundled,
            out,
        } => cmd_replay(&commands, &source, bundled, &out),
        Command::Presets { show } => {
            match show {
                Some(name) => println!("{}", preset(&name)?.to_json()),
                None => preset_names().for_each(|n| println!("{n}")),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
