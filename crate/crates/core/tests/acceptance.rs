//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use needle_mpc::calibration::{calibrate, synthesize_runs};
use needle_mpc::io::parse_commands_csv;
use needle_mpc::kinematics::{step, Integrator, NeedleState, VirtualInput};
use needle_mpc::mapping::{forward_map, inverse_map, rates_from_command, TendonCommand, TendonGeometry};
use needle_mpc::mpc::{horizon_cost, solve_horizon, Bounds, InputBounds, MpcConfig};
use needle_mpc::optimizer::finite_difference_gradient;
use needle_mpc::scenario::{
    preset, preset_names, replay_summary_json, run_scenario, write_replay_outputs, write_run_outputs,
    REPLAY_COMMANDS,
};
use needle_mpc::sim::{run_open_loop, PlantConfig};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn max_projected_gradient(records: &[needle_mpc::sim::StepRecord]) -> f64 {
    records.iter().map(|r| r.projected_gradient).fold(0.0, f64::max)
}

fn criterion_1() -> Outcome {
    let mut parts = Vec::new();
    for name in ["target1", "target2", "target3"] {
        let sc = preset(name).map_err(|e| e.to_string())?;
        let started = Instant::now();
        let res = run_scenario(&sc, None).map_err(|e| e.to_string())?;
        let secs = started.elapsed().as_secs_f64();
        let err = res.summary.final_error_mm;
        let pg = max_projected_gradient(&res.records);
        check(res.records.len() == 210, format!("{name}: {} steps", res.records.len()))?;
        check(err <= 0.5, format!("{name}: final error {err:.4} mm > 0.5 mm"))?;
        check(secs <= 60.0, format!("{name}: took {secs:.1} s"))?;
        check(pg <= 1e-6, format!("{name}: projected gradient {pg:e}"))?;
        parts.push(format!("{name} {err:.3} mm in {secs:.2} s"));
    }
    Ok(parts.join(", "))
}

fn criterion_2() -> Outcome {
    let sc = preset("helix").map_err(|e| e.to_string())?;
    check(sc.run.terminal_window_s == 1.0, "helix preset must exclude the final 1 s")?;
    let res = run_scenario(&sc, None).map_err(|e| e.to_string())?;
    let s = res.summary;
    check(s.max_error_mm <= 5.0, format!("steady max {:.3} mm > 5 mm", s.max_error_mm))?;
    check(
        s.terminal_max_error_mm <= 2.0 * s.max_error_mm,
        format!("terminal {:.3} mm > 2x steady {:.3} mm", s.terminal_max_error_mm, s.max_error_mm),
    )?;
    Ok(format!(
        "steady max {:.3} mm, terminal max {:.3} mm",
        s.max_error_mm, s.terminal_max_error_mm
    ))
}

fn criterion_3() -> Outcome {
    let sc = preset("sharp_turn").map_err(|e| e.to_string())?;
    let needle_mpc::ReferenceSpec::SharpTurn { waypoints_mm, speed_mm_s } = &sc.reference else {
        return Err("sharp_turn preset has the wrong reference kind".into());
    };
    let leg = (Vector3::from(waypoints_mm[1]) - Vector3::from(waypoints_mm[0])).norm();
    let t_corner = leg / speed_mm_s;
    let res = run_scenario(&sc, None).map_err(|e| e.to_string())?;
    let window: Vec<f64> = res
        .records
        .iter()
        .filter(|r| (r.t - t_corner).abs() <= 1.0 + 1e-9)
        .map(|r| r.error_mm)
        .collect();
    check(window.len() >= 40, "corner window not covered by the run")?;
    let worst = window.iter().copied().fold(0.0, f64::max);
    check(worst <= 1.5, format!("corner error {worst:.3} mm > 1.5 mm"))?;
    Ok(format!("max {worst:.3} mm within 1 s of the corner at t = {t_corner} s"))
}

fn criterion_4() -> Outcome {
    let sc = preset("replay_mismatch").map_err(|e| e.to_string())?;
    check((sc.plant.gain_error - 0.05).abs() < 1e-12, "gain error must be 5%")?;
    check((sc.plant.theta_e_error_rad - 2f64.to_radians()).abs() < 1e-12, "theta_e error must be 2 deg")?;
    let mut parts = Vec::new();
    for (name, text) in REPLAY_COMMANDS {
        let cmds = parse_commands_csv(text).map_err(|e| e.to_string())?;
        let res = run_open_loop(
            &cmds,
            &sc.plant,
            &sc.geometry,
            sc.mpc.sample_time_s,
            &sc.run.initial_state,
        )
        .map_err(|e| e.to_string())?;
        let inserted = *res.inserted_mm.last().unwrap();
        check((inserted - 70.0).abs() < 1e-9, format!("{name}: inserted {inserted} mm"))?;
        let pct = res.max_error_pct().unwrap();
        check(pct <= 3.0, format!("{name}: error reached {pct:.3}% of inserted length"))?;
        let summary = replay_summary_json(&sc, &res);
        parts.push(format!(
            "{name} {:.3} mm ({:.2}%)",
            summary["final_error_mm"].as_f64().unwrap(),
            pct
        ));
    }
    Ok(parts.join(", "))
}

/// Best tension triple on a 0.01 N grid.
///
/// The smallest-residual grid point gives the reachable curvature closest to
/// the target; among grid points whose curvature lies within half a cell of
/// it the smallest norm wins.
fn grid_oracle(target: (f64, f64), geom: &TendonGeometry) -> [f64; 3] {
    let h = 0.01;
    let n = (geom.tau_max / h).round() as usize;
    let c: Vec<Vector3<f64>> = (0..3)
        .map(|j| {
            let v = geom.channel_direction(j);
            Vector3::new(v.x * geom.gain, v.y * geom.gain, 0.0)
        })
        .collect();
    let c3_sq = c[2].norm_squared();
    let target = Vector3::new(target.0, target.1, 0.0);
    let partial = |i: usize, j: usize| c[0] * (i as f64 * h) + c[1] * (j as f64 * h);

    let mut best = (f64::INFINITY, Vector3::zeros());
    for i in 0..=n {
        for j in 0..=n {
            let a = partial(i, j);
            let t3_star = ((target - a).dot(&c[2]) / c3_sq).clamp(0.0, geom.tau_max);
            let k = (t3_star / h).floor() as usize;
            for kk in [k, (k + 1).min(n)] {
                let kappa = a + c[2] * (kk as f64 * h);
                let res = (target - kappa).norm();
                if res < best.0 {
                    best = (res, kappa);
                }
            }
        }
    }

    let (kappa_g, tie) = (best.1, 0.5 * geom.gain * h);
    let mut pick = (f64::INFINITY, [0.0; 3]);
    for i in 0..=n {
        for j in 0..=n {
            let w = kappa_g - partial(i, j);
            let along = w.dot(&c[2]) / c3_sq;
            let perp_sq = (w - c[2] * along).norm_squared();
            if perp_sq > tie * tie {
                continue;
            }
            let half = (tie * tie - perp_sq).sqrt() / c3_sq.sqrt();
            let k = ((along - half) / h).ceil().max(0.0) as usize;
            if k > n || k as f64 * h > along + half {
                continue;
            }
            let tau = [i as f64 * h, j as f64 * h, k as f64 * h];
            let norm = tau.iter().map(|t| t * t).sum::<f64>();
            if norm < pick.0 {
                pick = (norm, tau);
            }
        }
    }
    pick.1
}

fn norm(t: &[f64; 3]) -> f64 {
    t.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Smallest norm over the box-feasible triples `tau + c·(1,1,1)`, which all
/// produce the same curvature, scanned at 1e-5 N.
fn null_space_min_norm(tau: &[f64; 3], tau_max: f64) -> f64 {
    let h = 1e-5;
    let steps = (tau_max / h).round() as i64;
    (-steps..=steps)
        .map(|i| tau.map(|t| t + i as f64 * h))
        .filter(|t| t.iter().all(|&x| (-1e-12..=tau_max + 1e-12).contains(&x)))
        .map(|t| norm(&t))
        .fold(f64::INFINITY, f64::min)
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_cell = 0.0f64;
    let mut worst_norm = f64::NEG_INFINITY;
    let mut saturated = 0;
    for k in 0..100 {
        let geom = TendonGeometry::new(rng.random_range(0.0..2.0 * PI), 3.7e-4, 7.0).unwrap();
        // Up to 1.3x the reachable curvature.
        let kmax = geom.gain * geom.tau_max * 1.3;
        let (r, phi) = (kmax * rng.random::<f64>().sqrt(), rng.random_range(0.0..2.0 * PI));
        let us = rng.random_range(1.0..24.0);
        let u = VirtualInput::new(us, r * phi.cos() * us, r * phi.sin() * us);
        let mapped = inverse_map(&u, &geom);
        saturated += usize::from(mapped.saturated);
        let oracle = grid_oracle((r * phi.cos(), r * phi.sin()), &geom);
        let diff = (0..3)
            .map(|j| (mapped.command.tau[j] - oracle[j]).abs())
            .fold(0.0, f64::max);
        worst_cell = worst_cell.max(diff / 0.01);
        let excess = norm(&mapped.command.tau) - null_space_min_norm(&mapped.command.tau, geom.tau_max);
        worst_norm = worst_norm.max(excess);
        check(excess <= 1e-4, format!("target {k}: norm exceeds the null-space minimum by {excess:e} N"))?;
        check(
            diff <= 0.01 + 1e-9,
            format!("target {k}: {:?} vs grid {oracle:?}", mapped.command.tau),
        )?;
    }
    let mut worst_rate = 0.0f64;
    for _ in 0..10_000 {
        let geom = TendonGeometry::new(rng.random_range(0.0..2.0 * PI), rng.random_range(1e-4..1e-3), 7.0)
            .unwrap();
        let tau = [0; 3].map(|_| rng.random_range(0.0..7.0));
        let us = rng.random_range(-1.0..24.0);
        let u = rates_from_command(&TendonCommand::new(us, tau), &geom).unwrap();
        let mapped = inverse_map(&u, &geom);
        if us.abs() < 1e-6 {
            continue;
        }
        check(!mapped.saturated, format!("feasible sample flagged saturated: {u:?}"))?;
        let back = rates_from_command(&mapped.command, &geom).unwrap();
        let e = (back.rate_x - u.rate_x).abs().max((back.rate_y - u.rate_y).abs());
        worst_rate = worst_rate.max(e);
    }
    check(worst_rate <= 1e-6, format!("round-trip rate error {worst_rate:e}"))?;
    Ok(format!(
        "grid distance <= {worst_cell:.2} cells over 100 targets ({saturated} saturated), norm within {worst_norm:.1e} N of the null-space minimum, round trip {worst_rate:.1e} rad/s"
    ))
}

/// Horizon cost written out element-wise, independent of the library's rollout.
fn oracle_cost(s0: &NeedleState, u: &[f64], refs: &[Vector3<f64>], cfg: &MpcConfig) -> f64 {
    let ts = cfg.sample_time_s;
    let (mut px, mut py, mut pz) = (s0.position().x, s0.position().y, s0.position().z);
    let (mut dx, mut dy, mut dz) = (s0.direction().x, s0.direction().y, s0.direction().z);
    let err = |px: f64, py: f64, pz: f64, r: &Vector3<f64>| {
        cfg.q_diag[0] * (px - r.x).powi(2) + cfg.q_diag[1] * (py - r.y).powi(2) + cfg.q_diag[2] * (pz - r.z).powi(2)
    };
    let mut j = err(px, py, pz, &refs[0]);
    for (i, c) in u.chunks(3).enumerate() {
        let (us, ux, uy) = (c[0], c[1], c[2]);
        j += cfg.r_diag[0] * us * us + cfg.r_diag[1] * ux * ux + cfg.r_diag[2] * uy * uy;
        px += ts * us * dx;
        py += ts * us * dy;
        pz += ts * us * dz;
        let nx = dx - ts * dz * uy;
        let ny = dy + ts * dz * ux;
        let nz = dz + ts * (dx * uy - dy * ux);
        let n = (nx * nx + ny * ny + nz * nz).sqrt();
        (dx, dy, dz) = (nx / n, ny / n, nz / n);
        j += err(px, py, pz, &refs[i + 1]);
    }
    j
}

/// Exhaustive grid over the input box followed by compass search from the best cells.
fn grid_refine_oracle(s0: &NeedleState, refs: &[Vector3<f64>], cfg: &MpcConfig) -> f64 {
    let b = cfg.bounds;
    let lo = [b.us_mm_s.min, b.ux_rad_s.min, b.uy_rad_s.min];
    let hi = [b.us_mm_s.max, b.ux_rad_s.max, b.uy_rad_s.max];
    let dim = 3 * cfg.horizon;
    let per_axis: usize = if cfg.horizon == 1 { 41 } else { 11 };
    let total = per_axis.pow(dim as u32);
    let mut scored: Vec<(f64, Vec<f64>)> = Vec::with_capacity(total);
    let mut x = vec![0.0; dim];
    for idx in 0..total {
        let mut rem = idx;
        for (k, xk) in x.iter_mut().enumerate() {
            let g = rem % per_axis;
            rem /= per_axis;
            *xk = lo[k % 3] + (hi[k % 3] - lo[k % 3]) * g as f64 / (per_axis - 1) as f64;
        }
        scored.push((oracle_cost(s0, &x, refs, cfg), x.clone()));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = f64::INFINITY;
    for (mut f, mut x) in scored.into_iter().take(10) {
        let mut h: Vec<f64> = (0..dim).map(|k| (hi[k % 3] - lo[k % 3]) / (per_axis - 1) as f64).collect();
        while h.iter().any(|&s| s > 1e-10) {
            let mut improved = false;
            for k in 0..dim {
                for sgn in [1.0, -1.0] {
                    let mut y = x.clone();
                    y[k] = (y[k] + sgn * h[k]).clamp(lo[k % 3], hi[k % 3]);
                    let fy = oracle_cost(s0, &y, refs, cfg);
                    if fy < f {
                        (f, x) = (fy, y);
                        improved = true;
                    }
                }
            }
            if !improved {
                h.iter_mut().for_each(|s| *s *= 0.5);
            }
        }
        best = best.min(f);
    }
    best
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut instances = 0;
    for k in 0..24 {
        let horizon = 1 + k % 2;
        let cfg = MpcConfig {
            sample_time_s: 0.2,
            horizon,
            bounds: InputBounds {
                us_mm_s: Bounds::new(-1.0, 24.0),
                ux_rad_s: Bounds::new(-2.0, 2.0),
                uy_rad_s: Bounds::new(-2.0, 2.0),
            },
            starts: 8,
            start_seed: k as u64,
            ..MpcConfig::default()
        };
        let dir = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 1.0);
        let s0 = NeedleState::new(Vector3::new(0.0, 0.0, rng.random_range(0.0..50.0)), dir).unwrap();
        let refs: Vec<Vector3<f64>> = (0..=horizon)
            .map(|_| s0.position() + Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-3.0..8.0)))
            .collect();
        let sol = solve_horizon(&s0, &refs, &cfg, None).map_err(|e| e.to_string())?;
        let flat: Vec<f64> = sol.inputs.iter().flat_map(|u| u.as_array()).collect();
        let ours = oracle_cost(&s0, &flat, &refs, &cfg);
        check((ours - sol.cost).abs() <= 1e-9 * ours.max(1.0), format!("instance {k}: cost mismatch"))?;
        let oracle = grid_refine_oracle(&s0, &refs, &cfg);
        let rel = (ours - oracle) / oracle.max(1e-12);
        worst = worst.max(rel.abs());
        check(rel.abs() <= 1e-3, format!("instance {k} (N={horizon}): solver {ours} vs oracle {oracle}"))?;
        instances += 1;
    }
    Ok(format!("{instances} instances with N <= 2, worst relative gap {worst:.1e}"))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_grad = 0.0f64;
    for k in 0..100 {
        let horizon = rng.random_range(1..=6);
        let cfg = MpcConfig {
            horizon,
            sample_time_s: rng.random_range(0.02..0.5),
            ..MpcConfig::default()
        };
        let s0 = NeedleState::new(
            Vector3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(0.0..100.0)),
            Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        )
        .map_err(|e| e.to_string())?;
        let inputs: Vec<VirtualInput> = (0..horizon)
            .map(|_| VirtualInput::new(rng.random_range(-1.0..24.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
            .collect();
        let refs: Vec<Vector3<f64>> = (0..=horizon)
            .map(|_| Vector3::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), rng.random_range(0.0..150.0)))
            .collect();
        let (_, g) = horizon_cost(&s0, &inputs, &refs, &cfg).map_err(|e| e.to_string())?;
        let x = DVector::from_iterator(3 * horizon, inputs.iter().flat_map(|u| u.as_array()));
        let fd = finite_difference_gradient(
            |x: &DVector<f64>| {
                let u: Vec<VirtualInput> = x.as_slice().chunks(3).map(|c| VirtualInput::new(c[0], c[1], c[2])).collect();
                horizon_cost(&s0, &u, &refs, &cfg).unwrap().0
            },
            &x,
        );
        let rel = (&g - &fd).amax() / g.amax().max(1.0);
        worst_grad = worst_grad.max(rel);
        check(rel <= 1e-5, format!("instance {k}: gradient relative error {rel:e}"))?;
    }

    let mut worst_norm = 0.0f64;
    for k in 0..10_000 {
        let s = NeedleState::new(
            Vector3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)),
            Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        )
        .map_err(|e| e.to_string())?;
        let u = VirtualInput::new(rng.random_range(-1.0..24.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let integrator = if k % 2 == 0 { Integrator::Euler } else { Integrator::Exact };
        let next = step(&s, &u, rng.random_range(0.001..1.0), integrator).map_err(|e| e.to_string())?;
        worst_norm = worst_norm.max((next.direction().norm() - 1.0).abs());
    }
    check(worst_norm <= 1e-9, format!("direction norm drift {worst_norm:e}"))?;

    let mut worst_equal = 0.0f64;
    for _ in 0..1_000 {
        let geom = TendonGeometry::new(rng.random_range(0.0..2.0 * PI), 3.7e-4, 7.0).unwrap();
        let t = rng.random_range(0.0..7.0);
        let (kx, ky) = forward_map(&[t, t, t], &geom).map_err(|e| e.to_string())?;
        let scale = geom.gain * t;
        let rel = kx.hypot(ky) / scale.max(f64::MIN_POSITIVE);
        worst_equal = worst_equal.max(rel);
        check(rel <= 8.0 * f64::EPSILON, format!("equal tension {t} N at theta_e {} gives {kx:e}, {ky:e}", geom.theta_e))?;
    }
    Ok(format!(
        "gradient {worst_grad:.1e} rel, norm drift {worst_norm:.1e}, equal-tension curvature {worst_equal:.1e} x gain*tau"
    ))
}

fn criterion_8() -> Outcome {
    let truth = TendonGeometry::default();
    let tensions = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
    let runs = synthesize_runs(&truth, 1, &tensions, 100.0, 1.0, 0.0, 8).map_err(|e| e.to_string())?;
    let cal = calibrate(&runs).map_err(|e| e.to_string())?;
    let rel = (cal.gain_per_mm_n / truth.gain - 1.0).abs();
    check(rel <= 5e-3, format!("gain {} off by {:.3}%", cal.gain_per_mm_n, 100.0 * rel))?;
    let model = TendonGeometry {
        gain: cal.gain_per_mm_n,
        ..truth
    };
    let plant = PlantConfig {
        gain_error: truth.gain / cal.gain_per_mm_n - 1.0,
        ..PlantConfig::default()
    };
    let mut worst = 0.0f64;
    for t in tensions {
        let cmds = vec![TendonCommand::new(20.0, [t, 0.0, 0.0]); 100];
        let res = run_open_loop(&cmds, &plant, &model, 0.05, &NeedleState::origin()).map_err(|e| e.to_string())?;
        worst = worst.max(res.max_error_mm());
    }
    check(worst <= 0.1, format!("installed gain misses by {worst:.4} mm"))?;
    Ok(format!(
        "gain {:.6e} ({:.1e}% off), trajectories within {worst:.1e} mm over 100 mm",
        cal.gain_per_mm_n,
        100.0 * rel
    ))
}

fn criterion_9() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = 0;
    for name in preset_names() {
        let sc = preset(name).map_err(|e| e.to_string())?;
        for dir in [a.path(), b.path()] {
            let res = run_scenario(&sc, None).map_err(|e| e.to_string())?;
            write_run_outputs(&sc, &res, &dir.join(name)).map_err(|e| e.to_string())?;
        }
        for file in [&sc.run.csv_file, &sc.run.summary_file] {
            let x = std::fs::read(a.path().join(name).join(file)).map_err(|e| e.to_string())?;
            let y = std::fs::read(b.path().join(name).join(file)).map_err(|e| e.to_string())?;
            check(x == y, format!("{name}/{file} differs between runs"))?;
            files += 1;
        }
    }
    let sc = preset("replay_mismatch").map_err(|e| e.to_string())?;
    for (name, text) in REPLAY_COMMANDS {
        let cmds = parse_commands_csv(text).map_err(|e| e.to_string())?;
        for dir in [a.path(), b.path()] {
            let res = run_open_loop(&cmds, &sc.plant, &sc.geometry, sc.mpc.sample_time_s, &sc.run.initial_state)
                .map_err(|e| e.to_string())?;
            write_replay_outputs(&sc, &res, &dir.join("replays"), name).map_err(|e| e.to_string())?;
        }
        for suffix in ["errors.csv", "summary.json"] {
            let file = format!("replays/{name}_{suffix}");
            let x = std::fs::read(a.path().join(&file)).map_err(|e| e.to_string())?;
            let y = std::fs::read(b.path().join(&file)).map_err(|e| e.to_string())?;
            check(x == y, format!("{file} differs between runs"))?;
            files += 1;
        }
    }
    Ok(format!("{files} output files byte-identical across two runs"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("fixed-target reproduction", criterion_1),
        ("helix tracking", criterion_2),
        ("sharp-turn tracking", criterion_3),
        ("open-loop mismatch", criterion_4),
        ("mapping oracle equivalence", criterion_5),
        ("MPC near-global optimality", criterion_6),
        ("numerical hygiene", criterion_7),
        ("calibration closure", criterion_8),
        ("determinism", criterion_9),
    ];
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} PASS {name}: {detail} [{secs:.1} s]", i + 1),
            Err(why) => {
                failures += 1;
                println!("criterion {} FAIL {name}: {why} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
