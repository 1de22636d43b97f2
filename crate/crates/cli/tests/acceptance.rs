//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

#[path = "../../api/tests/support/mod.rs"]
mod api_support;
#[path = "../../core/tests/support/mod.rs"]
mod oracles;

use std::collections::HashMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use navsim_api::auth::Scope;
use navsim_api::store::{read_records, Level, LogPolicy};
use navsim_cli::bench::{run_bench, BenchPlan, BenchReport, MODES};
use navsim_core::costmap::{CollisionPolicy, INSCRIBED};
use navsim_core::executive::{GoalState, Notice};
use navsim_core::geometry::{Footprint, KinodynamicLimits, Pose2D, VelocityCommand};
use navsim_core::grid::{CellState, GridInfo, OccupancyGrid};
use navsim_core::localization::systematic_indices;
use navsim_core::mapping::{encode_pgm, load_map, save_map, sidecar_path};
use navsim_core::planner::global::{compute_potential, plan, PlanError};
use navsim_core::planner::local::{velocity_window, CycleKind, LocalPlannerConfig, PlannerMode};
use navsim_core::runtime::{run_scenario, EventBody, Robot, RunOptions};
use navsim_core::scenario::Scenario;
use navsim_core::sim::BatteryState;
use navsim_core::sim::{SimConfig, Simulator, World};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reqwest::{Method, StatusCode};
use serde_json::json;

use api_support::*;
use oracles::*;

type Check = Result<String, String>;

const SEEDS: u64 = 5;
const TIME_SCALE: f64 = 20.0;
const V_MAX: f64 = 0.8;

fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn scenario(name: &str) -> Scenario {
    Scenario::load(&scenario_dir().join(format!("{name}.json"))).expect("scenario loads")
}

fn suite() -> Vec<Scenario> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(scenario_dir())
        .expect("scenario directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files.iter().map(|p| Scenario::load(p).expect("scenario loads")).collect()
}

/// The full matrix, every run paced at 20x sim time.
fn matrix() -> &'static BenchReport {
    static REPORT: OnceLock<BenchReport> = OnceLock::new();
    REPORT.get_or_init(|| {
        run_bench(&BenchPlan {
            scenarios: suite(),
            seeds: (0..SEEDS).collect(),
            accel: vec![1.0],
            modes: MODES.to_vec(),
            time_scale: TIME_SCALE,
            jobs: 0,
        })
    })
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn safety() -> Check {
    let report = matrix();
    let scenarios: std::collections::BTreeSet<_> = report.runs.iter().map(|r| r.result.scenario.as_str()).collect();
    ensure(scenarios.len() >= 8, || format!("only {} scenarios", scenarios.len()))?;
    let mut per: HashMap<&str, usize> = HashMap::new();
    for r in &report.runs {
        *per.entry(r.result.scenario.as_str()).or_default() += 1;
    }
    ensure(per.values().all(|&n| n >= SEEDS as usize), || format!("too few seeds: {per:?}"))?;
    let bad: Vec<String> = report
        .runs
        .iter()
        .filter(|r| r.result.collisions > 0 || r.result.footprint_violations > 0)
        .map(|r| format!("{}/{}/{}", r.result.scenario, r.result.mode, r.result.seed))
        .collect();
    ensure(bad.is_empty(), || format!("collisions in {bad:?}"))?;
    ensure(report.wall_time_s < 300.0, || format!("matrix took {:.1} s", report.wall_time_s))?;
    Ok(format!(
        "{} runs over {} scenarios, 0 collisions, {:.0} s simulated in {:.1} s wall at {TIME_SCALE}x",
        report.runs.len(),
        scenarios.len(),
        report.total_sim_time,
        report.wall_time_s
    ))
}

fn passage() -> Check {
    let report = matrix();
    let of = |name: &'static str| report.runs.iter().filter(move |r| r.result.scenario == name).map(|r| &r.result).collect::<Vec<_>>();
    let wide = of("corridor_060");
    let narrow = of("corridor_035");
    ensure(!wide.is_empty() && !narrow.is_empty(), || "corridor scenarios missing".into())?;
    for r in &wide {
        ensure(r.success && r.final_state == GoalState::Succeeded, || format!("0.60 m, {} seed {}: {:?} {:?}", r.mode, r.seed, r.final_state, r.reason))?;
    }
    for r in &narrow {
        ensure(r.reason.as_deref() == Some("NoPathFound"), || format!("0.35 m, {} seed {}: {:?}", r.mode, r.seed, r.reason))?;
    }
    Ok(format!("0.60 m succeeded {}/{}, 0.35 m NoPathFound {}/{}", wide.len(), wide.len(), narrow.len(), narrow.len()))
}

fn teleop_flood_over_api() -> Result<f64, String> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(dir.path());
        cfg.time_scale = 1.0;
        let server = start(cfg).await;
        let c = Client::new(&server);
        let token = c.onboard("flood@accept.test", "rb-flood").await;
        let r = c
            .call(Method::POST, "/robots/rb-flood/mode", Some(&token), Some(json!({ "mode": "TELEOP" })))
            .await;
        ensure(r.status == StatusCode::OK, || format!("mode change: {}", r.status))?;
        let mut ws = c.ws("rb-flood", "teleop", &token).await;
        let t0 = tokio::time::Instant::now();
        let mut top = 0.0f64;
        for k in 0..150u64 {
            send(&mut ws, json!({ "v": 5.0, "omega": 0.0, "seq": k + 1 })).await;
            tokio::time::sleep_until(t0 + Duration::from_millis(10 * (k + 1))).await;
            if k % 10 == 9 {
                let s = c.status("rb-flood", &token).await;
                top = top.max(s["velocity"]["v"].as_f64().unwrap_or(f64::NAN).abs());
            }
        }
        for m in collect(&mut ws, Duration::from_millis(300)).await {
            if m["type"] == "applied" {
                top = top.max(m["v"].as_f64().unwrap_or(f64::NAN).abs());
            }
        }
        Ok(top)
    })
}

fn speed() -> Check {
    let report = matrix();
    let sim_top = report.runs.iter().map(|r| r.result.max_speed.abs()).fold(0.0, f64::max);
    let flood = report
        .runs
        .iter()
        .filter(|r| r.result.scenario == "teleop_flood")
        .map(|r| r.result.max_speed)
        .fold(0.0, f64::max);
    let api_top = teleop_flood_over_api()?;
    for (what, v) in [("scenario matrix", sim_top), ("scripted flood", flood), ("API flood", api_top)] {
        ensure((v - V_MAX).abs() <= 1e-9, || format!("{what}: max |v| = {v}"))?;
    }
    Ok(format!("max |v| {sim_top} over the matrix, {flood} under the scripted flood, {api_top} under the API flood"))
}

fn window_law() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = LocalPlannerConfig::default();
    for k in 0..1000 {
        let limits = KinodynamicLimits {
            accel_v: rng.random_range(0.01..6.0),
            accel_omega: rng.random_range(0.01..8.0),
            ..KinodynamicLimits::default()
        };
        let cur = VelocityCommand::new(rng.random_range(0.0..=V_MAX), rng.random_range(-1.0..=1.0));
        let dwa = velocity_window(cur, &limits, PlannerMode::Dwa, &cfg);
        let roll = velocity_window(cur, &limits, PlannerMode::TrajectoryRollout, &cfg);
        ensure(roll.contains(&dwa), || format!("state {k}: {dwa:?} not inside {roll:?}"))?;
    }

    let limits = KinodynamicLimits::default();
    let fp = Footprint::default();
    let mut cycles = 0usize;
    for name in ["corridor_060", "slalom", "blocked_corridor"] {
        let s = scenario(name);
        for mode in MODES {
            let out = run_scenario(
                &s,
                &RunOptions {
                    mode: Some(mode),
                    keep_traces: true,
                    ..RunOptions::default()
                },
            );
            let cfg = LocalPlannerConfig { mode, ..LocalPlannerConfig::default() };
            for (n, t) in out.traces.iter().enumerate() {
                let rec = &t.record;
                if rec.kind != CycleKind::Sampling {
                    continue;
                }
                let window = velocity_window(rec.velocity, &limits, t.mode, &cfg);
                for tr in &rec.trajectories {
                    let c = tr.command;
                    let spin = c.v == 0.0;
                    let inside = (spin || (window.v.0 <= c.v && c.v <= window.v.1)) && window.omega.0 <= c.omega && c.omega <= window.omega.1;
                    ensure(inside, || format!("{name}/{mode} cycle {n}: {c:?} outside {window:?}"))?;
                }
                let best = argmin_oracle(rec, &t.costmap, &fp, &cfg).map_err(|e| format!("{name}/{mode} cycle {n}: {e}"))?;
                ensure(best == rec.selected, || format!("{name}/{mode} cycle {n}: selected {:?}, oracle {best:?}", rec.selected))?;
                ensure(rec.command == best.map(|k| rec.trajectories[k].command), || format!("{name}/{mode} cycle {n}: command differs from argmin"))?;
                cycles += 1;
            }
        }
    }
    ensure(cycles > 0, || "no sampling cycles traced".into())?;
    Ok(format!("1000/1000 windows nested; {cycles} traced cycles match the argmin oracle"))
}

fn inflation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 0..50 {
        let (w, h) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let raw = random_grid(rng.random(), w, h, rng.random_range(0.0..0.05), rng.random_range(0.0..0.1));
        let expected = oracle_inflate(&raw);
        let mut cm = raw.clone();
        cm.inflate();
        ensure(cm.cost == expected, || format!("grid {k} ({w}x{h}) differs"))?;
    }
    Ok("50/50 grids byte-equal".into())
}

fn global_planner() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let fp = Footprint::Circle { radius: 0.05 };
    let (mut grids, mut paths, mut unreachable) = (0, 0, 0);
    while grids < 50 {
        let (w, h) = (rng.random_range(8..=64), rng.random_range(8..=64));
        let mut cm = random_grid(rng.random(), w, h, rng.random_range(0.0..0.04), 0.0);
        cm.inflation.inscribed_radius = 0.05;
        cm.inflation.inflation_radius = 0.3;
        cm.inflate();
        let free: Vec<_> = free_cells(&cm)
            .into_iter()
            .filter(|&(i, j)| {
                let (x, y) = cm.info.cell_center(i, j);
                !cm.footprint_cost(&Pose2D::new(x, y, 0.0), &fp, CollisionPolicy::GLOBAL).is_collision()
            })
            .collect();
        if free.len() < 2 {
            continue;
        }
        grids += 1;
        let a = free[rng.random_range(0..free.len())];
        let b = free[rng.random_range(0..free.len())];
        let field = compute_potential(&cm, b, 0.8, |n| cm.cost[n] < INSCRIBED);
        ensure(field.potential == oracle_potential(&cm, b, 0.8), || format!("grid {grids} ({w}x{h}): potentials differ"))?;
        let (sx, sy) = cm.info.cell_center(a.0, a.1);
        let (gx, gy) = cm.info.cell_center(b.0, b.1);
        match plan(&cm, &Pose2D::new(sx, sy, 0.0), &Pose2D::new(gx, gy, 0.0), &fp) {
            Ok(path) => {
                let clear = path.poses.iter().all(|p| !cm.footprint_cost(p, &fp, CollisionPolicy::GLOBAL).is_collision());
                ensure(clear, || format!("grid {grids}: path crosses an obstacle"))?;
                paths += 1;
            }
            Err(PlanError::NoPathFound) => unreachable += 1,
            Err(e) => return Err(format!("grid {grids}: {e}")),
        }
    }
    Ok(format!("50/50 potential fields exact; {paths} paths collision-free, {unreachable} goals unreachable"))
}

fn mcl() -> Check {
    let tour: Vec<_> = matrix().runs.iter().filter(|r| r.result.scenario == "localization_tour").map(|r| &r.result).collect();
    ensure(tour.len() >= SEEDS as usize, || "localization tour missing".into())?;
    let (mut worst_d, mut worst_a) = (0.0f64, 0.0f64);
    for r in &tour {
        let (d, a) = r.localization_error();
        ensure(d < 0.1 && a < 0.05, || format!("{} seed {}: error {d:.3} m, {a:.3} rad", r.mode, r.seed))?;
        worst_d = worst_d.max(d);
        worst_a = worst_a.max(a);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for k in 0..1000 {
        let m = rng.random_range(1..40);
        let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.001..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|x| x / sum).collect();
        let n = rng.random_range(1..2000);
        let idx = systematic_indices(&w, n, rng.random_range(0.0..1.0));
        ensure(idx.len() == n, || format!("draw {k}: {} particles, wanted {n}", idx.len()))?;
        let mut copies = vec![0usize; m];
        for i in idx {
            copies[i] += 1;
        }
        for (i, &c) in copies.iter().enumerate() {
            let expect = n as f64 * w[i];
            ensure((c as f64 - expect).abs() <= 1.0, || format!("draw {k}: particle {i} copied {c} times, N*w = {expect:.3}"))?;
        }
    }
    Ok(format!(
        "{}/{} tours converged (worst {worst_d:.3} m, {worst_a:.4} rad); 1000 resamplings within one copy of N*w",
        tour.len(),
        tour.len()
    ))
}

fn mapping() -> Check {
    let s = scenario("localization_tour");
    let mut robot = Robot::new(&s, 0);
    robot.start_mapping().map_err(|e| e.to_string())?;
    let dt = robot.sim().config.dt;
    for goal in &s.goals {
        robot.set_goal(*goal).map_err(|e| e.to_string())?;
        for _ in 0..(60.0 / dt) as usize {
            robot.tick();
            let state = robot.executive().status().state;
            if state.is_terminal() {
                break;
            }
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("tour.pgm");
    let map = robot.confirm_mapping(Some(&image)).map_err(|e| e.to_string())?;
    let truth = &robot.world().lidar;
    ensure(map.info == truth.info, || "map geometry differs from the world".into())?;
    let (mut observed, mut agree) = (0usize, 0usize);
    for j in 0..map.info.height {
        for i in 0..map.info.width {
            let got = map.get(i, j);
            if got == CellState::Unknown {
                continue;
            }
            observed += 1;
            agree += usize::from(got == truth.get(i, j));
        }
    }
    ensure(observed > 0, || "nothing observed".into())?;
    let fidelity = agree as f64 / observed as f64;
    ensure(fidelity >= 0.95, || format!("agreement {:.2}% over {observed} cells", 100.0 * fidelity))?;

    let loaded = load_map(&image).map_err(|e| e.to_string())?;
    ensure(loaded == map, || "reloaded map differs".into())?;
    let again = dir.path().join("again.pgm");
    save_map(&loaded, &again).map_err(|e| e.to_string())?;
    let bytes = std::fs::read(&image).unwrap();
    ensure(bytes == std::fs::read(&again).unwrap() && bytes == encode_pgm(&map), || "image bytes differ after round trip".into())?;
    let (a, b) = (std::fs::read(sidecar_path(&image)), std::fs::read(sidecar_path(&again)));
    ensure(matches!((&a, &b), (Ok(x), Ok(y)) if x == y), || "metadata differs after round trip".into())?;
    Ok(format!("{:.2}% agreement over {observed} observed cells; save/load byte-identical", 100.0 * fidelity))
}

fn open_world() -> World {
    World::uniform(OccupancyGrid::new(GridInfo::new(0.05, 200, 200, Pose2D::new(-5.0, -5.0, 0.0)), CellState::Free))
}

/// Sim hours until the pack crosses `until` while driving a circle at top speed.
fn hours_to(battery: BatteryState, cmd: VelocityCommand, done: impl Fn(f64) -> bool) -> f64 {
    let world = open_world();
    let mut sim = Simulator::new(SimConfig::default(), Pose2D::default(), battery);
    while !done(sim.state().battery.charge_fraction) {
        sim.step(cmd, &world).expect("finite command");
        assert!(sim.state().sim_time() < 10.0 * 3600.0, "battery never crossed");
    }
    sim.state().sim_time() / 3600.0
}

fn battery() -> Check {
    let drive = VelocityCommand::new(V_MAX, V_MAX);
    let drain = hours_to(BatteryState::default(), drive, |f| f <= 0.0);
    ensure((drain - 4.0).abs() <= 0.08, || format!("full drain took {drain:.4} h"))?;
    let empty = BatteryState {
        charge_fraction: 0.0,
        charging: true,
        ..BatteryState::default()
    };
    let charge = hours_to(empty, VelocityCommand::ZERO, |f| f >= 1.0);
    ensure((charge - 4.0).abs() <= 0.08, || format!("full charge took {charge:.4} h"))?;

    let out = run_scenario(&scenario("auto_dock"), &RunOptions::default());
    let trigger = out.events.iter().find_map(|e| match &e.body {
        EventBody::Executive {
            notice: Notice::LowBattery { fraction, docking: true },
        } => Some(*fraction),
        _ => None,
    });
    let Some(at) = trigger else {
        return Err("auto-dock never triggered".into());
    };
    ensure(at <= 0.15 && at > 0.15 - 1e-3, || format!("auto-dock triggered at {at}"))?;
    let r = &out.result;
    ensure(r.docked && r.min_battery > 0.05, || format!("docked {} with minimum charge {}", r.docked, r.min_battery))?;
    Ok(format!(
        "drain {drain:.4} h, recharge {charge:.4} h, dock triggered at {:.4}%, docked with {:.2}% left",
        100.0 * at,
        100.0 * r.min_battery
    ))
}

fn api_contract() -> Check {
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async {
        let dir = tempfile::tempdir().unwrap();
        let server = start(config(dir.path())).await;
        let c = Client::new(&server);
        let (expired, _) = server
            .state
            .sessions
            .lock()
            .unwrap()
            .issue(Some("acc-1".into()), None, Scope::Control, Duration::ZERO);
        let routes = check_route_auth(&c, &expired).await?;

        let dir = tempfile::tempdir().unwrap();
        let server = start(config(dir.path())).await;
        let c = Client::new(&server);
        let token = c.onboard("audit@accept.test", "rb-audit").await;
        exercise(&c, "rb-audit", &token).await;
        let store = server.state.store.path();
        let leaked = telemetry_lines(store);
        ensure(leaked.is_empty(), || format!("{} telemetry lines persisted: {:?}", leaked.len(), leaked.first()))?;
        let records = read_records(store).map_err(|e| e.to_string())?;
        ensure(records.iter().all(|r| r.level == Level::Critical), || "non-critical record persisted".into())?;

        let grants = 5;
        let before = records.iter().filter(|r| r.kind == "session_granted").count();
        let (a, b) = grant_counts(&c, "audit@accept.test", "rb-audit", &token, grants).await;
        let stored = read_records(store).map_err(|e| e.to_string())?.iter().filter(|r| r.kind == "session_granted").count() - before;
        ensure((a, b, stored) == (grants, grants, grants), || format!("{grants} grants gave streams {a}/{b} and {stored} stored"))?;

        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(dir.path());
        cfg.log_policy = LogPolicy { opt_in_recording: true };
        let server = start(cfg).await;
        let c = Client::new(&server);
        let token = c.onboard("loud@accept.test", "rb-loud").await;
        exercise(&c, "rb-loud", &token).await;
        let recorded = telemetry_lines(server.state.store.path()).len();
        ensure(recorded > 0, || "the audit found nothing even with recording opted in".into())?;
        Ok(format!(
            "{routes} route/credential pairs rejected; 0 telemetry lines of {} records ({recorded} with opt-in); {grants} grants gave {a}/{b} stream and {stored} stored events",
            records.len()
        ))
    })
}

fn dwa_efficiency() -> Check {
    let report = matrix();
    let dwa = report.summary(PlannerMode::Dwa, 1.0).ok_or("no DWA runs")?;
    let roll = report.summary(PlannerMode::TrajectoryRollout, 1.0).ok_or("no rollout runs")?;
    ensure(dwa.mean_cycle_us <= roll.mean_cycle_us, || format!("DWA {:.1} us > rollout {:.1} us", dwa.mean_cycle_us, roll.mean_cycle_us))?;
    Ok(format!("mean cycle DWA {:.1} us <= rollout {:.1} us", dwa.mean_cycle_us, roll.mean_cycle_us))
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Check); 11] = [
        ("safety invariant", safety),
        ("passage law", passage),
        ("speed law", speed),
        ("window law", window_law),
        ("inflation oracle", inflation),
        ("global planner oracle", global_planner),
        ("MCL convergence", mcl),
        ("mapping fidelity", mapping),
        ("battery law", battery),
        ("API contract", api_contract),
        ("DWA efficiency", dwa_efficiency),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut out = std::io::stdout();
    let mut failed = 0;
    for (name, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t0.elapsed().as_secs_f64();
        let line = match &result {
            Ok(detail) => format!("PASS {name}: {detail} ({secs:.1} s)"),
            Err(why) => {
                failed += 1;
                format!("FAIL {name}: {why} ({secs:.1} s)")
            }
        };
        let _ = writeln!(out, "{line}");
        let _ = out.flush();
    }
    let _ = writeln!(out, "acceptance: {failed} failed");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
