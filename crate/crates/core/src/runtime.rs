//! One simulated robot: simulator, sensing, localization, costmaps and the
//! executive advanced together on a fixed tick.

use std::path::Path as FsPath;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmap::{Costmap, LayeredCostmap};
use crate::executive::{CycleInput, ExecError, Executive, GoalState, GoalStatus, Notice, OperatingMode};
use crate::geometry::{angle_diff, KinodynamicLimits, Pose2D, VelocityCommand};
use crate::grid::{squared_distance_transform, CellState, OccupancyGrid};
use crate::localization::Localizer;
use crate::mapping::{save_map, MapError, MappingSession};
use crate::planner::global::Path;
use crate::planner::local::{CycleRecord, LocalPlanner, PlannerMode};
use crate::scenario::{insert_obstacle, Finish, NavConfig, PoseSource, Scenario, WorldEvent};
use crate::sim::{cast_lidar, cast_ultrasonic, BatteryState, LaserScan, LidarConfig, RangeReading, SimConfig, Simulator, UltrasonicConfig, World};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("a mapping session is already running")]
    MappingActive,
    #[error("no mapping session is running")]
    MappingInactive,
    #[error(transparent)]
    Map(#[from] MapError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventBody {
    Executive { notice: Notice },
    Divergence { count: u64 },
    MapConfirmed { revision: u64 },
    WorldChanged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotEvent {
    pub t: f64,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatterySnapshot {
    pub fraction: f64,
    pub time_remaining_h: Option<f64>,
    pub charging: bool,
}

impl From<&BatteryState> for BatterySnapshot {
    fn from(b: &BatteryState) -> Self {
        Self {
            fraction: b.charge_fraction,
            time_remaining_h: b.time_remaining_hours(),
            charging: b.charging,
        }
    }
}

/// Read-only view of the robot, cheap to clone and hand across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub sim_time: f64,
    pub mode: OperatingMode,
    pub goal: GoalStatus,
    pub pose: Pose2D,
    pub covariance: [[f64; 3]; 3],
    pub velocity: VelocityCommand,
    pub battery: BatterySnapshot,
    pub map_revision: u64,
    pub mapping: bool,
    pub path: Vec<Pose2D>,
    pub particles: usize,
}

/// A local-planner cycle together with the inputs it was computed from.
#[derive(Debug, Clone)]
pub struct CycleTrace {
    pub record: CycleRecord,
    pub costmap: Costmap,
    pub path: Path,
    pub goal: Pose2D,
    pub mode: PlannerMode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub path_length: f64,
    pub min_clearance: f64,
    pub footprint_violations: u64,
    pub max_speed: f64,
    pub max_omega: f64,
    pub control_cycles: u64,
    pub clamped_commands: u64,
    pub min_battery: f64,
    pub planning_cycles: u64,
    pub planning_us: u64,
}

impl Default for Metrics {
    fn default() -> Self {
        Self {
            path_length: 0.0,
            min_clearance: f64::INFINITY,
            footprint_violations: 0,
            max_speed: 0.0,
            max_omega: 0.0,
            control_cycles: 0,
            clamped_commands: 0,
            min_battery: 1.0,
            planning_cycles: 0,
            planning_us: 0,
        }
    }
}

fn every(period: f64, dt: f64) -> u64 {
    ((period / dt).round() as u64).max(1)
}

/// True when a multiple of `period` ticks fell since the previous control tick.
fn due(tick: u64, period: u64, window: u64) -> bool {
    tick == 0 || tick / period != tick.saturating_sub(window) / period
}

pub struct Robot {
    pub nav: NavConfig,
    world: World,
    clearance: Vec<f64>,
    pending: Vec<WorldEvent>,
    sim: Simulator,
    exec: Executive,
    static_map: OccupancyGrid,
    map_revision: u64,
    global: LayeredCostmap,
    local: LayeredCostmap,
    localizer: Option<Localizer>,
    mapping: Option<MappingSession>,
    lidar: LidarConfig,
    ultrasonics: Vec<UltrasonicConfig>,
    teleop: Option<(VelocityCommand, f64)>,
    /// Sim-time deadman for held teleop input; `None` leaves release to the caller.
    pub teleop_deadman: Option<f64>,
    command: VelocityCommand,
    divergences: u64,
    events: Vec<RobotEvent>,
    pub metrics: Metrics,
    pub keep_traces: bool,
    pub traces: Vec<CycleTrace>,
    docked: bool,
    control_every: u64,
    global_every: u64,
    local_every: u64,
    mcl_every: u64,
}

impl Robot {
    pub fn new(scenario: &Scenario, seed: u64) -> Self {
        let mut nav = scenario.config.clone();
        nav.costmap_common.footprint = scenario.robot.footprint.clone();
        let footprint = nav.costmap_common.effective_footprint();
        let world = scenario.world.build();
        let static_map = world.lidar.clone();
        let start = scenario.robot.start;
        let limits: KinodynamicLimits = scenario.robot.limits;
        let sim = Simulator::new(
            SimConfig {
                dt: scenario.robot.dt,
                limits,
                footprint: scenario.robot.footprint.clone(),
                odom_noise: scenario.robot.odom_noise,
                seed,
            },
            start,
            scenario.robot.battery,
        );
        let mut exec = Executive::new(
            nav.executive.clone(),
            nav.global_planner,
            LocalPlanner::new(nav.local_planner.clone(), limits, footprint.clone()),
            scenario.dock,
        );
        exec.record_cycles = true;
        let global = LayeredCostmap::global(&static_map, &nav.costmap_common);
        let local = LayeredCostmap::rolling(&static_map, &nav.costmap_common, &nav.local_costmap, &start);
        let localizer = match nav.pose_source {
            PoseSource::Mcl => Some(Localizer::new(
                &static_map,
                Some(start),
                nav.initial_pose_std,
                start,
                nav.amcl.clone(),
                seed ^ 0x9e37_79b9_7f4a_7c15,
            )),
            PoseSource::GroundTruth => None,
        };
        let dt = scenario.robot.dt;
        let mut pending = scenario.world.events.clone();
        pending.sort_by(|a, b| a.at.total_cmp(&b.at));
        let clearance = clearance_field(&world.solid);
        Self {
            control_every: every(nav.executive.control_period, dt),
            global_every: every(1.0 / nav.global_costmap.update_frequency, dt),
            local_every: every(1.0 / nav.local_costmap.update_frequency, dt),
            mcl_every: every(nav.amcl.update_interval, dt),
            nav,
            world,
            clearance,
            pending,
            sim,
            exec,
            static_map,
            map_revision: 1,
            global,
            local,
            localizer,
            mapping: None,
            lidar: scenario.robot.lidar,
            ultrasonics: scenario.robot.ultrasonics.clone(),
            teleop: None,
            teleop_deadman: Some(0.5),
            command: VelocityCommand::ZERO,
            divergences: 0,
            events: Vec::new(),
            metrics: Metrics::default(),
            keep_traces: false,
            traces: Vec::new(),
            docked: false,
        }
    }

    pub fn sim_time(&self) -> f64 {
        self.sim.state().sim_time()
    }

    pub fn sim(&self) -> &Simulator {
        &self.sim
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn executive(&self) -> &Executive {
        &self.exec
    }

    pub fn battery_mut(&mut self) -> &mut BatteryState {
        self.sim.battery_mut()
    }

    pub fn static_map(&self) -> &OccupancyGrid {
        &self.static_map
    }

    pub fn map_revision(&self) -> u64 {
        self.map_revision
    }

    pub fn local_costmap(&self) -> &Costmap {
        self.local.costmap()
    }

    pub fn global_costmap(&self) -> &Costmap {
        self.global.costmap()
    }

    pub fn docked(&self) -> bool {
        self.docked
    }

    pub fn divergence_events(&self) -> u64 {
        self.divergences
    }

    pub fn localizer(&self) -> Option<&Localizer> {
        self.localizer.as_ref()
    }

    /// Best pose estimate at the current odometry.
    pub fn pose(&self) -> Pose2D {
        let s = self.sim.state();
        match &self.localizer {
            Some(l) => l.pose(&s.odom_pose),
            None => s.true_pose,
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        let s = self.sim.state();
        let covariance = self.localizer.as_ref().map(|l| l.filter_estimate().1).unwrap_or_default();
        Snapshot {
            sim_time: s.sim_time(),
            mode: self.exec.mode(),
            goal: self.exec.status().clone(),
            pose: self.pose(),
            covariance,
            velocity: s.velocity,
            battery: BatterySnapshot::from(&s.battery),
            map_revision: self.map_revision,
            mapping: self.mapping.is_some(),
            path: self.exec.path().map(|p| p.poses.clone()).unwrap_or_default(),
            particles: self.localizer.as_ref().map(|l| l.set.particles.len()).unwrap_or(0),
        }
    }

    pub fn take_events(&mut self) -> Vec<RobotEvent> {
        self.collect_notices();
        std::mem::take(&mut self.events)
    }

    fn collect_notices(&mut self) {
        let t = self.sim_time();
        for notice in self.exec.take_notices() {
            self.events.push(RobotEvent {
                t,
                body: EventBody::Executive { notice },
            });
        }
    }

    pub fn set_goal(&mut self, goal: Pose2D) -> Result<u64, ExecError> {
        self.exec.set_goal(goal)
    }

    pub fn cancel_goal(&mut self) {
        self.exec.cancel_goal();
    }

    pub fn set_mode(&mut self, mode: OperatingMode) -> Result<(), ExecError> {
        if mode != OperatingMode::Teleop {
            self.teleop = None;
        }
        self.exec.set_mode(mode)
    }

    /// Latest joystick command; switches to TELEOP unless stopped.
    pub fn teleop(&mut self, cmd: VelocityCommand) -> Result<(), ExecError> {
        self.exec.teleop_request()?;
        self.teleop = Some((cmd, self.sim_time()));
        Ok(())
    }

    pub fn release_teleop(&mut self) {
        self.teleop = None;
    }

    pub fn start_mapping(&mut self) -> Result<(), RuntimeError> {
        if self.mapping.is_some() {
            return Err(RuntimeError::MappingActive);
        }
        self.mapping = Some(MappingSession::new(self.world.solid.info, self.nav.mapping));
        Ok(())
    }

    pub fn discard_mapping(&mut self) -> Result<(), RuntimeError> {
        self.mapping.take().map(|_| ()).ok_or(RuntimeError::MappingInactive)
    }

    /// Finalizes the session, optionally persists it, and makes it the
    /// static map for localization and planning.
    pub fn confirm_mapping(&mut self, save_to: Option<&FsPath>) -> Result<OccupancyGrid, RuntimeError> {
        let session = self.mapping.as_ref().ok_or(RuntimeError::MappingInactive)?;
        let cfg = session.config;
        let grid = session.finalize(cfg.occ_threshold, cfg.free_threshold)?;
        if let Some(path) = save_to {
            save_map(&grid, path)?;
        }
        self.mapping = None;
        self.install_map(grid.clone());
        Ok(grid)
    }

    /// Replaces the static map, rebuilding costmaps and the filter.
    pub fn install_map(&mut self, map: OccupancyGrid) {
        let pose = self.pose();
        let odom = self.sim.state().odom_pose;
        self.global = LayeredCostmap::global(&map, &self.nav.costmap_common);
        self.local = LayeredCostmap::rolling(&map, &self.nav.costmap_common, &self.nav.local_costmap, &pose);
        if self.localizer.is_some() {
            let seed = self.map_revision.wrapping_mul(0x2545_f491_4f6c_dd1d);
            self.localizer = Some(Localizer::new(&map, Some(pose), Some([0.05, 0.05, 0.05]), odom, self.nav.amcl.clone(), seed));
        }
        self.static_map = map;
        self.map_revision += 1;
        let t = self.sim_time();
        self.events.push(RobotEvent {
            t,
            body: EventBody::MapConfirmed {
                revision: self.map_revision,
            },
        });
    }

    pub fn mapping_session(&self) -> Option<&MappingSession> {
        self.mapping.as_ref()
    }

    fn apply_world_events(&mut self, now: f64) {
        let mut changed = false;
        while self.pending.first().is_some_and(|e| e.at <= now + 1e-9) {
            let e = self.pending.remove(0);
            insert_obstacle(&mut self.world, &e.obstacle);
            changed = true;
        }
        if changed {
            self.clearance = clearance_field(&self.world.solid);
            self.events.push(RobotEvent {
                t: now,
                body: EventBody::WorldChanged,
            });
        }
    }

    fn sense(&self) -> (LaserScan, Vec<RangeReading>) {
        let s = self.sim.state();
        let scan = cast_lidar(&s.true_pose, &self.world.lidar, &self.lidar, s.tick);
        let ranges = self
            .ultrasonics
            .iter()
            .map(|u| cast_ultrasonic(&s.true_pose, &self.world.solid, u))
            .collect();
        (scan, ranges)
    }

    fn control(&mut self, now: f64) {
        let tick = self.sim.state().tick;
        let (scan, ranges) = self.sense();
        let odom = self.sim.state().odom_pose;
        if let Some(loc) = self.localizer.as_mut() {
            if due(tick, self.mcl_every, self.control_every) {
                loc.update(&odom, &scan);
                let d = loc.divergence_events();
                if d > self.divergences {
                    self.divergences = d;
                    self.events.push(RobotEvent {
                        t: now,
                        body: EventBody::Divergence { count: d },
                    });
                }
            }
        }
        if let Some(m) = self.mapping.as_mut() {
            m.integrate_scan(&odom, &scan);
        }
        let pose = self.pose();
        if due(tick, self.local_every, self.control_every) {
            self.local.update(&pose, Some(&scan), &ranges);
        }
        if due(tick, self.global_every, self.control_every) {
            self.global.update(&pose, Some(&scan), &ranges);
        }

        let battery = self.sim.state().battery;
        if let Some(charging) = self.exec.battery_watch(&battery) {
            self.sim.battery_mut().charging = charging;
        }
        let teleop = self.teleop.map(|(c, _)| c);
        let input = CycleInput {
            now,
            pose,
            velocity: self.sim.state().velocity,
            global: self.global.costmap(),
            local: self.local.costmap(),
            teleop,
        };
        let (out, docked) = self.exec.control_cycle(&input);
        self.metrics.control_cycles += 1;
        if out.clamped {
            self.metrics.clamped_commands += 1;
        }
        for record in std::mem::take(&mut self.exec.records) {
            self.metrics.planning_cycles += 1;
            self.metrics.planning_us += record.elapsed_us;
            if self.keep_traces {
                if let (Some(path), Some(goal)) = (self.exec.path(), self.exec.status().goal) {
                    self.traces.push(CycleTrace {
                        record,
                        costmap: self.local.costmap().clone(),
                        path: path.clone(),
                        goal,
                        mode: self.exec.local.config.mode,
                    });
                }
            }
        }
        if docked {
            self.docked = true;
            self.sim.battery_mut().charging = true;
        }
        let mut cmd = out.command;
        let b = self.sim.state().battery;
        if b.is_depleted() && !b.charging {
            cmd = VelocityCommand::ZERO;
        }
        if b.charging && self.exec.mode() != OperatingMode::Docking && !cmd.is_zero() {
            self.sim.battery_mut().charging = false;
        }
        self.command = cmd;
        self.collect_notices();
    }

    /// Advances one simulator tick, running the control stack when due.
    pub fn tick(&mut self) {
        let now = self.sim_time();
        self.apply_world_events(now);
        if let (Some((_, at)), Some(deadman)) = (self.teleop, self.teleop_deadman) {
            if now - at > deadman + 1e-9 {
                self.teleop = None;
            }
        }
        if self.sim.state().tick % self.control_every == 0 {
            self.control(now);
        }
        let before = self.sim.state().true_pose;
        let state = self.sim.step(self.command, &self.world).expect("commands are finite").clone();
        let m = &mut self.metrics;
        m.path_length += before.distance(&state.true_pose);
        m.max_speed = m.max_speed.max(state.velocity.v.abs());
        m.max_omega = m.max_omega.max(state.velocity.omega.abs());
        m.min_battery = m.min_battery.min(state.battery.charge_fraction);
        if self.world.solid.footprint_collides(&state.true_pose, &self.sim.config.footprint) {
            m.footprint_violations += 1;
        }
        let info = self.world.solid.info;
        if let Some((i, j)) = info.world_to_cell(state.true_pose.x, state.true_pose.y) {
            let d = self.clearance[info.index(i, j)] - self.sim.config.footprint.circumscribed_radius();
            m.min_clearance = m.min_clearance.min(d);
        }
    }

    pub fn collisions(&self) -> u64 {
        self.sim.state().collision_count + self.metrics.footprint_violations
    }
}

/// Distance from each cell centre to the nearest occupied cell centre.
fn clearance_field(grid: &OccupancyGrid) -> Vec<f64> {
    let occ: Vec<bool> = grid.cells.iter().map(|c| *c == CellState::Occupied).collect();
    let res = grid.info.resolution;
    if !occ.iter().any(|o| *o) {
        return vec![f64::INFINITY; occ.len()];
    }
    squared_distance_transform(grid.info.width, grid.info.height, &occ)
        .into_iter()
        .map(|d| (d as f64).sqrt() * res)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub seed: u64,
    pub mode: Option<PlannerMode>,
    /// Multiplier on both acceleration limits.
    pub accel_scale: Option<f64>,
    /// Sim seconds per wall second; zero runs unpaced.
    pub time_scale: f64,
    pub keep_traces: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: None,
            accel_scale: None,
            time_scale: 0.0,
            keep_traces: false,
        }
    }
}

/// Deterministic outcome of one run; identical seeds give identical values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: String,
    pub seed: u64,
    pub mode: PlannerMode,
    pub accel_scale: f64,
    pub success: bool,
    pub reason: Option<String>,
    pub goals_reached: usize,
    pub sim_time: f64,
    pub path_length: f64,
    pub min_clearance: f64,
    pub collisions: u64,
    pub footprint_violations: u64,
    pub battery_used: f64,
    pub min_battery: f64,
    pub max_speed: f64,
    pub max_omega: f64,
    pub control_cycles: u64,
    pub planning_cycles: u64,
    pub clamped_commands: u64,
    pub gate_rejections: u64,
    pub divergence_events: u64,
    pub docked: bool,
    pub final_pose: Pose2D,
    pub final_estimate: Pose2D,
    pub final_state: GoalState,
    pub final_mode: OperatingMode,
}

impl ScenarioResult {
    pub fn passed(&self) -> bool {
        self.success && self.collisions == 0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    pub fn localization_error(&self) -> (f64, f64) {
        (
            self.final_pose.distance(&self.final_estimate),
            angle_diff(self.final_estimate.theta, self.final_pose.theta).abs(),
        )
    }
}

/// Wall-clock measurements; excluded from the deterministic report.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timing {
    pub wall_time_s: f64,
    pub planning_cycles: u64,
    pub mean_planning_us: f64,
}

pub struct RunOutcome {
    pub result: ScenarioResult,
    pub timing: Timing,
    pub traces: Vec<CycleTrace>,
    pub events: Vec<RobotEvent>,
}

pub fn prepare(scenario: &Scenario, opts: &RunOptions) -> Scenario {
    let mut s = scenario.clone();
    if let Some(mode) = opts.mode {
        s.config.local_planner.mode = mode;
    }
    if let Some(k) = opts.accel_scale {
        s.robot.limits.accel_v *= k;
        s.robot.limits.accel_omega *= k;
    }
    s
}

/// Runs a scenario script to completion or its time limit.
pub fn run_scenario(scenario: &Scenario, opts: &RunOptions) -> RunOutcome {
    let scenario = prepare(scenario, opts);
    let started = Instant::now();
    let mut robot = Robot::new(&scenario, opts.seed);
    robot.keep_traces = opts.keep_traces;
    let start_battery = scenario.robot.battery.charge_fraction;
    let mut events = Vec::new();
    let mut next_goal = 0usize;
    let mut active: Option<u64> = None;
    let mut reached = 0usize;
    let mut outcome: Option<(bool, Option<String>)> = None;
    let mut teleop_next: Vec<f64> = scenario.teleop.iter().map(|s| s.at).collect();
    let mut was_teleop = false;

    while outcome.is_none() {
        let now = robot.sim_time();
        if now >= scenario.time_limit - 1e-9 {
            break;
        }
        let mut in_teleop = false;
        for (k, seg) in scenario.teleop.iter().enumerate() {
            if now + 1e-9 >= seg.at && now < seg.at + seg.duration - 1e-9 {
                in_teleop = true;
                while teleop_next[k] <= now + 1e-9 {
                    let _ = robot.teleop(seg.command);
                    teleop_next[k] += 1.0 / seg.rate_hz.max(1e-3);
                }
            }
        }
        if was_teleop && !in_teleop {
            robot.release_teleop();
            if robot.executive().mode() == OperatingMode::Teleop {
                let _ = robot.set_mode(OperatingMode::Autonomous);
            }
            active = None;
        }
        was_teleop = in_teleop;

        if !in_teleop && robot.executive().mode() == OperatingMode::Autonomous {
            let status = robot.executive().status();
            match (active, status.state) {
                (Some(id), GoalState::Succeeded) if id == status.goal_id => {
                    reached += 1;
                    active = None;
                }
                (Some(id), GoalState::Aborted) if id == status.goal_id => {
                    let reason = status.error.clone().unwrap_or_else(|| "aborted".into());
                    outcome = Some((false, Some(reason)));
                    continue;
                }
                (Some(id), _) if id != status.goal_id => active = None,
                (Some(_), s) if !s.is_active() => active = None,
                _ => {}
            }
            if active.is_none() {
                if scenario.finish == Finish::Goals && next_goal >= scenario.goals.len() {
                    outcome = Some((true, None));
                    continue;
                }
                if !scenario.goals.is_empty() && (scenario.finish != Finish::Goals || next_goal < scenario.goals.len()) {
                    let goal = scenario.goals[next_goal % scenario.goals.len()];
                    next_goal += 1;
                    active = robot.set_goal(goal).ok();
                }
            }
        }
        if scenario.finish == Finish::Docked && robot.docked() {
            outcome = Some((true, None));
            continue;
        }

        robot.tick();
        events.extend(robot.take_events());
        if robot.collisions() > 0 && outcome.is_none() {
            outcome = Some((false, Some("collision".into())));
        }
        if opts.time_scale > 0.0 {
            let due = Duration::from_secs_f64(robot.sim_time() / opts.time_scale);
            let elapsed = started.elapsed();
            if due > elapsed {
                std::thread::sleep(due - elapsed);
            }
        }
    }
    let (success, reason) = outcome.unwrap_or_else(|| match scenario.finish {
        Finish::Timeout => (true, None),
        _ => (false, Some("Timeout".into())),
    });
    events.extend(robot.take_events());

    let state = robot.sim().state().clone();
    let m = robot.metrics;
    let status = robot.executive().status().clone();
    let result = ScenarioResult {
        scenario: scenario.name.clone(),
        seed: opts.seed,
        mode: scenario.config.local_planner.mode,
        accel_scale: opts.accel_scale.unwrap_or(1.0),
        success,
        reason,
        goals_reached: reached,
        sim_time: state.sim_time(),
        path_length: m.path_length,
        min_clearance: m.min_clearance,
        collisions: robot.collisions(),
        footprint_violations: m.footprint_violations,
        battery_used: start_battery - state.battery.charge_fraction,
        min_battery: m.min_battery,
        max_speed: m.max_speed,
        max_omega: m.max_omega,
        control_cycles: m.control_cycles,
        planning_cycles: m.planning_cycles,
        clamped_commands: m.clamped_commands,
        gate_rejections: robot.executive().gate_rejections,
        divergence_events: robot.divergence_events(),
        docked: robot.docked(),
        final_pose: state.true_pose,
        final_estimate: robot.pose(),
        final_state: status.state,
        final_mode: robot.executive().mode(),
    };
    let timing = Timing {
        wall_time_s: started.elapsed().as_secs_f64(),
        planning_cycles: m.planning_cycles,
        mean_planning_us: if m.planning_cycles > 0 {
            m.planning_us as f64 / m.planning_cycles as f64
        } else {
            0.0
        },
    };
    RunOutcome {
        result,
        timing,
        traces: std::mem::take(&mut robot.traces),
        events,
    }
}
