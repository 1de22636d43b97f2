//! Velocity-space local planner: sample commands, forward-simulate, discard
//! colliding trajectories, score the rest and pick the cheapest.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::global::{Path, NEIGHBORS};
use crate::costmap::{CollisionPolicy, Costmap, FootprintCost, INSCRIBED, LETHAL};
use crate::geometry::{angle_diff, Footprint, KinodynamicLimits, Pose2D, VelocityCommand};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerMode {
    Dwa,
    TrajectoryRollout,
}

impl std::fmt::Display for PlannerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PlannerMode::Dwa => "dwa",
            PlannerMode::TrajectoryRollout => "trajectory_rollout",
        })
    }
}

impl std::str::FromStr for PlannerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dwa" => Ok(PlannerMode::Dwa),
            "rollout" | "trajectory_rollout" | "trajectoryrollout" => Ok(PlannerMode::TrajectoryRollout),
            other => Err(format!("unknown planner mode {other:?} (expected dwa or rollout)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalPlannerConfig {
    pub mode: PlannerMode,
    pub sim_time: f64,
    pub sim_granularity: f64,
    pub samples_v: usize,
    pub samples_omega: usize,
    pub w_path: f64,
    pub w_goal: f64,
    pub w_obs: f64,
    pub goal_xy_tolerance: f64,
    pub goal_yaw_tolerance: f64,
    /// One control period, the DWA acceleration horizon.
    pub control_period: f64,
    /// Path distance is read this far ahead of the end pose along its heading,
    /// never past the local goal.
    pub heading_lookahead: f64,
}

impl Default for LocalPlannerConfig {
    fn default() -> Self {
        Self {
            mode: PlannerMode::Dwa,
            sim_time: 1.7,
            sim_granularity: 0.05,
            samples_v: 11,
            samples_omega: 21,
            w_path: 32.0,
            w_goal: 24.0,
            w_obs: 0.01,
            goal_xy_tolerance: 0.15,
            goal_yaw_tolerance: 0.15,
            control_period: 0.2,
            heading_lookahead: 0.325,
        }
    }
}

impl LocalPlannerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.samples_v < 2 || self.samples_omega < 2 {
            return Err("samples_v and samples_omega must be at least 2".into());
        }
        if self.w_path < 0.0 || self.w_goal < 0.0 || self.w_obs < 0.0 {
            return Err("scoring weights must be non-negative".into());
        }
        if !(self.sim_time > 0.0) || !(self.sim_granularity > 0.0) || !(self.control_period > 0.0) {
            return Err("sim_time, sim_granularity and control_period must be positive".into());
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        ((self.sim_time / self.sim_granularity) + 1e-9).floor() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityWindow {
    pub v: (f64, f64),
    pub omega: (f64, f64),
}

impl VelocityWindow {
    pub fn contains(&self, other: &VelocityWindow) -> bool {
        self.v.0 <= other.v.0 && other.v.1 <= self.v.1 && self.omega.0 <= other.omega.0 && other.omega.1 <= self.omega.1
    }
}

fn interval(center: f64, reach: f64, lo: f64, hi: f64) -> (f64, f64) {
    let c = center.clamp(lo, hi);
    ((c - reach).max(lo), (c + reach).min(hi))
}

/// Velocities reachable from `current` over the mode's acceleration horizon.
pub fn velocity_window(current: VelocityCommand, limits: &KinodynamicLimits, mode: PlannerMode, cfg: &LocalPlannerConfig) -> VelocityWindow {
    let horizon = match mode {
        PlannerMode::Dwa => cfg.control_period,
        PlannerMode::TrajectoryRollout => cfg.sim_time,
    };
    VelocityWindow {
        v: interval(current.v, limits.accel_v * horizon, limits.v_min, limits.v_max),
        omega: interval(current.omega, limits.accel_omega * horizon, -limits.omega_max, limits.omega_max),
    }
}

/// `n` evenly spaced values over `[lo, hi]`, endpoints included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 || lo == hi {
        return vec![lo];
    }
    (0..n).map(|k| if k + 1 == n { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 }).collect()
}

/// Uniform `nv`×`nw` grid over a window, ordered v-major.
pub fn sample_grid(window: &VelocityWindow, nv: usize, nw: usize) -> Vec<VelocityCommand> {
    let vs = linspace(window.v.0, window.v.1, nv);
    let ws = linspace(window.omega.0, window.omega.1, nw);
    vs.iter().flat_map(|v| ws.iter().map(move |w| VelocityCommand::new(*v, *w))).collect()
}

/// Command set for one cycle. Rollout samples its full grid; DWA takes the
/// points of that same grid lying inside its narrower window.
pub fn sample_commands(current: VelocityCommand, limits: &KinodynamicLimits, cfg: &LocalPlannerConfig) -> Vec<VelocityCommand> {
    let roll = velocity_window(current, limits, PlannerMode::TrajectoryRollout, cfg);
    let vs = linspace(roll.v.0, roll.v.1, cfg.samples_v);
    let ws = linspace(roll.omega.0, roll.omega.1, cfg.samples_omega);
    let (vs, ws) = match cfg.mode {
        PlannerMode::TrajectoryRollout => (vs, ws),
        PlannerMode::Dwa => {
            let win = velocity_window(current, limits, PlannerMode::Dwa, cfg);
            (restrict(&vs, win.v), restrict(&ws, win.omega))
        }
    };
    let mut out: Vec<VelocityCommand> = vs.iter().flat_map(|v| ws.iter().map(move |w| VelocityCommand::new(*v, *w))).collect();
    if !vs.contains(&0.0) {
        out.extend(ws.iter().filter(|w| **w != 0.0).map(|w| VelocityCommand::new(0.0, *w)));
    }
    out
}

fn restrict(grid: &[f64], (lo, hi): (f64, f64)) -> Vec<f64> {
    let inside: Vec<f64> = grid.iter().copied().filter(|x| *x >= lo && *x <= hi).collect();
    if inside.is_empty() {
        vec![0.5 * (lo + hi)]
    } else {
        inside
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub command: VelocityCommand,
    pub poses: Vec<Pose2D>,
    pub path_dist: f64,
    pub goal_dist: f64,
    pub obstacle_cost: f64,
    pub speed_term: f64,
    pub total: f64,
    pub illegal: bool,
}

/// Constant-command forward simulation; `steps` poses after `start`.
pub fn forward_simulate(start: &Pose2D, cmd: VelocityCommand, steps: usize, granularity: f64) -> Vec<Pose2D> {
    (1..=steps).map(|k| start.integrate_arc(cmd.v, cmd.omega, k as f64 * granularity)).collect()
}

pub fn generate_trajectories(commands: &[VelocityCommand], start: &Pose2D, cfg: &LocalPlannerConfig) -> Vec<Trajectory> {
    let steps = cfg.steps();
    commands
        .iter()
        .map(|c| Trajectory {
            command: *c,
            poses: forward_simulate(start, *c, steps, cfg.sim_granularity),
            path_dist: 0.0,
            goal_dist: 0.0,
            obstacle_cost: 0.0,
            speed_term: c.v.abs(),
            total: 0.0,
            illegal: false,
        })
        .collect()
}

/// Path poses from the one nearest `pose` up to where the path first leaves
/// the costmap.
pub fn local_segment(path: &Path, pose: &Pose2D, cm: &Costmap) -> Vec<Pose2D> {
    let nearest = path
        .poses
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.distance(pose).total_cmp(&b.1.distance(pose)))
        .map_or(0, |(k, _)| k);
    path.poses[nearest..]
        .iter()
        .take_while(|p| cm.info.contains_world(p.x, p.y))
        .copied()
        .collect()
}

/// Distance assigned to cells the wavefront cannot reach, metres.
pub const UNREACHABLE: f64 = 1.0e3;

/// Grid distances (metres) to the global path and to the local goal.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringMaps {
    pub path_dist: Vec<f64>,
    pub goal_dist: Vec<f64>,
    pub local_goal: Option<Pose2D>,
}

impl ScoringMaps {
    /// Seeds from `segment`, the part of the global path the robot is on.
    /// The goal wavefront skips inscribed cells unless `through_inscribed`;
    /// the path wavefront always crosses them since it is read ahead of the
    /// trajectory end.
    pub fn new(cm: &Costmap, segment: &[Pose2D], through_inscribed: bool) -> Self {
        let info = cm.info;
        let mut seeds = Vec::new();
        let mut local_goal = None;
        for p in segment {
            if let Some((i, j)) = info.world_to_cell(p.x, p.y) {
                seeds.push(info.index(i, j));
                local_goal = Some(*p);
            }
        }
        let goal_seed: Vec<usize> = local_goal
            .and_then(|g| info.world_to_cell(g.x, g.y))
            .map(|(i, j)| vec![info.index(i, j)])
            .unwrap_or_default();
        Self {
            path_dist: distance_map(cm, &seeds, true),
            goal_dist: distance_map(cm, &goal_seed, through_inscribed),
            local_goal,
        }
    }

    fn lookup(map: &[f64], cm: &Costmap, (x, y): (f64, f64)) -> f64 {
        cm.info.world_to_cell(x, y).map_or(UNREACHABLE, |(i, j)| map[cm.info.index(i, j)])
    }

    /// Point at which the path distance of a trajectory ending at `end` is read.
    pub fn score_point(&self, end: &Pose2D, lookahead: f64) -> (f64, f64) {
        let reach = self.local_goal.map_or(lookahead, |g| lookahead.min(end.distance(&g)));
        (end.x + reach * end.theta.cos(), end.y + reach * end.theta.sin())
    }
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// 8-connected wavefront distance from `seeds` through non-lethal cells,
/// and through inscribed ones only when `through_inscribed`.
pub fn distance_map(cm: &Costmap, seeds: &[usize], through_inscribed: bool) -> Vec<f64> {
    let passable = |c: u8| c != LETHAL && (through_inscribed || c != INSCRIBED);
    let info = cm.info;
    let mut dist = vec![UNREACHABLE; info.len()];
    let mut heap = BinaryHeap::new();
    for &s in seeds {
        dist[s] = 0.0;
        heap.push(Entry(0.0, s));
    }
    let res = info.resolution;
    let diag = res * std::f64::consts::SQRT_2;
    while let Some(Entry(d, idx)) = heap.pop() {
        if d > dist[idx] {
            continue;
        }
        let (i, j) = info.coords(idx);
        for (di, dj) in NEIGHBORS {
            let (ni, nj) = (i as i64 + di, j as i64 + dj);
            if !info.in_bounds(ni, nj) {
                continue;
            }
            let n = info.index(ni as usize, nj as usize);
            if !passable(cm.cost[n]) {
                continue;
            }
            let cand = d + if di != 0 && dj != 0 { diag } else { res };
            if cand < dist[n] {
                dist[n] = cand;
                heap.push(Entry(cand, n));
            }
        }
    }
    dist
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum LocalPlanError {
    #[error("every sampled trajectory collides")]
    NoValidCommand,
}

/// Marks illegal trajectories and fills in every score.
pub fn score_trajectories(trajs: &mut [Trajectory], maps: &ScoringMaps, cm: &Costmap, fp: &Footprint, cfg: &LocalPlannerConfig, check: &CollisionCheck) {
    for t in trajs.iter_mut() {
        let mut worst = 0u8;
        for p in &t.poses {
            match check.cost(cm, p, fp) {
                FootprintCost::Collision => {
                    t.illegal = true;
                    break;
                }
                FootprintCost::Cost(c) => worst = worst.max(c),
            }
        }
        let end = t.poses.last().copied().unwrap_or_default();
        t.obstacle_cost = worst as f64;
        let at = maps.score_point(&end, cfg.heading_lookahead);
        t.path_dist = ScoringMaps::lookup(&maps.path_dist, cm, at);
        t.goal_dist = ScoringMaps::lookup(&maps.goal_dist, cm, (end.x, end.y));
        t.total = cfg.w_path * t.path_dist + cfg.w_goal * t.goal_dist + cfg.w_obs * t.obstacle_cost;
    }
}

/// Preference order between two legal trajectories: lower total, then higher
/// |v|, then smaller |ω|. Earlier index wins remaining ties.
pub fn better(a: &Trajectory, b: &Trajectory) -> bool {
    match a.total.total_cmp(&b.total) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => match b.command.v.abs().total_cmp(&a.command.v.abs()) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => a.command.omega.abs() < b.command.omega.abs(),
        },
    }
}

/// Index of the best legal trajectory. The null command is never a
/// candidate: holding still is what the executive does when nothing is legal.
pub fn select(trajs: &[Trajectory]) -> Result<usize, LocalPlanError> {
    let mut best: Option<usize> = None;
    for (k, t) in trajs.iter().enumerate() {
        if t.illegal || t.command.is_zero() {
            continue;
        }
        if best.is_none_or(|b| better(t, &trajs[b])) {
            best = Some(k);
        }
    }
    best.ok_or(LocalPlanError::NoValidCommand)
}

pub fn score_and_select(
    trajs: &mut [Trajectory],
    maps: &ScoringMaps,
    cm: &Costmap,
    fp: &Footprint,
    cfg: &LocalPlannerConfig,
    check: &CollisionCheck,
) -> Result<VelocityCommand, LocalPlanError> {
    score_trajectories(trajs, maps, cm, fp, cfg, check);
    select(trajs).map(|k| trajs[k].command)
}

pub fn goal_reached(pose: &Pose2D, goal: &Pose2D, cfg: &LocalPlannerConfig) -> bool {
    within_xy(pose, goal, cfg) && angle_diff(goal.theta, pose.theta).abs() <= cfg.goal_yaw_tolerance
}

pub fn within_xy(pose: &Pose2D, goal: &Pose2D, cfg: &LocalPlannerConfig) -> bool {
    pose.distance(goal) <= cfg.goal_xy_tolerance
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleKind {
    Sampling,
    RotateToGoal,
    GoalReached,
}

/// Collision rule for one cycle. A robot whose centre is free but which
/// already overlaps lethal cells or sits in the inscribed band is escaping: the lethal cells under its
/// starting footprint are ignored and the centre may stay inscribed, so
/// turning in place and backing away remain legal while moving deeper is not.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollisionCheck {
    pub policy: CollisionPolicy,
    pub ignore: Vec<usize>,
}

impl CollisionCheck {
    pub fn at(cm: &Costmap, pose: &Pose2D, fp: &Footprint) -> Self {
        // A centre inside an obstacle has nothing to escape to.
        let ignore = match cm.cost_at(pose.x, pose.y) {
            Some(LETHAL) => Vec::new(),
            _ => cm.lethal_under(pose, fp),
        };
        let escape = !ignore.is_empty() || cm.cost_at(pose.x, pose.y) == Some(INSCRIBED);
        Self {
            policy: CollisionPolicy {
                inscribed_center_collides: !escape,
                ..CollisionPolicy::LOCAL
            },
            ignore,
        }
    }

    pub fn escaping(&self) -> bool {
        !self.policy.inscribed_center_collides
    }

    pub fn cost(&self, cm: &Costmap, pose: &Pose2D, fp: &Footprint) -> FootprintCost {
        cm.footprint_cost_ignoring(pose, fp, self.policy, &self.ignore)
    }
}

/// Everything a cycle looked at and decided.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub kind: CycleKind,
    pub pose: Pose2D,
    pub velocity: VelocityCommand,
    pub trajectories: Vec<Trajectory>,
    pub selected: Option<usize>,
    pub command: Option<VelocityCommand>,
    pub escape: bool,
    pub segment: Vec<Pose2D>,
    pub elapsed_us: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalPlanner {
    pub config: LocalPlannerConfig,
    pub limits: KinodynamicLimits,
    pub footprint: Footprint,
}

impl LocalPlanner {
    pub fn new(config: LocalPlannerConfig, limits: KinodynamicLimits, footprint: Footprint) -> Self {
        Self { config, limits, footprint }
    }

    pub fn compute(&self, pose: &Pose2D, velocity: VelocityCommand, path: &Path, goal: &Pose2D, cm: &Costmap) -> (Result<VelocityCommand, LocalPlanError>, CycleRecord) {
        let t0 = Instant::now();
        let cfg = &self.config;
        let mut record = CycleRecord {
            kind: CycleKind::Sampling,
            pose: *pose,
            velocity,
            trajectories: Vec::new(),
            selected: None,
            command: None,
            escape: false,
            segment: Vec::new(),
            elapsed_us: 0,
        };
        if goal_reached(pose, goal, cfg) {
            record.kind = CycleKind::GoalReached;
            record.command = Some(VelocityCommand::ZERO);
            return (Ok(VelocityCommand::ZERO), record);
        }
        if within_xy(pose, goal, cfg) {
            record.kind = CycleKind::RotateToGoal;
            let cmd = self.rotate_toward(pose, goal.theta);
            record.command = Some(cmd);
            record.elapsed_us = t0.elapsed().as_micros() as u64;
            return (Ok(cmd), record);
        }
        let check = CollisionCheck::at(cm, pose, &self.footprint);
        record.escape = check.escaping();
        let commands = sample_commands(velocity, &self.limits, cfg);
        let mut trajs = generate_trajectories(&commands, pose, cfg);
        let segment = local_segment(path, pose, cm);
        let maps = ScoringMaps::new(cm, &segment, check.escaping());
        score_trajectories(&mut trajs, &maps, cm, &self.footprint, cfg, &check);
        let sel = select(&trajs);
        record.selected = sel.ok();
        record.command = sel.ok().map(|k| trajs[k].command);
        let out = sel.map(|k| trajs[k].command);
        record.trajectories = trajs;
        record.segment = segment;
        record.elapsed_us = t0.elapsed().as_micros() as u64;
        (out, record)
    }

    /// In-place turn toward `heading`.
    pub fn rotate_toward(&self, pose: &Pose2D, heading: f64) -> VelocityCommand {
        let err = angle_diff(heading, pose.theta);
        let period = self.config.control_period;
        // Rate that would close the error in one period, capped by the limit
        // and by what can still be braked to zero at the target.
        let brake = (2.0 * self.limits.accel_omega * err.abs()).sqrt();
        let rate = (err.abs() / period).min(self.limits.omega_max).min(brake);
        VelocityCommand::new(0.0, rate.copysign(err))
    }
}
