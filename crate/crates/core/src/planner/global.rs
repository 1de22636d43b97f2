//! Dijkstra potential field over the global costmap with gradient-descent
//! path extraction on the bilinearly interpolated potential.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmap::{CollisionPolicy, Costmap, INSCRIBED, LETHAL, MAX_NON_OBSTACLE};
use crate::geometry::{Footprint, Pose2D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlobalPlannerConfig {
    pub cost_factor: f64,
    /// Radius within which an obstructed goal is moved to a traversable cell.
    pub goal_tolerance: f64,
}

impl Default for GlobalPlannerConfig {
    fn default() -> Self {
        Self {
            cost_factor: 0.8,
            goal_tolerance: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum PlanError {
    #[error("start pose is outside the map")]
    StartOutOfBounds,
    #[error("goal pose is outside the map")]
    GoalOutOfBounds,
    #[error("start pose is inside an obstacle")]
    StartInCollision,
    #[error("goal is inside an obstacle with no free cell nearby")]
    GoalInCollision,
    #[error("no path connects start and goal")]
    NoPathFound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub poses: Vec<Pose2D>,
    /// Interpolated potential at each pose; strictly decreasing, 0 at the goal.
    pub potentials: Vec<f64>,
    /// Potential of the start cell.
    pub cost: f64,
}

impl Path {
    pub fn length(&self) -> f64 {
        self.poses.windows(2).map(|w| w[0].distance(&w[1])).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    pub width: usize,
    pub height: usize,
    /// Per-cell potential, `f64::INFINITY` where unreached.
    pub potential: Vec<f64>,
}

impl PotentialField {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.potential[j * self.width + i]
    }
}

pub fn is_traversable(cost: u8) -> bool {
    cost < INSCRIBED
}

pub fn edge_weight(step: f64, cell_cost: u8, cost_factor: f64) -> f64 {
    step * (1.0 + cost_factor * cell_cost as f64 / MAX_NON_OBSTACLE as f64)
}

pub const NEIGHBORS: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

#[derive(PartialEq)]
struct Node(f64, usize);

impl Eq for Node {}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra from `goal`; a cell is entered when `passable` holds for it.
/// Entering a cell costs `edge_weight` of that cell.
pub fn compute_potential(
    cm: &Costmap,
    goal: (usize, usize),
    cost_factor: f64,
    passable: impl Fn(usize) -> bool,
) -> PotentialField {
    let info = cm.info;
    let (w, h) = (info.width, info.height);
    let mut pot = vec![f64::INFINITY; w * h];
    let res = info.resolution;
    let diag = res * std::f64::consts::SQRT_2;
    let g = info.index(goal.0, goal.1);
    pot[g] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Node(0.0, g));
    while let Some(Node(p, idx)) = heap.pop() {
        if p > pot[idx] {
            continue;
        }
        let (i, j) = info.coords(idx);
        for (di, dj) in NEIGHBORS {
            let (ni, nj) = (i as i64 + di, j as i64 + dj);
            if !info.in_bounds(ni, nj) {
                continue;
            }
            let n = info.index(ni as usize, nj as usize);
            if !passable(n) {
                continue;
            }
            let step = if di != 0 && dj != 0 { diag } else { res };
            let cand = p + edge_weight(step, cm.cost[n], cost_factor);
            if cand < pot[n] {
                pot[n] = cand;
                heap.push(Node(cand, n));
            }
        }
    }
    PotentialField {
        width: w,
        height: h,
        potential: pot,
    }
}

/// Plans on the default configuration.
pub fn plan(cm: &Costmap, start: &Pose2D, goal: &Pose2D, fp: &Footprint) -> Result<Path, PlanError> {
    plan_with(cm, start, goal, fp, &GlobalPlannerConfig::default()).map(|(p, _)| p)
}

pub fn plan_with(
    cm: &Costmap,
    start: &Pose2D,
    goal: &Pose2D,
    fp: &Footprint,
    cfg: &GlobalPlannerConfig,
) -> Result<(Path, PotentialField), PlanError> {
    let info = cm.info;
    let start_cell = info.world_to_cell(start.x, start.y).ok_or(PlanError::StartOutOfBounds)?;
    let goal_raw = info.world_to_cell(goal.x, goal.y).ok_or(PlanError::GoalOutOfBounds)?;
    let start_idx = info.index(start_cell.0, start_cell.1);
    if cm.cost[start_idx] >= LETHAL {
        return Err(PlanError::StartInCollision);
    }
    let (goal_cell, goal_xy) = snap_goal(cm, goal, goal_raw, cfg.goal_tolerance).ok_or(PlanError::GoalInCollision)?;

    // A start inside the inscribed band may leave through inscribed cells.
    let escape = escape_region(cm, start_cell);
    let passable = |n: usize| is_traversable(cm.cost[n]) || escape.as_ref().is_some_and(|e| e[n]);
    let field = compute_potential(cm, goal_cell, cfg.cost_factor, passable);
    let cost = field.potential[start_idx];
    if !cost.is_finite() {
        return Err(PlanError::NoPathFound);
    }
    let goal_pose = Pose2D::new(goal_xy.0, goal_xy.1, goal.theta);
    if start_cell == goal_cell {
        let path = Path {
            poses: vec![Pose2D::new(start.x, start.y, goal.theta)],
            potentials: vec![0.0],
            cost: 0.0,
        };
        return Ok((path, field));
    }
    let path = extract(cm, &field, start, goal_cell, goal_pose, fp, escape.as_deref(), cost)?;
    Ok((path, field))
}

fn snap_goal(cm: &Costmap, goal: &Pose2D, raw: (usize, usize), tolerance: f64) -> Option<((usize, usize), (f64, f64))> {
    if is_traversable(cm.get(raw.0, raw.1)) {
        return Some((raw, (goal.x, goal.y)));
    }
    let info = cm.info;
    let span = (tolerance / info.resolution).ceil() as i64 + 1;
    let mut best: Option<(f64, (usize, usize))> = None;
    for dj in -span..=span {
        for di in -span..=span {
            let (i, j) = (raw.0 as i64 + di, raw.1 as i64 + dj);
            if !info.in_bounds(i, j) || !is_traversable(cm.get(i as usize, j as usize)) {
                continue;
            }
            let (cx, cy) = info.cell_center(i as usize, j as usize);
            let d = (cx - goal.x).hypot(cy - goal.y);
            if d <= tolerance && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, (i as usize, j as usize)));
            }
        }
    }
    best.map(|(_, c)| (c, info.cell_center(c.0, c.1)))
}

fn escape_region(cm: &Costmap, start: (usize, usize)) -> Option<Vec<bool>> {
    let info = cm.info;
    if cm.get(start.0, start.1) != INSCRIBED {
        return None;
    }
    let mut region = vec![false; info.len()];
    let s = info.index(start.0, start.1);
    region[s] = true;
    let mut queue = VecDeque::from([s]);
    while let Some(idx) = queue.pop_front() {
        let (i, j) = info.coords(idx);
        for (di, dj) in NEIGHBORS {
            let (ni, nj) = (i as i64 + di, j as i64 + dj);
            if !info.in_bounds(ni, nj) {
                continue;
            }
            let n = info.index(ni as usize, nj as usize);
            if !region[n] && cm.cost[n] == INSCRIBED {
                region[n] = true;
                queue.push_back(n);
            }
        }
    }
    Some(region)
}

/// Bilinear interpolation of the potential with unreached cells replaced by
/// a large finite ceiling.
struct Interp<'a> {
    cm: &'a Costmap,
    field: &'a PotentialField,
    ceiling: f64,
}

impl Interp<'_> {
    fn cell(&self, i: i64, j: i64) -> f64 {
        let i = i.clamp(0, self.field.width as i64 - 1) as usize;
        let j = j.clamp(0, self.field.height as i64 - 1) as usize;
        let p = self.field.get(i, j);
        if p.is_finite() {
            p
        } else {
            self.ceiling
        }
    }

    /// Value and gradient (per cell) at a world point.
    fn eval(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let (gx, gy) = self.cm.info.world_to_grid(x, y);
        let (u, v) = (gx - 0.5, gy - 0.5);
        let (i0, j0) = (u.floor() as i64, v.floor() as i64);
        let (fu, fv) = (u - i0 as f64, v - j0 as f64);
        let p00 = self.cell(i0, j0);
        let p10 = self.cell(i0 + 1, j0);
        let p01 = self.cell(i0, j0 + 1);
        let p11 = self.cell(i0 + 1, j0 + 1);
        let val = p00 * (1.0 - fu) * (1.0 - fv) + p10 * fu * (1.0 - fv) + p01 * (1.0 - fu) * fv + p11 * fu * fv;
        let du = (p10 - p00) * (1.0 - fv) + (p11 - p01) * fv;
        let dv = (p01 - p00) * (1.0 - fu) + (p11 - p10) * fu;
        (val, du, dv)
    }
}

#[allow(clippy::too_many_arguments)]
fn extract(
    cm: &Costmap,
    field: &PotentialField,
    start: &Pose2D,
    goal_cell: (usize, usize),
    goal_pose: Pose2D,
    fp: &Footprint,
    escape: Option<&[bool]>,
    start_cost: f64,
) -> Result<Path, PlanError> {
    let info = cm.info;
    let max_finite = field.potential.iter().copied().filter(|p| p.is_finite()).fold(0.0, f64::max);
    let interp = Interp {
        cm,
        field,
        ceiling: max_finite + 1e3 * info.resolution * (info.width + info.height) as f64,
    };
    let pose_ok = |x: f64, y: f64| -> bool {
        let Some((i, j)) = info.world_to_cell(x, y) else {
            return false;
        };
        let idx = info.index(i, j);
        if !field.potential[idx].is_finite() {
            return false;
        }
        // Inside the escape region only the centre cell is checked.
        if escape.is_some_and(|e| e[idx]) {
            return true;
        }
        !cm.footprint_cost(&Pose2D::new(x, y, 0.0), fp, CollisionPolicy::GLOBAL).is_collision()
    };

    let mut pts = vec![(start.x, start.y)];
    let mut pots = vec![interp.eval(start.x, start.y).0];
    let max_iter = 4 * info.len() + 16;
    for _ in 0..max_iter {
        let &(x, y) = pts.last().unwrap();
        let cur_val = *pots.last().unwrap();
        let cell = info.world_to_cell(x, y).ok_or(PlanError::NoPathFound)?;
        if cell == goal_cell {
            if (x, y) == (goal_pose.x, goal_pose.y) {
                *pots.last_mut().unwrap() = 0.0;
            } else {
                pts.push((goal_pose.x, goal_pose.y));
                pots.push(0.0);
            }
            return Ok(finish(pts, pots, start, &goal_pose, start_cost));
        }
        let (_, du, dv) = interp.eval(x, y);
        let norm = du.hypot(dv);
        let mut next = None;
        if norm > 0.0 && norm.is_finite() {
            // Gradient is per cell; convert the descent direction to world axes.
            let (s, c) = info.origin.theta.sin_cos();
            let (gx, gy) = (-du / norm, -dv / norm);
            let (dx, dy) = (c * gx - s * gy, s * gx + c * gy);
            for frac in [1.0, 0.5, 0.25] {
                let h = frac * info.resolution;
                let (nx, ny) = (x + h * dx, y + h * dy);
                let val = interp.eval(nx, ny).0;
                if val < cur_val && pose_ok(nx, ny) {
                    next = Some((nx, ny, val));
                    break;
                }
            }
        }
        if next.is_none() {
            next = fallback(&interp, field, cell, cur_val, &pose_ok);
        }
        let (nx, ny, val) = next.ok_or(PlanError::NoPathFound)?;
        pts.push((nx, ny));
        pots.push(val);
    }
    Err(PlanError::NoPathFound)
}

/// Moves to the lowest-potential neighbouring cell centre that still lowers
/// the interpolated potential.
fn fallback(
    interp: &Interp,
    field: &PotentialField,
    cell: (usize, usize),
    cur_val: f64,
    pose_ok: &impl Fn(f64, f64) -> bool,
) -> Option<(f64, f64, f64)> {
    let info = interp.cm.info;
    let mut best: Option<(f64, f64, f64)> = None;
    for dj in -1..=1 {
        for di in -1..=1 {
            let (i, j) = (cell.0 as i64 + di, cell.1 as i64 + dj);
            if !info.in_bounds(i, j) {
                continue;
            }
            let p = field.get(i as usize, j as usize);
            if !p.is_finite() {
                continue;
            }
            let (cx, cy) = info.cell_center(i as usize, j as usize);
            let val = interp.eval(cx, cy).0;
            if val < cur_val && best.is_none_or(|b| val < b.2) && pose_ok(cx, cy) {
                best = Some((cx, cy, val));
            }
        }
    }
    best
}

fn finish(pts: Vec<(f64, f64)>, pots: Vec<f64>, start: &Pose2D, goal: &Pose2D, cost: f64) -> Path {
    let n = pts.len();
    let mut poses = Vec::with_capacity(n);
    for k in 0..n {
        let theta = if k + 1 == n {
            goal.theta
        } else {
            let (a, b) = (pts[k], pts[k + 1]);
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            if dx == 0.0 && dy == 0.0 {
                start.theta
            } else {
                dy.atan2(dx)
            }
        };
        poses.push(Pose2D::new(pts[k].0, pts[k].1, theta));
    }
    Path {
        poses,
        potentials: pots,
        cost,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmap::{InflationParams, FREE_SPACE};
    use crate::grid::GridInfo;

    fn open(n: usize) -> Costmap {
        Costmap::new(GridInfo::new(0.05, n, n, Pose2D::default()), FREE_SPACE, InflationParams::default())
    }

    fn fp() -> Footprint {
        Footprint::Circle { radius: 0.04 }
    }

    #[test]
    fn start_equals_goal() {
        let cm = open(10);
        let p = Pose2D::new(0.225, 0.225, 0.0);
        let path = plan(&cm, &p, &p, &fp()).unwrap();
        assert_eq!(path.poses.len(), 1);
        assert_eq!(path.cost, 0.0);
    }

    #[test]
    fn open_grid_diagonal() {
        let cm = open(10);
        let (sx, sy) = cm.info.cell_center(1, 1);
        let (gx, gy) = cm.info.cell_center(8, 8);
        let path = plan(&cm, &Pose2D::new(sx, sy, 0.0), &Pose2D::new(gx, gy, 0.0), &fp()).unwrap();
        let euclid = 7.0 * 0.05 * std::f64::consts::SQRT_2;
        assert!((path.cost - euclid).abs() < 1e-12);
        assert!((path.length() - euclid).abs() / euclid < 0.05);
        assert!(path.potentials.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(*path.potentials.last().unwrap(), 0.0);
    }

    #[test]
    fn goal_in_collision_and_snap() {
        let mut cm = open(40);
        for j in 0..40 {
            for i in 20..40 {
                cm.set(i, j, LETHAL);
            }
        }
        let start = Pose2D::new(0.3, 1.0, 0.0);
        assert_eq!(plan(&cm, &start, &Pose2D::new(1.8, 1.0, 0.0), &fp()), Err(PlanError::GoalInCollision));
        let path = plan(&cm, &start, &Pose2D::new(1.05, 1.0, 0.0), &fp()).unwrap();
        let last = path.poses.last().unwrap();
        assert!(last.x < 1.0 && (last.x - 1.05).abs() <= 0.25);
    }

    #[test]
    fn disconnected_is_no_path() {
        let mut cm = open(40);
        for j in 0..40 {
            cm.set(20, j, LETHAL);
        }
        let r = plan(&cm, &Pose2D::new(0.3, 1.0, 0.0), &Pose2D::new(1.7, 1.0, 0.0), &fp());
        assert_eq!(r, Err(PlanError::NoPathFound));
    }

    #[test]
    fn escapes_from_inscribed_start() {
        let mut cm = open(60);
        cm.set(30, 30, LETHAL);
        cm.inflation.inscribed_radius = 0.2;
        cm.inflate();
        let (x, y) = cm.info.cell_center(32, 30);
        assert_eq!(cm.cost_at(x, y), Some(INSCRIBED));
        let path = plan(&cm, &Pose2D::new(x, y, 0.0), &Pose2D::new(2.5, 1.5, 0.0), &Footprint::Circle { radius: 0.2 }).unwrap();
        assert!(path.potentials.windows(2).all(|w| w[1] < w[0]));
    }
}
