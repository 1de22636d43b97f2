use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{Costmap, FREE_SPACE, LETHAL};
use crate::geometry::{angle_diff, Pose2D};
use crate::grid::bresenham;
use crate::sim::{LaserScan, RangeReading};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObstacleParams {
    pub obstacle_range: f64,
    pub raytrace_range: f64,
}

impl Default for ObstacleParams {
    fn default() -> Self {
        Self {
            obstacle_range: 2.5,
            raytrace_range: 3.0,
        }
    }
}

impl ObstacleParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.obstacle_range > 0.0) || !(self.raytrace_range >= self.obstacle_range) {
            return Err(format!(
                "need raytrace_range >= obstacle_range > 0, got {} / {}",
                self.raytrace_range, self.obstacle_range
            ));
        }
        Ok(())
    }
}

/// Collected per-update edits; marks are applied after clears.
#[derive(Default)]
struct Edits {
    mark: HashSet<usize>,
    clear: HashSet<usize>,
}

impl Edits {
    fn apply(self, cm: &mut Costmap) {
        for idx in &self.clear {
            cm.cost[*idx] = FREE_SPACE;
        }
        for idx in &self.mark {
            cm.cost[*idx] = LETHAL;
        }
    }
}

/// Walks the cells strictly after the sensor cell up to the cell holding
/// `(ex, ey)`. The final cell is reported separately.
fn trace(cm: &Costmap, from: (f64, f64), to: (f64, f64), mut visit: impl FnMut(usize, bool)) {
    let start = cm.info.world_to_cell_unchecked(from.0, from.1);
    let end = cm.info.world_to_cell_unchecked(to.0, to.1);
    let ray = bresenham(start, end);
    let last = ray.len() - 1;
    for (n, &(i, j)) in ray.iter().enumerate().skip(1) {
        if !cm.info.in_bounds(i, j) {
            break;
        }
        visit(cm.info.index(i as usize, j as usize), n == last);
    }
}

/// Lidar marking and raytrace clearing. The scan is in the robot frame with
/// the sensor at the robot origin.
pub fn apply_obstacles(cm: &mut Costmap, scan: &LaserScan, pose: &Pose2D, params: &ObstacleParams) {
    let mut edits = Edits::default();
    let nudge = cm.info.resolution * 1e-4;
    for (k, &r) in scan.ranges.iter().enumerate() {
        if !r.is_finite() || r < scan.range_min {
            continue;
        }
        let angle = pose.theta + scan.beam_angle(k);
        let (c, s) = (angle.cos(), angle.sin());
        let hit = !scan.is_no_return(r);
        let truncated = !hit || r > params.raytrace_range;
        let reach = if truncated { params.raytrace_range } else { r + nudge };
        let end = (pose.x + reach * c, pose.y + reach * s);
        trace(cm, (pose.x, pose.y), end, |idx, last| {
            if !last || truncated {
                edits.clear.insert(idx);
            }
        });
        if hit && r <= params.obstacle_range {
            let (ex, ey) = (pose.x + (r + nudge) * c, pose.y + (r + nudge) * s);
            if let Some((i, j)) = cm.info.world_to_cell(ex, ey) {
                edits.mark.insert(cm.info.index(i, j));
            }
        }
    }
    edits.apply(cm);
}

/// Ultrasonic cone update: the arc at the measured range is marked lethal,
/// the interior of the cone cleared. A no-return clears the whole cone.
pub fn apply_range_layer(cm: &mut Costmap, reading: &RangeReading, pose: &Pose2D) {
    if !reading.range.is_finite() || reading.range < reading.min_range {
        return;
    }
    let sensor = pose.compose(&reading.mount);
    let res = cm.info.resolution;
    let half = reading.field_of_view / 2.0;
    let hit = !reading.is_no_return();
    let clear_to = if hit { reading.range - res } else { reading.max_range };

    let mut edits = Edits::default();
    let reach = if hit { reading.range + res } else { reading.max_range };
    let (gi, gj) = cm.info.world_to_cell_unchecked(sensor.x, sensor.y);
    let span = (reach / res).ceil() as i64 + 1;
    for j in (gj - span)..=(gj + span) {
        for i in (gi - span)..=(gi + span) {
            if !cm.info.in_bounds(i, j) {
                continue;
            }
            let (cx, cy) = cm.info.cell_center(i as usize, j as usize);
            let (dx, dy) = (cx - sensor.x, cy - sensor.y);
            let d = dx.hypot(dy);
            if d > clear_to {
                continue;
            }
            if d > 0.0 && angle_diff(dy.atan2(dx), sensor.theta).abs() > half {
                continue;
            }
            edits.clear.insert(cm.info.index(i as usize, j as usize));
        }
    }
    if hit {
        let r = reading.range + res * 1e-4;
        let steps = ((reading.field_of_view * r) / (0.25 * res)).ceil().max(1.0) as usize;
        for k in 0..=steps {
            let a = sensor.theta - half + reading.field_of_view * k as f64 / steps as f64;
            if let Some((i, j)) = cm.info.world_to_cell(sensor.x + r * a.cos(), sensor.y + r * a.sin()) {
                edits.mark.insert(cm.info.index(i, j));
            }
        }
    }
    edits.apply(cm);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmap::{InflationParams, NO_INFORMATION};
    use crate::grid::GridInfo;

    fn blank() -> Costmap {
        Costmap::new(
            GridInfo::new(0.05, 100, 100, Pose2D::new(-2.5, -2.5, 0.0)),
            NO_INFORMATION,
            InflationParams::default(),
        )
    }

    fn scan(ranges: Vec<f64>) -> LaserScan {
        LaserScan {
            angle_min: 0.0,
            angle_max: 0.0,
            angle_increment: 1.0,
            range_min: 0.15,
            range_max: 8.0,
            ranges,
            stamp: 0,
        }
    }

    #[test]
    fn hit_at_one_metre() {
        let mut cm = blank();
        let pose = Pose2D::new(0.025, 0.025, 0.0);
        apply_obstacles(&mut cm, &scan(vec![1.0]), &pose, &ObstacleParams::default());
        assert_eq!(cm.count(LETHAL), 1);
        assert_eq!(cm.count(FREE_SPACE), 19);
        assert_eq!(cm.cost_at(1.025, 0.025), Some(LETHAL));
        assert_eq!(cm.cost_at(0.025, 0.025), Some(NO_INFORMATION));
    }

    #[test]
    fn beyond_obstacle_range_only_clears() {
        let mut cm = blank();
        let pose = Pose2D::new(0.025, 0.025, 0.0);
        let params = ObstacleParams {
            obstacle_range: 2.0,
            raytrace_range: 2.0,
        };
        apply_obstacles(&mut cm, &scan(vec![2.3]), &pose, &params);
        assert_eq!(cm.count(LETHAL), 0);
        assert_eq!(cm.count(FREE_SPACE), 40);
    }

    #[test]
    fn no_return_clears_to_raytrace_range() {
        let mut cm = blank();
        let pose = Pose2D::new(0.025, 0.025, 0.0);
        let params = ObstacleParams {
            obstacle_range: 1.0,
            raytrace_range: 1.5,
        };
        apply_obstacles(&mut cm, &scan(vec![8.001]), &pose, &params);
        assert_eq!(cm.count(LETHAL), 0);
        assert_eq!(cm.count(FREE_SPACE), 30);
    }

    #[test]
    fn marking_wins_over_clearing() {
        let mut cm = blank();
        let pose = Pose2D::new(0.025, 0.025, 0.0);
        // The second beam passes through the first beam's endpoint.
        let mut s = scan(vec![0.5, 1.0]);
        s.angle_increment = 0.0;
        apply_obstacles(&mut cm, &s, &pose, &ObstacleParams::default());
        assert_eq!(cm.cost_at(0.525, 0.025), Some(LETHAL));
    }

    fn reading(range: f64) -> RangeReading {
        RangeReading {
            field_of_view: 30f64.to_radians(),
            min_range: 0.02,
            max_range: 1.0,
            range,
            mount: Pose2D::default(),
        }
    }

    #[test]
    fn range_layer_examples() {
        let pose = Pose2D::new(0.025, 0.025, 0.0);
        let mut cm = blank();
        apply_range_layer(&mut cm, &reading(1.001), &pose);
        assert_eq!(cm.count(LETHAL), 0);
        assert!(cm.count(FREE_SPACE) > 50);
        assert_eq!(cm.cost_at(0.5, 0.0), Some(FREE_SPACE));
        assert_eq!(cm.cost_at(-0.5, 0.0), Some(NO_INFORMATION));

        let mut cm = blank();
        apply_range_layer(&mut cm, &reading(0.5), &pose);
        assert_eq!(cm.cost_at(0.55, 0.025), Some(LETHAL));
        assert_eq!(cm.cost_at(0.3, 0.025), Some(FREE_SPACE));

        let mut cm = blank();
        let before = cm.clone();
        apply_range_layer(&mut cm, &reading(0.01), &pose);
        assert_eq!(cm, before);
    }
}
