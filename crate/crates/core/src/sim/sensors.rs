//! Ray-cast lidar and ultrasonic range sensors.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::geometry::Pose2D;
use crate::grid::{raycast, OccupancyGrid};

/// Amount added to `range_max` to encode "no return".
pub const NO_RETURN_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarConfig {
    pub angle_min: f64,
    pub angle_max: f64,
    pub angle_increment: f64,
    pub range_min: f64,
    pub range_max: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        let inc = PI / 180.0;
        Self {
            angle_min: -PI,
            angle_max: PI - inc,
            angle_increment: inc,
            range_min: 0.15,
            range_max: 8.0,
        }
    }
}

impl LidarConfig {
    pub fn beam_count(&self) -> usize {
        ((self.angle_max - self.angle_min) / self.angle_increment + 1e-9).floor() as usize + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaserScan {
    pub angle_min: f64,
    pub angle_max: f64,
    pub angle_increment: f64,
    pub range_min: f64,
    pub range_max: f64,
    pub ranges: Vec<f64>,
    pub stamp: u64,
}

impl LaserScan {
    pub fn no_return_value(&self) -> f64 {
        self.range_max + NO_RETURN_MARGIN
    }

    pub fn is_no_return(&self, r: f64) -> bool {
        r > self.range_max
    }

    pub fn beam_angle(&self, k: usize) -> f64 {
        self.angle_min + k as f64 * self.angle_increment
    }

    /// `(body-frame angle, range)` of every beam that hit something.
    pub fn hits(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.ranges
            .iter()
            .enumerate()
            .filter(|(_, r)| !self.is_no_return(**r))
            .map(|(k, r)| (self.beam_angle(k), *r))
    }
}

/// Traces every beam to the first occupied cell. A sensor sitting inside an
/// occupied cell reports `range_min` on every beam.
pub fn cast_lidar(pose: &Pose2D, world: &OccupancyGrid, cfg: &LidarConfig, stamp: u64) -> LaserScan {
    let n = cfg.beam_count();
    let no_return = cfg.range_max + NO_RETURN_MARGIN;
    let ranges = (0..n)
        .map(|k| {
            let angle = pose.theta + cfg.angle_min + k as f64 * cfg.angle_increment;
            match raycast(&world.info, pose.x, pose.y, angle, cfg.range_max, |i, j| {
                world.is_occupied(i, j)
            }) {
                Some(r) => r.max(cfg.range_min),
                None => no_return,
            }
        })
        .collect();
    LaserScan {
        angle_min: cfg.angle_min,
        angle_max: cfg.angle_max,
        angle_increment: cfg.angle_increment,
        range_min: cfg.range_min,
        range_max: cfg.range_max,
        ranges,
        stamp,
    }
}

/// Number of rays fanned across an ultrasonic cone.
pub const ULTRASONIC_RAYS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UltrasonicConfig {
    pub field_of_view: f64,
    pub min_range: f64,
    pub max_range: f64,
    /// Sensor placement in the body frame.
    pub mount: Pose2D,
}

impl Default for UltrasonicConfig {
    fn default() -> Self {
        Self {
            field_of_view: 30f64.to_radians(),
            min_range: 0.02,
            max_range: 2.0,
            mount: Pose2D::new(0.2, 0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeReading {
    pub field_of_view: f64,
    pub min_range: f64,
    pub max_range: f64,
    pub range: f64,
    pub mount: Pose2D,
}

impl RangeReading {
    pub fn is_no_return(&self) -> bool {
        self.range > self.max_range
    }
}

/// Minimum hit distance over a fan of rays spanning the field of view.
pub fn cast_ultrasonic(pose: &Pose2D, world: &OccupancyGrid, sensor: &UltrasonicConfig) -> RangeReading {
    let origin = pose.compose(&sensor.mount);
    let mut best: Option<f64> = None;
    for k in 0..ULTRASONIC_RAYS {
        let frac = k as f64 / (ULTRASONIC_RAYS - 1) as f64 - 0.5;
        let angle = origin.theta + frac * sensor.field_of_view;
        if let Some(r) = raycast(&world.info, origin.x, origin.y, angle, sensor.max_range, |i, j| {
            world.is_occupied(i, j)
        }) {
            best = Some(best.map_or(r, |b: f64| b.min(r)));
        }
    }
    RangeReading {
        field_of_view: sensor.field_of_view,
        min_range: sensor.min_range,
        max_range: sensor.max_range,
        range: match best {
            Some(r) => r.max(sensor.min_range),
            None => sensor.max_range + NO_RETURN_MARGIN,
        },
        mount: sensor.mount,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{CellState, GridInfo};

    fn room() -> OccupancyGrid {
        OccupancyGrid::new(GridInfo::new(0.05, 200, 200, Pose2D::new(-5.0, -5.0, 0.0)), CellState::Free)
    }

    #[test]
    fn empty_world_has_no_returns() {
        let g = room();
        let scan = cast_lidar(&Pose2D::default(), &g, &LidarConfig::default(), 0);
        assert_eq!(scan.ranges.len(), 360);
        assert!(scan.ranges.iter().all(|r| scan.is_no_return(*r)));
        let us = cast_ultrasonic(&Pose2D::default(), &g, &UltrasonicConfig::default());
        assert!(us.is_no_return());
    }

    #[test]
    fn inside_obstacle_reports_range_min() {
        let mut g = room();
        g.fill_rect(-0.1, -0.1, 0.1, 0.1, CellState::Occupied);
        let cfg = LidarConfig::default();
        let scan = cast_lidar(&Pose2D::default(), &g, &cfg, 0);
        assert!(scan.ranges.iter().all(|r| *r == cfg.range_min));
    }

    #[test]
    fn beam_count_formula() {
        let cfg = LidarConfig {
            angle_min: -0.5,
            angle_max: 0.5,
            angle_increment: 0.25,
            ..Default::default()
        };
        assert_eq!(cfg.beam_count(), 5);
    }
}
