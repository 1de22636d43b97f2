//! Scenario files: world geometry, robot setup, goals and configuration.

use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmap::{CostmapCommon, GlobalCostmapConfig, LocalCostmapConfig};
use crate::executive::ExecutiveConfig;
use crate::geometry::{Footprint, KinodynamicLimits, Pose2D, VelocityCommand};
use crate::grid::{CellState, GridInfo, OccupancyGrid};
use crate::localization::MclConfig;
use crate::mapping::MappingConfig;
use crate::planner::global::GlobalPlannerConfig;
use crate::planner::local::LocalPlannerConfig;
use crate::sim::{BatteryState, LidarConfig, OdometryNoise, UltrasonicConfig, World, DEFAULT_DT};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Rect { min: [f64; 2], max: [f64; 2] },
    Segment { from: [f64; 2], to: [f64; 2], thickness: f64 },
    Circle { center: [f64; 2], radius: f64 },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    #[serde(flatten)]
    pub shape: Shape,
    /// False for obstacles below the lidar plane.
    #[serde(default = "yes")]
    pub lidar_visible: bool,
}

impl Obstacle {
    fn paint(&self, grid: &mut OccupancyGrid) {
        match &self.shape {
            Shape::Rect { min, max } => grid.fill_rect(min[0], min[1], max[0], max[1], CellState::Occupied),
            Shape::Segment { from, to, thickness } => {
                grid.fill_segment((from[0], from[1]), (to[0], to[1]), *thickness, CellState::Occupied)
            }
            Shape::Circle { center, radius } => grid.fill_segment((center[0], center[1]), (center[0], center[1]), 2.0 * radius, CellState::Occupied),
        }
    }
}

/// An obstacle that appears at a given sim time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldEvent {
    pub at: f64,
    pub obstacle: Obstacle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub resolution: f64,
    /// Extent in metres, starting at `origin`.
    pub size: [f64; 2],
    pub origin: [f64; 2],
    /// Wall thickness around the extent; 0 disables the border.
    pub border: f64,
    pub obstacles: Vec<Obstacle>,
    pub events: Vec<WorldEvent>,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            resolution: 0.05,
            size: [10.0, 10.0],
            origin: [0.0, 0.0],
            border: 0.1,
            obstacles: Vec::new(),
            events: Vec::new(),
        }
    }
}

impl WorldSpec {
    pub fn grid_info(&self) -> GridInfo {
        let w = (self.size[0] / self.resolution).round() as usize;
        let h = (self.size[1] / self.resolution).round() as usize;
        GridInfo::new(self.resolution, w, h, Pose2D::new(self.origin[0], self.origin[1], 0.0))
    }

    pub fn build(&self) -> World {
        let info = self.grid_info();
        let mut solid = OccupancyGrid::new(info, CellState::Free);
        if self.border > 0.0 {
            let (x0, y0) = (self.origin[0], self.origin[1]);
            let (x1, y1) = (x0 + self.size[0], y0 + self.size[1]);
            let b = self.border;
            solid.fill_rect(x0, y0, x1, y0 + b, CellState::Occupied);
            solid.fill_rect(x0, y1 - b, x1, y1, CellState::Occupied);
            solid.fill_rect(x0, y0, x0 + b, y1, CellState::Occupied);
            solid.fill_rect(x1 - b, y0, x1, y1, CellState::Occupied);
        }
        let mut lidar = solid.clone();
        for o in &self.obstacles {
            o.paint(&mut solid);
            if o.lidar_visible {
                o.paint(&mut lidar);
            }
        }
        World { solid, lidar }
    }
}

/// Adds an obstacle to a live world.
pub fn insert_obstacle(world: &mut World, obstacle: &Obstacle) {
    obstacle.paint(&mut world.solid);
    if obstacle.lidar_visible {
        obstacle.paint(&mut world.lidar);
    }
}

fn front_sonar() -> Vec<UltrasonicConfig> {
    vec![UltrasonicConfig {
        max_range: 0.6,
        ..UltrasonicConfig::default()
    }]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotSpec {
    pub start: Pose2D,
    pub footprint: Footprint,
    pub limits: KinodynamicLimits,
    pub lidar: LidarConfig,
    pub ultrasonics: Vec<UltrasonicConfig>,
    pub battery: BatteryState,
    pub odom_noise: OdometryNoise,
    pub dt: f64,
}

impl Default for RobotSpec {
    fn default() -> Self {
        Self {
            start: Pose2D::new(1.0, 1.0, 0.0),
            footprint: Footprint::default(),
            limits: KinodynamicLimits::default(),
            lidar: LidarConfig::default(),
            ultrasonics: front_sonar(),
            battery: BatteryState::default(),
            odom_noise: OdometryNoise::default(),
            dt: DEFAULT_DT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseSource {
    /// Particle filter on lidar scans.
    #[default]
    Mcl,
    /// Ground truth, for isolating planner behaviour.
    GroundTruth,
}

/// Tunable parameter groups, one per subsystem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NavConfig {
    pub costmap_common: CostmapCommon,
    pub global_costmap: GlobalCostmapConfig,
    pub local_costmap: LocalCostmapConfig,
    pub global_planner: GlobalPlannerConfig,
    pub local_planner: LocalPlannerConfig,
    pub executive: ExecutiveConfig,
    pub amcl: MclConfig,
    pub mapping: MappingConfig,
    pub pose_source: PoseSource,
    /// Initial pose uncertainty handed to the filter; `None` uses its defaults.
    pub initial_pose_std: Option<[f64; 3]>,
}

impl Default for NavConfig {
    fn default() -> Self {
        Self {
            costmap_common: CostmapCommon::default(),
            global_costmap: GlobalCostmapConfig::default(),
            local_costmap: LocalCostmapConfig::default(),
            global_planner: GlobalPlannerConfig::default(),
            local_planner: LocalPlannerConfig::default(),
            executive: ExecutiveConfig::default(),
            amcl: MclConfig::default(),
            mapping: MappingConfig::default(),
            pose_source: PoseSource::default(),
            initial_pose_std: Some([0.1, 0.1, 0.1]),
        }
    }
}

/// Operator joystick input held for a stretch of sim time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeleopSegment {
    pub at: f64,
    pub duration: f64,
    pub command: VelocityCommand,
    /// Message rate; the runtime applies at most one per control period.
    #[serde(default = "default_rate")]
    pub rate_hz: f64,
}

fn default_rate() -> f64 {
    20.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Finish {
    /// Every goal in order reaches SUCCEEDED.
    #[default]
    Goals,
    /// The robot reaches the dock under the low-battery policy.
    Docked,
    /// Runs until the time limit; success means no collisions.
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Expectation {
    pub success: bool,
    pub reason: Option<String>,
}

impl Default for Expectation {
    fn default() -> Self {
        Self { success: true, reason: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub world: WorldSpec,
    #[serde(default)]
    pub robot: RobotSpec,
    #[serde(default)]
    pub dock: Option<Pose2D>,
    #[serde(default)]
    pub goals: Vec<Pose2D>,
    #[serde(default)]
    pub teleop: Vec<TeleopSegment>,
    #[serde(default)]
    pub finish: Finish,
    #[serde(default = "default_time_limit")]
    pub time_limit: f64,
    #[serde(default)]
    pub expect: Expectation,
    #[serde(default)]
    pub config: NavConfig,
}

fn default_time_limit() -> f64 {
    120.0
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &FsPath) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        let w = &self.world;
        if !(w.resolution > 0.0) || !(w.size[0] > 0.0) || !(w.size[1] > 0.0) {
            return bad("world resolution and size must be positive".into());
        }
        if !(self.robot.dt > 0.0) {
            return bad("dt must be positive".into());
        }
        if !(self.time_limit > 0.0) {
            return bad("time_limit must be positive".into());
        }
        self.robot.footprint.validate().map_err(ScenarioError::Invalid)?;
        self.robot.limits.validate().map_err(ScenarioError::Invalid)?;
        self.config.costmap_common.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        self.config.local_planner.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        if !self.robot.start.is_finite() || self.goals.iter().any(|g| !g.is_finite()) {
            return bad("poses must be finite".into());
        }
        if self.finish == Finish::Docked && self.dock.is_none() {
            return bad("finish = docked needs a dock pose".into());
        }
        Ok(())
    }
}
