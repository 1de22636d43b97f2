//! Layered 2D costmaps: static, lidar obstacle, ultrasonic range and
//! inflation layers, in global (whole map) and rolling-window flavours.

mod inflation;
mod layered;
mod layers;

pub use inflation::{inflated_cost, inflate};
pub use layered::{CostmapCommon, GlobalCostmapConfig, LayerKind, LayeredCostmap, LocalCostmapConfig, LAYER_ORDER};
pub use layers::{apply_obstacles, apply_range_layer, ObstacleParams};

use serde::{Deserialize, Serialize};

use crate::geometry::{Footprint, Pose2D};
use crate::grid::{CellState, GridInfo, OccupancyGrid};

pub const FREE_SPACE: u8 = 0;
pub const MAX_NON_OBSTACLE: u8 = 252;
pub const INSCRIBED: u8 = 253;
pub const LETHAL: u8 = 254;
pub const NO_INFORMATION: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InflationParams {
    pub inflation_radius: f64,
    /// Exponential decay rate `w`, 1/m.
    pub cost_scaling: f64,
    pub inscribed_radius: f64,
}

impl Default for InflationParams {
    fn default() -> Self {
        Self {
            inflation_radius: 0.55,
            cost_scaling: 10.0,
            inscribed_radius: Footprint::default().inscribed_radius(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Costmap {
    pub info: GridInfo,
    pub cost: Vec<u8>,
    pub rolling: bool,
    pub inflation: InflationParams,
}

/// How unknown and inscribed cells count when rasterizing a footprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CollisionPolicy {
    pub unknown_is_lethal: bool,
    /// Treat an inscribed cell under the footprint centre as a collision.
    pub inscribed_center_collides: bool,
}

impl CollisionPolicy {
    pub const GLOBAL: CollisionPolicy = CollisionPolicy {
        unknown_is_lethal: true,
        inscribed_center_collides: true,
    };
    pub const LOCAL: CollisionPolicy = CollisionPolicy {
        unknown_is_lethal: false,
        inscribed_center_collides: true,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FootprintCost {
    Cost(u8),
    Collision,
}

impl FootprintCost {
    pub fn is_collision(&self) -> bool {
        matches!(self, FootprintCost::Collision)
    }
}

impl Costmap {
    pub fn new(info: GridInfo, fill: u8, inflation: InflationParams) -> Self {
        Self {
            cost: vec![fill; info.len()],
            info,
            rolling: false,
            inflation,
        }
    }

    /// Static-layer initialization from a finalized map.
    pub fn from_static(map: &OccupancyGrid, inflation: InflationParams) -> Self {
        Self {
            info: map.info,
            cost: map.cells.iter().map(|c| static_cost(*c)).collect(),
            rolling: false,
            inflation,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.cost[self.info.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, c: u8) {
        let idx = self.info.index(i, j);
        self.cost[idx] = c;
    }

    /// Cost at a world point, `None` off the grid.
    pub fn cost_at(&self, x: f64, y: f64) -> Option<u8> {
        self.info.world_to_cell(x, y).map(|(i, j)| self.get(i, j))
    }

    pub fn count(&self, c: u8) -> usize {
        self.cost.iter().filter(|v| **v == c).count()
    }

    /// Collision if any covered cell is lethal (or unknown under a strict
    /// policy) or the centre is inscribed; otherwise the centre-cell cost,
    /// raised to 252 when unknown space is covered.
    pub fn footprint_cost(&self, pose: &Pose2D, fp: &Footprint, policy: CollisionPolicy) -> FootprintCost {
        self.footprint_cost_ignoring(pose, fp, policy, &[])
    }

    /// As `footprint_cost`, but lethal cells listed in `ignore` (sorted cell
    /// indices) do not collide.
    pub fn footprint_cost_ignoring(&self, pose: &Pose2D, fp: &Footprint, policy: CollisionPolicy, ignore: &[usize]) -> FootprintCost {
        let center = self.cost_at(pose.x, pose.y).unwrap_or(NO_INFORMATION);
        if policy.inscribed_center_collides
            && (center == INSCRIBED || center == LETHAL || (center == NO_INFORMATION && policy.unknown_is_lethal))
        {
            return FootprintCost::Collision;
        }
        let mut worst = match center {
            INSCRIBED | LETHAL | NO_INFORMATION => MAX_NON_OBSTACLE,
            c => c,
        };
        for cell in self.info.footprint_cells(pose, fp) {
            match cell.map(|(i, j)| self.info.index(i, j)) {
                None if policy.unknown_is_lethal => return FootprintCost::Collision,
                None => worst = MAX_NON_OBSTACLE,
                Some(idx) => match self.cost[idx] {
                    LETHAL if ignore.binary_search(&idx).is_err() => return FootprintCost::Collision,
                    NO_INFORMATION if policy.unknown_is_lethal => return FootprintCost::Collision,
                    NO_INFORMATION => worst = MAX_NON_OBSTACLE,
                    _ => {}
                },
            }
        }
        FootprintCost::Cost(worst)
    }

    /// Sorted indices of lethal cells under the footprint at `pose`.
    pub fn lethal_under(&self, pose: &Pose2D, fp: &Footprint) -> Vec<usize> {
        let mut cells: Vec<usize> = self
            .info
            .footprint_cells(pose, fp)
            .into_iter()
            .flatten()
            .map(|(i, j)| self.info.index(i, j))
            .filter(|idx| self.cost[*idx] == LETHAL)
            .collect();
        cells.sort_unstable();
        cells.dedup();
        cells
    }
}

pub fn static_cost(state: CellState) -> u8 {
    match state {
        CellState::Free => FREE_SPACE,
        CellState::Occupied => LETHAL,
        CellState::Unknown => NO_INFORMATION,
    }
}
