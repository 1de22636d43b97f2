use serde::{Deserialize, Serialize};

use super::layers::{apply_obstacles, apply_range_layer, ObstacleParams};
use super::{static_cost, Costmap, InflationParams, FREE_SPACE, LETHAL, NO_INFORMATION};
use crate::geometry::{Footprint, Pose2D};
use crate::grid::{GridInfo, OccupancyGrid};
use crate::sim::{LaserScan, RangeReading};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Static,
    Obstacles,
    Range,
    Inflation,
}

pub const LAYER_ORDER: [LayerKind; 4] = [LayerKind::Static, LayerKind::Obstacles, LayerKind::Range, LayerKind::Inflation];

/// Parameters shared by the global and local costmaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostmapCommon {
    pub footprint: Footprint,
    pub footprint_padding: f64,
    pub obstacle_range: f64,
    pub raytrace_range: f64,
    pub inflation_radius: f64,
    pub cost_scaling_factor: f64,
    pub observation_sources: Vec<String>,
}

impl Default for CostmapCommon {
    fn default() -> Self {
        let obs = ObstacleParams::default();
        let infl = InflationParams::default();
        Self {
            footprint: Footprint::default(),
            footprint_padding: 0.0,
            obstacle_range: obs.obstacle_range,
            raytrace_range: obs.raytrace_range,
            inflation_radius: infl.inflation_radius,
            cost_scaling_factor: infl.cost_scaling,
            observation_sources: vec!["lidar".into(), "ultrasonic".into()],
        }
    }
}

impl CostmapCommon {
    pub fn validate(&self) -> Result<(), String> {
        self.footprint.validate()?;
        self.obstacle_params().validate()?;
        if !(self.inflation_radius >= 0.0) || !(self.cost_scaling_factor > 0.0) {
            return Err("inflation_radius must be >= 0 and cost_scaling_factor > 0".into());
        }
        Ok(())
    }

    pub fn effective_footprint(&self) -> Footprint {
        self.footprint.padded(self.footprint_padding)
    }

    pub fn obstacle_params(&self) -> ObstacleParams {
        ObstacleParams {
            obstacle_range: self.obstacle_range,
            raytrace_range: self.raytrace_range,
        }
    }

    pub fn inflation_params(&self) -> InflationParams {
        InflationParams {
            inflation_radius: self.inflation_radius,
            cost_scaling: self.cost_scaling_factor,
            inscribed_radius: self.effective_footprint().inscribed_radius(),
        }
    }

    fn uses(&self, source: &str) -> bool {
        self.observation_sources.iter().any(|s| s == source)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlobalCostmapConfig {
    pub update_frequency: f64,
    pub static_map: bool,
}

impl Default for GlobalCostmapConfig {
    fn default() -> Self {
        Self {
            update_frequency: 1.0,
            static_map: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalCostmapConfig {
    pub width: f64,
    pub height: f64,
    pub update_frequency: f64,
    pub rolling_window: bool,
}

impl Default for LocalCostmapConfig {
    fn default() -> Self {
        Self {
            width: 4.0,
            height: 4.0,
            update_frequency: 5.0,
            rolling_window: true,
        }
    }
}

/// A costmap built from ordered layers over a static map.
#[derive(Debug, Clone)]
pub struct LayeredCostmap {
    static_map: OccupancyGrid,
    static_layer: Costmap,
    obstacles: Costmap,
    range: Costmap,
    master: Costmap,
    params: ObstacleParams,
    use_lidar: bool,
    use_ultrasonic: bool,
    window: Option<(usize, usize)>,
}

impl LayeredCostmap {
    /// Full-map instance covering the static map.
    pub fn global(map: &OccupancyGrid, common: &CostmapCommon) -> Self {
        let infl = common.inflation_params();
        let static_layer = Costmap::from_static(map, infl);
        let mut out = Self::assemble(map, static_layer, common, None);
        out.compose();
        out
    }

    /// Rolling-window instance centred on `pose`.
    pub fn rolling(map: &OccupancyGrid, common: &CostmapCommon, local: &LocalCostmapConfig, pose: &Pose2D) -> Self {
        let res = map.info.resolution;
        let w = ((local.width / res).round() as usize).max(1);
        let h = ((local.height / res).round() as usize).max(1);
        let info = window_info(&map.info, w, h, pose);
        let mut static_layer = Costmap::new(info, NO_INFORMATION, common.inflation_params());
        static_layer.rolling = true;
        fill_static_window(&mut static_layer, map);
        let mut out = Self::assemble(map, static_layer, common, Some((w, h)));
        out.compose();
        out
    }

    fn assemble(map: &OccupancyGrid, static_layer: Costmap, common: &CostmapCommon, window: Option<(usize, usize)>) -> Self {
        let mut blank = static_layer.clone();
        blank.cost.fill(NO_INFORMATION);
        Self {
            static_map: map.clone(),
            master: static_layer.clone(),
            obstacles: blank.clone(),
            range: blank,
            static_layer,
            params: common.obstacle_params(),
            use_lidar: common.uses("lidar"),
            use_ultrasonic: common.uses("ultrasonic"),
            window,
        }
    }

    pub fn costmap(&self) -> &Costmap {
        &self.master
    }

    pub fn info(&self) -> &GridInfo {
        &self.master.info
    }

    pub fn is_rolling(&self) -> bool {
        self.window.is_some()
    }

    /// One update cycle: recentre (rolling only), feed sensors, recompose.
    pub fn update(&mut self, pose: &Pose2D, scan: Option<&LaserScan>, ranges: &[RangeReading]) {
        if self.window.is_some() {
            self.recenter(pose);
        }
        if let (true, Some(scan)) = (self.use_lidar, scan) {
            apply_obstacles(&mut self.obstacles, scan, pose, &self.params);
        }
        if self.use_ultrasonic {
            for r in ranges {
                apply_range_layer(&mut self.range, r, pose);
            }
        }
        self.compose();
    }

    pub fn compose(&mut self) {
        self.master = self.compose_with_order(&LAYER_ORDER);
    }

    /// Composes the layers in an explicit order.
    pub fn compose_with_order(&self, order: &[LayerKind]) -> Costmap {
        let mut out = self.static_layer.clone();
        out.cost.fill(NO_INFORMATION);
        for kind in order {
            match kind {
                LayerKind::Static => {
                    for (o, s) in out.cost.iter_mut().zip(&self.static_layer.cost) {
                        if *s != NO_INFORMATION && (*o == NO_INFORMATION || *s > *o) {
                            *o = *s;
                        }
                    }
                }
                LayerKind::Obstacles => overlay(&mut out, &self.obstacles),
                LayerKind::Range => overlay(&mut out, &self.range),
                LayerKind::Inflation => out.inflate(),
            }
        }
        out
    }

    fn recenter(&mut self, pose: &Pose2D) {
        let Some((w, h)) = self.window else {
            return;
        };
        let old = self.static_layer.info;
        let new = window_info(&self.static_map.info, w, h, pose);
        if new.origin == old.origin {
            return;
        }
        let res = old.resolution;
        let di = ((new.origin.x - old.origin.x) / res).round() as i64;
        let dj = ((new.origin.y - old.origin.y) / res).round() as i64;
        shift(&mut self.obstacles, new, di, dj);
        shift(&mut self.range, new, di, dj);
        self.static_layer.info = new;
        fill_static_window(&mut self.static_layer, &self.static_map);
    }
}

fn overlay(out: &mut Costmap, layer: &Costmap) {
    for (o, l) in out.cost.iter_mut().zip(&layer.cost) {
        match *l {
            LETHAL => *o = LETHAL,
            FREE_SPACE if *o == NO_INFORMATION => *o = FREE_SPACE,
            _ => {}
        }
    }
}

/// Window of `w`×`h` cells centred on `pose`, aligned to the static map's cells.
fn window_info(map: &GridInfo, w: usize, h: usize, pose: &Pose2D) -> GridInfo {
    let res = map.resolution;
    let (ci, cj) = map.world_to_cell_unchecked(pose.x, pose.y);
    let i0 = ci - (w / 2) as i64;
    let j0 = cj - (h / 2) as i64;
    let origin = Pose2D::new(map.origin.x + i0 as f64 * res, map.origin.y + j0 as f64 * res, 0.0);
    GridInfo::new(res, w, h, origin)
}

fn fill_static_window(layer: &mut Costmap, map: &OccupancyGrid) {
    let info = layer.info;
    for j in 0..info.height {
        for i in 0..info.width {
            let (x, y) = info.cell_center(i, j);
            let c = map.info.world_to_cell(x, y).map_or(NO_INFORMATION, |(mi, mj)| static_cost(map.get(mi, mj)));
            layer.set(i, j, c);
        }
    }
}

/// Moves layer contents by whole cells; cells scrolling in become unknown.
fn shift(layer: &mut Costmap, new: GridInfo, di: i64, dj: i64) {
    let old = layer.clone();
    layer.info = new;
    layer.cost.fill(NO_INFORMATION);
    for j in 0..new.height as i64 {
        for i in 0..new.width as i64 {
            let (oi, oj) = (i + di, j + dj);
            if old.info.in_bounds(oi, oj) {
                let c = old.get(oi as usize, oj as usize);
                layer.set(i as usize, j as usize, c);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmap::INSCRIBED;
    use crate::grid::CellState;
    use crate::sim::{cast_lidar, LidarConfig};

    fn room() -> OccupancyGrid {
        let mut g = OccupancyGrid::new(GridInfo::new(0.05, 200, 200, Pose2D::default()), CellState::Free);
        g.fill_rect(0.0, 0.0, 10.0, 0.05, CellState::Occupied);
        g
    }

    #[test]
    fn rolling_window_follows_robot() {
        let map = room();
        let mut cm = LayeredCostmap::rolling(&map, &CostmapCommon::default(), &LocalCostmapConfig::default(), &Pose2D::new(5.0, 5.0, 0.0));
        assert_eq!(cm.info().width, 80);
        assert!((cm.info().origin.x - 3.0).abs() < 1e-9);
        cm.update(&Pose2D::new(6.02, 5.0, 0.0), None, &[]);
        assert!((cm.info().origin.x - 4.0).abs() < 1e-9);
        // Near the bottom wall the window picks up the static obstacle.
        cm.update(&Pose2D::new(6.0, 1.0, 0.0), None, &[]);
        assert_eq!(cm.costmap().cost_at(6.0, 0.025), Some(LETHAL));
        assert_eq!(cm.costmap().cost_at(6.0, 0.2), Some(INSCRIBED));
    }

    #[test]
    fn obstacle_marks_scroll_with_window() {
        let map = OccupancyGrid::new(GridInfo::new(0.05, 200, 200, Pose2D::default()), CellState::Free);
        let mut world = map.clone();
        world.fill_rect(6.0, 4.9, 6.1, 5.1, CellState::Occupied);
        let pose = Pose2D::new(5.0, 5.0, 0.0);
        let scan = cast_lidar(&pose, &world, &LidarConfig::default(), 0);
        let mut cm = LayeredCostmap::rolling(&map, &CostmapCommon::default(), &LocalCostmapConfig::default(), &pose);
        cm.update(&pose, Some(&scan), &[]);
        assert_eq!(cm.costmap().cost_at(6.02, 5.0), Some(LETHAL));
        cm.update(&Pose2D::new(5.5, 5.2, 0.0), None, &[]);
        assert_eq!(cm.costmap().cost_at(6.02, 5.0), Some(LETHAL));
    }

    #[test]
    fn order_matters() {
        let map = OccupancyGrid::new(GridInfo::new(0.05, 40, 40, Pose2D::default()), CellState::Free);
        let mut cm = LayeredCostmap::global(&map, &CostmapCommon::default());
        cm.obstacles.set(20, 20, LETHAL);
        cm.compose();
        let reordered = cm.compose_with_order(&[LayerKind::Static, LayerKind::Inflation, LayerKind::Obstacles, LayerKind::Range]);
        assert_ne!(cm.costmap().cost, reordered.cost);
        assert_eq!(LAYER_ORDER, [LayerKind::Static, LayerKind::Obstacles, LayerKind::Range, LayerKind::Inflation]);
    }
}
