pub mod costmap;
pub mod executive;
pub mod geometry;
pub mod grid;
pub mod localization;
pub mod mapping;
pub mod planner;
pub mod runtime;
pub mod scenario;
pub mod sim;
