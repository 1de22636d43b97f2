//! Log-odds occupancy mapping from posed scans, plus map file I/O in the
//! PGM + JSON sidecar format.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose2D;
use crate::grid::{bresenham, CellState, GridInfo, OccupancyGrid};
use crate::sim::LaserScan;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MappingConfig {
    pub l_occ: f64,
    pub l_free: f64,
    pub l_min: f64,
    pub l_max: f64,
    pub occ_threshold: f64,
    pub free_threshold: f64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            l_occ: 0.85,
            l_free: -0.4,
            l_min: -5.0,
            l_max: 5.0,
            occ_threshold: 0.65,
            free_threshold: 0.25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MappingSession {
    pub info: GridInfo,
    pub config: MappingConfig,
    pub log_odds: Vec<f64>,
    pub scan_count: u64,
    pub dropped_scans: u64,
}

pub fn probability(log_odds: f64) -> f64 {
    1.0 - 1.0 / (1.0 + log_odds.exp())
}

impl MappingSession {
    pub fn new(info: GridInfo, config: MappingConfig) -> Self {
        Self {
            log_odds: vec![0.0; info.len()],
            info,
            config,
            scan_count: 0,
            dropped_scans: 0,
        }
    }

    pub fn log_odds_at(&self, i: usize, j: usize) -> f64 {
        self.log_odds[self.info.index(i, j)]
    }

    /// Integrates one scan taken at `pose`. Each cell changes at most once per
    /// scan; a beam endpoint wins over pass-throughs from other beams. Returns
    /// `false` when the pose is off the grid and the scan was dropped.
    pub fn integrate_scan(&mut self, pose: &Pose2D, scan: &LaserScan) -> bool {
        let Some((si, sj)) = self.info.world_to_cell(pose.x, pose.y) else {
            self.dropped_scans += 1;
            return false;
        };
        let sensor = (si as i64, sj as i64);
        let mut hits: HashSet<usize> = HashSet::new();
        let mut free: HashSet<usize> = HashSet::new();
        // Lidar ranges land on cell faces; nudge endpoints into the struck cell.
        let nudge = self.info.resolution * 1e-4;
        for (k, &r) in scan.ranges.iter().enumerate() {
            let angle = pose.theta + scan.beam_angle(k);
            let hit = !scan.is_no_return(r);
            let reach = if hit { r + nudge } else { scan.range_max };
            let (ex, ey) = (pose.x + reach * angle.cos(), pose.y + reach * angle.sin());
            let end = self.info.world_to_cell_unchecked(ex, ey);
            let ray = bresenham(sensor, end);
            let last = ray.len() - 1;
            for (n, &(ci, cj)) in ray.iter().enumerate().skip(1) {
                if !self.info.in_bounds(ci, cj) {
                    break;
                }
                let idx = self.info.index(ci as usize, cj as usize);
                if n == last && hit {
                    hits.insert(idx);
                } else {
                    free.insert(idx);
                }
            }
        }
        let cfg = self.config;
        for idx in &hits {
            self.log_odds[*idx] = (self.log_odds[*idx] + cfg.l_occ).clamp(cfg.l_min, cfg.l_max);
        }
        for idx in free.difference(&hits) {
            self.log_odds[*idx] = (self.log_odds[*idx] + cfg.l_free).clamp(cfg.l_min, cfg.l_max);
        }
        self.scan_count += 1;
        true
    }

    /// Thresholds occupancy probability into the tri-state map.
    pub fn finalize(&self, occ_threshold: f64, free_threshold: f64) -> Result<OccupancyGrid, MapError> {
        if free_threshold >= occ_threshold {
            return Err(MapError::Invalid(format!(
                "free threshold {free_threshold} must be below occupied threshold {occ_threshold}"
            )));
        }
        let cells = self
            .log_odds
            .iter()
            .map(|l| classify(*l, occ_threshold, free_threshold))
            .collect();
        Ok(OccupancyGrid {
            info: self.info,
            cells,
        })
    }

    pub fn finalize_default(&self) -> OccupancyGrid {
        self.finalize(self.config.occ_threshold, self.config.free_threshold)
            .expect("default thresholds are ordered")
    }
}

pub fn classify(log_odds: f64, occ_threshold: f64, free_threshold: f64) -> CellState {
    let p = probability(log_odds);
    if p >= occ_threshold {
        CellState::Occupied
    } else if p <= free_threshold {
        CellState::Free
    } else {
        CellState::Unknown
    }
}

#[derive(Debug, Error)]
pub enum MapError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed map image at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("malformed map metadata: {0}")]
    Metadata(String),
    #[error("invalid map: {0}")]
    Invalid(String),
}

pub const PIXEL_FREE: u8 = 254;
pub const PIXEL_OCCUPIED: u8 = 0;
pub const PIXEL_UNKNOWN: u8 = 205;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMetadata {
    pub resolution: f64,
    pub origin: [f64; 3],
    pub occ_threshold: f64,
    pub free_threshold: f64,
}

impl MapMetadata {
    pub fn for_grid(grid: &OccupancyGrid) -> Self {
        let o = grid.info.origin;
        let d = MappingConfig::default();
        Self {
            resolution: grid.info.resolution,
            origin: [o.x, o.y, o.theta],
            occ_threshold: d.occ_threshold,
            free_threshold: d.free_threshold,
        }
    }
}

/// P5 image, one byte per cell, rows in grid order (row 0 first).
pub fn encode_pgm(grid: &OccupancyGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.info.width, grid.info.height).into_bytes();
    out.extend(grid.cells.iter().map(|c| match c {
        CellState::Free => PIXEL_FREE,
        CellState::Occupied => PIXEL_OCCUPIED,
        CellState::Unknown => PIXEL_UNKNOWN,
    }));
    out
}

/// Parses a binary PGM into `(width, height, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), MapError> {
    let mut pos = 0usize;
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(MapError::Parse {
            offset: 0,
            message: "expected P5 magic".into(),
        });
    }
    pos += 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(b) = bytes.get(pos) {
                        pos += 1;
                        if *b == b'\n' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(MapError::Parse {
                offset: pos,
                message: "expected a decimal header field".into(),
            });
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| MapError::Parse {
                offset: start,
                message: "header field out of range".into(),
            })?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(MapError::Parse {
            offset: pos,
            message: format!("unsupported maxval {maxval}"),
        });
    }
    if width == 0 || height == 0 {
        return Err(MapError::Parse {
            offset: pos,
            message: "zero image dimension".into(),
        });
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(MapError::Parse {
                offset: pos,
                message: "expected single whitespace before raster".into(),
            })
        }
    }
    let needed = width * height;
    if bytes.len() - pos != needed {
        return Err(MapError::Parse {
            offset: bytes.len().min(pos + needed),
            message: format!("raster has {} bytes, expected {needed}", bytes.len() - pos),
        });
    }
    Ok((width, height, bytes[pos..].to_vec()))
}

pub fn pixel_to_state(px: u8, meta: &MapMetadata) -> CellState {
    match px {
        PIXEL_FREE => CellState::Free,
        PIXEL_OCCUPIED => CellState::Occupied,
        PIXEL_UNKNOWN => CellState::Unknown,
        other => {
            let p = (255.0 - other as f64) / 255.0;
            if p >= meta.occ_threshold {
                CellState::Occupied
            } else if p <= meta.free_threshold {
                CellState::Free
            } else {
                CellState::Unknown
            }
        }
    }
}

pub fn parse_metadata(text: &str) -> Result<MapMetadata, MapError> {
    let meta: MapMetadata = serde_json::from_str(text).map_err(|e| MapError::Metadata(e.to_string()))?;
    if !(meta.resolution > 0.0 && meta.resolution.is_finite()) {
        return Err(MapError::Metadata(format!("resolution must be positive, got {}", meta.resolution)));
    }
    if meta.origin.iter().any(|v| !v.is_finite()) {
        return Err(MapError::Metadata("origin must be finite".into()));
    }
    if meta.free_threshold >= meta.occ_threshold {
        return Err(MapError::Metadata("free_threshold must be below occ_threshold".into()));
    }
    Ok(meta)
}

pub fn grid_from_parts(pgm: &[u8], meta: &MapMetadata) -> Result<OccupancyGrid, MapError> {
    let (width, height, pixels) = decode_pgm(pgm)?;
    let info = GridInfo::new(
        meta.resolution,
        width,
        height,
        Pose2D::new(meta.origin[0], meta.origin[1], meta.origin[2]),
    );
    Ok(OccupancyGrid {
        info,
        cells: pixels.iter().map(|p| pixel_to_state(*p, meta)).collect(),
    })
}

/// Sidecar path paired with a map image path.
pub fn sidecar_path(image: &Path) -> PathBuf {
    image.with_extension("json")
}

/// Writes `<path>` (PGM) and its `.json` sidecar.
pub fn save_map(grid: &OccupancyGrid, path: &Path) -> Result<(), MapError> {
    grid.info.validate().map_err(MapError::Invalid)?;
    let meta = MapMetadata::for_grid(grid);
    write(path, &encode_pgm(grid))?;
    let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    write(&sidecar_path(path), json.as_bytes())
}

pub fn load_map(path: &Path) -> Result<OccupancyGrid, MapError> {
    let pgm = read(path)?;
    let side = sidecar_path(path);
    let text = String::from_utf8(read(&side)?).map_err(|e| MapError::Metadata(e.to_string()))?;
    let meta = parse_metadata(&text)?;
    grid_from_parts(&pgm, &meta)
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), MapError> {
    fs::write(path, bytes).map_err(|source| MapError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read(path: &Path) -> Result<Vec<u8>, MapError> {
    fs::read(path).map_err(|source| MapError::Io {
        path: path.to_path_buf(),
        source,
    })
}
