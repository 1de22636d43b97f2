//! Grid geometry shared by the world, maps and costmaps: cell indexing,
//! ray traversal and exact Euclidean distance transforms.

use serde::{Deserialize, Serialize};

use crate::geometry::{Footprint, Pose2D};

/// Placement and size of a regular grid. Cell `(0, 0)` has its lower-left
/// corner at `origin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub origin: Pose2D,
}

impl GridInfo {
    pub fn new(resolution: f64, width: usize, height: usize, origin: Pose2D) -> Self {
        Self {
            resolution,
            width,
            height,
            origin,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(format!("resolution must be positive, got {}", self.resolution));
        }
        if self.width == 0 || self.height == 0 {
            return Err("grid must have at least one cell".into());
        }
        if !self.origin.is_finite() {
            return Err("grid origin must be finite".into());
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.width, idx / self.width)
    }

    pub fn in_bounds(&self, i: i64, j: i64) -> bool {
        i >= 0 && j >= 0 && (i as usize) < self.width && (j as usize) < self.height
    }

    /// World point to continuous grid coordinates (cell units, origin corner at 0).
    pub fn world_to_grid(&self, x: f64, y: f64) -> (f64, f64) {
        let dx = x - self.origin.x;
        let dy = y - self.origin.y;
        if self.origin.theta == 0.0 {
            (dx / self.resolution, dy / self.resolution)
        } else {
            let (s, c) = self.origin.theta.sin_cos();
            ((c * dx + s * dy) / self.resolution, (-s * dx + c * dy) / self.resolution)
        }
    }

    pub fn grid_to_world(&self, gx: f64, gy: f64) -> (f64, f64) {
        let lx = gx * self.resolution;
        let ly = gy * self.resolution;
        if self.origin.theta == 0.0 {
            (self.origin.x + lx, self.origin.y + ly)
        } else {
            self.origin.transform_point(lx, ly)
        }
    }

    /// Integer cell containing a world point, possibly out of bounds.
    pub fn world_to_cell_unchecked(&self, x: f64, y: f64) -> (i64, i64) {
        let (gx, gy) = self.world_to_grid(x, y);
        (gx.floor() as i64, gy.floor() as i64)
    }

    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (i, j) = self.world_to_cell_unchecked(x, y);
        self.in_bounds(i, j).then_some((i as usize, j as usize))
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        self.grid_to_world(i as f64 + 0.5, j as f64 + 0.5)
    }

    pub fn contains_world(&self, x: f64, y: f64) -> bool {
        self.world_to_cell(x, y).is_some()
    }

    /// Cells whose centres fall inside `footprint` placed at `pose`. Cells
    /// outside the grid are reported with `None`.
    pub fn footprint_cells(&self, pose: &Pose2D, footprint: &Footprint) -> Vec<Option<(usize, usize)>> {
        let r = footprint.circumscribed_radius();
        let (gx, gy) = self.world_to_grid(pose.x, pose.y);
        let rc = r / self.resolution;
        let i0 = (gx - rc - 0.5).floor() as i64;
        let i1 = (gx + rc - 0.5).ceil() as i64;
        let j0 = (gy - rc - 0.5).floor() as i64;
        let j1 = (gy + rc - 0.5).ceil() as i64;
        let (s, c) = pose.theta.sin_cos();
        let mut out = Vec::new();
        for j in j0..=j1 {
            for i in i0..=i1 {
                let (wx, wy) = self.grid_to_world(i as f64 + 0.5, j as f64 + 0.5);
                let dx = wx - pose.x;
                let dy = wy - pose.y;
                let bx = c * dx + s * dy;
                let by = -s * dx + c * dy;
                if footprint.contains_body_point(bx, by) {
                    if self.in_bounds(i, j) {
                        out.push(Some((i as usize, j as usize)));
                    } else {
                        out.push(None);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellState {
    Free,
    Occupied,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub info: GridInfo,
    pub cells: Vec<CellState>,
}

impl OccupancyGrid {
    pub fn new(info: GridInfo, fill: CellState) -> Self {
        Self {
            cells: vec![fill; info.len()],
            info,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> CellState {
        self.cells[self.info.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, state: CellState) {
        let idx = self.info.index(i, j);
        self.cells[idx] = state;
    }

    pub fn is_occupied(&self, i: usize, j: usize) -> bool {
        self.get(i, j) == CellState::Occupied
    }

    /// Occupancy at a world point; everything off the grid counts as occupied.
    pub fn occupied_at(&self, x: f64, y: f64) -> bool {
        match self.info.world_to_cell(x, y) {
            Some((i, j)) => self.is_occupied(i, j),
            None => true,
        }
    }

    /// Marks every cell whose centre lies inside the axis-aligned rectangle.
    pub fn fill_rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, state: CellState) {
        let (lo_x, hi_x) = (x0.min(x1), x0.max(x1));
        let (lo_y, hi_y) = (y0.min(y1), y0.max(y1));
        for j in 0..self.info.height {
            for i in 0..self.info.width {
                let (cx, cy) = self.info.cell_center(i, j);
                if cx >= lo_x && cx <= hi_x && cy >= lo_y && cy <= hi_y {
                    self.set(i, j, state);
                }
            }
        }
    }

    /// Marks cells whose centres are within `thickness / 2` of the segment.
    pub fn fill_segment(&mut self, a: (f64, f64), b: (f64, f64), thickness: f64, state: CellState) {
        let half = thickness / 2.0;
        for j in 0..self.info.height {
            for i in 0..self.info.width {
                let (cx, cy) = self.info.cell_center(i, j);
                let (abx, aby) = (b.0 - a.0, b.1 - a.1);
                let len2 = abx * abx + aby * aby;
                let t = if len2 == 0.0 {
                    0.0
                } else {
                    (((cx - a.0) * abx + (cy - a.1) * aby) / len2).clamp(0.0, 1.0)
                };
                let d = (cx - a.0 - t * abx).hypot(cy - a.1 - t * aby);
                if d <= half {
                    self.set(i, j, state);
                }
            }
        }
    }

    pub fn count(&self, state: CellState) -> usize {
        self.cells.iter().filter(|c| **c == state).count()
    }

    /// True if any footprint cell at `pose` is occupied or off the grid.
    pub fn footprint_collides(&self, pose: &Pose2D, footprint: &Footprint) -> bool {
        self.info
            .footprint_cells(pose, footprint)
            .into_iter()
            .any(|c| match c {
                Some((i, j)) => self.is_occupied(i, j),
                None => true,
            })
    }
}

/// Bresenham line between two cells, both endpoints included.
pub fn bresenham(from: (i64, i64), to: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = from;
    let dx = (to.0 - from.0).abs();
    let dy = -(to.1 - from.1).abs();
    let sx = if from.0 < to.0 { 1 } else { -1 };
    let sy = if from.1 < to.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy) as usize + 1);
    loop {
        out.push((x, y));
        if x == to.0 && y == to.1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

/// Marches a ray through the grid (Amanatides–Woo) and returns the distance
/// in metres at which it enters the first cell satisfying `blocked`, or
/// `None` if nothing is hit within `max_range` or the ray leaves the grid.
/// A ray starting inside a blocked cell hits at distance zero.
pub fn raycast<F>(info: &GridInfo, x: f64, y: f64, angle: f64, max_range: f64, blocked: F) -> Option<f64>
where
    F: Fn(usize, usize) -> bool,
{
    let (gx, gy) = info.world_to_grid(x, y);
    let local_angle = angle - info.origin.theta;
    let (dy, dx) = local_angle.sin_cos();
    let mut i = gx.floor() as i64;
    let mut j = gy.floor() as i64;
    if !info.in_bounds(i, j) {
        return None;
    }
    if blocked(i as usize, j as usize) {
        return Some(0.0);
    }
    let max_t = max_range / info.resolution;
    let step_i: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_j: i64 = if dy > 0.0 { 1 } else { -1 };
    let t_delta_x = if dx != 0.0 { (1.0 / dx).abs() } else { f64::INFINITY };
    let t_delta_y = if dy != 0.0 { (1.0 / dy).abs() } else { f64::INFINITY };
    let mut t_max_x = if dx > 0.0 {
        ((i + 1) as f64 - gx) / dx
    } else if dx < 0.0 {
        (i as f64 - gx) / dx
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dy > 0.0 {
        ((j + 1) as f64 - gy) / dy
    } else if dy < 0.0 {
        (j as f64 - gy) / dy
    } else {
        f64::INFINITY
    };
    loop {
        let t;
        if t_max_x < t_max_y {
            t = t_max_x;
            t_max_x += t_delta_x;
            i += step_i;
        } else {
            t = t_max_y;
            t_max_y += t_delta_y;
            j += step_j;
        }
        if t > max_t {
            return None;
        }
        if !info.in_bounds(i, j) {
            return None;
        }
        if blocked(i as usize, j as usize) {
            return Some(t * info.resolution);
        }
    }
}

/// Sentinel for "no source reachable" in squared distance transforms.
pub const EDT_INF: i64 = i64::MAX / 4;

/// Exact squared Euclidean distance transform (in cell units) of a binary
/// source mask, via the separable lower-envelope algorithm with exact
/// rational breakpoints. Cells with no source anywhere get [`EDT_INF`].
pub fn squared_distance_transform(width: usize, height: usize, is_source: &[bool]) -> Vec<i64> {
    assert_eq!(is_source.len(), width * height);
    let mut cols = vec![EDT_INF; width * height];
    let mut f = vec![EDT_INF; width.max(height)];
    let mut d = vec![EDT_INF; width.max(height)];
    for j in 0..height {
        for i in 0..width {
            f[i] = if is_source[j * width + i] { 0 } else { EDT_INF };
        }
        lower_envelope(&f[..width], &mut d[..width]);
        cols[j * width..(j + 1) * width].copy_from_slice(&d[..width]);
    }
    let mut out = vec![EDT_INF; width * height];
    for i in 0..width {
        for j in 0..height {
            f[j] = cols[j * width + i];
        }
        lower_envelope(&f[..height], &mut d[..height]);
        for j in 0..height {
            out[j * width + i] = d[j];
        }
    }
    out
}

fn lower_envelope(f: &[i64], out: &mut [i64]) {
    let n = f.len();
    // Parabola apexes and the breakpoints between consecutive ones, stored
    // as rationals num/den with den > 0.
    let mut v: Vec<usize> = Vec::with_capacity(n);
    let mut z: Vec<(i128, i128)> = Vec::with_capacity(n);
    for q in 0..n {
        if f[q] >= EDT_INF {
            continue;
        }
        loop {
            let Some(&p) = v.last() else {
                v.push(q);
                z.push((i128::MIN, 1));
                break;
            };
            let num = (f[q] as i128 + (q * q) as i128) - (f[p] as i128 + (p * p) as i128);
            let den = 2 * (q as i128 - p as i128);
            let (zn, zd) = *z.last().unwrap();
            if z.len() > 1 && num * zd <= zn * den {
                v.pop();
                z.pop();
            } else {
                v.push(q);
                z.push((num, den));
                break;
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = EDT_INF);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1].0 < q as i128 * z[k + 1].1 {
            k += 1;
        }
        let dq = q as i64 - v[k] as i64;
        *o = dq * dq + f[v[k]];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(width: usize, height: usize, src: &[bool]) -> Vec<i64> {
        let mut out = vec![EDT_INF; width * height];
        for j in 0..height {
            for i in 0..width {
                for sj in 0..height {
                    for si in 0..width {
                        if src[sj * width + si] {
                            let dx = i as i64 - si as i64;
                            let dy = j as i64 - sj as i64;
                            let d = dx * dx + dy * dy;
                            if d < out[j * width + i] {
                                out[j * width + i] = d;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn bresenham_includes_both_ends() {
        let line = bresenham((0, 0), (40, 0));
        assert_eq!(line.len(), 41);
        assert_eq!(line[0], (0, 0));
        assert_eq!(*line.last().unwrap(), (40, 0));
        let diag = bresenham((0, 0), (3, 3));
        assert_eq!(diag, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn raycast_hits_wall_face() {
        let info = GridInfo::new(0.05, 100, 100, Pose2D::default());
        let wall = |i: usize, _j: usize| i == 40;
        let r = raycast(&info, 0.0, 2.5, 0.0, 8.0, wall).unwrap();
        assert!((r - 2.0).abs() < 1e-9, "{r}");
        assert!(raycast(&info, 0.0, 2.5, std::f64::consts::PI, 8.0, wall).is_none());
    }

    #[test]
    fn footprint_cells_of_circle() {
        let info = GridInfo::new(0.05, 40, 40, Pose2D::default());
        let cells = info.footprint_cells(&Pose2D::new(1.0, 1.0, 0.0), &Footprint::Circle { radius: 0.2 });
        // Cell centres at half-integer offsets; count those within 4 cells.
        let mut expected = 0;
        for j in -5i32..5 {
            for i in -5i32..5 {
                let (x, y) = (i as f64 + 0.5, j as f64 + 0.5);
                if x * x + y * y <= 16.0 {
                    expected += 1;
                }
            }
        }
        assert_eq!(cells.len(), expected);
        assert!(cells.iter().all(|c| c.is_some()));
    }

    #[test]
    fn edt_no_sources() {
        let d = squared_distance_transform(3, 2, &[false; 6]);
        assert!(d.iter().all(|x| *x == EDT_INF));
    }

    proptest! {
        #[test]
        fn edt_matches_brute_force(
            w in 1usize..24, h in 1usize..24,
            bits in proptest::collection::vec(proptest::bool::weighted(0.08), 24 * 24)
        ) {
            let src: Vec<bool> = bits[..w * h].to_vec();
            prop_assert_eq!(squared_distance_transform(w, h, &src), brute_force(w, h, &src));
        }

        #[test]
        fn bresenham_steps_are_adjacent(x0 in -50i64..50, y0 in -50i64..50, x1 in -50i64..50, y1 in -50i64..50) {
            let line = bresenham((x0, y0), (x1, y1));
            prop_assert_eq!(line.len() as i64, (x1 - x0).abs().max((y1 - y0).abs()) + 1);
            for w in line.windows(2) {
                prop_assert!((w[0].0 - w[1].0).abs() <= 1 && (w[0].1 - w[1].1).abs() <= 1);
            }
        }
    }
}
