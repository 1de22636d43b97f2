#![allow(dead_code)]

use navsim_core::costmap::{Costmap, InflationParams, FREE_SPACE, INSCRIBED, LETHAL, NO_INFORMATION};
use navsim_core::geometry::{Footprint, Pose2D};
use navsim_core::grid::GridInfo;
use navsim_core::planner::local::{CollisionCheck, CycleRecord, LocalPlannerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const RES: f64 = 0.05;

pub fn params() -> InflationParams {
    InflationParams {
        inflation_radius: 0.55,
        cost_scaling: 10.0,
        inscribed_radius: 0.2,
    }
}

/// Random raw grid: mostly free, some lethal, a sprinkle of unknown.
pub fn random_grid(seed: u64, w: usize, h: usize, lethal: f64, unknown: f64) -> Costmap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cm = Costmap::new(GridInfo::new(RES, w, h, Pose2D::default()), FREE_SPACE, params());
    for c in cm.cost.iter_mut() {
        let u: f64 = rng.random();
        *c = if u < lethal {
            LETHAL
        } else if u < lethal + unknown {
            NO_INFORMATION
        } else {
            FREE_SPACE
        };
    }
    cm
}

pub fn oracle_cost(d: f64, p: &InflationParams) -> Option<u8> {
    if d == 0.0 {
        return Some(254);
    }
    if d <= p.inscribed_radius {
        return Some(253);
    }
    if d > p.inflation_radius {
        return None;
    }
    Some((252.0 * (-p.cost_scaling * (d - p.inscribed_radius)).exp()).round() as u8)
}

/// Brute force: nearest lethal cell by scanning all of them.
pub fn oracle_inflate(raw: &Costmap) -> Vec<u8> {
    let (w, h) = (raw.info.width, raw.info.height);
    let lethal: Vec<(i64, i64)> = (0..h)
        .flat_map(|j| (0..w).map(move |i| (i, j)))
        .filter(|&(i, j)| raw.get(i, j) == 254)
        .map(|(i, j)| (i as i64, j as i64))
        .collect();
    let mut out = raw.cost.clone();
    if lethal.is_empty() {
        return out;
    }
    for j in 0..h {
        for i in 0..w {
            let best = lethal
                .iter()
                .map(|&(li, lj)| (li - i as i64).pow(2) + (lj - j as i64).pow(2))
                .min()
                .unwrap();
            let d = (best as f64).sqrt() * RES;
            let Some(c) = oracle_cost(d, &raw.inflation) else { continue };
            let old = &mut out[j * w + i];
            if *old == 255 {
                if c >= 253 {
                    *old = c;
                }
            } else {
                *old = (*old).max(c);
            }
        }
    }
    out
}

/// Bellman-Ford relaxation to a fixed point over 8-connected traversable cells.
pub fn oracle_potential(cm: &Costmap, goal: (usize, usize), factor: f64) -> Vec<f64> {
    let (w, h) = (cm.info.width, cm.info.height);
    let mut pot = vec![f64::INFINITY; w * h];
    pot[goal.1 * w + goal.0] = 0.0;
    loop {
        let mut changed = false;
        for j in 0..h {
            for i in 0..w {
                let here = pot[j * w + i];
                if !here.is_finite() {
                    continue;
                }
                for dj in -1i64..=1 {
                    for di in -1i64..=1 {
                        if di == 0 && dj == 0 {
                            continue;
                        }
                        let (ni, nj) = (i as i64 + di, j as i64 + dj);
                        if ni < 0 || nj < 0 || ni >= w as i64 || nj >= h as i64 {
                            continue;
                        }
                        let n = nj as usize * w + ni as usize;
                        let c = cm.cost[n];
                        if c >= 253 {
                            continue;
                        }
                        let step = if di != 0 && dj != 0 { RES * 2f64.sqrt() } else { RES };
                        let cand = here + step * (1.0 + factor * c as f64 / 252.0);
                        if cand < pot[n] {
                            pot[n] = cand;
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            return pot;
        }
    }
}

pub fn free_cells(cm: &Costmap) -> Vec<(usize, usize)> {
    (0..cm.info.height)
        .flat_map(|j| (0..cm.info.width).map(move |i| (i, j)))
        .filter(|&(i, j)| cm.get(i, j) < INSCRIBED)
        .collect()
}

/// Recomputes one sampling cycle by brute force: legality from a fresh
/// footprint sweep, totals from the weights, then the lexicographic argmin
/// over legal non-null commands.
pub fn argmin_oracle(rec: &CycleRecord, cm: &Costmap, fp: &Footprint, cfg: &LocalPlannerConfig) -> Result<Option<usize>, String> {
    let check = CollisionCheck::at(cm, &rec.pose, fp);
    let mut best: Option<usize> = None;
    for (k, t) in rec.trajectories.iter().enumerate() {
        if t.poses.len() != cfg.steps() {
            return Err(format!("trajectory {k} has {} poses", t.poses.len()));
        }
        let collides = t.poses.iter().any(|p| check.cost(cm, p, fp).is_collision());
        if collides != t.illegal {
            return Err(format!("trajectory {k} legality {} but sweep says {collides}", !t.illegal));
        }
        let total = cfg.w_path * t.path_dist + cfg.w_goal * t.goal_dist + cfg.w_obs * t.obstacle_cost;
        if total != t.total {
            return Err(format!("trajectory {k} total {} != {total}", t.total));
        }
        if collides || (t.command.v == 0.0 && t.command.omega == 0.0) {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => {
                let o = &rec.trajectories[b];
                (t.total, -t.command.v.abs(), t.command.omega.abs()) < (o.total, -o.command.v.abs(), o.command.omega.abs())
            }
        };
        if better {
            best = Some(k);
        }
    }
    Ok(best)
}
