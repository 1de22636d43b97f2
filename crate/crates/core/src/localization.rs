//! Adaptive Monte Carlo localization on a known map: odometry motion model,
//! likelihood-field measurement model, systematic resampling and a KLD bound
//! on the particle count.

use std::collections::HashSet;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::geometry::{angle_diff, normalize_angle, Pose2D};
use crate::grid::{squared_distance_transform, CellState, GridInfo, OccupancyGrid, EDT_INF};
use crate::sim::LaserScan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MclConfig {
    pub n_min: usize,
    pub n_max: usize,
    pub initial_count: usize,
    pub kld_epsilon: f64,
    pub kld_delta: f64,
    /// Histogram bin size (m, m, rad).
    pub bin_size: [f64; 3],
    pub sigma_hit: f64,
    pub z_hit: f64,
    pub z_rand: f64,
    /// Use every k-th beam.
    pub beam_skip: usize,
    /// Odometry noise coefficients (rot/rot, rot/trans, trans/trans, trans/rot).
    pub alphas: [f64; 4],
    /// Standard deviations of the initial cloud (m, m, rad).
    pub initial_std: [f64; 3],
    /// Seconds between filter updates.
    pub update_interval: f64,
    /// Resample when the effective sample size falls below this fraction of N.
    pub resample_threshold: f64,
}

impl Default for MclConfig {
    fn default() -> Self {
        Self {
            n_min: 100,
            n_max: 5000,
            initial_count: 500,
            kld_epsilon: 0.05,
            kld_delta: 0.01,
            bin_size: [0.5, 0.5, PI / 8.0],
            sigma_hit: 0.2,
            z_hit: 0.95,
            z_rand: 0.05,
            beam_skip: 6,
            alphas: [0.2, 0.2, 0.2, 0.2],
            initial_std: [0.5, 0.5, 0.4],
            update_interval: 0.5,
            resample_threshold: 0.5,
        }
    }
}

impl MclConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_min == 0 || self.n_min > self.n_max {
            return Err(format!("need 0 < n_min <= n_max, got {} / {}", self.n_min, self.n_max));
        }
        if (self.z_hit + self.z_rand - 1.0).abs() > 1e-9 || self.z_hit < 0.0 || self.z_rand < 0.0 {
            return Err("z_hit + z_rand must equal 1".into());
        }
        if !(self.sigma_hit > 0.0) || self.beam_skip == 0 {
            return Err("sigma_hit must be positive and beam_skip at least 1".into());
        }
        if !(self.kld_epsilon > 0.0) || !(self.kld_delta > 0.0 && self.kld_delta < 1.0) {
            return Err("kld_epsilon must be positive and kld_delta in (0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub pose: Pose2D,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub particles: Vec<Particle>,
    /// The initial pose fell in an occupied cell.
    pub init_warning: bool,
    pub divergence_events: u64,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weight_sum(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }

    pub fn normalize(&mut self) -> bool {
        let s = self.weight_sum();
        if !(s > 0.0) || !s.is_finite() {
            let w = 1.0 / self.particles.len() as f64;
            self.particles.iter_mut().for_each(|p| p.weight = w);
            return false;
        }
        self.particles.iter_mut().for_each(|p| p.weight /= s);
        true
    }

    pub fn effective_size(&self) -> f64 {
        1.0 / self.particles.iter().map(|p| p.weight * p.weight).sum::<f64>()
    }
}

/// Gaussian cloud around `pose` (default origin) with the given standard
/// deviations (default from config).
pub fn init<R: Rng>(map: &OccupancyGrid, pose: Option<Pose2D>, std: Option<[f64; 3]>, cfg: &MclConfig, rng: &mut R) -> ParticleSet {
    let center = pose.unwrap_or_default();
    let std = std.unwrap_or(cfg.initial_std);
    let n = cfg.initial_count.clamp(cfg.n_min, cfg.n_max);
    let w = 1.0 / n as f64;
    let particles = (0..n)
        .map(|_| {
            let mut sample = |s: f64| if s == 0.0 { 0.0 } else { s * rng.sample::<f64, _>(StandardNormal) };
            let (dx, dy, dt) = (sample(std[0]), sample(std[1]), sample(std[2]));
            Particle {
                pose: Pose2D {
                    x: center.x + dx,
                    y: center.y + dy,
                    theta: if dt == 0.0 { center.theta } else { normalize_angle(center.theta + dt) },
                },
                weight: w,
            }
        })
        .collect();
    ParticleSet {
        particles,
        init_warning: pose.is_some() && map.occupied_at(center.x, center.y),
        divergence_events: 0,
    }
}

/// Odometry increment decomposed as rotate, translate, rotate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OdomDelta {
    pub trans: f64,
    pub rot1: f64,
    pub rot2: f64,
}

impl OdomDelta {
    pub fn between(prev: &Pose2D, cur: &Pose2D) -> Self {
        let (dx, dy) = (cur.x - prev.x, cur.y - prev.y);
        let trans = dx.hypot(dy);
        let rot1 = if trans < 0.01 { 0.0 } else { angle_diff(dy.atan2(dx), prev.theta) };
        let rot2 = angle_diff(angle_diff(cur.theta, prev.theta), rot1);
        Self { trans, rot1, rot2 }
    }

    pub fn is_zero(&self) -> bool {
        self.trans == 0.0 && self.rot1 == 0.0 && self.rot2 == 0.0
    }
}

pub fn motion_update<R: Rng>(set: &mut ParticleSet, delta: &OdomDelta, alphas: &[f64; 4], rng: &mut R) {
    let [a1, a2, a3, a4] = *alphas;
    let (t, r1, r2) = (delta.trans, delta.rot1, delta.rot2);
    let sd_r1 = (a1 * r1 * r1 + a2 * t * t).sqrt();
    let sd_t = (a3 * t * t + a4 * (r1 * r1 + r2 * r2)).sqrt();
    let sd_r2 = (a1 * r2 * r2 + a2 * t * t).sqrt();
    for p in &mut set.particles {
        let mut noise = |s: f64| if s == 0.0 { 0.0 } else { s * rng.sample::<f64, _>(StandardNormal) };
        let h1 = r1 - noise(sd_r1);
        let ht = t - noise(sd_t);
        let h2 = r2 - noise(sd_r2);
        let heading = p.pose.theta + h1;
        p.pose = Pose2D {
            x: p.pose.x + ht * heading.cos(),
            y: p.pose.y + ht * heading.sin(),
            theta: if h1 == 0.0 && h2 == 0.0 { p.pose.theta } else { normalize_angle(heading + h2) },
        };
    }
}

/// Distance from every cell centre to the nearest occupied cell centre.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodField {
    pub info: GridInfo,
    pub dist: Vec<f64>,
    pub sigma_hit: f64,
    pub z_hit: f64,
    pub z_rand: f64,
    /// Distance reported off the map or with no obstacles at all.
    pub max_dist: f64,
}

impl LikelihoodField {
    pub fn new(map: &OccupancyGrid, cfg: &MclConfig) -> Self {
        let occ: Vec<bool> = map.cells.iter().map(|c| *c == CellState::Occupied).collect();
        let sq = squared_distance_transform(map.info.width, map.info.height, &occ);
        let max_dist = map.info.resolution * (map.info.width.max(map.info.height)) as f64;
        let dist = sq
            .into_iter()
            .map(|d| if d >= EDT_INF { max_dist } else { (d as f64).sqrt() * map.info.resolution })
            .collect();
        Self {
            info: map.info,
            dist,
            sigma_hit: cfg.sigma_hit,
            z_hit: cfg.z_hit,
            z_rand: cfg.z_rand,
            max_dist,
        }
    }

    pub fn distance_at(&self, x: f64, y: f64) -> Option<f64> {
        self.info.world_to_cell(x, y).map(|(i, j)| self.dist[self.info.index(i, j)])
    }

    /// Mixture likelihood of one endpoint at distance `d` from an obstacle.
    pub fn beam_likelihood(&self, d: Option<f64>, range_max: f64) -> f64 {
        let rand = self.z_rand / range_max;
        match d {
            Some(d) => {
                let norm = 1.0 / (self.sigma_hit * (2.0 * PI).sqrt());
                self.z_hit * norm * (-0.5 * (d / self.sigma_hit).powi(2)).exp() + rand
            }
            None => rand,
        }
    }

    /// Product of beam likelihoods for a scan taken at `pose`.
    pub fn scan_likelihood(&self, pose: &Pose2D, scan: &LaserScan, beam_skip: usize) -> f64 {
        let (s, c) = pose.theta.sin_cos();
        let mut w = 1.0;
        for (k, &r) in scan.ranges.iter().enumerate().step_by(beam_skip.max(1)) {
            if scan.is_no_return(r) || r < scan.range_min {
                continue;
            }
            let a = scan.beam_angle(k);
            let (bx, by) = (r * a.cos(), r * a.sin());
            let (x, y) = (pose.x + c * bx - s * by, pose.y + s * bx + c * by);
            w *= self.beam_likelihood(self.distance_at(x, y), scan.range_max);
        }
        w
    }
}

/// Reweights by the scan; returns `false` (and resets to uniform) when every
/// weight underflowed.
pub fn measurement_update(set: &mut ParticleSet, scan: &LaserScan, field: &LikelihoodField, beam_skip: usize) -> bool {
    for p in &mut set.particles {
        p.weight *= field.scan_likelihood(&p.pose, scan, beam_skip);
    }
    let ok = set.normalize();
    if !ok {
        set.divergence_events += 1;
    }
    ok
}

/// Standard normal upper quantile `z_{1-δ}`.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// KLD-sampling particle count for `k` occupied bins, clamped to `[n_min, n_max]`.
pub fn kld_count(k: usize, epsilon: f64, delta: f64, n_min: usize, n_max: usize) -> usize {
    if k <= 1 {
        return n_min;
    }
    let km1 = (k - 1) as f64;
    let z = normal_quantile(1.0 - delta);
    let a = 2.0 / (9.0 * km1);
    let n = (km1 / (2.0 * epsilon) * (1.0 - a + a.sqrt() * z).powi(3)).ceil();
    (n as usize).clamp(n_min, n_max)
}

pub fn occupied_bins(set: &ParticleSet, bin: &[f64; 3]) -> usize {
    set.particles
        .iter()
        .map(|p| {
            (
                (p.pose.x / bin[0]).floor() as i64,
                (p.pose.y / bin[1]).floor() as i64,
                (normalize_angle(p.pose.theta) / bin[2]).floor() as i64,
            )
        })
        .collect::<HashSet<_>>()
        .len()
}

/// Systematic resampling: `n` draws at `(u + m) / n`, `u ∈ [0, 1)`. Returns
/// the chosen source index per draw.
pub fn systematic_indices(weights: &[f64], n: usize, u: f64) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    let mut cum = weights.first().copied().unwrap_or(0.0);
    let mut i = 0;
    for m in 0..n {
        let target = (u + m as f64) / n as f64;
        while target > cum && i + 1 < weights.len() {
            i += 1;
            cum += weights[i];
        }
        out.push(i);
    }
    out
}

/// Resamples to exactly `n` particles with uniform weights.
pub fn resample_to<R: Rng>(set: &mut ParticleSet, n: usize, rng: &mut R) {
    let weights: Vec<f64> = set.particles.iter().map(|p| p.weight).collect();
    let u: f64 = rng.random::<f64>();
    let w = 1.0 / n as f64;
    set.particles = systematic_indices(&weights, n, u)
        .into_iter()
        .map(|i| Particle {
            pose: set.particles[i].pose,
            weight: w,
        })
        .collect();
}

/// KLD-adaptive resampling; the new size comes from the bins occupied by
/// the current set.
pub fn resample<R: Rng>(set: &mut ParticleSet, cfg: &MclConfig, rng: &mut R) -> usize {
    let k = occupied_bins(set, &cfg.bin_size);
    let n = kld_count(k, cfg.kld_epsilon, cfg.kld_delta, cfg.n_min, cfg.n_max);
    resample_to(set, n, rng);
    n
}

/// Weighted mean with a circular mean for heading, and the 3×3 covariance.
pub fn estimate(set: &ParticleSet) -> (Pose2D, [[f64; 3]; 3]) {
    let total: f64 = set.weight_sum();
    let norm = if total > 0.0 { total } else { 1.0 };
    let (mut mx, mut my, mut sc, mut ss) = (0.0, 0.0, 0.0, 0.0);
    for p in &set.particles {
        let w = p.weight / norm;
        mx += w * p.pose.x;
        my += w * p.pose.y;
        sc += w * p.pose.theta.cos();
        ss += w * p.pose.theta.sin();
    }
    let mt = ss.atan2(sc);
    let mut cov = [[0.0; 3]; 3];
    for p in &set.particles {
        let w = p.weight / norm;
        let d = [p.pose.x - mx, p.pose.y - my, angle_diff(p.pose.theta, mt)];
        for r in 0..3 {
            for c in 0..3 {
                cov[r][c] += w * d[r] * d[c];
            }
        }
    }
    (Pose2D::new(mx, my, mt), cov)
}

/// Filter driven by odometry poses and scans at a fixed interval.
#[derive(Debug, Clone)]
pub struct Localizer {
    pub config: MclConfig,
    pub field: LikelihoodField,
    pub set: ParticleSet,
    rng: ChaCha8Rng,
    odom_at_update: Pose2D,
    estimate: Pose2D,
    covariance: [[f64; 3]; 3],
    pub updates: u64,
    pub resamples: u64,
}

impl Localizer {
    pub fn new(map: &OccupancyGrid, initial: Option<Pose2D>, std: Option<[f64; 3]>, odom: Pose2D, config: MclConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = init(map, initial, std, &config, &mut rng);
        let (estimate, covariance) = self::estimate(&set);
        Self {
            field: LikelihoodField::new(map, &config),
            config,
            set,
            rng,
            odom_at_update: odom,
            estimate,
            covariance,
            updates: 0,
            resamples: 0,
        }
    }

    /// Runs motion, measurement and (if needed) resampling. Skipped when
    /// odometry has not moved since the last update.
    pub fn update(&mut self, odom: &Pose2D, scan: &LaserScan) -> bool {
        let delta = OdomDelta::between(&self.odom_at_update, odom);
        if delta.is_zero() {
            return false;
        }
        motion_update(&mut self.set, &delta, &self.config.alphas, &mut self.rng);
        measurement_update(&mut self.set, scan, &self.field, self.config.beam_skip);
        if self.set.effective_size() < self.config.resample_threshold * self.set.len() as f64 {
            resample(&mut self.set, &self.config, &mut self.rng);
            self.resamples += 1;
        }
        self.odom_at_update = *odom;
        let (e, c) = estimate(&self.set);
        self.estimate = e;
        self.covariance = c;
        self.updates += 1;
        true
    }

    /// Latest filter estimate carried forward by odometry since that update.
    pub fn pose(&self, odom: &Pose2D) -> Pose2D {
        let rel = odom.relative_to(&self.odom_at_update);
        self.estimate.compose(&rel)
    }

    pub fn filter_estimate(&self) -> (Pose2D, [[f64; 3]; 3]) {
        (self.estimate, self.covariance)
    }

    pub fn divergence_events(&self) -> u64 {
        self.set.divergence_events
    }
}
