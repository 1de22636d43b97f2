//! Deterministic fixed-step world: differential-drive kinematics, sensors,
//! battery and noisy odometry. The simulator is the only source of ground truth.

mod battery;
mod sensors;

pub use battery::{BatteryState, IDLE_DRAW_FLOOR};
pub use sensors::{
    cast_lidar, cast_ultrasonic, LaserScan, LidarConfig, RangeReading, UltrasonicConfig, NO_RETURN_MARGIN,
    ULTRASONIC_RAYS,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Footprint, KinodynamicLimits, Pose2D, VelocityCommand};
use crate::grid::OccupancyGrid;

pub const DEFAULT_DT: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("rejected non-finite velocity command ({v}, {omega})")]
    NonFiniteCommand { v: f64, omega: f64 },
}

/// Ground-truth geometry. Obstacles below the lidar plane are present in
/// `solid` but absent from `lidar`.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub solid: OccupancyGrid,
    pub lidar: OccupancyGrid,
}

impl World {
    pub fn uniform(grid: OccupancyGrid) -> Self {
        Self {
            lidar: grid.clone(),
            solid: grid,
        }
    }
}

/// Standard deviations of zero-mean odometry noise, proportional to motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OdometryNoise {
    /// σ of translation error per metre travelled.
    pub trans_per_m: f64,
    /// σ of rotation error per radian turned.
    pub rot_per_rad: f64,
    /// σ of rotation error per metre travelled.
    pub rot_per_m: f64,
}

impl Default for OdometryNoise {
    fn default() -> Self {
        Self {
            trans_per_m: 0.02,
            rot_per_rad: 0.02,
            rot_per_m: 0.01,
        }
    }
}

impl OdometryNoise {
    pub const NONE: OdometryNoise = OdometryNoise {
        trans_per_m: 0.0,
        rot_per_rad: 0.0,
        rot_per_m: 0.0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub limits: KinodynamicLimits,
    pub footprint: Footprint,
    pub odom_noise: OdometryNoise,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            limits: KinodynamicLimits::default(),
            footprint: Footprint::default(),
            odom_noise: OdometryNoise::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub true_pose: Pose2D,
    pub odom_pose: Pose2D,
    pub commanded: VelocityCommand,
    /// Velocity actually applied on the last tick.
    pub velocity: VelocityCommand,
    pub battery: BatteryState,
    pub tick: u64,
    pub dt: f64,
    /// Motion was blocked by an obstacle on the last tick.
    pub collided: bool,
    pub collision_count: u64,
}

impl SimState {
    pub fn new(start: Pose2D, battery: BatteryState, dt: f64) -> Self {
        Self {
            true_pose: start,
            odom_pose: start,
            commanded: VelocityCommand::ZERO,
            velocity: VelocityCommand::ZERO,
            battery,
            tick: 0,
            dt,
            collided: false,
            collision_count: 0,
        }
    }

    pub fn sim_time(&self) -> f64 {
        self.tick as f64 * self.dt
    }
}

/// Owns the state and the seeded noise source; one writer advances it.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub config: SimConfig,
    state: SimState,
    rng: ChaCha8Rng,
}

impl Simulator {
    pub fn new(config: SimConfig, start: Pose2D, battery: BatteryState) -> Self {
        let state = SimState::new(start, battery, config.dt);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self { config, state, rng }
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn battery_mut(&mut self) -> &mut BatteryState {
        &mut self.state.battery
    }

    /// Advances one tick under `cmd`. A non-finite command leaves the state untouched.
    pub fn step(&mut self, cmd: VelocityCommand, world: &World) -> Result<&SimState, SimError> {
        if !cmd.is_finite() {
            return Err(SimError::NonFiniteCommand {
                v: cmd.v,
                omega: cmd.omega,
            });
        }
        let dt = self.config.dt;
        let limits = self.config.limits;
        let (target, _) = cmd.clamped(&limits);
        let mut applied = limits.ramp(self.state.velocity, target, dt);

        let start = self.state.true_pose;
        let mut next = start.integrate_arc(applied.v, applied.omega, dt);
        let mut collided = false;
        if world.solid.footprint_collides(&next, &self.config.footprint) {
            collided = true;
            applied.v = 0.0;
            let turned = start.integrate_arc(0.0, applied.omega, dt);
            if world.solid.footprint_collides(&turned, &self.config.footprint) {
                applied.omega = 0.0;
                next = start;
            } else {
                next = turned;
            }
        }

        let d_trans = applied.v * dt;
        let d_rot = applied.omega * dt;
        let noise = self.config.odom_noise;
        let sigma_t = noise.trans_per_m * d_trans.abs();
        let sigma_r = noise.rot_per_rad * d_rot.abs() + noise.rot_per_m * d_trans.abs();
        let n_trans = self.sample(sigma_t);
        let n_rot = self.sample(sigma_r);
        let odom = if n_trans == 0.0 && n_rot == 0.0 {
            self.state.odom_pose.integrate_arc(applied.v, applied.omega, dt)
        } else {
            self.state
                .odom_pose
                .integrate_arc((d_trans + n_trans) / dt, (d_rot + n_rot) / dt, dt)
        };

        let speed_fraction = if limits.v_max > 0.0 {
            applied.v.abs() / limits.v_max
        } else {
            0.0
        };
        self.state.battery.advance(dt, speed_fraction);
        self.state.true_pose = next;
        self.state.odom_pose = odom;
        self.state.commanded = cmd;
        self.state.velocity = applied;
        self.state.collided = collided;
        if collided {
            self.state.collision_count += 1;
        }
        self.state.tick += 1;
        Ok(&self.state)
    }

    fn sample(&mut self, sigma: f64) -> f64 {
        if sigma > 0.0 {
            Normal::new(0.0, sigma).map(|n| n.sample(&mut self.rng)).unwrap_or(0.0)
        } else {
            0.0
        }
    }
}
