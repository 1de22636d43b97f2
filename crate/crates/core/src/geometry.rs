//! Planar poses, velocity commands, kinodynamic limits and robot footprints.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

/// Wraps an angle into (-π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let wrapped = a.rem_euclid(TAU);
    if wrapped > PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

/// Signed shortest rotation taking `from` onto `to`.
pub fn angle_diff(to: f64, from: f64) -> f64 {
    normalize_angle(to - from)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    pub fn distance(&self, other: &Pose2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Maps a point expressed in this pose's frame into the parent frame.
    pub fn transform_point(&self, px: f64, py: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (self.x + c * px - s * py, self.y + s * px + c * py)
    }

    /// Composition `self ⊕ rel`.
    pub fn compose(&self, rel: &Pose2D) -> Pose2D {
        let (x, y) = self.transform_point(rel.x, rel.y);
        Pose2D::new(x, y, self.theta + rel.theta)
    }

    /// Relative pose `self ⊖ base`, i.e. `base ⊕ result == self`.
    pub fn relative_to(&self, base: &Pose2D) -> Pose2D {
        let (s, c) = base.theta.sin_cos();
        let dx = self.x - base.x;
        let dy = self.y - base.y;
        Pose2D::new(c * dx + s * dy, -s * dx + c * dy, self.theta - base.theta)
    }

    /// Exact unicycle motion: holds `(v, omega)` constant for `dt` seconds.
    pub fn integrate_arc(&self, v: f64, omega: f64, dt: f64) -> Pose2D {
        if omega.abs() < 1e-12 {
            let (s, c) = self.theta.sin_cos();
            Pose2D {
                x: self.x + v * dt * c,
                y: self.y + v * dt * s,
                theta: self.theta,
            }
        } else {
            let r = v / omega;
            let theta_end = self.theta + omega * dt;
            Pose2D {
                x: self.x + r * (theta_end.sin() - self.theta.sin()),
                y: self.y - r * (theta_end.cos() - self.theta.cos()),
                theta: normalize_angle(theta_end),
            }
        }
    }
}

/// A control-space sample. The base is differential drive, so the lateral
/// component of the `(dx, dy, dtheta)` triple is identically zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VelocityCommand {
    pub v: f64,
    pub omega: f64,
}

impl VelocityCommand {
    pub const ZERO: VelocityCommand = VelocityCommand { v: 0.0, omega: 0.0 };

    pub fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }

    pub fn dy(&self) -> f64 {
        0.0
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite() && self.omega.is_finite()
    }

    pub fn is_zero(&self) -> bool {
        self.v == 0.0 && self.omega == 0.0
    }

    /// Clamps into the velocity limits. The flag reports whether anything changed.
    pub fn clamped(&self, limits: &KinodynamicLimits) -> (VelocityCommand, bool) {
        let v = self.v.clamp(limits.v_min, limits.v_max);
        let omega = self.omega.clamp(-limits.omega_max, limits.omega_max);
        let out = VelocityCommand { v, omega };
        (out, out != *self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KinodynamicLimits {
    pub v_max: f64,
    pub v_min: f64,
    pub omega_max: f64,
    pub accel_v: f64,
    pub accel_omega: f64,
}

impl Default for KinodynamicLimits {
    fn default() -> Self {
        Self {
            v_max: 0.8,
            v_min: 0.0,
            omega_max: 1.0,
            accel_v: 2.5,
            accel_omega: 3.2,
        }
    }
}

impl KinodynamicLimits {
    pub fn validate(&self) -> Result<(), String> {
        let all = [self.v_max, self.v_min, self.omega_max, self.accel_v, self.accel_omega];
        if all.iter().any(|x| x.is_nan() || *x < 0.0) {
            return Err("kinodynamic limits must be non-negative".into());
        }
        if self.v_min > self.v_max {
            return Err("v_min exceeds v_max".into());
        }
        Ok(())
    }

    /// Moves `current` toward `target` without exceeding the acceleration
    /// limits over `dt`, then clamps into the velocity limits.
    pub fn ramp(&self, current: VelocityCommand, target: VelocityCommand, dt: f64) -> VelocityCommand {
        let dv = self.accel_v * dt;
        let dw = self.accel_omega * dt;
        let v = target.v.clamp(current.v - dv, current.v + dv);
        let omega = target.omega.clamp(current.omega - dw, current.omega + dw);
        VelocityCommand { v, omega }.clamped(self).0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Footprint {
    Circle { radius: f64 },
    /// Convex polygon in the body frame, counter-clockwise.
    Polygon { vertices: Vec<(f64, f64)> },
}

impl Default for Footprint {
    fn default() -> Self {
        Footprint::Circle { radius: 0.2 }
    }
}

impl Footprint {
    pub fn square(side: f64) -> Self {
        let h = side / 2.0;
        Footprint::Polygon {
            vertices: vec![(h, h), (-h, h), (-h, -h), (h, -h)],
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            Footprint::Circle { radius } => {
                if *radius > 0.0 && radius.is_finite() {
                    Ok(())
                } else {
                    Err(format!("circle radius must be positive, got {radius}"))
                }
            }
            Footprint::Polygon { vertices } => {
                if vertices.len() < 3 {
                    return Err("polygon needs at least three vertices".into());
                }
                let n = vertices.len();
                for i in 0..n {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % n];
                    let c = vertices[(i + 2) % n];
                    let cross = (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0);
                    if cross <= 0.0 {
                        return Err("polygon must be convex and counter-clockwise".into());
                    }
                }
                Ok(())
            }
        }
    }

    /// Radius of the largest circle centred on the robot origin that fits inside.
    pub fn inscribed_radius(&self) -> f64 {
        match self {
            Footprint::Circle { radius } => *radius,
            Footprint::Polygon { vertices } => {
                let n = vertices.len();
                (0..n)
                    .map(|i| point_segment_distance((0.0, 0.0), vertices[i], vertices[(i + 1) % n]))
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }

    pub fn circumscribed_radius(&self) -> f64 {
        match self {
            Footprint::Circle { radius } => *radius,
            Footprint::Polygon { vertices } => vertices
                .iter()
                .map(|(x, y)| x.hypot(*y))
                .fold(0.0, f64::max),
        }
    }

    /// Inclusive containment test for a point in the body frame.
    pub fn contains_body_point(&self, px: f64, py: f64) -> bool {
        match self {
            Footprint::Circle { radius } => px * px + py * py <= radius * radius,
            Footprint::Polygon { vertices } => {
                let n = vertices.len();
                (0..n).all(|i| {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % n];
                    (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0) >= -1e-12
                })
            }
        }
    }

    /// Footprint inflated outward by `padding` metres.
    pub fn padded(&self, padding: f64) -> Footprint {
        if padding == 0.0 {
            return self.clone();
        }
        match self {
            Footprint::Circle { radius } => Footprint::Circle {
                radius: radius + padding,
            },
            Footprint::Polygon { vertices } => Footprint::Polygon {
                vertices: vertices
                    .iter()
                    .map(|&(x, y)| {
                        let n = x.hypot(y).max(1e-12);
                        (x + padding * x / n, y + padding * y / n)
                    })
                    .collect(),
            },
        }
    }
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let len2 = abx * abx + aby * aby;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * abx + (p.1 - a.1) * aby) / len2).clamp(0.0, 1.0)
    };
    (p.0 - (a.0 + t * abx)).hypot(p.1 - (a.1 + t * aby))
}
