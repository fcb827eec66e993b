//! Planar geometry primitives: 2D vectors, poses, twists, and wrenches.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// A 2D vector in meters (or newtons, depending on context).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// Scalar 2D cross product: `self.x * other.y - self.y * other.x`.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Counterclockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn normalized(self) -> Option<Vec2> {
        let n = self.norm();
        if n > 0.0 {
            Some(Vec2::new(self.x / n, self.y / n))
        } else {
            None
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.x, self.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut a = angle % TAU;
    if a <= -PI {
        a += TAU;
    } else if a > PI {
        a -= TAU;
    }
    a
}

/// Planar position plus yaw.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub position: Vec2,
    pub yaw: f64,
}

impl Pose2 {
    pub fn new(position: Vec2, yaw: f64) -> Self {
        Self { position, yaw }
    }

    /// Body frame to world frame.
    pub fn to_world(&self, local: Vec2) -> Vec2 {
        self.position + local.rotated(self.yaw)
    }

    /// World frame to body frame.
    pub fn to_local(&self, world: Vec2) -> Vec2 {
        (world - self.position).rotated(-self.yaw)
    }

    pub fn heading(&self) -> Vec2 {
        Vec2::new(self.yaw.cos(), self.yaw.sin())
    }

    /// Rotate in place, keeping yaw wrapped.
    pub fn rotate_by(&mut self, delta: f64) {
        self.yaw = wrap_angle(self.yaw + delta);
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.yaw.is_finite()
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.position.x, self.position.y, self.yaw]
    }
}

/// Planar linear and angular velocity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Twist2 {
    pub linear: Vec2,
    pub angular: f64,
}

impl Twist2 {
    pub const ZERO: Twist2 = Twist2 {
        linear: Vec2::ZERO,
        angular: 0.0,
    };

    pub fn new(linear: Vec2, angular: f64) -> Self {
        Self { linear, angular }
    }

    pub fn is_finite(&self) -> bool {
        self.linear.is_finite() && self.angular.is_finite()
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.linear.x, self.linear.y, self.angular]
    }
}

/// Planar force plus torque about a reference point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Wrench2 {
    pub force: Vec2,
    pub torque: f64,
}

impl Wrench2 {
    pub const ZERO: Wrench2 = Wrench2 {
        force: Vec2::ZERO,
        torque: 0.0,
    };

    pub fn new(force: Vec2, torque: f64) -> Self {
        Self { force, torque }
    }

    pub fn is_finite(&self) -> bool {
        self.force.is_finite() && self.torque.is_finite()
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.force.x, self.force.y, self.torque]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(Vec2::new(a[0], a[1]), a[2])
    }
}

impl Add for Wrench2 {
    type Output = Wrench2;
    fn add(self, rhs: Wrench2) -> Wrench2 {
        Wrench2::new(self.force + rhs.force, self.torque + rhs.torque)
    }
}

impl AddAssign for Wrench2 {
    fn add_assign(&mut self, rhs: Wrench2) {
        self.force += rhs.force;
        self.torque += rhs.torque;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-12);
        for i in -20..20 {
            let a = wrap_angle(0.7 * i as f64);
            assert!(a > -PI && a <= PI, "wrapped {a} out of range");
        }
    }

    #[test]
    fn pose_round_trip() {
        let pose = Pose2::new(Vec2::new(1.5, -2.0), 0.8);
        let p = Vec2::new(0.3, 0.4);
        let back = pose.to_local(pose.to_world(p));
        assert!((back - p).norm() < 1e-12);
    }

    #[test]
    fn cross_and_perp() {
        let a = Vec2::new(1.0, 0.0);
        let b = Vec2::new(0.0, 1.0);
        assert_eq!(a.cross(b), 1.0);
        assert_eq!(a.perp(), b);
    }
}
