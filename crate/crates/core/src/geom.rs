//! Small 2-D vector and similarity-transform helpers.
//!
//! Everything downstream works in world meters; [`Vec2`] keeps that explicit
//! without pulling in a linear-algebra crate for two-component math.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// 2-D cross product (z component of the 3-D cross).
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Unit vector, or zero when the norm underflows.
    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 1e-12 {
            self / n
        } else {
            Vec2::ZERO
        }
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn lerp(self, other: Vec2, t: f64) -> Vec2 {
        self + (other - self) * t
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
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

impl Div<f64> for Vec2 {
    type Output = Vec2;
    fn div(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x / rhs, self.y / rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Similarity transform world -> canonical: translate by `-origin`, rotate by
/// `-angle`, then divide by `scale`.
///
/// The inverse maps canonical segment coordinates back into the world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub origin: Vec2,
    /// Rotation that the *forward* map undoes; `angle` is the world heading
    /// that lands on the +x axis.
    pub angle: f64,
    pub scale: f64,
}

impl Similarity {
    pub fn identity() -> Self {
        Similarity {
            origin: Vec2::ZERO,
            angle: 0.0,
            scale: 1.0,
        }
    }

    pub fn to_canonical(&self, p: Vec2) -> Vec2 {
        (p - self.origin).rotated(-self.angle) / self.scale
    }

    pub fn to_world(&self, p: Vec2) -> Vec2 {
        (p * self.scale).rotated(self.angle) + self.origin
    }

    /// Rotation-only version for directions (velocities, relative offsets).
    pub fn dir_to_canonical(&self, d: Vec2) -> Vec2 {
        d.rotated(-self.angle)
    }
}
