//! Cartesian vectors and unit directions in units where c = 1.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// A Cartesian 3-vector. Positions are lengths, velocities are fractions of c.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };
    pub const X: Vec3 = Vec3 { x: 1.0, y: 0.0, z: 0.0 };
    pub const Y: Vec3 = Vec3 { x: 0.0, y: 1.0, z: 0.0 };
    pub const Z: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Unit vector along `self`, or `None` for the zero vector.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self / n)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl std::iter::Sum for Vec3 {
    fn sum<I: Iterator<Item = Vec3>>(iter: I) -> Vec3 {
        iter.fold(Vec3::ZERO, |a, b| a + b)
    }
}

/// Tolerance on `|n| - 1` accepted by [`Direction::new`].
pub const UNIT_TOLERANCE: f64 = 1e-12;

/// A unit vector on the observation sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(into = "[f64; 3]")]
pub struct Direction(Vec3);

impl Direction {
    /// Accepts `n` only if it is already unit length within [`UNIT_TOLERANCE`].
    pub fn new(n: Vec3) -> Option<Direction> {
        (n.is_finite() && (n.norm() - 1.0).abs() <= UNIT_TOLERANCE).then_some(Direction(n))
    }

    /// Normalizes any nonzero finite vector.
    pub fn from_vec(v: Vec3) -> Option<Direction> {
        if !v.is_finite() {
            return None;
        }
        v.normalized().map(Direction)
    }

    /// Direction from polar angle `theta` (from +z) and azimuth `phi`.
    pub fn from_angles(theta: f64, phi: f64) -> Direction {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        Direction(Vec3::new(st * cp, st * sp, ct))
    }

    pub const fn x() -> Direction {
        Direction(Vec3::X)
    }

    pub const fn y() -> Direction {
        Direction(Vec3::Y)
    }

    pub const fn z() -> Direction {
        Direction(Vec3::Z)
    }

    pub fn vec(self) -> Vec3 {
        self.0
    }

    /// Component of `v` orthogonal to this direction, `-n x (n x v)`.
    pub fn transverse(self, v: Vec3) -> Vec3 {
        v - self.0 * self.0.dot(v)
    }

    /// An orthonormal pair spanning the tangent plane at `n`.
    pub fn tangent_basis(self) -> (Vec3, Vec3) {
        let n = self.0;
        let helper = if n.x.abs() < 0.9 { Vec3::X } else { Vec3::Y };
        let e1 = (helper - n * n.dot(helper)).normalized().expect("helper not parallel to n");
        let e2 = n.cross(e1);
        (e1, e2)
    }
}

impl From<Direction> for [f64; 3] {
    fn from(d: Direction) -> Self {
        d.0.to_array()
    }
}

impl<'de> Deserialize<'de> for Direction {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let v = Vec3::deserialize(de)?;
        Direction::from_vec(v).ok_or_else(|| serde::de::Error::custom("direction must be a nonzero finite vector"))
    }
}

/// `n` points distributed by the golden-angle spiral; deterministic and nearly uniform.
pub fn fibonacci_directions(count: usize) -> Vec<Direction> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / count as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Direction::from_vec(Vec3::new(r * phi.cos(), r * phi.sin(), z)).expect("spiral point is nonzero")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_product_is_right_handed() {
        assert_eq!(Vec3::X.cross(Vec3::Y), Vec3::Z);
        assert_eq!(Vec3::Y.cross(Vec3::Z), Vec3::X);
    }

    #[test]
    fn direction_rejects_non_unit() {
        assert!(Direction::new(Vec3::new(1.0, 1.0, 0.0)).is_none());
        assert!(Direction::new(Vec3::new(f64::NAN, 0.0, 0.0)).is_none());
        assert!(Direction::new(Vec3::X).is_some());
        assert!(Direction::from_vec(Vec3::ZERO).is_none());
    }

    #[test]
    fn tangent_basis_is_orthonormal() {
        for d in fibonacci_directions(20) {
            let (e1, e2) = d.tangent_basis();
            assert!(e1.dot(d.vec()).abs() < 1e-14);
            assert!(e2.dot(d.vec()).abs() < 1e-14);
            assert!(e1.dot(e2).abs() < 1e-14);
            assert!((e1.norm() - 1.0).abs() < 1e-14 && (e2.norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn transverse_removes_normal_component() {
        let n = Direction::from_vec(Vec3::new(1.0, 2.0, 2.0)).unwrap();
        let v = Vec3::new(0.3, -0.7, 1.1);
        assert!(n.transverse(v).dot(n.vec()).abs() < 1e-15);
        let via_cross = -(n.vec().cross(n.vec().cross(v)));
        assert!((via_cross - n.transverse(v)).norm() < 1e-15);
    }
}
