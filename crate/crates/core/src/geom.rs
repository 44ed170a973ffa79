//! Planar points, rotations and rigid transforms.
//!
//! Stacked-vector quantities (block rotations, the translation spreader and
//! the centering projector) are never built as matrices here. Every operation
//! acts on one landmark at a time, so centering a stack of points is just
//! subtracting its centroid.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};

/// 2x2 identity, the cosine generator of `r(theta)`.
pub const I_C: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 1.0]];
/// Quarter-turn matrix, the sine generator of `r(theta)`.
pub const I_S: [[f64; 2]; 2] = [[0.0, -1.0], [1.0, 0.0]];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    /// Rejects NaN and infinite coordinates.
    pub fn checked(x: f64, y: f64) -> Result<Self> {
        if x.is_finite() && y.is_finite() {
            Ok(Point2 { x, y })
        } else {
            Err(FusionError::NonFinite("point coordinates"))
        }
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    #[inline]
    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3-D cross product.
    #[inline]
    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm2(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn dist(self, o: Point2) -> f64 {
        (self - o).norm()
    }

    /// `I_S * self`.
    #[inline]
    pub fn perp(self) -> Point2 {
        Point2::new(-self.y, self.x)
    }

    /// `r(theta) * self`, unchecked.
    #[inline]
    pub fn rotated(self, theta: f64) -> Point2 {
        let (s, c) = theta.sin_cos();
        self.rotated_sc(s, c)
    }

    #[inline]
    pub(crate) fn rotated_sc(self, s: f64, c: f64) -> Point2 {
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl Add for Point2 {
    type Output = Point2;
    #[inline]
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Point2 {
    #[inline]
    fn add_assign(&mut self, o: Point2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Point2 {
    type Output = Point2;
    #[inline]
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<Point2> for f64 {
    type Output = Point2;
    #[inline]
    fn mul(self, p: Point2) -> Point2 {
        Point2::new(self * p.x, self * p.y)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    #[inline]
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Rigid planar transform `p -> r(theta) p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rigid2 {
    theta: f64,
    pub t: Point2,
}

impl Rigid2 {
    pub const IDENTITY: Rigid2 = Rigid2 {
        theta: 0.0,
        t: Point2::ORIGIN,
    };

    pub fn new(theta: f64, t: Point2) -> Self {
        Rigid2 {
            theta: normalize_angle(theta),
            t,
        }
    }

    pub fn checked(theta: f64, t: Point2) -> Result<Self> {
        if !theta.is_finite() || !t.is_finite() {
            return Err(FusionError::NonFinite("rigid transform"));
        }
        Ok(Self::new(theta, t))
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    #[inline]
    pub fn apply(&self, p: Point2) -> Point2 {
        p.rotated(self.theta) + self.t
    }

    /// `r(theta)^T (p - t)`.
    #[inline]
    pub fn apply_inverse(&self, p: Point2) -> Point2 {
        (p - self.t).rotated(-self.theta)
    }

    pub fn inverse(&self) -> Rigid2 {
        Rigid2::new(-self.theta, -self.t.rotated(-self.theta))
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Rigid2) -> Rigid2 {
        Rigid2::new(self.theta + other.theta, self.apply(other.t))
    }
}

/// `r(theta) p`, rejecting non-finite input.
pub fn rotate_point(theta: f64, p: Point2) -> Result<Point2> {
    if !theta.is_finite() || !p.is_finite() {
        return Err(FusionError::NonFinite("rotate_point input"));
    }
    Ok(p.rotated(theta))
}

pub fn apply_rigid(g: &Rigid2, p: Point2) -> Result<Point2> {
    if !g.theta.is_finite() || !g.t.is_finite() || !p.is_finite() {
        return Err(FusionError::NonFinite("apply_rigid input"));
    }
    Ok(g.apply(p))
}

pub fn centroid(points: &[Point2]) -> Result<Point2> {
    if points.is_empty() {
        return Err(FusionError::Empty("centroid of no points"));
    }
    let mut sum = Point2::ORIGIN;
    for &p in points {
        sum += p;
    }
    Ok((1.0 / points.len() as f64) * sum)
}

/// Returns the centroid and the points with the centroid subtracted, i.e. the
/// action of the centering projector on the stacked vector.
pub fn centroid_center(points: &[Point2]) -> Result<(Point2, Vec<Point2>)> {
    let c = centroid(points)?;
    Ok((c, points.iter().map(|&p| p - c).collect()))
}
