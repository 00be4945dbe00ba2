//! Oriented-box geometry in the plane.
//!
//! Everything here is a pure function of immutable values. Boxes are
//! parameterized the way obstacles are: a center pose, a `length` along the
//! box's local x axis and a `width` along its local y axis.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::math;

/// Areas at or below this are treated as degenerate (empty) polygons.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Wraps an angle to `(-pi, pi]`. Angles already in range are returned untouched.
pub fn wrap_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let two_pi = 2.0 * PI;
    let wrapped = theta - two_pi * math::floor((theta + PI) / two_pi);
    if wrapped <= -PI {
        wrapped + two_pi
    } else if wrapped > PI {
        wrapped - two_pi
    } else {
        wrapped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z component of the 3D cross product.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        math::sqrt(self.dot(self))
    }

    pub fn rotated(self, theta: f64) -> Vec2 {
        let (s, c) = (math::sin(theta), math::cos(theta));
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

/// Planar rigid transform. `theta` is kept in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 { x: 0.0, y: 0.0, theta: 0.0 };

    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: wrap_angle(theta) }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// `self * other`: `other` expressed in the frame of `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = (math::sin(self.theta), math::cos(self.theta));
        Pose2 {
            x: self.x + c * other.x - s * other.y,
            y: self.y + s * other.x + c * other.y,
            theta: wrap_angle(self.theta + other.theta),
        }
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = (math::sin(self.theta), math::cos(self.theta));
        Pose2::new(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.theta)
    }

    pub fn transform_point(&self, p: Vec2) -> Vec2 {
        self.position() + p.rotated(self.theta)
    }

    pub fn translated(&self, d: Vec2) -> Pose2 {
        Pose2 { x: self.x + d.x, y: self.y + d.y, theta: self.theta }
    }
}

/// Oriented rectangle: `length` along local x, `width` along local y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obb {
    pub center: Pose2,
    pub width: f64,
    pub length: f64,
}

impl Obb {
    pub fn new(center: Pose2, width: f64, length: f64) -> Self {
        debug_assert!(width > 0.0 && length > 0.0, "box extents must be positive");
        Self { center, width, length }
    }

    pub fn area(&self) -> f64 {
        self.width * self.length
    }

    /// Unit vectors of the local x and y axes in world coordinates.
    pub fn axes(&self) -> [Vec2; 2] {
        let (s, c) = (math::sin(self.center.theta), math::cos(self.center.theta));
        [Vec2::new(c, s), Vec2::new(-s, c)]
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let d = p - self.center.position();
        let [ux, uy] = self.axes();
        d.dot(ux).abs() <= 0.5 * self.length && d.dot(uy).abs() <= 0.5 * self.width
    }
}

/// World-frame corners in counter-clockwise order, starting at local (-l/2, -w/2).
pub fn obb_corners(b: &Obb) -> [Vec2; 4] {
    let (hl, hw) = (0.5 * b.length, 0.5 * b.width);
    let [ux, uy] = b.axes();
    let c = b.center.position();
    [c - ux * hl - uy * hw, c + ux * hl - uy * hw, c + ux * hl + uy * hw, c - ux * hl + uy * hw]
}

/// Shoelace area. Orientation-agnostic; empty or degenerate input gives 0.
pub fn polygon_area(poly: &[Vec2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for (i, p) in poly.iter().enumerate() {
        let q = poly[(i + 1) % poly.len()];
        twice += p.cross(q);
    }
    0.5 * twice.abs()
}

/// Area-weighted centroid, `None` for degenerate polygons.
pub fn polygon_centroid(poly: &[Vec2]) -> Option<Vec2> {
    if poly.len() < 3 {
        return None;
    }
    let (mut twice, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for (i, p) in poly.iter().enumerate() {
        let q = poly[(i + 1) % poly.len()];
        let w = p.cross(q);
        twice += w;
        cx += (p.x + q.x) * w;
        cy += (p.y + q.y) * w;
    }
    if twice.abs() <= 2.0 * DEGENERATE_AREA {
        return None;
    }
    Some(Vec2::new(cx / (3.0 * twice), cy / (3.0 * twice)))
}

/// Intersection of two convex CCW polygons by successive half-plane clipping.
///
/// Returns an empty vector when the interiors are disjoint or the
/// intersection has (numerically) zero area.
pub fn convex_clip(subject: &[Vec2], clip: &[Vec2]) -> Vec<Vec2> {
    // Points within this distance-scaled tolerance of a clip edge count as inside.
    const ON_EDGE: f64 = 1e-14;
    let mut output: Vec<Vec2> = subject.to_vec();
    for (i, &a) in clip.iter().enumerate() {
        if output.is_empty() {
            break;
        }
        let b = clip[(i + 1) % clip.len()];
        let edge = b - a;
        let side = |p: Vec2| edge.cross(p - a);
        let input = core::mem::take(&mut output);
        for (j, &p) in input.iter().enumerate() {
            let q = input[(j + 1) % input.len()];
            let (sp, sq) = (side(p), side(q));
            let p_in = sp >= -ON_EDGE;
            let q_in = sq >= -ON_EDGE;
            if p_in {
                output.push(p);
            }
            if p_in != q_in && (sp - sq) != 0.0 {
                let t = sp / (sp - sq);
                let x = p + (q - p) * t;
                output.push(x);
            }
        }
    }
    if polygon_area(&output) <= DEGENERATE_AREA {
        output.clear();
    }
    output
}

/// Rotated intersection-over-union of two boxes, in `[0, 1]`.
pub fn rotated_iou(a: &Obb, b: &Obb) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = polygon_area(&convex_clip(&obb_corners(a), &obb_corners(b)));
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Minimum translation resolving the overlap of `a` and `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penetration {
    /// Unit direction in which `b` must move to separate from `a`.
    pub normal: Vec2,
    pub depth: f64,
}

/// Separating-axis test over the four face normals.
///
/// Axes are visited in the order a.x, a.y, b.x, b.y, each first in the
/// positive then the negative direction, and only a strictly smaller depth
/// replaces the current best. Coincident boxes therefore resolve along +x of `a`.
pub fn minimal_translation(a: &Obb, b: &Obb) -> Option<Penetration> {
    let ca = obb_corners(a);
    let cb = obb_corners(b);
    let [ax, ay] = a.axes();
    let [bx, by] = b.axes();
    let mut best: Option<Penetration> = None;
    for axis in [ax, ay, bx, by] {
        let (min_a, max_a) = project(&ca, axis);
        let (min_b, max_b) = project(&cb, axis);
        if max_a <= min_b || max_b <= min_a {
            return None;
        }
        for (normal, depth) in [(axis, max_a - min_b), (-axis, max_b - min_a)] {
            if best.map_or(true, |p| depth < p.depth) {
                best = Some(Penetration { normal, depth });
            }
        }
    }
    best
}

fn project(corners: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in corners {
        let d = c.dot(axis);
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (lo, hi)
}
