//! Convex polygon primitives for the piecewise-affine construction.
//!
//! Cells of the realization mesh are convex polygons, produced from the unit
//! square by repeated halfplane clipping. Everything the analysis needs from
//! a cell reduces to the polygon moments ∫1, ∫x, ∫y, ∫xy, which are exact
//! (up to rounding) edge sums by Green's theorem. For the mesh audits the
//! same shoelace sums are also evaluated in exact rational arithmetic over
//! the binary-exact vertex coordinates.

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::rational::{rat_from_f64, Rat};
use crate::{Error, Result};

/// Plane vector / point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the cross product (signed parallelogram area).
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, t: f64) -> Vec2 {
        Vec2::new(self.x * t, self.y * t)
    }
}

impl std::ops::Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// A closed halfplane {x : n·x ≤ c}.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct HalfPlane {
    pub normal: Vec2,
    pub offset: f64,
}

impl HalfPlane {
    pub fn new(normal: Vec2, offset: f64) -> Self {
        Self { normal, offset }
    }

    /// Signed distance-like excess n·x − c (≤ 0 inside).
    pub fn excess(&self, p: Vec2) -> f64 {
        self.normal.dot(p) - self.offset
    }

    pub fn complement(&self) -> HalfPlane {
        HalfPlane::new(-self.normal, -self.offset)
    }
}

/// Convex polygon, vertices in counter-clockwise order, no repeats.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Poly {
    vertices: Vec<Vec2>,
}

/// Polygons whose area falls below this are treated as empty by clipping.
pub const AREA_FLOOR: f64 = 1e-28;

impl Poly {
    /// Build from counter-clockwise vertices; rejects self-intersecting or
    /// clockwise input (cross products at each corner must be ≥ −tol·scale²).
    pub fn new(vertices: Vec<Vec2>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidInput(
                "polygon needs at least 3 vertices".into(),
            ));
        }
        let poly = Self { vertices };
        let scale = poly.diameter_bound();
        let tol = 1e-12 * scale * scale;
        let n = poly.vertices.len();
        for i in 0..n {
            let a = poly.vertices[i];
            let b = poly.vertices[(i + 1) % n];
            let c = poly.vertices[(i + 2) % n];
            if (b - a).cross(c - b) < -tol {
                return Err(Error::InvalidInput(format!(
                    "polygon is not convex counter-clockwise at vertex {i}"
                )));
            }
        }
        if poly.area() <= 0.0 {
            return Err(Error::InvalidInput("polygon has non-positive area".into()));
        }
        Ok(poly)
    }

    /// Axis-aligned rectangle [x0, x1] × [y0, y1].
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        if !(x1 > x0 && y1 > y0) {
            return Err(Error::InvalidInput("rectangle with empty interior".into()));
        }
        Self::new(vec![
            Vec2::new(x0, y0),
            Vec2::new(x1, y0),
            Vec2::new(x1, y1),
            Vec2::new(x0, y1),
        ])
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn edges(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Max coordinate magnitude, a cheap scale for tolerances.
    pub fn diameter_bound(&self) -> f64 {
        self.vertices
            .iter()
            .map(|v| v.x.abs().max(v.y.abs()))
            .fold(0.0, f64::max)
    }

    /// Signed area by the shoelace formula (positive for CCW).
    pub fn area(&self) -> f64 {
        0.5 * self.edge_sum(|a, b| a.cross(b))
    }

    /// Exact shoelace area of the floating-point vertices: every f64 is a
    /// rational, so this is the area of the polygon actually stored, free of
    /// cancellation. Used by the mesh audits.
    pub fn area_exact(&self) -> Rat {
        let mut acc = Rat::zero();
        let n = self.vertices.len();
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let (ax, ay) = (rat_from_f64(a.x), rat_from_f64(a.y));
            let (bx, by) = (rat_from_f64(b.x), rat_from_f64(b.y));
            acc += ax * by - bx * ay;
        }
        acc / Rat::from_integer(2.into())
    }

    /// ∫∫ x dA and ∫∫ y dA (first moments).
    pub fn moment_xy(&self) -> (f64, f64) {
        let mx = self.edge_sum(|a, b| (a.x + b.x) * a.cross(b)) / 6.0;
        let my = self.edge_sum(|a, b| (a.y + b.y) * a.cross(b)) / 6.0;
        (mx, my)
    }

    /// ∫∫ xy dA (mixed second moment), needed for bilinear test functions.
    pub fn moment_mixed(&self) -> f64 {
        self.edge_sum(|a, b| (a.x * b.y + 2.0 * a.x * a.y + 2.0 * b.x * b.y + b.x * a.y) * a.cross(b))
            / 24.0
    }

    pub fn centroid(&self) -> Vec2 {
        let area = self.area();
        let (mx, my) = self.moment_xy();
        Vec2::new(mx / area, my / area)
    }

    fn edge_sum(&self, f: impl Fn(Vec2, Vec2) -> f64) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| f(self.vertices[i], self.vertices[(i + 1) % n]))
            .sum()
    }

    /// Intersect with a halfplane. Returns `None` when (essentially) nothing
    /// remains. Clipping a convex polygon stays convex.
    pub fn clip(&self, hp: &HalfPlane) -> Option<Poly> {
        let scale = self.diameter_bound().max(1.0) * hp.normal.norm().max(f64::MIN_POSITIVE);
        let eps = 1e-14 * scale.max(hp.offset.abs());
        let n = self.vertices.len();
        let mut out: Vec<Vec2> = Vec::with_capacity(n + 2);
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let ea = hp.excess(a);
            let eb = hp.excess(b);
            if ea <= eps {
                out.push(a);
            }
            // Edge crosses the boundary strictly: emit the intersection.
            if (ea < -eps && eb > eps) || (ea > eps && eb < -eps) {
                let t = ea / (ea - eb);
                out.push(a + (b - a) * t);
            }
        }
        dedup_ring(&mut out, 1e-14 * self.diameter_bound().max(1.0));
        if out.len() < 3 {
            return None;
        }
        let poly = Poly { vertices: out };
        if poly.area() < AREA_FLOOR {
            return None;
        }
        Some(poly)
    }

    /// Split by the line {n·x = c} into (inside: n·x ≤ c, outside: n·x ≥ c).
    pub fn split(&self, hp: &HalfPlane) -> (Option<Poly>, Option<Poly>) {
        (self.clip(hp), self.clip(&hp.complement()))
    }

    /// Whether the point lies inside (with tolerance `tol` in length units).
    pub fn contains(&self, p: Vec2, tol: f64) -> bool {
        self.edges().all(|(a, b)| {
            let edge = b - a;
            edge.cross(p - a) >= -tol * edge.norm().max(f64::MIN_POSITIVE)
        })
    }

    /// Range of the linear functional n·x over the polygon.
    pub fn linear_range(&self, n: Vec2) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in &self.vertices {
            let t = n.dot(*v);
            lo = lo.min(t);
            hi = hi.max(t);
        }
        (lo, hi)
    }
}

/// Remove consecutive (near-)duplicate points from a closed ring.
fn dedup_ring(ring: &mut Vec<Vec2>, eps: f64) {
    if ring.is_empty() {
        return;
    }
    let mut out: Vec<Vec2> = Vec::with_capacity(ring.len());
    for &p in ring.iter() {
        if let Some(&last) = out.last() {
            if (p - last).norm() <= eps {
                continue;
            }
        }
        out.push(p);
    }
    while out.len() >= 2 && (out[0] - *out.last().unwrap()).norm() <= eps {
        out.pop();
    }
    *ring = out;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::rat;
    use approx::assert_abs_diff_eq;

    #[test]
    fn moments_of_unit_square_and_triangle() {
        let sq = Poly::rect(0.0, 0.0, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(sq.area(), 1.0, epsilon = 1e-15);
        assert_eq!(sq.area_exact(), rat(1, 1));
        let (mx, my) = sq.moment_xy();
        assert_abs_diff_eq!(mx, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(my, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(sq.moment_mixed(), 0.25, epsilon = 1e-15);
        let c = sq.centroid();
        assert_abs_diff_eq!(c.x, 0.5, epsilon = 1e-15);

        let tri = Poly::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
        ])
        .unwrap();
        assert_abs_diff_eq!(tri.area(), 0.5, epsilon = 1e-15);
        let (tx, ty) = tri.moment_xy();
        assert_abs_diff_eq!(tx, 1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ty, 1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(tri.moment_mixed(), 1.0 / 24.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_clockwise_and_degenerate() {
        assert!(Poly::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(1.0, 0.0),
        ])
        .is_err());
        assert!(Poly::new(vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)]).is_err());
        // Non-convex (dart).
        assert!(Poly::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(2.0, 0.0),
            Vec2::new(1.0, 0.2),
            Vec2::new(2.0, 2.0),
        ])
        .is_err());
    }

    #[test]
    fn clip_partitions_area() {
        let sq = Poly::rect(0.0, 0.0, 1.0, 1.0).unwrap();
        // Oblique line through the square.
        let hp = HalfPlane::new(Vec2::new(1.0, 0.7), 0.8);
        let (inside, outside) = sq.split(&hp);
        let (a, b) = (inside.unwrap(), outside.unwrap());
        assert_abs_diff_eq!(a.area() + b.area(), 1.0, epsilon = 1e-13);
        // All kept vertices actually satisfy the constraint.
        for v in a.vertices() {
            assert!(hp.excess(*v) <= 1e-12);
        }
        for v in b.vertices() {
            assert!(hp.excess(*v) >= -1e-12);
        }
        // First moments add up too.
        let (mx0, my0) = sq.moment_xy();
        let (mxa, mya) = a.moment_xy();
        let (mxb, myb) = b.moment_xy();
        assert_abs_diff_eq!(mxa + mxb, mx0, epsilon = 1e-13);
        assert_abs_diff_eq!(mya + myb, my0, epsilon = 1e-13);
    }

    #[test]
    fn clip_misses_and_swallows() {
        let sq = Poly::rect(0.0, 0.0, 1.0, 1.0).unwrap();
        let hp = HalfPlane::new(Vec2::new(1.0, 0.0), 2.0);
        // Entire square inside: clip returns it, complement returns None.
        assert!(sq.clip(&hp).is_some());
        assert!(sq.clip(&hp.complement()).is_none());
        // Line tangent to the origin corner: {x + y ≤ 0} meets the square
        // only at that corner, so nothing (with area) survives.
        let corner = HalfPlane::new(Vec2::new(1.0, 1.0), 0.0);
        assert!(sq.clip(&corner).is_none());
        assert!(sq.clip(&corner.complement()).is_some());
    }

    #[test]
    fn repeated_clipping_stays_consistent() {
        // Slice the square into 8 vertical strips two ways and compare.
        let sq = Poly::rect(0.0, 0.0, 1.0, 1.0).unwrap();
        let mut total = 0.0;
        for i in 0..8 {
            let lo = i as f64 / 8.0;
            let hi = (i + 1) as f64 / 8.0;
            let strip = sq
                .clip(&HalfPlane::new(Vec2::new(-1.0, 0.0), -lo))
                .unwrap()
                .clip(&HalfPlane::new(Vec2::new(1.0, 0.0), hi))
                .unwrap();
            assert_abs_diff_eq!(strip.area(), 0.125, epsilon = 1e-13);
            total += strip.area();
        }
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn contains_and_linear_range() {
        let sq = Poly::rect(0.0, 0.0, 2.0, 1.0).unwrap();
        assert!(sq.contains(Vec2::new(1.0, 0.5), 1e-12));
        assert!(!sq.contains(Vec2::new(2.1, 0.5), 1e-12));
        assert!(sq.contains(Vec2::new(0.0, 0.0), 1e-9)); // boundary
        let (lo, hi) = sq.linear_range(Vec2::new(1.0, 1.0));
        assert_abs_diff_eq!(lo, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(hi, 3.0, epsilon = 1e-15);
    }

    #[test]
    fn exact_area_agrees_with_float_on_awkward_coordinates() {
        let p = Poly::new(vec![
            Vec2::new(0.1, 0.1),
            Vec2::new(0.7, 0.2),
            Vec2::new(0.65, 0.9),
            Vec2::new(0.15, 0.8),
        ])
        .unwrap();
        let exact = num_traits::ToPrimitive::to_f64(&p.area_exact()).unwrap();
        assert_abs_diff_eq!(p.area(), exact, epsilon = 1e-12);
    }
}
