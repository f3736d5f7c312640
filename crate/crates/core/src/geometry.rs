//! Millimetre-scale 3D primitives in the template frame.
//!
//! Frame convention: `x` points to the patient's right (lateral), `y` points
//! anterior, `z` points toward the gland base. All lengths are millimetres.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used to classify line/ellipsoid contacts. Chords shorter than
/// this are treated as tangential and reported as no intersection.
pub const GEOMETRIC_TOLERANCE_MM: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Positions and displacements share one representation.
pub type Point3 = Vec3;

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    /// Unit vector in the same direction, or `None` for a (near) zero vector.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 1e-300 && n.is_finite()).then(|| self / n)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn component_mul(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    pub fn component_div(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x / o.x, self.y / o.y, self.z / o.z)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Any unit vector orthogonal to `self` (which must be non-zero).
    pub fn any_orthonormal(self) -> Vec3 {
        let helper = if self.x.abs() < 0.9 * self.norm() {
            Vec3::new(1.0, 0.0, 0.0)
        } else {
            Vec3::new(0.0, 1.0, 0.0)
        };
        self.cross(helper)
            .normalized()
            .expect("non-parallel helper yields a non-zero cross product")
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

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn from_rows(r0: Vec3, r1: Vec3, r2: Vec3) -> Mat3 {
        Mat3([r0.to_array(), r1.to_array(), r2.to_array()])
    }

    pub fn from_columns(c0: Vec3, c1: Vec3, c2: Vec3) -> Mat3 {
        Mat3::from_rows(c0, c1, c2).transpose()
    }

    /// Rotation by `angle` radians about `axis` (Rodrigues).
    pub fn rotation(axis: Vec3, angle: f64) -> Mat3 {
        let k = axis.normalized().unwrap_or(Vec3::new(0.0, 0.0, 1.0));
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        Mat3([
            [t * k.x * k.x + c, t * k.x * k.y - s * k.z, t * k.x * k.z + s * k.y],
            [t * k.x * k.y + s * k.z, t * k.y * k.y + c, t * k.y * k.z - s * k.x],
            [t * k.x * k.z - s * k.y, t * k.y * k.z + s * k.x, t * k.z * k.z + c],
        ])
    }

    pub fn row(&self, i: usize) -> Vec3 {
        self.0[i].into()
    }

    pub fn column(&self, j: usize) -> Vec3 {
        Vec3::new(self.0[0][j], self.0[1][j], self.0[2][j])
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        Vec3::new(self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v))
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = self.row(i).dot(o.column(j));
            }
        }
        Mat3(out)
    }

    pub fn determinant(&self) -> f64 {
        self.row(0).dot(self.row(1).cross(self.row(2)))
    }

    /// Largest absolute entry of `RᵀR − I`.
    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.transpose().mul_mat(self);
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.0[i][j] - target).abs());
            }
        }
        worst
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, o: &Mat3) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max((self.0[i][j] - o.0[i][j]).abs());
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    fn from_nalgebra(m: &Matrix3<f64>) -> Mat3 {
        Mat3([
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ])
    }
}

/// Proper rigid motion `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    rotation: Mat3,
    translation: Vec3,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: Mat3::IDENTITY,
        translation: Vec3::ZERO,
    };

    /// Validates that `rotation` is a proper rotation (orthonormal, det +1)
    /// to within 1e-9.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        if !rotation.is_finite() || !translation.is_finite() {
            return Err(Error::InvalidGeometry("non-finite rigid transform".into()));
        }
        let defect = rotation.orthonormality_defect();
        if defect > 1e-9 {
            return Err(Error::InvalidGeometry(format!(
                "rotation is not orthonormal (defect {defect:e})"
            )));
        }
        if (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidGeometry(
                "rotation has determinant != +1 (reflection)".into(),
            ));
        }
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Self {
        RigidTransform {
            rotation: Mat3::rotation(axis, angle),
            translation,
        }
    }

    pub fn translation_only(translation: Vec3) -> Self {
        RigidTransform {
            rotation: Mat3::IDENTITY,
            translation,
        }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        self.rotation.mul_vec(p) + self.translation
    }

    /// Rotates a direction; translation is ignored.
    pub fn apply_vector(&self, v: Vec3) -> Vec3 {
        self.rotation.mul_vec(v)
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -rt.mul_vec(self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation.mul_mat(&other.rotation),
            translation: self.apply(other.translation),
        }
    }
}

/// Distance beyond an ideal zone: `max(0, |p − c| − r)`.
pub fn zone_error(p: Point3, zone: &Sphere) -> f64 {
    (p.distance(zone.center) - zone.radius).max(0.0)
}

/// Distance from `p` to the closed segment and the clamped projection
/// parameter along it (0 at `a`, 1 at `b`).
pub fn point_segment_distance(p: Point3, s: &Segment) -> (f64, f64) {
    let d = s.b - s.a;
    let t = ((p - s.a).dot(d) / d.norm_squared()).clamp(0.0, 1.0);
    (p.distance(s.point_at(t)), t)
}

/// Biopsy trace from the entry side `a` to the tip `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Point3,
    pub b: Point3,
}

impl Segment {
    pub fn new(a: Point3, b: Point3) -> Result<Self> {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidGeometry("segment endpoint not finite".into()));
        }
        if a.distance(b) <= 0.0 {
            return Err(Error::InvalidGeometry("segment has zero length".into()));
        }
        Ok(Segment { a, b })
    }

    pub fn length(&self) -> f64 {
        self.a.distance(self.b)
    }

    pub fn direction(&self) -> Vec3 {
        (self.b - self.a) / self.length()
    }

    pub fn point_at(&self, t: f64) -> Point3 {
        self.a + (self.b - self.a) * t
    }

    pub fn transformed(&self, t: &RigidTransform) -> Segment {
        Segment {
            a: t.apply(self.a),
            b: t.apply(self.b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Point3,
    pub radius: f64,
}

impl Sphere {
    pub fn new(center: Point3, radius: f64) -> Result<Self> {
        if !center.is_finite() || !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "sphere needs finite center and radius > 0 (got {radius})"
            )));
        }
        Ok(Sphere { center, radius })
    }

    pub fn contains(&self, p: Point3) -> bool {
        p.distance(self.center) <= self.radius
    }

    pub fn transformed(&self, t: &RigidTransform) -> Sphere {
        Sphere {
            center: t.apply(self.center),
            radius: self.radius,
        }
    }
}

/// Flat-capped finite cylinder around a segment axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cylinder {
    pub axis: Segment,
    pub radius: f64,
}

impl Cylinder {
    pub fn new(axis: Segment, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "cylinder radius must be > 0 (got {radius})"
            )));
        }
        Ok(Cylinder { axis, radius })
    }

    /// Membership requires the unclamped axial parameter to lie in `[0, 1]`
    /// and the radial distance to be at most `radius`.
    pub fn contains(&self, p: Point3) -> bool {
        let d = self.axis.b - self.axis.a;
        let rel = p - self.axis.a;
        let len2 = d.norm_squared();
        let along = rel.dot(d);
        if along < 0.0 || along > len2 {
            return false;
        }
        let radial2 = rel.norm_squared() - along * along / len2;
        radial2 <= self.radius * self.radius
    }

    pub fn volume(&self) -> f64 {
        std::f64::consts::PI * self.radius * self.radius * self.axis.length()
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounding_box(&self) -> (Point3, Point3) {
        let d = self.axis.b - self.axis.a;
        let len2 = d.norm_squared();
        // Extent of a flat disc of radius r with normal d along axis i is r·sqrt(1 − dᵢ²/|d|²).
        let ext = |di: f64| self.radius * (1.0 - di * di / len2).max(0.0).sqrt();
        let e = Vec3::new(ext(d.x), ext(d.y), ext(d.z));
        let (a, b) = (self.axis.a, self.axis.b);
        let lo = Vec3::new(a.x.min(b.x), a.y.min(b.y), a.z.min(b.z)) - e;
        let hi = Vec3::new(a.x.max(b.x), a.y.max(b.y), a.z.max(b.z)) + e;
        (lo, hi)
    }
}

/// Gland model: `center + R·local`, with the local frame aligned to the
/// semi-axes `(a, b, c)` along its x, y, z axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: Point3,
    pub semi_axes: Vec3,
    #[serde(default = "identity_rotation")]
    pub rotation: Mat3,
}

fn identity_rotation() -> Mat3 {
    Mat3::IDENTITY
}

impl Ellipsoid {
    pub fn new(center: Point3, semi_axes: Vec3, rotation: Mat3) -> Result<Self> {
        let e = Ellipsoid {
            center,
            semi_axes,
            rotation,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn axis_aligned(center: Point3, semi_axes: Vec3) -> Result<Self> {
        Ellipsoid::new(center, semi_axes, Mat3::IDENTITY)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.semi_axes;
        if !self.center.is_finite() || !s.is_finite() || s.x <= 0.0 || s.y <= 0.0 || s.z <= 0.0
        {
            return Err(Error::InvalidGeometry(
                "ellipsoid needs finite center and positive semi-axes".into(),
            ));
        }
        RigidTransform::new(self.rotation, self.center).map(|_| ())
    }

    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * self.semi_axes.x * self.semi_axes.y * self.semi_axes.z
    }

    pub fn to_local(&self, p: Point3) -> Vec3 {
        self.rotation.transpose().mul_vec(p - self.center)
    }

    pub fn to_world(&self, local: Vec3) -> Point3 {
        self.rotation.mul_vec(local) + self.center
    }

    /// `Σ (qᵢ/aᵢ)² − 1` in the local frame: negative inside, zero on the surface.
    pub fn implicit(&self, p: Point3) -> f64 {
        self.to_local(p).component_div(self.semi_axes).norm_squared() - 1.0
    }

    pub fn contains(&self, p: Point3) -> bool {
        self.implicit(p) <= 0.0
    }

    pub fn strictly_contains(&self, p: Point3) -> bool {
        self.implicit(p) < 0.0
    }

    /// Outward unit normal of the level set through `p`.
    pub fn outward_normal(&self, p: Point3) -> Vec3 {
        let q = self.to_local(p);
        let s = self.semi_axes;
        let g = Vec3::new(q.x / (s.x * s.x), q.y / (s.y * s.y), q.z / (s.z * s.z));
        self.rotation
            .mul_vec(g)
            .normalized()
            .unwrap_or(Vec3::new(0.0, 0.0, 1.0))
    }

    /// Axis-aligned bounding box `(min, max)` in the world frame.
    pub fn bounding_box(&self) -> (Point3, Point3) {
        let r = &self.rotation.0;
        let s = self.semi_axes.to_array();
        let half = |i: usize| {
            (0..3)
                .map(|j| (r[i][j] * s[j]).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let h = Vec3::new(half(0), half(1), half(2));
        (self.center - h, self.center + h)
    }

    /// Parameters `(t0, t1)`, `t0 < t1`, where the infinite line
    /// `a + t·(b − a)` crosses the surface. `None` when the line misses or
    /// only grazes the ellipsoid.
    pub fn line_crossings(&self, s: &Segment) -> Option<(f64, f64)> {
        let p = self.to_local(s.a).component_div(self.semi_axes);
        let d = self
            .rotation
            .transpose()
            .mul_vec(s.b - s.a)
            .component_div(self.semi_axes);
        let qa = d.norm_squared();
        let qb = 2.0 * p.dot(d);
        let qc = p.norm_squared() - 1.0;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc <= 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        // Chord length in mm; grazing contacts count as misses.
        if sq / qa * s.length() <= GEOMETRIC_TOLERANCE_MM {
            return None;
        }
        let sign = if qb >= 0.0 { 1.0 } else { -1.0 };
        let q = -0.5 * (qb + sign * sq);
        let (r0, r1) = if q != 0.0 {
            (q / qa, qc / q)
        } else {
            (-sq / (2.0 * qa), sq / (2.0 * qa))
        };
        Some((r0.min(r1), r0.max(r1)))
    }

    /// Sub-segment of `s` inside the ellipsoid, or `None` when there is no
    /// overlap longer than the geometric tolerance.
    pub fn clip_segment(&self, s: &Segment) -> Option<Segment> {
        let (t0, t1) = self.line_crossings(s)?;
        let lo = t0.max(0.0);
        let hi = t1.min(1.0);
        if (hi - lo) * s.length() <= GEOMETRIC_TOLERANCE_MM {
            return None;
        }
        let a = if lo == 0.0 { s.a } else { s.point_at(lo) };
        let b = if hi == 1.0 { s.b } else { s.point_at(hi) };
        Some(Segment { a, b })
    }

    pub fn transformed(&self, t: &RigidTransform) -> Ellipsoid {
        Ellipsoid {
            center: t.apply(self.center),
            semi_axes: self.semi_axes,
            rotation: t.rotation().mul_mat(&self.rotation),
        }
    }
}

/// Sub-segment of `s` inside the gland `g`.
pub fn clip_segment_to_ellipsoid(s: &Segment, g: &Ellipsoid) -> Option<Segment> {
    g.clip_segment(s)
}

/// Least-squares rigid transform mapping `source[i]` onto `target[i]`.
///
/// Closed form: SVD of the cross-covariance of the centred point sets, with
/// the smallest singular direction flipped when needed so that `det R = +1`.
pub fn rigid_align(source: &[Point3], target: &[Point3]) -> Result<RigidTransform> {
    if source.len() != target.len() {
        return Err(Error::AlignmentDegenerate(format!(
            "correspondence lists differ in length ({} vs {})",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(Error::AlignmentDegenerate(format!(
            "need at least 3 correspondences, got {}",
            source.len()
        )));
    }
    if source.iter().chain(target).any(|p| !p.is_finite()) {
        return Err(Error::AlignmentDegenerate("non-finite landmark".into()));
    }

    let n = source.len() as f64;
    let centroid = |pts: &[Point3]| pts.iter().fold(Vec3::ZERO, |acc, &p| acc + p) / n;
    let cs = centroid(source);
    let ct = centroid(target);

    let mut cross = Matrix3::<f64>::zeros();
    let mut scatter = Matrix3::<f64>::zeros();
    for (s, t) in source.iter().zip(target) {
        let ds = Vector3::new(s.x - cs.x, s.y - cs.y, s.z - cs.z);
        let dt = Vector3::new(t.x - ct.x, t.y - ct.y, t.z - ct.z);
        cross += ds * dt.transpose();
        scatter += ds * ds.transpose();
    }

    // Rank < 2 source scatter means collinear (or coincident) landmarks.
    let spread = scatter.symmetric_eigenvalues();
    let mut ev: Vec<f64> = spread.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[0] <= 0.0 || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::AlignmentDegenerate(
            "landmarks are collinear or coincident".into(),
        ));
    }

    let svd = cross.svd(true, true);
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested Vᵀ").transpose();
    let mut correction = Matrix3::<f64>::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        // Flip the direction of the smallest singular value.
        let (k, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("three singular values");
        correction[(k, k)] = -1.0;
    }
    let r = v * correction * u.transpose();
    let rotation = Mat3::from_nalgebra(&r);
    let translation = ct - rotation.mul_vec(cs);
    Ok(RigidTransform {
        rotation,
        translation,
    })
}

/// Root-mean-square residual `|T·sᵢ − tᵢ|` over the correspondences.
pub fn alignment_rms(t: &RigidTransform, source: &[Point3], target: &[Point3]) -> f64 {
    let n = source.len().max(1) as f64;
    let ss: f64 = source
        .iter()
        .zip(target)
        .map(|(&s, &q)| (t.apply(s) - q).norm_squared())
        .sum();
    (ss / n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn p(x: f64, y: f64, z: f64) -> Point3 {
        Vec3::new(x, y, z)
    }

    #[test]
    fn zone_error_examples() {
        let zone = Sphere::new(p(1.0, 2.0, 3.0), 3.5).unwrap();
        assert_eq!(zone_error(zone.center, &zone), 0.0);
        assert_eq!(zone_error(p(4.5, 2.0, 3.0), &zone), 0.0);
        let e = zone_error(p(1.0, 2.0, 3.0 + 10.29), &zone);
        assert!((e - 6.79).abs() < 1e-12);
    }

    #[test]
    fn point_segment_distance_examples() {
        let s = Segment::new(p(0.0, 0.0, 0.0), p(0.0, 0.0, 17.0)).unwrap();
        assert_eq!(point_segment_distance(p(0.0, 0.0, 8.5), &s), (0.0, 0.5));
        let (d, t) = point_segment_distance(p(5.6, 0.0, 8.5), &s);
        assert!((d - 5.6).abs() < 1e-12 && (t - 0.5).abs() < 1e-12);
        let (d, t) = point_segment_distance(p(0.0, 0.0, 20.0), &s);
        assert!((d - 3.0).abs() < 1e-12);
        assert_eq!(t, 1.0);
    }

    #[test]
    fn degenerate_primitives_rejected() {
        assert!(Segment::new(p(1.0, 1.0, 1.0), p(1.0, 1.0, 1.0)).is_err());
        assert!(Sphere::new(Vec3::ZERO, 0.0).is_err());
        assert!(Ellipsoid::axis_aligned(Vec3::ZERO, p(1.0, -1.0, 1.0)).is_err());
        let reflection = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]]);
        assert!(RigidTransform::new(reflection, Vec3::ZERO).is_err());
    }

    #[test]
    fn clip_examples() {
        let g = Ellipsoid::axis_aligned(Vec3::ZERO, p(25.0, 17.0, 22.5)).unwrap();
        let chord = Segment::new(p(0.0, 0.0, -40.0), p(0.0, 0.0, 40.0)).unwrap();
        let c = g.clip_segment(&chord).unwrap();
        assert!((c.length() - 45.0).abs() < 1e-9);

        let outside = Segment::new(p(30.0, 0.0, 0.0), p(40.0, 5.0, 0.0)).unwrap();
        assert!(g.clip_segment(&outside).is_none());

        let half = Segment::new(Vec3::ZERO, p(60.0, 0.0, 0.0)).unwrap();
        let c = g.clip_segment(&half).unwrap();
        assert!((c.length() - 25.0).abs() < 1e-9);
        assert_eq!(c.a, Vec3::ZERO);
    }

    #[test]
    fn tangential_contact_is_a_miss() {
        let g = Ellipsoid::axis_aligned(Vec3::ZERO, p(25.0, 17.0, 22.5)).unwrap();
        let graze = Segment::new(p(-30.0, 17.0, 0.0), p(30.0, 17.0, 0.0)).unwrap();
        assert!(g.clip_segment(&graze).is_none());
    }

    #[test]
    fn rotated_ellipsoid_clip_matches_axis_aligned() {
        let base = Ellipsoid::axis_aligned(Vec3::ZERO, p(25.0, 17.0, 22.5)).unwrap();
        let t = RigidTransform::from_axis_angle(p(1.0, 2.0, 0.5), 0.7, p(3.0, -4.0, 9.0));
        let moved = base.transformed(&t);
        let s = Segment::new(p(-3.0, -30.0, -20.0), p(4.0, 5.0, 6.0)).unwrap();
        let c0 = base.clip_segment(&s).unwrap();
        let c1 = moved.clip_segment(&s.transformed(&t)).unwrap();
        assert!((c0.length() - c1.length()).abs() < 1e-9);
        assert!(moved.implicit(c1.a).abs() < 1e-7);
    }

    #[test]
    fn rigid_apply_examples() {
        let q = p(1.5, -2.0, 7.0);
        assert_eq!(RigidTransform::IDENTITY.apply(q), q);
        let tr = RigidTransform::translation_only(p(1.0, 2.0, 3.0));
        assert_eq!(tr.apply(Vec3::ZERO), p(1.0, 2.0, 3.0));
        let rz = RigidTransform::from_axis_angle(p(0.0, 0.0, 1.0), FRAC_PI_2, Vec3::ZERO);
        let r = rz.apply(p(1.0, 0.0, 0.0));
        assert!(r.distance(p(0.0, 1.0, 0.0)) < 1e-15);
    }

    #[test]
    fn inverse_and_compose() {
        let t = RigidTransform::from_axis_angle(p(0.3, -1.0, 0.2), 1.1, p(5.0, 1.0, -2.0));
        let id = t.compose(&t.inverse());
        assert!(id.rotation().max_abs_diff(&Mat3::IDENTITY) < 1e-14);
        assert!(id.translation().norm() < 1e-13);
    }

    #[test]
    fn align_identity_and_rotation() {
        let src = vec![
            p(0.0, 0.0, 0.0),
            p(10.0, 0.0, 0.0),
            p(0.0, 7.0, 0.0),
            p(1.0, 2.0, 9.0),
        ];
        let t = rigid_align(&src, &src).unwrap();
        assert!(t.rotation().max_abs_diff(&Mat3::IDENTITY) < 1e-12);
        assert!(t.translation().norm() < 1e-12);

        let truth = RigidTransform::from_axis_angle(p(0.0, 0.0, 1.0), FRAC_PI_2, Vec3::ZERO);
        let dst: Vec<_> = src.iter().map(|&q| truth.apply(q)).collect();
        let est = rigid_align(&src, &dst).unwrap();
        assert!(alignment_rms(&est, &src, &dst) < 1e-9);
        assert!(est.rotation().max_abs_diff(truth.rotation()) < 1e-9);
    }

    #[test]
    fn align_coplanar_landmarks_avoid_reflection() {
        let src = vec![p(0.0, 0.0, 0.0), p(10.0, 0.0, 0.0), p(0.0, 7.0, 0.0), p(4.0, 4.0, 0.0)];
        let truth = RigidTransform::from_axis_angle(p(1.0, 1.0, 0.0), 2.5, p(1.0, 2.0, 3.0));
        let dst: Vec<_> = src.iter().map(|&q| truth.apply(q)).collect();
        let est = rigid_align(&src, &dst).unwrap();
        assert!((est.rotation().determinant() - 1.0).abs() < 1e-12);
        assert!(est.rotation().max_abs_diff(truth.rotation()) < 1e-9);
    }

    #[test]
    fn align_rejects_degenerate_input() {
        let two = vec![p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0)];
        assert!(matches!(
            rigid_align(&two, &two),
            Err(Error::AlignmentDegenerate(_))
        ));
        let line = vec![p(0.0, 0.0, 0.0), p(1.0, 1.0, 1.0), p(2.0, 2.0, 2.0), p(5.0, 5.0, 5.0)];
        assert!(matches!(
            rigid_align(&line, &line),
            Err(Error::AlignmentDegenerate(_))
        ));
        assert!(rigid_align(&line[..3], &line).is_err());
    }

    #[test]
    fn cylinder_membership_is_flat_capped() {
        let axis = Segment::new(Vec3::ZERO, p(0.0, 0.0, 10.0)).unwrap();
        let c = Cylinder::new(axis, 5.6).unwrap();
        assert!(c.contains(p(5.5, 0.0, 5.0)));
        assert!(!c.contains(p(5.7, 0.0, 5.0)));
        assert!(!c.contains(p(0.0, 0.0, -0.1)));
        assert!(!c.contains(p(0.0, 0.0, 10.1)));
        let (lo, hi) = c.bounding_box();
        assert!((lo.x + 5.6).abs() < 1e-12 && (hi.z - 10.0).abs() < 1e-12);
    }
}
