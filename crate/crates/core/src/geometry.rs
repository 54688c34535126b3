//! Dual-quadric and projective geometry primitives.
//!
//! Conventions used throughout the crate:
//!
//! * A [`RigidPose`] maps points from a local frame into the world frame,
//!   `p_world = R * p_local + t`. Camera poses are therefore
//!   world-from-camera, and the extrinsic matrix used for projection is the
//!   inverse pose.
//! * A [`DualQuadric`] is stored at whatever projective scale it was built
//!   with. Every consumer first rescales it so that `Q*(4,4) = -1`, which is
//!   the scale produced by [`ellipsoid_to_dual_quadric`].
//! * Bounding boxes are ordered `(u_max, v_max, u_min, v_min)`.

use nalgebra::{Matrix3, Matrix3x4, Matrix4, SymmetricEigen, UnitQuaternion, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("matrix is not a valid ellipsoid: {0}")]
    NonEllipsoid(String),
    #[error("projected conic is unbounded: {0}")]
    UnboundedConic(&'static str),
    #[error("point lies behind the camera (depth {depth:e})")]
    BehindCamera { depth: f64 },
    #[error("empty point set")]
    EmptyInput,
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid ellipsoid: {0}")]
    InvalidEllipsoid(String),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Numeric tolerances shared by the geometry routines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    /// Absolute tolerance for symmetry, orthonormality and eigenvalue ties.
    pub tolerance: f64,
    /// Largest condition number accepted when decomposing a dual quadric.
    pub max_condition: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_condition: 1e12,
        }
    }
}

/// Unit quaternion rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "QuatRepr", into = "QuatRepr")]
pub struct Rotation(UnitQuaternion<f64>);

#[derive(Serialize, Deserialize)]
struct QuatRepr {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl From<QuatRepr> for Rotation {
    fn from(q: QuatRepr) -> Self {
        Rotation::from_wxyz(q.w, q.x, q.y, q.z)
    }
}

impl From<Rotation> for QuatRepr {
    fn from(r: Rotation) -> Self {
        let q = r.0.quaternion();
        QuatRepr {
            w: q.w,
            x: q.i,
            y: q.j,
            z: q.k,
        }
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self(UnitQuaternion::identity())
    }

    /// Builds a rotation from quaternion components, normalizing them.
    /// A zero quaternion yields the identity.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Self {
        let q = nalgebra::Quaternion::new(w, x, y, z);
        let n = q.norm();
        if n == 0.0 {
            return Self::identity();
        }
        if (n - 1.0).abs() <= 2.0 * f64::EPSILON {
            // Already unit up to rounding; keep the bits so serialization round-trips.
            return Self(UnitQuaternion::new_unchecked(q));
        }
        Self(UnitQuaternion::from_quaternion(q))
    }

    /// Rotation from an axis-angle vector (direction = axis, norm = angle).
    pub fn from_axis_angle(v: &Vector3<f64>) -> Self {
        Self(UnitQuaternion::from_scaled_axis(*v))
    }

    /// Projects an (approximately) orthonormal matrix onto SO(3).
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let rot = nalgebra::Rotation3::from_matrix(m);
        Self(UnitQuaternion::from_rotation_matrix(&rot))
    }

    pub fn from_unit_quaternion(q: UnitQuaternion<f64>) -> Self {
        Self(q)
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    /// Components as `(w, x, y, z)`.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    pub fn axis_angle(&self) -> Vector3<f64> {
        self.0.scaled_axis()
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Self(self.0 * other.0)
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn angle_to(&self, other: &Rotation) -> f64 {
        self.0.angle_to(&other.0)
    }
}

/// Rigid transform mapping a local frame into the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidPose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidPose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Rotation::identity(), t)
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        RigidPose {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidPose {
        let rinv = self.rotation.inverse();
        RigidPose {
            rotation: rinv,
            translation: -rinv.rotate(&self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    /// Homogeneous 4×4 matrix.
    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Top three rows of the homogeneous matrix, `[R | t]`.
    pub fn matrix3x4(&self) -> Matrix3x4<f64> {
        let mut m = Matrix3x4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Right-multiplies by a small increment: rotation `exp(omega)` applied
    /// in the local frame and a world-frame translation offset.
    pub fn retract(&self, omega: &Vector3<f64>, dt: &Vector3<f64>) -> RigidPose {
        RigidPose {
            rotation: self
                .rotation
                .compose(&Rotation::from_axis_angle(omega)),
            translation: self.translation + dt,
        }
    }

    /// Same pose with its translation multiplied by `s`.
    pub fn scaled(&self, s: f64) -> RigidPose {
        RigidPose::new(self.rotation, self.translation * s)
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics(
                "principal point must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, 0.0, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }
}

/// Ellipsoid given by its pose in the world and three semi-axis lengths
/// along the pose's local x, y and z axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub pose: RigidPose,
    pub semi_axes: Vector3<f64>,
}

impl Ellipsoid {
    pub fn new(pose: RigidPose, semi_axes: Vector3<f64>) -> Result<Self> {
        if !semi_axes.iter().all(|a| a.is_finite() && *a > 0.0) {
            return Err(GeometryError::InvalidEllipsoid(format!(
                "semi-axes must be positive, got {:?}",
                semi_axes.as_slice()
            )));
        }
        Ok(Self { pose, semi_axes })
    }

    pub fn sphere(center: Vector3<f64>, radius: f64) -> Result<Self> {
        Self::new(
            RigidPose::from_translation(center),
            Vector3::repeat(radius),
        )
    }

    pub fn center(&self) -> Vector3<f64> {
        self.pose.translation
    }

    /// Full extents (twice the semi-axes), sorted descending.
    pub fn dims(&self) -> [f64; 3] {
        let mut d = [
            2.0 * self.semi_axes.x,
            2.0 * self.semi_axes.y,
            2.0 * self.semi_axes.z,
        ];
        d.sort_by(|a, b| b.total_cmp(a));
        d
    }

    /// Maps a point on the unit sphere onto the ellipsoid surface.
    pub fn surface_point(&self, unit: &Vector3<f64>) -> Vector3<f64> {
        self.pose
            .transform_point(&unit.component_mul(&self.semi_axes))
    }

    /// Uniform scaling of the ellipsoid about the world origin.
    pub fn scaled(&self, s: f64) -> Ellipsoid {
        Ellipsoid {
            pose: self.pose.scaled(s),
            semi_axes: self.semi_axes * s,
        }
    }
}

/// Dual (tangent-plane) form of a quadric surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualQuadric(Matrix4<f64>);

impl DualQuadric {
    /// Wraps a matrix after checking symmetry.
    pub fn from_matrix(m: Matrix4<f64>, cfg: &GeometryConfig) -> Result<Self> {
        let asym = (m - m.transpose()).amax();
        if asym > cfg.tolerance * m.amax().max(1.0) {
            return Err(GeometryError::NotSymmetric(asym));
        }
        Ok(Self(0.5 * (m + m.transpose())))
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    /// Rescaled copy with `Q*(4,4) = -1`.
    pub fn normalized(&self) -> Result<Matrix4<f64>> {
        let q44 = self.0[(3, 3)];
        if !q44.is_finite() || q44.abs() <= f64::EPSILON * self.0.amax() {
            return Err(GeometryError::NonEllipsoid(
                "Q*(4,4) vanishes; the quadric is not a bounded ellipsoid".into(),
            ));
        }
        Ok(self.0 / -q44)
    }

    /// Point-form quadric `Q = (Q*)^-1`, taken at the scale where `Q*(4,4) = -1`.
    ///
    /// At that scale `p^T Q p = -1` at the ellipsoid center, so
    /// `p^T Q p + 1` is the squared normalized radius of `p`. This coincides
    /// with `Q(4,4) = -1` when the quadric is expressed in its own frame.
    pub fn primal(&self) -> Result<Matrix4<f64>> {
        let n = self.normalized()?;
        n.try_inverse()
            .ok_or_else(|| GeometryError::NonEllipsoid("dual quadric is singular".into()))
    }

    /// Center `c` and inverse shape matrix `S^-1` with
    /// `p^T Q p + 1 = (p - c)^T S^-1 (p - c)`.
    ///
    /// Working relative to the center avoids the cancellation that the
    /// world-frame primal suffers for quadrics far from the origin.
    pub fn centered_shape(&self) -> Result<(Vector3<f64>, Matrix3<f64>)> {
        let n = self.normalized()?;
        let c = -n.fixed_view::<3, 1>(0, 3).into_owned();
        let shape = n.fixed_view::<3, 3>(0, 0) + c * c.transpose();
        let s_inv = shape
            .cholesky()
            .ok_or_else(|| GeometryError::NonEllipsoid("shape matrix is not positive definite".into()))?
            .inverse();
        Ok((c, s_inv))
    }
}

/// Dual conic `C* = H Q* H^T` of a projected quadric.
///
/// The conic alone cannot tell an object in front of the camera from its
/// mirror image behind it, so projection also records the depth of the
/// quadric center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualConic {
    pub matrix: Matrix3<f64>,
    /// Depth of the quadric center in the camera frame.
    pub center_depth: f64,
}

impl DualConic {
    pub fn new(matrix: Matrix3<f64>, center_depth: f64) -> Self {
        Self {
            matrix: 0.5 * (matrix + matrix.transpose()),
            center_depth,
        }
    }
}

/// Axis-aligned image box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox2D {
    pub u_max: f64,
    pub v_max: f64,
    pub u_min: f64,
    pub v_min: f64,
}

impl BBox2D {
    pub fn new(u_max: f64, v_max: f64, u_min: f64, v_min: f64) -> Self {
        Self {
            u_max,
            v_max,
            u_min,
            v_min,
        }
    }

    /// `(u_max, v_max, u_min, v_min)`.
    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.u_max, self.v_max, self.u_min, self.v_min)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= self.u_min && px.x <= self.u_max && px.y >= self.v_min && px.y <= self.v_max
    }

    pub fn width(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> f64 {
        self.v_max - self.v_min
    }

    pub fn is_valid(&self) -> bool {
        self.u_max >= self.u_min && self.v_max >= self.v_min
    }
}

/// Box with arbitrary orientation; `half_extents` are along the pose axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub pose: RigidPose,
    pub half_extents: Vector3<f64>,
}

impl OrientedBox {
    pub fn contains(&self, p: &Vector3<f64>, tol: f64) -> bool {
        let local = self.pose.inverse().transform_point(p);
        (0..3).all(|i| local[i].abs() <= self.half_extents[i] + tol)
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.x * self.half_extents.y * self.half_extents.z
    }
}

/// `Q* = Z diag(a1², a2², a3², -1) Z^T` with `Z` the homogeneous pose matrix.
pub fn ellipsoid_to_dual_quadric(e: &Ellipsoid) -> DualQuadric {
    let z = e.pose.matrix();
    let a = e.semi_axes;
    let d = Matrix4::from_diagonal(&Vector4::new(a.x * a.x, a.y * a.y, a.z * a.z, -1.0));
    let q = z * d * z.transpose();
    DualQuadric(0.5 * (q + q.transpose()))
}

/// Recovers pose and semi-axes from a dual quadric. Semi-axes come back
/// sorted descending along the local x, y, z axes.
pub fn dual_quadric_to_ellipsoid(q: &DualQuadric, cfg: &GeometryConfig) -> Result<Ellipsoid> {
    let m = q.matrix();
    if m.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::NonEllipsoid("non-finite entries".into()));
    }
    let sv = m.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if smin <= 0.0 || smax / smin > cfg.max_condition {
        return Err(GeometryError::NonEllipsoid(format!(
            "degenerate matrix (condition number {:e})",
            if smin > 0.0 { smax / smin } else { f64::INFINITY }
        )));
    }
    let dual = q.normalized()?;
    let primal = q.primal()?;

    let eig = SymmetricEigen::new(primal);
    let pos = eig.eigenvalues.iter().filter(|v| **v > 0.0).count();
    let neg = eig.eigenvalues.iter().filter(|v| **v < 0.0).count();
    if pos != 3 || neg != 1 {
        return Err(GeometryError::NonEllipsoid(format!(
            "primal signature is ({pos}+, {neg}-), expected (3+, 1-)"
        )));
    }

    let center = -dual.fixed_view::<3, 1>(0, 3).into_owned();
    let shape = dual.fixed_view::<3, 3>(0, 0).into_owned() + center * center.transpose();
    let shape = 0.5 * (shape + shape.transpose());
    let se = SymmetricEigen::new(shape);

    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| se.eigenvalues[j].total_cmp(&se.eigenvalues[i]));
    let mut axes = Vector3::zeros();
    let mut rot = Matrix3::zeros();
    for (col, &i) in order.iter().enumerate() {
        let lambda = se.eigenvalues[i];
        if lambda <= 0.0 {
            return Err(GeometryError::NonEllipsoid(format!(
                "non-positive squared semi-axis {lambda:e}"
            )));
        }
        axes[col] = lambda.sqrt();
        rot.set_column(col, &se.eigenvectors.column(i));
    }
    if rot.determinant() < 0.0 {
        let c = -rot.column(2);
        rot.set_column(2, &c);
    }
    Ellipsoid::new(RigidPose::new(Rotation::from_matrix(&rot), center), axes)
}

/// Projects a dual quadric through a pinhole camera whose pose is `cam`
/// (world-from-camera).
pub fn project_quadric(q: &DualQuadric, k: &CameraIntrinsics, cam: &RigidPose) -> Result<DualConic> {
    let n = q.normalized()?;
    let extrinsic = cam.inverse();
    let h = k.matrix() * extrinsic.matrix3x4();
    let c = h * n * h.transpose();
    let center = -n.fixed_view::<3, 1>(0, 3).into_owned();
    let depth = extrinsic.transform_point(&center).z;
    Ok(DualConic::new(c, depth))
}

/// Axis-aligned extent of the ellipse outlined by a projected quadric.
///
/// The vertical tangents of the outline satisfy
/// `u = (C13 ± sqrt(C13² - C11 C33)) / C33` and the horizontal ones use the
/// matching row-2 entries, `v = (C23 ± sqrt(C23² - C22 C33)) / C33`.
pub fn conic_bbox(c: &DualConic) -> Result<BBox2D> {
    if !(c.center_depth > 0.0) {
        return Err(GeometryError::UnboundedConic("quadric center is behind the camera"));
    }
    let m = &c.matrix;
    let c33 = m[(2, 2)];
    // With Q*(4,4) = -1, C*(3,3) >= 0 exactly when the principal plane
    // touches or cuts the ellipsoid.
    if !(c33 < 0.0) {
        return Err(GeometryError::UnboundedConic(
            "ellipsoid intersects the principal plane",
        ));
    }
    let n = m / c33;
    let du = n[(0, 2)] * n[(0, 2)] - n[(0, 0)];
    let dv = n[(1, 2)] * n[(1, 2)] - n[(1, 1)];
    if du < 0.0 || dv < 0.0 {
        return Err(GeometryError::UnboundedConic("negative discriminant"));
    }
    let (su, sv) = (du.sqrt(), dv.sqrt());
    Ok(BBox2D::new(
        n[(0, 2)] + su,
        n[(1, 2)] + sv,
        n[(0, 2)] - su,
        n[(1, 2)] - sv,
    ))
}

/// `max(0, sqrt(p^T Q p + 1) - 1)` with `Q` the primal quadric.
///
/// For a point outside the surface this is `|p* p| / |o p*|`, where `o` is
/// the center and `p*` the surface crossing of the segment `o p`.
pub fn point_quadric_error(q: &DualQuadric, p: &Vector3<f64>) -> Result<f64> {
    let (c, s_inv) = q.centered_shape()?;
    let d = p - c;
    Ok((d.dot(&(s_inv * d)).max(0.0).sqrt() - 1.0).max(0.0))
}

/// Pinhole projection of a world point into the camera at pose `cam`.
pub fn project_point(k: &CameraIntrinsics, cam: &RigidPose, p: &Vector3<f64>) -> Result<Vector2<f64>> {
    let pc = cam.inverse().transform_point(p);
    if pc.z <= 1e-9 {
        return Err(GeometryError::BehindCamera { depth: pc.z });
    }
    Ok(Vector2::new(
        k.fx * pc.x / pc.z + k.cx,
        k.fy * pc.y / pc.z + k.cy,
    ))
}

/// Covariance-based oriented bounding box.
///
/// Axes are the covariance eigenvectors ordered by descending eigenvalue;
/// extents are the min/max of the points projected on each axis. Axes whose
/// eigenvalues tie are chosen as close to the world axes as possible so the
/// output is deterministic.
pub fn fit_obb(points: &[Vector3<f64>]) -> Result<OrientedBox> {
    fit_obb_with(points, &GeometryConfig::default())
}

pub fn fit_obb_with(points: &[Vector3<f64>], cfg: &GeometryConfig) -> Result<OrientedBox> {
    if points.is_empty() {
        return Err(GeometryError::EmptyInput);
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |acc, p| acc + p) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n;

    let axes = principal_axes(&cov, cfg.tolerance);

    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        let local = axes.transpose() * (p - mean);
        lo = lo.inf(&local);
        hi = hi.sup(&local);
    }
    let half = (hi - lo) * 0.5;
    let mid = (hi + lo) * 0.5;
    let center = mean + axes * mid;
    Ok(OrientedBox {
        pose: RigidPose::new(Rotation::from_matrix(&axes), center),
        half_extents: half,
    })
}

/// Orthonormal, right-handed eigenbasis of a covariance matrix with
/// deterministic handling of signs and repeated eigenvalues.
fn principal_axes(cov: &Matrix3<f64>, tol: f64) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(*cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs: Vec<Vector3<f64>> = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();

    let scale = vals[0].abs().max(1.0);
    let tie = |a: f64, b: f64| (a - b).abs() <= tol * scale;

    let mut axes: Vec<Vector3<f64>> = if tie(vals[0], vals[2]) {
        vec![Vector3::x(), Vector3::y(), Vector3::z()]
    } else if tie(vals[0], vals[1]) {
        let (a, b) = plane_axes_near_world(&vecs[2]);
        vec![a, b, vecs[2]]
    } else if tie(vals[1], vals[2]) {
        let (a, b) = plane_axes_near_world(&vecs[0]);
        vec![vecs[0], a, b]
    } else {
        vecs
    };

    for a in axes.iter_mut() {
        let imax = a.iamax();
        if a[imax] < 0.0 {
            *a = -*a;
        }
    }
    let mut m = Matrix3::from_columns(&axes);
    if m.determinant() < 0.0 {
        let c = -m.column(2);
        m.set_column(2, &c);
    }
    m
}

/// Two orthonormal axes spanning the plane orthogonal to `normal`, the
/// first being the normalized projection of the world axis that projects
/// longest onto the plane.
fn plane_axes_near_world(normal: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let world = [Vector3::x(), Vector3::y(), Vector3::z()];
    let mut best = world[0] - normal * normal.dot(&world[0]);
    for w in &world[1..] {
        let proj = w - normal * normal.dot(w);
        if proj.norm() > best.norm() + 1e-12 {
            best = proj;
        }
    }
    let first = best.normalize();
    let second = normal.cross(&first).normalize();
    (first, second)
}
