use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix2x6, Matrix3, RowVector3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraIntrinsics, DualQuadric, GeometryError, RigidPose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JacobianMode {
    /// Central differences everywhere.
    #[default]
    Numeric,
    /// Closed-form blocks where available, central differences elsewhere.
    Analytic,
}

/// Central-difference Jacobian of `f` at `x` with per-coordinate step
/// `epsilon * max(1, |x_j|)`.
pub fn numeric_jacobian<F>(f: F, x: &DVector<f64>, epsilon: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    assert!(epsilon > 0.0, "finite-difference step must be positive");
    let f0 = f(x);
    let mut jac = DMatrix::zeros(f0.len(), x.len());
    let mut xp = x.clone();
    for j in 0..x.len() {
        let h = epsilon * x[j].abs().max(1.0);
        let (hi, lo) = (x[j] + h, x[j] - h);
        xp[j] = hi;
        let fp = f(&xp);
        xp[j] = lo;
        let fm = f(&xp);
        xp[j] = x[j];
        // Divide by the step actually taken after rounding.
        jac.set_column(j, &((fp - fm) / (hi - lo)));
    }
    jac
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Closed-form Jacobians of the reprojection residual with respect to the
/// pose increment `(ω, δt)` used by [`RigidPose::retract`] and to the point.
pub fn camera_point_jacobians(
    k: &CameraIntrinsics,
    pose: &RigidPose,
    point: &Vector3<f64>,
) -> Result<(Matrix2x6<f64>, Matrix2x3<f64>), GeometryError> {
    let rt = pose.rotation.matrix().transpose();
    let pc = rt * (point - pose.translation);
    if pc.z <= 1e-9 {
        return Err(GeometryError::BehindCamera { depth: pc.z });
    }
    let (x, y, z) = (pc.x, pc.y, pc.z);
    let dproj = Matrix2x3::new(
        k.fx / z, 0.0, -k.fx * x / (z * z), //
        0.0, k.fy / z, -k.fy * y / (z * z),
    );
    let mut d_pose = Matrix2x6::zeros();
    d_pose.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dproj * skew(&pc)));
    d_pose.fixed_view_mut::<2, 3>(0, 3).copy_from(&(-dproj * rt));
    Ok((d_pose, dproj * rt))
}

/// Gradient of the object–point error with respect to the point. Zero on
/// and inside the surface.
pub fn object_point_point_jacobian(q: &DualQuadric, point: &Vector3<f64>) -> Result<RowVector3<f64>, GeometryError> {
    let (c, s_inv) = q.centered_shape()?;
    let g = s_inv * (point - c);
    let root = (point - c).dot(&g).max(0.0).sqrt();
    if root <= 1.0 {
        return Ok(RowVector3::zeros());
    }
    Ok(g.transpose() / root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ellipsoid_to_dual_quadric, project_point, Ellipsoid, Rotation};
    use approx::assert_relative_eq;
    use nalgebra::Vector6;

    #[test]
    fn linear_map_jacobian() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, 7.0]);
        let a2 = a.clone();
        let f = move |x: &DVector<f64>| &a2 * x;
        let j = numeric_jacobian(&f, &DVector::from_vec(vec![0.3, -0.2, 0.1]), 1e-6);
        assert_relative_eq!(j, a, epsilon = 1e-9);
        // Far from the origin the error is dominated by rounding of f itself.
        let j = numeric_jacobian(&f, &DVector::from_vec(vec![0.3, -10.0, 2.0]), 1e-6);
        assert_relative_eq!(j, a, epsilon = 1e-8);
    }

    #[test]
    fn analytic_pinhole_matches_differences() {
        let k = CameraIntrinsics::new(520.0, 515.0, 320.0, 240.0).unwrap();
        let pose = RigidPose::new(Rotation::from_axis_angle(&Vector3::new(0.1, 0.2, -0.05)), Vector3::new(0.3, -0.2, 0.1));
        let p = Vector3::new(0.5, 0.2, 4.0);
        let (jp, jx) = camera_point_jacobians(&k, &pose, &p).unwrap();

        let f_pose = |d: &DVector<f64>| {
            let d = Vector6::from_column_slice(d.as_slice());
            let moved = pose.retract(&d.fixed_rows::<3>(0).into_owned(), &d.fixed_rows::<3>(3).into_owned());
            DVector::from_column_slice(project_point(&k, &moved, &p).unwrap().as_slice())
        };
        let num_pose = numeric_jacobian(f_pose, &DVector::zeros(6), 1e-6);
        let rel = (DMatrix::from_column_slice(2, 6, jp.as_slice()) - &num_pose).norm() / num_pose.norm();
        assert!(rel < 1e-6, "pose block relative error {rel}");

        let f_pt = |x: &DVector<f64>| {
            DVector::from_column_slice(project_point(&k, &pose, &Vector3::from_column_slice(x.as_slice())).unwrap().as_slice())
        };
        let num_pt = numeric_jacobian(f_pt, &DVector::from_column_slice(p.as_slice()), 1e-6);
        let rel = (DMatrix::from_column_slice(2, 3, jx.as_slice()) - &num_pt).norm() / num_pt.norm();
        assert!(rel < 1e-6, "point block relative error {rel}");
    }

    #[test]
    fn interior_object_point_has_zero_gradient() {
        let q = ellipsoid_to_dual_quadric(&Ellipsoid::sphere(Vector3::new(1.0, 1.0, 1.0), 2.0).unwrap());
        let g = object_point_point_jacobian(&q, &Vector3::new(1.5, 1.0, 0.5)).unwrap();
        assert_eq!(g, RowVector3::zeros());
        let f = |x: &DVector<f64>| {
            DVector::from_element(
                1,
                crate::geometry::point_quadric_error(&q, &Vector3::from_column_slice(x.as_slice())).unwrap(),
            )
        };
        let num = numeric_jacobian(f, &DVector::from_vec(vec![1.5, 1.0, 0.5]), 1e-6);
        assert_eq!(num.amax(), 0.0);
    }

    #[test]
    fn exterior_object_point_gradient() {
        let q = ellipsoid_to_dual_quadric(&Ellipsoid::sphere(Vector3::zeros(), 1.0).unwrap());
        let g = object_point_point_jacobian(&q, &Vector3::new(2.0, 0.0, 0.0)).unwrap();
        // e = |p| - 1 for the unit sphere.
        assert_relative_eq!(g, RowVector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
    }
}
