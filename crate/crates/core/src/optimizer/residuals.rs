use nalgebra::{Vector2, Vector3, Vector4};

use super::QuadricParams;
use crate::geometry::{
    conic_bbox, ellipsoid_to_dual_quadric, point_quadric_error, project_point, project_quadric, BBox2D,
    CameraIntrinsics, GeometryError, RigidPose,
};

/// Predicted minus measured box, ordered `(u_max, v_max, u_min, v_min)`.
pub fn residual_camera_object(
    pose: &RigidPose,
    quadric: &QuadricParams,
    measured: &BBox2D,
    k: &CameraIntrinsics,
) -> Result<Vector4<f64>, GeometryError> {
    let q = ellipsoid_to_dual_quadric(&quadric.to_ellipsoid());
    let predicted = conic_bbox(&project_quadric(&q, k, pose)?)?;
    Ok(predicted.to_vector() - measured.to_vector())
}

/// `π(T⁻¹ p) - z`.
pub fn residual_camera_point(
    pose: &RigidPose,
    point: &Vector3<f64>,
    measured: &Vector2<f64>,
    k: &CameraIntrinsics,
) -> Result<Vector2<f64>, GeometryError> {
    Ok(project_point(k, pose, point)? - measured)
}

pub fn residual_object_point(quadric: &QuadricParams, point: &Vector3<f64>) -> Result<f64, GeometryError> {
    point_quadric_error(&ellipsoid_to_dual_quadric(&quadric.to_ellipsoid()), point)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Ellipsoid, Rotation};
    use approx::assert_relative_eq;

    fn setup() -> (RigidPose, QuadricParams, CameraIntrinsics) {
        let pose = RigidPose::new(
            Rotation::from_axis_angle(&Vector3::new(0.02, -0.1, 0.0)),
            Vector3::new(0.2, -0.1, -0.3),
        );
        let e = Ellipsoid::new(
            RigidPose::new(Rotation::from_axis_angle(&Vector3::new(0.3, 0.1, -0.2)), Vector3::new(0.1, 0.2, 4.0)),
            Vector3::new(0.6, 0.4, 0.25),
        )
        .unwrap();
        (pose, QuadricParams::from_ellipsoid(&e), CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap())
    }

    #[test]
    fn bbox_residual_is_linear_in_measurement() {
        let (pose, q, k) = setup();
        let truth = conic_bbox(&project_quadric(&ellipsoid_to_dual_quadric(&q.to_ellipsoid()), &k, &pose).unwrap()).unwrap();
        let r0 = residual_camera_object(&pose, &q, &truth, &k).unwrap();
        assert!(r0.amax() < 1e-9);

        let mut shifted = truth;
        shifted.u_max += 1.0;
        let r1 = residual_camera_object(&pose, &q, &shifted, &k).unwrap();
        assert_relative_eq!(r1, Vector4::new(-1.0, 0.0, 0.0, 0.0), epsilon = 1e-9);

        let delta = Vector4::new(0.3, -1.7, 2.2, 0.05);
        let moved = BBox2D::from_vector(&(truth.to_vector() + delta));
        let r2 = residual_camera_object(&pose, &q, &moved, &k).unwrap();
        assert_relative_eq!(r2 - r0, -delta, epsilon = 1e-9);
    }

    #[test]
    fn point_residual_examples() {
        let k = CameraIntrinsics::new(100.0, 100.0, 0.0, 0.0).unwrap();
        let id = RigidPose::identity();
        let p = Vector3::new(1.0, 0.0, 5.0);
        assert_relative_eq!(
            residual_camera_point(&id, &p, &Vector2::zeros(), &k).unwrap(),
            Vector2::new(20.0, 0.0)
        );
        assert_relative_eq!(residual_camera_point(&id, &p, &Vector2::new(20.0, 0.0), &k).unwrap(), Vector2::zeros());
        assert_relative_eq!(
            residual_camera_point(&id, &p, &Vector2::new(21.0, 0.0), &k).unwrap(),
            Vector2::new(-1.0, 0.0)
        );
        assert!(residual_camera_point(&id, &Vector3::new(0.0, 0.0, -2.0), &Vector2::zeros(), &k).is_err());
    }

    #[test]
    fn object_point_residual_delegates() {
        let q = QuadricParams::from_ellipsoid(&Ellipsoid::sphere(Vector3::zeros(), 1.0).unwrap());
        assert_eq!(residual_object_point(&q, &Vector3::new(0.5, 0.0, 0.0)).unwrap(), 0.0);
        assert!(residual_object_point(&q, &Vector3::new(1.0, 0.0, 0.0)).unwrap() < 1e-12);
        assert_relative_eq!(residual_object_point(&q, &Vector3::new(2.0, 0.0, 0.0)).unwrap(), 1.0, epsilon = 1e-12);
    }
}
