use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, Matrix2, Matrix4, SVector, SymmetricEigen, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{OptimizerError, Result};
use crate::geometry::{BBox2D, CameraIntrinsics, Ellipsoid, RigidPose, Rotation};

/// Default bounding-box measurement deviation, pixels.
pub const BBOX_SIGMA_PX: f64 = 2.0;
/// Default keypoint measurement deviation, pixels.
pub const PIXEL_SIGMA_PX: f64 = 1.0;
/// Default object–point deviation (dimensionless ratio).
pub const OBJECT_POINT_SIGMA: f64 = 0.1;

/// Unconstrained ellipsoid parameters: axis-angle, translation, log semi-axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadricParams {
    pub rotation_log: Vector3<f64>,
    pub translation: Vector3<f64>,
    pub log_semi_axes: Vector3<f64>,
}

impl QuadricParams {
    pub fn from_ellipsoid(e: &Ellipsoid) -> Self {
        Self {
            rotation_log: e.pose.rotation.axis_angle(),
            translation: e.pose.translation,
            log_semi_axes: e.semi_axes.map(f64::ln),
        }
    }

    pub fn to_ellipsoid(&self) -> Ellipsoid {
        Ellipsoid {
            pose: RigidPose::new(Rotation::from_axis_angle(&self.rotation_log), self.translation),
            semi_axes: self.log_semi_axes.map(f64::exp),
        }
    }

    pub fn to_vector(&self) -> SVector<f64, 9> {
        let mut v = SVector::<f64, 9>::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.rotation_log);
        v.fixed_rows_mut::<3>(3).copy_from(&self.translation);
        v.fixed_rows_mut::<3>(6).copy_from(&self.log_semi_axes);
        v
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            rotation_log: Vector3::new(v[0], v[1], v[2]),
            translation: Vector3::new(v[3], v[4], v[5]),
            log_semi_axes: Vector3::new(v[6], v[7], v[8]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Observation {
    BBox {
        frame_id: u64,
        object_id: u64,
        bbox: BBox2D,
        info: Matrix4<f64>,
    },
    Point {
        frame_id: u64,
        point_id: u64,
        pixel: Vector2<f64>,
        info: Matrix2<f64>,
    },
    ObjectPoint {
        object_id: u64,
        point_id: u64,
        info: f64,
    },
}

/// Information matrices used when none are given.
pub fn default_info() -> (Matrix4<f64>, Matrix2<f64>, f64) {
    (
        Matrix4::identity() / (BBOX_SIGMA_PX * BBOX_SIGMA_PX),
        Matrix2::identity() / (PIXEL_SIGMA_PX * PIXEL_SIGMA_PX),
        1.0 / (OBJECT_POINT_SIGMA * OBJECT_POINT_SIGMA),
    )
}

impl Observation {
    pub fn bbox(frame_id: u64, object_id: u64, bbox: BBox2D) -> Self {
        Observation::BBox {
            frame_id,
            object_id,
            bbox,
            info: default_info().0,
        }
    }

    pub fn point(frame_id: u64, point_id: u64, pixel: Vector2<f64>) -> Self {
        Observation::Point {
            frame_id,
            point_id,
            pixel,
            info: default_info().1,
        }
    }

    pub fn object_point(object_id: u64, point_id: u64) -> Self {
        Observation::ObjectPoint {
            object_id,
            point_id,
            info: default_info().2,
        }
    }

    pub(crate) fn info_dmatrix(&self) -> DMatrix<f64> {
        match self {
            Observation::BBox { info, .. } => DMatrix::from_column_slice(4, 4, info.as_slice()),
            Observation::Point { info, .. } => DMatrix::from_column_slice(2, 2, info.as_slice()),
            Observation::ObjectPoint { info, .. } => DMatrix::from_element(1, 1, *info),
        }
    }

    pub(crate) fn variables(&self) -> Vec<VariableId> {
        match *self {
            Observation::BBox { frame_id, object_id, .. } => {
                vec![VariableId::Pose(frame_id), VariableId::Quadric(object_id)]
            }
            Observation::Point { frame_id, point_id, .. } => {
                vec![VariableId::Pose(frame_id), VariableId::Point(point_id)]
            }
            Observation::ObjectPoint { object_id, point_id, .. } => {
                vec![VariableId::Quadric(object_id), VariableId::Point(point_id)]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VariableId {
    Pose(u64),
    Quadric(u64),
    Point(u64),
}

impl VariableId {
    pub fn dim(&self) -> usize {
        match self {
            VariableId::Pose(_) => 6,
            VariableId::Quadric(_) => 9,
            VariableId::Point(_) => 3,
        }
    }
}

impl std::fmt::Display for VariableId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VariableId::Pose(i) => write!(f, "pose {i}"),
            VariableId::Quadric(i) => write!(f, "quadric {i}"),
            VariableId::Point(i) => write!(f, "point {i}"),
        }
    }
}

/// Variables, observations and the fixed-variable mask of a joint problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub intrinsics: CameraIntrinsics,
    pub poses: BTreeMap<u64, RigidPose>,
    pub quadrics: BTreeMap<u64, QuadricParams>,
    pub points: BTreeMap<u64, Vector3<f64>>,
    pub observations: Vec<Observation>,
    #[serde(default)]
    pub fixed: BTreeSet<VariableId>,
}

impl Problem {
    pub fn new(intrinsics: CameraIntrinsics) -> Self {
        Self {
            intrinsics,
            poses: BTreeMap::new(),
            quadrics: BTreeMap::new(),
            points: BTreeMap::new(),
            observations: Vec::new(),
            fixed: BTreeSet::new(),
        }
    }

    pub fn fix(&mut self, v: VariableId) {
        self.fixed.insert(v);
    }

    pub fn is_fixed(&self, v: &VariableId) -> bool {
        self.fixed.contains(v)
    }

    fn exists(&self, v: &VariableId) -> bool {
        match v {
            VariableId::Pose(i) => self.poses.contains_key(i),
            VariableId::Quadric(i) => self.quadrics.contains_key(i),
            VariableId::Point(i) => self.points.contains_key(i),
        }
    }

    /// Checks references, information matrices and gauge fixing.
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        for (index, obs) in self.observations.iter().enumerate() {
            for v in obs.variables() {
                if !self.exists(&v) {
                    let (what, id) = match v {
                        VariableId::Pose(i) => ("pose", i),
                        VariableId::Quadric(i) => ("quadric", i),
                        VariableId::Point(i) => ("point", i),
                    };
                    return Err(OptimizerError::MissingVariable { index, what, id });
                }
            }
            let info = obs.info_dmatrix();
            let asym = (&info - info.transpose()).amax();
            let scale = info.amax().max(1.0);
            let min_eig = SymmetricEigen::new(info.clone()).eigenvalues.min();
            if asym > 1e-9 * scale || min_eig < -1e-9 * scale || info.iter().any(|v| !v.is_finite()) {
                return Err(OptimizerError::InvalidInformation { index });
            }
        }
        if !self.poses.keys().any(|i| self.is_fixed(&VariableId::Pose(*i))) {
            return Err(OptimizerError::GaugeNotFixed);
        }
        Ok(())
    }

    /// Variables referenced by at least one observation.
    pub fn constrained_variables(&self) -> BTreeSet<VariableId> {
        self.observations.iter().flat_map(|o| o.variables()).collect()
    }

    pub fn all_variables(&self) -> Vec<VariableId> {
        self.poses
            .keys()
            .map(|i| VariableId::Pose(*i))
            .chain(self.quadrics.keys().map(|i| VariableId::Quadric(*i)))
            .chain(self.points.keys().map(|i| VariableId::Point(*i)))
            .collect()
    }

    pub fn ellipsoid(&self, id: u64) -> Option<Ellipsoid> {
        self.quadrics.get(&id).map(QuadricParams::to_ellipsoid)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> std::result::Result<Self, String> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        fs::write(path, self.to_json())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_problem() -> Problem {
        let mut p = Problem::new(CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap());
        p.poses.insert(0, RigidPose::identity());
        p.points.insert(7, Vector3::new(0.0, 0.0, 4.0));
        p.quadrics.insert(
            3,
            QuadricParams::from_ellipsoid(&Ellipsoid::sphere(Vector3::new(0.0, 0.0, 4.0), 0.5).unwrap()),
        );
        p.observations.push(Observation::point(0, 7, Vector2::new(320.0, 240.0)));
        p.observations.push(Observation::object_point(3, 7));
        p.fix(VariableId::Pose(0));
        p
    }

    #[test]
    fn quadric_params_round_trip() {
        let e = Ellipsoid::new(
            RigidPose::new(Rotation::from_axis_angle(&Vector3::new(0.2, -0.4, 1.0)), Vector3::new(1.0, 2.0, 3.0)),
            Vector3::new(0.7, 0.3, 0.2),
        )
        .unwrap();
        let back = QuadricParams::from_ellipsoid(&e).to_ellipsoid();
        assert_relative_eq!(back.semi_axes, e.semi_axes, epsilon = 1e-12);
        assert!(back.pose.rotation.angle_to(&e.pose.rotation) < 1e-12);
        let v = QuadricParams::from_ellipsoid(&e).to_vector();
        assert_eq!(QuadricParams::from_slice(v.as_slice()), QuadricParams::from_ellipsoid(&e));
    }

    #[test]
    fn validation() {
        let p = small_problem();
        p.validate().unwrap();

        let mut free = p.clone();
        free.fixed.clear();
        assert!(matches!(free.validate(), Err(OptimizerError::GaugeNotFixed)));

        let mut dangling = p.clone();
        dangling.observations.push(Observation::point(0, 99, Vector2::zeros()));
        assert!(matches!(
            dangling.validate(),
            Err(OptimizerError::MissingVariable { what: "point", id: 99, .. })
        ));

        let mut bad_info = p.clone();
        bad_info.observations.push(Observation::ObjectPoint {
            object_id: 3,
            point_id: 7,
            info: -1.0,
        });
        assert!(matches!(bad_info.validate(), Err(OptimizerError::InvalidInformation { index: 2 })));
    }

    #[test]
    fn json_round_trip() {
        let p = small_problem();
        let back = Problem::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
    }
}
