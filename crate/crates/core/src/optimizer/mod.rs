//! Joint bundle adjustment over camera poses, ellipsoid objects and map
//! points, plus object initialization from associated map points.
//!
//! Three residual families enter the objective, each whitened by its
//! information matrix:
//!
//! * camera–object: predicted minus measured bounding box, `(u_max, v_max, u_min, v_min)`
//! * camera–point: pinhole reprojection minus measured pixel
//! * object–point: `max(0, sqrt(pᵀQp + 1) - 1)`
//!
//! The solver is a dense Levenberg–Marquardt with Marquardt (diagonal)
//! damping. Derivatives default to central finite differences; analytic
//! Jacobians exist for the camera–point family and for the point block of
//! the object–point family.

mod init;
mod jacobian;
mod lm;
mod problem;
mod residuals;

use thiserror::Error;

pub use init::{associate_points, cluster_filter, cluster_filter_indices, init_quadric_from_obb, Detection};
pub use jacobian::{
    camera_point_jacobians, numeric_jacobian, object_point_point_jacobian, JacobianMode,
};
pub use lm::{solve, FamilyChi2, SolveReport, SolverConfig};
pub use problem::{
    default_info, Observation, Problem, QuadricParams, VariableId, BBOX_SIGMA_PX, OBJECT_POINT_SIGMA,
    PIXEL_SIGMA_PX,
};
pub use residuals::{residual_camera_object, residual_camera_point, residual_object_point};

use crate::geometry::GeometryError;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("no camera pose is held fixed; the problem has a free gauge")]
    GaugeNotFixed,
    #[error("observation {index} references missing {what} {id}")]
    MissingVariable {
        index: usize,
        what: &'static str,
        id: u64,
    },
    #[error("observation {index}: information matrix is not symmetric positive semi-definite")]
    InvalidInformation { index: usize },
    #[error("damped normal equations are singular at maximum damping")]
    SingularNormalEquations,
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("need at least 4 points to initialize an object, got {0}")]
    TooFewPoints(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, OptimizerError>;
