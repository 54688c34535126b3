//! Metric scale recovery for monocular object maps.
//!
//! Objects are reconstructed as ellipsoids (dual quadrics); their sorted
//! dimensions are compared against per-class size priors, and a global
//! scale factor is recovered by a confidence-weighted least-squares solve
//! after boxplot outlier rejection.
//!
//! Modules:
//!
//! * [`geometry`]: ellipsoids, dual quadrics, conic projection, bounding boxes, OBB fitting
//! * [`priors`]: per-class size prior repository and its JSON file format
//! * [`scale`]: dimension selection, confidence model, outlier elimination, scale solve
//! * [`optimizer`]: joint bundle adjustment over poses, quadrics and points
//! * [`sim`]: synthetic scenes with injected ground-truth scale
//! * [`eval`]: relative scale error, similarity alignment, ATE, TUM trajectory I/O

pub mod eval;
pub mod geometry;
pub mod optimizer;
pub mod priors;
pub mod scale;
pub mod sim;

pub use geometry::{
    BBox2D, CameraIntrinsics, DualConic, DualQuadric, Ellipsoid, OrientedBox, RigidPose, Rotation,
};
pub use priors::{DimensionPrior, PriorRepository, SizePrior};
pub use scale::{ObjectEstimate, ScaleSolution};
