//! Synthetic scenes with a known metric scale.
//!
//! [`generate_scene`] places labeled ellipsoids, surface and background
//! points and a camera trajectory in metric units. [`observe`] turns a
//! scene into what a monocular mapper would hand the scale estimator: an
//! unscaled map (everything divided by the true scale, with optional
//! dimension noise), per-frame detections and keypoint observations.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{Trajectory, EvalError};
use crate::geometry::{
    conic_bbox, ellipsoid_to_dual_quadric, project_point, project_quadric, BBox2D, CameraIntrinsics, Ellipsoid,
    RigidPose, Rotation,
};
use crate::optimizer::{Detection, Observation, Problem, QuadricParams, VariableId};
use crate::priors::{DimensionPrior, PriorRepository, SizePrior};
use crate::scale::ObjectEstimate;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("class {0:?} has no size prior")]
    UnknownClass(String),
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("invalid noise config: {0}")]
    InvalidNoise(String),
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryKind {
    /// Circle around the arena, looking at its center.
    Orbit,
    /// Straight line along +x, looking forward.
    Straight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub name: String,
    pub classes: Vec<String>,
    pub num_objects: usize,
    pub trajectory: TrajectoryKind,
    pub num_keyframes: usize,
    /// Seconds between keyframes.
    pub frame_interval: f64,
    pub true_scale: f64,
    /// Object size spread as a fraction of the prior deviation. Zero puts
    /// every object exactly at its prior means.
    pub size_spread: f64,
    /// Orbit: half-width of the square object arena. Straight: road length.
    pub arena: f64,
    /// Orbit radius, or lateral offset of objects from the road.
    pub camera_distance: f64,
    pub camera_height: f64,
    pub points_per_object: usize,
    pub background_points: usize,
    pub intrinsics: CameraIntrinsics,
    pub image_width: f64,
    pub image_height: f64,
}

impl SceneSpec {
    /// Twenty household objects viewed from an orbit.
    pub fn indoor() -> Self {
        Self {
            name: "indoor".into(),
            classes: ["book", "bottle", "bowl", "chair", "cup", "keyboard", "laptop", "monitor"]
                .map(String::from)
                .to_vec(),
            num_objects: 20,
            trajectory: TrajectoryKind::Orbit,
            num_keyframes: 60,
            frame_interval: 0.1,
            true_scale: 2.37,
            size_spread: 0.0,
            arena: 1.2,
            camera_distance: 4.5,
            camera_height: 1.6,
            points_per_object: 30,
            background_points: 100,
            intrinsics: CameraIntrinsics {
                fx: 500.0,
                fy: 500.0,
                cx: 320.0,
                cy: 240.0,
            },
            image_width: 640.0,
            image_height: 480.0,
        }
    }

    /// Parked cars along both sides of a straight road.
    pub fn outdoor() -> Self {
        Self {
            name: "outdoor".into(),
            classes: vec!["car".into()],
            num_objects: 12,
            trajectory: TrajectoryKind::Straight,
            num_keyframes: 60,
            frame_interval: 0.1,
            true_scale: 2.37,
            size_spread: 0.0,
            arena: 120.0,
            camera_distance: 4.0,
            camera_height: 1.6,
            points_per_object: 40,
            background_points: 150,
            intrinsics: CameraIntrinsics {
                fx: 500.0,
                fy: 500.0,
                cx: 320.0,
                cy: 240.0,
            },
            image_width: 640.0,
            image_height: 480.0,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "indoor" => Some(Self::indoor()),
            "outdoor" => Some(Self::outdoor()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SimError::InvalidSpec(m.to_string()));
        if self.classes.is_empty() {
            return bad("at least one class is required");
        }
        if self.num_keyframes == 0 {
            return bad("num_keyframes must be positive");
        }
        if !(self.true_scale > 0.0 && self.true_scale.is_finite()) {
            return bad("true_scale must be positive");
        }
        if !(self.frame_interval > 0.0) {
            return bad("frame_interval must be positive");
        }
        if !(self.size_spread >= 0.0) {
            return bad("size_spread must be non-negative");
        }
        if !(self.arena > 0.0 && self.camera_distance > 0.0) {
            return bad("arena and camera_distance must be positive");
        }
        if !(self.image_width > 0.0 && self.image_height > 0.0) {
            return bad("image size must be positive");
        }
        self.intrinsics
            .validate()
            .map_err(|e| SimError::InvalidSpec(e.to_string()))
    }
}

/// Where misclassified objects are relabeled to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MisclassTarget {
    /// A uniformly drawn class other than the true one.
    #[default]
    Uniform,
    /// The decoy of the true class; see [`with_decoy_priors`].
    Decoy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub bbox_sigma_px: f64,
    pub pixel_sigma_px: f64,
    /// Log-normal deviation of reconstructed object dimensions.
    pub dim_noise_frac: f64,
    pub detection_prob_mean: f64,
    pub detection_prob_std: f64,
    pub misclassification_rate: f64,
    pub misclass_target: MisclassTarget,
    /// Map-unit jitter applied to every point.
    pub point_jitter: f64,
    pub rng_seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            bbox_sigma_px: 0.0,
            pixel_sigma_px: 0.0,
            dim_noise_frac: 0.0,
            detection_prob_mean: 0.9,
            detection_prob_std: 0.0,
            misclassification_rate: 0.0,
            misclass_target: MisclassTarget::Uniform,
            point_jitter: 0.0,
            rng_seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn noise_free() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("bbox_sigma_px", self.bbox_sigma_px),
            ("pixel_sigma_px", self.pixel_sigma_px),
            ("dim_noise_frac", self.dim_noise_frac),
            ("detection_prob_std", self.detection_prob_std),
            ("point_jitter", self.point_jitter),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::InvalidNoise(format!("{name} must be non-negative")));
            }
        }
        for (name, v) in [
            ("detection_prob_mean", self.detection_prob_mean),
            ("misclassification_rate", self.misclassification_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SimError::InvalidNoise(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u64,
    #[serde(rename = "class")]
    pub class_name: String,
    pub ellipsoid: Ellipsoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePoint {
    pub id: u64,
    pub position: Vector3<f64>,
    /// Owning object, or `None` for background.
    pub owner: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub timestamp: f64,
    pub pose: RigidPose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub true_scale: f64,
    pub intrinsics: CameraIntrinsics,
    pub image_width: f64,
    pub image_height: f64,
    pub cameras: Vec<Camera>,
    pub objects: Vec<SceneObject>,
    pub points: Vec<ScenePoint>,
}

/// Where a map came from, so it can be regenerated under other seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapProvenance {
    pub spec: SceneSpec,
    pub scene_seed: u64,
    pub noise: NoiseConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnscaledMap {
    #[serde(default)]
    pub true_scale: Option<f64>,
    pub cameras: Vec<Camera>,
    pub objects: Vec<SceneObject>,
    pub points: Vec<ScenePoint>,
    pub estimates: Vec<ObjectEstimate>,
    #[serde(default)]
    pub misclassified: Vec<u64>,
    #[serde(default)]
    pub provenance: Option<MapProvenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointObservation {
    pub frame_id: u64,
    pub point_id: u64,
    pub pixel: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    pub detections: Vec<Detection>,
    pub points: Vec<PointObservation>,
}

/// Camera at `eye` looking at `target`, world z up, camera y down.
fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> RigidPose {
    let z = (target - eye).normalize();
    let x = z.cross(&Vector3::z()).normalize();
    let y = z.cross(&x);
    RigidPose::new(Rotation::from_matrix(&Matrix3::from_columns(&[x, y, z])), eye)
}

fn trajectory(spec: &SceneSpec) -> Vec<Camera> {
    let n = spec.num_keyframes;
    (0..n)
        .map(|i| {
            let f = i as f64 / n as f64;
            let pose = match spec.trajectory {
                TrajectoryKind::Orbit => {
                    let a = std::f64::consts::TAU * f;
                    let h = spec.camera_height + 0.3 * (3.0 * a).sin();
                    let eye = Vector3::new(spec.camera_distance * a.cos(), spec.camera_distance * a.sin(), h);
                    look_at(eye, Vector3::new(0.0, 0.0, 0.4))
                }
                TrajectoryKind::Straight => {
                    let eye = Vector3::new(0.5 * spec.arena * f, 0.0, spec.camera_height);
                    look_at(eye, eye + Vector3::new(10.0, 0.0, -0.5))
                }
            };
            Camera {
                timestamp: i as f64 * spec.frame_interval,
                pose,
            }
        })
        .collect()
}

/// Draw from N(mean, std) truncated to `mean ± 3 std` and to positive values.
fn truncated_draw(rng: &mut ChaCha8Rng, prior: &DimensionPrior, spread: f64) -> f64 {
    let sd = prior.std * spread;
    if sd == 0.0 {
        return prior.mean;
    }
    let normal = Normal::new(prior.mean, sd).expect("finite deviation");
    for _ in 0..1000 {
        let v = normal.sample(rng);
        if v > 0.0 && (v - prior.mean).abs() <= 3.0 * sd {
            return v;
        }
    }
    prior.mean
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let [x, y, z]: [f64; 3] = UnitSphere.sample(rng);
    Vector3::new(x, y, z)
}

/// Builds a metric scene. Deterministic in `(spec, seed)`.
pub fn generate_scene(spec: &SceneSpec, priors: &PriorRepository, seed: u64) -> Result<Scene> {
    spec.validate()?;
    for c in &spec.classes {
        if !priors.contains(c) {
            return Err(SimError::UnknownClass(c.clone()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut objects = Vec::with_capacity(spec.num_objects);
    for id in 0..spec.num_objects as u64 {
        let class = spec.classes[rng.random_range(0..spec.classes.len())].clone();
        let prior = priors.lookup(&class).expect("checked above");
        let dims = prior.dims.map(|d| truncated_draw(&mut rng, &d, spec.size_spread));
        let semi = Vector3::new(dims[0], dims[1], dims[2]) / 2.0;
        let (center, yaw) = match spec.trajectory {
            TrajectoryKind::Orbit => (
                Vector3::new(
                    rng.random_range(-spec.arena..spec.arena),
                    rng.random_range(-spec.arena..spec.arena),
                    semi.z + rng.random_range(0.0..0.8),
                ),
                rng.random_range(0.0..std::f64::consts::TAU),
            ),
            TrajectoryKind::Straight => {
                let side = if id % 2 == 0 { 1.0 } else { -1.0 };
                (
                    Vector3::new(
                        rng.random_range(0.15 * spec.arena..spec.arena),
                        side * (spec.camera_distance + rng.random_range(-0.5..0.5)),
                        semi.z,
                    ),
                    rng.random_range(-0.2..0.2),
                )
            }
        };
        let pose = RigidPose::new(Rotation::from_axis_angle(&(Vector3::z() * yaw)), center);
        let ellipsoid = Ellipsoid::new(pose, semi).map_err(|e| SimError::InvalidSpec(e.to_string()))?;
        objects.push(SceneObject {
            id,
            class_name: class,
            ellipsoid,
        });
    }

    let mut points = Vec::new();
    let mut next_id = 0u64;
    for obj in &objects {
        for _ in 0..spec.points_per_object {
            let u = unit_vector(&mut rng);
            points.push(ScenePoint {
                id: next_id,
                position: obj.ellipsoid.surface_point(&u),
                owner: Some(obj.id),
            });
            next_id += 1;
        }
    }
    let (bg_center, bg_inner) = match spec.trajectory {
        TrajectoryKind::Orbit => (Vector3::new(0.0, 0.0, 0.0), spec.camera_distance + 2.0),
        TrajectoryKind::Straight => (Vector3::new(0.5 * spec.arena, 0.0, 0.0), 0.6 * spec.arena),
    };
    for _ in 0..spec.background_points {
        let u = unit_vector(&mut rng);
        let r = bg_inner * rng.random_range(1.0..1.3);
        points.push(ScenePoint {
            id: next_id,
            position: bg_center + u * r,
            owner: None,
        });
        next_id += 1;
    }

    Ok(Scene {
        true_scale: spec.true_scale,
        intrinsics: spec.intrinsics,
        image_width: spec.image_width,
        image_height: spec.image_height,
        cameras: trajectory(spec),
        objects,
        points,
    })
}

impl Scene {
    fn in_image(&self, px: &Vector2<f64>) -> bool {
        (0.0..=self.image_width).contains(&px.x) && (0.0..=self.image_height).contains(&px.y)
    }

    /// Noise-free bounding box of `obj` in camera `cam`, if the object is in
    /// front of the camera and fully inside the image.
    pub fn visible_bbox(&self, cam: &RigidPose, obj: &Ellipsoid) -> Option<BBox2D> {
        let depth = cam.inverse().transform_point(&obj.center()).z;
        if depth <= 0.0 {
            return None;
        }
        let conic = project_quadric(&ellipsoid_to_dual_quadric(obj), &self.intrinsics, cam).ok()?;
        let b = conic_bbox(&conic).ok()?;
        let inside = self.in_image(&Vector2::new(b.u_min, b.v_min)) && self.in_image(&Vector2::new(b.u_max, b.v_max));
        inside.then_some(b)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_json())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| SimError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Adds, for every class `c`, a class `"{c}~decoy"` whose means and
/// deviations are `factor` times those of `c`.
pub fn with_decoy_priors(priors: &PriorRepository, factor: f64) -> PriorRepository {
    let mut out = priors.clone();
    for p in priors.iter() {
        let dims = p.dims.map(|d| DimensionPrior::new(d.mean * factor, d.std * factor));
        out.insert(SizePrior::new(decoy_name(&p.class_name), dims).expect("scaled prior stays valid"));
    }
    out
}

pub fn decoy_name(class: &str) -> String {
    format!("{class}~decoy")
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    }
}

/// Produces the unscaled map and the measurements of `scene`.
///
/// Exactly `round(rate * n)` objects are relabeled. Detections carry the
/// (possibly wrong) label and the true object id.
pub fn observe(scene: &Scene, noise: &NoiseConfig, priors: &PriorRepository) -> Result<(UnscaledMap, Observations)> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.rng_seed);
    let s = scene.true_scale;

    let n = scene.objects.len();
    let n_wrong = (noise.misclassification_rate * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut wrong: Vec<usize> = order[..n_wrong].to_vec();
    wrong.sort_unstable();
    let mut labels: Vec<String> = scene.objects.iter().map(|o| o.class_name.clone()).collect();
    for &i in &wrong {
        labels[i] = match noise.misclass_target {
            MisclassTarget::Decoy => decoy_name(&labels[i]),
            MisclassTarget::Uniform => {
                let others: Vec<&str> = priors.class_names().filter(|c| *c != labels[i]).collect();
                if others.is_empty() {
                    return Err(SimError::InvalidNoise("no other class to relabel to".into()));
                }
                others[rng.random_range(0..others.len())].to_string()
            }
        };
    }

    let mut detections = Vec::new();
    let mut probs: Vec<Vec<f64>> = vec![Vec::new(); n];
    for (fid, cam) in scene.cameras.iter().enumerate() {
        for (i, obj) in scene.objects.iter().enumerate() {
            let Some(b) = scene.visible_bbox(&cam.pose, &obj.ellipsoid) else {
                continue;
            };
            let mut v = b.to_vector();
            for k in 0..4 {
                v[k] += gaussian(&mut rng, noise.bbox_sigma_px);
            }
            let p = (noise.detection_prob_mean + gaussian(&mut rng, noise.detection_prob_std)).clamp(0.0, 1.0);
            probs[i].push(p);
            detections.push(Detection {
                frame_id: fid as u64,
                object_id: obj.id,
                class_name: labels[i].clone(),
                bbox: BBox2D::from_vector(&v),
                probability: p,
            });
        }
    }

    let mut point_obs = Vec::new();
    for (fid, cam) in scene.cameras.iter().enumerate() {
        for pt in &scene.points {
            let Ok(px) = project_point(&scene.intrinsics, &cam.pose, &pt.position) else {
                continue;
            };
            if !scene.in_image(&px) {
                continue;
            }
            let jitter = Vector2::new(
                gaussian(&mut rng, noise.pixel_sigma_px),
                gaussian(&mut rng, noise.pixel_sigma_px),
            );
            point_obs.push(PointObservation {
                frame_id: fid as u64,
                point_id: pt.id,
                pixel: px + jitter,
            });
        }
    }

    let cameras = scene
        .cameras
        .iter()
        .map(|c| Camera {
            timestamp: c.timestamp,
            pose: c.pose.scaled(1.0 / s),
        })
        .collect();
    let mut objects = Vec::with_capacity(n);
    let mut estimates = Vec::with_capacity(n);
    for (i, obj) in scene.objects.iter().enumerate() {
        let mut e = obj.ellipsoid.scaled(1.0 / s);
        if noise.dim_noise_frac > 0.0 {
            for k in 0..3 {
                e.semi_axes[k] *= gaussian(&mut rng, noise.dim_noise_frac).exp();
            }
        }
        let owned = scene.points.iter().filter(|p| p.owner == Some(obj.id)).count();
        estimates.push(ObjectEstimate::from_ellipsoid(obj.id, labels[i].clone(), &e, probs[i].clone(), owned));
        objects.push(SceneObject {
            id: obj.id,
            class_name: labels[i].clone(),
            ellipsoid: e,
        });
    }
    let points = scene
        .points
        .iter()
        .map(|p| {
            let jitter = Vector3::new(
                gaussian(&mut rng, noise.point_jitter),
                gaussian(&mut rng, noise.point_jitter),
                gaussian(&mut rng, noise.point_jitter),
            );
            ScenePoint {
                id: p.id,
                position: p.position / s + jitter,
                owner: p.owner,
            }
        })
        .collect();

    let map = UnscaledMap {
        true_scale: Some(s),
        cameras,
        objects,
        points,
        estimates,
        misclassified: wrong.iter().map(|&i| scene.objects[i].id).collect(),
        provenance: None,
    };
    Ok((
        map,
        Observations {
            detections,
            points: point_obs,
        },
    ))
}

/// Generates a scene and observes it, recording provenance on the map.
pub fn simulate(
    spec: &SceneSpec,
    noise: &NoiseConfig,
    priors: &PriorRepository,
    scene_seed: u64,
) -> Result<(Scene, UnscaledMap, Observations)> {
    let scene = generate_scene(spec, priors, scene_seed)?;
    let (mut map, obs) = observe(&scene, noise, priors)?;
    map.provenance = Some(MapProvenance {
        spec: spec.clone(),
        scene_seed,
        noise: noise.clone(),
    });
    Ok((scene, map, obs))
}

impl UnscaledMap {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("map serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_json())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }

    /// Joint problem over this map's cameras, objects and points.
    ///
    /// Every residual is invariant to a common similarity transform, so
    /// fixing one camera leaves the map scale free. The first two cameras
    /// are held fixed to pin it.
    pub fn to_problem(&self, intrinsics: &CameraIntrinsics, obs: &Observations) -> Problem {
        let mut p = Problem::new(*intrinsics);
        for (i, c) in self.cameras.iter().enumerate() {
            p.poses.insert(i as u64, c.pose);
        }
        for o in &self.objects {
            p.quadrics.insert(o.id, QuadricParams::from_ellipsoid(&o.ellipsoid));
        }
        for pt in &self.points {
            p.points.insert(pt.id, pt.position);
        }
        for d in &obs.detections {
            p.observations.push(Observation::bbox(d.frame_id, d.object_id, d.bbox));
        }
        for z in &obs.points {
            p.observations.push(Observation::point(z.frame_id, z.point_id, z.pixel));
        }
        for pt in &self.points {
            if let Some(owner) = pt.owner {
                p.observations.push(Observation::object_point(owner, pt.id));
            }
        }
        for i in 0..self.cameras.len().min(2) {
            p.fix(VariableId::Pose(i as u64));
        }
        p
    }
}

impl Observations {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("observations serialize")
    }
}

/// Ground-truth and estimated trajectories for the given camera lists.
pub fn export_trajectories(
    truth: &[Camera],
    estimate: &[Camera],
) -> std::result::Result<(Trajectory, Trajectory), EvalError> {
    let to_traj = |cams: &[Camera]| Trajectory::from_pairs(cams.iter().map(|c| (c.timestamp, c.pose)));
    Ok((to_traj(truth)?, to_traj(estimate)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::builtin_sample_priors;
    use crate::scale::{run_pipeline, ConfidenceWeights};
    use approx::assert_relative_eq;

    fn small_spec() -> SceneSpec {
        SceneSpec {
            num_objects: 6,
            num_keyframes: 12,
            points_per_object: 8,
            background_points: 10,
            ..SceneSpec::indoor()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let priors = builtin_sample_priors();
        let a = generate_scene(&SceneSpec::indoor(), &priors, 7).unwrap();
        let b = generate_scene(&SceneSpec::indoor(), &priors, 7).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let c = generate_scene(&SceneSpec::indoor(), &priors, 8).unwrap();
        assert_ne!(a.to_json(), c.to_json());
    }

    #[test]
    fn unknown_class_rejected() {
        let spec = SceneSpec {
            classes: vec!["zeppelin".into()],
            ..small_spec()
        };
        assert!(matches!(
            generate_scene(&spec, &builtin_sample_priors(), 0),
            Err(SimError::UnknownClass(c)) if c == "zeppelin"
        ));
    }

    #[test]
    fn dims_respect_truncation() {
        let priors = builtin_sample_priors();
        let spec = SceneSpec {
            size_spread: 1.0,
            ..SceneSpec::indoor()
        };
        for seed in 0..5 {
            let scene = generate_scene(&spec, &priors, seed).unwrap();
            for o in &scene.objects {
                let p = priors.lookup(&o.class_name).unwrap();
                let d = o.ellipsoid.semi_axes * 2.0;
                for k in 0..3 {
                    assert!((d[k] - p.dims[k].mean).abs() <= 3.0 * p.dims[k].std + 1e-12);
                    assert!(d[k] > 0.0);
                }
            }
        }
    }

    #[test]
    fn noise_free_detections_match_projection() {
        let priors = builtin_sample_priors();
        let mut spec = small_spec();
        spec.true_scale = 1.0;
        let scene = generate_scene(&spec, &priors, 3).unwrap();
        let (_, obs) = observe(&scene, &NoiseConfig::noise_free(), &priors).unwrap();
        assert!(!obs.detections.is_empty());
        for d in &obs.detections {
            let cam = &scene.cameras[d.frame_id as usize].pose;
            let obj = &scene.objects[d.object_id as usize].ellipsoid;
            assert_eq!(Some(d.bbox), scene.visible_bbox(cam, obj));
            assert!(cam.inverse().transform_point(&obj.center()).z > 0.0);
        }
    }

    #[test]
    fn unscaled_map_divides_lengths() {
        let priors = builtin_sample_priors();
        let mut spec = small_spec();
        spec.true_scale = 2.0;
        let scene = generate_scene(&spec, &priors, 1).unwrap();
        let (map, _) = observe(&scene, &NoiseConfig::noise_free(), &priors).unwrap();
        for (m, o) in map.objects.iter().zip(&scene.objects) {
            assert_relative_eq!(m.ellipsoid.semi_axes, o.ellipsoid.semi_axes / 2.0, epsilon = 1e-15);
        }
        for (m, o) in map.cameras.iter().zip(&scene.cameras) {
            assert_relative_eq!(m.pose.translation * 2.0, o.pose.translation, epsilon = 1e-12);
        }
    }

    #[test]
    fn misclassification_count_is_exact() {
        let priors = builtin_sample_priors();
        let spec = SceneSpec {
            num_objects: 100,
            ..small_spec()
        };
        let scene = generate_scene(&spec, &priors, 5).unwrap();
        let noise = NoiseConfig {
            misclassification_rate: 0.1,
            rng_seed: 11,
            ..NoiseConfig::default()
        };
        let (map, _) = observe(&scene, &noise, &priors).unwrap();
        assert_eq!(map.misclassified.len(), 10);
        let relabeled = map
            .objects
            .iter()
            .zip(&scene.objects)
            .filter(|(m, o)| m.class_name != o.class_name)
            .count();
        assert_eq!(relabeled, 10);
        let (again, _) = observe(&scene, &noise, &priors).unwrap();
        assert_eq!(again.misclassified, map.misclassified);
    }

    #[test]
    fn noise_free_pipeline_recovers_scale() {
        let priors = builtin_sample_priors();
        for seed in 0..3 {
            let scene = generate_scene(&SceneSpec::indoor(), &priors, seed).unwrap();
            let (map, _) = observe(&scene, &NoiseConfig::noise_free(), &priors).unwrap();
            let sol = run_pipeline(&map.estimates, &priors, &ConfidenceWeights::default()).unwrap();
            assert_relative_eq!(sol.scale, 2.37, max_relative = 1e-9);
        }
    }

    #[test]
    fn outdoor_is_cars_only() {
        let priors = builtin_sample_priors();
        let scene = generate_scene(&SceneSpec::outdoor(), &priors, 0).unwrap();
        assert!(scene.objects.iter().all(|o| o.class_name == "car"));
        let (map, _) = observe(&scene, &NoiseConfig::noise_free(), &priors).unwrap();
        assert!(map.estimates.iter().filter(|e| e.num_detections > 0).count() >= 3);
    }

    #[test]
    fn scene_json_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let scene = generate_scene(&small_spec(), &builtin_sample_priors(), 2).unwrap();
        let path = dir.path().join("scene.json");
        scene.save(&path).unwrap();
        assert_eq!(Scene::load(&path).unwrap(), scene);

        let text = scene.to_json();
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(Scene::load(&path), Err(SimError::Parse { .. })));

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["extra_field"] = serde_json::json!({"anything": 1});
        fs::write(&path, v.to_string()).unwrap();
        assert_eq!(Scene::load(&path).unwrap(), scene);
    }

    #[test]
    fn trajectories_export() {
        let priors = builtin_sample_priors();
        let scene = generate_scene(&small_spec(), &priors, 4).unwrap();
        let (gt, est) = export_trajectories(&scene.cameras, &scene.cameras).unwrap();
        assert_eq!(crate::eval::format_tum(&gt), crate::eval::format_tum(&est));
        let (gt, _) = export_trajectories(&[], &[]).unwrap();
        assert!(crate::eval::format_tum(&gt).starts_with('#'));
    }
}
