//! Global scale estimation from object dimensions and size priors.
//!
//! Each reconstructed object contributes up to three of its sorted
//! dimensions, chosen by its shape class. Every dimension is paired with the
//! prior of the same rank and yields a local scale `mean / dim`. Local scales
//! outside the boxplot fences are dropped, and the global scale solves
//!
//! ```text
//! s* = argmin_s  Σ_i (c_i (μ_i - s d_i) / σ_i)²
//! ```
//!
//! which has the closed form `Σ w_i μ_i d_i / Σ w_i d_i²` with
//! `w_i = c_i² / σ_i²`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Ellipsoid, RigidPose};
use crate::priors::{DimensionPrior, PriorRepository, SizePrior};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScaleError {
    #[error("invalid dimensions {0:?}: expected d1 >= d2 >= d3 > 0")]
    InvalidDims([f64; 3]),
    #[error("{probs} detection probabilities for {detections} detections")]
    InconsistentTelemetry { probs: usize, detections: usize },
    #[error("detection probabilities must lie in [0, 1]")]
    InvalidProbability,
    #[error("object has no detections")]
    NoDetections,
    #[error("no dimension samples")]
    NoSamples,
    #[error("degenerate scale problem (normal-equation denominator {0:e})")]
    DegenerateProblem(f64),
    #[error("no usable objects ({unknown_class} with unknown class, {without_detections} without detections, {gated} below confidence floor)")]
    NoUsableObjects {
        unknown_class: usize,
        without_detections: usize,
        gated: usize,
    },
    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),
}

pub type Result<T> = std::result::Result<T, ScaleError>;

/// A reconstructed object as seen by the scale estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectEstimate {
    pub id: u64,
    #[serde(rename = "class")]
    pub class_name: String,
    /// Map-unit extents sorted descending.
    #[serde(rename = "dims_desc")]
    pub dims: [f64; 3],
    pub detection_probs: Vec<f64>,
    pub num_points: usize,
    pub num_detections: usize,
}

impl ObjectEstimate {
    /// Builds an estimate from an ellipsoid, sorting its extents.
    pub fn from_ellipsoid(
        id: u64,
        class_name: impl Into<String>,
        e: &Ellipsoid,
        detection_probs: Vec<f64>,
        num_points: usize,
    ) -> Self {
        let num_detections = detection_probs.len();
        Self {
            id,
            class_name: class_name.into(),
            dims: e.dims(),
            detection_probs,
            num_points,
            num_detections,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_sorted(&self.dims)?;
        if self.detection_probs.len() != self.num_detections {
            return Err(ScaleError::InconsistentTelemetry {
                probs: self.detection_probs.len(),
                detections: self.num_detections,
            });
        }
        if self.detection_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(ScaleError::InvalidProbability);
        }
        Ok(())
    }
}

fn check_sorted(d: &[f64; 3]) -> Result<()> {
    let ok = d.iter().all(|v| v.is_finite()) && d[0] >= d[1] && d[1] >= d[2] && d[2] > 0.0;
    if ok {
        Ok(())
    } else {
        Err(ScaleError::InvalidDims(*d))
    }
}

/// Linearity, planarity and scattering of a sorted dimension triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeFeatures {
    pub linearity: f64,
    pub planarity: f64,
    pub scattering: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeClass {
    PoleLike,
    DiskLike,
    General,
}

impl ShapeClass {
    /// Ranks (0 = longest) of the dimensions trusted for this shape.
    pub fn stable_ranks(self) -> &'static [usize] {
        match self {
            ShapeClass::PoleLike => &[0],
            ShapeClass::DiskLike => &[0, 1],
            ShapeClass::General => &[0, 1, 2],
        }
    }
}

pub fn shape_features(dims: &[f64; 3]) -> Result<ShapeFeatures> {
    check_sorted(dims)?;
    let [d1, d2, d3] = *dims;
    Ok(ShapeFeatures {
        linearity: (d1 - d2) / d1,
        planarity: (d2 - d3) / d1,
        scattering: d3 / d1,
    })
}

pub fn classify_shape(f: &ShapeFeatures) -> ShapeClass {
    if f.scattering < 0.3 {
        if f.linearity > 0.5 {
            return ShapeClass::PoleLike;
        }
        if f.planarity > 0.5 {
            return ShapeClass::DiskLike;
        }
    }
    ShapeClass::General
}

/// One object dimension paired with its prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionSample {
    pub object_id: u64,
    /// Rank of the dimension within the object (0 = longest).
    pub rank: usize,
    pub dim: f64,
    pub prior: DimensionPrior,
    pub confidence: f64,
}

impl DimensionSample {
    pub fn local_scale(&self) -> f64 {
        self.prior.mean / self.dim
    }

    /// Least-squares weight `c² / σ²`.
    pub fn weight(&self) -> f64 {
        (self.confidence * self.confidence) / (self.prior.std * self.prior.std)
    }
}

/// Keeps the dimensions that the object's shape class deems stable.
pub fn select_dimensions(obj: &ObjectEstimate, prior: &SizePrior, conf: f64) -> Result<Vec<DimensionSample>> {
    let class = classify_shape(&shape_features(&obj.dims)?);
    Ok(samples_for_ranks(obj, prior, conf, class.stable_ranks()))
}

fn samples_for_ranks(obj: &ObjectEstimate, prior: &SizePrior, conf: f64, ranks: &[usize]) -> Vec<DimensionSample> {
    ranks
        .iter()
        .map(|&r| DimensionSample {
            object_id: obj.id,
            rank: r,
            dim: obj.dims[r],
            prior: prior.dims[r],
            confidence: conf,
        })
        .collect()
}

/// Weights and log bases of the object confidence model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    /// Log base for the map-point term.
    pub a: f64,
    /// Log base for the visibility term.
    pub b: f64,
}

impl Default for ConfidenceWeights {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 1.0,
            w3: 1.0,
            a: 10.0,
            b: 15.0,
        }
    }
}

impl ConfidenceWeights {
    pub fn is_valid(&self) -> bool {
        [self.w1, self.w2, self.w3].iter().all(|w| *w >= 0.0)
            && self.w1 + self.w2 + self.w3 > 0.0
            && self.a > 1.0
            && self.b > 1.0
    }
}

fn clamped_log(x: usize, base: f64) -> f64 {
    if x == 0 {
        return 0.0;
    }
    ((x as f64).ln() / base.ln()).clamp(0.0, 1.0)
}

/// Weighted mix of detection, map-point and visibility confidences.
pub fn confidence(obj: &ObjectEstimate, w: &ConfidenceWeights) -> Result<f64> {
    if obj.num_detections == 0 || obj.detection_probs.is_empty() {
        return Err(ScaleError::NoDetections);
    }
    // Averaged over the probabilities actually reported.
    let c_det = obj.detection_probs.iter().sum::<f64>() / obj.detection_probs.len() as f64;
    let c_pt = clamped_log(obj.num_points, w.a);
    let c_vis = clamped_log(obj.num_detections, w.b);
    let c = (w.w1 * c_det + w.w2 * c_pt + w.w3 * c_vis) / (w.w1 + w.w2 + w.w3);
    Ok(c.clamp(0.0, 1.0))
}

pub fn local_scales(samples: &[DimensionSample]) -> Vec<f64> {
    samples.iter().map(DimensionSample::local_scale).collect()
}

/// Linear-interpolation quantile of sorted data (the "type 7" rule).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty data");
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Lower and upper boxplot fences `Q1 - 1.5 IQR`, `Q3 + 1.5 IQR`.
pub fn boxplot_fences(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&v, 0.25);
    let q3 = quantile_sorted(&v, 0.75);
    let iqr = q3 - q1;
    Some((q1 - 1.5 * iqr, q3 + 1.5 * iqr))
}

/// Minimum number of samples for which boxplot rejection is applied.
pub const MIN_BOXPLOT_SAMPLES: usize = 4;

/// Splits samples into inliers and outliers by a single boxplot pass over
/// their local scales. Fewer than four samples pass through unchanged.
pub fn eliminate_outliers(samples: &[DimensionSample]) -> (Vec<DimensionSample>, Vec<DimensionSample>) {
    if samples.len() < MIN_BOXPLOT_SAMPLES {
        return (samples.to_vec(), Vec::new());
    }
    let (lo, hi) = boxplot_fences(&local_scales(samples)).expect("non-empty");
    samples
        .iter()
        .partition(|s| {
            let ls = s.local_scale();
            ls >= lo && ls <= hi
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSolution {
    pub scale: f64,
    /// Objective value at the optimum.
    pub weighted_residual: f64,
    pub num_inliers: usize,
    /// Distinct object ids contributing inlier samples, ascending.
    pub inlier_ids: Vec<u64>,
}

/// Closed-form weighted least-squares scale. Sums are accumulated in input
/// order.
pub fn estimate_scale(samples: &[DimensionSample]) -> Result<ScaleSolution> {
    if samples.is_empty() {
        return Err(ScaleError::NoSamples);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for s in samples {
        let w = s.weight();
        num += w * s.prior.mean * s.dim;
        den += w * s.dim * s.dim;
    }
    if !(den > 1e-15) {
        return Err(ScaleError::DegenerateProblem(den));
    }
    let scale = num / den;
    let weighted_residual = samples
        .iter()
        .map(|s| {
            let e = s.confidence * (s.prior.mean - scale * s.dim) / s.prior.std;
            e * e
        })
        .sum();
    let mut inlier_ids: Vec<u64> = samples.iter().map(|s| s.object_id).collect();
    inlier_ids.sort_unstable();
    inlier_ids.dedup();
    Ok(ScaleSolution {
        scale,
        weighted_residual,
        num_inliers: samples.len(),
        inlier_ids,
    })
}

/// Switches for the estimation pipeline. Each stage can be disabled
/// independently for ablation runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub weights: ConfidenceWeights,
    pub outlier_elimination: bool,
    pub dimension_selection: bool,
    /// When off, every sample gets confidence 1 and unit prior deviation.
    pub uncertainty: bool,
    /// Objects with confidence strictly below this are dropped.
    pub confidence_floor: f64,
    /// Keep at most this many samples (in object order) before rejection.
    pub sample_limit: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            weights: ConfidenceWeights::default(),
            outlier_elimination: true,
            dimension_selection: true,
            uncertainty: true,
            confidence_floor: 0.0,
            sample_limit: None,
        }
    }
}

/// Per-sample diagnostics from a pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub object_id: u64,
    pub class: String,
    pub rank: usize,
    pub dim: f64,
    pub prior_mean: f64,
    pub prior_std: f64,
    pub confidence: f64,
    pub local_scale: f64,
    pub inlier: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub solution: ScaleSolution,
    pub samples: Vec<SampleRecord>,
    pub skipped_unknown_class: usize,
    pub skipped_no_detections: usize,
    pub skipped_low_confidence: usize,
    pub num_outliers: usize,
}

/// Full estimation with default settings.
pub fn run_pipeline(objects: &[ObjectEstimate], repo: &PriorRepository, w: &ConfidenceWeights) -> Result<ScaleSolution> {
    let cfg = PipelineConfig {
        weights: *w,
        ..PipelineConfig::default()
    };
    run_pipeline_with(objects, repo, &cfg).map(|o| o.solution)
}

/// Prior lookup, confidence, dimension selection, local scales, outlier
/// rejection and the weighted solve, in that order.
pub fn run_pipeline_with(
    objects: &[ObjectEstimate],
    repo: &PriorRepository,
    cfg: &PipelineConfig,
) -> Result<PipelineOutcome> {
    let mut unknown = 0;
    let mut no_det = 0;
    let mut gated = 0;
    let mut samples = Vec::new();
    let mut class_of = std::collections::HashMap::new();

    for obj in objects {
        let Some(prior) = repo.lookup(&obj.class_name) else {
            unknown += 1;
            continue;
        };
        let conf = match confidence(obj, &cfg.weights) {
            Ok(c) => c,
            Err(_) => {
                no_det += 1;
                continue;
            }
        };
        if conf < cfg.confidence_floor {
            gated += 1;
            continue;
        }
        let ranks = if cfg.dimension_selection {
            classify_shape(&shape_features(&obj.dims)?).stable_ranks()
        } else {
            ShapeClass::General.stable_ranks()
        };
        let mut s = samples_for_ranks(obj, prior, conf, ranks);
        if !cfg.uncertainty {
            for x in &mut s {
                x.confidence = 1.0;
                x.prior.std = 1.0;
            }
        }
        class_of.insert(obj.id, obj.class_name.clone());
        samples.extend(s);
    }
    if unknown > 0 {
        log::warn!("skipped {unknown} object(s) with no size prior");
    }
    if let Some(limit) = cfg.sample_limit {
        samples.truncate(limit);
    }
    let no_usable = || ScaleError::NoUsableObjects {
        unknown_class: unknown,
        without_detections: no_det,
        gated,
    };
    if samples.is_empty() {
        return Err(no_usable());
    }

    let (inliers, outliers) = if cfg.outlier_elimination {
        eliminate_outliers(&samples)
    } else {
        (samples.clone(), Vec::new())
    };
    if inliers.is_empty() {
        return Err(no_usable());
    }
    let solution = estimate_scale(&inliers)?;

    let records = samples
        .iter()
        .map(|s| SampleRecord {
            object_id: s.object_id,
            class: class_of[&s.object_id].clone(),
            rank: s.rank,
            dim: s.dim,
            prior_mean: s.prior.mean,
            prior_std: s.prior.std,
            confidence: s.confidence,
            local_scale: s.local_scale(),
            inlier: !outliers.contains(s),
        })
        .collect();

    Ok(PipelineOutcome {
        solution,
        samples: records,
        skipped_unknown_class: unknown,
        skipped_no_detections: no_det,
        skipped_low_confidence: gated,
        num_outliers: outliers.len(),
    })
}

/// Uniform scaling of map geometry: lengths are multiplied, rotations kept.
pub trait Scalable: Sized {
    fn scaled_by(&self, s: f64) -> Self;
}

impl Scalable for Vector3<f64> {
    fn scaled_by(&self, s: f64) -> Self {
        self * s
    }
}

impl Scalable for RigidPose {
    fn scaled_by(&self, s: f64) -> Self {
        self.scaled(s)
    }
}

impl Scalable for Ellipsoid {
    fn scaled_by(&self, s: f64) -> Self {
        self.scaled(s)
    }
}

impl Scalable for ObjectEstimate {
    fn scaled_by(&self, s: f64) -> Self {
        let mut o = self.clone();
        o.dims = o.dims.map(|d| d * s);
        o
    }
}

impl<T: Scalable> Scalable for Vec<T> {
    fn scaled_by(&self, s: f64) -> Self {
        self.iter().map(|x| x.scaled_by(s)).collect()
    }
}

pub fn apply_scale<T: Scalable>(map: &T, s: f64) -> Result<T> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(ScaleError::NonPositiveScale(s));
    }
    Ok(map.scaled_by(s))
}
