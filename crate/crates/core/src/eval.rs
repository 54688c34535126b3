//! Scale and trajectory metrics: relative scale error, similarity
//! alignment, absolute trajectory error and TUM trajectory files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{RigidPose, Rotation};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("no time associations between trajectories")]
    NoAssociations,
    #[error("{origin}: line {line}: {message}")]
    Parse {
        origin: String,
        line: usize,
        message: String,
    },
    #[error("point sets differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("timestamps must be strictly increasing (index {0})")]
    NonIncreasingTimestamps(usize),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// `|estimated - truth| / truth`.
pub fn rse(estimated_scale: f64, true_scale: f64) -> f64 {
    (estimated_scale - true_scale).abs() / true_scale
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StampedPose {
    pub timestamp: f64,
    pub pose: RigidPose,
}

/// Poses ordered by strictly increasing timestamp (seconds).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    poses: Vec<StampedPose>,
}

impl Trajectory {
    pub fn new(poses: Vec<StampedPose>) -> Result<Self> {
        for (i, w) in poses.windows(2).enumerate() {
            if !(w[1].timestamp > w[0].timestamp) {
                return Err(EvalError::NonIncreasingTimestamps(i + 1));
            }
        }
        Ok(Self { poses })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, RigidPose)>) -> Result<Self> {
        Self::new(
            pairs
                .into_iter()
                .map(|(timestamp, pose)| StampedPose { timestamp, pose })
                .collect(),
        )
    }

    pub fn poses(&self) -> &[StampedPose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.poses.iter().map(|p| p.timestamp).collect()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.poses.iter().map(|p| p.pose.translation).collect()
    }

    /// Same trajectory with every position multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Trajectory {
        Trajectory {
            poses: self
                .poses
                .iter()
                .map(|p| StampedPose {
                    timestamp: p.timestamp,
                    pose: p.pose.scaled(s),
                })
                .collect(),
        }
    }
}

/// `p ↦ s R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Rotation::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) * self.scale + self.translation
    }

    /// Sum of squared distances `Σ |truth_i - S(est_i)|²`.
    pub fn residual(&self, est: &[Vector3<f64>], truth: &[Vector3<f64>]) -> f64 {
        est.iter()
            .zip(truth)
            .map(|(e, t)| (t - self.apply(e)).norm_squared())
            .sum()
    }
}

/// Least-squares similarity transform mapping `est` onto `truth`.
pub fn umeyama_align(est: &[Vector3<f64>], truth: &[Vector3<f64>]) -> Result<SimilarityTransform> {
    umeyama(est, truth, true)
}

/// Least-squares rigid transform (scale fixed to 1).
pub fn rigid_align(est: &[Vector3<f64>], truth: &[Vector3<f64>]) -> Result<SimilarityTransform> {
    umeyama(est, truth, false)
}

fn umeyama(est: &[Vector3<f64>], truth: &[Vector3<f64>], with_scale: bool) -> Result<SimilarityTransform> {
    if est.len() != truth.len() {
        return Err(EvalError::LengthMismatch(est.len(), truth.len()));
    }
    let n = est.len();
    if n < 3 {
        return Err(EvalError::DegenerateGeometry(format!(
            "need at least 3 point pairs, got {n}"
        )));
    }
    let nf = n as f64;
    let mu_e = est.iter().sum::<Vector3<f64>>() / nf;
    let mu_t = truth.iter().sum::<Vector3<f64>>() / nf;

    let mut cov = Matrix3::zeros();
    let mut cov_e = Matrix3::zeros();
    let mut var_e = 0.0;
    for (e, t) in est.iter().zip(truth) {
        let de = e - mu_e;
        let dt = t - mu_t;
        cov += dt * de.transpose();
        cov_e += de * de.transpose();
        var_e += de.norm_squared();
    }
    cov /= nf;
    cov_e /= nf;
    var_e /= nf;

    let mut spread = cov_e.symmetric_eigenvalues().as_slice().to_vec();
    spread.sort_by(|a, b| b.total_cmp(a));
    if !(spread[0] > 0.0) || spread[1] <= 1e-12 * spread[0] {
        return Err(EvalError::DegenerateGeometry(
            "estimate points are coincident or collinear".into(),
        ));
    }

    let svd = cov.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut s = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v_t;
    let scale = if with_scale {
        let d = Matrix3::from_diagonal(&svd.singular_values);
        (d * s).trace() / var_e
    } else {
        1.0
    };
    if !(scale > 0.0) {
        return Err(EvalError::DegenerateGeometry(
            "point sets are not related by a positive scale".into(),
        ));
    }
    let translation = mu_t - r * mu_e * scale;
    Ok(SimilarityTransform {
        scale,
        rotation: Rotation::from_matrix(&r),
        translation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignMode {
    None,
    Rigid,
    Sim3,
}

impl FromStr for AlignMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "none" => Ok(AlignMode::None),
            "rigid" => Ok(AlignMode::Rigid),
            "sim3" => Ok(AlignMode::Sim3),
            other => Err(format!("unknown alignment mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteResult {
    pub rmse: f64,
    pub errors: Vec<f64>,
    pub alignment: Option<SimilarityTransform>,
    /// Matched (estimate index, truth index) pairs.
    pub pairs: Vec<(usize, usize)>,
}

/// Default maximum timestamp difference for association, in seconds.
pub const DEFAULT_MAX_DT: f64 = 0.02;

/// Greedy nearest-timestamp matching: candidate pairs within `max_dt` are
/// taken in order of increasing |Δt|, each stamp used at most once. The
/// result is sorted by the first index.
pub fn associate_timestamps(a: &[f64], b: &[f64], max_dt: f64) -> Vec<(usize, usize)> {
    let mut candidates = Vec::new();
    for (i, ta) in a.iter().enumerate() {
        for (j, tb) in b.iter().enumerate() {
            let dt = (ta - tb).abs();
            if dt <= max_dt {
                candidates.push((dt, i, j));
            }
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// RMS position error after time association and the selected alignment of
/// the estimate onto the truth.
pub fn ate_rmse(est: &Trajectory, truth: &Trajectory, mode: AlignMode, max_dt: f64) -> Result<AteResult> {
    let pairs = associate_timestamps(&est.timestamps(), &truth.timestamps(), max_dt);
    if pairs.is_empty() {
        return Err(EvalError::NoAssociations);
    }
    let pe: Vec<_> = pairs.iter().map(|&(i, _)| est.poses[i].pose.translation).collect();
    let pt: Vec<_> = pairs.iter().map(|&(_, j)| truth.poses[j].pose.translation).collect();
    let alignment = match mode {
        AlignMode::None => None,
        AlignMode::Rigid => Some(rigid_align(&pe, &pt)?),
        AlignMode::Sim3 => Some(umeyama_align(&pe, &pt)?),
    };
    let errors: Vec<f64> = pe
        .iter()
        .zip(&pt)
        .map(|(e, t)| {
            let e = alignment.map_or(*e, |s| s.apply(e));
            (t - e).norm()
        })
        .collect();
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt();
    Ok(AteResult {
        rmse,
        errors,
        alignment,
        pairs,
    })
}

pub const TUM_HEADER: &str = "# timestamp tx ty tz qx qy qz qw";

/// Parses `timestamp tx ty tz qx qy qz qw` lines; `#` lines and blank
/// lines are skipped and quaternions are normalized.
pub fn parse_tum(text: &str, origin: &str) -> Result<Trajectory> {
    let mut poses: Vec<StampedPose> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| EvalError::Parse {
            origin: origin.to_string(),
            line: idx + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", fields.len())));
        }
        let mut v = [0.0; 8];
        for (k, f) in fields.iter().enumerate() {
            v[k] = f
                .parse::<f64>()
                .map_err(|_| err(format!("field {} is not a number: '{f}'", k + 1)))?;
            if !v[k].is_finite() {
                return Err(err(format!("field {} is not finite", k + 1)));
            }
        }
        let q_norm = (v[4] * v[4] + v[5] * v[5] + v[6] * v[6] + v[7] * v[7]).sqrt();
        if q_norm == 0.0 {
            return Err(err("zero quaternion".into()));
        }
        if let Some(prev) = poses.last() {
            if !(v[0] > prev.timestamp) {
                return Err(err("timestamps must be strictly increasing".into()));
            }
        }
        poses.push(StampedPose {
            timestamp: v[0],
            pose: RigidPose::new(
                Rotation::from_wxyz(v[7], v[4], v[5], v[6]),
                Vector3::new(v[1], v[2], v[3]),
            ),
        });
    }
    Ok(Trajectory { poses })
}

pub fn format_tum(traj: &Trajectory) -> String {
    let mut out = String::new();
    out.push_str(TUM_HEADER);
    out.push('\n');
    for p in &traj.poses {
        let t = p.pose.translation;
        let [w, x, y, z] = p.pose.rotation.wxyz();
        writeln!(out, "{} {} {} {} {} {} {} {}", p.timestamp, t.x, t.y, t.z, x, y, z, w)
            .expect("writing to a String");
    }
    out
}

pub fn load_tum(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_tum(&text, &path.display().to_string())
}

pub fn save_tum(path: impl AsRef<Path>, traj: &Trajectory) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_tum(traj)).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn square_traj(offset: Vector3<f64>, s: f64) -> Trajectory {
        let pts = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.5),
            Vector3::new(0.0, 1.0, 1.0),
            Vector3::new(-0.5, 0.3, 0.2),
        ];
        Trajectory::from_pairs(
            pts.iter()
                .enumerate()
                .map(|(i, p)| (i as f64 * 0.1, RigidPose::from_translation(p * s + offset))),
        )
        .unwrap()
    }

    #[test]
    fn rse_examples() {
        assert_relative_eq!(rse(1.05, 1.0), 0.05, epsilon = 1e-12);
        assert_eq!(rse(1.3, 1.3), 0.0);
        assert_relative_eq!(rse(0.9, 1.2), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn umeyama_identity_and_pure_scale() {
        let t = square_traj(Vector3::zeros(), 1.0).positions();
        let s = umeyama_align(&t, &t).unwrap();
        assert_relative_eq!(s.scale, 1.0, epsilon = 1e-12);
        assert!(s.rotation.angle_to(&Rotation::identity()) < 1e-9);
        assert_relative_eq!(s.translation, Vector3::zeros(), epsilon = 1e-12);

        let doubled: Vec<_> = t.iter().map(|p| p * 2.0).collect();
        let s = umeyama_align(&t, &doubled).unwrap();
        assert_relative_eq!(s.scale, 2.0, epsilon = 1e-12);
        assert!(s.rotation.angle_to(&Rotation::identity()) < 1e-9);
        assert_relative_eq!(s.translation, Vector3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn umeyama_rejects_degenerate_input() {
        let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(umeyama_align(&line, &line), Err(EvalError::DegenerateGeometry(_))));
        let two = &line[..2];
        assert!(matches!(umeyama_align(two, two), Err(EvalError::DegenerateGeometry(_))));
    }

    #[test]
    fn association_cases() {
        let a = [0.0, 1.0, 2.0];
        assert_eq!(associate_timestamps(&a, &a, 0.02), vec![(0, 0), (1, 1), (2, 2)]);
        assert!(associate_timestamps(&a, &[10.0, 11.0], 0.02).is_empty());
        let b: Vec<_> = a.iter().map(|t| t + 0.01).collect();
        assert_eq!(associate_timestamps(&a, &b, 0.02).len(), 3);
    }

    #[test]
    fn association_uses_each_stamp_once() {
        let a = [0.0, 0.01];
        let b = [0.009];
        assert_eq!(associate_timestamps(&a, &b, 0.02), vec![(1, 0)]);
    }

    #[test]
    fn ate_modes() {
        let gt = square_traj(Vector3::zeros(), 1.0);
        for mode in [AlignMode::None, AlignMode::Rigid, AlignMode::Sim3] {
            assert!(ate_rmse(&gt, &gt, mode, DEFAULT_MAX_DT).unwrap().rmse < 1e-12);
        }
        let shifted = square_traj(Vector3::new(1.0, 0.0, 0.0), 1.0);
        assert_relative_eq!(ate_rmse(&gt, &shifted, AlignMode::None, 0.02).unwrap().rmse, 1.0, epsilon = 1e-12);
        assert!(ate_rmse(&gt, &shifted, AlignMode::Rigid, 0.02).unwrap().rmse < 1e-9);
    }

    #[test]
    fn ate_half_scale() {
        let gt = square_traj(Vector3::zeros(), 1.0);
        let est = gt.scaled(0.5);
        let rms_norm = (gt.positions().iter().map(|p| p.norm_squared()).sum::<f64>() / gt.len() as f64).sqrt();
        let none = ate_rmse(&est, &gt, AlignMode::None, 0.02).unwrap();
        assert_relative_eq!(none.rmse, rms_norm / 2.0, epsilon = 1e-12);
        let sim = ate_rmse(&est, &gt, AlignMode::Sim3, 0.02).unwrap();
        assert!(sim.rmse < 1e-9);
        assert_relative_eq!(sim.alignment.unwrap().scale, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn ate_without_overlap() {
        let gt = square_traj(Vector3::zeros(), 1.0);
        let late = Trajectory::from_pairs(gt.poses().iter().map(|p| (p.timestamp + 100.0, p.pose))).unwrap();
        assert!(matches!(ate_rmse(&late, &gt, AlignMode::None, 0.02), Err(EvalError::NoAssociations)));
    }

    #[test]
    fn tum_identity_line() {
        let t = parse_tum("# comment\n0.0 0 0 0 0 0 0 1\n", "mem").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.poses()[0].timestamp, 0.0);
        assert_eq!(t.poses()[0].pose, RigidPose::identity());
    }

    #[test]
    fn tum_normalizes_quaternion() {
        let t = parse_tum("1.5 1 2 3 0 0 0 2\n", "mem").unwrap();
        assert_relative_eq!(t.poses()[0].pose.rotation.wxyz()[0], 1.0);
    }

    #[test]
    fn tum_parse_errors_name_line() {
        match parse_tum("# h\n0 0 0 0 0 0 0 1\n1 0 x 0 0 0 0 1\n", "f.txt") {
            Err(EvalError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_tum("0 0 0\n", "f"), Err(EvalError::Parse { line: 1, .. })));
        assert!(parse_tum("1 0 0 0 0 0 0 1\n0 0 0 0 0 0 0 1\n", "f").is_err());
    }

    #[test]
    fn tum_round_trip() {
        let traj = Trajectory::from_pairs((0..20).map(|i| {
            let f = i as f64;
            (
                1_300_000_000.0 + f * 0.033,
                RigidPose::new(
                    Rotation::from_axis_angle(&Vector3::new(0.1 * f, -0.05 * f, 0.3)),
                    Vector3::new(f.sin(), f.cos() * 2.0, 0.1 * f),
                ),
            )
        }))
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.txt");
        save_tum(&path, &traj).unwrap();
        let back = load_tum(&path).unwrap();
        assert_eq!(back.len(), traj.len());
        for (a, b) in back.poses().iter().zip(traj.poses()) {
            assert!((a.timestamp - b.timestamp).abs() < 1e-9);
            assert_relative_eq!(a.pose.translation, b.pose.translation, epsilon = 1e-9);
            assert!(a.pose.rotation.angle_to(&b.pose.rotation) < 1e-9);
        }
    }

    #[test]
    fn empty_trajectory_file_has_header() {
        assert_eq!(format_tum(&Trajectory::default()), format!("{TUM_HEADER}\n"));
    }
}
