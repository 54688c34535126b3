use std::collections::{BTreeMap, HashMap};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{OptimizerError, QuadricParams, Result};
use crate::geometry::{fit_obb, project_point, BBox2D, CameraIntrinsics, Ellipsoid, RigidPose};

/// A labeled 2-D detection of an object in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame_id: u64,
    pub object_id: u64,
    #[serde(rename = "class")]
    pub class_name: String,
    pub bbox: BBox2D,
    pub probability: f64,
}

/// Associates each point with every object whose detection box contains its
/// projection in at least `min_frames` frames.
pub fn associate_points(
    points: &BTreeMap<u64, Vector3<f64>>,
    detections: &[Detection],
    poses: &BTreeMap<u64, RigidPose>,
    k: &CameraIntrinsics,
    min_frames: usize,
) -> BTreeMap<u64, Vec<u64>> {
    let mut hits: BTreeMap<(u64, u64), usize> = BTreeMap::new();
    for det in detections {
        let Some(pose) = poses.get(&det.frame_id) else {
            continue;
        };
        for (&pid, p) in points {
            if let Ok(px) = project_point(k, pose, p) {
                if det.bbox.contains(&px) {
                    *hits.entry((det.object_id, pid)).or_default() += 1;
                }
            }
        }
    }
    let mut out: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for ((oid, pid), n) in hits {
        if n >= min_frames.max(1) {
            out.entry(oid).or_default().push(pid);
        }
    }
    out
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Indices of the largest single-linkage cluster at threshold
/// `k_tau * median nearest-neighbour distance`, in input order. Ties go to
/// the cluster containing the lowest index.
pub fn cluster_filter_indices(points: &[Vector3<f64>], k_tau: f64) -> Vec<usize> {
    let n = points.len();
    if n <= 2 {
        return (0..n).collect();
    }
    let mut nn = vec![f64::INFINITY; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                nn[i] = nn[i].min((points[i] - points[j]).norm());
            }
        }
    }
    nn.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        nn[n / 2]
    } else {
        0.5 * (nn[n / 2 - 1] + nn[n / 2])
    };
    let tau = k_tau * median;

    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if (points[i] - points[j]).norm() <= tau {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    let mut sizes: HashMap<usize, usize> = HashMap::new();
    for r in &roots {
        *sizes.entry(*r).or_default() += 1;
    }
    // Roots are cluster minima, so the first root reaching the max size wins.
    let best = roots
        .iter()
        .copied()
        .max_by(|a, b| sizes[a].cmp(&sizes[b]).then(b.cmp(a)))
        .expect("non-empty");
    (0..n).filter(|&i| roots[i] == best).collect()
}

/// Largest single-linkage cluster with the default `k_tau = 3`.
pub fn cluster_filter(points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    cluster_filter_indices(points, 3.0)
        .into_iter()
        .map(|i| points[i])
        .collect()
}

/// Initial ellipsoid from the oriented bounding box of `points`. Degenerate
/// extents are floored to a small fraction of the largest one.
pub fn init_quadric_from_obb(points: &[Vector3<f64>]) -> Result<QuadricParams> {
    if points.len() < 4 {
        return Err(OptimizerError::TooFewPoints(points.len()));
    }
    let obb = fit_obb(points)?;
    let largest = obb.half_extents.max();
    if !(largest > 0.0) {
        return Err(OptimizerError::TooFewPoints(1));
    }
    let axes = obb.half_extents.map(|h| h.max(1e-3 * largest));
    Ok(QuadricParams::from_ellipsoid(&Ellipsoid::new(obb.pose, axes)?))
}
