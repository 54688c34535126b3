use std::collections::{BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use super::jacobian::{camera_point_jacobians, numeric_jacobian, object_point_point_jacobian, JacobianMode};
use super::problem::{Observation, Problem, QuadricParams, VariableId};
use super::residuals::{residual_camera_object, residual_camera_point, residual_object_point};
use super::{OptimizerError, Result};
use crate::geometry::{ellipsoid_to_dual_quadric, GeometryError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub max_damping: f64,
    /// Stop when an accepted step lowers χ² by less than this fraction.
    pub relative_chi2_tolerance: f64,
    /// Stop when χ² drops below this absolute value.
    pub absolute_chi2_tolerance: f64,
    /// Stop when `|δ| <= tol * (|x| + tol)`.
    pub step_tolerance: f64,
    /// Relative finite-difference step.
    pub fd_step: f64,
    pub jacobians: JacobianMode,
    /// Hold variables that no observation references fixed instead of
    /// letting the damped system go singular.
    pub fix_unconstrained: bool,
    /// Huber threshold in whitened units; `None` is plain least squares.
    pub huber_delta: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            initial_damping: 1e-4,
            damping_up: 10.0,
            damping_down: 3.0,
            max_damping: 1e14,
            relative_chi2_tolerance: 1e-12,
            absolute_chi2_tolerance: 1e-18,
            step_tolerance: 1e-12,
            fd_step: 1e-6,
            jacobians: JacobianMode::Numeric,
            fix_unconstrained: true,
            huber_delta: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("initial_damping", self.initial_damping),
            ("max_damping", self.max_damping),
            ("relative_chi2_tolerance", self.relative_chi2_tolerance),
            ("absolute_chi2_tolerance", self.absolute_chi2_tolerance),
            ("step_tolerance", self.step_tolerance),
            ("fd_step", self.fd_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(OptimizerError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.damping_up > 1.0 && self.damping_down > 1.0) {
            return Err(OptimizerError::InvalidConfig("damping factors must exceed 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(OptimizerError::InvalidConfig("max_iterations must be positive".into()));
        }
        if matches!(self.huber_delta, Some(d) if !(d > 0.0)) {
            return Err(OptimizerError::InvalidConfig("huber_delta must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FamilyChi2 {
    pub camera_object: f64,
    pub camera_point: f64,
    pub object_point: f64,
}

impl FamilyChi2 {
    pub fn total(&self) -> f64 {
        self.camera_object + self.camera_point + self.object_point
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub initial_chi2: f64,
    pub final_chi2: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: String,
    /// χ² after every accepted step, starting with the initial value.
    pub chi2_history: Vec<f64>,
    pub family_chi2: FamilyChi2,
    /// Observations skipped at the final state (unbounded conic or point
    /// behind a camera).
    pub skipped_observations: usize,
    /// Unreferenced variables that were held fixed.
    pub auto_fixed: Vec<String>,
}

struct Layout {
    offsets: HashMap<VariableId, usize>,
    order: Vec<VariableId>,
    dim: usize,
    /// Variables referenced by some observation.
    constrained: BTreeSet<VariableId>,
}

impl Layout {
    fn new(problem: &Problem, cfg: &SolverConfig) -> (Self, Vec<VariableId>) {
        let constrained = problem.constrained_variables();
        let mut offsets = HashMap::new();
        let mut order = Vec::new();
        let mut auto_fixed = Vec::new();
        let mut dim = 0;
        for v in problem.all_variables() {
            if problem.is_fixed(&v) {
                continue;
            }
            if cfg.fix_unconstrained && !constrained.contains(&v) {
                auto_fixed.push(v);
                continue;
            }
            offsets.insert(v, dim);
            order.push(v);
            dim += v.dim();
        }
        (
            Self {
                offsets,
                order,
                dim,
                constrained,
            },
            auto_fixed,
        )
    }
}

/// Whitening factor `Ω^{1/2}` for a PSD information matrix.
fn sqrt_information(info: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(info.clone());
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

fn apply_delta(problem: &mut Problem, v: VariableId, d: &[f64]) {
    match v {
        VariableId::Pose(i) => {
            let p = problem.poses.get_mut(&i).expect("pose exists");
            *p = p.retract(&Vector3::new(d[0], d[1], d[2]), &Vector3::new(d[3], d[4], d[5]));
        }
        VariableId::Quadric(i) => {
            let q = problem.quadrics.get_mut(&i).expect("quadric exists");
            let mut x = q.to_vector();
            for (k, dk) in d.iter().enumerate() {
                x[k] += dk;
            }
            *q = QuadricParams::from_slice(x.as_slice());
        }
        VariableId::Point(i) => {
            let p = problem.points.get_mut(&i).expect("point exists");
            *p += Vector3::new(d[0], d[1], d[2]);
        }
    }
}

/// Raw (unwhitened) residual, optionally with one variable perturbed.
fn raw_residual(
    problem: &Problem,
    obs: &Observation,
    perturb: Option<(VariableId, &[f64])>,
) -> std::result::Result<DVector<f64>, GeometryError> {
    let k = &problem.intrinsics;
    let pose_of = |id: u64| {
        let mut p = problem.poses[&id];
        if let Some((VariableId::Pose(pid), d)) = perturb {
            if pid == id {
                p = p.retract(&Vector3::new(d[0], d[1], d[2]), &Vector3::new(d[3], d[4], d[5]));
            }
        }
        p
    };
    let quadric_of = |id: u64| {
        let mut q = problem.quadrics[&id];
        if let Some((VariableId::Quadric(qid), d)) = perturb {
            if qid == id {
                let mut x = q.to_vector();
                for (i, di) in d.iter().enumerate() {
                    x[i] += di;
                }
                q = QuadricParams::from_slice(x.as_slice());
            }
        }
        q
    };
    let point_of = |id: u64| {
        let mut p = problem.points[&id];
        if let Some((VariableId::Point(pid), d)) = perturb {
            if pid == id {
                p += Vector3::new(d[0], d[1], d[2]);
            }
        }
        p
    };
    Ok(match obs {
        Observation::BBox { frame_id, object_id, bbox, .. } => {
            let r = residual_camera_object(&pose_of(*frame_id), &quadric_of(*object_id), bbox, k)?;
            DVector::from_column_slice(r.as_slice())
        }
        Observation::Point { frame_id, point_id, pixel, .. } => {
            let r = residual_camera_point(&pose_of(*frame_id), &point_of(*point_id), pixel, k)?;
            DVector::from_column_slice(r.as_slice())
        }
        Observation::ObjectPoint { object_id, point_id, .. } => {
            DVector::from_element(1, residual_object_point(&quadric_of(*object_id), &point_of(*point_id))?)
        }
    })
}

fn analytic_block(problem: &Problem, obs: &Observation, v: VariableId) -> Option<DMatrix<f64>> {
    match (obs, v) {
        (Observation::Point { frame_id, point_id, .. }, _) => {
            let pose = problem.poses[frame_id];
            let point = problem.points[point_id];
            let (jp, jx) = camera_point_jacobians(&problem.intrinsics, &pose, &point).ok()?;
            Some(match v {
                VariableId::Pose(_) => DMatrix::from_column_slice(2, 6, jp.as_slice()),
                _ => DMatrix::from_column_slice(2, 3, jx.as_slice()),
            })
        }
        (Observation::ObjectPoint { object_id, point_id, .. }, VariableId::Point(_)) => {
            let q = ellipsoid_to_dual_quadric(&problem.quadrics[object_id].to_ellipsoid());
            let g = object_point_point_jacobian(&q, &problem.points[point_id]).ok()?;
            Some(DMatrix::from_row_slice(1, 3, g.as_slice()))
        }
        _ => None,
    }
}

fn family_slot<'a>(fam: &'a mut FamilyChi2, obs: &Observation) -> &'a mut f64 {
    match obs {
        Observation::BBox { .. } => &mut fam.camera_object,
        Observation::Point { .. } => &mut fam.camera_point,
        Observation::ObjectPoint { .. } => &mut fam.object_point,
    }
}

/// Huber cost of a squared whitened norm and the square root of its
/// first-derivative weight.
fn robust(s: f64, delta: Option<f64>) -> (f64, f64) {
    match delta {
        Some(d) if s > d * d => {
            let r = s.sqrt();
            (2.0 * d * r - d * d, (d / r).sqrt())
        }
        _ => (s, 1.0),
    }
}

struct Evaluator<'a> {
    cfg: &'a SolverConfig,
    sqrt_info: Vec<DMatrix<f64>>,
}

impl<'a> Evaluator<'a> {
    fn new(problem: &Problem, cfg: &'a SolverConfig) -> Self {
        let sqrt_info = problem
            .observations
            .iter()
            .map(|o| sqrt_information(&o.info_dmatrix()))
            .collect();
        Self { cfg, sqrt_info }
    }

    fn cost(&self, problem: &Problem) -> (f64, FamilyChi2, usize) {
        let mut fam = FamilyChi2::default();
        let mut skipped = 0;
        for (obs, w) in problem.observations.iter().zip(&self.sqrt_info) {
            match raw_residual(problem, obs, None) {
                Ok(r) => {
                    let s = (w * r).norm_squared();
                    *family_slot(&mut fam, obs) += robust(s, self.cfg.huber_delta).0;
                }
                Err(_) => skipped += 1,
            }
        }
        (fam.total(), fam, skipped)
    }

    /// Gauss–Newton system `(JᵀJ, Jᵀr)` over the free variables.
    fn linearize(&self, problem: &Problem, layout: &Layout) -> (DMatrix<f64>, DVector<f64>) {
        let n = layout.dim;
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        'obs: for (obs, w) in problem.observations.iter().zip(&self.sqrt_info) {
            let Ok(r) = raw_residual(problem, obs, None) else {
                continue;
            };
            let wr = w * &r;
            let (_, rw) = robust(wr.norm_squared(), self.cfg.huber_delta);
            let wr = wr * rw;

            let mut blocks: Vec<(usize, DMatrix<f64>)> = Vec::new();
            for v in obs.variables() {
                let Some(&off) = layout.offsets.get(&v) else {
                    continue;
                };
                let analytic = match self.cfg.jacobians {
                    JacobianMode::Analytic => analytic_block(problem, obs, v),
                    JacobianMode::Numeric => None,
                };
                let jac = match analytic {
                    Some(j) => j,
                    None => {
                        let failed = std::cell::Cell::new(false);
                        let f = |d: &DVector<f64>| match raw_residual(problem, obs, Some((v, d.as_slice()))) {
                            Ok(x) => x,
                            Err(_) => {
                                failed.set(true);
                                DVector::zeros(r.len())
                            }
                        };
                        let j = numeric_jacobian(f, &DVector::zeros(v.dim()), self.cfg.fd_step);
                        if failed.get() {
                            continue 'obs;
                        }
                        j
                    }
                };
                blocks.push((off, w * jac * rw));
            }
            for (a, ja) in &blocks {
                let jat = ja.transpose();
                let mut gseg = g.rows_mut(*a, ja.ncols());
                gseg += &jat * &wr;
                for (b, jb) in &blocks {
                    let mut hb = h.view_mut((*a, *b), (ja.ncols(), jb.ncols()));
                    hb += &jat * jb;
                }
            }
        }
        (h, g)
    }
}

fn state_norm(problem: &Problem, layout: &Layout) -> f64 {
    layout
        .order
        .iter()
        .map(|v| match v {
            VariableId::Pose(i) => {
                let p = &problem.poses[i];
                p.translation.norm_squared() + p.rotation.axis_angle().norm_squared()
            }
            VariableId::Quadric(i) => problem.quadrics[i].to_vector().norm_squared(),
            VariableId::Point(i) => problem.points[i].norm_squared(),
        })
        .sum::<f64>()
        .sqrt()
}

/// Levenberg–Marquardt over all free variables of `problem`.
pub fn solve(problem: &Problem, cfg: &SolverConfig) -> Result<(Problem, SolveReport)> {
    cfg.validate()?;
    problem.validate()?;
    let (layout, auto_fixed) = Layout::new(problem, cfg);
    // Diagonal damping cannot regularize a variable with an all-zero block.
    if layout.order.iter().any(|v| !layout.constrained.contains(v)) {
        return Err(OptimizerError::SingularNormalEquations);
    }
    let eval = Evaluator::new(problem, cfg);

    let mut state = problem.clone();
    let (mut chi2, _, _) = eval.cost(&state);
    let initial_chi2 = chi2;
    let mut history = vec![chi2];
    let mut lambda = cfg.initial_damping;
    let mut iterations = 0;
    let mut converged = false;
    let mut termination = String::from("maximum iterations reached");

    if chi2 <= cfg.absolute_chi2_tolerance {
        converged = true;
        termination = "initial chi2 below absolute tolerance".into();
    } else if layout.dim == 0 {
        converged = true;
        termination = "no free variables".into();
    }

    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        let (h, g) = eval.linearize(&state, &layout);
        let mut damping = DVector::zeros(layout.dim);
        for v in &layout.order {
            let off = layout.offsets[v];
            for j in off..off + v.dim() {
                damping[j] = h[(j, j)].max(1e-9);
            }
        }

        let mut any_solved = false;
        loop {
            if lambda > cfg.max_damping {
                if !any_solved {
                    return Err(OptimizerError::SingularNormalEquations);
                }
                converged = true;
                termination = "no further decrease at maximum damping".into();
                break;
            }
            let mut a = h.clone();
            for j in 0..layout.dim {
                a[(j, j)] += lambda * damping[j];
            }
            let Some(chol) = a.cholesky() else {
                lambda *= cfg.damping_up;
                continue;
            };
            any_solved = true;
            let delta = -chol.solve(&g);
            if !delta.iter().all(|d| d.is_finite()) {
                lambda *= cfg.damping_up;
                continue;
            }
            let xnorm = state_norm(&state, &layout);
            if delta.norm() <= cfg.step_tolerance * (xnorm + cfg.step_tolerance) {
                converged = true;
                termination = "step below tolerance".into();
                break;
            }

            let mut candidate = state.clone();
            for v in &layout.order {
                let off = layout.offsets[v];
                apply_delta(&mut candidate, *v, &delta.as_slice()[off..off + v.dim()]);
            }
            let (new_chi2, _, _) = eval.cost(&candidate);
            if new_chi2.is_finite() && new_chi2 < chi2 {
                let rel = (chi2 - new_chi2) / chi2;
                state = candidate;
                chi2 = new_chi2;
                history.push(chi2);
                lambda = (lambda / cfg.damping_down).max(1e-15);
                if chi2 <= cfg.absolute_chi2_tolerance {
                    converged = true;
                    termination = "chi2 below absolute tolerance".into();
                } else if rel < cfg.relative_chi2_tolerance {
                    converged = true;
                    termination = "relative chi2 decrease below tolerance".into();
                }
                break;
            }
            lambda *= cfg.damping_up;
        }
    }

    let (final_chi2, family_chi2, skipped) = eval.cost(&state);
    let report = SolveReport {
        initial_chi2,
        final_chi2,
        iterations,
        converged,
        termination,
        chi2_history: history,
        family_chi2,
        skipped_observations: skipped,
        auto_fixed: auto_fixed.iter().map(ToString::to_string).collect(),
    };
    Ok((state, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, RigidPose, Rotation};
    use crate::optimizer::problem::Observation;
    use approx::assert_relative_eq;
    use nalgebra::Vector2;

    /// Two cameras observing a handful of points; only points are free.
    fn points_problem() -> (Problem, Vec<Vector3<f64>>) {
        let k = CameraIntrinsics::new(400.0, 400.0, 320.0, 240.0).unwrap();
        let mut p = Problem::new(k);
        let cams = [
            RigidPose::identity(),
            RigidPose::new(Rotation::from_axis_angle(&Vector3::new(0.0, -0.2, 0.0)), Vector3::new(1.0, 0.0, 0.0)),
        ];
        for (i, c) in cams.iter().enumerate() {
            p.poses.insert(i as u64, *c);
            p.fix(VariableId::Pose(i as u64));
        }
        let truth: Vec<_> = (0..6)
            .map(|i| Vector3::new(-0.5 + 0.2 * i as f64, 0.1 * (i as f64).sin(), 4.0 + 0.1 * i as f64))
            .collect();
        for (j, x) in truth.iter().enumerate() {
            p.points.insert(j as u64, x + Vector3::new(0.05, -0.04, 0.3));
            for (i, c) in cams.iter().enumerate() {
                let z = crate::geometry::project_point(&k, c, x).unwrap();
                p.observations.push(Observation::point(i as u64, j as u64, z));
            }
        }
        (p, truth)
    }

    #[test]
    fn triangulates_points() {
        let (p, truth) = points_problem();
        for mode in [JacobianMode::Numeric, JacobianMode::Analytic] {
            let cfg = SolverConfig {
                jacobians: mode,
                ..SolverConfig::default()
            };
            let (solved, report) = solve(&p, &cfg).unwrap();
            assert!(report.converged, "{}", report.termination);
            assert!(report.final_chi2 < 1e-12);
            assert!(report.chi2_history.windows(2).all(|w| w[1] < w[0]));
            for (j, x) in truth.iter().enumerate() {
                assert_relative_eq!(solved.points[&(j as u64)], *x, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn starting_at_optimum_stops_immediately() {
        let (mut p, truth) = points_problem();
        for (j, x) in truth.iter().enumerate() {
            p.points.insert(j as u64, *x);
        }
        let (_, report) = solve(&p, &SolverConfig::default()).unwrap();
        assert!(report.iterations <= 1);
        assert!(report.final_chi2 < 1e-12);
    }

    #[test]
    fn unreferenced_point_handling() {
        let (mut p, _) = points_problem();
        p.points.insert(100, Vector3::new(1.0, 1.0, 1.0));
        let (solved, report) = solve(&p, &SolverConfig::default()).unwrap();
        assert_eq!(report.auto_fixed, vec!["point 100".to_string()]);
        assert_eq!(solved.points[&100], Vector3::new(1.0, 1.0, 1.0));

        let strict = SolverConfig {
            fix_unconstrained: false,
            ..SolverConfig::default()
        };
        assert!(matches!(solve(&p, &strict), Err(OptimizerError::SingularNormalEquations)));
    }

    #[test]
    fn gauge_is_required() {
        let (mut p, _) = points_problem();
        p.fixed.clear();
        assert!(matches!(solve(&p, &SolverConfig::default()), Err(OptimizerError::GaugeNotFixed)));
    }

    #[test]
    fn huber_downweights_gross_outlier() {
        let (mut p, truth) = points_problem();
        p.observations.push(Observation::point(0, 0, Vector2::new(0.0, 0.0)));
        let plain = solve(&p, &SolverConfig::default()).unwrap().0;
        let robust_cfg = SolverConfig {
            huber_delta: Some(1.0),
            ..SolverConfig::default()
        };
        let robust = solve(&p, &robust_cfg).unwrap().0;
        let err_plain = (plain.points[&0] - truth[0]).norm();
        let err_robust = (robust.points[&0] - truth[0]).norm();
        assert!(err_robust < err_plain, "{err_robust} vs {err_plain}");
    }

    #[test]
    fn config_validation() {
        let bad = SolverConfig {
            damping_up: 0.5,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
