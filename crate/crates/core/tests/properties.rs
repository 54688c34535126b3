use nalgebra::Vector3;
use proptest::prelude::*;

use objscale::eval::{ate_rmse, umeyama_align, AlignMode, SimilarityTransform, Trajectory};
use objscale::geometry::{
    dual_quadric_to_ellipsoid, ellipsoid_to_dual_quadric, fit_obb, point_quadric_error, Ellipsoid, GeometryConfig,
    RigidPose, Rotation,
};
use objscale::priors::{DimensionPrior, PriorRepository, SizePrior};
use objscale::scale::{
    classify_shape, eliminate_outliers, estimate_scale, select_dimensions, shape_features, DimensionSample,
    ObjectEstimate, ShapeClass,
};

fn vec3(range: std::ops::Range<f64>) -> impl Strategy<Value = Vector3<f64>> {
    (range.clone(), range.clone(), range).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn rotation() -> impl Strategy<Value = Rotation> {
    (vec3(-1.0..1.0), 0.0..std::f64::consts::PI).prop_map(|(v, angle)| {
        if v.norm() < 1e-6 {
            Rotation::identity()
        } else {
            Rotation::from_axis_angle(&(v.normalize() * angle))
        }
    })
}

fn pose() -> impl Strategy<Value = RigidPose> {
    (rotation(), vec3(-10.0..10.0)).prop_map(|(r, t)| RigidPose::new(r, t))
}

fn ellipsoid() -> impl Strategy<Value = Ellipsoid> {
    (pose(), vec3(0.1..3.0)).prop_map(|(p, a)| Ellipsoid::new(p, a).unwrap())
}

fn sorted_desc(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

fn sample() -> impl Strategy<Value = DimensionSample> {
    (0.05..2.0f64, 0.01..0.5f64, 0.2..5.0f64, 0.8..1.25f64, 0.05..1.0f64).prop_map(|(mean, std, s, noise, c)| {
        DimensionSample {
            object_id: 0,
            rank: 0,
            dim: mean / s * noise,
            prior: DimensionPrior::new(mean, std),
            confidence: c,
        }
    })
}

proptest! {
    #[test]
    fn dual_quadric_round_trip(e in ellipsoid()) {
        let back = dual_quadric_to_ellipsoid(&ellipsoid_to_dual_quadric(&e), &GeometryConfig::default()).unwrap();
        prop_assert!((back.center() - e.center()).norm() < 1e-8);
        let want = sorted_desc(e.semi_axes.iter().copied().collect());
        let got = sorted_desc(back.semi_axes.iter().copied().collect());
        for k in 0..3 {
            prop_assert!((want[k] - got[k]).abs() < 1e-8, "{want:?} vs {got:?}");
        }
    }

    #[test]
    fn point_error_zero_on_surface_and_growing_outside(e in ellipsoid(), dir in vec3(-1.0..1.0)) {
        prop_assume!(dir.norm() > 1e-3);
        let u = dir.normalize();
        let q = ellipsoid_to_dual_quadric(&e);
        let surface = e.surface_point(&u);
        prop_assert!(point_quadric_error(&q, &surface).unwrap().abs() < 1e-9);
        let mut last = 0.0;
        for i in 1..=20 {
            let t = 1.0 + 0.25 * i as f64;
            let p = e.center() + (surface - e.center()) * t;
            let err = point_quadric_error(&q, &p).unwrap();
            prop_assert!(err > last, "t = {t}: {err} <= {last}");
            last = err;
        }
    }

    #[test]
    fn obb_contains_points_and_is_tight(points in prop::collection::vec(vec3(-5.0..5.0), 4..60)) {
        let obb = fit_obb(&points).unwrap();
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        let inv = obb.pose.inverse();
        for p in &points {
            prop_assert!(obb.contains(p, 1e-9));
            let l = inv.transform_point(p);
            lo = lo.inf(&l);
            hi = hi.sup(&l);
        }
        let aabb = (hi - lo).product();
        prop_assert!((obb.volume() - aabb).abs() <= 1e-9 * aabb.max(1.0));
    }

    #[test]
    fn obb_scales_with_points(points in prop::collection::vec(vec3(-5.0..5.0), 4..60), s in 0.01..100.0f64) {
        let a = fit_obb(&points).unwrap();
        let scaled: Vec<_> = points.iter().map(|p| p * s).collect();
        let b = fit_obb(&scaled).unwrap();
        prop_assert!((b.half_extents - a.half_extents * s).norm() <= 1e-9 * s * (1.0 + a.half_extents.norm()));
        prop_assert!((b.pose.translation - a.pose.translation * s).norm() <= 1e-9 * s * (1.0 + a.pose.translation.norm()));
    }

    #[test]
    fn prior_files_round_trip(entries in prop::collection::btree_map("[a-z ]{1,12}", prop::collection::vec((0.01..5.0f64, 0.001..1.0f64), 3), 1..8)) {
        let repo = PriorRepository::from_priors(entries.iter().map(|(name, dims)| {
            SizePrior::new(name.clone(), [0, 1, 2].map(|k| DimensionPrior::new(dims[k].0, dims[k].1))).unwrap()
        }));
        let text = repo.to_json_string();
        let (back, warnings) = PriorRepository::parse(&text, "mem").unwrap();
        prop_assert!(warnings.is_empty());
        prop_assert_eq!(back.to_json_string(), text);
        for p in back.iter() {
            prop_assert!(p.dims.iter().all(|d| d.mean > 0.0 && d.std > 0.0));
            prop_assert!(p.dims[0].mean >= p.dims[1].mean && p.dims[1].mean >= p.dims[2].mean);
        }
    }

    #[test]
    fn estimate_scale_is_equivariant(samples in prop::collection::vec(sample(), 1..30), k in 0.01..100.0f64, c in 0.01..100.0f64) {
        let s = estimate_scale(&samples).unwrap().scale;
        let stretched: Vec<_> = samples.iter().map(|x| DimensionSample { dim: x.dim * k, ..*x }).collect();
        let s_k = estimate_scale(&stretched).unwrap().scale;
        prop_assert!((s_k * k - s).abs() <= 1e-12 * s, "{s_k} * {k} vs {s}");
        let confident: Vec<_> = samples.iter().map(|x| DimensionSample { confidence: x.confidence * c, ..*x }).collect();
        let s_c = estimate_scale(&confident).unwrap().scale;
        prop_assert!((s_c - s).abs() <= 1e-12 * s);
    }

    #[test]
    fn second_outlier_pass_only_shrinks(samples in prop::collection::vec(sample(), 0..40)) {
        let (once, out1) = eliminate_outliers(&samples);
        prop_assert_eq!(once.len() + out1.len(), samples.len());
        let (twice, _) = eliminate_outliers(&once);
        prop_assert!(twice.iter().all(|s| once.contains(s)));
        if out1.is_empty() {
            prop_assert_eq!(twice, once);
        }
    }

    #[test]
    fn selection_respects_shape(dims in prop::collection::vec(0.01..3.0f64, 3), c in 0.0..1.0f64) {
        let d = sorted_desc(dims);
        let obj = ObjectEstimate {
            id: 1,
            class_name: "x".into(),
            dims: [d[0], d[1], d[2]],
            detection_probs: vec![0.9],
            num_points: 10,
            num_detections: 1,
        };
        let prior = SizePrior::new("x", [DimensionPrior::new(1.0, 0.1); 3]).unwrap();
        let ranks: Vec<usize> = select_dimensions(&obj, &prior, c).unwrap().iter().map(|s| s.rank).collect();
        match classify_shape(&shape_features(&obj.dims).unwrap()) {
            ShapeClass::PoleLike => prop_assert_eq!(ranks, vec![0]),
            ShapeClass::DiskLike => prop_assert_eq!(ranks, vec![0, 1]),
            ShapeClass::General => prop_assert_eq!(ranks, vec![0, 1, 2]),
        }
    }

    #[test]
    fn ate_identity_and_symmetry(raw in prop::collection::vec(vec3(-5.0..5.0), 3..20), shift in vec3(-1.0..1.0)) {
        let traj = |offset: Vector3<f64>| {
            Trajectory::from_pairs(raw.iter().enumerate().map(|(i, p)| (i as f64, RigidPose::from_translation(p + offset)))).unwrap()
        };
        let (a, b) = (traj(Vector3::zeros()), traj(shift));
        for mode in [AlignMode::None, AlignMode::Rigid, AlignMode::Sim3] {
            match ate_rmse(&a, &a, mode, 0.02) {
                Ok(r) => prop_assert!(r.rmse < 1e-9),
                Err(e) => prop_assert!(mode != AlignMode::None, "{e}"),
            }
        }
        let ab = ate_rmse(&a, &b, AlignMode::None, 0.02).unwrap().rmse;
        let ba = ate_rmse(&b, &a, AlignMode::None, 0.02).unwrap().rmse;
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((ab - shift.norm()).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn shape_features_sum_to_one(dims in prop::collection::vec(1e-6..1e3f64, 3)) {
        let d = sorted_desc(dims);
        let f = shape_features(&[d[0], d[1], d[2]]).unwrap();
        prop_assert!((f.linearity + f.planarity + f.scattering - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn estimate_scale_matches_grid_search(samples in prop::collection::vec(sample(), 1..12)) {
        let s = estimate_scale(&samples).unwrap().scale;
        let ls: Vec<f64> = samples.iter().map(|x| x.local_scale()).collect();
        let lo = 0.5 * ls.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = 2.0 * ls.iter().copied().fold(0.0, f64::max);
        let steps = 1_000_000;
        let h = (hi - lo) / steps as f64;
        let objective = |x: f64| -> f64 {
            samples.iter().map(|d| (d.confidence * (d.prior.mean - x * d.dim) / d.prior.std).powi(2)).sum()
        };
        let mut best = (f64::INFINITY, lo);
        for i in 0..=steps {
            let x = lo + h * i as f64;
            let f = objective(x);
            if f < best.0 {
                best = (f, x);
            }
        }
        prop_assert!((best.1 - s).abs() <= h, "grid {} vs closed form {s}", best.1);
    }

    #[test]
    fn umeyama_beats_random_transforms(points in prop::collection::vec(vec3(-5.0..5.0), 4..20), noise in prop::collection::vec(vec3(-0.2..0.2), 20), truth_tf in (0.2..5.0f64, rotation(), vec3(-3.0..3.0)), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let (s, r, t) = truth_tf;
        let truth: Vec<_> = points.iter().zip(&noise).map(|(p, n)| r.rotate(p) * s + t + n).collect();
        let Ok(best) = umeyama_align(&points, &truth) else {
            return Ok(());
        };
        let optimum = best.residual(&points, &truth);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for i in 0..1000 {
            // Half near the optimum, half anywhere.
            let spread = if i % 2 == 0 { 0.05 } else { 1.0 };
            let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let candidate = SimilarityTransform {
                scale: best.scale * (1.0 + spread * rng.random_range(-0.5..0.5)),
                rotation: best.rotation.compose(&Rotation::from_axis_angle(&(axis * spread))),
                translation: best.translation + Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * spread,
            };
            prop_assert!(optimum <= candidate.residual(&points, &truth) + 1e-9);
        }
    }
}
