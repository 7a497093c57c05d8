//! Property tests of the geometry kernels and metrics.

use facewarp::eval::{ced_resampled, CedCurve, NmeRecord, PoseBin};
use facewarp::estimator::synth::{camera_from_pose, Pose};
use facewarp::mesh::shapes::{icosphere, mean_face, MeanFaceConfig};
use facewarp::mesh::visibility;
use facewarp::projection::{grad_wrt_camera, grad_wrt_points, lift, project};
use facewarp::refit::{apply_composed, refit_model};
use facewarp::sampler::sample_bilinear;
use facewarp::tps::{self, apply, fit, ControlCorrespondence};
use facewarp::{CameraParams, FaceMesh, Grid2D, LandmarkSet2D, Point3, SampleCoord, TpsWarp3D, VisibilityOptions};
use nalgebra::{Matrix3, Vector2, Vector3};
use proptest::prelude::*;
use std::sync::OnceLock;

fn cfg() -> ProptestConfig {
    ProptestConfig::with_cases(64)
}

fn pose() -> impl Strategy<Value = Pose> {
    (-90.0..90.0f64, -20.0..20.0f64, -20.0..20.0f64).prop_map(|(yaw, pitch, roll)| Pose { yaw, pitch, roll })
}

/// A camera several units from the origin, perturbed off the pinhole family.
fn camera() -> impl Strategy<Value = CameraParams> {
    (pose(), 100.0..1000.0f64, 6.0..20.0f64, prop::array::uniform11(-1e-3..1e-3f64)).prop_map(|(p, f, d, eps)| {
        let mut c = camera_from_pose(p, f, d, (50.0, 40.0), (3.0, -2.0));
        for (a, e) in c.a.iter_mut().zip(eps) {
            *a *= 1.0 + e;
        }
        c
    })
}

fn point() -> impl Strategy<Value = Point3> {
    prop::array::uniform3(-1.5..1.5f64).prop_map(|a| Point3::new(a[0], a[1], a[2]))
}

fn points(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec(point(), n)
}

fn spread(v: &[Point3], min: f64) -> bool {
    v.iter()
        .enumerate()
        .all(|(i, p)| v[..i].iter().all(|q| (p - q).norm() > min))
}

/// Controls well spread enough for a reliable bordered system.
fn controls() -> impl Strategy<Value = Vec<Point3>> {
    prop_oneof![Just(4usize), Just(8), Just(40)]
        .prop_flat_map(|n| points(n..n + 1))
        .prop_filter("well-separated, non-coplanar controls", |c| {
            if !spread(c, 0.15) {
                return false;
            }
            let m = c.iter().sum::<Point3>() / c.len() as f64;
            let cov = c.iter().fold(Matrix3::zeros(), |a, p| a + (p - m) * (p - m).transpose());
            cov.symmetric_eigenvalues().min() > 0.05
        })
}

fn max_dist(a: &[Point3], b: &[Point3]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn projection_scale_ambiguity(cam in camera(), pts in points(1..20), lambda in prop_oneof![-50.0..-0.02f64, 0.02..50.0f64]) {
        let m = cam.to_matrix() * lambda;
        let renorm = CameraParams::from_matrix(&m).unwrap();
        let a = project(&cam, &lift(&pts)).unwrap();
        let b = project(&renorm, &lift(&pts)).unwrap();
        for (p, q) in a.iter().zip(&b) {
            prop_assert!(p.dist(q) <= 1e-9 * (1.0 + p.x.abs().max(p.y.abs())));
        }
    }

    #[test]
    fn projection_permutation_equivariance(cam in camera(), pts in points(2..30), seed in any::<u64>()) {
        let n = pts.len();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.sort_by_key(|&i| (i as u64).wrapping_mul(seed | 1).rotate_left(17));
        let permuted: Vec<Point3> = perm.iter().map(|&i| pts[i]).collect();
        let dl: Vec<Vector2<f64>> = (0..n).map(|i| Vector2::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let dl_perm: Vec<Vector2<f64>> = perm.iter().map(|&i| dl[i]).collect();

        let a = project(&cam, &lift(&pts)).unwrap();
        let b = project(&cam, &lift(&permuted)).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(a[i], b[k]);
        }
        let ga = grad_wrt_points(&cam, &lift(&pts), &dl).unwrap();
        let gb = grad_wrt_points(&cam, &lift(&permuted), &dl_perm).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(ga[i], gb[k]);
        }
        let ca = grad_wrt_camera(&cam, &lift(&pts), &dl).unwrap();
        let cb = grad_wrt_camera(&cam, &lift(&permuted), &dl_perm).unwrap();
        for (x, y) in ca.iter().zip(&cb) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn camera_gradient_is_linear_in_upstream(
        cam in camera(),
        pts in points(1..15),
        alpha in -3.0..3.0f64,
        beta in -3.0..3.0f64,
    ) {
        let n = pts.len();
        let u: Vec<Vector2<f64>> = (0..n).map(|i| Vector2::new((i as f64 * 1.7).sin(), 1.0)).collect();
        let v: Vec<Vector2<f64>> = (0..n).map(|i| Vector2::new(-0.5, (i as f64 * 0.9).cos())).collect();
        let mix: Vec<Vector2<f64>> = u.iter().zip(&v).map(|(a, b)| a * alpha + b * beta).collect();
        let h = lift(&pts);
        let gu = grad_wrt_camera(&cam, &h, &u).unwrap();
        let gv = grad_wrt_camera(&cam, &h, &v).unwrap();
        let gm = grad_wrt_camera(&cam, &h, &mix).unwrap();
        for k in 0..11 {
            let expect = alpha * gu[k] + beta * gv[k];
            let scale = (alpha * gu[k]).abs() + (beta * gv[k]).abs() + 1e-12;
            prop_assert!((gm[k] - expect).abs() <= 1e-10 * scale, "k={} {} vs {}", k, gm[k], expect);
        }
    }

    #[test]
    fn tps_interpolates(c in controls(), disp in points(40..41)) {
        let corr: Vec<_> = c
            .iter()
            .zip(&disp)
            .map(|(&s, d)| ControlCorrespondence { source: s, target: s + d * 0.2 })
            .collect();
        let w = fit(&corr, 0.0).unwrap();
        let targets: Vec<Point3> = corr.iter().map(|k| k.target).collect();
        prop_assert!(max_dist(&apply(&w, &c), &targets) < 1e-8);
    }

    #[test]
    fn tps_identity(c in controls(), eval in points(1..50)) {
        let corr: Vec<_> = c.iter().map(|&s| ControlCorrespondence { source: s, target: s }).collect();
        let w = fit(&corr, 0.0).unwrap();
        prop_assert!(max_dist(&apply(&w, &eval), &eval) < 1e-10);
    }

    #[test]
    fn tps_reproduces_affine(
        c in controls(),
        a in prop::array::uniform9(-1.0..1.0f64),
        t in point(),
        eval in points(1..50),
    ) {
        let m = Matrix3::from_row_slice(&a) + Matrix3::identity();
        let corr: Vec<_> = c.iter().map(|&s| ControlCorrespondence { source: s, target: m * s + t }).collect();
        let w = fit(&corr, 0.0).unwrap();
        let expect: Vec<Point3> = eval.iter().map(|p| m * p + t).collect();
        prop_assert!(max_dist(&apply(&w, &eval), &expect) < 1e-8);
        let n = w.n_controls();
        for th in w.theta() {
            prop_assert!(th[4..4 + n].iter().all(|x| x.abs() < 1e-8));
        }
    }

    #[test]
    fn tps_apply_and_gradient_are_order_independent(c in controls(), disp in points(40..41), eval in points(2..40)) {
        let corr: Vec<_> = c
            .iter()
            .zip(&disp)
            .map(|(&s, d)| ControlCorrespondence { source: s, target: s + d * 0.1 })
            .collect();
        let w = fit(&corr, 0.0).unwrap();
        let rev: Vec<Point3> = eval.iter().rev().copied().collect();
        let a = apply(&w, &eval);
        let b = apply(&w, &rev);
        for (p, q) in a.iter().zip(b.iter().rev()) {
            prop_assert_eq!(p, q);
        }
        let dl: Vec<Vector3<f64>> = (0..eval.len()).map(|i| Vector3::new(1.0, (i as f64).sin(), -0.5)).collect();
        let dl_rev: Vec<Vector3<f64>> = dl.iter().rev().copied().collect();
        let ga = tps::grad_wrt_params(&w, &eval, &dl).unwrap();
        let gb = tps::grad_wrt_params(&w, &rev, &dl_rev).unwrap();
        for (x, y) in ga.iter().zip(&gb) {
            for (p, q) in x.iter().zip(y) {
                prop_assert!((p - q).abs() <= 1e-12 * (1.0 + p.abs()));
            }
        }
    }

    #[test]
    fn sampler_reproduces_texels(w in 1usize..8, h in 1usize..8, ch in 1usize..3, seed in any::<u32>()) {
        let g = Grid2D::from_fn(w, h, ch, |r, c, k| ((r * 31 + c * 7 + k * 3) as f64 + seed as f64).sin());
        let coords: Vec<SampleCoord> = (0..h)
            .flat_map(|r| (0..w).map(move |c| SampleCoord::new(c as f64, r as f64)))
            .collect();
        let out = sample_bilinear(&g, &coords);
        for (c, o) in coords.iter().zip(&out) {
            prop_assert_eq!(o.as_slice(), g.texel(c.y as usize, c.x as usize));
        }
    }

    /// The bound uses the L1 coordinate distance: per axis the slope is at
    /// most the largest adjacent-texel difference.
    #[test]
    fn sampler_is_lipschitz(
        vals in prop::collection::vec(-1.0..1.0f64, 36),
        x in -1.0..7.0f64,
        y in -1.0..7.0f64,
        dx in -0.5..0.5f64,
        dy in -0.5..0.5f64,
    ) {
        let g = Grid2D::new(6, 6, 1, vals.clone()).unwrap();
        let mut l: f64 = 0.0;
        for r in 0..6 {
            for c in 0..6 {
                if c + 1 < 6 { l = l.max((vals[r * 6 + c] - vals[r * 6 + c + 1]).abs()); }
                if r + 1 < 6 { l = l.max((vals[r * 6 + c] - vals[(r + 1) * 6 + c]).abs()); }
            }
        }
        let s = sample_bilinear(&g, &[SampleCoord::new(x, y), SampleCoord::new(x + dx, y + dy)]);
        prop_assert!((s[0][0] - s[1][0]).abs() <= l * (dx.abs() + dy.abs()) + 1e-12);
    }

    #[test]
    fn visibility_is_scale_invariant(p in pose(), s in 0.1..10.0f64) {
        let mesh = small_face();
        let cam = camera_from_pose(p, 300.0, 8.0, (64.0, 64.0), (0.0, 0.0));
        let scaled: Vec<Point3> = mesh.vertices.iter().map(|v| v * s).collect();
        // M · diag(1/s, 1/s, 1/s, 1) maps the scaled scene to the same image
        let mut m = cam.to_matrix();
        for r in 0..3 {
            for c in 0..3 {
                m[(r, c)] /= s;
            }
        }
        let cam_s = CameraParams::from_matrix(&m).unwrap();
        let opts = VisibilityOptions::default();
        let a = visibility(mesh, &mesh.vertices, &cam, opts).unwrap();
        let b = visibility(mesh, &scaled, &cam_s, opts).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn convex_visibility_needs_no_depth_test(p in pose(), d in 2.5..20.0f64) {
        let mesh = sphere();
        let cam = camera_from_pose(p, 200.0, d, (64.0, 64.0), (5.0, -5.0));
        let normal_only = VisibilityOptions { zbuffer: false, ..Default::default() };
        let a = visibility(mesh, &mesh.vertices, &cam, normal_only).unwrap();
        let b = visibility(mesh, &mesh.vertices, &cam, VisibilityOptions::default()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn refit_is_idempotent(p in pose(), shift in prop::collection::vec(-2.0..2.0f64, 136)) {
        let mesh = small_face();
        let cam = camera_from_pose(p, 300.0, 8.0, (64.0, 64.0), (0.0, 0.0));
        let idx = mesh.landmark_indices();
        let proj = project(&cam, &lift(&mesh.gather(&mesh.vertices, &idx))).unwrap();
        let target: Vec<_> = proj
            .iter()
            .enumerate()
            .map(|(i, q)| facewarp::Point2::new(q.x + shift[2 * i], q.y + shift[2 * i + 1]))
            .collect();
        let set = LandmarkSet2D::from_points(facewarp::Scheme::Mpie68, &target, &[true; 68]).unwrap();
        let base = TpsWarp3D::identity(mesh.control_points());
        let once = refit_model(mesh, &base, &cam, &set).unwrap();
        let v1 = apply_composed(&base, &once, &mesh.vertices);
        // refit again from the refitted shape: the second correction is the identity
        let twice = refit_model(mesh, &once, &cam, &set).unwrap();
        let v2 = apply_composed(&once, &twice, &mesh.vertices);
        prop_assert!(max_dist(&v1, &v2) < 1e-8, "{}", max_dist(&v1, &v2));
    }

    #[test]
    fn refit_to_own_projection_moves_nothing(p in pose()) {
        let mesh = small_face();
        let cam = camera_from_pose(p, 300.0, 8.0, (64.0, 64.0), (1.0, 2.0));
        let idx = mesh.landmark_indices();
        let proj = project(&cam, &lift(&mesh.gather(&mesh.vertices, &idx))).unwrap();
        let set = LandmarkSet2D::from_points(facewarp::Scheme::Mpie68, &proj, &[true; 68]).unwrap();
        let base = TpsWarp3D::identity(mesh.control_points());
        let corr = refit_model(mesh, &base, &cam, &set).unwrap();
        prop_assert!(max_dist(&apply_composed(&base, &corr, &mesh.vertices), &mesh.vertices) < 1e-8);
    }

    #[test]
    fn ced_is_monotone_and_complete(vals in prop::collection::vec(0.0..1.0f64, 1..60), steps in 1usize..50) {
        let th = facewarp::eval::default_thresholds(&vals, steps);
        let c = CedCurve::from_values(&vals, &th).unwrap();
        prop_assert!(c.fractions.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(c.fractions.iter().all(|f| (0.0..=1.0).contains(f)));
        prop_assert_eq!(*c.fractions.last().unwrap(), 1.0);
    }

    #[test]
    fn resampled_ced_is_deterministic(vals in prop::collection::vec(0.0..1.0f64, 3..40), seed in any::<u64>()) {
        let records: Vec<NmeRecord> = vals
            .iter()
            .enumerate()
            .map(|(i, &v)| NmeRecord {
                id: i.to_string(),
                errors: vec![v],
                bbox_w: 1.0,
                bbox_h: 1.0,
                pose_bin: PoseBin::ALL[i % 3],
                nme: v,
            })
            .collect();
        let th = facewarp::eval::default_thresholds(&vals, 20);
        let a = ced_resampled(&records, 5, 4, &th, seed).unwrap();
        let b = ced_resampled(&records, 5, 4, &th, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}

fn small_face() -> &'static FaceMesh {
    static M: OnceLock<FaceMesh> = OnceLock::new();
    M.get_or_init(|| {
        mean_face(&MeanFaceConfig {
            n_lon: 41,
            n_lat: 41,
            ..Default::default()
        })
    })
}

fn sphere() -> &'static FaceMesh {
    static M: OnceLock<FaceMesh> = OnceLock::new();
    M.get_or_init(|| icosphere(3))
}
