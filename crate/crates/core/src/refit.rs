//! Re-establishing exact 2D↔3D landmark correspondence after 2D refinement.
//!
//! Each regressed landmark defines a ray of 3D points projecting onto it.
//! The current 3D landmark is moved to the closest point on its ray, and a
//! TPS fitted on those moves carries the rest of the model along.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, Vector3, LU};

use crate::error::{Error, Result};
use crate::landmarks::LandmarkSet2D;
use crate::mesh::{FaceMesh, EPS_DET};
use crate::projection::{CameraParams, Point2};
use crate::tps::{self, ControlCorrespondence, TpsWarp3D};
use crate::Point3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray3 {
    pub origin: Point3,
    /// Not normalized.
    pub direction: Vector3<f64>,
}

impl Ray3 {
    pub fn new(origin: Point3, direction: Vector3<f64>) -> Result<Self> {
        if !(direction.norm() > 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "ray direction too short: {direction:?}"
            )));
        }
        Ok(Ray3 { origin, direction })
    }

    pub fn at(&self, lambda: f64) -> Point3 {
        self.origin + self.direction * lambda
    }

    /// Parameter of the point on the full line nearest to `p`.
    pub fn closest_param(&self, p: &Point3) -> f64 {
        (p - self.origin).dot(&self.direction) / self.direction.norm_squared()
    }
}

struct Backprojector {
    lu: LU<f64, nalgebra::U3, nalgebra::U3>,
    origin: Point3,
}

impl Backprojector {
    fn new(cam: &CameraParams) -> Result<Self> {
        let a = cam.a_block();
        let det = a.determinant();
        if !(det.abs() > EPS_DET) {
            return Err(Error::SingularA { det });
        }
        let lu = a.lu();
        let origin = lu.solve(&(-cam.b_column())).ok_or(Error::SingularA { det })?;
        Ok(Backprojector { lu, origin })
    }

    fn ray(&self, p: Point2) -> Result<Ray3> {
        let d = self
            .lu
            .solve(&Vector3::new(p.x, p.y, 1.0))
            .ok_or_else(|| Error::InvalidArgument("backprojection solve failed".into()))?;
        Ray3::new(self.origin, d)
    }
}

/// Ray `−A⁻¹b + λ·A⁻¹(u, v, 1)` of points projecting to `lm2d`.
pub fn backproject(cam: &CameraParams, lm2d: Point2) -> Result<Ray3> {
    Backprojector::new(cam)?.ray(lm2d)
}

/// Nearest point to `p` on the full line through the ray.
pub fn closest_point_on_ray(ray: &Ray3, p: &Point3) -> Point3 {
    ray.at(ray.closest_param(p))
}

/// Fits a correction warp moving the (currently warped) landmark vertices
/// onto the backprojected rays of `regressed`. Apply it after `current`,
/// e.g. with [`apply_composed`].
pub fn refit_model(
    mesh: &FaceMesh,
    current: &TpsWarp3D,
    cam: &CameraParams,
    regressed: &LandmarkSet2D,
) -> Result<TpsWarp3D> {
    let lm = mesh
        .landmark_map
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("mesh has no landmark map".into()))?;
    if lm.scheme != regressed.scheme {
        return Err(Error::SchemeMismatch {
            expected: lm.scheme.to_string(),
            got: regressed.scheme.to_string(),
        });
    }
    let proj = Backprojector::new(cam)?;
    let sign = cam.a_block().determinant().signum();
    let rest: Vec<Point3> = lm.map.values().map(|&i| mesh.vertices[i]).collect();
    let sources = tps::apply(current, &rest);
    let mut corr = Vec::with_capacity(sources.len());
    for ((&id, _), src) in lm.map.iter().zip(sources) {
        let target2d = regressed.get(id).ok_or_else(|| Error::SchemeMismatch {
            expected: format!("{} with landmark {id}", lm.scheme),
            got: format!("{} points without it", regressed.len()),
        })?;
        let ray = proj.ray(target2d.point())?;
        let target = closest_point_on_ray(&ray, &src);
        if sign * cam.depth(&target) < 0.0 {
            log::warn!("landmark {id}: closest ray point lies behind the camera");
        }
        corr.push(ControlCorrespondence { source: src, target });
    }
    tps::fit(&corr, 0.0)
}

/// Fits a correction warp moving the warped landmark vertices to arbitrary
/// caller-chosen 3D positions (ordered by landmark id), e.g. a neutral
/// expression.
pub fn refit_toward(mesh: &FaceMesh, current: &TpsWarp3D, targets: &[Point3]) -> Result<TpsWarp3D> {
    let idx = mesh.landmark_indices();
    crate::error::check_len("target landmarks", idx.len(), targets.len())?;
    let rest = mesh.gather(&mesh.vertices, &idx);
    let corr: Vec<_> = tps::apply(current, &rest)
        .into_iter()
        .zip(targets)
        .map(|(source, &target)| ControlCorrespondence { source, target })
        .collect();
    tps::fit(&corr, 0.0)
}

/// `correction ∘ base` applied to `pts`.
pub fn apply_composed(base: &TpsWarp3D, correction: &TpsWarp3D, pts: &[Point3]) -> Vec<Point3> {
    tps::apply(correction, &tps::apply(base, pts))
}

/// Linear camera estimate from at least six 3D↔2D correspondences
/// (normalized direct linear transform), rescaled so that `M34 = 1`.
pub fn estimate_camera(points3: &[Point3], points2: &[Point2]) -> Result<CameraParams> {
    crate::error::check_len("2D points", points3.len(), points2.len())?;
    let n = points3.len();
    if n < 6 {
        return Err(Error::InvalidArgument(format!(
            "camera estimation needs at least 6 correspondences, got {n}"
        )));
    }
    // similarity normalization: centroid to the origin, mean distance √3 / √2
    let c3 = points3.iter().sum::<Point3>() / n as f64;
    let d3 = points3.iter().map(|p| (p - c3).norm()).sum::<f64>() / n as f64;
    let c2 = points2.iter().fold((0.0, 0.0), |a, p| (a.0 + p.x, a.1 + p.y));
    let c2 = (c2.0 / n as f64, c2.1 / n as f64);
    let d2 = points2
        .iter()
        .map(|p| ((p.x - c2.0).powi(2) + (p.y - c2.1).powi(2)).sqrt())
        .sum::<f64>()
        / n as f64;
    if !(d3 > 0.0 && d2 > 0.0) {
        return Err(Error::InvalidArgument("degenerate correspondences".into()));
    }
    let s3 = 3f64.sqrt() / d3;
    let s2 = 2f64.sqrt() / d2;
    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, (p, q)) in points3.iter().zip(points2).enumerate() {
        let x = [(p.x - c3.x) * s3, (p.y - c3.y) * s3, (p.z - c3.z) * s3, 1.0];
        let u = (q.x - c2.0) * s2;
        let v = (q.y - c2.1) * s2;
        for k in 0..4 {
            a[(2 * i, k)] = x[k];
            a[(2 * i, 8 + k)] = -u * x[k];
            a[(2 * i + 1, 4 + k)] = x[k];
            a[(2 * i + 1, 8 + k)] = -v * x[k];
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::InvalidArgument("SVD failed".into()))?;
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |b, (i, &s)| if s < b.1 { (i, s) } else { b });
    let h = vt.row(imin);
    let mn = Matrix3x4::from_fn(|r, c| h[4 * r + c]);
    let t2 = Matrix3::new(s2, 0.0, -s2 * c2.0, 0.0, s2, -s2 * c2.1, 0.0, 0.0, 1.0);
    let t3 = Matrix4::new(
        s3, 0.0, 0.0, -s3 * c3.x, 0.0, s3, 0.0, -s3 * c3.y, 0.0, 0.0, s3, -s3 * c3.z, 0.0, 0.0, 0.0, 1.0,
    );
    let t2inv = t2
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("degenerate 2D normalization".into()))?;
    let m = t2inv * mn * t3;
    if !(m[(2, 3)].abs() > 1e-12 * m.amax()) {
        return Err(Error::InvalidArgument(
            "estimated camera has M34 = 0, which the 11-parameter model cannot represent".into(),
        ));
    }
    CameraParams::from_matrix(&m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::Scheme;
    use crate::mesh::shapes::{mean_face, MeanFaceConfig};
    use crate::projection::{lift, project};

    fn pinhole() -> CameraParams {
        // M = [I | 0] up to the M34 = 1 normalization is not representable;
        // use m3 = (0, 0, 1, 1), i.e. a camera at z = -1.
        CameraParams::new([1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 1.])
    }

    #[test]
    fn principal_ray() {
        let r = backproject(&pinhole(), Point2::new(0., 0.)).unwrap();
        assert_eq!(r.origin, Point3::new(0., 0., -1.));
        assert_eq!(r.direction, Vector3::new(0., 0., 1.));
        let r = backproject(&pinhole(), Point2::new(0.3, -2.)).unwrap();
        assert_eq!(r.direction, Vector3::new(0.3, -2., 1.));
    }

    #[test]
    fn closest_point_examples() {
        let ray = Ray3::new(Point3::zeros(), Vector3::z()).unwrap();
        assert_eq!(closest_point_on_ray(&ray, &Point3::new(1., 1., 5.)), Point3::new(0., 0., 5.));
        let ray = Ray3::new(Point3::new(1., 2., 3.), Vector3::new(0.5, -1., 2.)).unwrap();
        let p = ray.at(1.7);
        assert!((closest_point_on_ray(&ray, &p) - p).norm() < 1e-14);
        assert!(Ray3::new(Point3::zeros(), Vector3::zeros()).is_err());
    }

    #[test]
    fn dlt_recovers_camera() {
        let cam = CameraParams::new([2.0, 0.1, 0.3, 32., -0.2, -2.0, 0.1, 30., 0.01, 0.02, -0.1]);
        let pts: Vec<Point3> = (0..20)
            .map(|i| {
                let t = i as f64;
                Point3::new((t * 0.7).sin(), (t * 1.3).cos(), (t * 0.4).sin() * 0.8)
            })
            .collect();
        let uv = project(&cam, &lift(&pts)).unwrap();
        let est = estimate_camera(&pts, &uv).unwrap();
        for (a, b) in est.a.iter().zip(cam.a) {
            assert!((a - b).abs() < 1e-8 * b.abs().max(1.0), "{a} vs {b}");
        }
        assert!(estimate_camera(&pts[..5], &uv[..5]).is_err());
    }

    #[test]
    fn scheme_mismatch() {
        let mesh = mean_face(&MeanFaceConfig::default());
        let warp = TpsWarp3D::identity(mesh.control_points());
        let lms = LandmarkSet2D::from_points(Scheme::Aflw21, &[Point2::new(0., 0.); 21], &[true; 21])
            .unwrap();
        assert!(matches!(
            refit_model(&mesh, &warp, &pinhole(), &lms),
            Err(Error::SchemeMismatch { .. })
        ));
    }

    #[test]
    fn unchanged_landmarks_give_identity_correction() {
        let mesh = mean_face(&MeanFaceConfig::default());
        let warp = TpsWarp3D::identity(mesh.control_points());
        let cam = CameraParams::new([2.0, 0., 0., 32., 0., -2.0, 0., 32., 0., 0., -0.1]);
        let idx = mesh.landmark_indices();
        let pts = project(&cam, &lift(&mesh.gather(&mesh.vertices, &idx))).unwrap();
        let lms = LandmarkSet2D::from_points(Scheme::Mpie68, &pts, &vec![true; pts.len()]).unwrap();
        let corr = refit_model(&mesh, &warp, &cam, &lms).unwrap();
        let moved = apply_composed(&warp, &corr, &mesh.vertices);
        let worst = moved
            .iter()
            .zip(&mesh.vertices)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst}");
    }
}
