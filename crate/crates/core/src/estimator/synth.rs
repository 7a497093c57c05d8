//! Synthetic training data: random poses and shape warps of the mean face,
//! flat-shaded into small grayscale images.

use std::path::Path;

use nalgebra::{Matrix3, Matrix3x4, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EstimatorConfig;
use crate::error::{Error, Result};
use crate::eval::PoseBin;
use crate::landmarks::LandmarkSet2D;
use crate::mesh::raster::DepthBuffer;
use crate::mesh::shapes::mean_face;
use crate::mesh::{visibility, FaceMesh, VisibilityOptions};
use crate::projection::{lift, project, CameraParams};
use crate::sampler::Grid2D;
use crate::tps::{self, ControlCorrespondence, TpsWarp3D};
use crate::Point3;

/// Head pose in degrees. Yaw turns about the model's vertical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

/// Perspective camera `K [R | t]` normalized so that `M34 = 1`. At zero
/// pose it sits on the +z axis at `distance`, looking toward the origin,
/// with image y pointing down. `shift` moves the image of the origin by
/// that many pixels.
pub fn camera_from_pose(
    pose: Pose,
    focal: f64,
    distance: f64,
    center: (f64, f64),
    shift: (f64, f64),
) -> CameraParams {
    let flip = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
    let r = flip
        * Rotation3::from_axis_angle(&Vector3::z_axis(), pose.roll.to_radians()).matrix()
        * Rotation3::from_axis_angle(&Vector3::x_axis(), pose.pitch.to_radians()).matrix()
        * Rotation3::from_axis_angle(&Vector3::y_axis(), pose.yaw.to_radians()).matrix();
    let k = Matrix3::new(focal, 0.0, center.0, 0.0, focal, center.1, 0.0, 0.0, 1.0);
    let t = Vector3::new(shift.0 * distance / focal, shift.1 * distance / focal, distance);
    let mut rt = Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    rt.set_column(3, &t);
    CameraParams::from_matrix(&(k * rt)).expect("distance is positive")
}

/// Frontal camera the untrained estimator starts from.
pub fn canonical_camera(cfg: &EstimatorConfig) -> CameraParams {
    let c = (cfg.input_size as f64 - 1.0) / 2.0;
    camera_from_pose(
        Pose {
            yaw: 0.0,
            pitch: 0.0,
            roll: 0.0,
        },
        cfg.init_focal,
        cfg.init_distance,
        (c, c),
        (0.0, 0.0),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub id: String,
    pub image: Grid2D,
    pub true_camera: CameraParams,
    pub true_warp: TpsWarp3D,
    /// Visibility flags come from the true warped shape and camera.
    pub true_lm2d: LandmarkSet2D,
    pub true_vertices: Vec<Point3>,
    pub pose: Pose,
}

impl TrainSample {
    pub fn pose_bin(&self) -> PoseBin {
        PoseBin::from_yaw_deg(self.pose.yaw).expect("generated yaw lies in [-90, 90]")
    }
}

/// Flat-shaded render with a light at the camera center; background 0.
pub fn render(mesh: &FaceMesh, warped: &[Point3], cam: &CameraParams, size: usize) -> Result<Grid2D> {
    crate::error::check_len("warped vertices", mesh.n_vertices(), warped.len())?;
    let center = crate::mesh::estimate_camera_center(cam)?;
    let sign = cam.a_block().determinant().signum();
    let a = &cam.a;
    let proj: Vec<Option<(f64, f64, f64)>> = warped
        .iter()
        .map(|p| {
            let w = cam.depth(p);
            (sign * w > crate::projection::EPS_DEPTH).then(|| {
                let u = a[0] * p.x + a[1] * p.y + a[2] * p.z + a[3];
                let v = a[4] * p.x + a[5] * p.y + a[6] * p.z + a[7];
                (u / w, v / w, 1.0 / (sign * w))
            })
        })
        .collect();
    let mut buf = DepthBuffer::new(size, size);
    for (fi, f) in mesh.faces.iter().enumerate() {
        if let (Some(p0), Some(p1), Some(p2)) = (proj[f[0]], proj[f[1]], proj[f[2]]) {
            buf.draw(fi as u32, [p0, p1, p2]);
        }
    }
    let shade: Vec<f64> = mesh
        .faces
        .iter()
        .map(|f| {
            let (v0, v1, v2) = (warped[f[0]], warped[f[1]], warped[f[2]]);
            let n = (v1 - v0).cross(&(v2 - v0));
            let l = center - (v0 + v1 + v2) / 3.0;
            let c = n.dot(&l) / (n.norm() * l.norm()).max(1e-300);
            0.15 + 0.85 * c.max(0.0)
        })
        .collect();
    let data = buf
        .tri
        .iter()
        .map(|&t| shade.get(t as usize).copied().unwrap_or(0.0))
        .collect();
    Grid2D::new(size, size, 1, data)
}

/// One sample with a given pose, shape warp and camera jitter.
pub fn make_sample(
    id: String,
    mesh: &FaceMesh,
    cfg: &EstimatorConfig,
    pose: Pose,
    warp: TpsWarp3D,
    focal: f64,
    shift: (f64, f64),
) -> Result<TrainSample> {
    let c = (cfg.input_size as f64 - 1.0) / 2.0;
    let cam = camera_from_pose(pose, focal, cfg.init_distance, (c, c), shift);
    let true_vertices = tps::apply(&warp, &mesh.vertices);
    let lm_idx = mesh.landmark_indices();
    let scheme = mesh
        .scheme()
        .ok_or_else(|| Error::InvalidArgument("mesh has no landmark map".into()))?;
    let pts = project(&cam, &lift(&mesh.gather(&true_vertices, &lm_idx)))?;
    let vis = visibility(mesh, &true_vertices, &cam, VisibilityOptions::default())?;
    let true_lm2d = LandmarkSet2D::from_points(scheme, &pts, &vis.select(&lm_idx))?;
    let image = render(mesh, &true_vertices, &cam, cfg.input_size)?;
    Ok(TrainSample {
        id,
        image,
        true_camera: cam,
        true_warp: warp,
        true_lm2d,
        true_vertices,
        pose,
    })
}

fn random_warp(mesh: &FaceMesh, bound: f64, rng: &mut impl Rng) -> Result<TpsWarp3D> {
    let controls = mesh.control_points();
    if bound == 0.0 {
        return Ok(TpsWarp3D::identity(controls));
    }
    let corr: Vec<ControlCorrespondence> = controls
        .iter()
        .map(|&c| {
            let dir = loop {
                let v = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let n: f64 = v.norm();
                if n > 1e-3 && n <= 1.0 {
                    break v / n;
                }
            };
            let mag: f64 = rng.random_range(0.0..=bound);
            ControlCorrespondence {
                source: c,
                target: c + dir * mag,
            }
        })
        .collect();
    tps::fit(&corr, 0.0)
}

/// `count` samples; sample `i` falls in pose bin `i mod 3` with yaw uniform
/// inside the bin and random sign. Each sample has its own RNG stream, so
/// the output depends only on `seed` and the config.
pub fn synth_generate_with(
    mesh: &FaceMesh,
    cfg: &EstimatorConfig,
    count: usize,
    seed: u64,
) -> Result<Vec<TrainSample>> {
    let bound = cfg.max_displacement * mesh.bbox_diagonal();
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let (lo, hi) = [(0.0, 30.0), (30.0, 60.0), (60.0, 90.0)][i % 3];
            let mut yaw: f64 = rng.random_range(lo..=hi);
            if yaw == lo && lo > 0.0 {
                yaw = hi;
            }
            if rng.random_bool(0.5) {
                yaw = -yaw;
            }
            let pose = Pose {
                yaw,
                pitch: rng.random_range(-10.0..=10.0),
                roll: rng.random_range(-10.0..=10.0),
            };
            let focal = cfg.init_focal * rng.random_range(0.9..=1.1);
            let shift = (rng.random_range(-2.0..=2.0), rng.random_range(-2.0..=2.0));
            let warp = random_warp(mesh, bound, &mut rng)?;
            make_sample(format!("{i:06}"), mesh, cfg, pose, warp, focal, shift)
        })
        .collect()
}

pub fn synth_generate(cfg: &EstimatorConfig, count: usize, seed: u64) -> Result<Vec<TrainSample>> {
    cfg.validate()?;
    synth_generate_with(&mean_face(&cfg.mesh_config()), cfg, count, seed)
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    pose: Pose,
    camera: CameraParams,
    warp: TpsWarp3D,
    landmarks: LandmarkSet2D,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    mesh_lon: usize,
    mesh_lat: usize,
    n_controls: usize,
    scheme: crate::landmarks::Scheme,
    input_size: usize,
    samples: Vec<ManifestEntry>,
}

/// Writes `manifest.json`, exact `<id>.fwgd` images and `<id>.png` previews.
pub fn save_dataset(samples: &[TrainSample], cfg: &EstimatorConfig, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    samples.par_iter().try_for_each(|s| -> Result<()> {
        let f = std::fs::File::create(dir.join(format!("{}.fwgd", s.id)))?;
        s.image.write_raw(std::io::BufWriter::new(f))?;
        s.image.save_png(dir.join(format!("{}.png", s.id)))
    })?;
    let manifest = Manifest {
        mesh_lon: cfg.mesh_lon,
        mesh_lat: cfg.mesh_lat,
        n_controls: cfg.n_controls,
        scheme: cfg.scheme,
        input_size: cfg.input_size,
        samples: samples
            .iter()
            .map(|s| ManifestEntry {
                id: s.id.clone(),
                pose: s.pose,
                camera: s.true_camera,
                warp: s.true_warp.clone(),
                landmarks: s.true_lm2d.clone(),
            })
            .collect(),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string(&manifest)?)?;
    Ok(())
}

/// Reads a dataset written by [`save_dataset`]; its mesh settings must match
/// `cfg`.
pub fn load_dataset(cfg: &EstimatorConfig, dir: impl AsRef<Path>) -> Result<Vec<TrainSample>> {
    let dir = dir.as_ref();
    let m: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    if (m.mesh_lon, m.mesh_lat, m.n_controls, m.scheme, m.input_size)
        != (cfg.mesh_lon, cfg.mesh_lat, cfg.n_controls, cfg.scheme, cfg.input_size)
    {
        return Err(Error::InvalidArgument(
            "dataset mesh or image settings differ from the config".into(),
        ));
    }
    let mesh = mean_face(&cfg.mesh_config());
    m.samples
        .into_par_iter()
        .map(|e| {
            let f = std::fs::File::open(dir.join(format!("{}.fwgd", e.id)))?;
            let image = Grid2D::read_raw(std::io::BufReader::new(f))?;
            e.warp.validate()?;
            let true_vertices = tps::apply(&e.warp, &mesh.vertices);
            Ok(TrainSample {
                id: e.id,
                image,
                true_camera: e.camera,
                true_warp: e.warp,
                true_lm2d: e.landmarks,
                true_vertices,
                pose: e.pose,
            })
        })
        .collect()
}
