use std::fs;
use std::path::PathBuf;

use facewarp::eval::{yaw_from_camera, PoseBin};
use facewarp::estimator::checkpoint;
use facewarp::mesh::{save_mesh, visibility};
use facewarp::projection::{lift, project};
use facewarp::refit::{apply_composed, estimate_camera, refit_model};
use facewarp::tps::TpsWarp3D;
use facewarp::{CameraParams, FaceMesh, LandmarkSet2D, Point2, VisibilityOptions};
use serde::Serialize;

use crate::error::{invalid, CliResult};
use crate::files;

#[derive(clap::Args)]
pub struct FitArgs {
    /// Landmark file (.json or .pts), or an image (.png or .fwgd) when
    /// --model is given.
    pub input: PathBuf,
    /// OBJ or PLY mesh with a landmark sidecar; defaults to the built-in mean face.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// Camera file (11 parameters, or a 3×4 matrix). Landmark input: estimated
    /// linearly from the correspondences when omitted. Image input: defaults
    /// to the network's camera.
    #[arg(long)]
    pub camera_init: Option<PathBuf>,
    /// Trained checkpoint; required for image input.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct FitReport {
    n_landmarks: usize,
    max_reprojection_error_px: f64,
    mean_reprojection_error_px: f64,
    yaw_deg: Option<f64>,
    pose_bin: Option<&'static str>,
    visible_vertices: usize,
    n_vertices: usize,
}

pub fn run(a: FitArgs) -> CliResult<()> {
    let (mesh, base, cam, targets) = if files::is_image(&a.input) {
        let path = a
            .model
            .as_ref()
            .ok_or_else(|| invalid("fitting an image needs --model"))?;
        if a.mesh.is_some() {
            return Err(invalid("--mesh cannot be combined with --model; the model carries its mesh"));
        }
        let model = checkpoint::load(path)?;
        let image = files::load_image(&a.input)?;
        let fwd = model.forward_opts(&image, false)?;
        let cam = match &a.camera_init {
            Some(p) => files::load_camera(p)?,
            None => fwd.camera,
        };
        (model.mesh().clone(), fwd.warp, cam, fwd.lm_refined)
    } else {
        let targets = LandmarkSet2D::load(&a.input)?;
        let mesh = files::mesh_or_default(a.mesh.as_deref(), targets.scheme)?;
        let cam = match &a.camera_init {
            Some(p) => files::load_camera(p)?,
            None => linear_camera(&mesh, &targets)?,
        };
        let base = TpsWarp3D::identity(mesh.control_points());
        (mesh, base, cam, targets)
    };

    let correction = refit_model(&mesh, &base, &cam, &targets)?;
    let vertices = apply_composed(&base, &correction, &mesh.vertices);
    let vis = visibility(&mesh, &vertices, &cam, VisibilityOptions::default())?;

    let lm_map = mesh
        .landmark_map
        .as_ref()
        .ok_or_else(|| invalid("mesh has no landmark map"))?;
    let idx = lm_map.vertex_indices();
    let reproj = project(&cam, &lift(&mesh.gather(&vertices, &idx)))?;
    let errors: Vec<f64> = lm_map
        .ids()
        .iter()
        .zip(&reproj)
        .filter_map(|(id, p)| targets.get(*id).map(|t| t.point().dist(p)))
        .collect();
    let fitted = LandmarkSet2D::from_points(lm_map.scheme, &reproj, &vis.select(&idx))?;

    fs::create_dir_all(&a.out)?;
    save_mesh(&mesh, Some(&vertices), a.out.join("mesh.obj"))?;
    files::save_camera(&cam, &a.out.join("camera.txt"))?;
    fs::write(a.out.join("warp.json"), base.to_json()?)?;
    fs::write(a.out.join("refit.json"), correction.to_json()?)?;
    files::write_json(&a.out.join("visibility.json"), &vis)?;
    fitted.save(a.out.join("landmarks.json"))?;

    let yaw = yaw_from_camera(&cam).ok();
    let report = FitReport {
        n_landmarks: errors.len(),
        max_reprojection_error_px: errors.iter().copied().fold(0.0, f64::max),
        mean_reprojection_error_px: errors.iter().sum::<f64>() / errors.len().max(1) as f64,
        yaw_deg: yaw,
        pose_bin: yaw.and_then(|y| PoseBin::from_yaw_deg(y).ok()).map(PoseBin::label),
        visible_vertices: vis.count_visible(),
        n_vertices: vertices.len(),
    };
    files::write_json(&a.out.join("report.json"), &report)?;
    files::print_json(&report)
}

/// Linear camera from the rest-shape landmark vertices and the 2D targets.
fn linear_camera(mesh: &FaceMesh, targets: &LandmarkSet2D) -> CliResult<CameraParams> {
    let lm = mesh
        .landmark_map
        .as_ref()
        .ok_or_else(|| invalid("mesh has no landmark map"))?;
    let (p3, p2): (Vec<_>, Vec<Point2>) = targets
        .points
        .iter()
        .filter_map(|l| lm.map.get(&l.id).map(|&v| (mesh.vertices[v], l.point())))
        .unzip();
    Ok(estimate_camera(&p3, &p2)?)
}
