//! Gradient audits, timing and mesh generation.

use std::path::PathBuf;
use std::time::Instant;

use facewarp::audit::{audit_many, AuditModule};
use facewarp::estimator::checkpoint;
use facewarp::estimator::synth::{camera_from_pose, Pose};
use facewarp::eval::{bench as run_bench, BenchReport};
use facewarp::mesh::shapes::{mean_face, MeanFaceConfig};
use facewarp::mesh::{save_mesh, visibility};
use facewarp::projection::{lift, project};
use facewarp::tps::{self, ControlCorrespondence};
use facewarp::{CameraParams, Scheme, TpsWarp3D, VisibilityOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::error::{invalid, CliError, CliResult};
use crate::files;

#[derive(clap::Args)]
pub struct GradcheckArgs {
    /// `all`, `proj`, `tps`, `sampler` or `e2e`.
    #[arg(long, default_value = "all")]
    pub module: String,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Consecutive seeds per module.
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    /// Print the reports as JSON instead of one line each.
    #[arg(long)]
    pub json: bool,
}

pub fn gradcheck(a: GradcheckArgs) -> CliResult<()> {
    let modules: Vec<AuditModule> = match a.module.as_str() {
        "all" => AuditModule::ALL.to_vec(),
        m => vec![m.parse()?],
    };
    if a.seeds == 0 {
        return Err(invalid("--seeds must be positive"));
    }
    let t = Instant::now();
    let reports = audit_many(&modules, a.seed, a.seeds)?;
    let seconds = t.elapsed().as_secs_f64();
    if a.json {
        files::print_json(&reports)?;
    } else {
        for r in &reports {
            println!("{r}");
        }
        println!("{} audits in {seconds:.2} s", reports.len());
    }
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{}@{}", r.module, r.seed))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::new(
            "audit_failed",
            format!("{} of {} audits failed: {}", failed.len(), reports.len(), failed.join(", ")),
        ))
    }
}

#[derive(clap::Args)]
pub struct BenchArgs {
    /// Checkpoint: time the full estimator forward pass on --images.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Image file or directory (with --model).
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Without --model: time TPS apply + projection + visibility on this mesh
    /// (default: generated mean face of --lon × --lat vertices).
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    #[arg(long, default_value_t = 224)]
    pub lon: usize,
    #[arg(long, default_value_t = 224)]
    pub lat: usize,
    /// Geometry mode: number of random poses, each one "image".
    #[arg(long, default_value_t = 4)]
    pub poses: usize,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Runs on a one-thread pool so that timings are single-image, single-core.
pub fn bench(a: BenchArgs) -> CliResult<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| invalid(e.to_string()))?;
    let (mode, report, n_vertices) = pool.install(|| -> CliResult<(&str, BenchReport, usize)> {
        match &a.model {
            Some(path) => {
                let model = checkpoint::load(path)?;
                let dir = a.images.as_ref().ok_or_else(|| invalid("--model needs --images"))?;
                let images = files::image_inputs(dir)?
                    .iter()
                    .map(|(_, p)| files::load_image(p))
                    .collect::<CliResult<Vec<_>>>()?;
                let r = run_bench(&images, a.warmup, a.reps, |im| model.forward(im).map(|_| ()))?;
                Ok(("model", r, model.mesh().n_vertices()))
            }
            None => {
                let (mesh, cams, warp) = geometry_inputs(&a)?;
                let r = run_bench(&cams, a.warmup, a.reps, |cam| {
                    let verts = tps::apply(&warp, &mesh.vertices);
                    project(cam, &lift(&verts))?;
                    visibility(&mesh, &verts, cam, VisibilityOptions::default())?;
                    Ok(())
                })?;
                Ok(("geometry", r, mesh.n_vertices()))
            }
        }
    })?;
    files::print_json(&json!({
        "mode": mode,
        "n_vertices": n_vertices,
        "report": report,
    }))
}

fn geometry_inputs(a: &BenchArgs) -> CliResult<(facewarp::FaceMesh, Vec<CameraParams>, TpsWarp3D)> {
    if a.poses == 0 {
        return Err(invalid("--poses must be positive"));
    }
    let mesh = match &a.mesh {
        Some(p) => facewarp::mesh::load_mesh(p)?,
        None => mean_face(&MeanFaceConfig {
            n_lon: a.lon,
            n_lat: a.lat,
            ..Default::default()
        }),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let controls = mesh.control_points();
    if controls.len() < 4 {
        return Err(invalid("mesh needs at least 4 control vertices"));
    }
    let bound = 0.05 * mesh.bbox_diagonal();
    let corr: Vec<_> = controls
        .iter()
        .map(|&c| {
            let d = nalgebra::Vector3::from_fn(|_, _| rng.random_range(-bound..bound));
            ControlCorrespondence { source: c, target: c + d }
        })
        .collect();
    let warp = tps::fit(&corr, 0.0)?;
    let cams = (0..a.poses)
        .map(|_| {
            let pose = Pose {
                yaw: rng.random_range(-90.0..90.0),
                pitch: rng.random_range(-10.0..10.0),
                roll: rng.random_range(-10.0..10.0),
            };
            camera_from_pose(pose, 1000.0, 10.0, (256.0, 256.0), (0.0, 0.0))
        })
        .collect();
    Ok((mesh, cams, warp))
}

#[derive(clap::Args)]
pub struct GenMeshArgs {
    /// OBJ or PLY path; the landmark sidecar is written next to it.
    #[arg(long, default_value = "assets/mean_face.obj")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 71)]
    pub lon: usize,
    #[arg(long, default_value_t = 71)]
    pub lat: usize,
    #[arg(long, default_value_t = 40)]
    pub controls: usize,
    /// `mpie68` or `aflw21`.
    #[arg(long, default_value = "mpie68")]
    pub scheme: Scheme,
}

pub fn gen_mesh(a: GenMeshArgs) -> CliResult<()> {
    let mesh = mean_face(&MeanFaceConfig {
        n_lon: a.lon,
        n_lat: a.lat,
        scheme: a.scheme,
        n_controls: a.controls,
    });
    mesh.validate()?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_mesh(&mesh, None, &a.out)?;
    files::print_json(&json!({
        "mesh": a.out,
        "sidecar": facewarp::mesh::sidecar_path(&a.out),
        "vertices": mesh.n_vertices(),
        "faces": mesh.faces.len(),
        "controls": mesh.control_indices.len(),
    }))
}
