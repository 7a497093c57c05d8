//! Synthetic data, training and inference.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use facewarp::eval::BBox;
use facewarp::estimator::synth::{load_dataset, save_dataset};
use facewarp::estimator::train::evaluate;
use facewarp::estimator::{checkpoint, synth_generate, EstimatorConfig, Model};
use facewarp::mesh::save_mesh;
use rayon::prelude::*;
use serde_json::json;

use crate::error::{invalid, CliResult};
use crate::files::{self, BBoxRow};

/// The explicit config file, else `<data>/config.json`, else defaults.
fn resolve_config(explicit: Option<&Path>, data: Option<&Path>) -> CliResult<EstimatorConfig> {
    if let Some(p) = explicit {
        return Ok(EstimatorConfig::load(p)?);
    }
    if let Some(p) = data.map(|d| d.join("config.json")).filter(|p| p.exists()) {
        return Ok(EstimatorConfig::load(p)?);
    }
    Ok(EstimatorConfig::default())
}

#[derive(clap::Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Estimator config (JSON) fixing mesh resolution, scheme and image size.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Writes the dataset plus `config.json`, `truth/<id>.json` landmark files
/// and `bboxes.csv` (landmark bounding boxes and true yaw) for `eval`.
pub fn synth(a: SynthArgs) -> CliResult<()> {
    if a.count == 0 {
        return Err(invalid("--count must be positive"));
    }
    let cfg = resolve_config(a.config.as_deref(), None)?;
    cfg.validate()?;
    let t = Instant::now();
    let samples = synth_generate(&cfg, a.count, a.seed)?;
    save_dataset(&samples, &cfg, &a.out_dir)?;
    cfg.save(a.out_dir.join("config.json"))?;
    let truth = a.out_dir.join("truth");
    fs::create_dir_all(&truth)?;
    let mut rows = Vec::with_capacity(samples.len());
    for s in &samples {
        s.true_lm2d.save(truth.join(format!("{}.json", s.id)))?;
        let b = BBox::of_landmarks(&s.true_lm2d);
        rows.push(BBoxRow {
            id: s.id.clone(),
            w: b.w,
            h: b.h,
            yaw: Some(s.pose.yaw),
        });
    }
    files::write_bboxes(&rows, &a.out_dir.join("bboxes.csv"))?;
    let per_bin = facewarp::eval::PoseBin::ALL.map(|b| samples.iter().filter(|s| s.pose_bin() == b).count());
    files::print_json(&json!({
        "count": samples.len(),
        "seed": a.seed,
        "per_bin": per_bin,
        "out_dir": a.out_dir,
        "seconds": t.elapsed().as_secs_f64(),
    }))
}

#[derive(clap::Args)]
pub struct TrainArgs {
    /// Estimator config (JSON); defaults to `<data>/config.json`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory written by `synth`.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Training log CSV; defaults to the checkpoint path with a `.csv` extension.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Overrides the config's initialization and shuffling seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep the last N samples out of training and report their NME.
    #[arg(long, default_value_t = 0)]
    pub holdout: usize,
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let mut cfg = resolve_config(a.config.as_deref(), Some(&a.data))?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let data = load_dataset(&cfg, &a.data)?;
    if a.holdout >= data.len() {
        return Err(invalid(format!(
            "--holdout {} leaves no training samples out of {}",
            a.holdout,
            data.len()
        )));
    }
    let (train_set, held) = data.split_at(data.len() - a.holdout);
    let mut model = Model::new(cfg)?;
    let before = (!held.is_empty()).then(|| evaluate(&model, held)).transpose()?;
    let t = Instant::now();
    let log = facewarp::estimator::train(&mut model, train_set)?;
    let seconds = t.elapsed().as_secs_f64();
    let after = (!held.is_empty()).then(|| evaluate(&model, held)).transpose()?;
    checkpoint::save(&model, &a.out)?;
    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    log.write_csv(&log_path)?;
    let last = log.records.last();
    files::print_json(&json!({
        "checkpoint": a.out,
        "log": log_path,
        "iterations": log.records.len(),
        "skipped_samples": log.skipped,
        "final_loss": last.map(|r| r.total),
        "seconds": seconds,
        "holdout": held.len(),
        "holdout_nme_untrained": before.as_ref().map(|e| e.mean_init()),
        "holdout_nme_projected": after.as_ref().map(|e| e.mean_init()),
        "holdout_nme_refined": after.as_ref().map(|e| e.mean_refined()),
    }))
}

#[derive(clap::Args)]
pub struct InferArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Image file or directory of images.
    #[arg(long)]
    pub image: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Per image `<id>`: refined landmarks with visibility in `<id>.json`,
/// projected landmarks in `<id>.init.json`, the warped mesh in
/// `<id>.mesh.obj`, per-vertex visibility and the camera.
pub fn infer(a: InferArgs) -> CliResult<()> {
    let model = checkpoint::load(&a.model)?;
    let inputs = files::image_inputs(&a.image)?;
    fs::create_dir_all(&a.out)?;
    let out = &a.out;
    let failed: Vec<(String, String)> = inputs
        .par_iter()
        .filter_map(|(id, path)| {
            let res = (|| -> CliResult<()> {
                let image = files::load_image(path)?;
                let fwd = model.forward(&image)?;
                fwd.lm_refined.save(out.join(format!("{id}.json")))?;
                fwd.lm_init.save(out.join(format!("{id}.init.json")))?;
                save_mesh(model.mesh(), Some(&fwd.vertices), out.join(format!("{id}.mesh.obj")))?;
                files::write_json(&out.join(format!("{id}.visibility.json")), &fwd.visibility)?;
                files::save_camera(&fwd.camera, &out.join(format!("{id}.camera.txt")))
            })();
            res.err().map(|e| (id.clone(), e.message))
        })
        .collect();
    for (id, msg) in &failed {
        log::warn!("{id}: {msg}");
    }
    if failed.len() == inputs.len() {
        return Err(invalid("inference failed on every image"));
    }
    files::print_json(&json!({
        "images": inputs.len(),
        "failed": failed.len(),
        "out": a.out,
    }))
}
