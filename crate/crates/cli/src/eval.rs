use std::fs;
use std::path::PathBuf;

use facewarp::eval::{
    ced, ced_resampled, default_thresholds, pose_table, write_records_csv, yaw_from_camera, BBox, NmeMode,
    NmeRecord, PoseBin,
};
use facewarp::LandmarkSet2D;
use rayon::prelude::*;
use serde_json::json;

use crate::error::{invalid, CliError, CliResult};
use crate::files;

#[derive(clap::Args)]
pub struct EvalArgs {
    /// Directory of predicted landmark files `<id>.json` (as written by `infer`).
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth landmark files `<id>.json` (.pts also accepted).
    #[arg(long)]
    pub truth: PathBuf,
    /// CSV `id,w,h[,yaw]`. Without it the box is the ground-truth landmark
    /// bounding box. Without a yaw column the pose comes from
    /// `<pred>/<id>.camera.txt`.
    #[arg(long)]
    pub bboxes: Option<PathBuf>,
    /// `visible` (visible ground-truth landmarks only) or `all`.
    #[arg(long, default_value = "visible")]
    pub mode: NmeMode,
    /// Output directory for records.csv, pose_table.json and ced.csv.
    #[arg(long)]
    pub report: PathBuf,
    /// Pose-balanced CED: number of resamples to average (0 = plain CED).
    #[arg(long, default_value_t = 0)]
    pub resamples: usize,
    /// Records drawn per pose bin in each resample; defaults to the smallest bin.
    #[arg(long)]
    pub per_bin: Option<usize>,
    /// Number of CED threshold steps.
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

enum Outcome {
    Record(NmeRecord),
    Skipped(String, String),
}

pub fn run(a: EvalArgs) -> CliResult<()> {
    let boxes = a.bboxes.as_deref().map(files::read_bboxes).transpose()?;
    let mut truths = Vec::new();
    for entry in fs::read_dir(&a.truth)? {
        let p = entry?.path();
        if matches!(p.extension().and_then(|e| e.to_str()), Some("json" | "pts")) {
            truths.push((files::stem(&p)?, p));
        }
    }
    truths.sort();
    if truths.is_empty() {
        return Err(invalid(format!("no landmark files in {}", a.truth.display())));
    }

    let outcomes: Vec<Outcome> = truths
        .par_iter()
        .map(|(id, tpath)| {
            let ppath = a.pred.join(format!("{id}.json"));
            if !ppath.exists() {
                return Ok(Outcome::Skipped(id.clone(), "no prediction".into()));
            }
            let truth = LandmarkSet2D::load(tpath)?;
            let pred = LandmarkSet2D::load(&ppath)?;
            let row = boxes.as_ref().and_then(|b| b.get(id));
            if boxes.is_some() && row.is_none() {
                return Err(invalid(format!("{id}: missing from the bounding-box file")));
            }
            let bbox = match row {
                Some(r) => BBox { w: r.w, h: r.h },
                None => BBox::of_landmarks(&truth),
            };
            let yaw = match row.and_then(|r| r.yaw) {
                Some(y) => y,
                None => {
                    let cpath = a.pred.join(format!("{id}.camera.txt"));
                    if !cpath.exists() {
                        return Err(invalid(format!("{id}: no yaw in the bounding-box file and no {}", cpath.display())));
                    }
                    yaw_from_camera(&files::load_camera(&cpath)?)?
                }
            };
            let bin = PoseBin::from_yaw_deg(yaw)?;
            match NmeRecord::evaluate(id.clone(), &pred, &truth, bbox, a.mode, bin) {
                Ok(r) => Ok(Outcome::Record(r)),
                Err(facewarp::Error::NoLandmarks) => Ok(Outcome::Skipped(id.clone(), "no landmarks selected".into())),
                Err(e) => Err(CliError::from(e)),
            }
        })
        .collect::<CliResult<_>>()?;

    let mut records = Vec::new();
    let mut skipped = 0;
    for o in outcomes {
        match o {
            Outcome::Record(r) => records.push(r),
            Outcome::Skipped(id, why) => {
                log::warn!("{id}: excluded ({why})");
                skipped += 1;
            }
        }
    }
    if records.is_empty() {
        return Err(CliError::from(facewarp::Error::NoLandmarks));
    }

    fs::create_dir_all(&a.report)?;
    write_records_csv(&records, a.report.join("records.csv"))?;
    let table = pose_table(&records)?;
    files::write_json(&a.report.join("pose_table.json"), &table)?;
    let values: Vec<f64> = records.iter().map(|r| r.nme).collect();
    let thresholds = default_thresholds(&values, a.steps.max(1));
    let curve = if a.resamples > 0 {
        let per_bin = match a.per_bin {
            Some(n) => n,
            None => PoseBin::ALL
                .iter()
                .map(|b| records.iter().filter(|r| r.pose_bin == *b).count())
                .filter(|&n| n > 0)
                .min()
                .unwrap_or(1),
        };
        ced_resampled(&records, per_bin, a.resamples, &thresholds, a.seed)?
    } else {
        ced(&records, &thresholds)?
    };
    curve.write_csv(a.report.join("ced.csv"))?;

    eprintln!("{table}");
    files::print_json(&json!({
        "records": records.len(),
        "skipped": skipped,
        "mode": a.mode.to_string(),
        "mean_nme_pct": 100.0 * values.iter().sum::<f64>() / values.len() as f64,
        "pose_table": table,
        "report": a.report,
    }))
}
