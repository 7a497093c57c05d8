//! Normalized mean error, cumulative error distributions and pose tables.

use std::fmt;
use std::path::Path;

use nalgebra::Vector3;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmarks::LandmarkSet2D;
use crate::projection::CameraParams;

/// Absolute-yaw ranges `[0, 30]`, `(30, 60]`, `(60, 90]` degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PoseBin {
    #[serde(rename = "0-30")]
    Low,
    #[serde(rename = "30-60")]
    Mid,
    #[serde(rename = "60-90")]
    High,
}

impl PoseBin {
    pub const ALL: [PoseBin; 3] = [PoseBin::Low, PoseBin::Mid, PoseBin::High];

    pub fn from_yaw_deg(yaw: f64) -> Result<PoseBin> {
        let a = yaw.abs();
        if a <= 30.0 {
            Ok(PoseBin::Low)
        } else if a <= 60.0 {
            Ok(PoseBin::Mid)
        } else if a <= 90.0 {
            Ok(PoseBin::High)
        } else {
            Err(Error::InvalidArgument(format!("|yaw| = {a}° is outside [0, 90]")))
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            PoseBin::Low => "[0,30]",
            PoseBin::Mid => "(30,60]",
            PoseBin::High => "(60,90]",
        }
    }
}

impl fmt::Display for PoseBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NmeMode {
    /// Only landmarks flagged visible in the ground truth.
    VisibleOnly,
    AllPoints,
}

impl std::str::FromStr for NmeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "visible" | "visible-only" => Ok(NmeMode::VisibleOnly),
            "all" | "all-points" => Ok(NmeMode::AllPoints),
            _ => Err(Error::InvalidArgument(format!("unknown NME mode {s:?}"))),
        }
    }
}

impl fmt::Display for NmeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NmeMode::VisibleOnly => "visible",
            NmeMode::AllPoints => "all",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Tight box around all landmarks of a set.
    pub fn of_landmarks(set: &LandmarkSet2D) -> BBox {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &set.points {
            x0 = x0.min(p.x);
            x1 = x1.max(p.x);
            y0 = y0.min(p.y);
            y1 = y1.max(p.y);
        }
        BBox {
            w: (x1 - x0).max(0.0),
            h: (y1 - y0).max(0.0),
        }
    }
}

/// Per-landmark Euclidean errors over the selected landmarks.
pub fn landmark_errors(
    pred: &LandmarkSet2D,
    truth: &LandmarkSet2D,
    mode: NmeMode,
) -> Result<Vec<f64>> {
    if pred.scheme != truth.scheme {
        return Err(Error::SchemeMismatch {
            expected: truth.scheme.to_string(),
            got: pred.scheme.to_string(),
        });
    }
    truth
        .points
        .iter()
        .filter(|t| mode == NmeMode::AllPoints || t.visible)
        .map(|t| {
            let p = pred.get(t.id).ok_or_else(|| {
                Error::InvalidArgument(format!("prediction lacks landmark {}", t.id))
            })?;
            Ok(p.point().dist(&t.point()))
        })
        .collect()
}

/// Mean landmark error divided by `sqrt(w·h)`, as a fraction.
pub fn nme(pred: &LandmarkSet2D, truth: &LandmarkSet2D, bbox: BBox, mode: NmeMode) -> Result<f64> {
    if !(bbox.w > 0.0 && bbox.h > 0.0) {
        return Err(Error::InvalidArgument(format!("bounding box must be positive: {bbox:?}")));
    }
    let errs = landmark_errors(pred, truth, mode)?;
    if errs.is_empty() {
        return Err(Error::NoLandmarks);
    }
    Ok(errs.iter().sum::<f64>() / errs.len() as f64 / (bbox.w * bbox.h).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmeRecord {
    pub id: String,
    pub errors: Vec<f64>,
    pub bbox_w: f64,
    pub bbox_h: f64,
    pub pose_bin: PoseBin,
    pub nme: f64,
}

impl NmeRecord {
    pub fn evaluate(
        id: impl Into<String>,
        pred: &LandmarkSet2D,
        truth: &LandmarkSet2D,
        bbox: BBox,
        mode: NmeMode,
        pose_bin: PoseBin,
    ) -> Result<Self> {
        let errors = landmark_errors(pred, truth, mode)?;
        let nme = nme(pred, truth, bbox, mode)?;
        Ok(NmeRecord {
            id: id.into(),
            errors,
            bbox_w: bbox.w,
            bbox_h: bbox.h,
            pose_bin,
            nme,
        })
    }
}

#[derive(Serialize)]
struct RecordRow<'a> {
    id: &'a str,
    pose_bin: &'a str,
    bbox_w: f64,
    bbox_h: f64,
    n_landmarks: usize,
    nme_pct: f64,
    errors: String,
}

pub fn write_records_csv(records: &[NmeRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(RecordRow {
            id: &r.id,
            pose_bin: r.pose_bin.label(),
            bbox_w: r.bbox_w,
            bbox_h: r.bbox_h,
            n_landmarks: r.errors.len(),
            nme_pct: 100.0 * r.nme,
            errors: r
                .errors
                .iter()
                .map(|e| format!("{e:.6}"))
                .collect::<Vec<_>>()
                .join(";"),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Fraction of samples with NME at or below each threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CedCurve {
    pub thresholds: Vec<f64>,
    pub fractions: Vec<f64>,
}

impl CedCurve {
    pub fn from_values(values: &[f64], thresholds: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("CED of an empty sample".into()));
        }
        let mut th = thresholds.to_vec();
        th.sort_by(f64::total_cmp);
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let fractions = th
            .iter()
            .map(|&t| sorted.partition_point(|&v| v <= t) as f64 / n)
            .collect();
        Ok(CedCurve {
            thresholds: th,
            fractions,
        })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["threshold_pct", "fraction"])?;
        for (t, f) in self.thresholds.iter().zip(&self.fractions) {
            w.write_record([format!("{:.4}", 100.0 * t), format!("{f:.6}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `steps + 1` evenly spaced thresholds from 0 to the largest value.
pub fn default_thresholds(values: &[f64], steps: usize) -> Vec<f64> {
    let max = values.iter().copied().fold(0.0, f64::max);
    // i / steps is exactly 1 at the end, so the last threshold is the max itself
    (0..=steps).map(|i| max * (i as f64 / steps as f64)).collect()
}

pub fn ced(records: &[NmeRecord], thresholds: &[f64]) -> Result<CedCurve> {
    let vals: Vec<f64> = records.iter().map(|r| r.nme).collect();
    CedCurve::from_values(&vals, thresholds)
}

/// Pose-balanced CED: `repeats` times draw `per_bin` records from each bin
/// (with replacement only when a bin is smaller than `per_bin`), compute
/// the CED, and average the curves.
pub fn ced_resampled(
    records: &[NmeRecord],
    per_bin: usize,
    repeats: usize,
    thresholds: &[f64],
    seed: u64,
) -> Result<CedCurve> {
    if records.is_empty() || repeats == 0 || per_bin == 0 {
        return Err(Error::InvalidArgument("nothing to resample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let by_bin: Vec<Vec<f64>> = PoseBin::ALL
        .iter()
        .map(|b| records.iter().filter(|r| r.pose_bin == *b).map(|r| r.nme).collect())
        .collect();
    let mut acc: Option<CedCurve> = None;
    for _ in 0..repeats {
        let mut draw = Vec::with_capacity(3 * per_bin);
        for bin in by_bin.iter().filter(|b| !b.is_empty()) {
            if bin.len() >= per_bin {
                draw.extend(bin.choose_multiple(&mut rng, per_bin).copied());
            } else {
                for _ in 0..per_bin {
                    draw.push(*bin.choose(&mut rng).unwrap());
                }
            }
        }
        let c = CedCurve::from_values(&draw, thresholds)?;
        match &mut acc {
            None => acc = Some(c),
            Some(a) => a.fractions.iter_mut().zip(&c.fractions).for_each(|(x, y)| *x += y),
        }
    }
    let mut out = acc.unwrap();
    out.fractions.iter_mut().for_each(|f| *f /= repeats as f64);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub count: usize,
    /// Percent.
    pub mean: f64,
    /// Sample standard deviation within the bin, percent.
    pub std: f64,
}

/// Per-bin NME (percent) with the mean and sample standard deviation of the
/// bin means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseTable {
    pub bins: [Option<BinStats>; 3],
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample (n − 1) standard deviation of per-bin means.
pub fn summarize_bins(bin_means: &[f64]) -> (f64, f64) {
    let n = bin_means.len() as f64;
    let mean = bin_means.iter().sum::<f64>() / n;
    let std = if bin_means.len() > 1 {
        (bin_means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

pub fn pose_table(records: &[NmeRecord]) -> Result<PoseTable> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("pose table of no records".into()));
    }
    let bins = PoseBin::ALL.map(|b| {
        let v: Vec<f64> = records
            .iter()
            .filter(|r| r.pose_bin == b)
            .map(|r| 100.0 * r.nme)
            .collect();
        if v.is_empty() {
            return None;
        }
        let (mean, std) = summarize_bins(&v);
        Some(BinStats {
            count: v.len(),
            mean,
            std,
        })
    });
    let means: Vec<f64> = bins.iter().flatten().map(|b| b.mean).collect();
    let (mean, std) = summarize_bins(&means);
    Ok(PoseTable { bins, mean, std })
}

impl fmt::Display for PoseTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (b, s) in PoseBin::ALL.iter().zip(&self.bins) {
            match s {
                Some(s) => writeln!(f, "{:>8}  n={:<6} NME {:6.2}% (std {:.2})", b.label(), s.count, s.mean, s.std)?,
                None => writeln!(f, "{:>8}  absent", b.label())?,
            }
        }
        write!(f, "    mean  {:.2}%   std {:.2}", self.mean, self.std)
    }
}

/// Yaw in degrees from the camera's left 3x3 block: the third row gives the
/// viewing axis, rows one and two are Gram-Schmidt orthogonalized against
/// it. Exact for zero-skew intrinsics; an approximation otherwise.
/// Frontal (yaw 0) means the camera looks along −z onto the model.
pub fn yaw_from_camera(cam: &CameraParams) -> Result<f64> {
    let a = cam.a_block();
    let det = a.determinant();
    if !(det.abs() > crate::mesh::EPS_DET) {
        return Err(Error::SingularA { det });
    }
    let r3: Vector3<f64> = a.row(2).transpose().normalize() * det.signum();
    Ok(r3.x.atan2(-r3.z).to_degrees())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::Scheme;
    use crate::projection::Point2;

    fn set(pts: &[(f64, f64)], vis: &[bool]) -> LandmarkSet2D {
        let p: Vec<Point2> = pts.iter().map(|&(x, y)| Point2::new(x, y)).collect();
        LandmarkSet2D::from_points(Scheme::Aflw21, &p, vis).unwrap()
    }

    #[test]
    fn nme_examples() {
        let t = set(&[(10., 10.), (20., 30.)], &[true, true]);
        assert_eq!(nme(&t, &t, BBox { w: 100., h: 100. }, NmeMode::VisibleOnly).unwrap(), 0.0);
        let p = set(&[(10., 10.), (25., 30.)], &[true, true]);
        let t1 = set(&[(10., 10.), (20., 30.)], &[false, true]);
        let v = nme(&p, &t1, BBox { w: 100., h: 100. }, NmeMode::VisibleOnly).unwrap();
        assert!((v - 0.05).abs() < 1e-15);
        let v = nme(&p, &t1, BBox { w: 100., h: 100. }, NmeMode::AllPoints).unwrap();
        assert!((v - 0.025).abs() < 1e-15);
        let hidden = set(&[(10., 10.), (20., 30.)], &[false, false]);
        assert!(matches!(
            nme(&p, &hidden, BBox { w: 1., h: 1. }, NmeMode::VisibleOnly),
            Err(Error::NoLandmarks)
        ));
        assert!(nme(&p, &t, BBox { w: 0., h: 1. }, NmeMode::AllPoints).is_err());
    }

    #[test]
    fn pose_bins() {
        assert_eq!(PoseBin::from_yaw_deg(30.0).unwrap(), PoseBin::Low);
        assert_eq!(PoseBin::from_yaw_deg(-30.0001).unwrap(), PoseBin::Mid);
        assert_eq!(PoseBin::from_yaw_deg(60.0).unwrap(), PoseBin::Mid);
        assert_eq!(PoseBin::from_yaw_deg(-90.0).unwrap(), PoseBin::High);
        assert!(PoseBin::from_yaw_deg(91.0).is_err());
    }

    fn rec(nme: f64, bin: PoseBin) -> NmeRecord {
        NmeRecord {
            id: String::new(),
            errors: vec![],
            bbox_w: 1.0,
            bbox_h: 1.0,
            pose_bin: bin,
            nme,
        }
    }

    #[test]
    fn identical_records_give_step_ced() {
        let recs: Vec<_> = (0..5).map(|_| rec(0.04, PoseBin::Low)).collect();
        let c = ced(&recs, &[0.0, 0.039, 0.04, 0.05]).unwrap();
        assert_eq!(c.fractions, vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn pose_table_with_absent_bin() {
        let recs = vec![rec(0.03, PoseBin::Low), rec(0.05, PoseBin::Low), rec(0.08, PoseBin::High)];
        let t = pose_table(&recs).unwrap();
        assert!(t.bins[1].is_none());
        let low = t.bins[0].unwrap();
        assert!((low.mean - 4.0).abs() < 1e-12);
        assert!((t.mean - 6.0).abs() < 1e-12);
        assert!((t.std - 8f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn resampled_ced_is_deterministic_and_monotone() {
        let recs: Vec<_> = (0..30)
            .map(|i| rec(0.01 * (1 + i % 7) as f64, PoseBin::ALL[i % 3]))
            .collect();
        let th = default_thresholds(&recs.iter().map(|r| r.nme).collect::<Vec<_>>(), 50);
        let a = ced_resampled(&recs, 6, 10, &th, 7).unwrap();
        let b = ced_resampled(&recs, 6, 10, &th, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.fractions.windows(2).all(|w| w[0] <= w[1]));
        assert!((a.fractions.last().unwrap() - 1.0).abs() < 1e-12);
    }
}
