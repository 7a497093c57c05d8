//! Central finite-difference audits of every analytic gradient.
//!
//! Relative error is `|a − n| / max(|a|, |n|, floor)` with
//! `floor = 1e-3 · max_k |a_k|` over the audited entries, so entries that
//! are zero up to round-off are compared on the scale of the gradient.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::model::{GradScope, Group};
use crate::estimator::synth::{camera_from_pose, synth_generate, Pose};
use crate::estimator::{EstimatorConfig, Model, Real};
use crate::pipeline;
use crate::projection::{self, lift, CameraParams};
use crate::sampler::{self, Grid2D, SampleCoord};
use crate::tps::{self, TpsWarp3D};
use crate::Point3;

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;

/// The estimator runs in `Real`; in 32-bit builds its audit uses a larger
/// step and the relaxed tolerance.
#[cfg(not(feature = "f32"))]
pub const E2E_STEP: f64 = FD_STEP;
#[cfg(not(feature = "f32"))]
pub const E2E_TOLERANCE: f64 = TOLERANCE;
#[cfg(feature = "f32")]
pub const E2E_STEP: f64 = 1e-2;
#[cfg(feature = "f32")]
pub const E2E_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditModule {
    Proj,
    Tps,
    Sampler,
    E2e,
}

impl AuditModule {
    pub const ALL: [AuditModule; 4] = [AuditModule::Proj, AuditModule::Tps, AuditModule::Sampler, AuditModule::E2e];

    pub fn name(self) -> &'static str {
        match self {
            AuditModule::Proj => "proj",
            AuditModule::Tps => "tps",
            AuditModule::Sampler => "sampler",
            AuditModule::E2e => "e2e",
        }
    }

    pub fn tolerance(self) -> f64 {
        match self {
            AuditModule::E2e => E2E_TOLERANCE,
            _ => TOLERANCE,
        }
    }
}

impl fmt::Display for AuditModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AuditModule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AuditModule::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown audit module {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub module: AuditModule,
    pub seed: u64,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Label of the entry with the largest error.
    pub worst: String,
    pub tolerance: f64,
    pub passed: bool,
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<8} seed {:<4} {:>5} entries  max rel err {:.3e} ({})  {}",
            self.module.name(),
            self.seed,
            self.checked,
            self.max_rel_err,
            self.worst,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// Collects (label, analytic, numeric) triples.
#[derive(Default)]
struct Checker {
    entries: Vec<(String, f64, f64)>,
}

impl Checker {
    fn push(&mut self, label: impl Into<String>, analytic: f64, numeric: f64) {
        self.entries.push((label.into(), analytic, numeric));
    }

    fn report(self, module: AuditModule, seed: u64) -> AuditReport {
        let scale = self.entries.iter().map(|e| e.1.abs()).fold(0.0, f64::max);
        let floor = (1e-3 * scale).max(f64::MIN_POSITIVE);
        let mut worst = (0.0f64, String::from("-"));
        for (label, a, n) in &self.entries {
            let err = (a - n).abs() / a.abs().max(n.abs()).max(floor);
            if !(err <= worst.0) {
                worst = (err, label.clone());
            }
        }
        let tolerance = module.tolerance();
        AuditReport {
            module,
            seed,
            checked: self.entries.len(),
            max_rel_err: worst.0,
            worst: worst.1,
            tolerance,
            passed: worst.0 < tolerance,
        }
    }
}

fn central(h: f64, mut f: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    Ok((f(h)? - f(-h)?) / (2.0 * h))
}

fn rand_vec3(rng: &mut impl Rng, r: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r))
}

/// A generic perspective camera with random pose, intrinsics jitter and
/// entry-wise perturbation.
fn random_camera(rng: &mut impl Rng) -> CameraParams {
    let pose = Pose {
        yaw: rng.random_range(-80.0..80.0),
        pitch: rng.random_range(-30.0..30.0),
        roll: rng.random_range(-30.0..30.0),
    };
    let mut cam = camera_from_pose(
        pose,
        rng.random_range(50.0..300.0),
        rng.random_range(5.0..15.0),
        (rng.random_range(20.0..40.0), rng.random_range(20.0..40.0)),
        (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
    );
    for a in cam.a.iter_mut() {
        *a *= 1.0 + rng.random_range(-0.05..0.05);
    }
    cam
}

fn rng_for(module: AuditModule, seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(module as u64 + 1);
    rng
}

fn audit_proj(seed: u64) -> Result<AuditReport> {
    let mut rng = rng_for(AuditModule::Proj, seed);
    let cam = random_camera(&mut rng);
    let pts: Vec<Point3> = (0..6).map(|_| rand_vec3(&mut rng, 1.5)).collect();
    let up: Vec<Vector2<f64>> = (0..pts.len())
        .map(|_| Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let loss = |c: &CameraParams, p: &[Point3]| -> Result<f64> {
        let o = projection::project(c, &lift(p))?;
        Ok(o.iter().zip(&up).map(|(o, g)| o.x * g.x + o.y * g.y).sum())
    };
    let mut ck = Checker::default();
    let ga = projection::grad_wrt_camera(&cam, &lift(&pts), &up)?;
    for k in 0..11 {
        let n = central(FD_STEP, |h| {
            let mut c = cam;
            c.a[k] += h;
            loss(&c, &pts)
        })?;
        ck.push(format!("a{}", k + 1), ga[k], n);
    }
    let gp = projection::grad_wrt_points(&cam, &lift(&pts), &up)?;
    for i in 0..pts.len() {
        for d in 0..3 {
            let n = central(FD_STEP, |h| {
                let mut p = pts.clone();
                p[i][d] += h;
                loss(&cam, &p)
            })?;
            ck.push(format!("p{i}[{d}]"), gp[i][d], n);
        }
    }
    Ok(ck.report(AuditModule::Proj, seed))
}

/// TPS parameter gradients, directly and through the camera projection.
fn audit_tps(seed: u64) -> Result<AuditReport> {
    let mut rng = rng_for(AuditModule::Tps, seed);
    let n = 8;
    let controls: Vec<Point3> = (0..n).map(|_| rand_vec3(&mut rng, 1.0)).collect();
    let m = n + 4;
    let mut th = || (0..m).map(|_| rng.random_range(-0.05..0.05)).collect::<Vec<f64>>();
    let warp = TpsWarp3D::new(controls, th(), th(), th())?;
    let pts: Vec<Point3> = (0..7).map(|_| rand_vec3(&mut rng, 1.2)).collect();
    let up3: Vec<Vector3<f64>> = pts.iter().map(|_| rand_vec3(&mut rng, 1.0)).collect();
    let up2: Vec<Vector2<f64>> = pts
        .iter()
        .map(|_| Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let cam = random_camera(&mut rng);

    let direct = |w: &TpsWarp3D| -> Result<f64> {
        Ok(tps::apply(w, &pts).iter().zip(&up3).map(|(a, b)| a.dot(b)).sum())
    };
    let chained = |w: &TpsWarp3D| -> Result<f64> {
        let o = pipeline::project_warped(&cam, w, &pts)?;
        Ok(o.iter().zip(&up2).map(|(o, g)| o.x * g.x + o.y * g.y).sum())
    };
    let perturbed = |c: usize, k: usize, h: f64| {
        let mut w = warp.clone();
        w.theta_mut()[c][k] += h;
        w
    };

    let mut ck = Checker::default();
    let g = tps::grad_wrt_params(&warp, &pts, &up3)?;
    let gb = pipeline::backward_warped(&cam, &warp, &pts, &up2)?;
    let gc = gb.tps.expect("backward_warped fills tps");
    for c in 0..3 {
        for k in 0..m {
            let n1 = central(FD_STEP, |h| direct(&perturbed(c, k, h)))?;
            ck.push(format!("theta{c}[{k}]"), g[c][k], n1);
            let n2 = central(FD_STEP, |h| chained(&perturbed(c, k, h)))?;
            ck.push(format!("proj∘theta{c}[{k}]"), gc[c][k], n2);
        }
    }
    Ok(ck.report(AuditModule::Tps, seed))
}

/// Uniform in `(lo, hi)`, kept at least `gap` away from integers so the
/// finite differences do not straddle a bilinear cell boundary.
fn off_grid(rng: &mut impl Rng, lo: f64, hi: f64, gap: f64) -> f64 {
    loop {
        let v: f64 = rng.random_range(lo..hi);
        let f = v - v.floor();
        if f > gap && f < 1.0 - gap {
            return v;
        }
    }
}

fn audit_sampler(seed: u64) -> Result<AuditReport> {
    let mut rng = rng_for(AuditModule::Sampler, seed);
    let (w, h, ch) = (6, 5, 3);
    let data: Vec<f64> = (0..w * h * ch).map(|_| rng.random_range(-1.0..1.0)).collect();
    let grid = Grid2D::new(w, h, ch, data)?;
    let coords: Vec<SampleCoord> = (0..8)
        .map(|_| SampleCoord::new(off_grid(&mut rng, 0.0, (w - 1) as f64, 1e-3), off_grid(&mut rng, 0.0, (h - 1) as f64, 1e-3)))
        .collect();
    let up: Vec<Vec<f64>> = coords
        .iter()
        .map(|_| (0..ch).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let loss = |g: &Grid2D, c: &[SampleCoord]| -> Result<f64> {
        Ok(sampler::sample_bilinear(g, c)
            .iter()
            .zip(&up)
            .map(|(o, u)| o.iter().zip(u).map(|(a, b)| a * b).sum::<f64>())
            .sum())
    };
    let mut ck = Checker::default();
    let gc = sampler::grad_wrt_coords(&grid, &coords, &up)?;
    for i in 0..coords.len() {
        for d in 0..2 {
            let n = central(FD_STEP, |hh| {
                let mut c = coords.clone();
                if d == 0 {
                    c[i].x += hh;
                } else {
                    c[i].y += hh;
                }
                loss(&grid, &c)
            })?;
            ck.push(format!("coord{i}[{d}]"), gc[i][d], n);
        }
    }
    let gg = sampler::grad_wrt_grid(&grid, &coords, &up)?;
    for k in 0..grid.data().len() {
        let n = central(FD_STEP, |hh| {
            let mut g = grid.clone();
            g.data_mut()[k] += hh;
            loss(&g, &coords)
        })?;
        ck.push(format!("grid[{k}]"), gg[k], n);
    }
    Ok(ck.report(AuditModule::Sampler, seed))
}

/// Reduced estimator used by the end-to-end audit.
pub fn audit_estimator_config(seed: u64) -> EstimatorConfig {
    EstimatorConfig {
        mesh_lon: 25,
        mesh_lat: 25,
        n_controls: 12,
        input_size: 32,
        channels: vec![4, 8, 8],
        strides: vec![2, 2, 1],
        hidden: 16,
        feature_block: 1,
        lm_hidden: 8,
        feature_dim: 8,
        init_focal: 100.0,
        // the audit compares against the full derivative of the loss
        feature_position_grad: true,
        seed,
        ..Default::default()
    }
}

/// Entries audited per parameter group.
const E2E_PER_GROUP: usize = 8;

fn audit_e2e(seed: u64) -> Result<AuditReport> {
    let mut rng = rng_for(AuditModule::E2e, seed);
    let cfg = audit_estimator_config(seed);
    let sample = synth_generate(&cfg, 3, seed)?.swap_remove((seed % 3) as usize);
    let mut model = Model::new(cfg)?;
    // move the zero-initialized heads off zero so every path carries gradient
    for (group, r) in [(Group::CameraHead, 0.02), (Group::TpsHead, 0.01), (Group::OffsetHeads, 0.1)] {
        for i in model.group_indices(group) {
            model.params[i] = rng.random_range(-r..r) as Real;
        }
    }
    let (_, grad) = model.loss_and_grad(&sample, GradScope::All)?;
    let mut ck = Checker::default();
    for group in Group::ALL {
        let idx = model.group_indices(group);
        for _ in 0..E2E_PER_GROUP {
            let i = idx[rng.random_range(0..idx.len())];
            let n = central(E2E_STEP, |h| {
                let mut m = model.clone();
                m.params[i] += h as Real;
                Ok(m.loss(&sample)?.total)
            })?;
            let name = model
                .specs
                .iter()
                .find(|s| s.range().contains(&i))
                .map(|s| s.name.as_str())
                .unwrap_or("?");
            ck.push(format!("{name}#{i}"), grad[i], n);
        }
    }
    Ok(ck.report(AuditModule::E2e, seed))
}

pub fn audit(module: AuditModule, seed: u64) -> Result<AuditReport> {
    match module {
        AuditModule::Proj => audit_proj(seed),
        AuditModule::Tps => audit_tps(seed),
        AuditModule::Sampler => audit_sampler(seed),
        AuditModule::E2e => audit_e2e(seed),
    }
}

/// `count` consecutive seeds starting at `seed` for each module.
pub fn audit_many(modules: &[AuditModule], seed: u64, count: usize) -> Result<Vec<AuditReport>> {
    let mut out = Vec::with_capacity(modules.len() * count);
    for &m in modules {
        for s in seed..seed + count as u64 {
            out.push(audit(m, s)?);
        }
    }
    Ok(out)
}
