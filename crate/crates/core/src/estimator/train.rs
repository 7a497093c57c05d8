//! Two-phase minibatch SGD with momentum.
//!
//! Phase 1 updates the backbone, camera head and TPS head on the full loss.
//! Phase 2 updates only the landmark branch and offset heads; upstream
//! parameters are not touched.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{GradScope, Group, Losses, Model};
use super::synth::TrainSample;
use super::Real;
use crate::error::{Error, Result};
use crate::eval::{BBox, NmeMode, NmeRecord};

/// Epochs in a row above the divergence threshold before aborting.
pub const DIVERGENCE_EPOCHS: usize = 3;
/// Epoch-mean loss above this multiple of the initial loss counts as diverging.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    pub phase: u8,
    pub epoch: usize,
    pub total: f64,
    pub l3d: f64,
    pub proj: f64,
    pub reg: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    pub skipped: usize,
}

impl TrainLog {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean loss and gradient over a batch, reduced in batch order so the result
/// does not depend on the thread count. Samples with a degenerate projection
/// are skipped with a warning.
fn batch_grad(model: &Model, batch: &[&TrainSample], scope: GradScope) -> Result<Option<(Losses, Vec<Real>, usize)>> {
    let results: Vec<Result<(Losses, Vec<Real>)>> =
        batch.par_iter().map(|s| model.loss_and_grad(s, scope)).collect();
    let mut sum = Losses::default();
    let mut grad = vec![0.0 as Real; model.n_params()];
    let mut used = 0;
    let mut skipped = 0;
    for (r, s) in results.into_iter().zip(batch) {
        match r {
            Ok((l, g)) => {
                sum += l;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                used += 1;
            }
            Err(Error::DegenerateDepth { index, depth }) => {
                log::warn!("sample {}: degenerate depth {depth:e} at landmark {index}, skipped", s.id);
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Ok(None);
    }
    let k = 1.0 / used as f64;
    grad.iter_mut().for_each(|g| *g *= k as Real);
    Ok(Some((sum.scaled(k), grad, skipped)))
}

pub fn train(model: &mut Model, data: &[TrainSample]) -> Result<TrainLog> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let cfg = model.config.clone();
    let mut log = TrainLog::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);
    let mut iteration = 0;
    let phases = [
        (1u8, cfg.phase1_epochs, cfg.lr_phase1, GradScope::All),
        (2u8, cfg.phase2_epochs, cfg.lr_phase2, GradScope::Refinement),
    ];
    for (phase, epochs, lr0, scope) in phases {
        let trainable: Vec<bool> = {
            let mut t = vec![false; model.n_params()];
            for g in Group::ALL.into_iter().filter(|g| g.is_upstream() == (phase == 1)) {
                for i in model.group_indices(g) {
                    t[i] = true;
                }
            }
            t
        };
        let mut velocity = vec![0.0 as Real; model.n_params()];
        let wd = cfg.weight_decay as Real;
        let mut initial: Option<f64> = None;
        let mut over = 0;
        let mut lr = lr0;
        let mut order: Vec<usize> = (0..data.len()).collect();
        for epoch in 0..epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            let mut epoch_batches = 0;
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &data[i]).collect();
                let Some((losses, grad, skipped)) = batch_grad(model, &batch, scope)? else {
                    log.skipped += batch.len();
                    continue;
                };
                log.skipped += skipped;
                initial.get_or_insert(losses.total);
                epoch_loss += losses.total;
                epoch_batches += 1;
                let mut grad = grad;
                if wd != 0.0 {
                    for (g, p) in grad.iter_mut().zip(&model.params).zip(&trainable).filter(|(_, t)| **t).map(|(gp, _)| gp) {
                        *g += wd * p;
                    }
                }
                let norm = grad
                    .iter()
                    .zip(&trainable)
                    .filter(|(_, t)| **t)
                    .map(|(g, _)| (*g).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let clip = if lr * norm > cfg.max_step { cfg.max_step / (lr * norm) } else { 1.0 };
                let (mu, step) = (cfg.momentum as Real, (lr * clip) as Real);
                for i in 0..velocity.len() {
                    if !trainable[i] {
                        continue;
                    }
                    velocity[i] = mu * velocity[i] - step * grad[i];
                    if velocity[i] != 0.0 {
                        model.params[i] += velocity[i];
                    }
                }
                log.records.push(TrainRecord {
                    iteration,
                    phase,
                    epoch,
                    total: losses.total,
                    l3d: losses.l3d,
                    proj: losses.proj,
                    reg: losses.reg,
                    lr,
                });
                iteration += 1;
            }
            if epoch_batches > 0 {
                let mean = epoch_loss / epoch_batches as f64;
                let init = initial.unwrap_or(mean);
                if !mean.is_finite() || mean > DIVERGENCE_FACTOR * init {
                    over += 1;
                    if over >= DIVERGENCE_EPOCHS {
                        return Err(Error::Diverged {
                            epoch,
                            loss: mean,
                            initial: init,
                        });
                    }
                } else {
                    over = 0;
                }
                log::info!("phase {phase} epoch {epoch}: mean loss {mean:.6e} (lr {lr:.3e})");
            }
            lr *= cfg.lr_decay;
        }
    }
    Ok(log)
}

/// Held-out landmark accuracy before and after offset refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub init: Vec<NmeRecord>,
    pub refined: Vec<NmeRecord>,
}

impl Evaluation {
    pub fn mean_init(&self) -> f64 {
        mean(&self.init)
    }

    pub fn mean_refined(&self) -> f64 {
        mean(&self.refined)
    }
}

fn mean(r: &[NmeRecord]) -> f64 {
    r.iter().map(|r| r.nme).sum::<f64>() / r.len().max(1) as f64
}

/// NME over all landmarks, normalized by the true landmark bounding box.
pub fn evaluate(model: &Model, samples: &[TrainSample]) -> Result<Evaluation> {
    let per: Vec<Result<(NmeRecord, NmeRecord)>> = samples
        .par_iter()
        .map(|s| {
            let out = model.forward_opts(&s.image, false)?;
            let bbox = BBox::of_landmarks(&s.true_lm2d);
            let bin = s.pose_bin();
            Ok((
                NmeRecord::evaluate(&s.id, &out.lm_init, &s.true_lm2d, bbox, NmeMode::AllPoints, bin)?,
                NmeRecord::evaluate(&s.id, &out.lm_refined, &s.true_lm2d, bbox, NmeMode::AllPoints, bin)?,
            ))
        })
        .collect();
    let mut ev = Evaluation {
        init: Vec::new(),
        refined: Vec::new(),
    };
    for r in per {
        let (a, b) = r?;
        ev.init.push(a);
        ev.refined.push(b);
    }
    Ok(ev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::synth::synth_generate;
    use crate::estimator::EstimatorConfig;

    fn tiny() -> EstimatorConfig {
        EstimatorConfig {
            mesh_lon: 20,
            mesh_lat: 20,
            n_controls: 10,
            input_size: 32,
            channels: vec![4, 8],
            strides: vec![2, 2],
            hidden: 16,
            feature_block: 0,
            lm_hidden: 6,
            feature_dim: 8,
            init_focal: 100.0,
            batch_size: 4,
            phase1_epochs: 2,
            phase2_epochs: 2,
            ..Default::default()
        }
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let cfg = EstimatorConfig {
            lr_phase1: 0.0,
            lr_phase2: 0.0,
            ..tiny()
        };
        let data = synth_generate(&cfg, 5, 2).unwrap();
        let mut m = Model::new(cfg).unwrap();
        let before = m.params.clone();
        let l0 = m.loss(&data[0]).unwrap();
        train(&mut m, &data).unwrap();
        assert_eq!(m.params, before);
        assert_eq!(m.loss(&data[0]).unwrap(), l0);
    }

    #[test]
    fn phase_two_freezes_upstream_bitwise() {
        let cfg = EstimatorConfig {
            phase1_epochs: 0,
            ..tiny()
        };
        let data = synth_generate(&cfg, 6, 3).unwrap();
        let mut m = Model::new(cfg).unwrap();
        // give the offset heads something to move
        let before = m.params.clone();
        train(&mut m, &data).unwrap();
        let mut moved = false;
        for s in &m.specs {
            let same = m.params[s.range()] == before[s.range()];
            if s.group.is_upstream() {
                assert!(same, "{} changed in phase 2", s.name);
            } else {
                moved |= !same;
            }
        }
        assert!(moved);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny();
        let data = synth_generate(&cfg, 6, 4).unwrap();
        let mut a = Model::new(cfg.clone()).unwrap();
        let mut b = Model::new(cfg).unwrap();
        let la = train(&mut a, &data).unwrap();
        let lb = train(&mut b, &data).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(la, lb);
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = EstimatorConfig {
            lr_phase1: 1e6,
            phase1_epochs: 6,
            lr_decay: 1.0,
            // effectively no step clipping
            max_step: 1e12,
            ..tiny()
        };
        let data = synth_generate(&cfg, 4, 5).unwrap();
        let mut m = Model::new(cfg).unwrap();
        match train(&mut m, &data) {
            Err(Error::Diverged { .. }) | Err(Error::DegenerateDepth { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut m = Model::new(tiny()).unwrap();
        assert!(train(&mut m, &[]).is_err());
    }
}
