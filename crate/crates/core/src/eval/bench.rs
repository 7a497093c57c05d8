//! Wall-clock latency of a per-image pipeline.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub n_images: usize,
    pub warmup: usize,
    pub reps: usize,
    pub mean_s: f64,
    pub p50_s: f64,
    pub p99_s: f64,
    pub faces_per_sec: f64,
}

/// Runs `run` on one image at a time: `warmup` untimed passes over the
/// inputs, then `reps` timed passes. Percentiles are nearest-rank.
pub fn bench<I, F>(images: &[I], warmup: usize, reps: usize, mut run: F) -> Result<BenchReport>
where
    F: FnMut(&I) -> Result<()>,
{
    if images.is_empty() || reps == 0 {
        return Err(Error::InvalidArgument("bench needs images and at least one rep".into()));
    }
    for _ in 0..warmup {
        for im in images {
            run(im)?;
        }
    }
    let mut times = Vec::with_capacity(images.len() * reps);
    for _ in 0..reps {
        for im in images {
            let t = Instant::now();
            run(im)?;
            times.push(t.elapsed().as_secs_f64());
        }
    }
    times.sort_by(f64::total_cmp);
    let mean_s = times.iter().sum::<f64>() / times.len() as f64;
    let rank = |q: f64| times[((q * times.len() as f64).ceil() as usize).clamp(1, times.len()) - 1];
    Ok(BenchReport {
        n_images: images.len(),
        warmup,
        reps,
        mean_s,
        p50_s: rank(0.5),
        p99_s: rank(0.99),
        faces_per_sec: if mean_s > 0.0 { 1.0 / mean_s } else { f64::INFINITY },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_ordering() {
        let mut calls = 0;
        let r = bench(&[1, 2, 3], 2, 4, |_| {
            calls += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(calls, 18);
        assert!(r.p50_s <= r.p99_s);
        assert!(bench::<u8, _>(&[], 0, 1, |_| Ok(())).is_err());
    }
}
