//! Percentile bootstrap intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TestError;
use crate::seed::{derive, stream};

pub const MIN_RESAMPLES: usize = 1000;
/// Attempts per replicate before a statistic is declared undefined on the data.
const MAX_REDRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    /// Nominal coverage `1 - zeta`.
    pub level: f64,
    pub resamples: usize,
    /// Resamples discarded because the statistic was undefined on them.
    pub redraws: usize,
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Replicates of `statistic` on `resamples` with-replacement resamples of
/// `data`, in replicate order, plus the number of redraws.
pub fn bootstrap_replicates<T, F>(data: &[T], statistic: F, resamples: usize, seed: u64) -> Result<(Vec<f64>, usize), TestError>
where
    T: Clone + Sync,
    F: Fn(&[T]) -> Option<f64> + Sync,
{
    let base = derive(seed, stream::BOOTSTRAP);
    let n = data.len();
    let results: Vec<Result<(f64, usize), TestError>> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive(base, b as u64));
            let mut buf = Vec::with_capacity(n);
            for attempt in 0..MAX_REDRAWS {
                buf.clear();
                buf.extend((0..n).map(|_| data[rng.gen_range(0..n)].clone()));
                if let Some(v) = statistic(&buf) {
                    return Ok((v, attempt));
                }
            }
            Err(TestError::StatisticUndefined(format!("no defined resample in {MAX_REDRAWS} attempts")))
        })
        .collect();
    let mut values = Vec::with_capacity(resamples);
    let mut redraws = 0;
    for r in results {
        let (v, extra) = r?;
        values.push(v);
        redraws += extra;
    }
    Ok((values, redraws))
}

/// Percentile `(1 - zeta)` interval for `statistic`, fully determined by `seed`.
///
/// Replicate `b` draws from its own seed stream, so the interval does not
/// depend on the number of worker threads.
pub fn bootstrap_ci<T, F>(data: &[T], statistic: F, resamples: usize, zeta: f64, seed: u64) -> Result<BootstrapInterval, TestError>
where
    T: Clone + Sync,
    F: Fn(&[T]) -> Option<f64> + Sync,
{
    if resamples < MIN_RESAMPLES {
        return Err(TestError::Invalid(format!("bootstrap needs at least {MIN_RESAMPLES} resamples, got {resamples}")));
    }
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(TestError::Invalid(format!("significance = {zeta} must lie in (0, 1)")));
    }
    if data.is_empty() {
        return Err(TestError::StatisticUndefined("no data to resample".into()));
    }
    let estimate = statistic(data).ok_or_else(|| TestError::StatisticUndefined("undefined on the observed data".into()))?;
    let (mut values, redraws) = bootstrap_replicates(data, &statistic, resamples, seed)?;
    values.sort_by(f64::total_cmp);
    Ok(BootstrapInterval {
        estimate,
        lower: quantile_sorted(&values, zeta / 2.0),
        upper: quantile_sorted(&values, 1.0 - zeta / 2.0),
        level: 1.0 - zeta,
        resamples,
        redraws,
    })
}

/// Mean of a 0/1 table, the selection rate.
pub fn selection_rate(rows: &[bool]) -> Option<f64> {
    (!rows.is_empty()).then(|| rows.iter().filter(|&&s| s).count() as f64 / rows.len() as f64)
}
