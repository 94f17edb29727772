//! Non-parametric bootstrap confidence intervals. Replicates get
//! pre-derived seeds so the resampling parallelizes without losing
//! reproducibility.

use rand::Rng;
use rayon::prelude::*;

use crate::domain::{seeded_rng, SimRng};
use crate::error::{Result, SimError};

/// Linear-interpolation percentile of a sorted slice, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty slice");
    let rank = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = rank - lo as f64;
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

/// Percentile-bootstrap interval of an arbitrary statistic. The statistic
/// receives the resampled values and a replicate seed it may use for any
/// internal randomness.
pub fn bootstrap_ci_with<S>(
    values: &[f64],
    b: usize,
    level: f64,
    rng: &mut SimRng,
    statistic: S,
) -> Result<(f64, f64)>
where
    S: Fn(&[f64], u64) -> f64 + Sync,
{
    if values.len() < 2 {
        return Err(SimError::Data(format!(
            "bootstrap needs at least 2 values, got {}",
            values.len()
        )));
    }
    if !(0.0..1.0).contains(&level) || level <= 0.0 {
        return Err(SimError::Config(format!("bootstrap level {level} outside (0, 1)")));
    }
    let seeds: Vec<u64> = (0..b).map(|_| rng.gen()).collect();
    let mut stats: Vec<f64> = seeds
        .par_iter()
        .map(|&seed| {
            let mut local = seeded_rng(seed);
            let resample: Vec<f64> =
                (0..values.len()).map(|_| values[local.gen_range(0..values.len())]).collect();
            statistic(&resample, seed)
        })
        .collect();
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let alpha = (1.0 - level) / 2.0;
    Ok((percentile(&stats, alpha), percentile(&stats, 1.0 - alpha)))
}

/// Percentile-bootstrap interval for the mean.
pub fn bootstrap_ci_mean(
    values: &[f64],
    b: usize,
    level: f64,
    rng: &mut SimRng,
) -> Result<(f64, f64)> {
    bootstrap_ci_with(values, b, level, rng, |sample, _| {
        sample.iter().sum::<f64>() / sample.len() as f64
    })
}
