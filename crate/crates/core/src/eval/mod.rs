//! Offline policy evaluation: paired rollouts scored by the plugged-in
//! evaluator model, summary tables, Gaussian-mixture modal scores, and
//! bootstrap confidence intervals.

pub mod bootstrap;
pub mod gmm;

pub use bootstrap::{bootstrap_ci_mean, bootstrap_ci_with, percentile};
pub use gmm::{fit_gmm_1d, GmmFit};

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::agent::Policy;
use crate::domain::{derive_seed, seeded_rng, SimRng};
use crate::env::{Env, EnvState};
use crate::error::{Result, SimError};

/// One rolled-out episode.
#[derive(Debug, Clone, Serialize)]
pub struct EpisodeResult {
    pub policy: String,
    pub session_id: String,
    pub rewards: Vec<f64>,
    pub total: f64,
}

/// Rolls one policy from one initial state to the horizon.
pub fn rollout_episode(
    env: &Env,
    init: &EnvState,
    policy: &Policy,
    rng: &mut SimRng,
) -> Result<Vec<f64>> {
    let mut state = init.clone();
    let mut rewards = Vec::with_capacity(env.config.horizon);
    while !env.is_done(&state) {
        let action = policy.act(&state, rng)?;
        let result = env.step(&state, action)?;
        rewards.push(result.reward);
        state = result.next_state;
    }
    Ok(rewards)
}

/// Paired evaluation: every policy rolls out from exactly the same episode
/// initializations, so return differences are attributable to the policy.
/// Episodes parallelize; per-episode seeds keep the output reproducible.
pub fn rollout_suite(
    policies: &[Policy],
    env: &Env,
    inits: &[(String, EnvState)],
    seed: u64,
) -> Result<Vec<EpisodeResult>> {
    if inits.is_empty() {
        return Err(SimError::EmptyInput("episode initializations"));
    }
    let mut jobs: Vec<(usize, usize)> = Vec::with_capacity(policies.len() * inits.len());
    for p in 0..policies.len() {
        for e in 0..inits.len() {
            jobs.push((p, e));
        }
    }
    jobs.par_iter()
        .map(|&(p, e)| {
            let (session_id, init) = &inits[e];
            let mut rng = seeded_rng(derive_seed(seed, p as u64, e as u64));
            let rewards = rollout_episode(env, init, &policies[p], &mut rng)?;
            let total = rewards.iter().sum();
            Ok(EpisodeResult {
                policy: policies[p].name().to_string(),
                session_id: session_id.clone(),
                rewards,
                total,
            })
        })
        .collect()
}

/// Groups totals per policy, preserving first-seen order.
fn group_returns(results: &[EpisodeResult]) -> Vec<(String, Vec<f64>)> {
    let mut order: Vec<String> = Vec::new();
    let mut grouped: std::collections::HashMap<String, Vec<f64>> =
        std::collections::HashMap::new();
    for r in results {
        if !grouped.contains_key(&r.policy) {
            order.push(r.policy.clone());
        }
        grouped.entry(r.policy.clone()).or_default().push(r.total);
    }
    order.into_iter().map(|name| { let returns = grouped.remove(&name).unwrap(); (name, returns) }).collect()
}

/// Mean, sample standard deviation, and empirical 95% interval per policy.
#[derive(Debug, Clone, Serialize)]
pub struct PolicySummary {
    pub policy: String,
    pub episodes: usize,
    pub mean: f64,
    pub std: f64,
    pub lo95: f64,
    pub hi95: f64,
}

pub fn summarize_table(results: &[EpisodeResult]) -> Result<Vec<PolicySummary>> {
    let grouped = group_returns(results);
    if grouped.is_empty() {
        return Err(SimError::EmptyInput("evaluation results"));
    }
    grouped
        .into_iter()
        .map(|(policy, returns)| {
            if returns.len() < 2 {
                return Err(SimError::Data(format!(
                    "policy `{policy}` has {} episodes, need at least 2",
                    returns.len()
                )));
            }
            let n = returns.len() as f64;
            let mean = returns.iter().sum::<f64>() / n;
            let var =
                returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
            let mut sorted = returns.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            Ok(PolicySummary {
                policy,
                episodes: returns.len(),
                mean,
                std: var.sqrt(),
                lo95: percentile(&sorted, 0.025),
                hi95: percentile(&sorted, 0.975),
            })
        })
        .collect()
}

const MINMAX_GUARD: f64 = 1e-9;

fn log1p_clamped(x: f64) -> f64 {
    x.max(0.0).ln_1p()
}

fn scale_with(t: f64, min: f64, max: f64) -> f64 {
    if max - min < MINMAX_GUARD {
        0.5
    } else {
        ((t - min) / (max - min)).clamp(0.0, 1.0)
    }
}

/// Normalized modal score per policy: a 2-component mixture condenses each
/// return distribution to the weighted average of its modal means; those
/// are log(1+x) transformed and min-max scaled over the pooled set of
/// policies. Degenerate pooled spread maps everything to 0.5.
pub fn modal_score(results: &[EpisodeResult], rng: &mut SimRng) -> Result<Vec<(String, f64)>> {
    let grouped = group_returns(results);
    if grouped.is_empty() {
        return Err(SimError::EmptyInput("evaluation results"));
    }
    let mut transformed = Vec::with_capacity(grouped.len());
    for (name, returns) in &grouped {
        let fit = fit_gmm_1d(returns, 2, rng)?;
        transformed.push((name.clone(), log1p_clamped(fit.modal_average())));
    }
    let min = transformed.iter().map(|(_, t)| *t).fold(f64::INFINITY, f64::min);
    let max = transformed.iter().map(|(_, t)| *t).fold(f64::NEG_INFINITY, f64::max);
    Ok(transformed.into_iter().map(|(name, t)| (name, scale_with(t, min, max))).collect())
}

/// Full per-policy evaluation record: summary statistics, modal structure,
/// normalized score, and a bootstrap CI of the score.
#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub policy: String,
    pub episodes: usize,
    pub mean: f64,
    pub std: f64,
    pub lo95: f64,
    pub hi95: f64,
    pub modal_means: Vec<f64>,
    pub modal_weights: Vec<f64>,
    pub score: f64,
    pub score_lo: f64,
    pub score_hi: f64,
}

/// Runs the whole metric pipeline over rollout results. The bootstrap
/// resamples episodes within each policy, refits the mixture per replicate,
/// and holds the pooled min-max scaling fixed at the original fit. A
/// replicate whose mixture collapses falls back to its resample mean.
pub fn evaluate_policies(
    results: &[EpisodeResult],
    bootstrap_samples: usize,
    level: f64,
    seed: u64,
) -> Result<Vec<EvalSummary>> {
    let table = summarize_table(results)?;
    let grouped = group_returns(results);

    let mut fits = Vec::with_capacity(grouped.len());
    for (idx, (_, returns)) in grouped.iter().enumerate() {
        let mut rng = seeded_rng(derive_seed(seed, 0x676d, idx as u64));
        fits.push(fit_gmm_1d(returns, 2, &mut rng)?);
    }
    let transformed: Vec<f64> =
        fits.iter().map(|fit| log1p_clamped(fit.modal_average())).collect();
    let min = transformed.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = transformed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let mut out = Vec::with_capacity(grouped.len());
    for (idx, ((summary, (_, returns)), fit)) in
        table.into_iter().zip(&grouped).zip(&fits).enumerate()
    {
        let score = scale_with(transformed[idx], min, max);
        let mut rng = seeded_rng(derive_seed(seed, 0x6273, idx as u64));
        let (score_lo, score_hi) =
            bootstrap_ci_with(returns, bootstrap_samples, level, &mut rng, |sample, rep_seed| {
                let mut local = seeded_rng(rep_seed ^ 0x5f5f);
                let modal = match fit_gmm_1d(sample, 2, &mut local) {
                    Ok(fit) => fit.modal_average(),
                    Err(_) => sample.iter().sum::<f64>() / sample.len() as f64,
                };
                scale_with(log1p_clamped(modal), min, max)
            })?;
        out.push(EvalSummary {
            policy: summary.policy,
            episodes: summary.episodes,
            mean: summary.mean,
            std: summary.std,
            lo95: summary.lo95,
            hi95: summary.hi95,
            modal_means: fit.means.clone(),
            modal_weights: fit.weights.clone(),
            score,
            score_lo,
            score_hi,
        });
    }
    Ok(out)
}

/// Fixed-range histogram bin counts; values clamp into `[lo, hi]` and the
/// last bin is inclusive.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    assert!(bins > 0 && hi > lo, "invalid histogram range");
    let mut counts = vec![0usize; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let idx = (((v - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
        counts[idx] += 1;
    }
    counts
}

/// Writes the per-policy evaluation table as delimited text.
pub fn write_summary_csv(path: &Path, summaries: &[EvalSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record([
        "policy",
        "episodes",
        "mean_return",
        "std",
        "ci95_lo",
        "ci95_hi",
        "modal_mean_1",
        "modal_mean_2",
        "modal_weight_1",
        "modal_weight_2",
        "score",
        "score_ci_lo",
        "score_ci_hi",
    ])?;
    for s in summaries {
        let mut modal = s.modal_means.clone();
        let mut weights = s.modal_weights.clone();
        // canonical order: ascending means
        if modal.len() == 2 && modal[0] > modal[1] {
            modal.swap(0, 1);
            weights.swap(0, 1);
        }
        w.write_record([
            s.policy.clone(),
            s.episodes.to_string(),
            format!("{}", s.mean),
            format!("{}", s.std),
            format!("{}", s.lo95),
            format!("{}", s.hi95),
            format!("{}", modal[0]),
            format!("{}", modal.get(1).copied().unwrap_or(modal[0])),
            format!("{}", weights[0]),
            format!("{}", weights.get(1).copied().unwrap_or(0.0)),
            format!("{}", s.score),
            format!("{}", s.score_lo),
            format!("{}", s.score_hi),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes plot-ready per-policy return histograms as delimited text.
pub fn write_histograms_csv(
    path: &Path,
    results: &[EpisodeResult],
    lo: f64,
    hi: f64,
    bins: usize,
) -> Result<()> {
    let grouped = group_returns(results);
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["policy", "bin", "bin_lo", "bin_hi", "count"])?;
    let width = (hi - lo) / bins as f64;
    for (policy, returns) in &grouped {
        let counts = histogram(returns, lo, hi, bins);
        for (b, count) in counts.iter().enumerate() {
            w.write_record([
                policy.clone(),
                b.to_string(),
                format!("{}", lo + b as f64 * width),
                format!("{}", lo + (b + 1) as f64 * width),
                count.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
