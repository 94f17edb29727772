//! User-behavior models: example construction from sessions, feature
//! normalization, and the two classifiers (non-sequential CWM, sequential
//! SWM) with their trainers.

pub mod cwm;
pub mod swm;

pub use cwm::{train_cwm, Cwm};
pub use swm::{train_swm, Swm, SwmState};

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::FeatureTable;
use crate::domain::{mean_feature_vector, SessionRecord, TrackFeatures};
use crate::error::{Result, SimError};

/// Per-column z-score statistics, fitted on the training split and stored
/// with every model checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn fit<'a>(rows: impl Iterator<Item = &'a Vec<f64>> + Clone, dim: usize) -> Self {
        let mut mean = vec![0.0; dim];
        let mut count = 0usize;
        for row in rows.clone() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
            count += 1;
        }
        let n = (count as f64).max(1.0);
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / n).sqrt().max(1e-8)).collect();
        Self { mean, std }
    }

    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// z-score is affine per column, so applying it to a mean-of-vectors
    /// equals the mean of individually normalized vectors.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(self.mean.iter().zip(&self.std)).map(|(x, (m, s))| (x - m) / s).collect()
    }
}

/// One training example: a context vector plus the labeled item sequence
/// that follows it.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub session_id: String,
    pub context: Vec<f64>,
    pub items: Vec<Vec<f64>>,
    pub labels: Vec<[f64; 3]>,
}

impl TrainingExample {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Output of [`build_examples`], with counters for excluded sessions.
#[derive(Debug, Default)]
pub struct BuildReport {
    pub examples: Vec<TrainingExample>,
    pub skipped_unknown_track: usize,
    pub skipped_short: usize,
}

/// Turns sessions into training examples: the first `context_size` tracks
/// become the context mean, the rest become labeled items. Sessions with
/// unresolvable track ids or no labeled items are skipped and counted.
pub fn build_examples(
    sessions: &[SessionRecord],
    features: &FeatureTable,
    context_size: usize,
) -> BuildReport {
    let mut report = BuildReport::default();
    'sessions: for session in sessions {
        if session.len() < context_size + 1 {
            report.skipped_short += 1;
            continue;
        }
        let mut resolved: Vec<&TrackFeatures> = Vec::with_capacity(session.len());
        for item in &session.items {
            match features.get(&item.track_id) {
                Some(track) => resolved.push(track),
                None => {
                    log::warn!(
                        "session `{}` references unknown track `{}`; skipping session",
                        session.session_id,
                        item.track_id
                    );
                    report.skipped_unknown_track += 1;
                    continue 'sessions;
                }
            }
        }
        let context = if context_size == 0 {
            vec![0.0; features.dim]
        } else {
            let ctx_tracks: Vec<TrackFeatures> =
                resolved[..context_size].iter().map(|t| (*t).clone()).collect();
            match mean_feature_vector(&ctx_tracks) {
                Ok(v) => v,
                Err(_) => {
                    report.skipped_short += 1;
                    continue;
                }
            }
        };
        let items: Vec<Vec<f64>> =
            resolved[context_size..].iter().map(|t| t.features.clone()).collect();
        let labels: Vec<[f64; 3]> = session.items[context_size..]
            .iter()
            .map(|item| item.labels().to_array())
            .collect();
        report.examples.push(TrainingExample {
            session_id: session.session_id.clone(),
            context,
            items,
            labels,
        });
    }
    report
}

/// Hyperparameters shared by both model trainers. `hidden` means dense
/// widths for the CWM and stacked cell sizes for the SWM.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserModelConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub clip: f64,
    pub seed: u64,
}

impl UserModelConfig {
    pub fn cwm_default() -> Self {
        Self {
            hidden: vec![64, 32],
            lr: 1e-3,
            epochs: 40,
            batch_size: 128,
            patience: 5,
            clip: 5.0,
            seed: 1,
        }
    }

    pub fn swm_default() -> Self {
        Self {
            hidden: vec![32, 16],
            lr: 1e-3,
            epochs: 30,
            batch_size: 16,
            patience: 5,
            clip: 5.0,
            seed: 2,
        }
    }
}

/// One row of the per-epoch metrics log. Losses are mean BCE per label
/// element; the `val_*` columns break validation loss out per head.
#[derive(Debug, Clone, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_complete: f64,
    pub val_skip: f64,
    pub val_listen_tau: f64,
}

pub type TrainingLog = Vec<EpochMetrics>;

pub fn write_training_log(path: &Path, log: &TrainingLog) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record([
        "epoch",
        "train_loss",
        "val_loss",
        "val_bce_complete",
        "val_bce_skip",
        "val_bce_listen_tau",
    ])?;
    for row in log {
        w.write_record([
            row.epoch.to_string(),
            format!("{}", row.train_loss),
            format!("{}", row.val_loss),
            format!("{}", row.val_complete),
            format!("{}", row.val_skip),
            format!("{}", row.val_listen_tau),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Infers the feature dimension from a non-empty example set.
pub(crate) fn feature_dim_of(examples: &[TrainingExample]) -> Result<usize> {
    examples
        .iter()
        .flat_map(|e| e.items.first())
        .map(Vec::len)
        .next()
        .ok_or(SimError::EmptyInput("training examples"))
}

/// Pooled per-head and per-element validation losses.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct ValAccumulator {
    sums: [f64; 3],
    count: usize,
}

impl ValAccumulator {
    pub fn add(&mut self, probs: &[f64], labels: &[f64; 3]) {
        for h in 0..3 {
            let p = probs[h].clamp(crate::neural::loss::PROB_EPS, 1.0 - crate::neural::loss::PROB_EPS);
            self.sums[h] += -(labels[h] * p.ln() + (1.0 - labels[h]) * (1.0 - p).ln());
        }
        self.count += 1;
    }

    pub fn per_head(&self) -> [f64; 3] {
        let n = (self.count as f64).max(1.0);
        [self.sums[0] / n, self.sums[1] / n, self.sums[2] / n]
    }

    pub fn per_element(&self) -> f64 {
        let heads = self.per_head();
        (heads[0] + heads[1] + heads[2]) / 3.0
    }
}
