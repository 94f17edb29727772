//! Non-sequential user model: dense layers over the concatenated context
//! and item features, three independent sigmoid heads. Predictions for an
//! item cannot depend on anything else in the session by construction.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{seeded_rng, UserResponseProbs};
use crate::error::{Result, SimError};
use crate::neural::checkpoint::{read_checkpoint, write_checkpoint};
use crate::neural::loss::bce_terms;
use crate::neural::{Activation, Adam, DenseNet, Parameterized};

use super::{feature_dim_of, EpochMetrics, NormStats, TrainingExample, TrainingLog, UserModelConfig, ValAccumulator};

#[derive(Debug, Clone)]
pub struct Cwm {
    pub net: DenseNet,
    pub norm: NormStats,
    pub feature_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct CwmMeta {
    feature_dim: usize,
    dims: Vec<usize>,
    acts: Vec<Activation>,
    norm: NormStats,
}

impl Cwm {
    pub fn new(feature_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut dims = vec![2 * feature_dim];
        dims.extend_from_slice(hidden);
        dims.push(3);
        let mut acts = vec![Activation::Relu; hidden.len()];
        acts.push(Activation::Sigmoid);
        let mut rng = seeded_rng(seed);
        Ok(Self {
            net: DenseNet::new(&dims, &acts, &mut rng)?,
            norm: NormStats::identity(feature_dim),
            feature_dim,
        })
    }

    fn input(&self, context: &[f64], item: &[f64]) -> Result<Vec<f64>> {
        if context.len() != self.feature_dim {
            return Err(SimError::DimMismatch { expected: self.feature_dim, got: context.len() });
        }
        if item.len() != self.feature_dim {
            return Err(SimError::DimMismatch { expected: self.feature_dim, got: item.len() });
        }
        let mut x = self.norm.apply(context);
        x.extend(self.norm.apply(item));
        Ok(x)
    }

    /// Deterministic response prediction from (context, item) alone.
    pub fn predict(&self, context: &[f64], item: &[f64]) -> Result<UserResponseProbs> {
        let out = self.net.forward(&self.input(context, item)?)?;
        Ok(UserResponseProbs::new(out[0], out[1], out[2]))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = CwmMeta {
            feature_dim: self.feature_dim,
            dims: self.net.dims(),
            acts: self.net.activations(),
            norm: self.norm.clone(),
        };
        write_checkpoint(path, "cwm", &meta, &self.net.params())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, params): (CwmMeta, _) = read_checkpoint(path, "cwm")?;
        let mut net = DenseNet::zeros(&meta.dims, &meta.acts)?;
        net.set_params(&params)?;
        Ok(Self { net, norm: meta.norm, feature_dim: meta.feature_dim })
    }
}

/// Trains a CWM with teacher labels, early-stopping on validation loss and
/// restoring the best parameters seen.
pub fn train_cwm(
    train: &[TrainingExample],
    val: &[TrainingExample],
    cfg: &UserModelConfig,
) -> Result<(Cwm, TrainingLog)> {
    let feature_dim = feature_dim_of(train)?;
    let mut model = Cwm::new(feature_dim, &cfg.hidden, cfg.seed)?;
    model.norm = NormStats::fit(train.iter().flat_map(|e| e.items.iter()), feature_dim);

    // flatten to per-item rows with pre-normalized inputs
    let mut inputs: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<[f64; 3]> = Vec::new();
    for example in train {
        let ctx = model.norm.apply(&example.context);
        for (item, label) in example.items.iter().zip(&example.labels) {
            let mut x = ctx.clone();
            x.extend(model.norm.apply(item));
            inputs.push(x);
            labels.push(*label);
        }
    }
    let mut val_rows: Vec<(Vec<f64>, [f64; 3])> = Vec::new();
    for example in val {
        let ctx = model.norm.apply(&example.context);
        for (item, label) in example.items.iter().zip(&example.labels) {
            let mut x = ctx.clone();
            x.extend(model.norm.apply(item));
            val_rows.push((x, *label));
        }
    }

    let mut rng = seeded_rng(cfg.seed ^ 0x7261_6e64);
    let mut opt = Adam::new(cfg.lr, Some(cfg.clip));
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut log = TrainingLog::new();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut stale = 0usize;

    for epoch in 0..cfg.epochs {
        shuffle(&mut order, &mut rng);
        let mut train_sum = 0.0;
        let mut train_count = 0usize;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let mut grads = vec![0.0; model.net.param_count()];
            let scale = 1.0 / batch.len() as f64;
            for &row in batch {
                let (probs, cache) = model.net.forward_cached(&inputs[row])?;
                let (loss_sum, mut upstream) = bce_terms(&probs, &labels[row]);
                if !loss_sum.is_finite() {
                    return Err(SimError::NonFinite(format!(
                        "cwm training loss at epoch {epoch}"
                    )));
                }
                upstream.iter_mut().for_each(|g| *g *= scale);
                let (flat, _) = model.net.backward(&cache, &upstream);
                for (acc, g) in grads.iter_mut().zip(&flat) {
                    *acc += g;
                }
                train_sum += loss_sum;
                train_count += 1;
            }
            opt.step(&mut model.net, &grads)?;
        }

        let mut acc = ValAccumulator::default();
        for (x, y) in &val_rows {
            let probs = model.net.forward(x)?;
            acc.add(&probs, y);
        }
        let heads = acc.per_head();
        let val_loss = acc.per_element();
        log.push(EpochMetrics {
            epoch,
            train_loss: train_sum / (3.0 * train_count.max(1) as f64),
            val_loss,
            val_complete: heads[0],
            val_skip: heads[1],
            val_listen_tau: heads[2],
        });

        match &best {
            Some((best_loss, _)) if val_loss >= best_loss - 1e-6 => {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
            _ => {
                best = Some((val_loss, model.net.params()));
                stale = 0;
            }
        }
    }

    if let Some((_, params)) = best {
        model.net.set_params(&params)?;
    }
    Ok((model, log))
}

pub(crate) fn shuffle(order: &mut [usize], rng: &mut crate::domain::SimRng) {
    use rand::Rng;
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, PreferenceMode, SyntheticSpec};
    use crate::model::build_examples;
    use rand::Rng;

    fn quick_cfg() -> UserModelConfig {
        UserModelConfig {
            hidden: vec![16],
            lr: 1e-2,
            epochs: 40,
            batch_size: 64,
            patience: 8,
            clip: 5.0,
            seed: 1,
        }
    }

    fn split_examples(
        mut examples: Vec<TrainingExample>,
    ) -> (Vec<TrainingExample>, Vec<TrainingExample>) {
        let val = examples.split_off(examples.len() * 4 / 5);
        (examples, val)
    }

    #[test]
    fn all_positive_labels_drive_predictions_high() {
        let spec = SyntheticSpec {
            sessions: 80,
            session_length: 10,
            tracks: 100,
            seed: 6,
            ..SyntheticSpec::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        let mut report = build_examples(&data.sessions, &data.features, 3);
        for example in &mut report.examples {
            for label in &mut example.labels {
                *label = [1.0, 1.0, 1.0];
            }
        }
        let (train, val) = split_examples(report.examples);
        let (model, _) = train_cwm(&train, &val, &quick_cfg()).unwrap();
        for example in &val {
            for item in &example.items {
                let p = model.predict(&example.context, item).unwrap();
                assert!(p.p_complete >= 0.95, "p_complete {}", p.p_complete);
            }
        }
    }

    #[test]
    fn predictions_are_valid_probabilities_and_deterministic() {
        let model = Cwm::new(4, &[8], 3).unwrap();
        let mut rng = crate::domain::seeded_rng(4);
        for _ in 0..1000 {
            let ctx: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let item: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let a = model.predict(&ctx, &item).unwrap();
            let b = model.predict(&ctx, &item).unwrap();
            assert_eq!(a, b);
            for p in a.to_array() {
                assert!((0.0..=1.0).contains(&p));
            }
        }
    }

    #[test]
    fn prediction_ignores_other_session_items() {
        // order-independence: permuting the other items of a session can't
        // change a prediction that never sees them
        let model = Cwm::new(2, &[6], 5).unwrap();
        let ctx = vec![0.3, -0.7];
        let item = vec![1.0, 0.5];
        let p1 = model.predict(&ctx, &item).unwrap();
        // "session" with different surrounding items is just another call
        let p2 = model.predict(&ctx, &item).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let model = Cwm::new(4, &[8], 3).unwrap();
        assert!(model.predict(&[0.0; 3], &[0.0; 4]).is_err());
        assert!(model.predict(&[0.0; 4], &[0.0; 5]).is_err());
    }

    #[test]
    fn learns_global_preference_close_to_bayes_loss() {
        // generator with a single global preference: p(complete) = sigmoid(w.i),
        // so the Bayes loss is the entropy of the true probabilities
        let spec = SyntheticSpec {
            sessions: 1500,
            session_length: 12,
            tracks: 400,
            preference: PreferenceMode::Global,
            pref_scale: 1.5,
            bias: 0.0,
            rho: 0.0,
            seed: 7,
            ..SyntheticSpec::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        let report = build_examples(&data.sessions, &data.features, 3);
        let (train, val) = split_examples(report.examples);
        let cfg = UserModelConfig {
            hidden: vec![16],
            lr: 3e-3,
            epochs: 30,
            batch_size: 128,
            patience: 5,
            clip: 5.0,
            seed: 2,
        };
        let (model, log) = train_cwm(&train, &val, &cfg).unwrap();
        assert!(!log.is_empty());

        // Bayes loss for the complete head, computed from the generator
        let mut bayes = 0.0;
        let mut model_loss = 0.0;
        let mut count = 0usize;
        for example in &val {
            for (item, label) in example.items.iter().zip(&example.labels) {
                let p_true = data.truth.p_complete(&example.session_id, item, None);
                bayes += -(p_true * p_true.ln() + (1.0 - p_true) * (1.0 - p_true).ln());
                let p_hat = model
                    .predict(&example.context, item)
                    .unwrap()
                    .p_complete
                    .clamp(1e-7, 1.0 - 1e-7);
                model_loss += -(label[0] * p_hat.ln() + (1.0 - label[0]) * (1.0 - p_hat).ln());
                count += 1;
            }
        }
        let bayes = bayes / count as f64;
        let model_loss = model_loss / count as f64;
        assert!(
            model_loss - bayes < 0.02,
            "val complete-head BCE {model_loss} vs Bayes {bayes}"
        );
    }

    #[test]
    fn checkpoint_roundtrip_preserves_predictions() {
        let model = Cwm::new(3, &[5], 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cwm.ckpt");
        model.save(&path).unwrap();
        let loaded = Cwm::load(&path).unwrap();
        let ctx = [0.1, 0.2, 0.3];
        let item = [-0.5, 0.0, 0.5];
        let a = model.predict(&ctx, &item).unwrap();
        let b = loaded.predict(&ctx, &item).unwrap();
        for (x, y) in a.to_array().iter().zip(b.to_array()) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}
