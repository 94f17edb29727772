//! Sequential user model: a stacked LSTM consuming, at each step, the
//! current item features, the previous response encoding, and the context,
//! with three sigmoid heads. Trained with teacher forcing; at rollout time
//! the previous step's predicted probabilities feed the encoding.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{seeded_rng, UserResponseProbs};
use crate::error::{Result, SimError};
use crate::neural::checkpoint::{read_checkpoint, write_checkpoint};
use crate::neural::loss::bce_terms;
use crate::neural::{Activation, Adam, Parameterized, RecurrentNet, RecurrentState};

use super::cwm::shuffle;
use super::{feature_dim_of, EpochMetrics, NormStats, TrainingExample, TrainingLog, UserModelConfig, ValAccumulator};

pub const RESPONSE_DIM: usize = 3;

#[derive(Debug, Clone)]
pub struct Swm {
    pub net: RecurrentNet,
    pub norm: NormStats,
    pub feature_dim: usize,
}

/// Caller-owned rollout state: recurrent hidden/cell state, the last
/// response encoding, and the episode's normalized context.
#[derive(Debug, Clone)]
pub struct SwmState {
    rnn: RecurrentState,
    pub prev_response: [f64; RESPONSE_DIM],
    ctx: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SwmMeta {
    feature_dim: usize,
    hidden: Vec<usize>,
    norm: NormStats,
}

impl Swm {
    pub fn new(feature_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed);
        let input_dim = 2 * feature_dim + RESPONSE_DIM;
        Ok(Self {
            net: RecurrentNet::new(input_dim, hidden, RESPONSE_DIM, Activation::Sigmoid, &mut rng)?,
            norm: NormStats::identity(feature_dim),
            feature_dim,
        })
    }

    /// Starts a fresh episode over the given raw context vector.
    pub fn begin(&self, context: &[f64]) -> Result<SwmState> {
        if context.len() != self.feature_dim {
            return Err(SimError::DimMismatch { expected: self.feature_dim, got: context.len() });
        }
        Ok(SwmState {
            rnn: self.net.init_state(),
            prev_response: [0.0; RESPONSE_DIM],
            ctx: self.norm.apply(context),
        })
    }

    fn step_input(&self, state: &SwmState, item: &[f64]) -> Result<Vec<f64>> {
        if item.len() != self.feature_dim {
            return Err(SimError::DimMismatch { expected: self.feature_dim, got: item.len() });
        }
        if state.ctx.len() != self.feature_dim {
            return Err(SimError::DimMismatch { expected: self.feature_dim, got: state.ctx.len() });
        }
        let mut x = self.norm.apply(item);
        x.extend_from_slice(&state.prev_response);
        x.extend_from_slice(&state.ctx);
        Ok(x)
    }

    /// One stateful step with an explicit previous-response encoding.
    /// Advances the recurrent state but leaves `prev_response` to the caller.
    pub fn step_with_prev(
        &self,
        state: &mut SwmState,
        item: &[f64],
        prev: [f64; RESPONSE_DIM],
    ) -> Result<UserResponseProbs> {
        state.prev_response = prev;
        let x = self.step_input(state, item)?;
        let out = self.net.step(&mut state.rnn, &x)?;
        Ok(UserResponseProbs::new(out[0], out[1], out[2]))
    }

    /// Default evaluation mode: the previous step's predicted probabilities
    /// feed the next step's response encoding.
    pub fn step(&self, state: &mut SwmState, item: &[f64]) -> Result<UserResponseProbs> {
        let prev = state.prev_response;
        let probs = self.step_with_prev(state, item, prev)?;
        state.prev_response = probs.to_array();
        Ok(probs)
    }

    /// Full-sequence prediction in rollout mode, threading predictions.
    pub fn predict_sequence(
        &self,
        context: &[f64],
        items: &[Vec<f64>],
    ) -> Result<Vec<UserResponseProbs>> {
        if items.is_empty() {
            return Err(SimError::EmptyInput("swm sequence"));
        }
        let mut state = self.begin(context)?;
        items.iter().map(|item| self.step(&mut state, item)).collect()
    }

    /// Teacher-forced prediction: step t sees the true labels of step t-1.
    pub fn predict_sequence_teacher(
        &self,
        context: &[f64],
        items: &[Vec<f64>],
        labels: &[[f64; RESPONSE_DIM]],
    ) -> Result<Vec<UserResponseProbs>> {
        if items.is_empty() {
            return Err(SimError::EmptyInput("swm sequence"));
        }
        if items.len() != labels.len() {
            return Err(SimError::DimMismatch { expected: items.len(), got: labels.len() });
        }
        let mut state = self.begin(context)?;
        let mut out = Vec::with_capacity(items.len());
        for (t, item) in items.iter().enumerate() {
            let prev = if t == 0 { [0.0; RESPONSE_DIM] } else { labels[t - 1] };
            out.push(self.step_with_prev(&mut state, item, prev)?);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = SwmMeta {
            feature_dim: self.feature_dim,
            hidden: self.net.hidden_sizes(),
            norm: self.norm.clone(),
        };
        write_checkpoint(path, "swm", &meta, &self.net.params())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, params): (SwmMeta, _) = read_checkpoint(path, "swm")?;
        let mut net = RecurrentNet::zeros(
            2 * meta.feature_dim + RESPONSE_DIM,
            &meta.hidden,
            RESPONSE_DIM,
            Activation::Sigmoid,
        )?;
        net.set_params(&params)?;
        Ok(Self { net, norm: meta.norm, feature_dim: meta.feature_dim })
    }

    /// Builds the teacher-forced input sequence for one example.
    fn teacher_inputs(&self, example: &TrainingExample) -> Vec<Vec<f64>> {
        let ctx = self.norm.apply(&example.context);
        example
            .items
            .iter()
            .enumerate()
            .map(|(t, item)| {
                let mut x = self.norm.apply(item);
                if t == 0 {
                    x.extend_from_slice(&[0.0; RESPONSE_DIM]);
                } else {
                    x.extend_from_slice(&example.labels[t - 1]);
                }
                x.extend_from_slice(&ctx);
                x
            })
            .collect()
    }
}

/// Trains an SWM with teacher forcing, early-stopping on the teacher-forced
/// validation loss and restoring the best parameters.
pub fn train_swm(
    train: &[TrainingExample],
    val: &[TrainingExample],
    cfg: &UserModelConfig,
) -> Result<(Swm, TrainingLog)> {
    let feature_dim = feature_dim_of(train)?;
    let mut model = Swm::new(feature_dim, &cfg.hidden, cfg.seed)?;
    model.norm = NormStats::fit(train.iter().flat_map(|e| e.items.iter()), feature_dim);

    let train_inputs: Vec<Vec<Vec<f64>>> =
        train.iter().map(|e| model.teacher_inputs(e)).collect();
    let val_inputs: Vec<Vec<Vec<f64>>> = val.iter().map(|e| model.teacher_inputs(e)).collect();

    let mut rng = seeded_rng(cfg.seed ^ 0x7377_6d31);
    let mut opt = Adam::new(cfg.lr, Some(cfg.clip));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainingLog::new();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut stale = 0usize;

    for epoch in 0..cfg.epochs {
        shuffle(&mut order, &mut rng);
        let mut train_sum = 0.0;
        let mut train_items = 0usize;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let mut grads = vec![0.0; model.net.param_count()];
            let scale = 1.0 / batch.len() as f64;
            for &idx in batch {
                let example = &train[idx];
                if example.is_empty() {
                    continue;
                }
                let steps = example.len() as f64;
                let (probs, cache) = model.net.forward_cached(&train_inputs[idx])?;
                let mut upstream = Vec::with_capacity(probs.len());
                for (p, y) in probs.iter().zip(&example.labels) {
                    let (loss_sum, mut g) = bce_terms(p, y);
                    if !loss_sum.is_finite() {
                        return Err(SimError::NonFinite(format!(
                            "swm training loss at epoch {epoch}"
                        )));
                    }
                    // per-sequence mean over steps, then mean over the batch
                    g.iter_mut().for_each(|v| *v *= scale / steps);
                    upstream.push(g);
                    train_sum += loss_sum;
                    train_items += 1;
                }
                let flat = model.net.backward(&cache, &upstream);
                for (acc, g) in grads.iter_mut().zip(&flat) {
                    *acc += g;
                }
            }
            opt.step(&mut model.net, &grads)?;
        }

        let mut acc = ValAccumulator::default();
        for (example, inputs) in val.iter().zip(&val_inputs) {
            if example.is_empty() {
                continue;
            }
            let probs = model.net.forward(inputs)?;
            for (p, y) in probs.iter().zip(&example.labels) {
                acc.add(p, y);
            }
        }
        let heads = acc.per_head();
        let val_loss = acc.per_element();
        log.push(EpochMetrics {
            epoch,
            train_loss: train_sum / (3.0 * train_items.max(1) as f64),
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

/// Pooled teacher-forced validation BCE (mean per label element), the
/// held-out accuracy metric shared with the CWM.
pub fn held_out_bce(model: &Swm, examples: &[TrainingExample]) -> Result<f64> {
    let mut acc = ValAccumulator::default();
    for example in examples {
        if example.is_empty() {
            continue;
        }
        let probs = model.predict_sequence_teacher(&example.context, &example.items, &example.labels)?;
        for (p, y) in probs.iter().zip(&example.labels) {
            acc.add(&p.to_array(), y);
        }
    }
    Ok(acc.per_element())
}

/// The CWM counterpart of [`held_out_bce`].
pub fn held_out_bce_cwm(model: &super::Cwm, examples: &[TrainingExample]) -> Result<f64> {
    let mut acc = ValAccumulator::default();
    for example in examples {
        for (item, label) in example.items.iter().zip(&example.labels) {
            let probs = model.predict(&example.context, item)?;
            acc.add(&probs.to_array(), label);
        }
    }
    Ok(acc.per_element())
}
