//! Baseline policies and the policy enum evaluation rolls out.

use std::sync::Arc;

use rand::Rng;

use crate::domain::SimRng;
use crate::env::EnvState;
use crate::error::{Result, SimError};
use crate::model::Cwm;

use super::{argmax, QNetwork};

/// Uniformly random pool index.
pub fn policy_random(state: &EnvState, rng: &mut SimRng) -> Result<usize> {
    if state.pool.is_empty() {
        return Err(SimError::EmptyInput("candidate pool"));
    }
    Ok(rng.gen_range(0..state.pool.len()))
}

/// Highest cosine similarity between the context vector (the user
/// embedding) and each track's feature vector. Zero-norm tracks rank last;
/// an all-zero pool or context is an error.
pub fn policy_cosine(state: &EnvState) -> Result<usize> {
    if state.pool.is_empty() {
        return Err(SimError::EmptyInput("candidate pool"));
    }
    let u = &state.context.values;
    let u_norm = norm(u);
    if u_norm == 0.0 {
        return Err(SimError::Degenerate("zero-norm context embedding".into()));
    }
    let sims: Vec<f64> = state
        .pool
        .iter()
        .map(|track| {
            let t_norm = norm(&track.features);
            if t_norm == 0.0 {
                f64::NEG_INFINITY
            } else {
                dot(u, &track.features) / (u_norm * t_norm)
            }
        })
        .collect();
    if sims.iter().all(|s| *s == f64::NEG_INFINITY) {
        return Err(SimError::Degenerate("every track embedding has zero norm".into()));
    }
    Ok(argmax(&sims))
}

/// Greedy ranking by the user model's predicted completion probability.
pub fn policy_gmpc(state: &EnvState, cwm: &Cwm) -> Result<usize> {
    if state.pool.is_empty() {
        return Err(SimError::EmptyInput("candidate pool"));
    }
    let probs: Vec<f64> = state
        .pool
        .iter()
        .map(|track| {
            cwm.predict(&state.context.values, &track.features).map(|p| p.p_complete)
        })
        .collect::<Result<_>>()?;
    Ok(argmax(&probs))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// The policy suite evaluated side by side.
#[derive(Clone)]
pub enum Policy {
    Random,
    Cosine,
    Gmpc(Arc<Cwm>),
    Agent(Arc<QNetwork>),
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Random => "random",
            Policy::Cosine => "cosine",
            Policy::Gmpc(_) => "gmpc",
            Policy::Agent(_) => "agent",
        }
    }

    pub fn act(&self, state: &EnvState, rng: &mut SimRng) -> Result<usize> {
        match self {
            Policy::Random => policy_random(state, rng),
            Policy::Cosine => policy_cosine(state),
            Policy::Gmpc(cwm) => policy_gmpc(state, cwm),
            Policy::Agent(qnet) => qnet.act_greedy(state),
        }
    }
}
