//! Python bindings: datasets, user models, the simulated environment,
//! policies, agent training, and the evaluation metrics.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use playlist_sim::agent::{self, AgentConfig, Policy, QNetwork};
use playlist_sim::data::{
    self, generate_synthetic, FeatureTable, PreferenceMode, SyntheticSpec,
};
use playlist_sim::domain::{RewardHead, SessionRecord};
use playlist_sim::env::{Env, EnvConfig, EnvState, Responder};
use playlist_sim::error::SimError;
use playlist_sim::eval;
use playlist_sim::model::{self, UserModelConfig};

fn err(e: SimError) -> PyErr {
    match e {
        SimError::Config(_) | SimError::Usage(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Sessions plus track features, either synthetic or loaded from files.
#[pyclass]
#[derive(Clone)]
struct Dataset {
    sessions: Vec<SessionRecord>,
    features: FeatureTable,
}

#[pymethods]
impl Dataset {
    /// Generates a synthetic dataset with a known response mechanism.
    #[staticmethod]
    #[pyo3(signature = (
        sessions = 500,
        session_length = 20,
        tracks = 400,
        feature_dim = 8,
        clusters = 4,
        context_size = 5,
        preference = "context_cluster",
        pref_scale = 3.0,
        bias = -0.5,
        rho = 0.2,
        seed = 0,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn synthetic(
        sessions: usize,
        session_length: usize,
        tracks: usize,
        feature_dim: usize,
        clusters: usize,
        context_size: usize,
        preference: &str,
        pref_scale: f64,
        bias: f64,
        rho: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let preference = match preference {
            "global" => PreferenceMode::Global,
            "context_cluster" => PreferenceMode::ContextCluster,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown preference mode `{other}`"
                )))
            }
        };
        let spec = SyntheticSpec {
            sessions,
            session_length,
            tracks,
            feature_dim,
            clusters,
            context_size,
            preference,
            pref_scale,
            bias,
            rho,
            seed,
            ..SyntheticSpec::default()
        };
        let data = generate_synthetic(&spec).map_err(err)?;
        Ok(Self { sessions: data.sessions, features: data.features })
    }

    /// Loads a session log and feature table from delimited text files.
    #[staticmethod]
    #[pyo3(signature = (sessions_path, features_path, min_session_len = 6))]
    fn load(sessions_path: PathBuf, features_path: PathBuf, min_session_len: usize) -> PyResult<Self> {
        let (sessions, _) =
            data::load_sessions_min_len(&sessions_path, min_session_len).map_err(err)?;
        let (features, _) = data::load_features(&features_path).map_err(err)?;
        Ok(Self { sessions, features })
    }

    /// Writes the dataset in the loader's format.
    fn save(&self, sessions_path: PathBuf, features_path: PathBuf) -> PyResult<()> {
        data::write_sessions(&sessions_path, &self.sessions).map_err(err)?;
        data::write_features(&features_path, &self.features).map_err(err)
    }

    /// Deterministic disjoint partition by session.
    fn split(&self, fractions: Vec<f64>, seed: u64) -> PyResult<Vec<Dataset>> {
        let splits = data::split_sessions(&self.sessions, &fractions, seed).map_err(err)?;
        Ok(splits
            .into_iter()
            .map(|sessions| Dataset { sessions, features: self.features.clone() })
            .collect())
    }

    #[getter]
    fn n_sessions(&self) -> usize {
        self.sessions.len()
    }

    #[getter]
    fn n_tracks(&self) -> usize {
        self.features.len()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.features.dim
    }

    fn session_ids(&self) -> Vec<String> {
        self.sessions.iter().map(|s| s.session_id.clone()).collect()
    }

    fn __len__(&self) -> usize {
        self.sessions.len()
    }
}

/// Non-sequential user model (order-independent response prediction).
#[pyclass]
#[derive(Clone)]
struct Cwm {
    inner: Arc<model::Cwm>,
}

#[pymethods]
impl Cwm {
    /// Response probabilities (complete, skip, listen_tau) for one item.
    fn predict(&self, context: Vec<f64>, item: Vec<f64>) -> PyResult<(f64, f64, f64)> {
        let p = self.inner.predict(&context, &item).map_err(err)?;
        Ok((p.p_complete, p.p_skip, p.p_listen_tau))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: Arc::new(model::Cwm::load(&path).map_err(err)?) })
    }
}

/// Sequential user model; predictions thread a hidden state across steps.
#[pyclass]
#[derive(Clone)]
struct Swm {
    inner: Arc<model::Swm>,
}

#[pymethods]
impl Swm {
    /// Per-step response probabilities with predicted responses fed forward.
    fn predict_sequence(
        &self,
        context: Vec<f64>,
        items: Vec<Vec<f64>>,
    ) -> PyResult<Vec<(f64, f64, f64)>> {
        let probs = self.inner.predict_sequence(&context, &items).map_err(err)?;
        Ok(probs.into_iter().map(|p| (p.p_complete, p.p_skip, p.p_listen_tau)).collect())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: Arc::new(model::Swm::load(&path).map_err(err)?) })
    }
}

fn split_examples(
    dataset: &Dataset,
    context_size: usize,
    val_fraction: f64,
) -> (Vec<model::TrainingExample>, Vec<model::TrainingExample>) {
    let mut examples = model::build_examples(&dataset.sessions, &dataset.features, context_size)
        .examples;
    let n_val = ((examples.len() as f64) * val_fraction).round() as usize;
    let val = examples.split_off(examples.len().saturating_sub(n_val.max(1)));
    (examples, val)
}

#[pyfunction]
#[pyo3(signature = (
    dataset,
    context_size = 5,
    hidden = vec![64, 32],
    lr = 1e-3,
    epochs = 20,
    batch_size = 128,
    patience = 5,
    seed = 1,
    val_fraction = 0.2,
))]
#[allow(clippy::too_many_arguments)]
fn train_cwm(
    dataset: &Dataset,
    context_size: usize,
    hidden: Vec<usize>,
    lr: f64,
    epochs: usize,
    batch_size: usize,
    patience: usize,
    seed: u64,
    val_fraction: f64,
) -> PyResult<Cwm> {
    let (train, val) = split_examples(dataset, context_size, val_fraction);
    let cfg = UserModelConfig { hidden, lr, epochs, batch_size, patience, clip: 5.0, seed };
    let (trained, _) = model::train_cwm(&train, &val, &cfg).map_err(err)?;
    Ok(Cwm { inner: Arc::new(trained) })
}

#[pyfunction]
#[pyo3(signature = (
    dataset,
    context_size = 5,
    hidden = vec![32, 16],
    lr = 1e-3,
    epochs = 15,
    batch_size = 16,
    patience = 5,
    seed = 2,
    val_fraction = 0.2,
))]
#[allow(clippy::too_many_arguments)]
fn train_swm(
    dataset: &Dataset,
    context_size: usize,
    hidden: Vec<usize>,
    lr: f64,
    epochs: usize,
    batch_size: usize,
    patience: usize,
    seed: u64,
    val_fraction: f64,
) -> PyResult<Swm> {
    let (train, val) = split_examples(dataset, context_size, val_fraction);
    let cfg = UserModelConfig { hidden, lr, epochs, batch_size, patience, clip: 5.0, seed };
    let (trained, _) = model::train_swm(&train, &val, &cfg).map_err(err)?;
    Ok(Swm { inner: Arc::new(trained) })
}

/// Opaque episode state.
#[pyclass(name = "EnvState")]
#[derive(Clone)]
struct PyEnvState {
    inner: EnvState,
}

#[pymethods]
impl PyEnvState {
    #[getter]
    fn step(&self) -> usize {
        self.inner.step
    }

    #[getter]
    fn pool_size(&self) -> usize {
        self.inner.pool_len()
    }

    #[getter]
    fn context(&self) -> Vec<f64> {
        self.inner.context.values.clone()
    }
}

/// Simulated episode environment around a plugged-in user model.
#[pyclass(name = "Env")]
struct PyEnv {
    inner: Env,
}

#[pymethods]
impl PyEnv {
    /// Builds an environment. Exactly one of `cwm`/`swm` must be given
    /// (or neither, with `constant_reward` set, for stub experiments).
    #[new]
    #[pyo3(signature = (
        cwm = None,
        swm = None,
        constant_reward = None,
        context_size = 5,
        pool_size = 15,
        horizon = 15,
        reward_head = "complete",
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        cwm: Option<Cwm>,
        swm: Option<Swm>,
        constant_reward: Option<f64>,
        context_size: usize,
        pool_size: usize,
        horizon: usize,
        reward_head: &str,
    ) -> PyResult<Self> {
        let responder = match (cwm, swm, constant_reward) {
            (Some(c), None, None) => Responder::Cwm(c.inner),
            (None, Some(s), None) => Responder::Swm(s.inner),
            (None, None, Some(p)) => Responder::Constant(
                playlist_sim::domain::UserResponseProbs::new(p, 1.0 - p, p),
            ),
            _ => {
                return Err(PyValueError::new_err(
                    "pass exactly one of cwm, swm, or constant_reward",
                ))
            }
        };
        let config = EnvConfig {
            context_size,
            pool_size,
            horizon,
            reward_head: RewardHead::parse(reward_head).map_err(err)?,
            gamma: 0.95,
        };
        Ok(Self { inner: Env::new(config, responder).map_err(err)? })
    }

    /// Initial state from one dataset session (by index).
    fn reset_session(&self, dataset: &Dataset, index: usize) -> PyResult<PyEnvState> {
        let session = dataset
            .sessions
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("no session at index {index}")))?;
        Ok(PyEnvState {
            inner: self.inner.reset_from_session(session, &dataset.features).map_err(err)?,
        })
    }

    /// One transition; returns (reward, next_state, done).
    fn step(&self, state: &PyEnvState, action: usize) -> PyResult<(f64, PyEnvState, bool)> {
        let result = self.inner.step(&state.inner, action).map_err(err)?;
        Ok((result.reward, PyEnvState { inner: result.next_state }, result.done))
    }

    fn is_done(&self, state: &PyEnvState) -> bool {
        self.inner.is_done(&state.inner)
    }

    /// Sum of the horizon's largest head probabilities over the initial
    /// pool (non-sequential user model only).
    fn max_theoretical_return(&self, state: &PyEnvState) -> PyResult<f64> {
        self.inner.max_theoretical_return(&state.inner).map_err(err)
    }
}

/// A selectable policy for rollouts.
#[pyclass(name = "Policy")]
#[derive(Clone)]
struct PyPolicy {
    inner: Policy,
}

#[pymethods]
impl PyPolicy {
    #[staticmethod]
    fn random() -> Self {
        Self { inner: Policy::Random }
    }

    #[staticmethod]
    fn cosine() -> Self {
        Self { inner: Policy::Cosine }
    }

    #[staticmethod]
    fn gmpc(cwm: Cwm) -> Self {
        Self { inner: Policy::Gmpc(cwm.inner) }
    }

    #[staticmethod]
    fn agent(agent: Agent) -> Self {
        Self { inner: Policy::Agent(agent.inner) }
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    /// Action for one state (random policies draw from `seed`).
    fn act(&self, state: &PyEnvState, seed: u64) -> PyResult<usize> {
        let mut rng = playlist_sim::seeded_rng(seed);
        self.inner.act(&state.inner, &mut rng).map_err(err)
    }
}

/// Trained action-head DQN policy.
#[pyclass]
#[derive(Clone)]
struct Agent {
    inner: Arc<QNetwork>,
}

#[pymethods]
impl Agent {
    fn act(&self, state: &PyEnvState) -> PyResult<usize> {
        self.inner.act_greedy(&state.inner).map_err(err)
    }

    fn q_values(&self, state: &PyEnvState) -> PyResult<Vec<f64>> {
        self.inner.q_values(&state.inner).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: Arc::new(QNetwork::load(&path).map_err(err)?) })
    }
}

#[pyfunction]
#[pyo3(signature = (env, dataset, episodes = 200, batch_size = 32, warmup = 200, lr = 1e-3, hidden = vec![64, 32], seed = 3))]
#[allow(clippy::too_many_arguments)]
fn train_agent(
    env: &PyEnv,
    dataset: &Dataset,
    episodes: usize,
    batch_size: usize,
    warmup: usize,
    lr: f64,
    hidden: Vec<usize>,
    seed: u64,
) -> PyResult<Agent> {
    let inits: Vec<EnvState> = dataset
        .sessions
        .iter()
        .filter(|s| s.len() >= env.inner.config.min_session_len())
        .filter_map(|s| env.inner.reset_from_session(s, &dataset.features).ok())
        .collect();
    if inits.is_empty() {
        return Err(PyValueError::new_err("no session long enough for an episode"));
    }
    let cfg = AgentConfig { episodes, batch_size, warmup, lr, hidden, seed, ..AgentConfig::default() };
    let (qnet, _) = agent::train_agent(&env.inner, &inits, &cfg).map_err(err)?;
    Ok(Agent { inner: Arc::new(qnet) })
}

/// Paired rollouts of several policies over the dataset's sessions.
/// Returns one dict per episode: policy, session_id, total.
#[pyfunction]
#[pyo3(signature = (env, dataset, policies, max_episodes = 200, seed = 7))]
fn rollout_suite(
    env: &PyEnv,
    dataset: &Dataset,
    policies: Vec<PyPolicy>,
    max_episodes: usize,
    seed: u64,
) -> PyResult<Vec<HashMap<String, PyObject>>> {
    let mut inits: Vec<(String, EnvState)> = dataset
        .sessions
        .iter()
        .filter(|s| s.len() >= env.inner.config.min_session_len())
        .filter_map(|s| {
            env.inner
                .reset_from_session(s, &dataset.features)
                .ok()
                .map(|state| (s.session_id.clone(), state))
        })
        .collect();
    inits.truncate(max_episodes);
    let policy_list: Vec<Policy> = policies.iter().map(|p| p.inner.clone()).collect();
    let results = eval::rollout_suite(&policy_list, &env.inner, &inits, seed).map_err(err)?;
    Python::attach(|py| {
        results
            .into_iter()
            .map(|r| {
                let mut row: HashMap<String, PyObject> = HashMap::new();
                row.insert("policy".into(), r.policy.into_py_any(py)?);
                row.insert("session_id".into(), r.session_id.into_py_any(py)?);
                row.insert("total".into(), r.total.into_py_any(py)?);
                Ok(row)
            })
            .collect()
    })
}

/// EM fit of a 1-D Gaussian mixture; returns means, variances, weights,
/// and the final log-likelihood.
#[pyfunction]
#[pyo3(signature = (values, k = 2, seed = 0))]
fn fit_gmm(values: Vec<f64>, k: usize, seed: u64) -> PyResult<HashMap<String, PyObject>> {
    let mut rng = playlist_sim::seeded_rng(seed);
    let fit = eval::fit_gmm_1d(&values, k, &mut rng).map_err(err)?;
    Python::attach(|py| {
        let mut out: HashMap<String, PyObject> = HashMap::new();
        out.insert("means".into(), fit.means.into_py_any(py)?);
        out.insert("variances".into(), fit.variances.into_py_any(py)?);
        out.insert("weights".into(), fit.weights.into_py_any(py)?);
        out.insert("log_likelihood".into(), fit.log_likelihood.into_py_any(py)?);
        Ok(out)
    })
}

/// Percentile bootstrap CI for the mean.
#[pyfunction]
#[pyo3(signature = (values, b = 2000, level = 0.95, seed = 0))]
fn bootstrap_mean_ci(values: Vec<f64>, b: usize, level: f64, seed: u64) -> PyResult<(f64, f64)> {
    let mut rng = playlist_sim::seeded_rng(seed);
    eval::bootstrap_ci_mean(&values, b, level, &mut rng).map_err(err)
}

/// Normalized modal scores for a {policy: returns} mapping. Policies are
/// processed in sorted-name order so results are reproducible.
#[pyfunction]
#[pyo3(signature = (returns, seed = 0))]
fn modal_scores(returns: HashMap<String, Vec<f64>>, seed: u64) -> PyResult<HashMap<String, f64>> {
    let mut names: Vec<&String> = returns.keys().collect();
    names.sort();
    let mut results = Vec::new();
    for name in names {
        for &total in &returns[name] {
            results.push(eval::EpisodeResult {
                policy: name.clone(),
                session_id: String::new(),
                rewards: vec![total],
                total,
            });
        }
    }
    let mut rng = playlist_sim::seeded_rng(seed);
    let scores = eval::modal_score(&results, &mut rng).map_err(err)?;
    Ok(scores.into_iter().collect())
}

#[pymodule]
fn playlist_sim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Cwm>()?;
    m.add_class::<Swm>()?;
    m.add_class::<PyEnv>()?;
    m.add_class::<PyEnvState>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<Agent>()?;
    m.add_function(wrap_pyfunction!(train_cwm, m)?)?;
    m.add_function(wrap_pyfunction!(train_swm, m)?)?;
    m.add_function(wrap_pyfunction!(train_agent, m)?)?;
    m.add_function(wrap_pyfunction!(rollout_suite, m)?)?;
    m.add_function(wrap_pyfunction!(fit_gmm, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_mean_ci, m)?)?;
    m.add_function(wrap_pyfunction!(modal_scores, m)?)?;
    Ok(())
}
