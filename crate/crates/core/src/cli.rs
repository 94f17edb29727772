//! Command-line pipeline: ingest, synth, train-user-model, train-agent,
//! evaluate. Every command is deterministic given (config, seeds); the
//! resolved config is copied into the output directory for provenance.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use crate::agent::{train_agent, write_agent_log, Policy, QNetwork};
use crate::config::ExperimentConfig;
use crate::data::{
    generate_synthetic, load_features, load_sessions_min_len, resolve, write_features,
    write_sessions, DatasetManifest, FeatureTable,
};
use crate::domain::SessionRecord;
use crate::env::{Env, EnvState, Responder};
use crate::error::{Result, SimError};
use crate::eval::{evaluate_policies, rollout_suite, write_histograms_csv, write_summary_csv};
use crate::model::{build_examples, train_cwm, train_swm, write_training_log, Cwm, Swm};

/// Environment variable prefixed onto relative output directories.
pub const OUTPUT_ROOT_VAR: &str = "PLAYLIST_SIM_OUT_ROOT";

#[derive(Parser)]
#[command(
    name = "playlist-sim",
    version,
    about = "Simulation-based reinforcement learning for playlist generation"
)]
struct Cli {
    /// Experiment config file (TOML); defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's output directory
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Override the config's master seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for evaluation rollouts and bootstrap resampling
    /// (default: all cores)
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a session log and feature table, then write a manifest
    Ingest {
        /// Session log (comma-delimited, public dataset column names)
        #[arg(long)]
        sessions: PathBuf,
        /// Track feature table (track_id plus feature columns)
        #[arg(long)]
        features: PathBuf,
    },
    /// Generate the configured synthetic dataset and write it with its
    /// manifest
    Synth,
    /// Train a user model on the configured dataset
    TrainUserModel {
        /// Which model to train: cwm | swm
        #[arg(long)]
        model: String,
    },
    /// Train the DQN agent inside the simulated environment (needs a CWM
    /// checkpoint)
    TrainAgent,
    /// Roll out policies against the sequential evaluator and write reports
    Evaluate {
        /// Comma-separated policy names: random, cosine, gmpc, agent
        #[arg(long, default_value = "random,cosine,gmpc,agent")]
        policies: String,
    },
}

/// Entry point returning the process exit code.
pub fn run() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

/// Distinct exit classes: 2 usage, 3 schema, 4 dependency, 5 numeric abort,
/// 1 everything else.
fn exit_code(err: &SimError) -> i32 {
    match err {
        SimError::Usage(_) | SimError::Config(_) => 2,
        SimError::MissingColumn(_)
        | SimError::Data(_)
        | SimError::DuplicateTrack(_)
        | SimError::Csv(_) => 3,
        SimError::Dependency(_) => 4,
        SimError::NonFinite(_) | SimError::Degenerate(_) => 5,
        _ => 1,
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.display().to_string();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }

    let out_dir = output_dir(&cfg);
    for sub in ["checkpoints", "logs", "reports", "data"] {
        std::fs::create_dir_all(out_dir.join(sub))?;
    }
    cfg.save(&out_dir.join("config_used.toml"))?;

    match &cli.command {
        Command::Ingest { sessions, features } => cmd_ingest(&cfg, &out_dir, sessions, features),
        Command::Synth => cmd_synth(&cfg, &out_dir),
        Command::TrainUserModel { model } => cmd_train_user_model(&cfg, &out_dir, model),
        Command::TrainAgent => cmd_train_agent(&cfg, &out_dir),
        Command::Evaluate { policies } => cmd_evaluate(&cfg, &out_dir, policies),
    }
}

fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    let dir = PathBuf::from(&cfg.output_dir);
    match std::env::var(OUTPUT_ROOT_VAR) {
        Ok(root) if !dir.is_absolute() => PathBuf::from(root).join(dir),
        _ => dir,
    }
}

fn cmd_ingest(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    sessions: &Path,
    features: &Path,
) -> Result<()> {
    let min_len = cfg.env.context_size + 1;
    let (manifest, session_list, table, stats) = DatasetManifest::build(
        sessions,
        features,
        min_len,
        cfg.split.seed,
        cfg.split.fractions.clone(),
    )?;
    let manifest_path = out_dir.join("data").join("manifest.json");
    manifest.save(&manifest_path)?;
    println!("sessions: {}", session_list.len());
    println!("interactions: {}", manifest.interactions);
    println!("tracks: {} (feature dim {})", table.len(), table.dim);
    println!("rejected rows: {}", stats.rejected_rows);
    println!("rejected sessions: {}", stats.rejected_sessions);
    if !stats.ignored_columns.is_empty() {
        println!("ignored columns: {}", stats.ignored_columns.join(", "));
    }
    println!("manifest: {}", manifest_path.display());
    Ok(())
}

fn cmd_synth(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let spec = cfg
        .data
        .synthetic
        .as_ref()
        .ok_or_else(|| SimError::Config("no [data.synthetic] section configured".into()))?;
    let data = generate_synthetic(spec)?;
    let data_dir = out_dir.join("data");
    let session_path = data_dir.join("sessions.csv");
    let feature_path = data_dir.join("features.csv");
    write_sessions(&session_path, &data.sessions)?;
    write_features(&feature_path, &data.features)?;
    let (manifest, ..) = DatasetManifest::build(
        &session_path,
        &feature_path,
        cfg.env.context_size + 1,
        cfg.split.seed,
        cfg.split.fractions.clone(),
    )?;
    manifest.save(&data_dir.join("manifest.json"))?;
    println!("sessions: {}", data.sessions.len());
    println!("tracks: {} (feature dim {})", data.features.len(), data.features.dim);
    println!("dataset: {}", data_dir.display());
    Ok(())
}

/// Loads the configured dataset: manifest first, inline synthetic second.
fn load_dataset(cfg: &ExperimentConfig) -> Result<(Vec<SessionRecord>, FeatureTable)> {
    if let Some(manifest_path) = &cfg.data.manifest {
        let manifest_path = Path::new(manifest_path);
        let manifest = DatasetManifest::load(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        manifest.verify(base)?;
        let (sessions, _) = load_sessions_min_len(
            &resolve(base, &manifest.session_path),
            cfg.env.context_size + 1,
        )?;
        let (features, _) = load_features(&resolve(base, &manifest.feature_path))?;
        return Ok((sessions, features));
    }
    if let Some(spec) = &cfg.data.synthetic {
        let data = generate_synthetic(spec)?;
        return Ok((data.sessions, data.features));
    }
    Err(SimError::Config(
        "no dataset configured: set [data].manifest or [data.synthetic]".into(),
    ))
}

fn split3(
    cfg: &ExperimentConfig,
    sessions: Vec<SessionRecord>,
) -> Result<(Vec<SessionRecord>, Vec<SessionRecord>, Vec<SessionRecord>)> {
    let mut splits = crate::data::split_sessions(&sessions, &cfg.split.fractions, cfg.split.seed)?;
    if splits.len() != 3 {
        return Err(SimError::Config(format!(
            "expected 3 split fractions, got {}",
            splits.len()
        )));
    }
    let test = splits.pop().unwrap();
    let val = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok((train, val, test))
}

fn cmd_train_user_model(cfg: &ExperimentConfig, out_dir: &Path, model: &str) -> Result<()> {
    if model != "cwm" && model != "swm" {
        return Err(SimError::Usage(format!("unknown model `{model}`, expected cwm or swm")));
    }
    let (sessions, features) = load_dataset(cfg)?;
    let (train, val, _) = split3(cfg, sessions)?;
    let train_report = build_examples(&train, &features, cfg.env.context_size);
    let val_report = build_examples(&val, &features, cfg.env.context_size);
    let skipped = train_report.skipped_unknown_track + val_report.skipped_unknown_track;
    if skipped > 0 {
        println!("skipped sessions with unknown tracks: {skipped}");
    }

    let ckpt = out_dir.join("checkpoints").join(format!("{model}.ckpt"));
    let log_path = out_dir.join("logs").join(format!("{model}_train.csv"));
    let log = match model {
        "cwm" => {
            let (trained, log) = train_cwm(&train_report.examples, &val_report.examples, &cfg.cwm)?;
            trained.save(&ckpt)?;
            log
        }
        _ => {
            let (trained, log) = train_swm(&train_report.examples, &val_report.examples, &cfg.swm)?;
            trained.save(&ckpt)?;
            log
        }
    };
    write_training_log(&log_path, &log)?;
    if let Some(last) = log.last() {
        println!("epochs: {}", log.len());
        println!("final val loss: {}", last.val_loss);
    }
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

/// Initial episode states for sessions long enough to fill context + pool.
fn episode_inits(
    env: &Env,
    sessions: &[SessionRecord],
    features: &FeatureTable,
) -> Vec<(String, EnvState)> {
    sessions
        .iter()
        .filter(|s| s.len() >= env.config.min_session_len())
        .filter_map(|s| {
            env.reset_from_session(s, features)
                .ok()
                .map(|state| (s.session_id.clone(), state))
        })
        .collect()
}

fn cmd_train_agent(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let cwm_path = out_dir.join("checkpoints").join("cwm.ckpt");
    if !cwm_path.exists() {
        return Err(SimError::Dependency(format!(
            "agent training needs the non-sequential user model; run `train-user-model --model cwm` first (missing {})",
            cwm_path.display()
        )));
    }
    let cwm = Cwm::load(&cwm_path)?;
    let (sessions, features) = load_dataset(cfg)?;
    let (train, ..) = split3(cfg, sessions)?;
    let env = Env::new(cfg.env.clone(), Responder::Cwm(Arc::new(cwm)))?;
    let inits: Vec<EnvState> =
        episode_inits(&env, &train, &features).into_iter().map(|(_, s)| s).collect();
    if inits.is_empty() {
        return Err(SimError::Data(format!(
            "no training session reaches the {} tracks an episode needs",
            env.config.min_session_len()
        )));
    }

    let mut agent_cfg = cfg.agent.clone();
    agent_cfg.seed ^= cfg.seed;
    let (qnet, log) = train_agent(&env, &inits, &agent_cfg)?;
    let ckpt = out_dir.join("checkpoints").join("agent.ckpt");
    qnet.save(&ckpt)?;
    write_agent_log(&out_dir.join("logs").join("agent_train.csv"), &log)?;
    if !log.is_empty() {
        let tail = &log[log.len().saturating_sub(log.len() / 10 + 1)..];
        let mean_tail = tail.iter().map(|r| r.ret).sum::<f64>() / tail.len() as f64;
        println!("episodes: {}", log.len());
        println!("mean return over final tenth: {mean_tail}");
    }
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

fn parse_policies(
    names: &str,
    out_dir: &Path,
) -> Result<Vec<Policy>> {
    let mut policies = Vec::new();
    for name in names.split(',').map(str::trim).filter(|n| !n.is_empty()) {
        let policy = match name {
            "random" => Policy::Random,
            "cosine" => Policy::Cosine,
            "gmpc" => {
                let path = out_dir.join("checkpoints").join("cwm.ckpt");
                if !path.exists() {
                    return Err(SimError::Dependency(format!(
                        "gmpc baseline needs a CWM checkpoint (missing {})",
                        path.display()
                    )));
                }
                Policy::Gmpc(Arc::new(Cwm::load(&path)?))
            }
            "agent" => {
                let path = out_dir.join("checkpoints").join("agent.ckpt");
                if !path.exists() {
                    return Err(SimError::Dependency(format!(
                        "agent policy needs a checkpoint (missing {})",
                        path.display()
                    )));
                }
                Policy::Agent(Arc::new(QNetwork::load(&path)?))
            }
            other => {
                return Err(SimError::Usage(format!(
                    "unknown policy `{other}`, expected random, cosine, gmpc, agent"
                )))
            }
        };
        policies.push(policy);
    }
    if policies.is_empty() {
        return Err(SimError::Usage("no policies requested".into()));
    }
    Ok(policies)
}

fn cmd_evaluate(cfg: &ExperimentConfig, out_dir: &Path, policy_names: &str) -> Result<()> {
    let policies = parse_policies(policy_names, out_dir)?;
    let swm_path = out_dir.join("checkpoints").join("swm.ckpt");
    if !swm_path.exists() {
        return Err(SimError::Dependency(format!(
            "evaluation needs the sequential evaluator; run `train-user-model --model swm` first (missing {})",
            swm_path.display()
        )));
    }
    let swm = Swm::load(&swm_path)?;
    let (sessions, features) = load_dataset(cfg)?;
    let (.., test) = split3(cfg, sessions)?;
    let env = Env::new(cfg.env.clone(), Responder::Swm(Arc::new(swm)))?;
    let mut inits = episode_inits(&env, &test, &features);
    inits.truncate(cfg.eval.episodes);
    if inits.is_empty() {
        return Err(SimError::Data(format!(
            "no held-out session reaches the {} tracks an episode needs",
            env.config.min_session_len()
        )));
    }

    let results = rollout_suite(&policies, &env, &inits, cfg.seed ^ cfg.eval.seed)?;
    let summaries = evaluate_policies(
        &results,
        cfg.eval.bootstrap_samples,
        cfg.eval.level,
        cfg.seed ^ cfg.eval.seed,
    )?;

    let reports = out_dir.join("reports");
    write_summary_csv(&reports.join("eval_summary.csv"), &summaries)?;
    write_histograms_csv(
        &reports.join("histograms.csv"),
        &results,
        0.0,
        cfg.env.horizon as f64,
        cfg.eval.bins,
    )?;

    println!("episodes per policy: {}", inits.len());
    println!("policy\tmean\tstd\tci95\tscore\tscore_ci");
    for s in &summaries {
        println!(
            "{}\t{:.4}\t{:.4}\t({:.4}, {:.4})\t{:.4}\t({:.4}, {:.4})",
            s.policy, s.mean, s.std, s.lo95, s.hi95, s.score, s.score_lo, s.score_hi
        );
    }
    println!("reports: {}", reports.display());
    Ok(())
}
