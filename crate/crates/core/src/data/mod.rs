//! Dataset ingestion and management: session logs and track features as
//! comma-delimited text (column names match the public streaming dataset so
//! real exports drop in unmodified), deterministic splits, manifests with
//! checksums, and a synthetic generator with known ground truth.

pub mod synthetic;

pub use synthetic::{generate_synthetic, PreferenceMode, SyntheticData, SyntheticSpec, SyntheticTruth};

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{seeded_rng, InteractionRecord, SessionRecord, TrackFeatures};
use crate::error::{Result, SimError};

/// Columns the session log must provide, by exact name.
pub const SESSION_COLUMNS: [&str; 8] = [
    "session_id",
    "session_position",
    "session_length",
    "track_id",
    "skip_1",
    "skip_2",
    "skip_3",
    "not_skipped",
];

/// Sessions shorter than this are dropped at ingestion (context plus at
/// least one labeled item). Environment setup applies its own, stricter
/// length filter.
pub const DEFAULT_MIN_SESSION_LEN: usize = 6;

/// Track features keyed by id, insertion-ordered.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    pub dim: usize,
    pub columns: Vec<String>,
    tracks: Vec<TrackFeatures>,
    index: HashMap<String, usize>,
}

impl FeatureTable {
    pub fn new(dim: usize, columns: Vec<String>) -> Self {
        Self { dim, columns, tracks: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, track: TrackFeatures) -> Result<()> {
        if track.dim() != self.dim {
            return Err(SimError::DimMismatch { expected: self.dim, got: track.dim() });
        }
        if self.index.contains_key(&track.track_id) {
            return Err(SimError::DuplicateTrack(track.track_id.clone()));
        }
        self.index.insert(track.track_id.clone(), self.tracks.len());
        self.tracks.push(track);
        Ok(())
    }

    pub fn get(&self, track_id: &str) -> Option<&TrackFeatures> {
        self.index.get(track_id).map(|&i| &self.tracks[i])
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TrackFeatures> {
        self.tracks.iter()
    }
}

/// Ingestion bookkeeping reported by the loaders.
#[derive(Debug, Clone, Default, Serialize)]
pub struct IngestStats {
    pub sessions: usize,
    pub interactions: usize,
    pub rejected_rows: usize,
    pub rejected_sessions: usize,
    pub ignored_columns: Vec<String>,
}

fn parse_bool(raw: &str) -> Option<bool> {
    match raw.trim() {
        "1" => Some(true),
        "0" => Some(false),
        other => match other.to_ascii_lowercase().as_str() {
            "true" | "t" => Some(true),
            "false" | "f" => Some(false),
            _ => None,
        },
    }
}

/// Loads and validates a session log with the default minimum length.
pub fn load_sessions(path: &Path) -> Result<(Vec<SessionRecord>, IngestStats)> {
    load_sessions_min_len(path, DEFAULT_MIN_SESSION_LEN)
}

/// Loads a session log, keeping sessions with at least `min_len` items whose
/// positions are contiguous from 1. Malformed rows and invalid sessions are
/// counted, not fatal; a missing column is a schema error.
pub fn load_sessions_min_len(
    path: &Path,
    min_len: usize,
) -> Result<(Vec<SessionRecord>, IngestStats)> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(BufReader::new(File::open(path)?));
    let headers = reader.headers()?.clone();
    let mut col = HashMap::new();
    for (idx, name) in headers.iter().enumerate() {
        col.insert(name.to_string(), idx);
    }
    for required in SESSION_COLUMNS {
        if !col.contains_key(required) {
            return Err(SimError::MissingColumn(required.to_string()));
        }
    }
    let mut stats = IngestStats::default();
    stats.ignored_columns = headers
        .iter()
        .filter(|h| !SESSION_COLUMNS.contains(h))
        .map(str::to_string)
        .collect();
    if !stats.ignored_columns.is_empty() {
        log::info!("ignoring unused session columns: {}", stats.ignored_columns.join(", "));
    }

    let idx = |name: &str| col[name];
    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, Vec<InteractionRecord>> = HashMap::new();

    for record in reader.records() {
        let record = record?;
        if record.len() != headers.len() {
            stats.rejected_rows += 1;
            continue;
        }
        let get = |name: &str| record.get(idx(name)).unwrap_or("");
        let session_id = get("session_id").to_string();
        let position: Option<u32> = get("session_position").trim().parse().ok();
        let (position, skip_1, skip_2, skip_3, not_skipped) = match (
            position,
            parse_bool(get("skip_1")),
            parse_bool(get("skip_2")),
            parse_bool(get("skip_3")),
            parse_bool(get("not_skipped")),
        ) {
            (Some(p), Some(s1), Some(s2), Some(s3), Some(ns)) => (p, s1, s2, s3, ns),
            _ => {
                stats.rejected_rows += 1;
                continue;
            }
        };
        if session_id.is_empty() || get("track_id").is_empty() {
            stats.rejected_rows += 1;
            continue;
        }
        if !grouped.contains_key(&session_id) {
            order.push(session_id.clone());
        }
        grouped.entry(session_id).or_default().push(InteractionRecord {
            track_id: get("track_id").to_string(),
            position,
            skip_1,
            skip_2,
            skip_3,
            completed: not_skipped,
        });
    }

    let mut sessions = Vec::new();
    for session_id in order {
        let mut items = grouped.remove(&session_id).unwrap();
        items.sort_by_key(|item| item.position);
        let session = SessionRecord { session_id, items };
        match session.validate(min_len) {
            Ok(()) => {
                stats.interactions += session.len();
                sessions.push(session);
            }
            Err(_) => stats.rejected_sessions += 1,
        }
    }
    stats.sessions = sessions.len();
    Ok((sessions, stats))
}

/// Writes sessions in the same column layout the loader expects.
pub fn write_sessions(path: &Path, sessions: &[SessionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(SESSION_COLUMNS)?;
    for session in sessions {
        let len = session.len().to_string();
        for item in &session.items {
            w.write_record([
                session.session_id.as_str(),
                &item.position.to_string(),
                &len,
                &item.track_id,
                bool_str(item.skip_1),
                bool_str(item.skip_2),
                bool_str(item.skip_3),
                bool_str(item.completed),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn bool_str(v: bool) -> &'static str {
    if v {
        "true"
    } else {
        "false"
    }
}

/// Loads a feature table: `track_id` column followed by F named float
/// columns. Duplicate ids are fatal; rows with non-numeric or non-finite
/// cells are rejected and counted.
pub fn load_features(path: &Path) -> Result<(FeatureTable, usize)> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(BufReader::new(File::open(path)?));
    let headers = reader.headers()?.clone();
    let mut iter = headers.iter();
    match iter.next() {
        Some("track_id") => {}
        _ => return Err(SimError::MissingColumn("track_id".to_string())),
    }
    let columns: Vec<String> = iter.map(str::to_string).collect();
    if columns.is_empty() {
        return Err(SimError::Data("feature table has no feature columns".into()));
    }
    let dim = columns.len();
    let mut table = FeatureTable::new(dim, columns);
    let mut rejected = 0usize;

    for record in reader.records() {
        let record = record?;
        let track_id = record.get(0).unwrap_or("").to_string();
        if track_id.is_empty() || record.len() != dim + 1 {
            rejected += 1;
            continue;
        }
        let mut features = Vec::with_capacity(dim);
        let mut ok = true;
        for cell in record.iter().skip(1) {
            match cell.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => features.push(v),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            rejected += 1;
            continue;
        }
        table.insert(TrackFeatures { track_id, features })?;
    }
    Ok((table, rejected))
}

/// Writes a feature table in the layout the loader expects, round-tripping
/// values through shortest-representation decimal text.
pub fn write_features(path: &Path, table: &FeatureTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec!["track_id".to_string()];
    header.extend(table.columns.iter().cloned());
    w.write_record(&header)?;
    for track in table.iter() {
        let mut row = vec![track.track_id.clone()];
        row.extend(track.features.iter().map(|v| format!("{v}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Partitions sessions by id into disjoint splits, deterministically per
/// seed. Fractions must be positive and sum to 1.
pub fn split_sessions(
    sessions: &[SessionRecord],
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<Vec<SessionRecord>>> {
    if fractions.is_empty() || fractions.iter().any(|f| *f <= 0.0) {
        return Err(SimError::Config("split fractions must be positive".into()));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(SimError::Config(format!("split fractions sum to {total}, expected 1")));
    }
    if sessions.len() < fractions.len() {
        return Err(SimError::Data(format!(
            "{} sessions cannot fill {} splits",
            sessions.len(),
            fractions.len()
        )));
    }

    let mut indices: Vec<usize> = (0..sessions.len()).collect();
    let mut rng = seeded_rng(seed);
    for i in (1..indices.len()).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }

    let n = sessions.len();
    let mut sizes: Vec<usize> = Vec::with_capacity(fractions.len());
    let mut cum = 0.0;
    let mut prev = 0usize;
    for f in fractions {
        cum += f;
        let boundary = (cum * n as f64).round().min(n as f64) as usize;
        sizes.push(boundary - prev);
        prev = boundary;
    }
    *sizes.last_mut().unwrap() += n - prev;
    // every split gets at least one session; borrow from the largest
    for i in 0..sizes.len() {
        while sizes[i] == 0 {
            let donor = sizes
                .iter()
                .enumerate()
                .max_by_key(|(_, s)| **s)
                .map(|(j, _)| j)
                .unwrap();
            sizes[donor] -= 1;
            sizes[i] += 1;
        }
    }

    let mut splits = Vec::with_capacity(sizes.len());
    let mut cursor = 0usize;
    for size in sizes {
        let chunk: Vec<SessionRecord> =
            indices[cursor..cursor + size].iter().map(|&i| sessions[i].clone()).collect();
        cursor += size;
        splits.push(chunk);
    }
    Ok(splits)
}

/// 64-bit FNV-1a over raw bytes; used for manifest checksums.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn file_checksum(path: &Path) -> Result<u64> {
    Ok(fnv1a64(&std::fs::read(path)?))
}

/// Dataset descriptor persisted as JSON next to the data files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub session_path: String,
    pub feature_path: String,
    pub feature_dim: usize,
    pub sessions: usize,
    pub tracks: usize,
    pub interactions: usize,
    pub rejected_rows: usize,
    pub rejected_sessions: usize,
    pub split_seed: u64,
    pub split_fractions: Vec<f64>,
    pub session_checksum: u64,
    pub feature_checksum: u64,
}

impl DatasetManifest {
    /// Loads both files, validates them, and records counts and checksums.
    /// Paths are stored as given.
    pub fn build(
        session_path: &Path,
        feature_path: &Path,
        min_session_len: usize,
        split_seed: u64,
        split_fractions: Vec<f64>,
    ) -> Result<(Self, Vec<SessionRecord>, FeatureTable, IngestStats)> {
        let (sessions, mut stats) = load_sessions_min_len(session_path, min_session_len)?;
        let (features, rejected_feature_rows) = load_features(feature_path)?;
        stats.rejected_rows += rejected_feature_rows;
        let manifest = Self {
            session_path: session_path.display().to_string(),
            feature_path: feature_path.display().to_string(),
            feature_dim: features.dim,
            sessions: sessions.len(),
            tracks: features.len(),
            interactions: stats.interactions,
            rejected_rows: stats.rejected_rows,
            rejected_sessions: stats.rejected_sessions,
            split_seed,
            split_fractions,
            session_checksum: file_checksum(session_path)?,
            feature_checksum: file_checksum(feature_path)?,
        };
        Ok((manifest, sessions, features, stats))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| SimError::Data(format!("manifest encode: {e}")))?;
        let mut f = File::create(path)?;
        f.write_all(json.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        serde_json::from_str(&raw).map_err(|e| SimError::Data(format!("manifest decode: {e}")))
    }

    /// Re-checks the recorded checksums against the files on disk, resolving
    /// relative paths against `base`.
    pub fn verify(&self, base: &Path) -> Result<()> {
        let sess = resolve(base, &self.session_path);
        let feat = resolve(base, &self.feature_path);
        if file_checksum(&sess)? != self.session_checksum {
            return Err(SimError::Data(format!("checksum mismatch for {}", sess.display())));
        }
        if file_checksum(&feat)? != self.feature_checksum {
            return Err(SimError::Data(format!("checksum mismatch for {}", feat.display())));
        }
        Ok(())
    }
}

/// Resolves `path` relative to `base` unless it is absolute.
pub fn resolve(base: &Path, path: &str) -> std::path::PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
