//! Shared domain types: tracks, sessions, user responses, and the
//! deterministic RNG used everywhere randomness is needed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// The crate-wide RNG. ChaCha streams are reproducible across platforms,
/// so a seed fully determines every run.
pub type SimRng = ChaCha8Rng;

/// Builds a deterministic random stream from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives a child seed from a base seed and a pair of indices. Used to give
/// parallel workers (episodes, bootstrap replicates) independent but
/// reproducible streams.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut x = base
        .wrapping_add(a.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(b.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Per-track feature vector. All tracks in one dataset share the same
/// dimensionality, and every value is finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFeatures {
    pub track_id: String,
    pub features: Vec<f64>,
}

impl TrackFeatures {
    pub fn new(track_id: impl Into<String>, features: Vec<f64>) -> Result<Self> {
        if features.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite("track features".into()));
        }
        Ok(Self { track_id: track_id.into(), features })
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

/// One logged user-track interaction. Raw skip markers are stored verbatim;
/// training labels are derived through [`InteractionRecord::labels`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub track_id: String,
    /// 1-based position within the session.
    pub position: u32,
    pub skip_1: bool,
    pub skip_2: bool,
    pub skip_3: bool,
    pub completed: bool,
}

/// Binary training targets derived from the raw markers:
/// complete = the completed flag, skip = any marker fired and the track was
/// not completed, listen_tau = the track was not skipped very early.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseLabels {
    pub complete: bool,
    pub skip: bool,
    pub listen_tau: bool,
}

impl InteractionRecord {
    pub fn labels(&self) -> ResponseLabels {
        ResponseLabels {
            complete: self.completed,
            skip: (self.skip_1 || self.skip_2 || self.skip_3) && !self.completed,
            listen_tau: !self.skip_1,
        }
    }
}

impl ResponseLabels {
    pub fn to_array(self) -> [f64; 3] {
        [
            self.complete as u8 as f64,
            self.skip as u8 as f64,
            self.listen_tau as u8 as f64,
        ]
    }
}

/// An ordered log of interactions for one listening session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub items: Vec<InteractionRecord>,
}

impl SessionRecord {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Checks the ingestion invariants: contiguous 1-based positions and a
    /// minimum length.
    pub fn validate(&self, min_len: usize) -> Result<()> {
        if self.items.len() < min_len {
            return Err(SimError::Data(format!(
                "session `{}` has {} items, need at least {}",
                self.session_id,
                self.items.len(),
                min_len
            )));
        }
        for (idx, item) in self.items.iter().enumerate() {
            if item.position as usize != idx + 1 {
                return Err(SimError::Data(format!(
                    "session `{}` has position {} at index {}",
                    self.session_id,
                    item.position,
                    idx
                )));
            }
        }
        Ok(())
    }
}

/// Which predicted response drives the environment reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardHead {
    Complete,
    Skip,
    ListenTau,
}

impl RewardHead {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "complete" => Ok(Self::Complete),
            "skip" => Ok(Self::Skip),
            "listen_tau" => Ok(Self::ListenTau),
            other => Err(SimError::Config(format!("unknown reward head `{other}`"))),
        }
    }
}

/// Model-predicted probabilities for the three response targets. Heads are
/// independent sigmoids, so the components need not sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserResponseProbs {
    pub p_complete: f64,
    pub p_skip: f64,
    pub p_listen_tau: f64,
}

impl UserResponseProbs {
    pub fn new(p_complete: f64, p_skip: f64, p_listen_tau: f64) -> Self {
        Self { p_complete, p_skip, p_listen_tau }
    }

    pub fn from_array(p: [f64; 3]) -> Self {
        Self { p_complete: p[0], p_skip: p[1], p_listen_tau: p[2] }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.p_complete, self.p_skip, self.p_listen_tau]
    }

    pub fn head(&self, head: RewardHead) -> f64 {
        match head {
            RewardHead::Complete => self.p_complete,
            RewardHead::Skip => self.p_skip,
            RewardHead::ListenTau => self.p_listen_tau,
        }
    }
}

/// Agent-visible context: mean features of the context tracks, with any
/// appended user features (none in public-data mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextVector {
    pub values: Vec<f64>,
}

impl ContextVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite("context vector".into()));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Element-wise arithmetic mean of a non-empty list of feature vectors.
pub fn mean_feature_vector(tracks: &[TrackFeatures]) -> Result<Vec<f64>> {
    let first = tracks.first().ok_or(SimError::EmptyInput("mean_feature_vector"))?;
    let dim = first.dim();
    let mut mean = vec![0.0; dim];
    for track in tracks {
        if track.dim() != dim {
            return Err(SimError::DimMismatch { expected: dim, got: track.dim() });
        }
        for (m, v) in mean.iter_mut().zip(&track.features) {
            *m += v;
        }
    }
    let n = tracks.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn track(id: &str, feats: &[f64]) -> TrackFeatures {
        TrackFeatures::new(id, feats.to_vec()).unwrap()
    }

    #[test]
    fn seeded_rng_is_deterministic() {
        let mut a = seeded_rng(0);
        let mut b = seeded_rng(0);
        let draws_a: Vec<f64> = (0..100).map(|_| a.gen()).collect();
        let draws_b: Vec<f64> = (0..100).map(|_| b.gen()).collect();
        assert_eq!(draws_a, draws_b);
    }

    #[test]
    fn different_seeds_differ() {
        let mut a = seeded_rng(0);
        let mut b = seeded_rng(1);
        let draws_a: Vec<f64> = (0..100).map(|_| a.gen()).collect();
        let draws_b: Vec<f64> = (0..100).map(|_| b.gen()).collect();
        assert_ne!(draws_a, draws_b);
    }

    #[test]
    fn uniform_draw_in_range() {
        let mut rng = seeded_rng(42);
        for _ in 0..1000 {
            let v: f64 = rng.gen();
            assert!((0.0..1.0).contains(&v));
        }
    }

    #[test]
    fn mean_feature_vector_arithmetic() {
        let tracks = vec![track("a", &[1.0, 2.0]), track("b", &[3.0, 4.0])];
        assert_eq!(mean_feature_vector(&tracks).unwrap(), vec![2.0, 3.0]);
    }

    #[test]
    fn mean_feature_vector_single_is_identity() {
        let tracks = vec![track("a", &[0.5, -1.5, 2.0])];
        assert_eq!(mean_feature_vector(&tracks).unwrap(), vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn mean_feature_vector_zero_case() {
        let tracks = vec![track("a", &[0.0, 0.0]), track("b", &[0.0, 0.0])];
        assert_eq!(mean_feature_vector(&tracks).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn mean_feature_vector_empty_errors() {
        assert!(matches!(mean_feature_vector(&[]), Err(SimError::EmptyInput(_))));
    }

    #[test]
    fn non_finite_features_rejected() {
        assert!(TrackFeatures::new("a", vec![f64::NAN]).is_err());
        assert!(TrackFeatures::new("a", vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn derived_labels() {
        let rec = InteractionRecord {
            track_id: "t".into(),
            position: 1,
            skip_1: false,
            skip_2: true,
            skip_3: true,
            completed: false,
        };
        let labels = rec.labels();
        assert!(!labels.complete);
        assert!(labels.skip);
        assert!(labels.listen_tau);

        let done = InteractionRecord { completed: true, skip_2: false, skip_3: false, ..rec };
        let labels = done.labels();
        assert!(labels.complete);
        assert!(!labels.skip);
    }

    #[test]
    fn session_position_gap_rejected() {
        let session = SessionRecord {
            session_id: "s".into(),
            items: vec![
                InteractionRecord {
                    track_id: "a".into(),
                    position: 1,
                    skip_1: false,
                    skip_2: false,
                    skip_3: false,
                    completed: true,
                },
                InteractionRecord {
                    track_id: "b".into(),
                    position: 3,
                    skip_1: false,
                    skip_2: false,
                    skip_3: false,
                    completed: true,
                },
            ],
        };
        assert!(session.validate(1).is_err());
    }

    proptest! {
        #[test]
        fn mean_is_permutation_invariant(
            vals in proptest::collection::vec(
                proptest::collection::vec(-100.0f64..100.0, 3),
                1..8,
            ),
            seed in 0u64..1000,
        ) {
            let tracks: Vec<TrackFeatures> = vals
                .iter()
                .enumerate()
                .map(|(i, v)| track(&format!("t{i}"), v))
                .collect();
            let base = mean_feature_vector(&tracks).unwrap();

            let mut shuffled = tracks.clone();
            let mut rng = seeded_rng(seed);
            for i in (1..shuffled.len()).rev() {
                let j = rng.gen_range(0..=i);
                shuffled.swap(i, j);
            }
            let permuted = mean_feature_vector(&shuffled).unwrap();
            for (a, b) in base.iter().zip(&permuted) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
