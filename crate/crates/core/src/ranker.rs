//! Candidate scoring and selection.
//!
//! A candidate keeps its hyperbole score only when its paraphrase score lies
//! strictly inside `(gamma, 1 - epsilon)`; otherwise its final score is 0.
//! The lower bound rejects candidates that drift from the source meaning and
//! the upper bound rejects near-copies of the source.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, HyperboleScorer, ParaphraseScorer};

#[derive(Debug, thiserror::Error)]
pub enum RankError {
    #[error("invalid ranker config: need 0 < gamma ({gamma}) < 1 - epsilon ({epsilon}) < 1")]
    InvalidConfig { gamma: f64, epsilon: f64 },
    #[error("no candidates to rank")]
    EmptyCandidateSet,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankerConfig {
    gamma: f64,
    epsilon: f64,
}

impl RankerConfig {
    pub const DEFAULT_GAMMA: f64 = 0.8;
    pub const DEFAULT_EPSILON: f64 = 0.001;

    pub fn new(gamma: f64, epsilon: f64) -> Result<Self, RankError> {
        let upper = 1.0 - epsilon;
        if gamma > 0.0 && gamma < upper && upper < 1.0 {
            Ok(Self { gamma, epsilon })
        } else {
            Err(RankError::InvalidConfig { gamma, epsilon })
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// True when `para` lies in the open window `(gamma, 1 - epsilon)`.
    pub fn admits(&self, para: f64) -> bool {
        para > self.gamma && para < 1.0 - self.epsilon
    }

    pub fn final_score(&self, hypo: f64, para: f64) -> f64 {
        if self.admits(para) {
            hypo
        } else {
            0.0
        }
    }
}

impl Default for RankerConfig {
    fn default() -> Self {
        Self {
            gamma: Self::DEFAULT_GAMMA,
            epsilon: Self::DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub text: String,
    pub hypo_score: f64,
    pub para_score: f64,
    pub final_score: f64,
}

impl RankedCandidate {
    pub fn new(text: impl Into<String>, hypo: f64, para: f64, config: &RankerConfig) -> Self {
        Self {
            text: text.into(),
            hypo_score: hypo,
            para_score: para,
            final_score: config.final_score(hypo, para),
        }
    }
}

/// Scorer pair with a per-run memo of every score fetched, so ablation
/// modes over the same candidates hit each backend once.
pub struct Scorers {
    hyperbole: Arc<dyn HyperboleScorer>,
    paraphrase: Arc<dyn ParaphraseScorer>,
    hypo_cache: Mutex<HashMap<String, f64>>,
    para_cache: Mutex<HashMap<(String, String), f64>>,
}

impl Scorers {
    pub fn new(hyperbole: Arc<dyn HyperboleScorer>, paraphrase: Arc<dyn ParaphraseScorer>) -> Self {
        Self {
            hyperbole,
            paraphrase,
            hypo_cache: Mutex::new(HashMap::new()),
            para_cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn hyperbole(&self, text: &str) -> Result<f64, BackendError> {
        if let Some(&s) = self.hypo_cache.lock().unwrap().get(text) {
            return Ok(s);
        }
        let score = self.hyperbole.hyperbole_score(text)?;
        self.hypo_cache.lock().unwrap().insert(text.to_string(), score);
        Ok(score)
    }

    pub fn paraphrase(&self, source: &str, candidate: &str) -> Result<f64, BackendError> {
        let key = (source.to_string(), candidate.to_string());
        if let Some(&s) = self.para_cache.lock().unwrap().get(&key) {
            return Ok(s);
        }
        let score = self.paraphrase.paraphrase_score(source, candidate)?;
        self.para_cache.lock().unwrap().insert(key, score);
        Ok(score)
    }

    pub fn cached_scores(&self) -> usize {
        self.hypo_cache.lock().unwrap().len() + self.para_cache.lock().unwrap().len()
    }
}

pub fn score_candidate(
    source: &str,
    candidate: &str,
    scorers: &Scorers,
    config: &RankerConfig,
) -> Result<RankedCandidate, RankError> {
    let hypo = scorers.hyperbole(candidate)?;
    let para = scorers.paraphrase(source, candidate)?;
    Ok(RankedCandidate::new(candidate, hypo, para, config))
}

pub fn score_all<S: AsRef<str>>(
    source: &str,
    candidates: &[S],
    scorers: &Scorers,
    config: &RankerConfig,
) -> Result<Vec<RankedCandidate>, RankError> {
    candidates
        .iter()
        .map(|c| score_candidate(source, c.as_ref(), scorers, config))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub index: usize,
    pub chosen: RankedCandidate,
    /// Every candidate fell outside the window; chosen by hyperbole score.
    pub fallback: bool,
    pub scored: Vec<RankedCandidate>,
}

/// First index holding the maximum of `key`.
fn argmax_by(scored: &[RankedCandidate], key: impl Fn(&RankedCandidate) -> f64) -> usize {
    let mut best = 0;
    for (i, c) in scored.iter().enumerate().skip(1) {
        if key(c) > key(&scored[best]) {
            best = i;
        }
    }
    best
}

/// Picks the highest final score, or the highest hyperbole score when no
/// candidate passes the window. Ties go to the earlier candidate.
pub fn select(scored: Vec<RankedCandidate>) -> Result<Selection, RankError> {
    if scored.is_empty() {
        return Err(RankError::EmptyCandidateSet);
    }
    let any_admitted = scored.iter().any(|c| c.final_score > 0.0);
    let index = if any_admitted {
        argmax_by(&scored, |c| c.final_score)
    } else {
        argmax_by(&scored, |c| c.hypo_score)
    };
    Ok(Selection {
        index,
        chosen: scored[index].clone(),
        fallback: !any_admitted,
        scored,
    })
}

pub fn rank_and_select<S: AsRef<str>>(
    source: &str,
    candidates: &[S],
    scorers: &Scorers,
    config: &RankerConfig,
) -> Result<Selection, RankError> {
    if candidates.is_empty() {
        return Err(RankError::EmptyCandidateSet);
    }
    select(score_all(source, candidates, scorers, config)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMode {
    /// Window filter, then hyperbole score.
    Full,
    /// Hyperbole score alone, window ignored.
    HypoOnly,
    /// Uniform choice.
    Random { seed: u64 },
}

pub fn rank_ablation<S: AsRef<str>>(
    source: &str,
    candidates: &[S],
    scorers: &Scorers,
    config: &RankerConfig,
    mode: RankMode,
) -> Result<Selection, RankError> {
    if candidates.is_empty() {
        return Err(RankError::EmptyCandidateSet);
    }
    let scored = score_all(source, candidates, scorers, config)?;
    let index = match mode {
        RankMode::Full => return select(scored),
        RankMode::HypoOnly => argmax_by(&scored, |c| c.hypo_score),
        RankMode::Random { seed } => ChaCha8Rng::seed_from_u64(seed).random_range(0..scored.len()),
    };
    Ok(Selection {
        index,
        chosen: scored[index].clone(),
        fallback: false,
        scored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Table(Vec<(&'static str, f64, f64)>);

    fn scorers(rows: Vec<(&'static str, f64, f64)>) -> Scorers {
        let table = Arc::new(Table(rows));
        Scorers::new(table.clone(), table)
    }

    impl HyperboleScorer for Table {
        fn hyperbole_score(&self, text: &str) -> Result<f64, BackendError> {
            self.0
                .iter()
                .find(|r| r.0 == text)
                .map(|r| r.1)
                .ok_or_else(|| BackendError::Missing(text.into()))
        }
    }

    impl ParaphraseScorer for Table {
        fn paraphrase_score(&self, _: &str, candidate: &str) -> Result<f64, BackendError> {
            self.0
                .iter()
                .find(|r| r.0 == candidate)
                .map(|r| r.2)
                .ok_or_else(|| BackendError::Missing(candidate.into()))
        }
    }

    #[test]
    fn config_validation() {
        assert!(RankerConfig::new(0.8, 0.001).is_ok());
        assert!(RankerConfig::new(0.0, 0.001).is_err());
        assert!(RankerConfig::new(0.8, 0.0).is_err());
        assert!(RankerConfig::new(0.8, 0.3).is_err());
        assert!(RankerConfig::new(f64::NAN, 0.1).is_err());
    }

    #[test]
    fn window_is_open_at_both_ends() {
        let c = RankerConfig::default();
        assert_eq!(c.final_score(0.99, 0.8), 0.0);
        assert_eq!(c.final_score(0.99, 0.9995), 0.0);
        assert_eq!(c.final_score(0.99, 1.0 - 0.001), 0.0);
        assert_eq!(c.final_score(0.99, 0.81), 0.99);
    }

    #[test]
    fn fallback_picks_max_hypo() {
        let scorers = scorers(vec![("a", 0.4, 0.5), ("b", 0.9, 0.7), ("c", 0.95, 1.0)]);
        let sel = rank_and_select("src", &["a", "b", "c"], &scorers, &RankerConfig::default()).unwrap();
        assert!(sel.fallback);
        assert_eq!(sel.chosen.text, "c");
    }

    #[test]
    fn ties_go_to_earlier_candidate() {
        let scorers = scorers(vec![("a", 0.9, 0.9), ("b", 0.9, 0.85)]);
        let sel = rank_and_select("src", &["a", "b"], &scorers, &RankerConfig::default()).unwrap();
        assert_eq!(sel.index, 0);
        let sel = rank_and_select("src", &["b", "a"], &scorers, &RankerConfig::default()).unwrap();
        assert_eq!(sel.index, 0);
    }

    #[test]
    fn single_and_empty() {
        let scorers = scorers(vec![("a", 0.1, 0.1)]);
        let config = RankerConfig::default();
        assert_eq!(
            rank_and_select("s", &["a"], &scorers, &config).unwrap().chosen.text,
            "a"
        );
        let none: [&str; 0] = [];
        assert!(matches!(
            rank_and_select("s", &none, &scorers, &config),
            Err(RankError::EmptyCandidateSet)
        ));
    }

    #[test]
    fn hypo_only_ignores_window() {
        let scorers = scorers(vec![("a", 0.7, 0.9), ("b", 0.99, 0.5)]);
        let config = RankerConfig::default();
        let full = rank_ablation("s", &["a", "b"], &scorers, &config, RankMode::Full).unwrap();
        let hypo = rank_ablation("s", &["a", "b"], &scorers, &config, RankMode::HypoOnly).unwrap();
        assert_eq!((full.chosen.text.as_str(), hypo.chosen.text.as_str()), ("a", "b"));
    }

    #[test]
    fn random_mode_is_seeded() {
        let names = ["a", "b", "c", "d", "e"];
        let scorers = scorers(names.iter().map(|n| (*n, 0.5, 0.9)).collect());
        let config = RankerConfig::default();
        let pick = |seed| {
            rank_ablation("s", &names, &scorers, &config, RankMode::Random { seed })
                .unwrap()
                .index
        };
        assert_eq!(pick(11), pick(11));
        let picks: std::collections::HashSet<usize> = (0..50).map(pick).collect();
        assert!(picks.len() > 1);
    }

    #[test]
    fn scores_are_cached() {
        let scorers = scorers(vec![("a", 0.7, 0.9)]);
        let config = RankerConfig::default();
        rank_and_select("s", &["a"], &scorers, &config).unwrap();
        rank_ablation("s", &["a"], &scorers, &config, RankMode::HypoOnly).unwrap();
        assert_eq!(scorers.cached_scores(), 2);
    }

    #[test]
    fn backend_errors_propagate() {
        let scorers = scorers(vec![]);
        assert!(matches!(
            rank_and_select("s", &["x"], &scorers, &RankerConfig::default()),
            Err(RankError::Backend(BackendError::Missing(_)))
        ));
    }
}
