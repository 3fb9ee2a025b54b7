//! Engine configuration: a plain `key = value` file, overridden by flags,
//! with `MOVER_BACKEND` as the last fallback for the service endpoint.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use mover_core::masking::DEFAULT_TOP_K;
use mover_core::pipeline::DEFAULT_NUM_RETURN;
use mover_core::ranker::RankerConfig;

pub const BACKEND_ENV: &str = "MOVER_BACKEND";
pub const DEFAULT_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendChoice {
    Mock,
    Replay(PathBuf),
    Http(String),
}

/// Every setting as optionally given by one source.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub embeddings: Option<PathBuf>,
    pub patterns: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub backend: Option<String>,
    pub replay: Option<PathBuf>,
    pub mock: Option<bool>,
    pub gamma: Option<f64>,
    pub epsilon: Option<f64>,
    pub threshold: Option<f64>,
    pub top_k_masks: Option<usize>,
    pub num_return: Option<usize>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

fn parse<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow::anyhow!("config line {line}: bad value {value:?} for {key}: {e}"))
}

impl Settings {
    pub fn parse_str(raw: &str) -> Result<Self> {
        let mut s = Settings::default();
        for (i, line) in raw.lines().enumerate() {
            let n = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {n}: expected key = value");
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "embeddings" => s.embeddings = Some(value.into()),
                "patterns" => s.patterns = Some(value.into()),
                "lexicon" => s.lexicon = Some(value.into()),
                "backend" => s.backend = Some(value.to_string()),
                "replay" => s.replay = Some(value.into()),
                "mock" => s.mock = Some(parse(key, value, n)?),
                "gamma" => s.gamma = Some(parse(key, value, n)?),
                "epsilon" => s.epsilon = Some(parse(key, value, n)?),
                "threshold" => s.threshold = Some(parse(key, value, n)?),
                "top_k_masks" => s.top_k_masks = Some(parse(key, value, n)?),
                "num_return" => s.num_return = Some(parse(key, value, n)?),
                "seed" => s.seed = Some(parse(key, value, n)?),
                "jobs" => s.jobs = Some(parse(key, value, n)?),
                other => bail!("config line {n}: unknown key {other:?}"),
            }
        }
        Ok(s)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse_str(&raw).with_context(|| format!("in {}", path.display()))
    }

    /// Values from `over` win where present.
    pub fn overlay(self, over: Settings) -> Settings {
        Settings {
            embeddings: over.embeddings.or(self.embeddings),
            patterns: over.patterns.or(self.patterns),
            lexicon: over.lexicon.or(self.lexicon),
            backend: over.backend.or(self.backend),
            replay: over.replay.or(self.replay),
            mock: over.mock.or(self.mock),
            gamma: over.gamma.or(self.gamma),
            epsilon: over.epsilon.or(self.epsilon),
            threshold: over.threshold.or(self.threshold),
            top_k_masks: over.top_k_masks.or(self.top_k_masks),
            num_return: over.num_return.or(self.num_return),
            seed: over.seed.or(self.seed),
            jobs: over.jobs.or(self.jobs),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub embeddings: Option<PathBuf>,
    pub patterns: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub backend: Option<BackendChoice>,
    pub ranker: RankerConfig,
    pub threshold: f64,
    pub top_k_masks: usize,
    pub num_return: usize,
    pub seed: u64,
    /// Worker threads; `None` uses one per core.
    pub jobs: Option<usize>,
}

impl EngineConfig {
    /// Validates merged settings. `env_backend` is consulted only when no
    /// other source names a backend.
    pub fn resolve(s: Settings, env_backend: Option<String>) -> Result<Self> {
        let ranker = RankerConfig::new(
            s.gamma.unwrap_or(RankerConfig::DEFAULT_GAMMA),
            s.epsilon.unwrap_or(RankerConfig::DEFAULT_EPSILON),
        )?;
        let threshold = s.threshold.unwrap_or(DEFAULT_THRESHOLD);
        if !(0.0..1.0).contains(&threshold) {
            bail!("threshold must lie in [0, 1), got {threshold}");
        }
        let top_k_masks = s.top_k_masks.unwrap_or(DEFAULT_TOP_K);
        if top_k_masks == 0 {
            bail!("top_k_masks must be at least 1");
        }
        let num_return = s.num_return.unwrap_or(DEFAULT_NUM_RETURN);
        if num_return == 0 {
            bail!("num_return must be at least 1");
        }
        let backend = if s.mock == Some(true) {
            Some(BackendChoice::Mock)
        } else if let Some(path) = s.replay {
            Some(BackendChoice::Replay(path))
        } else {
            match s.backend.or(env_backend).filter(|b| !b.trim().is_empty()) {
                Some(b) if b.trim() == "mock" => Some(BackendChoice::Mock),
                Some(b) => Some(BackendChoice::Http(b.trim().to_string())),
                None => None,
            }
        };
        Ok(Self {
            embeddings: s.embeddings,
            patterns: s.patterns,
            lexicon: s.lexicon,
            backend,
            ranker,
            threshold,
            top_k_masks,
            num_return,
            seed: s.seed.unwrap_or(0),
            jobs: s.jobs.filter(|&j| j > 0),
        })
    }
}
