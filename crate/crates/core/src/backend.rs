//! Model backends: the tagger, the infill model and the two scorers.
//!
//! Three implementations are provided:
//!
//! * [`HttpBackend`] talks to the model service over its JSON wire protocol
//!   (`/tag`, `/infill`, `/score/hyperbole`, `/score/paraphrase`, `/health`).
//! * [`MockBackend`] is deterministic and in-process, so the engine can be
//!   exercised without model weights.
//! * [`ReplayBackend`] answers from a recorded JSON file.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::overgen::InfillRequest;
use crate::tagger::LexiconTagger;
use crate::text::{normalize, PosTag, Token, MASK_TOKEN};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend rejected request (status {status}): {reason}")]
    Rejected { status: u16, reason: String },
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("no recorded response for {0}")]
    Missing(String),
}

pub trait Tagger: Send + Sync {
    fn tag(&self, tokens: &[Token]) -> Result<Vec<PosTag>, BackendError>;
}

pub trait InfillBackend: Send + Sync {
    /// Completed sentences for one masked input, best first.
    fn infill(&self, request: &InfillRequest) -> Result<Vec<String>, BackendError>;
}

pub trait HyperboleScorer: Send + Sync {
    /// Probability that `text` is hyperbolic.
    fn hyperbole_score(&self, text: &str) -> Result<f64, BackendError>;
}

pub trait ParaphraseScorer: Send + Sync {
    /// Similarity between a literal source and a candidate, in `[0, 1]`.
    fn paraphrase_score(&self, source: &str, candidate: &str) -> Result<f64, BackendError>;
}

/// One handle per capability. Cheap to clone.
#[derive(Clone)]
pub struct Backends {
    pub tagger: Arc<dyn Tagger>,
    pub infill: Arc<dyn InfillBackend>,
    pub hyperbole: Arc<dyn HyperboleScorer>,
    pub paraphrase: Arc<dyn ParaphraseScorer>,
}

impl Backends {
    pub fn mock(seed: u64) -> Self {
        let mock = Arc::new(MockBackend::new(seed));
        Self {
            tagger: Arc::new(LexiconTagger::builtin()),
            infill: mock.clone(),
            hyperbole: mock.clone(),
            paraphrase: mock,
        }
    }

    pub fn http(endpoint: &str) -> Self {
        let http = Arc::new(HttpBackend::new(endpoint));
        Self {
            tagger: http.clone(),
            infill: http.clone(),
            hyperbole: http.clone(),
            paraphrase: http,
        }
    }

    /// Replayed scores and completions; tagging uses the built-in lexicon.
    pub fn replay(replay: ReplayBackend) -> Self {
        let replay = Arc::new(replay);
        Self {
            tagger: Arc::new(LexiconTagger::builtin()),
            infill: replay.clone(),
            hyperbole: replay.clone(),
            paraphrase: replay,
        }
    }
}

fn check_score(score: f64) -> Result<f64, BackendError> {
    if (0.0..=1.0).contains(&score) {
        Ok(score)
    } else {
        Err(BackendError::Protocol(format!("score {score} outside [0, 1]")))
    }
}

// ---------------------------------------------------------------------------
// HTTP
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct TagRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct TagResponse {
    tokens: Vec<String>,
    tags: Vec<String>,
}

#[derive(Serialize)]
struct InfillBody<'a> {
    masked: &'a str,
    num_return: usize,
}

#[derive(Deserialize)]
struct InfillResponse {
    candidates: Vec<String>,
    #[serde(default)]
    truncated: bool,
}

#[derive(Serialize)]
struct HyperboleBody<'a> {
    text: &'a str,
}

#[derive(Serialize)]
struct ParaphraseBody<'a> {
    source: &'a str,
    candidate: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    score: f64,
}

#[derive(Deserialize)]
struct ErrorBody {
    #[serde(alias = "error")]
    reason: String,
}

/// Client for the model service.
pub struct HttpBackend {
    base: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(endpoint: &str) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .new_agent();
        Self {
            base: endpoint.trim_end_matches('/').to_string(),
            agent,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    pub fn health(&self) -> Result<(), BackendError> {
        let response = self
            .agent
            .get(format!("{}/health", self.base))
            .call()
            .map_err(transport_error)?;
        match response.status().as_u16() {
            200..=299 => Ok(()),
            status => Err(BackendError::Rejected {
                status,
                reason: "health check failed".into(),
            }),
        }
    }

    fn post<B: Serialize, R: serde::de::DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, BackendError> {
        let mut response = self
            .agent
            .post(format!("{}{}", self.base, path))
            .send_json(body)
            .map_err(transport_error)?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            let reason = response
                .body_mut()
                .read_json::<ErrorBody>()
                .map(|b| b.reason)
                .unwrap_or_else(|_| "no reason given".into());
            return Err(BackendError::Rejected { status, reason });
        }
        response
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Protocol(format!("{path}: {e}")))
    }
}

fn transport_error(err: ureq::Error) -> BackendError {
    match err {
        ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound | ureq::Error::Timeout(_) => {
            BackendError::Unavailable(err.to_string())
        }
        other => BackendError::Protocol(other.to_string()),
    }
}

impl Tagger for HttpBackend {
    fn tag(&self, tokens: &[Token]) -> Result<Vec<PosTag>, BackendError> {
        // Tokens are sent pre-split so the service tags our tokenization.
        let text = tokens.iter().map(|t| t.surface.as_str()).collect::<Vec<_>>().join(" ");
        let response: TagResponse = self.post("/tag", &TagRequest { text: &text })?;
        if response.tokens.len() != tokens.len() || response.tags.len() != tokens.len() {
            return Err(BackendError::Protocol(format!(
                "/tag returned {} tokens and {} tags for {} tokens",
                response.tokens.len(),
                response.tags.len(),
                tokens.len()
            )));
        }
        response
            .tags
            .iter()
            .map(|t| {
                t.parse()
                    .map_err(|_| BackendError::Protocol(format!("unknown tag `{t}`")))
            })
            .collect()
    }
}

impl InfillBackend for HttpBackend {
    fn infill(&self, request: &InfillRequest) -> Result<Vec<String>, BackendError> {
        let response: InfillResponse = self.post(
            "/infill",
            &InfillBody {
                masked: request.masked_text(),
                num_return: request.num_return(),
            },
        )?;
        if response.candidates.len() > request.num_return() {
            return Err(BackendError::Protocol(format!(
                "/infill returned {} candidates, {} requested",
                response.candidates.len(),
                request.num_return()
            )));
        }
        if response.truncated {
            log::debug!("/infill truncated its answer for {:?}", request.masked_text());
        }
        Ok(response.candidates)
    }
}

impl HyperboleScorer for HttpBackend {
    fn hyperbole_score(&self, text: &str) -> Result<f64, BackendError> {
        let response: ScoreResponse = self.post("/score/hyperbole", &HyperboleBody { text })?;
        check_score(response.score)
    }
}

impl ParaphraseScorer for HttpBackend {
    fn paraphrase_score(&self, source: &str, candidate: &str) -> Result<f64, BackendError> {
        let response: ScoreResponse = self.post("/score/paraphrase", &ParaphraseBody { source, candidate })?;
        check_score(response.score)
    }
}

// ---------------------------------------------------------------------------
// Mock
// ---------------------------------------------------------------------------

const MOCK_FILLERS: &[&str] = &[
    "endlessly",
    "a million times",
    "forever",
    "absolutely",
    "sheer hell",
    "beyond words",
    "to death",
    "the whole world",
    "in every conceivable way",
    "infinitely",
    "a thousand years",
    "unbearably",
];

const MOCK_HYPERBOLE_CUES: &[&str] = &[
    "endlessly",
    "million",
    "forever",
    "absolutely",
    "hell",
    "beyond",
    "death",
    "world",
    "conceivable",
    "infinitely",
    "thousand",
    "unbearably",
    "never",
    "always",
    "everything",
    "everyone",
    "nothing",
    "centuries",
    "tons",
    "totally",
    "completely",
    "impossible",
    "ever",
];

/// 64-bit FNV-1a; stable across hosts and toolchains.
fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for byte in *part {
            hash ^= u64::from(*byte);
            hash = hash.wrapping_mul(0x0100_0000_01b3);
        }
        hash ^= 0xff;
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

fn unit_fraction(hash: u64) -> f64 {
    (hash >> 11) as f64 / (1u64 << 53) as f64
}

/// Deterministic stand-in for every model.
///
/// * infill replaces the placeholder with words from a fixed lexicon;
/// * the hyperbole score is high (≥ 0.8) when the text contains a cue word
///   and low (< 0.5) otherwise, jittered by a hash of the text;
/// * the paraphrase score is the Dice coefficient of the normalized token
///   multisets, so it is symmetric and exactly 1 for identical texts.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend {
    seed: u64,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn hash(&self, parts: &[&[u8]]) -> u64 {
        let seed = self.seed.to_le_bytes();
        let mut all: Vec<&[u8]> = vec![&seed];
        all.extend_from_slice(parts);
        fnv1a(&all)
    }
}

fn normalized_words(text: &str) -> Vec<String> {
    crate::text::tokenize(text)
        .map(|tokens| tokens.into_iter().map(|t| t.normalized).collect())
        .unwrap_or_default()
}

impl InfillBackend for MockBackend {
    fn infill(&self, request: &InfillRequest) -> Result<Vec<String>, BackendError> {
        let masked = request.masked_text();
        Ok((0..request.num_return())
            .map(|rank| {
                let h = self.hash(&[masked.as_bytes(), &(rank as u64).to_le_bytes()]);
                let filler = MOCK_FILLERS[(h % MOCK_FILLERS.len() as u64) as usize];
                masked.replacen(MASK_TOKEN, filler, 1)
            })
            .collect())
    }
}

impl HyperboleScorer for MockBackend {
    fn hyperbole_score(&self, text: &str) -> Result<f64, BackendError> {
        let words = normalized_words(text);
        let cued = words.iter().any(|w| MOCK_HYPERBOLE_CUES.contains(&w.as_str()));
        let jitter = unit_fraction(self.hash(&[b"hypo", text.as_bytes()]));
        Ok(if cued {
            0.8 + 0.19 * jitter
        } else {
            0.05 + 0.45 * jitter
        })
    }
}

impl ParaphraseScorer for MockBackend {
    fn paraphrase_score(&self, source: &str, candidate: &str) -> Result<f64, BackendError> {
        let mut a = normalized_words(source);
        let mut b = normalized_words(candidate);
        if a.is_empty() && b.is_empty() {
            return Ok(1.0);
        }
        a.sort_unstable();
        b.sort_unstable();
        let (mut i, mut j, mut shared) = (0, 0, 0usize);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    shared += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        Ok(2.0 * shared as f64 / (a.len() + b.len()) as f64)
    }
}

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParaphraseRecord {
    pub source: String,
    pub candidate: String,
    pub score: f64,
}

/// Recorded backend answers.
///
/// ```json
/// {"infill": {"<masked text>": ["completion", ...]},
///  "hyperbole": {"<text>": 0.96},
///  "paraphrase": [{"source": "...", "candidate": "...", "score": 0.95}]}
/// ```
///
/// An unrecorded masked text yields no completions; an unrecorded score is
/// an error.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReplayBackend {
    #[serde(default)]
    pub infill: HashMap<String, Vec<String>>,
    #[serde(default)]
    pub hyperbole: HashMap<String, f64>,
    #[serde(default)]
    pub paraphrase: Vec<ParaphraseRecord>,
    #[serde(skip)]
    paraphrase_index: HashMap<(String, String), f64>,
}

impl ReplayBackend {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let raw =
            fs::read_to_string(path).map_err(|e| BackendError::Unavailable(format!("{}: {e}", path.display())))?;
        let replay: ReplayBackend =
            serde_json::from_str(&raw).map_err(|e| BackendError::Protocol(format!("{}: {e}", path.display())))?;
        Ok(replay.indexed())
    }

    pub fn indexed(mut self) -> Self {
        self.paraphrase_index = self
            .paraphrase
            .iter()
            .map(|r| ((r.source.clone(), r.candidate.clone()), r.score))
            .collect();
        self
    }
}

impl InfillBackend for ReplayBackend {
    fn infill(&self, request: &InfillRequest) -> Result<Vec<String>, BackendError> {
        let mut out = self.infill.get(request.masked_text()).cloned().unwrap_or_default();
        out.truncate(request.num_return());
        Ok(out)
    }
}

impl HyperboleScorer for ReplayBackend {
    fn hyperbole_score(&self, text: &str) -> Result<f64, BackendError> {
        self.hyperbole
            .get(text)
            .copied()
            .ok_or_else(|| BackendError::Missing(format!("hyperbole score of {text:?}")))
            .and_then(check_score)
    }
}

impl ParaphraseScorer for ReplayBackend {
    fn paraphrase_score(&self, source: &str, candidate: &str) -> Result<f64, BackendError> {
        let key = (source.to_string(), candidate.to_string());
        let swapped = (key.1.clone(), key.0.clone());
        self.paraphrase_index
            .get(&key)
            .or_else(|| self.paraphrase_index.get(&swapped))
            .copied()
            .or_else(|| (normalize(source) == normalize(candidate)).then_some(1.0))
            .ok_or_else(|| BackendError::Missing(format!("paraphrase score of {candidate:?} for {source:?}")))
            .and_then(check_score)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_infill_is_deterministic_and_counts() {
        let backend = MockBackend::new(7);
        let request = InfillRequest::new("It took you <mask> to get dressed.", 3).unwrap();
        let a = backend.infill(&request).unwrap();
        let b = backend.infill(&request).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        for c in &a {
            assert!(c.starts_with("It took you "));
            assert!(c.ends_with(" to get dressed."));
            assert!(!c.contains(MASK_TOKEN));
        }
    }

    #[test]
    fn mock_paraphrase_is_symmetric() {
        let m = MockBackend::new(0);
        let s = "Being out of fashion is very bad.";
        let c = "Being out of fashion is sheer hell.";
        assert_eq!(m.paraphrase_score(s, s).unwrap(), 1.0);
        assert_eq!(m.paraphrase_score(s, c).unwrap(), m.paraphrase_score(c, s).unwrap());
        assert!(m.paraphrase_score(s, c).unwrap() < 1.0);
    }

    #[test]
    fn mock_hyperbole_scores_are_probabilities() {
        let m = MockBackend::new(3);
        let hot = m.hyperbole_score("I have told you a million times.").unwrap();
        let cold = m.hyperbole_score("I have told you twice.").unwrap();
        assert!((0.8..=1.0).contains(&hot));
        assert!((0.0..0.5).contains(&cold));
    }

    #[test]
    fn replay_answers_and_misses() {
        let replay: ReplayBackend = serde_json::from_str(
            r#"{"hyperbole": {"a": 0.5},
                "paraphrase": [{"source": "s", "candidate": "a", "score": 0.9}]}"#,
        )
        .unwrap();
        let replay = replay.indexed();
        assert_eq!(replay.hyperbole_score("a").unwrap(), 0.5);
        assert_eq!(replay.paraphrase_score("s", "a").unwrap(), 0.9);
        assert_eq!(replay.paraphrase_score("a", "s").unwrap(), 0.9);
        assert!(matches!(replay.hyperbole_score("b"), Err(BackendError::Missing(_))));
        let request = InfillRequest::new("x <mask>", 2).unwrap();
        assert!(replay.infill(&request).unwrap().is_empty());
    }

    #[test]
    fn unreachable_http_backend_is_unavailable() {
        let backend = HttpBackend::new("http://127.0.0.1:9");
        assert!(matches!(
            backend.hyperbole_score("x"),
            Err(BackendError::Unavailable(_))
        ));
    }
}
