//! Word vectors and the unexpectedness scores built on them.
//!
//! Sentence unexpectedness is the mean cosine distance over all unordered
//! pairs of in-vocabulary tokens. Span unexpectedness is the mean over pairs
//! with one token inside the span and one outside. Tokens without a vector
//! and punctuation tokens take no part in either average.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::text::{normalize, Span, TaggedSentence};

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("cannot read embeddings: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected {expected} components, found {found}")]
    InconsistentDim { line: usize, expected: usize, found: usize },
    #[error("embedding file has no vectors")]
    Empty,
    #[error("vectors have different lengths ({0} vs {1})")]
    DimMismatch(usize, usize),
    #[error("zero vector has no direction")]
    ZeroVector,
}

/// Unit-length word vectors keyed by normalized word.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    table: HashMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub loaded: usize,
    pub malformed_lines: usize,
    pub zero_vectors: usize,
    /// Later entries whose normalized key was already present.
    pub shadowed: usize,
    pub filtered_out: usize,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            table: HashMap::new(),
        }
    }

    /// Inserts a vector under the normalized form of `word`. Returns false and
    /// leaves the store untouched for a zero vector.
    pub fn insert(&mut self, word: &str, vector: &[f64]) -> Result<bool, EmbeddingError> {
        if vector.len() != self.dim {
            return Err(EmbeddingError::DimMismatch(self.dim, vector.len()));
        }
        let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Ok(false);
        }
        self.table
            .insert(normalize(word), vector.iter().map(|x| x / norm).collect());
        Ok(true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.table.contains_key(&normalize(word))
    }

    /// Unit vector for an already normalized word.
    pub fn get_normalized(&self, normalized: &str) -> Option<&[f64]> {
        self.table.get(normalized).map(Vec::as_slice)
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.get_normalized(&normalize(word))
    }
}

fn parse_components(fields: &[&str]) -> Option<Vec<f64>> {
    fields.iter().map(|f| f.parse::<f64>().ok()).collect()
}

/// Loads a `word v1 ... vd` text file.
///
/// The dimension comes from the first vector line (a word2vec-style
/// `count dim` header is recognized and skipped). A line whose fields after
/// the word all parse as numbers but with the wrong count is fatal; any
/// other unparseable line is skipped and counted. Keys are normalized, and
/// the first entry wins when cased variants collide.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    vocab_filter: Option<&HashSet<String>>,
) -> Result<(EmbeddingStore, LoadReport), EmbeddingError> {
    let reader = BufReader::new(File::open(path)?);
    let mut store: Option<EmbeddingStore> = None;
    let mut report = LoadReport::default();
    let mut header_dim = None;

    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split(' ').filter(|f| !f.is_empty()).collect();
        if fields.is_empty() {
            continue;
        }
        if i == 0 && fields.len() == 2 {
            if let (Ok(_), Ok(dim)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                header_dim = Some(dim);
                continue;
            }
        }
        let Some(values) = parse_components(&fields[1..]) else {
            report.malformed_lines += 1;
            continue;
        };
        let store = match &mut store {
            Some(s) => s,
            None => {
                let dim = header_dim.unwrap_or(values.len());
                if dim == 0 {
                    report.malformed_lines += 1;
                    continue;
                }
                store.insert(EmbeddingStore::new(dim))
            }
        };
        if values.len() != store.dim {
            return Err(EmbeddingError::InconsistentDim {
                line: i + 1,
                expected: store.dim,
                found: values.len(),
            });
        }
        let key = normalize(fields[0]);
        if vocab_filter.is_some_and(|vocab| !vocab.contains(&key)) {
            report.filtered_out += 1;
            continue;
        }
        if store.table.contains_key(&key) {
            report.shadowed += 1;
            continue;
        }
        if store.insert(&key, &values)? {
            report.loaded += 1;
        } else {
            report.zero_vectors += 1;
        }
    }
    let store = store.ok_or(EmbeddingError::Empty)?;
    Ok((store, report))
}

/// `1 - cos(u, v)`, clamped to `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64, EmbeddingError> {
    if u.len() != v.len() {
        return Err(EmbeddingError::DimMismatch(u.len(), v.len()));
    }
    let (mut dot, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok((1.0 - dot / (uu.sqrt() * vv.sqrt())).clamp(0.0, 2.0))
}

fn unit_distance(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    (1.0 - dot).clamp(0.0, 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnexpectednessReport {
    pub value: f64,
    pub pairs_counted: usize,
    pub skipped_tokens: usize,
}

impl UnexpectednessReport {
    fn from_sum(sum: f64, pairs_counted: usize, skipped_tokens: usize) -> Self {
        let value = if pairs_counted == 0 {
            0.0
        } else {
            sum / pairs_counted as f64
        };
        Self {
            value,
            pairs_counted,
            skipped_tokens,
        }
    }
}

/// Per-token unit vectors for one sentence; `None` for OOV and punctuation.
pub struct SentenceVectors<'a> {
    vectors: Vec<Option<&'a [f64]>>,
}

impl<'a> SentenceVectors<'a> {
    pub fn new(sentence: &TaggedSentence, store: &'a EmbeddingStore) -> Self {
        let vectors = sentence
            .tokens
            .iter()
            .zip(&sentence.tags)
            .map(|(token, tag)| {
                if tag.is_punctuation() {
                    None
                } else {
                    store.get_normalized(&token.normalized)
                }
            })
            .collect();
        Self { vectors }
    }

    pub fn skipped(&self) -> usize {
        self.vectors.iter().filter(|v| v.is_none()).count()
    }

    pub fn sentence(&self) -> UnexpectednessReport {
        let present: Vec<&[f64]> = self.vectors.iter().flatten().copied().collect();
        let mut sum = 0.0;
        let mut pairs = 0;
        for (i, u) in present.iter().enumerate() {
            for v in &present[i + 1..] {
                sum += unit_distance(u, v);
                pairs += 1;
            }
        }
        UnexpectednessReport::from_sum(sum, pairs, self.skipped())
    }

    pub fn span(&self, span: Span) -> UnexpectednessReport {
        let mut sum = 0.0;
        let mut pairs = 0;
        for i in span.range() {
            let Some(u) = self.vectors[i] else { continue };
            for (j, v) in self.vectors.iter().enumerate() {
                if span.contains(j) {
                    continue;
                }
                if let Some(v) = v {
                    sum += unit_distance(u, v);
                    pairs += 1;
                }
            }
        }
        UnexpectednessReport::from_sum(sum, pairs, self.skipped())
    }
}

pub fn sentence_unexpectedness(sentence: &TaggedSentence, store: &EmbeddingStore) -> UnexpectednessReport {
    SentenceVectors::new(sentence, store).sentence()
}

/// Panics if `span` lies outside the sentence.
pub fn span_unexpectedness(sentence: &TaggedSentence, span: Span, store: &EmbeddingStore) -> UnexpectednessReport {
    assert!(
        span.end <= sentence.len(),
        "span {span} outside sentence of {} tokens",
        sentence.len()
    );
    SentenceVectors::new(sentence, store).span(span)
}
