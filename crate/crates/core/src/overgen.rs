//! Over-generation through an infill backend, and export of training pairs
//! for fine-tuning that backend.

use std::collections::HashSet;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, InfillBackend};
use crate::embedding::EmbeddingStore;
use crate::masking::{select_training_masks, MaskError, MaskedSentence, PatternSet};
use crate::text::{detokenize, normalize, Span, TaggedSentence, MASK_TOKEN};

#[derive(Debug, thiserror::Error)]
pub enum OvergenError {
    #[error("masked text must contain exactly one `{MASK_TOKEN}`, found {0}")]
    PlaceholderCount(usize),
    #[error("num_return must be at least 1")]
    ZeroReturn,
    #[error("no masked inputs to complete")]
    NoMasks,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("all {attempts} infill requests failed; last error: {last}")]
    AllRequestsFailed { attempts: usize, last: BackendError },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InfillRequest {
    masked_text: String,
    num_return: usize,
}

impl InfillRequest {
    pub fn new(masked_text: impl Into<String>, num_return: usize) -> Result<Self, OvergenError> {
        let masked_text = masked_text.into();
        let count = masked_text.matches(MASK_TOKEN).count();
        if count != 1 {
            return Err(OvergenError::PlaceholderCount(count));
        }
        if num_return == 0 {
            return Err(OvergenError::ZeroReturn);
        }
        Ok(Self {
            masked_text,
            num_return,
        })
    }

    pub fn masked_text(&self) -> &str {
        &self.masked_text
    }

    pub fn num_return(&self) -> usize {
        self.num_return
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub text: String,
    pub mask_index: usize,
    pub masked_span: Span,
    pub backend_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateSet {
    pub source: String,
    pub candidates: Vec<Candidate>,
    pub failed_requests: usize,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.candidates.iter().map(|c| c.text.as_str()).collect()
    }
}

fn dedup_key(text: &str) -> String {
    normalize(&text.split_whitespace().collect::<Vec<_>>().join(" "))
}

/// Sends every mask to `backend` and collects the completions in
/// `(mask index, backend rank)` order, dropping normalized duplicates.
/// Completions equal to the source are kept for the ranker to judge.
/// Failed requests are tolerated while at least one succeeds.
pub fn overgenerate(
    masks: &[MaskedSentence],
    backend: &dyn InfillBackend,
    num_return: usize,
) -> Result<CandidateSet, OvergenError> {
    let first = masks.first().ok_or(OvergenError::NoMasks)?;
    let source = first.source.text();
    let mut seen = HashSet::new();
    let mut candidates = Vec::new();
    let mut failed = 0;
    let mut last_error = None;

    for (mask_index, mask) in masks.iter().enumerate() {
        let request = InfillRequest::new(mask.masked_text(), num_return)?;
        match backend.infill(&request) {
            Ok(completions) => {
                for (backend_rank, text) in completions.into_iter().enumerate() {
                    let text = text.trim().to_string();
                    if text.is_empty() || !seen.insert(dedup_key(&text)) {
                        continue;
                    }
                    candidates.push(Candidate {
                        text,
                        mask_index,
                        masked_span: mask.masked_span,
                        backend_rank,
                    });
                }
            }
            Err(e) => {
                log::warn!("infill failed for {:?}: {e}", request.masked_text());
                failed += 1;
                last_error = Some(e);
            }
        }
    }
    if failed == masks.len() {
        return Err(OvergenError::AllRequestsFailed {
            attempts: failed,
            last: last_error.expect("at least one failure recorded"),
        });
    }
    Ok(CandidateSet {
        source,
        candidates,
        failed_requests: failed,
    })
}

/// One line of the training-pair file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub masked: String,
    pub original: String,
}

impl TrainingPair {
    pub fn from_mask(mask: &MaskedSentence) -> Self {
        Self {
            masked: mask.masked_text(),
            original: mask.source.text(),
        }
    }
}

/// Lazily turns a corpus into training pairs, up to `k` per sentence.
/// Sentences without a pattern match are skipped and counted.
pub struct TrainingPairs<'a, I> {
    corpus: I,
    patterns: &'a PatternSet,
    store: &'a EmbeddingStore,
    k: usize,
    pending: std::vec::IntoIter<TrainingPair>,
    sentences: usize,
    skipped: usize,
}

pub fn make_training_pairs<'a, I>(
    corpus: I,
    patterns: &'a PatternSet,
    store: &'a EmbeddingStore,
    k: usize,
) -> TrainingPairs<'a, I::IntoIter>
where
    I: IntoIterator<Item = TaggedSentence>,
{
    TrainingPairs {
        corpus: corpus.into_iter(),
        patterns,
        store,
        k: k.max(1),
        pending: Vec::new().into_iter(),
        sentences: 0,
        skipped: 0,
    }
}

impl<I> TrainingPairs<'_, I> {
    pub fn sentences_seen(&self) -> usize {
        self.sentences
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

impl<I: Iterator<Item = TaggedSentence>> Iterator for TrainingPairs<'_, I> {
    type Item = TrainingPair;

    fn next(&mut self) -> Option<TrainingPair> {
        loop {
            if let Some(pair) = self.pending.next() {
                return Some(pair);
            }
            let sentence = Arc::new(self.corpus.next()?);
            self.sentences += 1;
            match select_training_masks(&sentence, self.patterns, self.store, self.k) {
                Ok(masks) => {
                    self.pending = masks
                        .iter()
                        .map(TrainingPair::from_mask)
                        .collect::<Vec<_>>()
                        .into_iter();
                }
                Err(MaskError::NoMatch) => self.skipped += 1,
                Err(e) => {
                    log::warn!("skipping {:?}: {e}", sentence.raw);
                    self.skipped += 1;
                }
            }
        }
    }
}

pub fn write_training_pairs(
    pairs: impl IntoIterator<Item = TrainingPair>,
    mut writer: impl Write,
) -> std::io::Result<usize> {
    let mut n = 0;
    for pair in pairs {
        serde_json::to_writer(&mut writer, &pair)?;
        writer.write_all(b"\n")?;
        n += 1;
    }
    Ok(n)
}

/// Replaces the placeholder of a masked text with `fill`.
pub fn fill_mask(masked: &str, fill: &[&str]) -> String {
    masked.replacen(MASK_TOKEN, &detokenize(fill), 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::mask_all;
    use crate::tagger::LexiconTagger;
    use crate::text::{analyze, tokenize, PosTag};
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct EchoX;

    impl InfillBackend for EchoX {
        fn infill(&self, r: &InfillRequest) -> Result<Vec<String>, BackendError> {
            Ok(vec![r.masked_text().replacen(MASK_TOKEN, "X", 1)])
        }
    }

    struct FailEvery {
        calls: AtomicUsize,
        every: usize,
    }

    impl InfillBackend for FailEvery {
        fn infill(&self, r: &InfillRequest) -> Result<Vec<String>, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n.is_multiple_of(self.every) {
                Err(BackendError::Unavailable("down".into()))
            } else {
                Ok(vec![r.masked_text().replacen(MASK_TOKEN, "Y", 1)])
            }
        }
    }

    fn masks(text: &str, patterns: &[Vec<PosTag>]) -> Vec<MaskedSentence> {
        let s = Arc::new(analyze(text, &LexiconTagger::builtin()).unwrap());
        mask_all(&s, &PatternSet::from(patterns.to_vec())).unwrap()
    }

    #[test]
    fn request_validation() {
        assert!(InfillRequest::new("a <mask> b", 1).is_ok());
        assert!(matches!(
            InfillRequest::new("a b", 1),
            Err(OvergenError::PlaceholderCount(0))
        ));
        assert!(matches!(
            InfillRequest::new("<mask> <mask>", 1),
            Err(OvergenError::PlaceholderCount(2))
        ));
        assert!(matches!(InfillRequest::new("<mask>", 0), Err(OvergenError::ZeroReturn)));
    }

    #[test]
    fn echo_candidates_differ_only_at_mask() {
        let m = masks(
            "His piano playing is very bad.",
            &[vec![PosTag::Rb], vec![PosTag::Jj], vec![PosTag::Nn]],
        );
        // piano, very, bad; "playing" is VBG
        assert_eq!(m.len(), 3);
        let set = overgenerate(&m, &EchoX, 1).unwrap();
        assert!(set.len() <= 3);
        let source = tokenize(&set.source).unwrap();
        for c in &set.candidates {
            let tokens = tokenize(&c.text).unwrap();
            assert_eq!(tokens.len(), source.len() - c.masked_span.len() + 1);
            for (i, t) in tokens.iter().enumerate() {
                if i == c.masked_span.start {
                    assert_eq!(t.surface, "X");
                } else {
                    let j = if i < c.masked_span.start {
                        i
                    } else {
                        i + c.masked_span.len() - 1
                    };
                    assert_eq!(t.surface, source[j].surface);
                }
            }
        }
    }

    #[test]
    fn duplicates_are_dropped_in_stable_order() {
        let m = masks("the dog the dog", &[vec![PosTag::Dt]]);
        struct Same;
        impl InfillBackend for Same {
            fn infill(&self, _: &InfillRequest) -> Result<Vec<String>, BackendError> {
                Ok(vec!["A b.".into(), "a  B.".into(), "c.".into()])
            }
        }
        let set = overgenerate(&m, &Same, 3).unwrap();
        assert_eq!(set.texts(), ["A b.", "c."]);
        assert_eq!((set.candidates[1].mask_index, set.candidates[1].backend_rank), (0, 2));
    }

    #[test]
    fn partial_failures_are_tolerated() {
        let m = masks("His piano playing is very bad.", &[vec![PosTag::Rb], vec![PosTag::Jj]]);
        let backend = FailEvery {
            calls: AtomicUsize::new(0),
            every: 2,
        };
        let set = overgenerate(&m, &backend, 1).unwrap();
        assert_eq!(set.failed_requests, 1);
        assert_eq!(set.len(), 1);

        let all_fail = FailEvery {
            calls: AtomicUsize::new(0),
            every: 1,
        };
        assert!(matches!(
            overgenerate(&m, &all_fail, 1),
            Err(OvergenError::AllRequestsFailed { attempts: 2, .. })
        ));
        assert!(matches!(overgenerate(&[], &EchoX, 1), Err(OvergenError::NoMasks)));
    }

    #[test]
    fn training_pairs_count_and_skip() {
        let tagger = LexiconTagger::builtin();
        let mut store = EmbeddingStore::new(2);
        for (w, v) in [
            ("it", [1.0, 0.0]),
            ("took", [0.9, 0.1]),
            ("you", [1.0, 0.2]),
            ("centuries", [0.0, 1.0]),
        ] {
            store.insert(w, &v).unwrap();
        }
        let corpus = vec![
            analyze("It took you centuries.", &tagger).unwrap(),
            analyze("42", &tagger).unwrap(),
        ];
        let patterns = PatternSet::from([
            vec![PosTag::Nns],
            vec![PosTag::Prp],
            vec![PosTag::Vbd],
            vec![PosTag::Prp, PosTag::Nns],
        ]);
        let mut pairs = make_training_pairs(corpus, &patterns, &store, 3);
        let out: Vec<TrainingPair> = pairs.by_ref().collect();
        assert_eq!(out.len(), 3);
        assert_eq!(pairs.skipped(), 1);
        assert_eq!(pairs.sentences_seen(), 2);
        assert_eq!(out[0].masked, "It took you <mask>.");
        assert_eq!(out[0].original, "It took you centuries.");

        let mut buf = Vec::new();
        assert_eq!(write_training_pairs(out, &mut buf).unwrap(), 3);
        let first = String::from_utf8(buf).unwrap().lines().next().unwrap().to_string();
        assert_eq!(
            first,
            r#"{"masked":"It took you <mask>.","original":"It took you centuries."}"#
        );
    }

    #[test]
    fn fill_mask_replaces_once() {
        assert_eq!(fill_mask("I <mask> resist.", &["ca", "n't"]), "I can't resist.");
    }
}
