//! Weakly supervised corpus construction: cleaning, classifier filtering,
//! annotation sampling, unanimity merge and corpus statistics.

use std::collections::HashSet;
use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, HyperboleScorer, Tagger};
use crate::masking::join_tags;
use crate::text::{analyze, normalize, tokenize, Span};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("threshold {0} must lie in [0, 1)")]
    InvalidThreshold(f64),
    #[error("cannot sample {requested} records from a pool of {available}")]
    PoolTooSmall { requested: usize, available: usize },
    #[error("record {id} is missing a judgement")]
    IncompleteLabels { id: String },
    #[error("{records} records but {labels_a} / {labels_b} judgements")]
    MisalignedLabels {
        records: usize,
        labels_a: usize,
        labels_b: usize,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    #[serde(alias = "hypo", alias = "1", alias = "positive")]
    Hyperbole,
    #[serde(alias = "non_hypo", alias = "0", alias = "negative")]
    Literal,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Hyperbole => "hyperbole",
            Label::Literal => "literal",
        })
    }
}

/// One line of a corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, rename = "prob", skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_a: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_b: Option<Label>,
    /// Annotated hyperbolic span, as text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<String>,
}

impl CorpusRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label: None,
            probability: None,
            label_a: None,
            label_b: None,
            span: None,
        }
    }
}

fn dedup_key(text: &str) -> String {
    normalize(&text.split_whitespace().collect::<Vec<_>>().join(" "))
}

fn starts_with_capital(text: &str) -> bool {
    text.chars().next().is_some_and(char::is_uppercase)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CleanReport {
    pub seen: usize,
    pub kept: usize,
    pub duplicates: usize,
    pub incomplete: usize,
}

/// Streaming cleaner: drops exact duplicates (after whitespace and case
/// normalization) and sentences that do not start with an uppercase letter.
/// Kept records get sequential ids `s00000000`, `s00000001`, ...
pub struct Cleaner<I> {
    input: I,
    seen: HashSet<String>,
    report: CleanReport,
}

pub fn clean_corpus<I, S>(raw: I) -> Cleaner<I::IntoIter>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    Cleaner {
        input: raw.into_iter(),
        seen: HashSet::new(),
        report: CleanReport::default(),
    }
}

impl<I> Cleaner<I> {
    pub fn report(&self) -> CleanReport {
        self.report
    }
}

impl<I, S> Iterator for Cleaner<I>
where
    I: Iterator<Item = S>,
    S: AsRef<str>,
{
    type Item = CorpusRecord;

    fn next(&mut self) -> Option<CorpusRecord> {
        loop {
            let line = self.input.next()?;
            let text = line.as_ref().trim();
            if text.is_empty() {
                continue;
            }
            self.report.seen += 1;
            if !starts_with_capital(text) {
                self.report.incomplete += 1;
                continue;
            }
            if !self.seen.insert(dedup_key(text)) {
                self.report.duplicates += 1;
                continue;
            }
            let id = format!("s{:08}", self.report.kept);
            self.report.kept += 1;
            return Some(CorpusRecord::new(id, text));
        }
    }
}

fn check_threshold(threshold: f64) -> Result<(), CorpusError> {
    if (0.0..1.0).contains(&threshold) {
        Ok(())
    } else {
        Err(CorpusError::InvalidThreshold(threshold))
    }
}

/// Scores every record in parallel and stores the probability on it.
pub fn score_records(
    records: Vec<CorpusRecord>,
    scorer: &dyn HyperboleScorer,
) -> Result<Vec<CorpusRecord>, CorpusError> {
    records
        .into_par_iter()
        .map(|mut record| {
            record.probability = Some(scorer.hyperbole_score(&record.text)?);
            Ok(record)
        })
        .collect()
}

/// Keeps records whose positive-class probability is strictly above
/// `threshold`. Records already carrying a probability are not rescored.
pub fn filter_by_classifier(
    records: Vec<CorpusRecord>,
    scorer: &dyn HyperboleScorer,
    threshold: f64,
) -> Result<Vec<CorpusRecord>, CorpusError> {
    check_threshold(threshold)?;
    let (scored, unscored): (Vec<_>, Vec<_>) = records
        .into_iter()
        .enumerate()
        .partition(|(_, r)| r.probability.is_some());
    let (order, unscored): (Vec<usize>, Vec<CorpusRecord>) = unscored.into_iter().unzip();
    let mut all: Vec<(usize, CorpusRecord)> = scored;
    all.extend(order.into_iter().zip(score_records(unscored, scorer)?));
    all.sort_by_key(|(i, _)| *i);
    Ok(all
        .into_iter()
        .map(|(_, r)| r)
        .filter(|r| r.probability.is_some_and(|p| p > threshold))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationBatch {
    pub records: Vec<CorpusRecord>,
    pub labels_a: Vec<Option<Label>>,
    pub labels_b: Vec<Option<Label>>,
}

impl AnnotationBatch {
    /// Reads judgements from the records' `label_a` / `label_b` fields.
    pub fn from_records(records: Vec<CorpusRecord>) -> Self {
        let labels_a = records.iter().map(|r| r.label_a).collect();
        let labels_b = records.iter().map(|r| r.label_b).collect();
        Self {
            records,
            labels_a,
            labels_b,
        }
    }

    /// Records carrying their judgements, for export.
    pub fn to_records(&self) -> Vec<CorpusRecord> {
        self.records
            .iter()
            .zip(self.labels_a.iter().zip(&self.labels_b))
            .map(|(r, (a, b))| CorpusRecord {
                label_a: *a,
                label_b: *b,
                ..r.clone()
            })
            .collect()
    }
}

/// Uniform sample without replacement, in pool order.
pub fn sample_for_annotation(pool: &[CorpusRecord], n: usize, seed: u64) -> Result<AnnotationBatch, CorpusError> {
    if n > pool.len() {
        return Err(CorpusError::PoolTooSmall {
            requested: n,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, pool.len(), n).into_vec();
    picked.sort_unstable();
    let records: Vec<CorpusRecord> = picked.into_iter().map(|i| pool[i].clone()).collect();
    Ok(AnnotationBatch {
        labels_a: vec![None; records.len()],
        labels_b: vec![None; records.len()],
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergeOutcome {
    pub kept: Vec<CorpusRecord>,
    pub dropped: usize,
    pub raw_agreement: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// Keeps records both annotators labelled the same way.
pub fn merge_annotations(batch: &AnnotationBatch) -> Result<MergeOutcome, CorpusError> {
    let n = batch.records.len();
    if batch.labels_a.len() != n || batch.labels_b.len() != n {
        return Err(CorpusError::MisalignedLabels {
            records: n,
            labels_a: batch.labels_a.len(),
            labels_b: batch.labels_b.len(),
        });
    }
    let mut kept = Vec::new();
    let mut dropped = 0;
    for (record, (a, b)) in batch.records.iter().zip(batch.labels_a.iter().zip(&batch.labels_b)) {
        let (Some(a), Some(b)) = (a, b) else {
            return Err(CorpusError::IncompleteLabels { id: record.id.clone() });
        };
        if a == b {
            kept.push(CorpusRecord {
                label: Some(*a),
                label_a: None,
                label_b: None,
                ..record.clone()
            });
        } else {
            dropped += 1;
        }
    }
    let positives = kept.iter().filter(|r| r.label == Some(Label::Hyperbole)).count();
    Ok(MergeOutcome {
        raw_agreement: if n == 0 { 0.0 } else { kept.len() as f64 / n as f64 },
        negatives: kept.len() - positives,
        positives,
        kept,
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub n_total: usize,
    /// Records labelled literal.
    pub n_non_hypo_sampled: usize,
    pub pct_non_hypo: f64,
    /// Hyperbolic records carrying a span annotation.
    pub n_spans: usize,
    pub has_span_stats: bool,
    pub avg_span_tokens: f64,
    /// Share of spans longer than one token, in percent.
    pub pct_long_spans: f64,
    pub n_distinct_spans: usize,
    pub n_distinct_pos_ngrams: usize,
}

fn locate(haystack: &[String], needle: &[String]) -> Option<Span> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    (0..=haystack.len() - needle.len())
        .find(|&i| haystack[i..i + needle.len()] == *needle)
        .map(|i| Span::new(i, i + needle.len()))
}

/// Span statistics cover records that carry a span and are not labelled
/// literal. POS n-grams come from tagging the whole sentence and reading the
/// tags at the span's first occurrence; a span not found in its sentence is
/// tagged on its own.
pub fn corpus_stats(records: &[CorpusRecord], tagger: &dyn Tagger) -> Result<CorpusStats, CorpusError> {
    let n_total = records.len();
    let n_non_hypo = records.iter().filter(|r| r.label == Some(Label::Literal)).count();
    let mut lengths = Vec::new();
    let mut spans = HashSet::new();
    let mut ngrams = HashSet::new();

    for record in records.iter().filter(|r| r.label != Some(Label::Literal)) {
        let Some(span_text) = record.span.as_deref() else {
            continue;
        };
        let Ok(span_tokens) = tokenize(span_text) else {
            continue;
        };
        let span_norm: Vec<String> = span_tokens.iter().map(|t| t.normalized.clone()).collect();
        lengths.push(span_tokens.len());
        spans.insert(span_norm.join(" "));

        let tags = match analyze(&record.text, tagger) {
            Ok(sentence) => {
                let sentence_norm: Vec<String> = sentence.tokens.iter().map(|t| t.normalized.clone()).collect();
                match locate(&sentence_norm, &span_norm) {
                    Some(span) => sentence.span_tags(span).to_vec(),
                    None => tagger.tag(&span_tokens)?,
                }
            }
            Err(_) => tagger.tag(&span_tokens)?,
        };
        ngrams.insert(join_tags(&tags));
    }

    let n_spans = lengths.len();
    let has_span_stats = n_spans > 0;
    let (avg, pct_long) = if has_span_stats {
        let total: usize = lengths.iter().sum();
        let long = lengths.iter().filter(|&&l| l > 1).count();
        (total as f64 / n_spans as f64, 100.0 * long as f64 / n_spans as f64)
    } else {
        (0.0, 0.0)
    };
    Ok(CorpusStats {
        n_total,
        n_non_hypo_sampled: n_non_hypo,
        pct_non_hypo: if n_total == 0 {
            0.0
        } else {
            100.0 * n_non_hypo as f64 / n_total as f64
        },
        n_spans,
        has_span_stats,
        avg_span_tokens: avg,
        pct_long_spans: pct_long,
        n_distinct_spans: spans.len(),
        n_distinct_pos_ngrams: ngrams.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagger::LexiconTagger;

    struct Fixed(Vec<(&'static str, f64)>);

    impl HyperboleScorer for Fixed {
        fn hyperbole_score(&self, text: &str) -> Result<f64, BackendError> {
            self.0
                .iter()
                .find(|(t, _)| *t == text)
                .map(|(_, p)| *p)
                .ok_or_else(|| BackendError::Unavailable("offline".into()))
        }
    }

    fn records(texts: &[&str]) -> Vec<CorpusRecord> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| CorpusRecord::new(i.to_string(), *t))
            .collect()
    }

    #[test]
    fn cleaning_examples() {
        let mut cleaner = clean_corpus(["The cat.", "the cat.", "The cat."]);
        let kept: Vec<_> = cleaner.by_ref().collect();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id, "s00000000");
        assert_eq!(
            cleaner.report(),
            CleanReport {
                seen: 3,
                kept: 1,
                duplicates: 1,
                incomplete: 1
            }
        );
        assert_eq!(clean_corpus(["it rains."]).count(), 0);
        assert_eq!(
            clean_corpus(["Émile smiled.", "\"Quoted.\"", "  ", "The  cat.", "THE CAT."]).count(),
            2
        );
    }

    #[test]
    fn filter_is_strict_at_threshold() {
        let scorer = Fixed(vec![("a", 0.9), ("b", 0.8), ("c", 0.79)]);
        let kept = filter_by_classifier(records(&["a", "b", "c"]), &scorer, 0.8).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].probability, Some(0.9));
        let all = filter_by_classifier(records(&["a", "b", "c"]), &scorer, 0.0).unwrap();
        assert_eq!(all.len(), 3);
        assert!(filter_by_classifier(records(&["a"]), &scorer, 1.0).is_err());
        assert!(matches!(
            filter_by_classifier(records(&["zzz"]), &scorer, 0.5),
            Err(CorpusError::Backend(BackendError::Unavailable(_)))
        ));
    }

    #[test]
    fn filter_keeps_existing_probabilities_and_order() {
        let scorer = Fixed(vec![("a", 0.9), ("c", 0.95)]);
        let mut input = records(&["a", "b", "c"]);
        input[1].probability = Some(0.99);
        let kept = filter_by_classifier(input, &scorer, 0.5).unwrap();
        let texts: Vec<_> = kept.iter().map(|r| r.text.as_str()).collect();
        assert_eq!(texts, ["a", "b", "c"]);
    }

    #[test]
    fn sampling() {
        let pool = records(&["A", "B", "C", "D", "E", "F", "G", "H", "I", "J"]);
        let whole = sample_for_annotation(&pool, 10, 1).unwrap();
        assert_eq!(whole.records, pool);
        let a = sample_for_annotation(&pool, 4, 42).unwrap();
        let b = sample_for_annotation(&pool, 4, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 4);
        assert!(matches!(
            sample_for_annotation(&pool, 11, 0),
            Err(CorpusError::PoolTooSmall {
                requested: 11,
                available: 10
            })
        ));
    }

    #[test]
    fn merge_keeps_unanimous() {
        let batch = AnnotationBatch {
            records: records(&["A", "B", "C"]),
            labels_a: vec![Some(Label::Hyperbole), Some(Label::Hyperbole), Some(Label::Literal)],
            labels_b: vec![Some(Label::Hyperbole), Some(Label::Literal), Some(Label::Literal)],
        };
        let out = merge_annotations(&batch).unwrap();
        assert_eq!(out.kept.len(), 2);
        assert_eq!(out.dropped, 1);
        assert_eq!((out.positives, out.negatives), (1, 1));
        assert_eq!(out.kept[0].label, Some(Label::Hyperbole));
        assert!((out.raw_agreement - 2.0 / 3.0).abs() < 1e-15);

        let mut incomplete = batch.clone();
        incomplete.labels_b[2] = None;
        assert!(matches!(
            merge_annotations(&incomplete),
            Err(CorpusError::IncompleteLabels { .. })
        ));
        incomplete.labels_b.pop();
        assert!(matches!(
            merge_annotations(&incomplete),
            Err(CorpusError::MisalignedLabels { .. })
        ));
    }

    #[test]
    fn batch_record_round_trip() {
        let mut batch = sample_for_annotation(&records(&["A", "B"]), 2, 0).unwrap();
        batch.labels_a = vec![Some(Label::Hyperbole), Some(Label::Literal)];
        batch.labels_b = vec![Some(Label::Hyperbole), Some(Label::Hyperbole)];
        let back = AnnotationBatch::from_records(batch.to_records());
        assert_eq!(back.labels_a, batch.labels_a);
        assert_eq!(back.labels_b, batch.labels_b);
    }

    #[test]
    fn record_json_shape() {
        let line = r#"{"id":"7","text":"It took ages.","label":"hyperbole","prob":0.93}"#;
        let r: CorpusRecord = serde_json::from_str(line).unwrap();
        assert_eq!(r.label, Some(Label::Hyperbole));
        assert_eq!(r.probability, Some(0.93));
        assert_eq!(serde_json::to_string(&r).unwrap(), line);
        let minimal: CorpusRecord = serde_json::from_str(r#"{"id":"1","text":"x"}"#).unwrap();
        assert_eq!(minimal.label, None);
    }

    #[test]
    fn span_statistics() {
        let tagger = LexiconTagger::builtin();
        let mut a = CorpusRecord::new("1", "His words confirmed everything.");
        a.span = Some("everything".into());
        let mut b = CorpusRecord::new("2", "He is faster than light.");
        b.span = Some("faster than light".into());
        let mut c = CorpusRecord::new("3", "It is a dog.");
        c.label = Some(Label::Literal);
        let stats = corpus_stats(&[a, b, c], &tagger).unwrap();
        assert_eq!(stats.n_total, 3);
        assert_eq!(stats.n_non_hypo_sampled, 1);
        assert!(stats.has_span_stats);
        assert_eq!(stats.avg_span_tokens, 2.0);
        assert_eq!(stats.pct_long_spans, 50.0);
        assert_eq!(stats.n_distinct_spans, 2);
        assert_eq!(stats.n_distinct_pos_ngrams, 2);

        let empty = corpus_stats(&records(&["A b."]), &tagger).unwrap();
        assert!(!empty.has_span_stats);
        assert_eq!((empty.avg_span_tokens, empty.n_distinct_spans), (0.0, 0));
    }
}
