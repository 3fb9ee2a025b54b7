//! BLEU scoring and the comparison systems: COPY, retrieval (R1), retrieval
//! with span substitution (R3) and the full generator with its ablations.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::BufRead;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, ParaphraseScorer, Tagger};
use crate::embedding::EmbeddingStore;
use crate::masking::{match_spans, rank_spans, PatternSet, DEFAULT_TOP_K};
use crate::pipeline::{Pipeline, PipelineError};
use crate::ranker::{rank_and_select, RankError, RankMode, RankerConfig, Scorers};
use crate::text::{analyze, detokenize, tokenize, PosTag, TaggedSentence, TextError};

pub const MAX_ORDER: usize = 4;
/// Numerator used for an n-gram order with no matches, once at least one
/// unigram matched.
pub const SMOOTHING_EPSILON: f64 = 0.1;
pub const R3_RETRIEVED: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("line {line}: {message}")]
    CaseFormat { line: usize, message: String },
    #[error("retrieval corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub literal: String,
    pub references: Vec<String>,
}

/// Reads `{"literal": .., "references": [..]}` lines; blank lines are skipped.
pub fn read_cases(reader: impl BufRead) -> Result<Vec<EvalCase>, EvalError> {
    let mut cases = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let case: EvalCase = serde_json::from_str(&line).map_err(|e| EvalError::CaseFormat {
            line: i + 1,
            message: e.to_string(),
        })?;
        if case.references.is_empty() {
            return Err(EvalError::CaseFormat {
                line: i + 1,
                message: "case has no references".into(),
            });
        }
        cases.push(case);
    }
    Ok(cases)
}

// BLEU

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl std::ops::AddAssign for BleuStats {
    fn add_assign(&mut self, other: Self) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }
}

fn bleu_tokens(text: &str) -> Vec<String> {
    match tokenize(text) {
        Ok(tokens) => tokens.into_iter().map(|t| t.surface).collect(),
        Err(_) => Vec::new(),
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches against the references, plus the reference length
/// closest to the hypothesis length (the shorter on ties).
pub fn bleu_stats(hypothesis: &[String], references: &[Vec<String>]) -> BleuStats {
    let mut stats = BleuStats {
        hyp_len: hypothesis.len(),
        ..BleuStats::default()
    };
    for n in 1..=MAX_ORDER {
        let hyp = ngram_counts(hypothesis, n);
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for reference in references {
            for (gram, count) in ngram_counts(reference, n) {
                let slot = max_ref.entry(gram).or_insert(0);
                *slot = (*slot).max(count);
            }
        }
        stats.matches[n - 1] = hyp
            .iter()
            .map(|(gram, &count)| count.min(max_ref.get(gram).copied().unwrap_or(0)))
            .sum();
        // At least 1 per segment, so short segments still count at corpus level.
        stats.totals[n - 1] = hypothesis.len().saturating_sub(n - 1).max(1);
    }
    stats.ref_len = references
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(hypothesis.len()), r))
        .unwrap_or(0);
    stats
}

/// Geometric mean of the modified precisions with uniform weights, times
/// the brevity penalty. Zero when no unigram matched; an order with no
/// matches otherwise counts as `SMOOTHING_EPSILON / total`.
pub fn bleu_from_stats(stats: &BleuStats) -> f64 {
    if stats.matches[0] == 0 || stats.hyp_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..MAX_ORDER {
        let total = stats.totals[n] as f64;
        let p = if stats.matches[n] == 0 {
            SMOOTHING_EPSILON / total
        } else {
            stats.matches[n] as f64 / total
        };
        log_sum += p.ln() / MAX_ORDER as f64;
    }
    let (c, r) = (stats.hyp_len as f64, stats.ref_len as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * log_sum.exp()
}

pub fn sentence_bleu<S: AsRef<str>>(hypothesis: &str, references: &[S]) -> f64 {
    let refs: Vec<Vec<String>> = references.iter().map(|r| bleu_tokens(r.as_ref())).collect();
    bleu_from_stats(&bleu_stats(&bleu_tokens(hypothesis), &refs))
}

/// Statistics summed over all pairs before combining.
pub fn corpus_bleu<H: AsRef<str>, S: AsRef<str>>(pairs: &[(H, Vec<S>)]) -> f64 {
    let mut total = BleuStats::default();
    for (hypothesis, references) in pairs {
        let refs: Vec<Vec<String>> = references.iter().map(|r| bleu_tokens(r.as_ref())).collect();
        total += bleu_stats(&bleu_tokens(hypothesis.as_ref()), &refs);
    }
    bleu_from_stats(&total)
}

// Systems

pub trait System: Send + Sync {
    fn name(&self) -> &str;
    fn generate(&self, literal: &str) -> Result<String, EvalError>;
}

pub struct CopySystem;

impl System for CopySystem {
    fn name(&self) -> &str {
        "COPY"
    }

    fn generate(&self, literal: &str) -> Result<String, EvalError> {
        Ok(literal.trim().to_string())
    }
}

/// Indices of the `k` corpus sentences with the highest paraphrase score
/// against `literal`, best first; ties keep corpus order.
pub fn retrieve(
    literal: &str,
    corpus: &[String],
    paraphrase: &dyn ParaphraseScorer,
    k: usize,
) -> Result<Vec<(usize, f64)>, EvalError> {
    if corpus.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let mut scored = corpus
        .iter()
        .enumerate()
        .map(|(i, s)| Ok((i, paraphrase.paraphrase_score(literal, s)?)))
        .collect::<Result<Vec<_>, BackendError>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    scored.truncate(k);
    Ok(scored)
}

/// The corpus sentence closest in meaning to `literal`.
pub fn run_r1(literal: &str, corpus: &[String], paraphrase: &dyn ParaphraseScorer) -> Result<String, EvalError> {
    let best = retrieve(literal, corpus, paraphrase, 1)?;
    Ok(corpus[best[0].0].clone())
}

pub struct R1System {
    pub corpus: Arc<Vec<String>>,
    pub paraphrase: Arc<dyn ParaphraseScorer>,
}

impl System for R1System {
    fn name(&self) -> &str {
        "R1"
    }

    fn generate(&self, literal: &str) -> Result<String, EvalError> {
        run_r1(literal.trim(), &self.corpus, self.paraphrase.as_ref())
    }
}

fn set_initial_case(word: &str, upper: bool) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) if upper => first.to_uppercase().chain(chars).collect(),
        Some(first) => first.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn is_proper(tag: PosTag, surface: &str) -> bool {
    matches!(tag, PosTag::Nnp | PosTag::Nnps) || surface == "I" || surface.starts_with("I'")
}

/// Replaces `input[target]` with `donor[span]`, fixing the case of the
/// first word at the seam: capitalized at sentence start, lowercased
/// elsewhere unless it is a proper noun.
fn substitute(
    input: &TaggedSentence,
    target: crate::text::Span,
    donor: &TaggedSentence,
    span: crate::text::Span,
) -> String {
    let mut words: Vec<String> = input.surfaces()[..target.start].iter().map(|s| s.to_string()).collect();
    for (offset, i) in span.range().enumerate() {
        let surface = &donor.tokens[i].surface;
        let word = if offset > 0 {
            surface.clone()
        } else if target.start == 0 {
            let upper = input.tokens[0].surface.chars().next().is_some_and(char::is_uppercase);
            if upper || is_proper(donor.tags[i], surface) {
                set_initial_case(surface, true)
            } else {
                surface.clone()
            }
        } else if i == 0 && !is_proper(donor.tags[i], surface) {
            set_initial_case(surface, false)
        } else {
            surface.clone()
        };
        words.push(word);
    }
    words.extend(input.surfaces()[target.end..].iter().map(|s| s.to_string()));
    detokenize(&words)
}

/// Variants of `input` built by swapping each pattern-matched span for a
/// hyperbolic span with the same tag sequence from a retrieved sentence.
pub fn r3_variants(
    input: &TaggedSentence,
    retrieved: &[TaggedSentence],
    patterns: &PatternSet,
    store: &EmbeddingStore,
    spans_per_sentence: usize,
) -> Vec<String> {
    let input_spans = match_spans(input, patterns);
    let literal = input.text();
    let mut seen = HashSet::new();
    let mut variants = Vec::new();
    for donor in retrieved {
        for (span, _) in rank_spans(donor, patterns, store).into_iter().take(spans_per_sentence) {
            let tags = donor.span_tags(span);
            for &target in &input_spans {
                if input.span_tags(target) != tags {
                    continue;
                }
                let variant = substitute(input, target, donor, span);
                if variant != literal && seen.insert(variant.clone()) {
                    variants.push(variant);
                }
            }
        }
    }
    variants
}

pub struct R3System {
    pub corpus: Arc<Vec<String>>,
    pub tagger: Arc<dyn Tagger>,
    pub paraphrase: Arc<dyn ParaphraseScorer>,
    pub scorers: Arc<Scorers>,
    pub patterns: Arc<PatternSet>,
    pub store: Arc<EmbeddingStore>,
    pub config: RankerConfig,
}

impl R3System {
    pub fn run(&self, literal: &str) -> Result<String, EvalError> {
        let literal = literal.trim();
        let top = retrieve(literal, &self.corpus, self.paraphrase.as_ref(), R3_RETRIEVED)?;
        let input = analyze(literal, self.tagger.as_ref())?;
        let retrieved = top
            .iter()
            .map(|&(i, _)| analyze(&self.corpus[i], self.tagger.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        let variants = r3_variants(&input, &retrieved, &self.patterns, &self.store, DEFAULT_TOP_K);
        if variants.is_empty() {
            return Ok(self.corpus[top[0].0].clone());
        }
        let selection = rank_and_select(&input.text(), &variants, &self.scorers, &self.config)?;
        Ok(selection.chosen.text)
    }
}

impl System for R3System {
    fn name(&self) -> &str {
        "R3"
    }

    fn generate(&self, literal: &str) -> Result<String, EvalError> {
        self.run(literal)
    }
}

/// The generator under one ranking mode.
pub struct MoverSystem {
    pub name: String,
    pub pipeline: Arc<Pipeline>,
    pub mode: RankMode,
}

impl MoverSystem {
    pub fn new(pipeline: Arc<Pipeline>, mode: RankMode) -> Self {
        let name = match mode {
            RankMode::Full => "MOVER",
            RankMode::HypoOnly => "MOVER-HypoOnly",
            RankMode::Random { .. } => "MOVER-Random",
        };
        Self {
            name: name.to_string(),
            pipeline,
            mode,
        }
    }
}

impl System for MoverSystem {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, literal: &str) -> Result<String, EvalError> {
        Ok(self.pipeline.generate_with(literal, self.mode)?.output)
    }
}

// Reports

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemReport {
    pub system: String,
    /// Corpus BLEU over all cases on a 0 to 100 scale; absent when any case
    /// failed.
    pub bleu: Option<f64>,
    pub failures: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_error: Option<String>,
    pub outputs: Vec<Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub cases: usize,
    pub systems: Vec<SystemReport>,
}

impl EvalReport {
    pub fn system(&self, name: &str) -> Option<&SystemReport> {
        self.systems.iter().find(|s| s.system == name)
    }

    pub fn to_table(&self) -> String {
        let width = self.systems.iter().map(|s| s.system.len()).max().unwrap_or(6).max(6);
        let mut out = format!("{:<width$}  {:>7}  {:>8}\n", "system", "BLEU", "failures");
        for s in &self.systems {
            let bleu = s.bleu.map_or_else(|| "-".to_string(), |b| format!("{b:.2}"));
            let _ = writeln!(out, "{:<width$}  {:>7}  {:>8}", s.system, bleu, s.failures);
        }
        let _ = writeln!(out, "({} cases)", self.cases);
        out
    }
}

/// Runs every system over every case in parallel. A failing case marks its
/// system's BLEU as unavailable without stopping the other systems.
pub fn evaluate_systems(cases: &[EvalCase], systems: &[&dyn System]) -> EvalReport {
    let reports = systems
        .iter()
        .map(|system| {
            let results: Vec<Result<String, EvalError>> =
                cases.par_iter().map(|c| system.generate(&c.literal)).collect();
            let failures = results.iter().filter(|r| r.is_err()).count();
            let first_error = results.iter().find_map(|r| r.as_ref().err().map(|e| e.to_string()));
            if let Some(e) = &first_error {
                log::warn!("{}: {failures} case(s) failed; first: {e}", system.name());
            }
            let outputs: Vec<Option<String>> = results.into_iter().map(Result::ok).collect();
            let bleu = (failures == 0).then(|| {
                let pairs: Vec<(&str, Vec<&str>)> = outputs
                    .iter()
                    .zip(cases)
                    .map(|(o, c)| {
                        let hyp = o.as_deref().unwrap_or_default();
                        (hyp, c.references.iter().map(String::as_str).collect())
                    })
                    .collect();
                corpus_bleu(&pairs) * 100.0
            });
            SystemReport {
                system: system.name().to_string(),
                bleu,
                failures,
                first_error,
                outputs,
            }
        })
        .collect();
    EvalReport {
        cases: cases.len(),
        systems: reports,
    }
}
