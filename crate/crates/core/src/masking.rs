//! POS n-gram pattern library, hyperbolic span candidates and masking.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingStore, SentenceVectors};
use crate::text::{detokenize, PosTag, Span, TaggedSentence, TextError, MASK_TOKEN};

/// Longest pattern kept by default.
pub const DEFAULT_MAX_PATTERN_LEN: usize = 5;
/// Masks kept per training sentence.
pub const DEFAULT_TOP_K: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum MaskError {
    #[error("no pattern pairs given")]
    NoPairs,
    #[error("sentences share no words")]
    NoOverlap,
    #[error("no span matches any pattern")]
    NoMatch,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("source sentence already contains the mask placeholder")]
    PlaceholderInSource,
    #[error("pattern file line {line}: {message}")]
    PatternFormat { line: usize, message: String },
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PosPattern {
    pub tags: Vec<PosTag>,
    pub support: usize,
}

impl fmt::Display for PosPattern {
    /// `JJR+IN+NN<TAB>support`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}", join_tags(&self.tags), self.support)
    }
}

pub fn join_tags(tags: &[PosTag]) -> String {
    tags.iter().map(|t| t.as_str()).collect::<Vec<_>>().join("+")
}

pub fn parse_tags(joined: &str) -> Result<Vec<PosTag>, TextError> {
    joined.split('+').map(PosTag::from_str).collect()
}

/// Distinct tag sequences with their support counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PatternSet {
    patterns: BTreeMap<Vec<PosTag>, usize>,
    max_len: usize,
}

impl PatternSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, tags: Vec<PosTag>, support: usize) {
        if tags.is_empty() || support == 0 {
            return;
        }
        self.max_len = self.max_len.max(tags.len());
        *self.patterns.entry(tags).or_insert(0) += support;
    }

    pub fn contains(&self, tags: &[PosTag]) -> bool {
        self.patterns.contains_key(tags)
    }

    pub fn support(&self, tags: &[PosTag]) -> Option<usize> {
        self.patterns.get(tags).copied()
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn iter(&self) -> impl Iterator<Item = PosPattern> + '_ {
        self.patterns.iter().map(|(tags, &support)| PosPattern {
            tags: tags.clone(),
            support,
        })
    }

    /// Drops patterns seen fewer than `min_support` times.
    pub fn with_min_support(self, min_support: usize) -> Self {
        let mut out = Self::new();
        for (tags, support) in self.patterns {
            if support >= min_support {
                out.add(tags, support);
            }
        }
        out
    }

    pub fn read_from(reader: impl BufRead) -> Result<Self, MaskError> {
        let mut set = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |message: String| MaskError::PatternFormat { line: i + 1, message };
            let (joined, support) = match line.split_once('\t') {
                Some((joined, support)) => {
                    let support = support
                        .trim()
                        .parse::<usize>()
                        .map_err(|e| bad(format!("support {support:?}: {e}")))?;
                    (joined, support)
                }
                None => (line, 1),
            };
            let tags = parse_tags(joined).map_err(|e| bad(e.to_string()))?;
            if support == 0 {
                return Err(bad("support must be at least 1".into()));
            }
            set.add(tags, support);
        }
        Ok(set)
    }

    /// Writes one pattern per line, most frequent first.
    pub fn write_to(&self, mut writer: impl Write) -> std::io::Result<()> {
        let mut patterns: Vec<PosPattern> = self.iter().collect();
        patterns.sort_by(|a, b| b.support.cmp(&a.support).then_with(|| a.tags.cmp(&b.tags)));
        for pattern in patterns {
            writeln!(writer, "{pattern}")?;
        }
        Ok(())
    }
}

impl<I: IntoIterator<Item = Vec<PosTag>>> From<I> for PatternSet {
    fn from(iter: I) -> Self {
        let mut set = PatternSet::new();
        for tags in iter {
            set.add(tags, 1);
        }
        set
    }
}

/// Which part of a `hypo` / `non_hypo` alignment is taken as the hyperbolic
/// span.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanReading {
    /// The longest run of words the two sentences share.
    #[default]
    Shared,
    /// The longest run of `hypo` words outside the shared run.
    Residual,
}

impl FromStr for SpanReading {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shared" => Ok(Self::Shared),
            "residual" => Ok(Self::Residual),
            other => Err(format!("unknown span reading `{other}` (shared|residual)")),
        }
    }
}

/// Longest common contiguous run of normalized tokens, as
/// `(start in a, start in b, length)`. Ties go to the earliest position in
/// `a`, then in `b`.
pub fn longest_common_run(a: &[&str], b: &[&str]) -> Option<(usize, usize, usize)> {
    let mut best: Option<(usize, usize, usize)> = None;
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { 0 };
            let len = cur[j + 1];
            if len > 0 {
                let cand = (i + 1 - len, j + 1 - len, len);
                let better = match best {
                    None => true,
                    Some((bi, bj, bl)) => len > bl || (len == bl && (cand.0, cand.1) < (bi, bj)),
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

fn trim_punctuation(sentence: &TaggedSentence, mut start: usize, mut end: usize) -> Option<Span> {
    while start < end && sentence.tags[start].is_punctuation() {
        start += 1;
    }
    while end > start && sentence.tags[end - 1].is_punctuation() {
        end -= 1;
    }
    (start < end).then(|| Span::new(start, end))
}

/// The hyperbolic span of `hypo` under `reading`, or `Ok(None)` when the two
/// sentences are the same up to punctuation.
pub fn hyperbolic_span(
    hypo: &TaggedSentence,
    non_hypo: &TaggedSentence,
    reading: SpanReading,
) -> Result<Option<Span>, MaskError> {
    let a: Vec<&str> = hypo.tokens.iter().map(|t| t.normalized.as_str()).collect();
    let b: Vec<&str> = non_hypo.tokens.iter().map(|t| t.normalized.as_str()).collect();
    let (start, _, len) = longest_common_run(&a, &b).ok_or(MaskError::NoOverlap)?;
    let overlap = trim_punctuation(hypo, start, start + len).ok_or(MaskError::NoOverlap)?;
    let uncovered = [
        trim_punctuation(hypo, 0, overlap.start),
        trim_punctuation(hypo, overlap.end, hypo.len()),
    ];
    if uncovered.iter().all(Option::is_none) {
        return Ok(None);
    }
    Ok(match reading {
        SpanReading::Shared => Some(overlap),
        SpanReading::Residual => uncovered
            .into_iter()
            .flatten()
            .fold(None, |best: Option<Span>, run| match best {
                Some(b) if b.len() >= run.len() => Some(b),
                _ => Some(run),
            }),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct ExtractOptions {
    pub reading: SpanReading,
    pub max_len: usize,
    pub min_support: usize,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            reading: SpanReading::Shared,
            max_len: DEFAULT_MAX_PATTERN_LEN,
            min_support: 1,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PatternExtraction {
    pub patterns: PatternSet,
    /// Hyperbolic span found for each pair, `None` when skipped.
    pub spans: Vec<Option<Span>>,
    pub no_overlap: usize,
    pub identical: usize,
    pub too_long: usize,
}

pub fn extract_pos_patterns(
    pairs: &[(TaggedSentence, TaggedSentence)],
    options: ExtractOptions,
) -> Result<PatternExtraction, MaskError> {
    if pairs.is_empty() {
        return Err(MaskError::NoPairs);
    }
    let mut out = PatternExtraction::default();
    for (hypo, non_hypo) in pairs {
        let span = match hyperbolic_span(hypo, non_hypo, options.reading) {
            Ok(Some(span)) if span.len() <= options.max_len => Some(span),
            Ok(Some(_)) => {
                out.too_long += 1;
                None
            }
            Ok(None) => {
                out.identical += 1;
                None
            }
            Err(MaskError::NoOverlap) => {
                out.no_overlap += 1;
                None
            }
            Err(e) => return Err(e),
        };
        if let Some(span) = span {
            out.patterns.add(hypo.span_tags(span).to_vec(), 1);
        }
        out.spans.push(span);
    }
    out.patterns = out.patterns.with_min_support(options.min_support);
    Ok(out)
}

/// Spans whose tag sequence is in `patterns`, ordered by `(start, length)`.
pub fn match_spans(sentence: &TaggedSentence, patterns: &PatternSet) -> Vec<Span> {
    let mut spans = Vec::new();
    for start in 0..sentence.len() {
        let longest = patterns.max_len().min(sentence.len() - start);
        for n in 1..=longest {
            let span = Span::new(start, start + n);
            if patterns.contains(sentence.span_tags(span)) {
                spans.push(span);
            }
        }
    }
    spans
}

/// A sentence with one span replaced by [`MASK_TOKEN`].
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSentence {
    pub source: Arc<TaggedSentence>,
    pub masked_span: Span,
    pub text: Vec<String>,
    /// Span unexpectedness, when the mask was chosen by it.
    pub unexpectedness: Option<f64>,
}

impl MaskedSentence {
    pub fn new(source: Arc<TaggedSentence>, span: Span) -> Result<Self, MaskError> {
        let span = Span::checked(span.start, span.end, source.len())?;
        if source.tokens.iter().any(|t| t.surface == MASK_TOKEN) {
            return Err(MaskError::PlaceholderInSource);
        }
        let mut text = Vec::with_capacity(source.len() - span.len() + 1);
        text.extend(source.tokens[..span.start].iter().map(|t| t.surface.clone()));
        text.push(MASK_TOKEN.to_string());
        text.extend(source.tokens[span.end..].iter().map(|t| t.surface.clone()));
        Ok(Self {
            source,
            masked_span: span,
            text,
            unexpectedness: None,
        })
    }

    pub fn masked_text(&self) -> String {
        detokenize(&self.text)
    }

    pub fn mask_position(&self) -> usize {
        self.masked_span.start
    }

    /// Replaces the placeholder with `fill`.
    pub fn splice<S: AsRef<str>>(&self, fill: &[S]) -> Vec<String> {
        let at = self.mask_position();
        let mut out = Vec::with_capacity(self.text.len() + fill.len());
        out.extend(self.text[..at].iter().cloned());
        out.extend(fill.iter().map(|s| s.as_ref().to_string()));
        out.extend(self.text[at + 1..].iter().cloned());
        out
    }

    /// Splicing the original span back reproduces the source tokens.
    pub fn reconstructs_source(&self) -> bool {
        let placeholders = self.text.iter().filter(|t| *t == MASK_TOKEN).count();
        placeholders == 1
            && self.text[self.mask_position()] == MASK_TOKEN
            && self.splice(&self.source.span_surfaces(self.masked_span)) == self.source.surfaces()
    }

    pub fn span_text(&self) -> String {
        self.source.span_text(self.masked_span)
    }
}

/// Matched spans ordered by span unexpectedness, highest first; ties go to
/// the earlier start, then the shorter span.
pub fn rank_spans(sentence: &TaggedSentence, patterns: &PatternSet, store: &EmbeddingStore) -> Vec<(Span, f64)> {
    let vectors = SentenceVectors::new(sentence, store);
    let mut scored: Vec<(Span, f64)> = match_spans(sentence, patterns)
        .into_iter()
        .map(|span| (span, vectors.span(span).value))
        .collect();
    scored.sort_by(|(sa, ua), (sb, ub)| {
        ub.total_cmp(ua)
            .then(sa.start.cmp(&sb.start))
            .then(sa.len().cmp(&sb.len()))
    });
    scored
}

pub fn select_training_masks(
    sentence: &Arc<TaggedSentence>,
    patterns: &PatternSet,
    store: &EmbeddingStore,
    k: usize,
) -> Result<Vec<MaskedSentence>, MaskError> {
    if k == 0 {
        return Err(MaskError::ZeroK);
    }
    let ranked = rank_spans(sentence, patterns, store);
    if ranked.is_empty() {
        return Err(MaskError::NoMatch);
    }
    ranked
        .into_iter()
        .take(k)
        .map(|(span, score)| {
            let mut masked = MaskedSentence::new(Arc::clone(sentence), span)?;
            masked.unexpectedness = Some(score);
            Ok(masked)
        })
        .collect()
}

/// Keeps the first of any masks with identical masked text.
pub fn dedup_masks(masks: Vec<MaskedSentence>) -> Vec<MaskedSentence> {
    let mut seen = HashSet::new();
    masks.into_iter().filter(|m| seen.insert(m.masked_text())).collect()
}

/// Inference-time masking: one mask per matched span.
pub fn mask_all(sentence: &Arc<TaggedSentence>, patterns: &PatternSet) -> Result<Vec<MaskedSentence>, MaskError> {
    let spans = match_spans(sentence, patterns);
    if spans.is_empty() {
        return Err(MaskError::NoMatch);
    }
    let masks = spans
        .into_iter()
        .map(|span| MaskedSentence::new(Arc::clone(sentence), span))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(dedup_masks(masks))
}

pub fn exact_match(predicted: &[Span], gold: Span) -> bool {
    predicted.contains(&gold)
}

/// Fraction of cases whose gold span is among the predictions.
pub fn exact_match_rate<'a>(cases: impl IntoIterator<Item = (&'a [Span], Span)>) -> f64 {
    let (mut hits, mut total) = (0usize, 0usize);
    for (predicted, gold) in cases {
        total += 1;
        hits += usize::from(exact_match(predicted, gold));
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}
