//! Tokenization, Penn Treebank tags, spans and n-gram enumeration.
//!
//! The tokenizer is rule based and frozen by the golden probe file under
//! `tests/data`. Its rules:
//!
//! * split on Unicode whitespace;
//! * a chunk made only of quote, bracket or sentence punctuation characters
//!   becomes one token per character;
//! * otherwise leading openers (`"` `'` `` ` `` `(` `[` `{` `“` `‘`) and
//!   trailing closers (`.` `,` `!` `?` `;` `:` `"` `'` `)` `]` `}` `”` `’`)
//!   are peeled off one character at a time;
//! * the remaining core keeps internal punctuation, so hyphenated words
//!   (`ice-cream`) and numerals (`3.5`, `1,000`) stay whole;
//! * a core ending in `n't` is split before it (`can't` → `ca n't`), and a
//!   core ending in `'s 're 've 'll 'd 'm` is split before the apostrophe.
//!   Curly apostrophes are treated like straight ones.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, Tagger};

/// Placeholder token that replaces a masked span.
pub const MASK_TOKEN: &str = "<mask>";

const OPENERS: &[char] = &['"', '\'', '`', '(', '[', '{', '“', '‘'];
const CLOSERS: &[char] = &['.', ',', '!', '?', ';', ':', '"', '\'', ')', ']', '}', '”', '’'];
const CONTRACTION_SUFFIXES: &[&str] = &["'s", "'re", "'ve", "'ll", "'d", "'m"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TextError {
    #[error("input is empty")]
    EmptyInput,
    #[error("tagger returned {got} tags for {expected} tokens")]
    TagCountMismatch { expected: usize, got: usize },
    #[error("unknown Penn Treebank tag `{0}`")]
    UnknownTag(String),
    #[error("span [{start}, {end}) is invalid for a sentence of {len} tokens")]
    InvalidSpan { start: usize, end: usize, len: usize },
    #[error("n-gram bounds must satisfy 1 <= min ({min}) <= max ({max})")]
    InvalidNgramBounds { min: usize, max: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub normalized: String,
    pub index: usize,
}

impl Token {
    pub fn new(surface: impl Into<String>, index: usize) -> Self {
        let surface = surface.into();
        let normalized = normalize(&surface);
        Self {
            surface,
            normalized,
            index,
        }
    }
}

/// Lowercases and folds curly apostrophes to `'`.
pub fn normalize(surface: &str) -> String {
    surface
        .chars()
        .map(|c| if c == '’' { '\'' } else { c })
        .flat_map(char::to_lowercase)
        .collect()
}

macro_rules! pos_tags {
    ($($variant:ident => $name:literal),* $(,)?) => {
        /// Penn Treebank part-of-speech tag.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum PosTag {
            $($variant),*
        }

        impl PosTag {
            pub const ALL: &'static [PosTag] = &[$(PosTag::$variant),*];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(PosTag::$variant => $name),*
                }
            }
        }

        impl FromStr for PosTag {
            type Err = TextError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($name => Ok(PosTag::$variant),)*
                    "(" => Ok(PosTag::Lrb),
                    ")" => Ok(PosTag::Rrb),
                    other => Err(TextError::UnknownTag(other.to_string())),
                }
            }
        }
    };
}

pos_tags! {
    Cc => "CC", Cd => "CD", Dt => "DT", Ex => "EX", Fw => "FW", In => "IN",
    Jj => "JJ", Jjr => "JJR", Jjs => "JJS", Ls => "LS", Md => "MD",
    Nn => "NN", Nns => "NNS", Nnp => "NNP", Nnps => "NNPS", Pdt => "PDT",
    Pos => "POS", Prp => "PRP", PrpS => "PRP$", Rb => "RB", Rbr => "RBR",
    Rbs => "RBS", Rp => "RP", Sym => "SYM", To => "TO", Uh => "UH",
    Vb => "VB", Vbd => "VBD", Vbg => "VBG", Vbn => "VBN", Vbp => "VBP",
    Vbz => "VBZ", Wdt => "WDT", Wp => "WP", WpS => "WP$", Wrb => "WRB",
    Hash => "#", Dollar => "$", CloseQuote => "''", OpenQuote => "``",
    Comma => ",", Lrb => "-LRB-", Rrb => "-RRB-", Period => ".", Colon => ":",
}

impl PosTag {
    pub fn is_punctuation(self) -> bool {
        matches!(
            self,
            PosTag::Hash
                | PosTag::Dollar
                | PosTag::CloseQuote
                | PosTag::OpenQuote
                | PosTag::Comma
                | PosTag::Lrb
                | PosTag::Rrb
                | PosTag::Period
                | PosTag::Colon
        )
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for PosTag {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for PosTag {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start < end, "empty span [{start}, {end})");
        Self { start, end }
    }

    /// Builds a span after checking it against a sentence length.
    pub fn checked(start: usize, end: usize, len: usize) -> Result<Self, TextError> {
        if start < end && end <= len {
            Ok(Self { start, end })
        } else {
            Err(TextError::InvalidSpan { start, end, len })
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, index: usize) -> bool {
        self.start <= index && index < self.end
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub raw: String,
    pub tokens: Vec<Token>,
    pub tags: Vec<PosTag>,
}

impl TaggedSentence {
    pub fn new(raw: impl Into<String>, tokens: Vec<Token>, tags: Vec<PosTag>) -> Result<Self, TextError> {
        if tokens.is_empty() {
            return Err(TextError::EmptyInput);
        }
        if tokens.len() != tags.len() {
            return Err(TextError::TagCountMismatch {
                expected: tokens.len(),
                got: tags.len(),
            });
        }
        Ok(Self {
            raw: raw.into(),
            tokens,
            tags,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surfaces(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }

    pub fn span_tags(&self, span: Span) -> &[PosTag] {
        &self.tags[span.range()]
    }

    pub fn span_surfaces(&self, span: Span) -> Vec<&str> {
        self.tokens[span.range()].iter().map(|t| t.surface.as_str()).collect()
    }

    pub fn span_text(&self, span: Span) -> String {
        detokenize(self.span_surfaces(span))
    }

    /// The sentence re-joined from its tokens.
    pub fn text(&self) -> String {
        detokenize(self.surfaces())
    }
}

pub fn tokenize(raw: &str) -> Result<Vec<Token>, TextError> {
    let mut surfaces = Vec::new();
    for chunk in raw.split_whitespace() {
        split_chunk(chunk, &mut surfaces);
    }
    if surfaces.is_empty() {
        return Err(TextError::EmptyInput);
    }
    Ok(surfaces
        .into_iter()
        .enumerate()
        .map(|(i, s)| Token::new(s, i))
        .collect())
}

fn split_chunk(chunk: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = chunk.chars().collect();
    let is_punct = |c: &char| OPENERS.contains(c) || CLOSERS.contains(c);
    if chars.iter().all(is_punct) {
        push_punctuation(&chars, out);
        return;
    }
    let mut lo = 0;
    while OPENERS.contains(&chars[lo]) {
        lo += 1;
    }
    let mut hi = chars.len();
    while CLOSERS.contains(&chars[hi - 1]) {
        hi -= 1;
    }
    push_punctuation(&chars[..lo], out);
    let core: String = chars[lo..hi].iter().collect();
    match contraction_split(&core) {
        Some(at) => {
            out.push(core[..at].to_string());
            out.push(core[at..].to_string());
        }
        None => out.push(core),
    }
    push_punctuation(&chars[hi..], out);
}

/// One token per mark, except that a run of periods stays together.
fn push_punctuation(chars: &[char], out: &mut Vec<String>) {
    let mut i = 0;
    while i < chars.len() {
        let mut j = i + 1;
        if chars[i] == '.' {
            while j < chars.len() && chars[j] == '.' {
                j += 1;
            }
        }
        out.push(chars[i..j].iter().collect());
        i = j;
    }
}

/// Byte offset at which a contraction suffix starts, if any.
fn contraction_split(core: &str) -> Option<usize> {
    let folded = normalize(core);
    // `normalize` may change byte lengths (’ is 3 bytes), so work in chars.
    let core_chars: Vec<(usize, char)> = core.char_indices().collect();
    let folded_chars: Vec<char> = folded.chars().collect();
    if folded_chars.len() != core_chars.len() {
        return None;
    }
    let n = folded_chars.len();
    let ends_with = |suffix: &str| {
        let s: Vec<char> = suffix.chars().collect();
        n > s.len() && folded_chars[n - s.len()..] == s[..]
    };
    if ends_with("n't") {
        return Some(core_chars[n - 3].0);
    }
    CONTRACTION_SUFFIXES
        .iter()
        .find(|s| ends_with(s))
        .map(|s| core_chars[n - s.chars().count()].0)
}

fn is_contraction_suffix(token: &str) -> bool {
    let folded = normalize(token);
    folded == "n't" || CONTRACTION_SUFFIXES.contains(&folded.as_str())
}

/// Joins tokens back into text. `tokenize(detokenize(tokenize(x)))` equals
/// `tokenize(x)`.
pub fn detokenize<S: AsRef<str>>(tokens: impl IntoIterator<Item = S>) -> String {
    let mut out = String::new();
    let mut attach_next = false;
    let mut double_open = false;
    let mut single_open = false;
    let mut prev_plural = false;
    for (i, token) in tokens.into_iter().enumerate() {
        let token = token.as_ref();
        let (attach_prev, opens) = match token {
            // plural possessive: the boys' toys
            "'" if !single_open && prev_plural => (true, false),
            "\"" => {
                double_open = !double_open;
                (!double_open, double_open)
            }
            "'" => {
                single_open = !single_open;
                (!single_open, single_open)
            }
            "(" | "[" | "{" | "`" | "“" | "‘" => (false, true),
            "." | "," | "!" | "?" | ";" | ":" | ")" | "]" | "}" | "”" | "’" => (true, false),
            t if t.len() > 1 && t.chars().all(|c| c == '.') => (true, false),
            t if is_contraction_suffix(t) => (true, false),
            _ => (false, false),
        };
        // keep period runs apart so they re-split the same way
        let attach_prev = attach_prev && !(token.starts_with('.') && out.ends_with('.'));
        if i > 0 && !attach_prev && !attach_next {
            out.push(' ');
        }
        out.push_str(token);
        attach_next = opens;
        prev_plural = token.len() > 1 && token.ends_with(['s', 'S']) && token.chars().all(char::is_alphabetic);
    }
    out
}

pub fn pos_tag(tokens: &[Token], tagger: &dyn Tagger) -> Result<Vec<PosTag>, TextError> {
    if tokens.is_empty() {
        return Err(TextError::EmptyInput);
    }
    let tags = tagger.tag(tokens)?;
    if tags.len() != tokens.len() {
        return Err(TextError::TagCountMismatch {
            expected: tokens.len(),
            got: tags.len(),
        });
    }
    Ok(tags)
}

/// Tokenizes and tags `raw` in one step.
pub fn analyze(raw: &str, tagger: &dyn Tagger) -> Result<TaggedSentence, TextError> {
    let tokens = tokenize(raw)?;
    let tags = pos_tag(&tokens, tagger)?;
    TaggedSentence::new(raw, tokens, tags)
}

/// All contiguous spans with length in `[min_n, max_n]`, ordered by
/// `(start, length)`.
pub fn enumerate_ngrams(len: usize, min_n: usize, max_n: usize) -> Result<Vec<Span>, TextError> {
    if min_n == 0 || min_n > max_n {
        return Err(TextError::InvalidNgramBounds { min: min_n, max: max_n });
    }
    let mut spans = Vec::new();
    for start in 0..len {
        for n in min_n..=max_n.min(len - start) {
            spans.push(Span::new(start, start + n));
        }
    }
    Ok(spans)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surfaces(raw: &str) -> Vec<String> {
        tokenize(raw).unwrap().into_iter().map(|t| t.surface).collect()
    }

    #[test]
    fn splits_terminal_punctuation() {
        assert_eq!(surfaces("I love you."), ["I", "love", "you", "."]);
        assert_eq!(surfaces("it took you centuries"), ["it", "took", "you", "centuries"]);
    }

    #[test]
    fn splits_contractions() {
        assert_eq!(surfaces("can't"), ["ca", "n't"]);
        assert_eq!(surfaces("I won’t wait"), ["I", "wo", "n’t", "wait"]);
        assert_eq!(surfaces("I've drowned"), ["I", "'ve", "drowned"]);
        assert_eq!(surfaces("n't"), ["n't"]);
    }

    #[test]
    fn keeps_hyphens_and_numerals_whole() {
        assert_eq!(surfaces("ice-cream 1,000 3.5."), ["ice-cream", "1,000", "3.5", "."]);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert_eq!(tokenize("   \t\n"), Err(TextError::EmptyInput));
    }

    #[test]
    fn indices_are_contiguous() {
        let tokens = tokenize("\"Hello,\" she said (twice).").unwrap();
        for (i, t) in tokens.iter().enumerate() {
            assert_eq!(t.index, i);
            assert!(!t.surface.is_empty());
        }
    }

    #[test]
    fn detokenize_reattaches() {
        let toks = surfaces("\"Hello,\" she said (twice), and didn't stop.");
        assert_eq!(detokenize(&toks), "\"Hello,\" she said (twice), and didn't stop.");
        let toks = surfaces("The kids' toys... gone.");
        assert_eq!(toks, ["The", "kids", "'", "toys", "...", "gone", "."]);
        assert_eq!(detokenize(&toks), "The kids' toys... gone.");
    }

    #[test]
    fn ngram_counts() {
        assert_eq!(enumerate_ngrams(3, 1, 1).unwrap().len(), 3);
        assert_eq!(enumerate_ngrams(3, 1, 3).unwrap().len(), 6);
        assert_eq!(enumerate_ngrams(10, 2, 4).unwrap().len(), 24);
        assert!(enumerate_ngrams(1, 2, 4).unwrap().is_empty());
        assert!(enumerate_ngrams(5, 0, 2).is_err());
        assert!(enumerate_ngrams(5, 3, 2).is_err());
    }

    #[test]
    fn ngram_order_is_start_then_length() {
        let spans = enumerate_ngrams(3, 1, 2).unwrap();
        assert_eq!(
            spans,
            vec![
                Span::new(0, 1),
                Span::new(0, 2),
                Span::new(1, 2),
                Span::new(1, 3),
                Span::new(2, 3)
            ]
        );
    }

    #[test]
    fn tag_round_trip() {
        for tag in PosTag::ALL {
            assert_eq!(tag.as_str().parse::<PosTag>().unwrap(), *tag);
        }
        assert!("XYZ".parse::<PosTag>().is_err());
        assert_eq!(PosTag::ALL.len(), 45);
    }

    #[test]
    fn span_bounds_are_checked() {
        assert!(Span::checked(0, 3, 3).is_ok());
        assert!(Span::checked(2, 2, 3).is_err());
        assert!(Span::checked(1, 4, 3).is_err());
    }
}
