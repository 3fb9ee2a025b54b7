//! Built-in lexicon + suffix-rule tagger used when no tagging service is
//! configured.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::backend::{BackendError, Tagger};
use crate::text::{PosTag, TextError, Token};

const BUILTIN_LEXICON: &str = include_str!("../data/lexicon.tsv");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LexiconError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: expected `word<TAB>TAG`, got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("line {line}: {source}")]
    Tag { line: usize, source: TextError },
}

#[derive(Debug, Clone)]
pub struct LexiconTagger {
    lexicon: HashMap<String, PosTag>,
}

impl LexiconTagger {
    pub fn builtin() -> Self {
        let mut tagger = Self {
            lexicon: HashMap::new(),
        };
        tagger
            .extend_from_str(BUILTIN_LEXICON)
            .expect("bundled lexicon is well formed");
        tagger
    }

    /// The built-in lexicon overlaid with the entries of `path`.
    pub fn with_lexicon_file(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| LexiconError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut tagger = Self::builtin();
        tagger.extend_from_str(&raw)?;
        Ok(tagger)
    }

    pub fn extend_from_str(&mut self, raw: &str) -> Result<(), LexiconError> {
        for (i, line) in raw.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, tag) = line.split_once('\t').ok_or_else(|| LexiconError::Malformed {
                line: i + 1,
                text: line.to_string(),
            })?;
            let tag = tag
                .trim()
                .parse()
                .map_err(|source| LexiconError::Tag { line: i + 1, source })?;
            self.lexicon.insert(crate::text::normalize(word.trim()), tag);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.lexicon.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lexicon.is_empty()
    }

    pub fn tag_tokens(&self, tokens: &[Token]) -> Vec<PosTag> {
        let mut tags: Vec<PosTag> = Vec::with_capacity(tokens.len());
        let mut double_quote_open = false;
        for (i, token) in tokens.iter().enumerate() {
            let prev = i.checked_sub(1).map(|p| (&tokens[p], tags[p]));
            let next = tokens.get(i + 1);
            let tag = if token.surface == "\"" {
                double_quote_open = !double_quote_open;
                if double_quote_open {
                    PosTag::OpenQuote
                } else {
                    PosTag::CloseQuote
                }
            } else {
                self.tag_one(token, i == 0, prev, next)
            };
            tags.push(tag);
        }
        tags
    }

    fn tag_one(
        &self,
        token: &Token,
        sentence_initial: bool,
        prev: Option<(&Token, PosTag)>,
        next: Option<&Token>,
    ) -> PosTag {
        let word = token.normalized.as_str();
        if let Some(tag) = punctuation_tag(word) {
            return tag;
        }
        if is_number(word) {
            return PosTag::Cd;
        }
        let prev_tag = prev.map(|(_, t)| t);
        let prev_word = prev.map(|(t, _)| t.normalized.as_str());
        let before_than = next.is_some_and(|n| n.normalized == "than");

        if word == "'s" {
            return match prev_tag {
                Some(PosTag::Prp | PosTag::Ex | PosTag::Wp | PosTag::Wdt) => PosTag::Vbz,
                _ => PosTag::Pos,
            };
        }
        if let Some(&tag) = self.lexicon.get(word) {
            return contextual(tag, word, prev_tag, prev_word, before_than);
        }
        let capitalized = token.surface.chars().next().is_some_and(char::is_uppercase);
        if capitalized && !sentence_initial {
            return if word.ends_with('s') && word.len() > 3 {
                PosTag::Nnps
            } else {
                PosTag::Nnp
            };
        }
        if before_than && (word.ends_with("er") || word.ends_with("ier")) {
            return PosTag::Jjr;
        }
        let guess = suffix_guess(word, prev_tag);
        contextual(guess, word, prev_tag, prev_word, before_than)
    }
}

impl Default for LexiconTagger {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Tagger for LexiconTagger {
    fn tag(&self, tokens: &[Token]) -> Result<Vec<PosTag>, BackendError> {
        Ok(self.tag_tokens(tokens))
    }
}

fn punctuation_tag(word: &str) -> Option<PosTag> {
    let tag = match word {
        "." | "!" | "?" => PosTag::Period,
        "," => PosTag::Comma,
        ":" | ";" | "-" | "--" | "..." | "…" => PosTag::Colon,
        "(" | "[" | "{" => PosTag::Lrb,
        ")" | "]" | "}" => PosTag::Rrb,
        "`" | "``" | "“" | "‘" => PosTag::OpenQuote,
        "'" | "''" | "”" => PosTag::CloseQuote,
        "$" => PosTag::Dollar,
        "#" => PosTag::Hash,
        w if !w.chars().any(char::is_alphanumeric) => PosTag::Sym,
        _ => return None,
    };
    Some(tag)
}

fn is_number(word: &str) -> bool {
    word.chars().next().is_some_and(|c| c.is_ascii_digit())
        && word
            .chars()
            .all(|c| c.is_ascii_digit() || matches!(c, ',' | '.' | '%' | '/' | '-'))
}

fn is_have_or_be(word: Option<&str>) -> bool {
    matches!(
        word,
        Some(
            "have"
                | "has"
                | "had"
                | "'ve"
                | "having"
                | "be"
                | "is"
                | "are"
                | "was"
                | "were"
                | "been"
                | "being"
                | "am"
                | "'re"
                | "'m"
                | "get"
                | "got"
        )
    )
}

fn suffix_guess(word: &str, prev_tag: Option<PosTag>) -> PosTag {
    const ADJECTIVE_SUFFIXES: &[&str] = &[
        "ous", "ful", "ive", "able", "ible", "less", "ic", "al", "ish", "ary", "ant", "ent",
    ];
    const NOUN_SUFFIXES: &[&str] = &[
        "tion", "sion", "ment", "ness", "ity", "ship", "ance", "ence", "ism", "ist", "hood", "dom",
    ];
    let after_infinitive = matches!(prev_tag, Some(PosTag::To | PosTag::Md));
    if after_infinitive {
        return PosTag::Vb;
    }
    if word.ends_with("ly") && word.len() > 4 {
        PosTag::Rb
    } else if word.ends_with("ing") && word.len() > 4 {
        PosTag::Vbg
    } else if word.ends_with("ed") && word.len() > 3 {
        PosTag::Vbd
    } else if word.ends_with("est") && word.len() > 5 {
        PosTag::Jjs
    } else if NOUN_SUFFIXES.iter().any(|s| word.ends_with(s)) {
        PosTag::Nn
    } else if word.ends_with('s')
        && word.len() > 3
        && NOUN_SUFFIXES.iter().any(|s| word.trim_end_matches('s').ends_with(s))
    {
        PosTag::Nns
    } else if ADJECTIVE_SUFFIXES.iter().any(|s| word.ends_with(s)) && word.len() > 4 {
        PosTag::Jj
    } else if word.ends_with('s')
        && word.len() > 3
        && !word.ends_with("ss")
        && !word.ends_with("us")
        && !word.ends_with("is")
    {
        match prev_tag {
            Some(PosTag::Prp | PosTag::Nn | PosTag::Nnp | PosTag::Wdt | PosTag::Wp) => PosTag::Vbz,
            _ => PosTag::Nns,
        }
    } else {
        PosTag::Nn
    }
}

/// Adjusts a lexical tag using the previous token.
fn contextual(tag: PosTag, word: &str, prev_tag: Option<PosTag>, prev_word: Option<&str>, before_than: bool) -> PosTag {
    match tag {
        PosTag::Vbd if is_have_or_be(prev_word) => PosTag::Vbn,
        PosTag::Vb => match prev_tag {
            Some(PosTag::To | PosTag::Md) => PosTag::Vb,
            Some(PosTag::Prp | PosTag::Nns | PosTag::Wdt | PosTag::Wp)
                if !matches!(prev_word, Some("him" | "her" | "me" | "us" | "them")) =>
            {
                PosTag::Vbp
            }
            Some(PosTag::Dt | PosTag::PrpS | PosTag::Jj | PosTag::Pos) => PosTag::Nn,
            _ => PosTag::Vb,
        },
        PosTag::Rbr if before_than => PosTag::Jjr,
        PosTag::Dt
            if word == "that" && matches!(prev_tag, Some(PosTag::Vbd | PosTag::Vbp | PosTag::Vbz | PosTag::Vb)) =>
        {
            PosTag::In
        }
        PosTag::Nn if matches!(prev_tag, Some(PosTag::To)) && word != "hell" => PosTag::Vb,
        other => other,
    }
}
