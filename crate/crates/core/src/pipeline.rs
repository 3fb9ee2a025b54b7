//! End-to-end generation: tag, mask every pattern match, over-generate
//! completions, rank.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::Serialize;

use crate::backend::Backends;
use crate::masking::{mask_all, MaskError, PatternSet};
use crate::overgen::{overgenerate, CandidateSet, OvergenError};
use crate::ranker::{rank_ablation, RankError, RankMode, RankedCandidate, RankerConfig, Scorers};
use crate::text::{analyze, TextError};

pub const DEFAULT_NUM_RETURN: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Overgen(#[from] OvergenError),
    #[error(transparent)]
    Rank(#[from] RankError),
}

/// Why the input was echoed instead of paraphrased.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Warning {
    NoPatternMatch,
    NoCandidates,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Generation {
    pub input: String,
    pub output: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hypo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub para: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    pub fallback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<Warning>,
    pub masks: usize,
    pub failed_requests: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<RankedCandidate>,
}

impl Generation {
    fn echo(input: &str, warning: Warning, masks: usize, failed_requests: usize) -> Self {
        Self {
            input: input.to_string(),
            output: input.to_string(),
            hypo: None,
            para: None,
            score: None,
            fallback: false,
            warning: Some(warning),
            masks,
            failed_requests,
            candidates: Vec::new(),
        }
    }
}

/// Holds the backends plus per-run caches of candidate sets and scores,
/// so several ranking modes over one input cost one round of backend calls.
pub struct Pipeline {
    backends: Backends,
    patterns: Arc<PatternSet>,
    config: RankerConfig,
    num_return: usize,
    scorers: Scorers,
    candidate_cache: Mutex<HashMap<String, Arc<(CandidateSet, usize)>>>,
    keep_candidates: bool,
}

impl Pipeline {
    pub fn new(backends: Backends, patterns: Arc<PatternSet>, config: RankerConfig, num_return: usize) -> Self {
        let scorers = Scorers::new(backends.hyperbole.clone(), backends.paraphrase.clone());
        Self {
            backends,
            patterns,
            config,
            num_return: num_return.max(1),
            scorers,
            candidate_cache: Mutex::new(HashMap::new()),
            keep_candidates: false,
        }
    }

    /// Include every scored candidate in each [`Generation`].
    pub fn keep_candidates(mut self, keep: bool) -> Self {
        self.keep_candidates = keep;
        self
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    pub fn patterns(&self) -> &PatternSet {
        &self.patterns
    }

    pub fn config(&self) -> &RankerConfig {
        &self.config
    }

    pub fn scorers(&self) -> &Scorers {
        &self.scorers
    }

    /// Candidate set and mask count for `literal`, or `None` when nothing
    /// matched a pattern.
    fn candidates(&self, literal: &str) -> Result<Option<Arc<(CandidateSet, usize)>>, PipelineError> {
        if let Some(hit) = self.candidate_cache.lock().unwrap().get(literal) {
            return Ok(Some(Arc::clone(hit)));
        }
        let sentence = Arc::new(analyze(literal, self.backends.tagger.as_ref())?);
        let masks = match mask_all(&sentence, &self.patterns) {
            Ok(masks) => masks,
            Err(MaskError::NoMatch) => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let set = overgenerate(&masks, self.backends.infill.as_ref(), self.num_return)?;
        let entry = Arc::new((set, masks.len()));
        self.candidate_cache
            .lock()
            .unwrap()
            .insert(literal.to_string(), Arc::clone(&entry));
        Ok(Some(entry))
    }

    pub fn generate(&self, literal: &str) -> Result<Generation, PipelineError> {
        self.generate_with(literal, RankMode::Full)
    }

    pub fn generate_with(&self, literal: &str, mode: RankMode) -> Result<Generation, PipelineError> {
        let literal = literal.trim();
        let Some(entry) = self.candidates(literal)? else {
            log::warn!("no pattern matched {literal:?}; echoing input");
            return Ok(Generation::echo(literal, Warning::NoPatternMatch, 0, 0));
        };
        let (set, masks) = (&entry.0, entry.1);
        if set.is_empty() {
            log::warn!("no candidates for {literal:?}; echoing input");
            return Ok(Generation::echo(
                literal,
                Warning::NoCandidates,
                masks,
                set.failed_requests,
            ));
        }
        let selection = rank_ablation(&set.source, &set.texts(), &self.scorers, &self.config, mode)?;
        let chosen = &selection.chosen;
        Ok(Generation {
            input: literal.to_string(),
            output: chosen.text.clone(),
            hypo: Some(chosen.hypo_score),
            para: Some(chosen.para_score),
            score: Some(chosen.final_score),
            fallback: selection.fallback,
            warning: None,
            masks,
            failed_requests: set.failed_requests,
            candidates: if self.keep_candidates {
                selection.scored
            } else {
                Vec::new()
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendError, InfillBackend};
    use crate::overgen::InfillRequest;
    use crate::text::PosTag;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn patterns() -> Arc<PatternSet> {
        Arc::new(PatternSet::from([vec![PosTag::Rb, PosTag::Jj], vec![PosTag::Nn]]))
    }

    #[test]
    fn mock_generation_is_deterministic() {
        let a = Pipeline::new(Backends::mock(7), patterns(), RankerConfig::default(), 10);
        let b = Pipeline::new(Backends::mock(7), patterns(), RankerConfig::default(), 10);
        let text = "The soup was very hot.";
        let ga = a.generate(text).unwrap();
        assert_eq!(ga, b.generate(text).unwrap());
        assert!(ga.warning.is_none());
        assert!(ga.masks >= 2);
    }

    #[test]
    fn unmatched_input_is_echoed() {
        let p = Pipeline::new(Backends::mock(1), patterns(), RankerConfig::default(), 5);
        let g = p.generate("  Go!  ").unwrap();
        assert_eq!(g.output, "Go!");
        assert_eq!(g.warning, Some(Warning::NoPatternMatch));
    }

    struct Silent;

    impl InfillBackend for Silent {
        fn infill(&self, _: &InfillRequest) -> Result<Vec<String>, BackendError> {
            Ok(Vec::new())
        }
    }

    struct Down(AtomicUsize);

    impl InfillBackend for Down {
        fn infill(&self, _: &InfillRequest) -> Result<Vec<String>, BackendError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Err(BackendError::Unavailable("refused".into()))
        }
    }

    #[test]
    fn empty_candidates_echo_and_outage_fails() {
        let mut backends = Backends::mock(1);
        backends.infill = Arc::new(Silent);
        let p = Pipeline::new(backends.clone(), patterns(), RankerConfig::default(), 5);
        let g = p.generate("The soup was very hot.").unwrap();
        assert_eq!(g.warning, Some(Warning::NoCandidates));
        assert_eq!(g.output, "The soup was very hot.");

        let down = Arc::new(Down(AtomicUsize::new(0)));
        backends.infill = down.clone();
        let p = Pipeline::new(backends, patterns(), RankerConfig::default(), 5);
        assert!(matches!(
            p.generate("The soup was very hot."),
            Err(PipelineError::Overgen(OvergenError::AllRequestsFailed { .. }))
        ));
        assert!(down.0.load(Ordering::SeqCst) >= 2);
    }

    #[test]
    fn modes_share_one_round_of_infill() {
        struct Counting(AtomicUsize, Backends);
        impl InfillBackend for Counting {
            fn infill(&self, r: &InfillRequest) -> Result<Vec<String>, BackendError> {
                self.0.fetch_add(1, Ordering::SeqCst);
                self.1.infill.infill(r)
            }
        }
        let counting = Arc::new(Counting(AtomicUsize::new(0), Backends::mock(3)));
        let mut backends = Backends::mock(3);
        backends.infill = counting.clone();
        let p = Pipeline::new(backends, patterns(), RankerConfig::default(), 4);
        let text = "The soup was very hot.";
        p.generate(text).unwrap();
        let calls = counting.0.load(Ordering::SeqCst);
        p.generate_with(text, RankMode::HypoOnly).unwrap();
        p.generate_with(text, RankMode::Random { seed: 1 }).unwrap();
        assert_eq!(counting.0.load(Ordering::SeqCst), calls);
    }
}
