use std::sync::Arc;

use mover_core::backend::{BackendError, HyperboleScorer, MockBackend, ParaphraseScorer};
use mover_core::corpus::{clean_corpus, filter_by_classifier, merge_annotations, AnnotationBatch, CorpusRecord, Label};
use mover_core::embedding::{cosine_distance, sentence_unexpectedness, EmbeddingStore};
use mover_core::eval::{run_r1, sentence_bleu};
use mover_core::masking::{mask_all, select_training_masks, PatternSet};
use mover_core::ranker::{rank_and_select, RankerConfig, Scorers};
use mover_core::text::{detokenize, enumerate_ngrams, tokenize, PosTag, TaggedSentence, Token};
use proptest::prelude::*;

const WORDS: &[&str] = &[
    "the",
    "cat",
    "Dog",
    "runs",
    "faster",
    "than",
    "light",
    "I",
    "can't",
    "won't",
    "it's",
    "we're",
    "x-ray",
    "3.14",
    "1,000",
    "well-known",
    "O'Neil",
    "don’t",
    "you'll",
];
const PUNCT: &[&str] = &[".", ",", "!", "?", ";", ":", "...", "--", "(", ")", "\"", "'", "“", "”"];

fn raw_sentence() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        4 => proptest::sample::select(WORDS).prop_map(str::to_string),
        1 => proptest::sample::select(PUNCT).prop_map(str::to_string),
        1 => (proptest::sample::select(PUNCT), proptest::sample::select(WORDS), proptest::sample::select(PUNCT))
            .prop_map(|(a, w, b)| format!("{a}{w}{b}")),
    ];
    proptest::collection::vec(piece, 1..14).prop_map(|v| v.join(" "))
}

fn surfaces(tokens: &[Token]) -> Vec<String> {
    tokens.iter().map(|t| t.surface.clone()).collect()
}

const TAGS: &[PosTag] = &[PosTag::Nn, PosTag::Jj, PosTag::Rb, PosTag::Vbz, PosTag::In, PosTag::Dt];

/// A sentence of `w0 w1 ...` tokens with the given tags.
fn tagged(tags: &[PosTag]) -> TaggedSentence {
    let tokens: Vec<Token> = (0..tags.len()).map(|i| Token::new(format!("w{i}"), i)).collect();
    let raw = surfaces(&tokens).join(" ");
    TaggedSentence::new(raw, tokens, tags.to_vec()).unwrap()
}

fn tag_seq(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<PosTag>> {
    proptest::collection::vec(proptest::sample::select(TAGS), len)
}

fn pattern_set() -> impl Strategy<Value = PatternSet> {
    proptest::collection::vec(tag_seq(1..4), 1..6).prop_map(PatternSet::from)
}

fn unit_store(dim: usize, words: usize, seed_vals: &[f64]) -> EmbeddingStore {
    let mut store = EmbeddingStore::new(dim);
    for w in 0..words {
        let v: Vec<f64> = (0..dim)
            .map(|d| seed_vals[(w * dim + d) % seed_vals.len()] + 0.01 * (w + d) as f64)
            .collect();
        store.insert(&format!("w{w}"), &v).unwrap();
    }
    store
}

struct Table(Vec<(String, f64, f64)>);

impl HyperboleScorer for Table {
    fn hyperbole_score(&self, text: &str) -> Result<f64, BackendError> {
        Ok(self.0.iter().find(|r| r.0 == text).unwrap().1)
    }
}

impl ParaphraseScorer for Table {
    fn paraphrase_score(&self, _source: &str, candidate: &str) -> Result<f64, BackendError> {
        Ok(self.0.iter().find(|r| r.0 == candidate).unwrap().2)
    }
}

fn scorers(rows: Vec<(String, f64, f64)>) -> Scorers {
    let table = Arc::new(Table(rows));
    Scorers::new(table.clone(), table)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn detokenize_then_tokenize_is_stable(raw in raw_sentence()) {
        let once = tokenize(&raw).unwrap();
        let again = tokenize(&detokenize(surfaces(&once))).unwrap();
        prop_assert_eq!(surfaces(&again), surfaces(&once));
    }

    #[test]
    fn ngram_enumeration_counts_and_bounds(len in 0usize..30, min in 1usize..5, extra in 0usize..4) {
        let max = min + extra;
        let spans = enumerate_ngrams(len, min, max).unwrap();
        let expected: usize = (min..=max.min(len)).map(|n| len - n + 1).sum();
        prop_assert_eq!(spans.len(), expected);
        for w in spans.windows(2) {
            prop_assert!((w[0].start, w[0].len()) < (w[1].start, w[1].len()));
        }
        for s in &spans {
            prop_assert!(s.end <= len && s.len() >= min && s.len() <= max);
        }
    }

    #[test]
    fn cosine_distance_is_symmetric_and_scale_free(
        u in proptest::collection::vec(-5.0f64..5.0, 6),
        v in proptest::collection::vec(-5.0f64..5.0, 6),
        k in 0.01f64..100.0,
    ) {
        prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
        let d = cosine_distance(&u, &v).unwrap();
        prop_assert!((0.0..=2.0).contains(&d));
        prop_assert!((d - cosine_distance(&v, &u).unwrap()).abs() < 1e-12);
        let scaled: Vec<f64> = u.iter().map(|x| x * k).collect();
        prop_assert!((d - cosine_distance(&scaled, &v).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn sentence_unexpectedness_ignores_word_order(
        ids in proptest::collection::vec(0usize..8, 2..10),
        vals in proptest::collection::vec(-1.0f64..1.0, 12),
        rot in 0usize..10,
    ) {
        let store = unit_store(4, 8, &vals);
        let build = |order: &[usize]| {
            let tokens: Vec<Token> = order.iter().enumerate().map(|(i, w)| Token::new(format!("w{w}"), i)).collect();
            let n = tokens.len();
            TaggedSentence::new("", tokens, vec![PosTag::Nn; n]).unwrap()
        };
        let mut permuted = ids.clone();
        permuted.reverse();
        let r = rot % permuted.len();
        permuted.rotate_left(r);
        let a = sentence_unexpectedness(&build(&ids), &store).value;
        let b = sentence_unexpectedness(&build(&permuted), &store).value;
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn every_mask_splices_back(tags in tag_seq(1..12), patterns in pattern_set()) {
        let sentence = Arc::new(tagged(&tags));
        if let Ok(masks) = mask_all(&sentence, &patterns) {
            for m in &masks {
                prop_assert!(m.reconstructs_source());
                prop_assert!(patterns.contains(sentence.span_tags(m.masked_span)));
                let filled = m.splice(&["a", "b", "c"]);
                prop_assert_eq!(filled.len(), sentence.len() - m.masked_span.len() + 3);
            }
        }
    }

    #[test]
    fn top_k_masks_are_prefixes(
        tags in tag_seq(2..12),
        patterns in pattern_set(),
        vals in proptest::collection::vec(-1.0f64..1.0, 17),
        k in 1usize..5,
    ) {
        let sentence = Arc::new(tagged(&tags));
        let store = unit_store(5, 12, &vals);
        let small = select_training_masks(&sentence, &patterns, &store, k);
        let large = select_training_masks(&sentence, &patterns, &store, k + 1);
        match (small, large) {
            (Ok(s), Ok(l)) => {
                prop_assert!(s.len() <= k);
                let s: Vec<_> = s.iter().map(|m| m.masked_span).collect();
                let l: Vec<_> = l.iter().map(|m| m.masked_span).collect();
                prop_assert_eq!(&l[..s.len()], &s[..]);
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "k and k + 1 disagree on whether anything matched"),
        }
    }

    #[test]
    fn selection_follows_scores_not_positions(
        scores in proptest::collection::vec((0.0f64..1.0, 0.5f64..1.0), 1..8),
        rot in 0usize..8,
    ) {
        let rows: Vec<(String, f64, f64)> =
            scores.iter().enumerate().map(|(i, (h, p))| (format!("c{i}"), *h + i as f64 * 1e-9, *p)).collect();
        let config = RankerConfig::default();
        let names: Vec<String> = rows.iter().map(|r| r.0.clone()).collect();
        let mut rotated = names.clone();
        let r = rot % rotated.len();
        rotated.rotate_left(r);
        let s = scorers(rows.clone());
        let a = rank_and_select("src", &names, &s, &config).unwrap();
        let b = rank_and_select("src", &rotated, &s, &config).unwrap();
        prop_assert_eq!(&a.chosen.text, &b.chosen.text);
        for c in &a.scored {
            prop_assert_eq!(c.final_score == 0.0, !config.admits(c.para_score) || c.hypo_score == 0.0);
        }
    }

    #[test]
    fn raising_the_winner_keeps_it(
        scores in proptest::collection::vec((0.0f64..0.9, 0.5f64..1.0), 1..8),
        bump in 0.0f64..0.1,
    ) {
        let rows: Vec<(String, f64, f64)> =
            scores.iter().enumerate().map(|(i, (h, p))| (format!("c{i}"), *h, *p)).collect();
        let names: Vec<String> = rows.iter().map(|r| r.0.clone()).collect();
        let config = RankerConfig::default();
        let first = rank_and_select("src", &names, &scorers(rows.clone()), &config).unwrap();
        let mut bumped = rows;
        bumped[first.index].1 += bump;
        let second = rank_and_select("src", &names, &scorers(bumped), &config).unwrap();
        prop_assert_eq!(second.index, first.index);
    }

    #[test]
    fn cleaning_is_idempotent(lines in proptest::collection::vec("[A-Za-z ]{0,12}[.!]?", 0..30)) {
        let once: Vec<String> = clean_corpus(&lines).map(|r| r.text).collect();
        let twice: Vec<String> = clean_corpus(&once).map(|r| r.text).collect();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn higher_threshold_keeps_a_subset(
        probs in proptest::collection::vec(0.0f64..1.0, 0..40),
        t1 in 0.0f64..0.99,
        dt in 0.0f64..0.5,
    ) {
        let t2 = (t1 + dt).min(0.999);
        let records: Vec<CorpusRecord> = probs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut r = CorpusRecord::new(format!("s{i}"), format!("Sentence {i}."));
                r.probability = Some(*p);
                r
            })
            .collect();
        let mock = MockBackend::new(0);
        let low: Vec<String> = filter_by_classifier(records.clone(), &mock, t1).unwrap().into_iter().map(|r| r.id).collect();
        let high: Vec<String> = filter_by_classifier(records, &mock, t2).unwrap().into_iter().map(|r| r.id).collect();
        prop_assert!(high.iter().all(|id| low.contains(id)));
    }

    #[test]
    fn merge_counts_add_up(labels in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..60)) {
        let label = |b: bool| if b { Label::Hyperbole } else { Label::Literal };
        let records: Vec<CorpusRecord> =
            (0..labels.len()).map(|i| CorpusRecord::new(format!("s{i}"), format!("Item {i}."))).collect();
        let batch = AnnotationBatch {
            records,
            labels_a: labels.iter().map(|(a, _)| Some(label(*a))).collect(),
            labels_b: labels.iter().map(|(_, b)| Some(label(*b))).collect(),
        };
        let out = merge_annotations(&batch).unwrap();
        prop_assert_eq!(out.kept.len() + out.dropped, labels.len());
        prop_assert!((0.0..=1.0).contains(&out.raw_agreement));
        prop_assert_eq!(out.positives + out.negatives, out.kept.len());
    }

    #[test]
    fn bleu_ignores_reference_order(
        hyp in proptest::collection::vec(proptest::sample::select(WORDS), 1..10),
        refs in proptest::collection::vec(proptest::collection::vec(proptest::sample::select(WORDS), 1..10), 1..4),
    ) {
        let hyp = hyp.join(" ");
        let refs: Vec<String> = refs.iter().map(|r| r.join(" ")).collect();
        let mut reversed = refs.clone();
        reversed.reverse();
        let a = sentence_bleu(&hyp, &refs);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
        prop_assert!((a - sentence_bleu(&hyp, &reversed)).abs() < 1e-12);
    }

    #[test]
    fn r1_returns_a_corpus_sentence(
        corpus in proptest::collection::vec("[A-Z][a-z]{1,6}( [a-z]{1,6}){0,5}\\.", 1..12),
        literal in "[A-Z][a-z]{1,6}( [a-z]{1,6}){0,5}\\.",
    ) {
        let out = run_r1(&literal, &corpus, &MockBackend::new(1)).unwrap();
        prop_assert!(corpus.contains(&out));
    }
}
