use std::collections::HashSet;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use mover_core::backend::{Backends, HttpBackend, ReplayBackend, Tagger};
use mover_core::corpus::{
    clean_corpus, corpus_stats, filter_by_classifier, merge_annotations, sample_for_annotation, AnnotationBatch,
    CorpusRecord,
};
use mover_core::embedding::{load_embeddings, EmbeddingStore};
use mover_core::eval::{evaluate_systems, read_cases, CopySystem, MoverSystem, R1System, R3System, System};
use mover_core::masking::{
    extract_pos_patterns, mask_all, select_training_masks, ExtractOptions, MaskError, PatternSet,
};
use mover_core::overgen::TrainingPair;
use mover_core::pipeline::Pipeline;
use mover_core::ranker::{RankMode, Scorers};
use mover_core::tagger::LexiconTagger;
use mover_core::text::{analyze, tokenize, Span};
use serde::{Deserialize, Serialize};

use crate::config::{BackendChoice, EngineConfig, Settings, BACKEND_ENV};
use crate::io::{open_input, open_output, ordered_map, read_jsonl, read_texts, write_jsonl};
use crate::{GlobalArgs, MaskMode, RankChoice, SystemChoice};

const CHUNK_PER_THREAD: usize = 64;

pub struct Engine {
    cfg: EngineConfig,
    pool: rayon::ThreadPool,
}

#[derive(Deserialize)]
struct PairLine {
    hypo: String,
    non_hypo: String,
}

#[derive(Serialize)]
struct InferMask<'a> {
    source: &'a str,
    masked: String,
    span: Span,
}

impl Engine {
    pub fn new(args: &GlobalArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => Settings::from_file(path)?,
            None => Settings::default(),
        };
        let cfg = EngineConfig::resolve(file.overlay(args.settings()), std::env::var(BACKEND_ENV).ok())?;
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(jobs) = cfg.jobs {
            builder = builder.num_threads(jobs);
        }
        Ok(Self {
            cfg,
            pool: builder.build()?,
        })
    }

    fn chunk_size(&self) -> usize {
        self.pool.current_num_threads() * CHUNK_PER_THREAD
    }

    fn lexicon_tagger(&self) -> Result<Option<LexiconTagger>> {
        self.cfg
            .lexicon
            .as_ref()
            .map(|p| LexiconTagger::with_lexicon_file(p).with_context(|| format!("loading lexicon {}", p.display())))
            .transpose()
    }

    fn backends(&self) -> Result<Backends> {
        let mut backends = match &self.cfg.backend {
            Some(BackendChoice::Mock) => Backends::mock(self.cfg.seed),
            Some(BackendChoice::Replay(path)) => Backends::replay(
                ReplayBackend::from_file(path)
                    .with_context(|| format!("loading replay file {}", path.display()))?
                    .indexed(),
            ),
            Some(BackendChoice::Http(url)) => {
                HttpBackend::new(url)
                    .health()
                    .with_context(|| format!("model service at {url} is not healthy"))?;
                Backends::http(url)
            }
            None => bail!("no backend configured: pass --mock, --replay, --backend or set {BACKEND_ENV}"),
        };
        if let Some(tagger) = self.lexicon_tagger()? {
            backends.tagger = Arc::new(tagger);
        }
        Ok(backends)
    }

    /// Lexicon file if given, else the configured backend's tagger, else
    /// the built-in lexicon.
    fn tagger(&self) -> Result<Arc<dyn Tagger>> {
        if let Some(t) = self.lexicon_tagger()? {
            return Ok(Arc::new(t));
        }
        if self.cfg.backend.is_some() {
            return Ok(self.backends()?.tagger);
        }
        Ok(Arc::new(LexiconTagger::builtin()))
    }

    fn load_patterns(&self) -> Result<PatternSet> {
        let path = self.cfg.patterns.as_ref().context("no pattern file: pass --patterns")?;
        let set = PatternSet::read_from(open_input(path)?).with_context(|| format!("reading {}", path.display()))?;
        if set.is_empty() {
            bail!("pattern file {} is empty", path.display());
        }
        Ok(set)
    }

    fn store(&self, vocab: &HashSet<String>) -> Result<EmbeddingStore> {
        let path = self
            .cfg
            .embeddings
            .as_ref()
            .context("no embeddings: pass --embeddings")?;
        let (store, report) =
            load_embeddings(path, Some(vocab)).with_context(|| format!("loading {}", path.display()))?;
        log::info!(
            "embeddings: {} vectors of dim {} ({} malformed lines, {} zero vectors)",
            report.loaded,
            store.dim(),
            report.malformed_lines,
            report.zero_vectors
        );
        Ok(store)
    }

    pub fn health(&self) -> Result<()> {
        match &self.cfg.backend {
            Some(BackendChoice::Http(url)) => {
                HttpBackend::new(url).health()?;
                println!("ok {url}");
            }
            Some(_) => println!("ok (in-process backend)"),
            None => bail!("no backend configured"),
        }
        Ok(())
    }

    pub fn patterns(
        &self,
        pairs: &Path,
        reading: &str,
        max_len: usize,
        min_support: usize,
        output: Option<&Path>,
    ) -> Result<()> {
        let reading = reading.parse().map_err(anyhow::Error::msg)?;
        let raw = read_pairs(pairs)?;
        if raw.is_empty() {
            bail!("{} holds no pairs", pairs.display());
        }
        let tagger = self.tagger()?;
        let tagged = self.pool.install(|| {
            use rayon::prelude::*;
            raw.par_iter()
                .map(|(h, n)| Ok((analyze(h, tagger.as_ref())?, analyze(n, tagger.as_ref())?)))
                .collect::<Result<Vec<_>>>()
        })?;
        let out = extract_pos_patterns(
            &tagged,
            ExtractOptions {
                reading,
                max_len,
                min_support,
            },
        )?;
        log::info!(
            "{} patterns from {} pairs ({} without overlap, {} without a span, {} over {} tags)",
            out.patterns.len(),
            tagged.len(),
            out.no_overlap,
            out.identical,
            out.too_long,
            max_len
        );
        let mut w = open_output(output)?;
        out.patterns.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn mask(&self, input: &Path, mode: MaskMode, output: Option<&Path>) -> Result<()> {
        let patterns = self.load_patterns()?;
        let tagger = self.tagger()?;
        let mut w = open_output(output)?;
        let mut skipped = 0usize;
        match mode {
            MaskMode::Infer => ordered_map(
                &self.pool,
                read_texts(open_input(input)?),
                self.chunk_size(),
                |text| {
                    let sentence = Arc::new(analyze(&text, tagger.as_ref())?);
                    match mask_all(&sentence, &patterns) {
                        Ok(masks) => Ok((text, Some(masks))),
                        Err(MaskError::NoMatch) => Ok((text, None)),
                        Err(e) => Err(e.into()),
                    }
                },
                |(text, masks)| {
                    let Some(masks) = masks else {
                        log::warn!("no pattern matched {text:?}; skipped");
                        skipped += 1;
                        return Ok(());
                    };
                    for m in masks {
                        let line = InferMask {
                            source: &text,
                            masked: m.masked_text(),
                            span: m.masked_span,
                        };
                        write_jsonl(&mut w, &line)?;
                    }
                    Ok(())
                },
            )?,
            MaskMode::Train => {
                if input == Path::new("-") {
                    bail!("training masks need a file input: the vocabulary is read before the embeddings");
                }
                let store = self.store(&vocabulary(input)?)?;
                let k = self.cfg.top_k_masks;
                ordered_map(
                    &self.pool,
                    read_texts(open_input(input)?),
                    self.chunk_size(),
                    |text| {
                        let sentence = Arc::new(analyze(&text, tagger.as_ref())?);
                        match select_training_masks(&sentence, &patterns, &store, k) {
                            Ok(masks) => Ok(masks.iter().map(TrainingPair::from_mask).collect()),
                            Err(MaskError::NoMatch) => Ok(Vec::new()),
                            Err(e) => Err(e.into()),
                        }
                    },
                    |pairs: Vec<TrainingPair>| {
                        if pairs.is_empty() {
                            skipped += 1;
                        }
                        for p in &pairs {
                            write_jsonl(&mut w, p)?;
                        }
                        Ok(())
                    },
                )?;
            }
        }
        w.flush()?;
        if skipped > 0 {
            log::info!("{skipped} sentence(s) matched no pattern");
        }
        Ok(())
    }

    fn pipeline(&self) -> Result<Pipeline> {
        Ok(Pipeline::new(
            self.backends()?,
            Arc::new(self.load_patterns()?),
            self.cfg.ranker,
            self.cfg.num_return,
        ))
    }

    fn rank_mode(&self, choice: RankChoice) -> RankMode {
        match choice {
            RankChoice::Full => RankMode::Full,
            RankChoice::HypoOnly => RankMode::HypoOnly,
            RankChoice::Random => RankMode::Random { seed: self.cfg.seed },
        }
    }

    pub fn generate(&self, input: &Path, rank: RankChoice, candidates: bool, output: Option<&Path>) -> Result<()> {
        let pipeline = self.pipeline()?.keep_candidates(candidates);
        let mode = self.rank_mode(rank);
        let mut w = open_output(output)?;
        let (mut total, mut echoed) = (0usize, 0usize);
        ordered_map(
            &self.pool,
            read_texts(open_input(input)?),
            self.chunk_size(),
            |text| Ok(pipeline.generate_with(&text, mode)?),
            |generation| {
                total += 1;
                echoed += usize::from(generation.warning.is_some());
                write_jsonl(&mut w, &generation)
            },
        )?;
        w.flush()?;
        log::info!("{total} sentence(s), {echoed} echoed unchanged");
        Ok(())
    }

    /// Streams cleaned records from `raw` into `consume`, then logs the
    /// cleaning counts.
    fn cleaned(
        &self,
        raw: &Path,
        consume: impl FnOnce(&mut dyn Iterator<Item = Result<CorpusRecord>>) -> Result<()>,
    ) -> Result<()> {
        let mut read_error = None;
        let lines = read_texts(open_input(raw)?).map_while(|r| match r {
            Ok(text) => Some(text),
            Err(e) => {
                read_error = Some(e);
                None
            }
        });
        let mut cleaner = clean_corpus(lines);
        consume(&mut cleaner.by_ref().map(Ok))?;
        let r = cleaner.report();
        drop(cleaner);
        if let Some(e) = read_error {
            return Err(e);
        }
        log::info!(
            "cleaned: {} seen, {} kept, {} duplicates, {} without initial capital",
            r.seen,
            r.kept,
            r.duplicates,
            r.incomplete
        );
        Ok(())
    }

    pub fn corpus_clean(&self, raw: &Path, output: Option<&Path>) -> Result<()> {
        let mut w = open_output(output)?;
        self.cleaned(raw, |records| {
            for record in records {
                write_jsonl(&mut w, &record?)?;
            }
            Ok(())
        })?;
        w.flush()?;
        Ok(())
    }

    fn filter_stream(
        &self,
        records: &mut dyn Iterator<Item = Result<CorpusRecord>>,
        output: Option<&Path>,
    ) -> Result<()> {
        let scorer = self.backends()?.hyperbole;
        let threshold = self.cfg.threshold;
        let mut w = open_output(output)?;
        let (mut seen, mut kept) = (0usize, 0usize);
        let mut records = records.peekable();
        while records.peek().is_some() {
            let chunk = records.by_ref().take(self.chunk_size()).collect::<Result<Vec<_>>>()?;
            seen += chunk.len();
            let passed = self
                .pool
                .install(|| filter_by_classifier(chunk, scorer.as_ref(), threshold))?;
            kept += passed.len();
            for r in &passed {
                write_jsonl(&mut w, r)?;
            }
        }
        w.flush()?;
        log::info!("kept {kept} of {seen} record(s) above {threshold}");
        Ok(())
    }

    pub fn corpus_filter(&self, records: &Path, output: Option<&Path>) -> Result<()> {
        self.filter_stream(&mut read_jsonl(open_input(records)?), output)
    }

    pub fn corpus_build(&self, raw: &Path, output: Option<&Path>) -> Result<()> {
        self.cleaned(raw, |records| self.filter_stream(records, output))
    }

    pub fn corpus_sample(&self, records: &Path, n: usize, output: Option<&Path>) -> Result<()> {
        let pool = read_jsonl::<CorpusRecord>(open_input(records)?).collect::<Result<Vec<_>>>()?;
        let batch = sample_for_annotation(&pool, n, self.cfg.seed)?;
        let mut w = open_output(output)?;
        for r in batch.to_records() {
            write_jsonl(&mut w, &r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn corpus_merge(&self, annotated: &Path, output: Option<&Path>) -> Result<()> {
        let records = read_jsonl::<CorpusRecord>(open_input(annotated)?).collect::<Result<Vec<_>>>()?;
        let outcome = merge_annotations(&AnnotationBatch::from_records(records))?;
        let mut w = open_output(output)?;
        for r in &outcome.kept {
            write_jsonl(&mut w, r)?;
        }
        w.flush()?;
        log::info!(
            "kept {} ({} hyperbole, {} literal), dropped {}, raw agreement {:.1}%",
            outcome.kept.len(),
            outcome.positives,
            outcome.negatives,
            outcome.dropped,
            outcome.raw_agreement * 100.0
        );
        Ok(())
    }

    pub fn corpus_stats(&self, records: &Path, output: Option<&Path>) -> Result<()> {
        let records = read_jsonl::<CorpusRecord>(open_input(records)?).collect::<Result<Vec<_>>>()?;
        let stats = corpus_stats(&records, self.tagger()?.as_ref())?;
        let mut w = open_output(output)?;
        serde_json::to_writer_pretty(&mut w, &stats)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn eval(
        &self,
        cases: &Path,
        systems: &[SystemChoice],
        corpus: Option<&Path>,
        output: Option<&Path>,
    ) -> Result<()> {
        let cases = read_cases(open_input(cases)?)?;
        if cases.is_empty() {
            bail!("no evaluation cases");
        }
        if systems.is_empty() {
            bail!("no systems requested");
        }
        let needs_corpus = systems.iter().any(|s| matches!(s, SystemChoice::R1 | SystemChoice::R3));
        let corpus: Arc<Vec<String>> = Arc::new(match (needs_corpus, corpus) {
            (false, _) => Vec::new(),
            (true, None) => bail!("R1 and R3 need --corpus"),
            (true, Some(path)) => read_texts(open_input(path)?).collect::<Result<Vec<_>>>()?,
        });
        let needs_backend = systems.iter().any(|s| *s != SystemChoice::Copy);
        let backends = if needs_backend { Some(self.backends()?) } else { None };
        let needs_pipeline = systems
            .iter()
            .any(|s| matches!(s, SystemChoice::Mover | SystemChoice::HypoOnly | SystemChoice::Random));
        let pipeline = match (needs_pipeline, &backends) {
            (true, Some(b)) => Some(Arc::new(Pipeline::new(
                b.clone(),
                Arc::new(self.load_patterns()?),
                self.cfg.ranker,
                self.cfg.num_return,
            ))),
            _ => None,
        };

        let mut built: Vec<Box<dyn System>> = Vec::new();
        for choice in systems {
            let system: Box<dyn System> = match (choice, &backends, &pipeline) {
                (SystemChoice::Copy, _, _) => Box::new(CopySystem),
                (SystemChoice::R1, Some(b), _) => Box::new(R1System {
                    corpus: Arc::clone(&corpus),
                    paraphrase: b.paraphrase.clone(),
                }),
                (SystemChoice::R3, Some(b), _) => {
                    let mut vocab = vocabulary_of(corpus.iter().map(String::as_str));
                    vocab.extend(vocabulary_of(cases.iter().map(|c| c.literal.as_str())));
                    Box::new(R3System {
                        corpus: Arc::clone(&corpus),
                        tagger: b.tagger.clone(),
                        paraphrase: b.paraphrase.clone(),
                        scorers: Arc::new(Scorers::new(b.hyperbole.clone(), b.paraphrase.clone())),
                        patterns: Arc::new(self.load_patterns()?),
                        store: Arc::new(self.store(&vocab)?),
                        config: self.cfg.ranker,
                    })
                }
                (SystemChoice::Mover, _, Some(p)) => Box::new(MoverSystem::new(Arc::clone(p), RankMode::Full)),
                (SystemChoice::HypoOnly, _, Some(p)) => Box::new(MoverSystem::new(Arc::clone(p), RankMode::HypoOnly)),
                (SystemChoice::Random, _, Some(p)) => Box::new(MoverSystem::new(
                    Arc::clone(p),
                    RankMode::Random { seed: self.cfg.seed },
                )),
                _ => unreachable!("backends and pipeline are built for every system that needs them"),
            };
            built.push(system);
        }
        let refs: Vec<&dyn System> = built.iter().map(|b| b.as_ref()).collect();
        let report = self.pool.install(|| evaluate_systems(&cases, &refs));
        eprint!("{}", report.to_table());
        let mut w = open_output(output)?;
        serde_json::to_writer_pretty(&mut w, &report)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

/// Hyperbole / non-hyperbole pairs from JSON lines or tab-separated text.
/// A tab-separated header row naming the columns is skipped.
fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    use std::io::BufRead;
    let mut pairs = Vec::new();
    for (i, line) in open_input(path)?.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('{') {
            let p: PairLine = serde_json::from_str(line).with_context(|| format!("line {}: invalid pair", i + 1))?;
            pairs.push((p.hypo, p.non_hypo));
            continue;
        }
        let mut cols = line.split('\t');
        match (cols.next(), cols.next()) {
            (Some(h), Some(n)) => {
                let header = i == 0 && matches!(h.trim().to_lowercase().as_str(), "hypo" | "hyperbole");
                if !header {
                    pairs.push((h.trim().to_string(), n.trim().to_string()));
                }
            }
            _ => bail!("line {}: expected two tab-separated sentences", i + 1),
        }
    }
    Ok(pairs)
}

fn vocabulary_of<'a>(texts: impl Iterator<Item = &'a str>) -> HashSet<String> {
    texts
        .filter_map(|t| tokenize(t).ok())
        .flatten()
        .map(|t| t.normalized)
        .collect()
}

fn vocabulary(input: &Path) -> Result<HashSet<String>> {
    let texts = read_texts(open_input(input)?).collect::<Result<Vec<_>>>()?;
    Ok(vocabulary_of(texts.iter().map(String::as_str)))
}
