mod commands;
mod config;
mod io;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::Settings;

#[derive(Parser, Debug)]
#[command(
    name = "mover",
    version,
    about = "Generate hyperbolic paraphrases of literal sentences"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct GlobalArgs {
    /// key = value configuration file; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Word vectors, one `word v1 v2 ...` per line
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,

    /// Pattern file written by `mover patterns`
    #[arg(long, global = true)]
    patterns: Option<PathBuf>,

    /// Model service endpoint, or `mock` [fallback: $MOVER_BACKEND]
    #[arg(long, global = true)]
    backend: Option<String>,

    /// Use the deterministic in-process backend
    #[arg(long, global = true)]
    mock: bool,

    /// Answer backend calls from a recorded JSON file
    #[arg(long, global = true)]
    replay: Option<PathBuf>,

    /// Tab-separated `word TAG` lexicon for the built-in tagger
    #[arg(long, global = true)]
    lexicon: Option<PathBuf>,

    #[arg(long, global = true)]
    gamma: Option<f64>,

    #[arg(long, global = true)]
    epsilon: Option<f64>,

    /// Classifier probability a sentence must exceed to be kept
    #[arg(long, global = true)]
    threshold: Option<f64>,

    /// Masks kept per sentence when building training pairs
    #[arg(long, global = true)]
    top_k: Option<usize>,

    /// Completions requested per mask
    #[arg(long, global = true)]
    num_return: Option<usize>,

    /// Worker threads (default: one per core)
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file (default: stdout)
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
}

impl GlobalArgs {
    fn settings(&self) -> Settings {
        Settings {
            embeddings: self.embeddings.clone(),
            patterns: self.patterns.clone(),
            lexicon: self.lexicon.clone(),
            backend: self.backend.clone(),
            replay: self.replay.clone(),
            mock: self.mock.then_some(true),
            gamma: self.gamma,
            epsilon: self.epsilon,
            threshold: self.threshold,
            top_k_masks: self.top_k,
            num_return: self.num_return,
            seed: self.seed,
            jobs: self.jobs,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract POS n-gram patterns from hyperbole / non-hyperbole pairs
    Patterns {
        /// JSON lines with `hypo` and `non_hypo`, or tab-separated pairs
        pairs: PathBuf,
        #[arg(long, default_value = "shared")]
        reading: String,
        #[arg(long, default_value_t = mover_core::masking::DEFAULT_MAX_PATTERN_LEN)]
        max_len: usize,
        #[arg(long, default_value_t = 1)]
        min_support: usize,
    },
    /// Mask pattern-matched spans
    Mask {
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = MaskMode::Infer)]
        mode: MaskMode,
    },
    /// Paraphrase literal sentences into hyperboles
    Generate {
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = RankChoice::Full)]
        rank: RankChoice,
        /// Include every scored candidate in the output
        #[arg(long)]
        candidates: bool,
    },
    /// Corpus construction steps
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Score systems against reference hyperboles with BLEU
    Eval {
        /// JSON lines with `literal` and `references`
        cases: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "copy,mover")]
        systems: Vec<SystemChoice>,
        /// Hyperbolic sentences for the retrieval systems
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Check that the model service answers
    Health,
}

#[derive(Subcommand, Debug)]
enum CorpusCommand {
    /// Drop duplicates and sentences without an initial capital
    Clean { raw: PathBuf },
    /// Keep records the hyperbole classifier scores above the threshold
    Filter { records: PathBuf },
    /// Clean, then filter
    Build { raw: PathBuf },
    /// Draw a seeded sample for double annotation
    Sample {
        records: PathBuf,
        #[arg(short, long)]
        n: usize,
    },
    /// Keep records both annotators labelled the same way
    Merge { annotated: PathBuf },
    /// Summary statistics as JSON
    Stats { records: PathBuf },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum MaskMode {
    /// Top-k spans by unexpectedness, as training pairs
    Train,
    /// Every matched span
    Infer,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum RankChoice {
    Full,
    HypoOnly,
    Random,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum SystemChoice {
    Copy,
    R1,
    R3,
    Mover,
    HypoOnly,
    Random,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let engine = commands::Engine::new(&cli.global)?;
    let output = cli.global.output.as_deref();
    match cli.command {
        Command::Patterns {
            pairs,
            reading,
            max_len,
            min_support,
        } => engine.patterns(&pairs, &reading, max_len, min_support, output),
        Command::Mask { input, mode } => engine.mask(&input, mode, output),
        Command::Generate {
            input,
            rank,
            candidates,
        } => engine.generate(&input, rank, candidates, output),
        Command::Corpus(cmd) => match cmd {
            CorpusCommand::Clean { raw } => engine.corpus_clean(&raw, output),
            CorpusCommand::Filter { records } => engine.corpus_filter(&records, output),
            CorpusCommand::Build { raw } => engine.corpus_build(&raw, output),
            CorpusCommand::Sample { records, n } => engine.corpus_sample(&records, n, output),
            CorpusCommand::Merge { annotated } => engine.corpus_merge(&annotated, output),
            CorpusCommand::Stats { records } => engine.corpus_stats(&records, output),
        },
        Command::Eval { cases, systems, corpus } => engine.eval(&cases, &systems, corpus.as_deref(), output),
        Command::Health => engine.health(),
    }
}
