//! `cloze`: generate difficulty-controlled cloze items and evaluate them
//! with a surrogate panel.
//!
//! Every subcommand works on a run directory (`--out-dir`, default from the
//! config). Stages read what earlier stages wrote there, so
//! `ingest → distract → simulate → fit → report` reproduces `pipeline`.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cloze_core::distract::Strategy;
use cloze_core::gapgen::TargetLevel;
use cloze_core::pipeline::{ErrorClass, FitMode, PipelineConfig, PipelineError};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "cloze", version, about = "Difficulty-controlled cloze test generation and IRT evaluation")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse the corpus into items (items.jsonl) with passage-level folds.
    Ingest,
    /// Re-select each item's gap by prediction entropy (gaps/<level>.jsonl).
    Gaps,
    /// Generate distractor sets and assemble item versions.
    Distract,
    /// Let the panel answer every item version (responses/<label>.csv).
    Simulate,
    /// Fit the Rasch model to the response matrices (fits/).
    Fit,
    /// Summarize and compare difficulty distributions (report/).
    Report,
    /// Run every stage.
    Pipeline,
    /// Write score-table fixtures from a stub scorer for the run's items.
    StubFixtures(StubFixturesArgs),
}

#[derive(Debug, Args)]
struct StubFixturesArgs {
    /// Surrogate to record; defaults to the generator.
    #[arg(long, value_name = "ID")]
    surrogate: Option<String>,
    /// Also record tables for every gap candidate.
    #[arg(long)]
    gap_candidates: bool,
    /// Output file (default <out-dir>/fixtures/<surrogate>.jsonl).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    ConfidenceRanking,
    ThreeFactor,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LevelArg {
    Hard,
    Easy,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GapControlArg {
    Off,
    On,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FitModeArg {
    Joint,
    Separate,
}

#[derive(Debug, Args)]
struct Overrides {
    /// Run directory for all artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// CLOTH-style corpus file or directory (default: bundled synthetic corpus).
    #[arg(long, global = true, value_name = "PATH")]
    corpus: Option<PathBuf>,
    /// Word vectors in GloVe text layout (default: bundled synthetic vectors).
    #[arg(long, global = true, value_name = "FILE")]
    embeddings: Option<PathBuf>,
    /// Base directory for fixture-backed score sources.
    #[arg(long, global = true, value_name = "DIR")]
    score_fixtures: Option<PathBuf>,
    /// Per-sentence POS annotation file.
    #[arg(long, global = true, value_name = "FILE")]
    pos_tags: Option<PathBuf>,
    /// Distractor strategy (repeatable).
    #[arg(long, global = true, value_enum)]
    strategy: Vec<StrategyArg>,
    /// Target difficulty level (repeatable).
    #[arg(long, global = true, value_enum)]
    level: Vec<LevelArg>,
    /// Entropy-based gap re-selection.
    #[arg(long, global = true, value_enum)]
    gap_control: Option<GapControlArg>,
    /// Candidate window size after the answer.
    #[arg(long, global = true, value_name = "N")]
    window_size: Option<usize>,
    /// Top predictions used for gap entropy.
    #[arg(long, global = true, value_name = "K")]
    k_entropy: Option<usize>,
    /// Depth of the generator ranking fetched per gap.
    #[arg(long, global = true, value_name = "N")]
    candidate_top_k: Option<usize>,
    /// Sentences of context per stem.
    #[arg(long, global = true, value_name = "N")]
    context_sentences: Option<usize>,
    /// Number of folds.
    #[arg(long, global = true, value_name = "N")]
    n_folds: Option<usize>,
    /// Joint or per-version IRT calibration.
    #[arg(long, global = true, value_enum)]
    fit_mode: Option<FitModeArg>,
    /// Standard deviation of the Gaussian priors.
    #[arg(long, global = true, value_name = "SD")]
    prior_sd: Option<f64>,
    /// Optimizer sweep limit.
    #[arg(long, global = true, value_name = "N")]
    max_iters: Option<usize>,
    /// Fold assignment seed.
    #[arg(long, global = true, value_name = "SEED")]
    fold_seed: Option<u64>,
    /// Option shuffle seed.
    #[arg(long, global = true, value_name = "SEED")]
    shuffle_seed: Option<u64>,
    /// IRT initialization seed.
    #[arg(long, global = true, value_name = "SEED")]
    irt_seed: Option<u64>,
    /// Worker threads (0 = automatic).
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut PipelineConfig) {
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = &self.$field { $target = v.clone().into(); })*
            };
        }
        set! {
            out_dir => cfg.output_dir,
            window_size => cfg.window_size,
            k_entropy => cfg.k_entropy,
            candidate_top_k => cfg.candidate_top_k,
            context_sentences => cfg.context_sentences,
            n_folds => cfg.n_folds,
            prior_sd => cfg.irt.prior_sd,
            max_iters => cfg.irt.max_iters,
            fold_seed => cfg.seeds.folds,
            shuffle_seed => cfg.seeds.shuffle,
            irt_seed => cfg.irt.seed,
            workers => cfg.workers,
        }
        for (flag, slot) in [
            (&self.corpus, &mut cfg.corpus),
            (&self.embeddings, &mut cfg.embeddings),
            (&self.score_fixtures, &mut cfg.score_fixtures),
            (&self.pos_tags, &mut cfg.pos_tags),
        ] {
            if flag.is_some() {
                *slot = flag.clone();
            }
        }
        if !self.strategy.is_empty() {
            cfg.strategies = self
                .strategy
                .iter()
                .map(|s| match s {
                    StrategyArg::ConfidenceRanking => Strategy::ConfidenceRanking,
                    StrategyArg::ThreeFactor => Strategy::ThreeFactor,
                })
                .collect();
        }
        if !self.level.is_empty() {
            cfg.levels = self
                .level
                .iter()
                .map(|l| match l {
                    LevelArg::Hard => TargetLevel::Hard,
                    LevelArg::Easy => TargetLevel::Easy,
                })
                .collect();
        }
        if let Some(g) = self.gap_control {
            cfg.gap_control = match g {
                GapControlArg::Off => vec![false],
                GapControlArg::On => vec![true],
                GapControlArg::Both => vec![false, true],
            };
        }
        if let Some(m) = self.fit_mode {
            cfg.fit_mode = match m {
                FitModeArg::Joint => FitMode::Joint,
                FitModeArg::Separate => FitMode::Separate,
            };
        }
    }
}

/// Machine-readable failure record written to stderr.
#[derive(Debug, Serialize)]
struct ErrorRecord<'a> {
    error: &'a str,
    stage: &'a str,
    message: String,
    exit_code: u8,
}

struct Failure {
    class: ErrorClass,
    message: String,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure {
            class: e.class(),
            message: e.to_string(),
        }
    }
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            class: ErrorClass::Usage,
            message: message.into(),
        }
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Backend => 3,
    }
}

fn report_failure(stage: &str, f: &Failure) -> ExitCode {
    let code = exit_code(f.class);
    let rec = ErrorRecord {
        error: match f.class {
            ErrorClass::Usage => "usage",
            ErrorClass::Data => "data",
            ErrorClass::Backend => "backend",
        },
        stage,
        message: f.message.clone(),
        exit_code: code,
    };
    eprintln!("{}", serde_json::to_string(&rec).unwrap_or_else(|_| f.message.clone()));
    ExitCode::from(code)
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
        }
        None => PipelineConfig::default(),
    };
    cli.overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn stage_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Ingest => "ingest",
        Command::Gaps => "gaps",
        Command::Distract => "distract",
        Command::Simulate => "simulate",
        Command::Fit => "fit",
        Command::Report => "report",
        Command::Pipeline => "pipeline",
        Command::StubFixtures(_) => "stub-fixtures",
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report_failure("cli", &Failure::usage(e.render().to_string())),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let stage = stage_name(&cli.command);
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(f) => return report_failure(stage, &f),
    };
    let result = cfg.with_pool(|| commands::run(&cli.command, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report_failure(stage, &f),
    }
}
