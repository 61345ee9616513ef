//! End-to-end orchestration: ingest → gap selection → distractors →
//! surrogate responses → Rasch fit → difficulty report.
//!
//! Every stage is a plain function so the command-line front end can run
//! them one at a time. All randomness comes from the config's seeds and all
//! outputs are sorted by item id, so reruns produce identical files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    assign_folds, fold_splits, load_corpus, segment_stems, write_items, ClozeItem, CorpusError,
    Level, Passage, SplitRole, DEFAULT_CONTEXT_SENTENCES,
};
use crate::distract::{
    assemble, candidate_window, generate, DistractError, DistractorSet, EmbeddingError,
    EmbeddingStore, Strategy, DEFAULT_WINDOW_SIZE,
};
use crate::gapgen::{
    bucket_by_pos, enumerate_gap_candidates, select_gaps, GapError, GapReport, PosBudget,
    TargetLevel, DEFAULT_K_ENTROPY,
};
use crate::psychometrics::{
    build_response_matrix, fit_rasch_1pl, utility_ratio, write_fit, IrtFit, PsychError,
    RaschConfig, ResponseMatrix, UtilityReport,
};
use crate::report::{
    compare_variants, difficulty_summary, export_plot_data, ComparisonReport, ReportError, Variant,
};
use crate::scoring::{
    rank_vocabulary, ScoreQuery, ScoreSource, ScoringError, StubVocabulary, SurrogateProfile,
    DEFAULT_WORLD_SEED, MASK_TOKEN,
};
use crate::synth;
use crate::tagger::{FileTagger, Lexicon, LexiconTagger, PosTagger};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Gap(#[from] GapError),
    #[error(transparent)]
    Distract(#[from] DistractError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Psych(#[from] PsychError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

/// Broad failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Backend,
}

impl PipelineError {
    pub fn class(&self) -> ErrorClass {
        let scoring = match self {
            PipelineError::Config(_) => return ErrorClass::Usage,
            PipelineError::Scoring(e) => Some(e),
            PipelineError::Gap(GapError::Scoring(e)) => Some(e),
            PipelineError::Distract(DistractError::Scoring(e)) => Some(e),
            PipelineError::Psych(PsychError::Scoring(e)) => Some(e),
            _ => None,
        };
        match scoring {
            Some(ScoringError::SourceUnavailable { .. }) => ErrorClass::Backend,
            _ => ErrorClass::Data,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    /// One calibration over original and modified items (common scale).
    #[default]
    Joint,
    /// One calibration per item version.
    Separate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub folds: u64,
    pub shuffle: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { folds: 13, shuffle: 17 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// CLOTH-style file or directory; the bundled synthetic corpus when unset.
    pub corpus: Option<PathBuf>,
    /// GloVe-layout vectors; the bundled synthetic vectors when unset.
    pub embeddings: Option<PathBuf>,
    /// Base directory for fixture-backed score sources.
    pub score_fixtures: Option<PathBuf>,
    /// Per-sentence POS annotation overriding the lexicon tagger.
    pub pos_tags: Option<PathBuf>,
    /// Not written to the run's config record, so runs in different
    /// directories produce identical artifacts.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
    pub strategies: Vec<Strategy>,
    pub levels: Vec<TargetLevel>,
    /// Gap-control settings to run (off, on, or both).
    pub gap_control: Vec<bool>,
    pub window_size: usize,
    pub k_entropy: usize,
    /// Depth of the generator's ranking fetched for distractor windows.
    pub candidate_top_k: usize,
    pub context_sentences: usize,
    pub n_folds: usize,
    pub world_seed: u64,
    pub seeds: Seeds,
    pub generator: SurrogateProfile,
    pub panel: Vec<SurrogateProfile>,
    pub irt: RaschConfig,
    pub fit_mode: FitMode,
    /// Worker threads; 0 lets the runtime decide.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: None,
            embeddings: None,
            score_fixtures: None,
            pos_tags: None,
            output_dir: PathBuf::from("out"),
            strategies: vec![Strategy::ConfidenceRanking, Strategy::ThreeFactor],
            levels: vec![TargetLevel::Hard, TargetLevel::Easy],
            gap_control: vec![false, true],
            window_size: DEFAULT_WINDOW_SIZE,
            k_entropy: DEFAULT_K_ENTROPY,
            candidate_top_k: 1000,
            context_sentences: DEFAULT_CONTEXT_SENTENCES,
            n_folds: 5,
            world_seed: DEFAULT_WORLD_SEED,
            seeds: Seeds::default(),
            generator: synth::default_generator(),
            panel: synth::default_panel(),
            irt: RaschConfig::default(),
            fit_mode: FitMode::Joint,
            workers: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.n_folds < 2 {
            return bad("n_folds must be at least 2");
        }
        if self.context_sentences == 0 {
            return bad("context_sentences must be at least 1");
        }
        if self.k_entropy == 0 || self.candidate_top_k == 0 {
            return bad("k_entropy and candidate_top_k must be positive");
        }
        if self.window_size < crate::distract::MIN_WINDOW {
            return bad("window_size must be at least 6");
        }
        if self.panel.is_empty() {
            return bad("panel is empty");
        }
        if !(self.irt.prior_sd > 0.0 && self.irt.tol > 0.0) {
            return bad("irt.prior_sd and irt.tol must be positive");
        }
        let mut ids = BTreeSet::new();
        if let Some(p) = self.panel.iter().find(|p| !ids.insert(&p.surrogate_id)) {
            return Err(PipelineError::Config(format!(
                "duplicate surrogate id {:?}",
                p.surrogate_id
            )));
        }
        for p in [&self.corpus, &self.embeddings, &self.score_fixtures, &self.pos_tags]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                return Err(PipelineError::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    fn fixture_base(&self) -> PathBuf {
        self.score_fixtures.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    /// Runs `f` on a pool sized by `workers`.
    pub fn with_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        if self.workers == 0 {
            return f();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(self.workers).build() {
            Ok(pool) => pool.install(f),
            Err(e) => {
                log::warn!("could not build a {}-thread pool: {e}", self.workers);
                f()
            }
        }
    }
}

// ---- resources ---------------------------------------------------------------

pub fn load_passages(cfg: &PipelineConfig) -> Result<Vec<Passage>, PipelineError> {
    match &cfg.corpus {
        Some(p) => Ok(load_corpus(p, Level::Middle)?),
        None => Ok(synth::bundled_corpus()),
    }
}

pub fn load_embeddings(cfg: &PipelineConfig) -> Result<EmbeddingStore, PipelineError> {
    match &cfg.embeddings {
        Some(p) => Ok(EmbeddingStore::load(p)?),
        None => Ok(synth::bundled_embeddings()),
    }
}

/// Stub vocabulary: lexicon content words plus every single-word option of
/// the items.
pub fn vocabulary(cfg: &PipelineConfig, items: &[ClozeItem]) -> StubVocabulary {
    let mut words: BTreeSet<String> = Lexicon::bundled().content_words().map(str::to_string).collect();
    for it in items {
        for o in &it.options {
            if !o.is_empty() && o.chars().all(char::is_alphabetic) {
                words.insert(o.to_lowercase());
            }
        }
    }
    StubVocabulary::new(words, cfg.world_seed)
}

pub fn tagger(cfg: &PipelineConfig) -> Result<Box<dyn PosTagger>, PipelineError> {
    match &cfg.pos_tags {
        Some(p) => Ok(Box::new(
            FileTagger::load(p, LexiconTagger::bundled()).map_err(io_err(p))?,
        )),
        None => Ok(Box::new(LexiconTagger::bundled())),
    }
}

pub fn build_source(
    cfg: &PipelineConfig,
    profile: &SurrogateProfile,
    vocab: &StubVocabulary,
) -> Result<Box<dyn ScoreSource>, PipelineError> {
    Ok(profile.build_source(vocab, &cfg.fixture_base())?)
}

pub fn build_panel(
    cfg: &PipelineConfig,
    vocab: &StubVocabulary,
) -> Result<Vec<Box<dyn ScoreSource>>, PipelineError> {
    cfg.panel.iter().map(|p| build_source(cfg, p, vocab)).collect()
}

// ---- stages ------------------------------------------------------------------

/// Corpus → items, with passage-level folds. Sorted by item id.
pub fn ingest(cfg: &PipelineConfig, passages: Vec<Passage>) -> Result<Vec<ClozeItem>, PipelineError> {
    let passages = assign_folds(passages, cfg.n_folds, cfg.seeds.folds);
    let mut items = Vec::new();
    for p in &passages {
        items.extend(segment_stems(p, cfg.context_sentences)?);
    }
    items.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    Ok(items)
}

/// A stem awaiting distractors: either an original gap or a re-selected one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStem {
    pub item_id: String,
    /// Score-table id used when querying for this gap.
    pub query_id: String,
    pub stem: String,
    pub key: String,
    pub level: Level,
    pub fold: usize,
}

impl GapStem {
    pub fn original(item: &ClozeItem) -> Self {
        GapStem {
            item_id: item.item_id.clone(),
            query_id: item.item_id.clone(),
            stem: item.stem.clone(),
            key: item.key().to_string(),
            level: item.level,
            fold: item.fold,
        }
    }

    pub fn masked_stem(&self) -> String {
        self.stem.replacen(crate::corpus::GAP_MARKER, MASK_TOKEN, 1)
    }
}

/// Chosen gaps paired with their stems, and skipped item ids with reasons.
pub type GapSelectionOutcome = (Vec<(GapReport, GapStem)>, BTreeMap<String, String>);

/// Re-selects each item's gap by entropy. Items whose candidates cannot be
/// scored are skipped and listed in the returned map.
pub fn select_item_gaps(
    items: &[ClozeItem],
    tagger: &dyn PosTagger,
    source: &dyn ScoreSource,
    k_entropy: usize,
    level: TargetLevel,
) -> Result<GapSelectionOutcome, PipelineError> {
    let results: Vec<Result<(GapReport, GapStem), GapError>> = items
        .par_iter()
        .map(|item| {
            let candidates = enumerate_gap_candidates(item, tagger, source, k_entropy)?;
            let n = candidates.len();
            let tag = candidates[0].pos_tag.clone();
            let mut sel = select_gaps(&bucket_by_pos(candidates), &PosBudget::from([(tag, 1)]), level);
            let c = sel.chosen.remove(0);
            let report = GapReport {
                item_id: item.item_id.clone(),
                chosen_token_index: c.token_index,
                word: c.word.clone(),
                entropy: c.entropy,
                level,
                n_candidates: n,
            };
            let stem = GapStem {
                item_id: item.item_id.clone(),
                query_id: c.query_id(),
                stem: c.stem(),
                key: c.word.clone(),
                level: item.level,
                fold: item.fold,
            };
            Ok((report, stem))
        })
        .collect();
    let mut out = Vec::new();
    let mut skipped = BTreeMap::new();
    for (item, r) in items.iter().zip(results) {
        match r {
            Ok(x) => out.push(x),
            Err(GapError::Scoring(e @ ScoringError::SourceUnavailable { .. })) => {
                return Err(PipelineError::Scoring(e))
            }
            Err(e) => {
                log::warn!("gap selection skipped {}: {e}", item.item_id);
                skipped.insert(item.item_id.clone(), e.to_string());
            }
        }
    }
    Ok((out, skipped))
}

/// Hard and easy distractor sets for one stem.
pub fn distractor_sets(
    stem: &GapStem,
    source: &dyn ScoreSource,
    store: &EmbeddingStore,
    strategy: Strategy,
    window_size: usize,
    top_k: usize,
) -> Result<(DistractorSet, DistractorSet), DistractError> {
    let query = ScoreQuery::new(stem.query_id.clone(), stem.masked_stem(), top_k).with_key(&stem.key);
    let table = rank_vocabulary(&query, source, 1)?;
    let window = candidate_window(&table, &stem.key, window_size)?;
    let (mut hard, mut easy) = generate(strategy, &window, store)?;
    hard.item_id = stem.item_id.clone();
    easy.item_id = stem.item_id.clone();
    Ok((hard, easy))
}

/// One generated item version.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VariantSpec {
    pub strategy: Strategy,
    pub level: TargetLevel,
    pub gap_control: bool,
}

impl VariantSpec {
    pub fn label(&self) -> String {
        let mut s = format!("{}-{}", self.level.as_str(), self.strategy.as_str());
        if self.gap_control {
            s.push_str("-gap");
        }
        s
    }

    pub fn report_variant(&self) -> Variant {
        match self.level {
            TargetLevel::Hard => Variant::Hard,
            TargetLevel::Easy => Variant::Easy,
        }
    }
}

/// Inverse of [`VariantSpec::label`]; also accepts [`ORIGINAL`].
pub fn parse_label(label: &str) -> Option<(Variant, String, bool)> {
    if label == ORIGINAL {
        return Some((Variant::Original, ORIGINAL.to_string(), false));
    }
    let (rest, gap) = match label.strip_suffix("-gap") {
        Some(r) => (r, true),
        None => (label, false),
    };
    let (level, strategy) = rest.split_once('-')?;
    let variant = match level {
        "hard" => Variant::Hard,
        "easy" => Variant::Easy,
        _ => return None,
    };
    [Strategy::ConfidenceRanking, Strategy::ThreeFactor]
        .iter()
        .find(|s| s.as_str() == strategy)?;
    Some((variant, strategy.to_string(), gap))
}

pub fn variant_item_id(item_id: &str, label: &str) -> String {
    format!("{item_id}#{label}")
}

pub fn variant_specs(cfg: &PipelineConfig) -> Vec<VariantSpec> {
    let mut out = Vec::new();
    for &gap_control in &cfg.gap_control {
        for &strategy in &cfg.strategies {
            for &level in &cfg.levels {
                out.push(VariantSpec {
                    strategy,
                    level,
                    gap_control,
                });
            }
        }
    }
    out.sort_by_key(|v| v.label());
    out.dedup();
    out
}

/// Distractor sets and assembled items per variant.
#[derive(Debug, Clone, Default)]
pub struct Generated {
    pub gap_reports: BTreeMap<&'static str, Vec<GapReport>>,
    pub sets: BTreeMap<String, Vec<DistractorSet>>,
    pub items: BTreeMap<String, Vec<ClozeItem>>,
    /// item id → reason, per stage label.
    pub skipped: BTreeMap<String, BTreeMap<String, String>>,
}

pub fn generate_variants(
    cfg: &PipelineConfig,
    items: &[ClozeItem],
    generator: &dyn ScoreSource,
    store: &EmbeddingStore,
    tagger: &dyn PosTagger,
) -> Result<Generated, PipelineError> {
    let specs = variant_specs(cfg);
    let mut out = Generated::default();

    // Stems per (level, gap control); original stems serve every level.
    let mut stems: BTreeMap<(Option<&'static str>, bool), Vec<GapStem>> = BTreeMap::new();
    stems.insert((None, false), items.iter().map(GapStem::original).collect());
    if specs.iter().any(|s| s.gap_control) {
        for &level in &cfg.levels {
            let (chosen, skipped) = select_item_gaps(items, tagger, generator, cfg.k_entropy, level)?;
            if !skipped.is_empty() {
                out.skipped.insert(format!("gaps-{}", level.as_str()), skipped);
            }
            let (reports, level_stems): (Vec<_>, Vec<_>) = chosen.into_iter().unzip();
            out.gap_reports.insert(level.as_str(), reports);
            stems.insert((Some(level.as_str()), true), level_stems);
        }
    }

    // Sets per (strategy, gap control) stem group; each call yields hard and easy.
    let mut groups: BTreeSet<(Strategy, Option<&'static str>, bool)> = BTreeSet::new();
    for s in &specs {
        let level_key = s.gap_control.then_some(s.level.as_str());
        groups.insert((s.strategy, level_key, s.gap_control));
    }
    let mut sets_by_spec: BTreeMap<VariantSpec, Vec<DistractorSet>> = BTreeMap::new();
    for (strategy, level_key, gap_control) in groups {
        let group_stems = &stems[&(level_key, gap_control)];
        let results: Vec<Result<(DistractorSet, DistractorSet), DistractError>> = group_stems
            .par_iter()
            .map(|st| distractor_sets(st, generator, store, strategy, cfg.window_size, cfg.candidate_top_k))
            .collect();
        let mut skipped = BTreeMap::new();
        for (st, r) in group_stems.iter().zip(results) {
            match r {
                Ok((hard, easy)) => {
                    for (set, level) in [(hard, TargetLevel::Hard), (easy, TargetLevel::Easy)] {
                        let spec = VariantSpec { strategy, level, gap_control };
                        let applies = match level_key {
                            Some(l) => l == level.as_str(),
                            None => true,
                        };
                        if applies && specs.contains(&spec) {
                            sets_by_spec.entry(spec).or_default().push(set);
                        }
                    }
                }
                Err(DistractError::Scoring(e @ ScoringError::SourceUnavailable { .. })) => {
                    return Err(PipelineError::Scoring(e))
                }
                Err(e) => {
                    log::warn!("no distractors for {}: {e}", st.item_id);
                    skipped.insert(st.item_id.clone(), e.to_string());
                }
            }
        }
        if !skipped.is_empty() {
            let label = match level_key {
                Some(l) => format!("distract-{}-{l}-gap", strategy.as_str()),
                None => format!("distract-{}", strategy.as_str()),
            };
            out.skipped.insert(label, skipped);
        }
    }

    for spec in specs {
        let label = spec.label();
        let sets = sets_by_spec.remove(&spec).unwrap_or_default();
        let level_key = spec.gap_control.then_some(spec.level.as_str());
        let by_id: BTreeMap<&str, &GapStem> = stems[&(level_key, spec.gap_control)]
            .iter()
            .map(|s| (s.item_id.as_str(), s))
            .collect();
        let mut assembled = Vec::with_capacity(sets.len());
        for set in &sets {
            let st = by_id[set.item_id.as_str()];
            assembled.push(assemble(
                variant_item_id(&st.item_id, &label),
                st.stem.clone(),
                &st.key,
                set,
                cfg.seeds.shuffle,
                st.level,
                st.fold,
            )?);
        }
        out.sets.insert(label.clone(), sets);
        out.items.insert(label, assembled);
    }
    Ok(out)
}

/// Responses over the concatenated test splits of every fold.
pub fn simulate(
    cfg: &PipelineConfig,
    items: &[ClozeItem],
    panel: &[Box<dyn ScoreSource>],
) -> Result<ResponseMatrix, PipelineError> {
    let mut parts = Vec::with_capacity(cfg.n_folds);
    for fold in 0..cfg.n_folds {
        let [_, _, test] = fold_splits(items, fold, cfg.n_folds);
        debug_assert_eq!(test.role, SplitRole::Test);
        if test.items.is_empty() {
            continue;
        }
        parts.push(build_response_matrix(&test.items, panel)?);
    }
    let joined = ResponseMatrix::concat_items(&parts)?;
    let mut ids = joined.items().to_vec();
    ids.sort();
    Ok(joined.select_items(&ids)?)
}

/// Label for the unmodified items.
pub const ORIGINAL: &str = "original";

pub struct Evaluation {
    pub matrices: BTreeMap<String, ResponseMatrix>,
    pub utility: BTreeMap<String, UtilityReport>,
    /// Keyed by version label in separate mode, a single `joint` entry otherwise.
    pub fits: BTreeMap<String, IrtFit>,
    pub report: ComparisonReport,
}

/// Labels of `matrices` in canonical order: original first, then variants
/// sorted. Labels that do not name a version are ignored.
fn ordered_labels(matrices: &BTreeMap<String, ResponseMatrix>) -> Vec<(String, Variant, String, bool)> {
    let mut keys: Vec<_> = matrices
        .keys()
        .filter_map(|l| {
            let parsed = parse_label(l);
            if parsed.is_none() {
                log::warn!("ignoring responses with unrecognised label {l:?}");
            }
            parsed.map(|(v, s, g)| (l.clone(), v, s, g))
        })
        .collect();
    keys.sort_by_key(|k| (k.0 != ORIGINAL, k.0.clone()));
    keys
}

pub const JOINT_FIT: &str = "joint";

/// Rasch fits: one `joint` fit over all versions, or one per version.
pub fn fit_stage(
    cfg: &PipelineConfig,
    matrices: &BTreeMap<String, ResponseMatrix>,
) -> Result<BTreeMap<String, IrtFit>, PipelineError> {
    let keys = ordered_labels(matrices);
    let mut fits = BTreeMap::new();
    match cfg.fit_mode {
        FitMode::Joint => {
            let ordered: Vec<ResponseMatrix> = keys.iter().map(|k| matrices[&k.0].clone()).collect();
            let joint = ResponseMatrix::concat_items(&ordered)?;
            fits.insert(JOINT_FIT.to_string(), fit_rasch_1pl(&joint, &cfg.irt)?);
        }
        FitMode::Separate => {
            for k in &keys {
                fits.insert(k.0.clone(), fit_rasch_1pl(&matrices[&k.0], &cfg.irt)?);
            }
        }
    }
    Ok(fits)
}

/// Difficulty distribution per version, compared pairwise. Uses the joint
/// fit when present, else each version's own fit.
pub fn report_stage(
    matrices: &BTreeMap<String, ResponseMatrix>,
    fits: &BTreeMap<String, IrtFit>,
) -> Result<ComparisonReport, PipelineError> {
    let mut dists = Vec::new();
    for (label, variant, strategy, gap) in ordered_labels(matrices) {
        let fit = fits
            .get(JOINT_FIT)
            .or_else(|| fits.get(&label))
            .ok_or_else(|| PipelineError::Config(format!("no fit covers {label}")))?;
        dists.push(difficulty_summary(fit, matrices[&label].items(), variant, &strategy, gap)?);
    }
    Ok(compare_variants(dists)?)
}

/// Fits the response matrices and summarizes difficulty per version.
pub fn evaluate(
    cfg: &PipelineConfig,
    matrices: BTreeMap<String, ResponseMatrix>,
) -> Result<Evaluation, PipelineError> {
    let utility = utility_stage(&matrices);
    let fits = fit_stage(cfg, &matrices)?;
    let report = report_stage(&matrices, &fits)?;
    Ok(Evaluation {
        matrices,
        utility,
        fits,
        report,
    })
}

pub fn utility_stage(matrices: &BTreeMap<String, ResponseMatrix>) -> BTreeMap<String, UtilityReport> {
    matrices
        .iter()
        .map(|(k, m)| (k.clone(), utility_ratio(m)))
        .collect()
}

pub struct PipelineRun {
    pub items: Vec<ClozeItem>,
    pub generated: Generated,
    pub evaluation: Evaluation,
}

/// Runs every stage in memory.
pub fn run(cfg: &PipelineConfig) -> Result<PipelineRun, PipelineError> {
    cfg.validate()?;
    cfg.with_pool(|| {
        let items = ingest(cfg, load_passages(cfg)?)?;
        if items.is_empty() {
            return Err(PipelineError::Config("corpus yields no items".into()));
        }
        let vocab = vocabulary(cfg, &items);
        let generator = build_source(cfg, &cfg.generator, &vocab)?;
        let store = load_embeddings(cfg)?;
        let tagger = tagger(cfg)?;
        let generated = generate_variants(cfg, &items, generator.as_ref(), &store, tagger.as_ref())?;

        let panel = build_panel(cfg, &vocab)?;
        let mut matrices = BTreeMap::new();
        matrices.insert(ORIGINAL.to_string(), simulate(cfg, &items, &panel)?);
        for (label, v_items) in &generated.items {
            if !v_items.is_empty() {
                matrices.insert(label.clone(), simulate(cfg, v_items, &panel)?);
            }
        }
        let evaluation = evaluate(cfg, matrices)?;
        Ok(PipelineRun {
            items,
            generated,
            evaluation,
        })
    })
}

// ---- artifact files ----------------------------------------------------------

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    for r in records {
        serde_json::to_writer(&mut f, r).map_err(|source| PipelineError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        f.write_all(b"\n").map_err(io_err(path))?;
    }
    f.flush().map_err(io_err(path))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let f = BufReader::new(fs::File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| PipelineError::Json {
            path: path.to_path_buf(),
            source,
        })?);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn ensure_dir(path: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// Artifact directory layout, relative to the output directory.
pub mod layout {
    pub const CONFIG: &str = "config.json";
    pub const ITEMS: &str = "items.jsonl";
    pub const GAPS_DIR: &str = "gaps";
    pub const DISTRACTORS_DIR: &str = "distractors";
    pub const VARIANTS_DIR: &str = "items";
    pub const RESPONSES_DIR: &str = "responses";
    pub const FITS_DIR: &str = "fits";
    pub const UTILITY: &str = "utility.json";
    pub const REPORT_DIR: &str = "report";
    pub const COMPARISON: &str = "comparison.json";
    pub const SKIPPED: &str = "skipped.json";
}

/// Response matrices under `dir/responses`, keyed by file stem.
pub fn read_matrices(dir: &Path) -> Result<BTreeMap<String, ResponseMatrix>, PipelineError> {
    read_dir_by_stem(&dir.join(layout::RESPONSES_DIR), "csv", |p| Ok(ResponseMatrix::read_csv(p)?))
}

pub fn read_fits(dir: &Path) -> Result<BTreeMap<String, IrtFit>, PipelineError> {
    read_dir_by_stem(&dir.join(layout::FITS_DIR), "json", |p| Ok(crate::psychometrics::read_fit(p)?))
}

/// Variant item files under `dir/items`, keyed by label.
pub fn read_variant_items(dir: &Path) -> Result<BTreeMap<String, Vec<ClozeItem>>, PipelineError> {
    read_dir_by_stem(&dir.join(layout::VARIANTS_DIR), "jsonl", |p| Ok(crate::corpus::read_items(p)?))
}

fn read_dir_by_stem<T>(
    dir: &Path,
    ext: &str,
    read: impl Fn(&Path) -> Result<T, PipelineError>,
) -> Result<BTreeMap<String, T>, PipelineError> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        out.insert(stem.to_string(), read(&path)?);
    }
    Ok(out)
}

/// Writes every artifact of a run under `dir`.
pub fn write_artifacts(cfg: &PipelineConfig, run: &PipelineRun, dir: &Path) -> Result<(), PipelineError> {
    ensure_dir(dir)?;
    write_json(&dir.join(layout::CONFIG), cfg)?;
    write_items(&dir.join(layout::ITEMS), &run.items)?;
    let g = &run.generated;
    for (level, reports) in &g.gap_reports {
        write_jsonl(&dir.join(layout::GAPS_DIR).join(format!("{level}.jsonl")), reports)?;
    }
    for (label, sets) in &g.sets {
        write_jsonl(&dir.join(layout::DISTRACTORS_DIR).join(format!("{label}.jsonl")), sets)?;
    }
    let variants_dir = dir.join(layout::VARIANTS_DIR);
    ensure_dir(&variants_dir)?;
    for (label, items) in &g.items {
        write_items(&variants_dir.join(format!("{label}.jsonl")), items)?;
    }
    write_json(&dir.join(layout::SKIPPED), &g.skipped)?;
    write_evaluation(&run.evaluation, dir)
}

pub fn write_evaluation(ev: &Evaluation, dir: &Path) -> Result<(), PipelineError> {
    let resp = dir.join(layout::RESPONSES_DIR);
    ensure_dir(&resp)?;
    for (label, m) in &ev.matrices {
        m.write_csv(&resp.join(format!("{label}.csv")))?;
    }
    let fits = dir.join(layout::FITS_DIR);
    ensure_dir(&fits)?;
    for (label, fit) in &ev.fits {
        write_fit(&fits.join(format!("{label}.json")), fit)?;
    }
    write_json(&dir.join(layout::UTILITY), &ev.utility)?;
    let report_dir = dir.join(layout::REPORT_DIR);
    export_plot_data(&ev.report, &report_dir)?;
    write_json(&report_dir.join(layout::COMPARISON), &ev.report)
}
