//! Masked-token confidence tables and the backends that produce them.
//!
//! Every ranking decision in the pipeline starts from a [`ScoreTable`]: the
//! vocabulary for one gap, ordered by a scorer's confidence. Backends
//! implement [`ScoreSource`]; [`rank_vocabulary`] turns their raw output into
//! a normalized table.

mod fixture;
mod remote;
mod stub;

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fixture::FixtureSource;
pub use remote::{RemoteConfig, RemoteSource};
pub use stub::{
    gap_difficulty, key_rank, latent_vector, StubParams, StubSource, StubVocabulary,
    DEFAULT_WORLD_SEED, LATENT_DIM,
};

/// Mask token written into stems before they are scored.
pub const MASK_TOKEN: &str = "[MASK]";

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("score source {source_id} unavailable: {reason}")]
    SourceUnavailable { source_id: String, reason: String },
    #[error("item {item_id}: only {got} entries survive normalization, need {need}")]
    VocabularyTooSmall {
        item_id: String,
        got: usize,
        need: usize,
    },
    #[error("item {item_id}: answer {answer:?} is not ranked")]
    AnswerNotRanked { item_id: String, answer: String },
    #[error("invalid query {item_id}: {reason}")]
    InvalidQuery { item_id: String, reason: String },
    #[error("invalid score table: {0}")]
    InvalidTable(String),
    #[error("surrogate {0}: {1}")]
    BadProfile(String, String),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreQuery {
    pub item_id: String,
    pub masked_stem: String,
    pub top_k: usize,
    pub candidate_filter: Option<Vec<String>>,
    /// Gold answer for the gap. Only synthetic backends read it; it is never
    /// sent over the wire.
    pub key_hint: Option<String>,
}

impl ScoreQuery {
    pub fn new(item_id: impl Into<String>, masked_stem: impl Into<String>, top_k: usize) -> Self {
        ScoreQuery {
            item_id: item_id.into(),
            masked_stem: masked_stem.into(),
            top_k,
            candidate_filter: None,
            key_hint: None,
        }
    }

    pub fn with_candidates(mut self, candidates: Vec<String>) -> Self {
        self.candidate_filter = Some(candidates);
        self
    }

    pub fn with_key(mut self, key: impl Into<String>) -> Self {
        self.key_hint = Some(key.into());
        self
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        let invalid = |reason: &str| ScoringError::InvalidQuery {
            item_id: self.item_id.clone(),
            reason: reason.to_string(),
        };
        if self.top_k == 0 {
            return Err(invalid("top_k must be at least 1"));
        }
        if self.masked_stem.matches(MASK_TOKEN).count() != 1 {
            return Err(invalid("masked stem must contain exactly one mask token"));
        }
        Ok(())
    }
}

/// A backend entry before normalization. `approximate` marks words the
/// scorer could only score through their first sub-token.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEntry {
    pub token: String,
    pub prob: f64,
    pub approximate: bool,
}

impl RawEntry {
    pub fn new(token: impl Into<String>, prob: f64) -> Self {
        RawEntry {
            token: token.into(),
            prob,
            approximate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEntry {
    pub token: String,
    pub prob: f64,
}

fn entry_order(a: &ScoreEntry, b: &ScoreEntry) -> Ordering {
    b.prob.total_cmp(&a.prob).then_with(|| a.token.cmp(&b.token))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub item_id: String,
    pub source_id: String,
    entries: Vec<ScoreEntry>,
}

impl ScoreTable {
    /// Sorts `entries` (descending prob, then token) and checks the table invariants.
    pub fn new(
        item_id: impl Into<String>,
        source_id: impl Into<String>,
        mut entries: Vec<ScoreEntry>,
    ) -> Result<Self, ScoringError> {
        if let Some(bad) = entries.iter().find(|e| !(0.0..=1.0).contains(&e.prob)) {
            return Err(ScoringError::InvalidTable(format!(
                "probability {} for {:?} outside [0, 1]",
                bad.prob, bad.token
            )));
        }
        entries.sort_by(entry_order);
        let mut seen = std::collections::HashSet::with_capacity(entries.len());
        if let Some(dup) = entries.iter().find(|e| !seen.insert(e.token.as_str())) {
            return Err(ScoringError::InvalidTable(format!(
                "duplicate token {:?}",
                dup.token
            )));
        }
        Ok(ScoreTable {
            item_id: item_id.into(),
            source_id: source_id.into(),
            entries,
        })
    }

    pub fn entries(&self) -> &[ScoreEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn prob_of(&self, token: &str) -> Option<f64> {
        let t = token.to_lowercase();
        self.entries.iter().find(|e| e.token == t).map(|e| e.prob)
    }

    pub fn truncate(&mut self, n: usize) {
        self.entries.truncate(n);
    }
}

/// Zero-based position of `answer` (case-insensitive) in the table.
pub fn answer_rank(table: &ScoreTable, answer: &str) -> Result<usize, ScoringError> {
    let a = answer.to_lowercase();
    table
        .entries
        .iter()
        .position(|e| e.token.to_lowercase() == a)
        .ok_or_else(|| ScoringError::AnswerNotRanked {
            item_id: table.item_id.clone(),
            answer: answer.to_string(),
        })
}

fn strip_word_marker(token: &str) -> Option<&str> {
    if token.starts_with("##") {
        return None;
    }
    // sentencepiece / byte-level BPE word-start markers
    Some(
        token
            .strip_prefix('\u{2581}')
            .or_else(|| token.strip_prefix('\u{0120}'))
            .unwrap_or(token),
    )
}

/// Lowercases, drops sub-word fragments, flagged approximations and anything
/// that is not purely alphabetic, merges duplicates keeping the highest
/// probability and re-sorts.
pub fn normalize_table(
    item_id: &str,
    source_id: &str,
    raw: Vec<RawEntry>,
    min_entries: usize,
) -> Result<ScoreTable, ScoringError> {
    let mut merged: HashMap<String, f64> = HashMap::with_capacity(raw.len());
    for e in raw {
        if e.approximate || !(0.0..=1.0).contains(&e.prob) {
            continue;
        }
        let Some(word) = strip_word_marker(&e.token) else {
            continue;
        };
        if word.is_empty() || !word.chars().all(char::is_alphabetic) {
            continue;
        }
        let slot = merged.entry(word.to_lowercase()).or_insert(e.prob);
        if e.prob > *slot {
            *slot = e.prob;
        }
    }
    if merged.len() < min_entries {
        return Err(ScoringError::VocabularyTooSmall {
            item_id: item_id.to_string(),
            got: merged.len(),
            need: min_entries,
        });
    }
    let entries = merged
        .into_iter()
        .map(|(token, prob)| ScoreEntry { token, prob })
        .collect();
    ScoreTable::new(item_id, source_id, entries)
}

/// A backend that scores words for a masked gap. Implementations must be
/// safe to query from several threads.
pub trait ScoreSource: Send + Sync {
    fn source_id(&self) -> &str;

    fn raw_scores(&self, query: &ScoreQuery) -> Result<Vec<RawEntry>, ScoringError>;
}

/// Queries `source` and returns the normalized table cut to `top_k` entries.
/// With a candidate filter, only those candidates are kept.
pub fn rank_vocabulary(
    query: &ScoreQuery,
    source: &dyn ScoreSource,
    min_entries: usize,
) -> Result<ScoreTable, ScoringError> {
    query.validate()?;
    let raw = source.raw_scores(query)?;
    let raw = match &query.candidate_filter {
        Some(cands) => {
            let wanted: std::collections::HashSet<String> =
                cands.iter().map(|c| c.to_lowercase()).collect();
            raw.into_iter()
                .filter(|e| wanted.contains(&e.token.to_lowercase()))
                .collect()
        }
        None => raw,
    };
    let mut table = normalize_table(&query.item_id, source.source_id(), raw, min_entries)?;
    table.truncate(query.top_k);
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Fixture,
    Stub,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateProfile {
    pub surrogate_id: String,
    #[serde(default)]
    pub description: String,
    pub backend: Backend,
    #[serde(default)]
    pub backend_params: BTreeMap<String, serde_json::Value>,
}

impl SurrogateProfile {
    pub fn stub(id: impl Into<String>, description: impl Into<String>, ability: f64, seed: u64) -> Self {
        let mut params = BTreeMap::new();
        params.insert("ability".to_string(), serde_json::json!(ability));
        params.insert("seed".to_string(), serde_json::json!(seed));
        SurrogateProfile {
            surrogate_id: id.into(),
            description: description.into(),
            backend: Backend::Stub,
            backend_params: params,
        }
    }

    fn param_f64(&self, key: &str) -> Result<Option<f64>, ScoringError> {
        match self.backend_params.get(key) {
            None => Ok(None),
            Some(v) => v.as_f64().map(Some).ok_or_else(|| {
                ScoringError::BadProfile(self.surrogate_id.clone(), format!("{key} must be a number"))
            }),
        }
    }

    fn param_u64(&self, key: &str) -> Result<Option<u64>, ScoringError> {
        match self.backend_params.get(key) {
            None => Ok(None),
            Some(v) => v.as_u64().map(Some).ok_or_else(|| {
                ScoringError::BadProfile(
                    self.surrogate_id.clone(),
                    format!("{key} must be a non-negative integer"),
                )
            }),
        }
    }

    fn param_str(&self, key: &str) -> Result<Option<&str>, ScoringError> {
        match self.backend_params.get(key) {
            None => Ok(None),
            Some(v) => v.as_str().map(Some).ok_or_else(|| {
                ScoringError::BadProfile(self.surrogate_id.clone(), format!("{key} must be a string"))
            }),
        }
    }

    /// Builds the backend described by this profile. Relative fixture paths
    /// resolve against `base_dir`.
    pub fn build_source(
        &self,
        vocabulary: &StubVocabulary,
        base_dir: &Path,
    ) -> Result<Box<dyn ScoreSource>, ScoringError> {
        match self.backend {
            Backend::Stub => {
                let ability = self.param_f64("ability")?.unwrap_or(0.0);
                let seed = self.param_u64("seed")?.ok_or_else(|| {
                    ScoringError::BadProfile(self.surrogate_id.clone(), "stub needs a seed".into())
                })?;
                let mut params = StubParams::new(ability, seed);
                if let Some(w) = self.param_u64("world_seed")? {
                    params.world_seed = w;
                }
                Ok(Box::new(StubSource::new(
                    self.surrogate_id.clone(),
                    params,
                    vocabulary.clone(),
                )))
            }
            Backend::Fixture => {
                let path = self.param_str("path")?.ok_or_else(|| {
                    ScoringError::BadProfile(self.surrogate_id.clone(), "fixture needs a path".into())
                })?;
                let path = base_dir.join(path);
                Ok(Box::new(FixtureSource::load(&self.surrogate_id, &path)?))
            }
            Backend::Remote => {
                let url = self.param_str("url")?.ok_or_else(|| {
                    ScoringError::BadProfile(self.surrogate_id.clone(), "remote needs a url".into())
                })?;
                let mut cfg = RemoteConfig::new(url);
                if let Some(n) = self.param_u64("max_in_flight")? {
                    cfg.max_in_flight = n.max(1) as usize;
                }
                if let Some(n) = self.param_u64("retries")? {
                    cfg.retries = n as u32;
                }
                if let Some(m) = self.param_str("mask_token")? {
                    cfg.mask_token = m.to_string();
                }
                Ok(Box::new(RemoteSource::new(self.surrogate_id.clone(), cfg)))
            }
        }
    }
}

// ---- score-table files -----------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct WireEntry {
    pub token: String,
    #[serde(with = "decimal")]
    pub prob: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub approximate: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireTable {
    item_id: String,
    source_id: String,
    entries: Vec<WireEntry>,
}

/// Probabilities travel as decimal strings. Rust's shortest round-trip
/// formatting makes re-reads bit-identical. Plain numbers are accepted on input.
mod decimal {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Either {
        Str(String),
        Num(f64),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Either::deserialize(d)? {
            Either::Num(n) => Ok(n),
            Either::Str(s) => s.trim().parse().map_err(serde::de::Error::custom),
        }
    }
}

pub(crate) fn wire_to_raw(entries: Vec<WireEntry>) -> Vec<RawEntry> {
    entries
        .into_iter()
        .map(|e| RawEntry {
            token: e.token,
            prob: e.prob,
            approximate: e.approximate,
        })
        .collect()
}

pub fn table_to_json(table: &ScoreTable) -> String {
    let wire = WireTable {
        item_id: table.item_id.clone(),
        source_id: table.source_id.clone(),
        entries: table
            .entries
            .iter()
            .map(|e| WireEntry {
                token: e.token.clone(),
                prob: e.prob,
                approximate: false,
            })
            .collect(),
    };
    serde_json::to_string(&wire).expect("score table serializes")
}

/// Parses one score-table record, enforcing the table invariants.
pub fn table_from_json(line: &str) -> Result<ScoreTable, ScoringError> {
    let wire: WireTable =
        serde_json::from_str(line).map_err(|source| ScoringError::Json { line: 1, source })?;
    let entries = wire
        .entries
        .into_iter()
        .map(|e| ScoreEntry {
            token: e.token,
            prob: e.prob,
        })
        .collect();
    ScoreTable::new(wire.item_id, wire.source_id, entries)
}

pub fn write_tables(path: &Path, tables: &[ScoreTable]) -> Result<(), ScoringError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for t in tables {
        f.write_all(table_to_json(t).as_bytes())?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_tables(path: &Path) -> Result<Vec<ScoreTable>, ScoringError> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(table_from_json(&line).map_err(|e| match e {
            ScoringError::Json { source, .. } => ScoringError::Json { line: n + 1, source },
            other => other,
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(pairs: &[(&str, f64)]) -> ScoreTable {
        ScoreTable::new(
            "t",
            "test",
            pairs
                .iter()
                .map(|&(t, p)| ScoreEntry {
                    token: t.into(),
                    prob: p,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rank_of_answer() {
        let t = table(&[("a", 0.5), ("b", 0.3), ("c", 0.2)]);
        assert_eq!(answer_rank(&t, "b").unwrap(), 1);
        assert!(matches!(
            answer_rank(&t, "z"),
            Err(ScoringError::AnswerNotRanked { .. })
        ));
    }

    #[test]
    fn planted_rank_in_long_table() {
        let mut pairs: Vec<(String, f64)> = (0..200)
            .map(|i| (format!("w{}", char::from(b'a' + (i % 26) as u8).to_string().repeat(i / 26 + 1)), 1.0 - i as f64 / 400.0))
            .collect();
        pairs[4].0 = "planted".into();
        let t = ScoreTable::new(
            "t",
            "s",
            pairs
                .into_iter()
                .map(|(token, prob)| ScoreEntry { token, prob })
                .collect(),
        )
        .unwrap();
        assert_eq!(answer_rank(&t, "Planted").unwrap(), 4);
    }

    #[test]
    fn ties_break_lexicographically() {
        let t = table(&[("b", 0.25), ("a", 0.25), ("c", 0.5)]);
        let toks: Vec<_> = t.entries().iter().map(|e| e.token.as_str()).collect();
        assert_eq!(toks, ["c", "a", "b"]);
    }

    #[test]
    fn rejects_bad_probability() {
        assert!(ScoreTable::new("t", "s", vec![ScoreEntry { token: "a".into(), prob: 1.5 }]).is_err());
    }

    #[test]
    fn merge_keeps_max() {
        let t = normalize_table(
            "t",
            "s",
            vec![RawEntry::new("The", 0.4), RawEntry::new("the", 0.3)],
            1,
        )
        .unwrap();
        assert_eq!(t.entries(), &[ScoreEntry { token: "the".into(), prob: 0.4 }]);
    }

    #[test]
    fn subwords_dropped() {
        let t = normalize_table(
            "t",
            "s",
            vec![RawEntry::new("##ing", 0.9), RawEntry::new("run", 0.1)],
            1,
        )
        .unwrap();
        assert_eq!(t.entries(), &[ScoreEntry { token: "run".into(), prob: 0.1 }]);
    }

    #[test]
    fn approximate_and_symbols_dropped() {
        let mut approx = RawEntry::new("sobbing", 0.3);
        approx.approximate = true;
        let t = normalize_table(
            "t",
            "s",
            vec![
                approx,
                RawEntry::new(",", 0.2),
                RawEntry::new("[SEP]", 0.2),
                RawEntry::new("42", 0.1),
                RawEntry::new("don't", 0.1),
                RawEntry::new("\u{2581}walk", 0.05),
            ],
            1,
        )
        .unwrap();
        assert_eq!(t.entries(), &[ScoreEntry { token: "walk".into(), prob: 0.05 }]);
    }

    #[test]
    fn too_small_after_filtering() {
        let err = normalize_table("t", "s", vec![RawEntry::new("##x", 0.5)], 1).unwrap_err();
        assert!(matches!(err, ScoringError::VocabularyTooSmall { got: 0, .. }));
    }

    #[test]
    fn query_needs_one_mask() {
        assert!(ScoreQuery::new("q", "no mask here", 5).validate().is_err());
        assert!(ScoreQuery::new("q", "[MASK] and [MASK]", 5).validate().is_err());
        assert!(ScoreQuery::new("q", "a [MASK] b", 0).validate().is_err());
        assert!(ScoreQuery::new("q", "a [MASK] b", 1).validate().is_ok());
    }

    #[test]
    fn table_json_round_trip_is_bit_exact() {
        let t = table(&[("a", 0.1 + 0.2), ("b", 1.0 / 3.0), ("c", 5e-300)]);
        let back = table_from_json(&table_to_json(&t)).unwrap();
        assert_eq!(t, back);
        for (x, y) in t.entries().iter().zip(back.entries()) {
            assert_eq!(x.prob.to_bits(), y.prob.to_bits());
        }
    }

    #[test]
    fn numeric_probs_accepted() {
        let t = table_from_json(r#"{"item_id":"i","source_id":"s","entries":[{"token":"a","prob":0.5}]}"#)
            .unwrap();
        assert_eq!(t.prob_of("a"), Some(0.5));
    }
}
