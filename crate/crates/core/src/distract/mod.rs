//! Distractor generation at a target difficulty.
//!
//! Candidates come from a window of the scorer's ranking strictly below the
//! answer, which keeps every distractor less plausible than the key.
//! Confidence-Ranking takes the window's head for hard items and its tail
//! for easy ones. Three-Factor splits the window in two: hard picks come
//! from the first half (most similar by embedding and by spelling), easy
//! picks from the second half (least similar).

mod embedding;
mod levenshtein;

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embedding::{cosine_similarity, EmbeddingError, EmbeddingStore};
pub use levenshtein::{levenshtein_ldist, levenshtein_ratio};

use crate::corpus::{gap_positions, ClozeItem, CorpusError, Level};
use crate::gapgen::TargetLevel;
use crate::hashing::{mix, str_hash};
use crate::scoring::{answer_rank, ScoreTable, ScoringError};

pub const DEFAULT_WINDOW_SIZE: usize = 100;
/// Smallest window that yields disjoint hard and easy triples.
pub const MIN_WINDOW: usize = 6;

#[derive(Debug, Error)]
pub enum DistractError {
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("item {item_id}: window holds {got} candidates, need at least {MIN_WINDOW}")]
    WindowTooSmall { item_id: String, got: usize },
    #[error("item {0}: key has no embedding")]
    KeyEmbeddingMissing(String),
    #[error("item {item_id}: invalid distractor set ({reason})")]
    InvalidSet { item_id: String, reason: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    ConfidenceRanking,
    ThreeFactor,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::ConfidenceRanking => "confidence-ranking",
            Strategy::ThreeFactor => "three-factor",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetFlag {
    /// Fewer candidates than the requested window size followed the answer.
    WindowShrunk,
    /// Three-Factor was requested but the key has no embedding; the set was
    /// produced by Confidence-Ranking.
    KeyEmbeddingMissing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowEntry {
    pub token: String,
    pub prob: f64,
    /// Zero-based rank in the source table.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateWindow {
    pub item_id: String,
    pub answer: String,
    pub answer_rank: usize,
    pub window_size: usize,
    pub entries: Vec<WindowEntry>,
}

impl CandidateWindow {
    pub fn is_shrunk(&self) -> bool {
        self.entries.len() < self.window_size
    }

    fn base_flags(&self) -> Vec<SetFlag> {
        if self.is_shrunk() {
            vec![SetFlag::WindowShrunk]
        } else {
            Vec::new()
        }
    }
}

/// Up to `window_size` entries ranked right after the answer, skipping case
/// variants of the answer and tokens that are not purely alphabetic.
pub fn candidate_window(
    table: &ScoreTable,
    answer: &str,
    window_size: usize,
) -> Result<CandidateWindow, DistractError> {
    let rank = answer_rank(table, answer)?;
    let key = answer.to_lowercase();
    let entries: Vec<WindowEntry> = table
        .entries()
        .iter()
        .enumerate()
        .skip(rank + 1)
        .filter(|(_, e)| {
            e.token.to_lowercase() != key
                && !e.token.is_empty()
                && e.token.chars().all(char::is_alphabetic)
        })
        .take(window_size)
        .map(|(r, e)| WindowEntry {
            token: e.token.clone(),
            prob: e.prob,
            rank: r,
        })
        .collect();
    if entries.len() < MIN_WINDOW {
        return Err(DistractError::WindowTooSmall {
            item_id: table.item_id.clone(),
            got: entries.len(),
        });
    }
    if entries.len() < window_size {
        log::debug!(
            "{}: window shrunk to {} of {window_size}",
            table.item_id,
            entries.len()
        );
    }
    Ok(CandidateWindow {
        item_id: table.item_id.clone(),
        answer: answer.to_string(),
        answer_rank: rank,
        window_size,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distractor {
    pub word: String,
    pub rank: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub glove_sim: Option<f64>,
    pub leven_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistractorSet {
    pub item_id: String,
    pub strategy: Strategy,
    pub level: TargetLevel,
    pub distractors: Vec<Distractor>,
    #[serde(default)]
    pub flags: Vec<SetFlag>,
}

impl DistractorSet {
    pub fn words(&self) -> Vec<&str> {
        self.distractors.iter().map(|d| d.word.as_str()).collect()
    }

    /// Three pairwise-distinct words, none equal to the key (case-insensitive).
    pub fn check(&self, key: &str) -> Result<(), DistractError> {
        let invalid = |reason: String| DistractError::InvalidSet {
            item_id: self.item_id.clone(),
            reason,
        };
        if self.distractors.len() != 3 {
            return Err(invalid(format!("{} distractors", self.distractors.len())));
        }
        let key = key.to_lowercase();
        let lower: Vec<String> = self.distractors.iter().map(|d| d.word.to_lowercase()).collect();
        if let Some(w) = lower.iter().find(|w| **w == key) {
            return Err(invalid(format!("distractor {w:?} equals the key")));
        }
        if lower[0] == lower[1] || lower[0] == lower[2] || lower[1] == lower[2] {
            return Err(invalid("duplicate distractors".into()));
        }
        Ok(())
    }
}

fn distractor(entry: &WindowEntry, key: &str, glove_sim: Option<f64>) -> Distractor {
    Distractor {
        word: entry.token.clone(),
        rank: entry.rank,
        glove_sim,
        leven_ratio: levenshtein_ratio(&entry.token.to_lowercase(), &key.to_lowercase()),
    }
}

fn make_set(
    window: &CandidateWindow,
    strategy: Strategy,
    level: TargetLevel,
    distractors: Vec<Distractor>,
    flags: Vec<SetFlag>,
) -> DistractorSet {
    DistractorSet {
        item_id: window.item_id.clone(),
        strategy,
        level,
        distractors,
        flags,
    }
}

/// Hard: the three most confident candidates. Easy: the three least.
pub fn gen_confidence_ranking(
    window: &CandidateWindow,
) -> Result<(DistractorSet, DistractorSet), DistractError> {
    let n = window.entries.len();
    if n < MIN_WINDOW {
        return Err(DistractError::WindowTooSmall {
            item_id: window.item_id.clone(),
            got: n,
        });
    }
    let pick = |slice: &[WindowEntry]| -> Vec<Distractor> {
        slice.iter().map(|e| distractor(e, &window.answer, None)).collect()
    };
    let hard = make_set(
        window,
        Strategy::ConfidenceRanking,
        TargetLevel::Hard,
        pick(&window.entries[..3]),
        window.base_flags(),
    );
    let easy = make_set(
        window,
        Strategy::ConfidenceRanking,
        TargetLevel::Easy,
        pick(&window.entries[n - 3..]),
        window.base_flags(),
    );
    Ok((hard, easy))
}

struct Scored<'a> {
    entry: &'a WindowEntry,
    sim: Option<f64>,
    leven: f64,
}

/// Indices into `half` ordered by `metric` (descending when `most`), then
/// better confidence rank, then token. Entries without a metric are dropped.
fn rank_by(half: &[Scored<'_>], metric: impl Fn(&Scored<'_>) -> Option<f64>, most: bool) -> Vec<usize> {
    let mut ranked: Vec<(usize, f64)> = half
        .iter()
        .enumerate()
        .filter_map(|(i, s)| metric(s).map(|m| (i, m)))
        .collect();
    ranked.sort_by(|&(a, ma), &(b, mb)| {
        let by_metric = if most { mb.total_cmp(&ma) } else { ma.total_cmp(&mb) };
        by_metric
            .then_with(|| half[a].entry.rank.cmp(&half[b].entry.rank))
            .then_with(|| half[a].entry.token.cmp(&half[b].entry.token))
    });
    ranked.into_iter().map(|(i, _)| i).collect()
}

fn pick_three(half: &[Scored<'_>], most: bool) -> Vec<usize> {
    let mut chosen: Vec<usize> = rank_by(half, |s| s.sim, most).into_iter().take(2).collect();
    for i in rank_by(half, |s| Some(s.leven), most) {
        if chosen.len() == 3 {
            break;
        }
        if !chosen.contains(&i) {
            chosen.push(i);
        }
    }
    chosen
}

/// Hard: top two by embedding similarity to the key plus top one by
/// Levenshtein ratio, all from the first ⌈n/2⌉ entries. Easy: bottom two by
/// similarity plus bottom one by ratio from the remaining entries. Picks that
/// collide advance to the next word of the respective ranking; words without
/// vectors only compete on the ratio.
pub fn gen_three_factor(
    window: &CandidateWindow,
    key: &str,
    store: &EmbeddingStore,
) -> Result<(DistractorSet, DistractorSet), DistractError> {
    let n = window.entries.len();
    if n < MIN_WINDOW {
        return Err(DistractError::WindowTooSmall {
            item_id: window.item_id.clone(),
            got: n,
        });
    }
    let key_vec = store
        .get(key)
        .ok_or_else(|| DistractError::KeyEmbeddingMissing(window.item_id.clone()))?;
    let key_lower = key.to_lowercase();
    let scored: Vec<Scored<'_>> = window
        .entries
        .iter()
        .map(|e| Scored {
            entry: e,
            sim: store
                .get(&e.token)
                .and_then(|v| cosine_similarity(key_vec, v).ok()),
            leven: levenshtein_ratio(&e.token.to_lowercase(), &key_lower),
        })
        .collect();
    let split = n.div_ceil(2);
    let (hard_half, easy_half) = scored.split_at(split);

    let to_set = |half: &[Scored<'_>], picks: Vec<usize>, level| {
        let ds = picks
            .into_iter()
            .map(|i| &half[i])
            .map(|s| Distractor {
                word: s.entry.token.clone(),
                rank: s.entry.rank,
                glove_sim: s.sim,
                leven_ratio: s.leven,
            })
            .collect();
        make_set(window, Strategy::ThreeFactor, level, ds, window.base_flags())
    };
    let hard = to_set(hard_half, pick_three(hard_half, true), TargetLevel::Hard);
    let easy = to_set(easy_half, pick_three(easy_half, false), TargetLevel::Easy);
    Ok((hard, easy))
}

/// Runs `strategy`; Three-Factor falls back to Confidence-Ranking (flagged)
/// when the key has no embedding.
pub fn generate(
    strategy: Strategy,
    window: &CandidateWindow,
    store: &EmbeddingStore,
) -> Result<(DistractorSet, DistractorSet), DistractError> {
    match strategy {
        Strategy::ConfidenceRanking => gen_confidence_ranking(window),
        Strategy::ThreeFactor => match gen_three_factor(window, &window.answer, store) {
            Err(DistractError::KeyEmbeddingMissing(id)) => {
                log::warn!("{id}: key has no embedding, falling back to confidence ranking");
                let (mut hard, mut easy) = gen_confidence_ranking(window)?;
                for set in [&mut hard, &mut easy] {
                    set.strategy = Strategy::ThreeFactor;
                    set.flags.push(SetFlag::KeyEmbeddingMissing);
                }
                Ok((hard, easy))
            }
            other => other,
        },
    }
}

/// Builds a four-option item from a stem with one gap, its key and a
/// distractor set. Option order is a seeded shuffle keyed by `item_id`.
#[allow(clippy::too_many_arguments)]
pub fn assemble(
    item_id: String,
    stem: String,
    key: &str,
    set: &DistractorSet,
    shuffle_seed: u64,
    level: Level,
    fold: usize,
) -> Result<ClozeItem, DistractError> {
    set.check(key)?;
    if gap_positions(&stem).len() != 1 {
        return Err(CorpusError::BadStem(item_id).into());
    }
    let mut options: Vec<String> = std::iter::once(key.to_string())
        .chain(set.distractors.iter().map(|d| d.word.clone()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[shuffle_seed, str_hash(&item_id)]));
    options.shuffle(&mut rng);
    let key_index = options.iter().position(|o| o == key).expect("key present");
    let options: [String; 4] = options.try_into().expect("four options");
    Ok(ClozeItem::new(item_id, stem, options, key_index, level, fold)?)
}

/// Replaces the original item's distractors with `set`.
pub fn assemble_item(
    original: &ClozeItem,
    set: &DistractorSet,
    shuffle_seed: u64,
) -> Result<ClozeItem, DistractError> {
    assemble(
        original.item_id.clone(),
        original.stem.clone(),
        original.key(),
        set,
        shuffle_seed,
        original.level,
        original.fold,
    )
}

/// Cmp helper shared with tests: orders sets by item id then level.
pub fn set_order(a: &DistractorSet, b: &DistractorSet) -> Ordering {
    a.item_id
        .cmp(&b.item_id)
        .then_with(|| a.strategy.cmp(&b.strategy))
        .then_with(|| a.level.as_str().cmp(b.level.as_str()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::ScoreEntry;

    fn table(n: usize, answer_at: usize) -> ScoreTable {
        let entries = (0..n)
            .map(|i| ScoreEntry {
                token: if i == answer_at { "key".to_string() } else { word(i) },
                prob: (n - i) as f64 / (n * n) as f64,
            })
            .collect();
        ScoreTable::new("it", "test", entries).unwrap()
    }

    /// Distinct alphabetic word for each index.
    fn word(i: usize) -> String {
        let mut s = String::from("w");
        let mut x = i;
        loop {
            s.push(char::from(b'a' + (x % 26) as u8));
            x /= 26;
            if x == 0 {
                break;
            }
        }
        s
    }

    #[test]
    fn window_slices_after_answer() {
        let w = candidate_window(&table(200, 4), "key", 100).unwrap();
        assert_eq!(w.entries.first().unwrap().rank, 5);
        assert_eq!(w.entries.last().unwrap().rank, 104);
        assert!(!w.is_shrunk());
    }

    #[test]
    fn window_shrinks_near_the_end() {
        // 150th entry of 200 (zero-based rank 149) leaves 50 candidates
        let w = candidate_window(&table(200, 149), "key", 100).unwrap();
        assert_eq!(w.entries.len(), 50);
        assert!(w.is_shrunk());
        let (hard, _) = gen_confidence_ranking(&w).unwrap();
        assert_eq!(hard.flags, vec![SetFlag::WindowShrunk]);
    }

    #[test]
    fn window_too_small() {
        assert!(matches!(
            candidate_window(&table(10, 4), "key", 100),
            Err(DistractError::WindowTooSmall { got: 5, .. })
        ));
    }

    #[test]
    fn window_skips_case_variants_of_key() {
        let mut entries: Vec<ScoreEntry> = (0..20)
            .map(|i| ScoreEntry { token: word(i), prob: (20 - i) as f64 / 400.0 })
            .collect();
        entries[2].token = "Crying".into();
        entries[5].token = "CRYING".into();
        let t = ScoreTable::new("it", "t", entries).unwrap();
        let w = candidate_window(&t, "crying", 100).unwrap();
        assert_eq!(w.answer_rank, 2);
        assert!(w.entries.iter().all(|e| e.token.to_lowercase() != "crying"));
        assert_eq!(w.entries.len(), 16);
    }

    #[test]
    fn confidence_ranking_ends() {
        let w = candidate_window(&table(200, 4), "key", 100).unwrap();
        let (hard, easy) = gen_confidence_ranking(&w).unwrap();
        let hr: Vec<usize> = hard.distractors.iter().map(|d| d.rank).collect();
        let er: Vec<usize> = easy.distractors.iter().map(|d| d.rank).collect();
        assert_eq!(hr, [5, 6, 7]);
        assert_eq!(er, [102, 103, 104]);
    }

    #[test]
    fn six_entry_window_is_disjoint() {
        let w = candidate_window(&table(7, 0), "key", 100).unwrap();
        let (hard, easy) = gen_confidence_ranking(&w).unwrap();
        assert_eq!(hard.words(), [word(1), word(2), word(3)]);
        assert_eq!(easy.words(), [word(4), word(5), word(6)]);
    }

    fn window_of(words: &[&str]) -> CandidateWindow {
        CandidateWindow {
            item_id: "it".into(),
            answer: "crying".into(),
            answer_rank: 0,
            window_size: words.len(),
            entries: words
                .iter()
                .enumerate()
                .map(|(i, w)| WindowEntry { token: w.to_string(), prob: 0.5 / (i + 2) as f64, rank: i + 1 })
                .collect(),
        }
    }

    fn store(vectors: &[(&str, [f32; 2])]) -> EmbeddingStore {
        let mut s = EmbeddingStore::new(2);
        for (w, v) in vectors {
            s.insert(w, v).unwrap();
        }
        s
    }

    #[test]
    fn collision_advances_levenshtein_pick() {
        // "cryinh" is the most similar by both measures; the ratio pick moves on.
        let w = window_of(&["table", "cryinh", "dog", "cried", "zzz", "qqq", "apple", "moon"]);
        let s = store(&[
            ("crying", [1.0, 0.0]),
            ("cryinh", [1.0, 0.01]),
            ("dog", [0.9, 0.4]),
            ("table", [0.1, 1.0]),
            ("cried", [0.0, 1.0]),
            ("zzz", [1.0, 1.0]),
            ("qqq", [-1.0, 0.0]),
            ("apple", [0.0, 1.0]),
            ("moon", [0.5, 0.5]),
        ]);
        let (hard, _) = gen_three_factor(&w, "crying", &s).unwrap();
        assert_eq!(hard.words(), ["cryinh", "dog", "cried"]);
        hard.check("crying").unwrap();
    }

    #[test]
    fn near_synonyms_win_similarity_picks() {
        let words = ["alpha", "sobbing", "beta", "weeping", "gamma", "delta", "eps", "zeta", "eta", "theta"];
        let w = window_of(&words);
        let mut vecs: Vec<(&str, [f32; 2])> = words.iter().map(|&w| (w, [0.2, 1.0])).collect();
        vecs.push(("crying", [1.0, 0.0]));
        vecs[1].1 = [1.0, 0.05];
        vecs[3].1 = [1.0, 0.1];
        let (hard, _) = gen_three_factor(&w, "crying", &store(&vecs)).unwrap();
        assert_eq!(&hard.words()[..2], ["sobbing", "weeping"]);
    }

    #[test]
    fn words_without_vectors_still_compete_on_spelling() {
        let w = window_of(&["cryin", "aa", "bb", "cc", "dd", "ee"]);
        let s = store(&[("crying", [1.0, 0.0]), ("aa", [1.0, 0.2]), ("bb", [0.0, 1.0])]);
        let (hard, easy) = gen_three_factor(&w, "crying", &s).unwrap();
        assert_eq!(hard.words(), ["aa", "bb", "cryin"]);
        assert_eq!(hard.distractors[2].glove_sim, None);
        assert_eq!(easy.words().len(), 3);
    }

    #[test]
    fn hundred_window_split() {
        let w = candidate_window(&table(300, 10), "key", 100).unwrap();
        let mut s = EmbeddingStore::new(2);
        s.insert("key", &[1.0, 0.0]).unwrap();
        for (i, e) in w.entries.iter().enumerate() {
            let a = i as f32 * 0.03;
            s.insert(&e.token, &[a.cos(), a.sin()]).unwrap();
        }
        let (hard, easy) = gen_three_factor(&w, "key", &s).unwrap();
        assert!(hard.distractors.iter().all(|d| (11..=60).contains(&d.rank)));
        assert!(easy.distractors.iter().all(|d| (61..=110).contains(&d.rank)));
    }

    #[test]
    fn missing_key_vector_falls_back() {
        let w = candidate_window(&table(50, 0), "key", 100).unwrap();
        let (hard, easy) = generate(Strategy::ThreeFactor, &w, &EmbeddingStore::new(2)).unwrap();
        assert_eq!(hard.strategy, Strategy::ThreeFactor);
        assert!(hard.flags.contains(&SetFlag::KeyEmbeddingMissing));
        assert_eq!(hard.distractors[0].rank, 1);
        assert_eq!(easy.distractors[2].rank, 49);
        assert!(matches!(
            gen_three_factor(&w, "key", &EmbeddingStore::new(2)),
            Err(DistractError::KeyEmbeddingMissing(_))
        ));
    }

    fn crying_item() -> ClozeItem {
        ClozeItem::new(
            "t1".into(),
            "she was _ her heart out".into(),
            ["crying", "shouting", "singing", "laughing"].map(String::from),
            0,
            Level::Middle,
            0,
        )
        .unwrap()
    }

    fn set_of(words: [&str; 3]) -> DistractorSet {
        DistractorSet {
            item_id: "t1".into(),
            strategy: Strategy::ThreeFactor,
            level: TargetLevel::Hard,
            distractors: words
                .iter()
                .enumerate()
                .map(|(i, w)| Distractor { word: w.to_string(), rank: i + 1, glove_sim: None, leven_ratio: 0.0 })
                .collect(),
            flags: vec![],
        }
    }

    #[test]
    fn assembles_table_six_item() {
        let it = assemble_item(&crying_item(), &set_of(["sobbing", "pouring", "weeping"]), 3).unwrap();
        assert_eq!(it.key(), "crying");
        assert_eq!(it.options.iter().filter(|o| *o == "crying").count(), 1);
        let mut sorted = it.options.to_vec();
        sorted.sort();
        assert_eq!(sorted, ["crying", "pouring", "sobbing", "weeping"]);
        let again = assemble_item(&crying_item(), &set_of(["sobbing", "pouring", "weeping"]), 3).unwrap();
        assert_eq!(it, again);
    }

    #[test]
    fn key_collision_rejected() {
        let err = assemble_item(&crying_item(), &set_of(["sobbing", "Crying", "weeping"]), 3).unwrap_err();
        assert!(matches!(err, DistractError::InvalidSet { .. }));
    }
}
