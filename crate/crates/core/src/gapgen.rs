//! Gap selection by prediction entropy.
//!
//! Every stem token sharing the key's part of speech is a candidate gap. The
//! scorer's top-K predictions for the masked candidate give its entropy;
//! hard tests take the highest-entropy candidates, easy tests the lowest.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{gap_positions, ClozeItem};
use crate::scoring::{rank_vocabulary, ScoreQuery, ScoreSource, ScoringError, MASK_TOKEN};
use crate::tagger::{tokenize, PosTagger};

pub const DEFAULT_K_ENTROPY: usize = 10;

#[derive(Debug, Error)]
pub enum GapError {
    #[error("empty distribution")]
    EmptyDistribution,
    #[error("probability {0} is negative or not finite")]
    InvalidProbability(f64),
    #[error("item {item_id}: no stem token shares the key's tag {tag}")]
    NoCandidates { item_id: String, tag: String },
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetLevel {
    Hard,
    Easy,
}

impl TargetLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetLevel::Hard => "hard",
            TargetLevel::Easy => "easy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCandidate {
    pub sentence_id: String,
    pub token_index: usize,
    pub word: String,
    pub pos_tag: String,
    pub masked_stem: String,
    /// Bits.
    pub entropy: f64,
}

impl GapCandidate {
    /// The masked stem with the item gap marker in place of the mask.
    pub fn stem(&self) -> String {
        self.masked_stem.replacen(MASK_TOKEN, "_", 1)
    }

    pub fn query_id(&self) -> String {
        candidate_query_id(&self.sentence_id, self.token_index)
    }
}

/// Score-table id used for a candidate gap (fixture tables are keyed by it).
pub fn candidate_query_id(item_id: &str, token_index: usize) -> String {
    format!("{item_id}@{token_index}")
}

pub type PosBudget = BTreeMap<String, usize>;

/// Shannon entropy in bits after renormalizing `probs` to sum to one.
/// Zero probabilities contribute nothing.
pub fn shannon_entropy(probs: &[f64]) -> Result<f64, GapError> {
    if probs.is_empty() {
        return Err(GapError::EmptyDistribution);
    }
    if let Some(&bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(GapError::InvalidProbability(bad));
    }
    let total: f64 = probs.iter().sum();
    if total <= 0.0 {
        return Err(GapError::EmptyDistribution);
    }
    let h = -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| {
            let q = p / total;
            q * q.log2()
        })
        .sum::<f64>();
    Ok(h.clamp(0.0, (probs.len() as f64).log2()))
}

fn candidate_entropy(
    source: &dyn ScoreSource,
    query_id: String,
    masked_stem: &str,
    word: &str,
    k_entropy: usize,
) -> Result<f64, GapError> {
    let query = ScoreQuery::new(query_id, masked_stem, k_entropy).with_key(word);
    let table = rank_vocabulary(&query, source, 1)?;
    let probs: Vec<f64> = table.entries().iter().map(|e| e.prob).collect();
    shannon_entropy(&probs)
}

/// One candidate per stem token tagged like the key, each masked and scored.
/// The original gap is always among them.
pub fn enumerate_gap_candidates(
    item: &ClozeItem,
    tagger: &dyn PosTagger,
    source: &dyn ScoreSource,
    k_entropy: usize,
) -> Result<Vec<GapCandidate>, GapError> {
    let gap = gap_positions(&item.stem)[0];
    let filled = item.filled_stem();
    let key_end = gap + item.key().len();
    let tokens = tokenize(&filled);
    let tags = tagger.tag(&item.item_id, &tokens);

    let key_index = tokens
        .iter()
        .position(|t| t.start == gap)
        .expect("key starts a token");
    let key_tag = tags[key_index].clone();

    let mut out = Vec::new();
    for (i, (tok, tag)) in tokens.iter().zip(&tags).enumerate() {
        let is_key = i == key_index;
        let inside_key = tok.start >= gap && tok.start < key_end;
        if !is_key && (inside_key || !tok.is_alphabetic() || *tag != key_tag) {
            continue;
        }
        let (word, masked) = if is_key {
            (item.key().to_string(), item.masked_stem(MASK_TOKEN))
        } else {
            (
                tok.text.clone(),
                format!("{}{}{}", &filled[..tok.start], MASK_TOKEN, &filled[tok.end..]),
            )
        };
        let entropy = candidate_entropy(
            source,
            candidate_query_id(&item.item_id, i),
            &masked,
            &word,
            k_entropy,
        )?;
        out.push(GapCandidate {
            sentence_id: item.item_id.clone(),
            token_index: i,
            word,
            pos_tag: key_tag.clone(),
            masked_stem: masked,
            entropy,
        });
    }
    if out.is_empty() {
        return Err(GapError::NoCandidates {
            item_id: item.item_id.clone(),
            tag: key_tag,
        });
    }
    Ok(out)
}

/// Re-scores a candidate's masked stem.
pub fn recompute_entropy(
    candidate: &GapCandidate,
    source: &dyn ScoreSource,
    k_entropy: usize,
) -> Result<f64, GapError> {
    candidate_entropy(
        source,
        candidate.query_id(),
        &candidate.masked_stem,
        &candidate.word,
        k_entropy,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapSelection {
    pub chosen: Vec<GapCandidate>,
    /// Tags whose bucket held fewer candidates than budgeted.
    pub unsatisfied: Vec<String>,
}

fn level_order(level: TargetLevel) -> impl Fn(&GapCandidate, &GapCandidate) -> Ordering {
    move |a, b| {
        let by_entropy = match level {
            TargetLevel::Hard => b.entropy.total_cmp(&a.entropy),
            TargetLevel::Easy => a.entropy.total_cmp(&b.entropy),
        };
        by_entropy
            .then_with(|| a.sentence_id.cmp(&b.sentence_id))
            .then_with(|| a.token_index.cmp(&b.token_index))
    }
}

/// Takes the budgeted number of candidates per tag: highest entropy first
/// for hard, lowest first for easy. Short buckets are taken whole and
/// reported in `unsatisfied`.
pub fn select_gaps(
    candidates_by_pos: &BTreeMap<String, Vec<GapCandidate>>,
    budget: &PosBudget,
    level: TargetLevel,
) -> GapSelection {
    let mut chosen = Vec::new();
    let mut unsatisfied = Vec::new();
    for (tag, &want) in budget {
        let mut bucket: Vec<&GapCandidate> = candidates_by_pos
            .get(tag)
            .map(|v| v.iter().collect())
            .unwrap_or_default();
        bucket.sort_by(|a, b| level_order(level)(a, b));
        if bucket.len() < want {
            log::warn!("tag {tag}: budget {want}, only {} candidates", bucket.len());
            unsatisfied.push(tag.clone());
        }
        chosen.extend(bucket.into_iter().take(want).cloned());
    }
    GapSelection {
        chosen,
        unsatisfied,
    }
}

pub fn bucket_by_pos(candidates: Vec<GapCandidate>) -> BTreeMap<String, Vec<GapCandidate>> {
    let mut map: BTreeMap<String, Vec<GapCandidate>> = BTreeMap::new();
    for c in candidates {
        map.entry(c.pos_tag.clone()).or_default().push(c);
    }
    map
}

/// Chooses the single gap of one item at the target level.
pub fn choose_gap(
    item: &ClozeItem,
    tagger: &dyn PosTagger,
    source: &dyn ScoreSource,
    k_entropy: usize,
    level: TargetLevel,
) -> Result<GapCandidate, GapError> {
    let candidates = enumerate_gap_candidates(item, tagger, source, k_entropy)?;
    let tag = candidates[0].pos_tag.clone();
    let budget = PosBudget::from([(tag, 1)]);
    let mut sel = select_gaps(&bucket_by_pos(candidates), &budget, level);
    Ok(sel.chosen.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub item_id: String,
    pub chosen_token_index: usize,
    pub word: String,
    pub entropy: f64,
    pub level: TargetLevel,
    pub n_candidates: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Level;
    use crate::scoring::{RawEntry, StubParams, StubSource, StubVocabulary};
    use crate::tagger::LexiconTagger;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn dyadic_cases() {
        assert!(close(shannon_entropy(&[0.25; 4]).unwrap(), 2.0));
        assert!(close(shannon_entropy(&[1.0]).unwrap(), 0.0));
        assert!(close(shannon_entropy(&[0.5, 0.25, 0.25]).unwrap(), 1.5));
    }

    #[test]
    fn renormalizes_truncated_lists() {
        assert!(close(shannon_entropy(&[0.1, 0.1]).unwrap(), 1.0));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(shannon_entropy(&[]), Err(GapError::EmptyDistribution)));
        assert!(matches!(shannon_entropy(&[0.0, 0.0]), Err(GapError::EmptyDistribution)));
        assert!(shannon_entropy(&[0.5, -0.1]).is_err());
    }

    fn cand(id: &str, idx: usize, entropy: f64) -> GapCandidate {
        GapCandidate {
            sentence_id: id.into(),
            token_index: idx,
            word: "w".into(),
            pos_tag: "ADJ".into(),
            masked_stem: "[MASK]".into(),
            entropy,
        }
    }

    fn pool(es: &[f64]) -> BTreeMap<String, Vec<GapCandidate>> {
        bucket_by_pos(es.iter().enumerate().map(|(i, &e)| cand("s", i, e)).collect())
    }

    #[test]
    fn hard_takes_argmax_easy_argmin() {
        let p = pool(&[0.2, 1.1, 1.9]);
        let b = PosBudget::from([("ADJ".to_string(), 1)]);
        assert_eq!(select_gaps(&p, &b, TargetLevel::Hard).chosen[0].entropy, 1.9);
        assert_eq!(select_gaps(&p, &b, TargetLevel::Easy).chosen[0].entropy, 0.2);
    }

    #[test]
    fn budget_two_of_five() {
        let es = [0.7, 2.2, 0.1, 1.5, 0.4];
        // sort oracle
        let mut sorted = es.to_vec();
        sorted.sort_by(f64::total_cmp);
        let p = pool(&es);
        let b = PosBudget::from([("ADJ".to_string(), 2)]);
        let hard: Vec<f64> = select_gaps(&p, &b, TargetLevel::Hard).chosen.iter().map(|c| c.entropy).collect();
        let easy: Vec<f64> = select_gaps(&p, &b, TargetLevel::Easy).chosen.iter().map(|c| c.entropy).collect();
        assert_eq!(hard, vec![sorted[4], sorted[3]]);
        assert_eq!(easy, vec![sorted[0], sorted[1]]);
    }

    #[test]
    fn ties_break_by_position() {
        let p = bucket_by_pos(vec![cand("b", 0, 1.0), cand("a", 5, 1.0), cand("a", 2, 1.0)]);
        let b = PosBudget::from([("ADJ".to_string(), 3)]);
        let got: Vec<(String, usize)> = select_gaps(&p, &b, TargetLevel::Hard)
            .chosen
            .into_iter()
            .map(|c| (c.sentence_id, c.token_index))
            .collect();
        assert_eq!(got, vec![("a".into(), 2), ("a".into(), 5), ("b".into(), 0)]);
    }

    #[test]
    fn short_bucket_flagged() {
        let p = pool(&[0.3]);
        let b = PosBudget::from([("ADJ".to_string(), 2), ("NOUN".to_string(), 1)]);
        let sel = select_gaps(&p, &b, TargetLevel::Hard);
        assert_eq!(sel.chosen.len(), 1);
        assert_eq!(sel.unsatisfied, vec!["ADJ".to_string(), "NOUN".to_string()]);
    }

    fn item(stem: &str, options: [&str; 4]) -> ClozeItem {
        ClozeItem::new(
            "it".into(),
            stem.into(),
            options.map(String::from),
            0,
            Level::Middle,
            0,
        )
        .unwrap()
    }

    /// Scores every query with the same fixed list.
    struct Flat(Vec<f64>);

    impl ScoreSource for Flat {
        fn source_id(&self) -> &str {
            "flat"
        }
        fn raw_scores(&self, _q: &ScoreQuery) -> Result<Vec<RawEntry>, ScoringError> {
            Ok(self
                .0
                .iter()
                .enumerate()
                .map(|(i, &p)| RawEntry::new(format!("w{}", char::from(b'a' + i as u8)), p))
                .collect())
        }
    }

    #[test]
    fn adjective_candidates() {
        let it = item("The _ dog saw the small cat .", ["big", "red", "old", "sad"]);
        let c = enumerate_gap_candidates(&it, &LexiconTagger::bundled(), &Flat(vec![0.5, 0.5]), 10).unwrap();
        let words: Vec<&str> = c.iter().map(|c| c.word.as_str()).collect();
        assert_eq!(words, ["big", "small"]);
        assert_eq!(c[0].masked_stem, "The [MASK] dog saw the small cat .");
        assert_eq!(c[1].masked_stem, "The big dog saw the [MASK] cat .");
        assert_eq!(c[1].stem(), "The big dog saw the _ cat .");
        assert!(close(c[0].entropy, 1.0));
    }

    #[test]
    fn only_original_gap() {
        let it = item("The dog _ the cat .", ["saw", "ran", "won", "met"]);
        let c = enumerate_gap_candidates(&it, &LexiconTagger::bundled(), &Flat(vec![1.0]), 10).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].word, "saw");
    }

    #[test]
    fn peaked_and_flat_profiles() {
        let it = item("The _ dog .", ["big", "red", "old", "sad"]);
        let tagger = LexiconTagger::bundled();
        let peaked = Flat([0.999].into_iter().chain(std::iter::repeat_n(1e-6, 9)).collect());
        let flat = Flat(vec![0.1; 10]);
        let hp = enumerate_gap_candidates(&it, &tagger, &peaked, 10).unwrap()[0].entropy;
        let hf = enumerate_gap_candidates(&it, &tagger, &flat, 10).unwrap()[0].entropy;
        assert!(hp < 0.01, "{hp}");
        assert!((hf - 10f64.log2()).abs() < 1e-12, "{hf}");
    }

    #[test]
    fn stub_entropy_recomputes_exactly() {
        let src = StubSource::new("g", StubParams::new(1.0, 5), StubVocabulary::bundled());
        let it = item(
            "The happy teacher walked quickly . The _ child smiled kindly .",
            ["brave", "cold", "tall", "busy"],
        );
        let tagger = LexiconTagger::bundled();
        for c in enumerate_gap_candidates(&it, &tagger, &src, 10).unwrap() {
            assert_eq!(recompute_entropy(&c, &src, 10).unwrap(), c.entropy);
            assert!(c.entropy >= 0.0 && c.entropy <= 10f64.log2() + 1e-12);
        }
    }
}
