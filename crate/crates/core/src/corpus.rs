//! CLOTH-style passage ingestion, stem segmentation and fold management.
//!
//! A passage carries its gaps as standalone `_` tokens in the article text,
//! one options list and one answer letter per gap, in order. Items are cut
//! from passages one gap at a time: the stem is the run of sentences ending
//! with the sentence that holds the gap, and every other gap inside the stem
//! is filled with its gold answer.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The gap marker used in article text and item stems.
pub const GAP_MARKER: char = '_';

/// Default number of sentences (including the gap sentence) kept in a stem.
pub const DEFAULT_CONTEXT_SENTENCES: usize = 3;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("passage {id}: {gaps} gap markers, {options} option lists, {answers} answers")]
    CountMismatch {
        id: String,
        gaps: usize,
        options: usize,
        answers: usize,
    },
    #[error("passage {id}: answer {letter:?} at gap {gap} is not one of A, B, C, D")]
    BadAnswerLetter {
        id: String,
        gap: usize,
        letter: String,
    },
    #[error("passage {id}: gap {gap} needs 4 non-empty options")]
    BadOptions { id: String, gap: usize },
    #[error("passage {id}: missing field {field}")]
    MissingField { id: String, field: &'static str },
    #[error("passage {id}: sentence segmentation produced no text for gap {gap}")]
    EmptyStem { id: String, gap: usize },
    #[error("item {0}: options are not pairwise distinct")]
    DuplicateOptions(String),
    #[error("item {0}: stem must contain exactly one gap marker")]
    BadStem(String),
    #[error("context_sentences must be at least 1")]
    BadContext,
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    Middle,
    High,
}

impl Level {
    /// CLOTH file names start with `middle` or `high`.
    pub fn from_id(id: &str) -> Option<Level> {
        let lower = id.to_ascii_lowercase();
        if lower.starts_with("middle") {
            Some(Level::Middle)
        } else if lower.starts_with("high") {
            Some(Level::High)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Passage {
    pub id: String,
    pub text: String,
    pub options: Vec<[String; 4]>,
    pub answers: Vec<char>,
    pub level: Level,
    pub fold: usize,
}

/// Raw record as found in CLOTH json files. Extra fields (e.g. `source`) are ignored.
#[derive(Debug, Serialize, Deserialize)]
pub struct RawPassage {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub article: Option<String>,
    #[serde(default)]
    pub options: Option<Vec<Vec<String>>>,
    #[serde(default)]
    pub answers: Option<Vec<String>>,
    #[serde(default)]
    pub level: Option<Level>,
    #[serde(default)]
    pub fold: Option<usize>,
}

/// Byte offsets of every standalone gap marker in `text`.
pub fn gap_positions(text: &str) -> Vec<usize> {
    let bytes = text.as_bytes();
    let is_word = |b: u8| b.is_ascii_alphanumeric() || b == b'_';
    let mut out = Vec::new();
    for (i, &b) in bytes.iter().enumerate() {
        if b != b'_' {
            continue;
        }
        let before_ok = i == 0 || !is_word(bytes[i - 1]);
        let after_ok = i + 1 == bytes.len() || !is_word(bytes[i + 1]);
        if before_ok && after_ok {
            out.push(i);
        }
    }
    out
}

/// Validates a raw record into a [`Passage`].
///
/// `fallback_id` names records that carry no `id` (CLOTH stores the id in
/// the file name); `default_level` applies when neither the record nor the
/// id says which level the passage belongs to.
pub fn parse_cloth_passage(
    raw: RawPassage,
    fallback_id: &str,
    default_level: Level,
) -> Result<Passage, CorpusError> {
    let id = raw.id.unwrap_or_else(|| fallback_id.to_string());
    let text = raw.article.ok_or_else(|| CorpusError::MissingField {
        id: id.clone(),
        field: "article",
    })?;
    let options = raw.options.ok_or_else(|| CorpusError::MissingField {
        id: id.clone(),
        field: "options",
    })?;
    let answers = raw.answers.ok_or_else(|| CorpusError::MissingField {
        id: id.clone(),
        field: "answers",
    })?;

    let gaps = gap_positions(&text).len();
    if gaps != options.len() || gaps != answers.len() {
        return Err(CorpusError::CountMismatch {
            id,
            gaps,
            options: options.len(),
            answers: answers.len(),
        });
    }

    let mut letters = Vec::with_capacity(answers.len());
    for (gap, a) in answers.iter().enumerate() {
        let letter = match a.trim() {
            "A" => 'A',
            "B" => 'B',
            "C" => 'C',
            "D" => 'D',
            other => {
                return Err(CorpusError::BadAnswerLetter {
                    id,
                    gap,
                    letter: other.to_string(),
                })
            }
        };
        letters.push(letter);
    }

    let mut opts = Vec::with_capacity(options.len());
    for (gap, o) in options.into_iter().enumerate() {
        let arr: [String; 4] = o
            .into_iter()
            .map(|s| s.trim().to_string())
            .collect::<Vec<_>>()
            .try_into()
            .map_err(|_| CorpusError::BadOptions { id: id.clone(), gap })?;
        let key = &arr[letter_index(letters[gap])];
        if key.is_empty() {
            return Err(CorpusError::BadOptions { id, gap });
        }
        opts.push(arr);
    }

    let level = raw
        .level
        .or_else(|| Level::from_id(&id))
        .unwrap_or(default_level);

    Ok(Passage {
        id,
        text,
        options: opts,
        answers: letters,
        level,
        fold: raw.fold.unwrap_or(0),
    })
}

fn letter_index(letter: char) -> usize {
    (letter as u8 - b'A') as usize
}

impl Passage {
    pub fn key(&self, gap: usize) -> &str {
        &self.options[gap][letter_index(self.answers[gap])]
    }

    pub fn gap_count(&self) -> usize {
        self.answers.len()
    }

    pub fn to_raw(&self) -> RawPassage {
        RawPassage {
            id: Some(self.id.clone()),
            article: Some(self.text.clone()),
            options: Some(self.options.iter().map(|o| o.to_vec()).collect()),
            answers: Some(self.answers.iter().map(|c| c.to_string()).collect()),
            level: Some(self.level),
            fold: Some(self.fold),
        }
    }
}

/// Reads a CLOTH file: either a single json object or newline-delimited objects.
pub fn read_passages(path: &Path, default_level: Level) -> Result<Vec<Passage>, CorpusError> {
    let content = fs::read_to_string(path)?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_passages(&content, &stem, default_level)
}

pub fn parse_passages(
    content: &str,
    file_stem: &str,
    default_level: Level,
) -> Result<Vec<Passage>, CorpusError> {
    let trimmed = content.trim();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    // A whole-file object (CLOTH layout) parses in one go; otherwise one object per line.
    if let Ok(raw) = serde_json::from_str::<RawPassage>(trimmed) {
        return Ok(vec![parse_cloth_passage(raw, file_stem, default_level)?]);
    }
    let mut out = Vec::new();
    for (n, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawPassage =
            serde_json::from_str(line).map_err(|source| CorpusError::Json { line: n + 1, source })?;
        let fallback = format!("{file_stem}-{n}");
        out.push(parse_cloth_passage(raw, &fallback, default_level)?);
    }
    Ok(out)
}

/// Reads every `.json`/`.jsonl` file under `path` (or `path` itself), sorted by id.
pub fn load_corpus(path: &Path, default_level: Level) -> Result<Vec<Passage>, CorpusError> {
    let mut passages = Vec::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, &mut files)?;
        files.sort();
        for f in files {
            passages.extend(read_passages(&f, default_level)?);
        }
    } else {
        passages = read_passages(path, default_level)?;
    }
    passages.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(passages)
}

fn collect_files(dir: &Path, out: &mut Vec<std::path::PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else if matches!(
            p.extension().and_then(|e| e.to_str()),
            Some("json") | Some("jsonl")
        ) {
            out.push(p);
        }
    }
    Ok(())
}

pub fn write_passages(path: &Path, passages: &[Passage]) -> Result<(), CorpusError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for p in passages {
        serde_json::to_writer(&mut f, &p.to_raw()).map_err(|source| CorpusError::Json {
            line: 0,
            source,
        })?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClozeItem {
    pub item_id: String,
    pub stem: String,
    pub options: [String; 4],
    pub key_index: usize,
    pub level: Level,
    pub fold: usize,
}

impl ClozeItem {
    /// Builds an item and checks its invariants.
    pub fn new(
        item_id: String,
        stem: String,
        options: [String; 4],
        key_index: usize,
        level: Level,
        fold: usize,
    ) -> Result<ClozeItem, CorpusError> {
        if gap_positions(&stem).len() != 1 || key_index > 3 {
            return Err(CorpusError::BadStem(item_id));
        }
        let mut seen = HashSet::new();
        if !options.iter().all(|o| seen.insert(o.to_lowercase())) {
            return Err(CorpusError::DuplicateOptions(item_id));
        }
        Ok(ClozeItem {
            item_id,
            stem,
            options,
            key_index,
            level,
            fold,
        })
    }

    pub fn key(&self) -> &str {
        &self.options[self.key_index]
    }

    /// The stem with its gap replaced by `mask`.
    pub fn masked_stem(&self, mask: &str) -> String {
        replace_gap(&self.stem, mask)
    }

    /// The stem with the key written into the gap.
    pub fn filled_stem(&self) -> String {
        replace_gap(&self.stem, self.key())
    }
}

fn replace_gap(stem: &str, with: &str) -> String {
    match gap_positions(stem).first() {
        Some(&pos) => format!("{}{}{}", &stem[..pos], with, &stem[pos + 1..]),
        None => stem.to_string(),
    }
}

/// Byte spans of sentences. A sentence ends at `.`, `!` or `?` followed by
/// whitespace or end of text, or at a line break.
pub fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        let end_here = match c {
            '.' | '!' | '?' => chars.get(i + 1).is_none_or(|&(_, n)| n.is_whitespace()),
            '\n' => true,
            _ => false,
        };
        if end_here {
            let end = if c == '\n' { pos } else { pos + c.len_utf8() };
            push_span(text, start, end, &mut spans);
            start = end;
        }
        i += 1;
    }
    push_span(text, start, text.len(), &mut spans);
    spans
}

fn push_span(text: &str, start: usize, end: usize, spans: &mut Vec<(usize, usize)>) {
    let slice = &text[start..end];
    let lead = slice.len() - slice.trim_start().len();
    let trail = slice.len() - slice.trim_end().len();
    if lead + trail < slice.len() {
        spans.push((start + lead, end - trail));
    }
}

/// Cuts one item per gap out of a passage.
///
/// Items whose options collide case-insensitively are skipped with a warning.
pub fn segment_stems(
    passage: &Passage,
    context_sentences: usize,
) -> Result<Vec<ClozeItem>, CorpusError> {
    if context_sentences == 0 {
        return Err(CorpusError::BadContext);
    }
    let gaps = gap_positions(&passage.text);
    let spans = sentence_spans(&passage.text);
    let mut items = Vec::with_capacity(gaps.len());

    for (g, &gap_pos) in gaps.iter().enumerate() {
        let Some(sent) = spans.iter().position(|&(s, e)| s <= gap_pos && gap_pos < e) else {
            return Err(CorpusError::EmptyStem {
                id: passage.id.clone(),
                gap: g,
            });
        };
        let first = sent.saturating_sub(context_sentences - 1);
        let (start, end) = (spans[first].0, spans[sent].1);

        // Rebuild the stem, filling every other gap in range with its answer.
        let mut stem = String::with_capacity(end - start + 16);
        let mut cursor = start;
        for (other, &p) in gaps.iter().enumerate() {
            if p < start || p >= end {
                continue;
            }
            stem.push_str(&passage.text[cursor..p]);
            if other == g {
                stem.push(GAP_MARKER);
            } else {
                stem.push_str(passage.key(other));
            }
            cursor = p + 1;
        }
        stem.push_str(&passage.text[cursor..end]);

        if stem.trim().is_empty() {
            return Err(CorpusError::EmptyStem {
                id: passage.id.clone(),
                gap: g,
            });
        }

        let item_id = format!("{}-{}", passage.id, g);
        match ClozeItem::new(
            item_id,
            stem,
            passage.options[g].clone(),
            letter_index(passage.answers[g]),
            passage.level,
            passage.fold,
        ) {
            Ok(item) => items.push(item),
            Err(CorpusError::DuplicateOptions(id)) => {
                log::warn!("skipping {id}: duplicate options");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(items)
}

/// Deals passages into `n_folds` folds after a seeded shuffle.
///
/// Passages are first put in id order so the result does not depend on the
/// input order. Fold sizes differ by at most one.
pub fn assign_folds(mut passages: Vec<Passage>, n_folds: usize, seed: u64) -> Vec<Passage> {
    assert!(n_folds >= 2, "n_folds must be at least 2");
    passages.sort_by(|a, b| a.id.cmp(&b.id));
    let mut order: Vec<usize> = (0..passages.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for (slot, &idx) in order.iter().enumerate() {
        passages[idx].fold = slot % n_folds;
    }
    passages
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitRole {
    Train,
    Validate,
    Test,
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub role: SplitRole,
    pub items: Vec<ClozeItem>,
}

/// Splits items for one fold rotation: the fold itself is the test split,
/// the next fold validates and the rest train.
pub fn fold_splits(items: &[ClozeItem], fold: usize, n_folds: usize) -> [DatasetSplit; 3] {
    let validate_fold = (fold + 1) % n_folds;
    let mut train = Vec::new();
    let mut validate = Vec::new();
    let mut test = Vec::new();
    for it in items {
        if it.fold == fold {
            test.push(it.clone());
        } else if it.fold == validate_fold {
            validate.push(it.clone());
        } else {
            train.push(it.clone());
        }
    }
    [
        DatasetSplit {
            role: SplitRole::Train,
            items: train,
        },
        DatasetSplit {
            role: SplitRole::Validate,
            items: validate,
        },
        DatasetSplit {
            role: SplitRole::Test,
            items: test,
        },
    ]
}

pub fn write_items(path: &Path, items: &[ClozeItem]) -> Result<(), CorpusError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut f, it).map_err(|source| CorpusError::Json { line: 0, source })?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_items(path: &Path) -> Result<Vec<ClozeItem>, CorpusError> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let it: ClozeItem = serde_json::from_str(&line)
            .map_err(|source| CorpusError::Json { line: n + 1, source })?;
        out.push(ClozeItem::new(
            it.item_id, it.stem, it.options, it.key_index, it.level, it.fold,
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(text: &str, options: Vec<Vec<&str>>, answers: Vec<&str>) -> RawPassage {
        RawPassage {
            id: Some("p1".into()),
            article: Some(text.into()),
            options: Some(
                options
                    .into_iter()
                    .map(|o| o.into_iter().map(String::from).collect())
                    .collect(),
            ),
            answers: Some(answers.into_iter().map(String::from).collect()),
            level: None,
            fold: None,
        }
    }

    fn opts(words: [&str; 4]) -> Vec<&str> {
        words.to_vec()
    }

    #[test]
    fn minimal_record() {
        let p = parse_cloth_passage(
            raw("I like _ .", vec![opts(["apples", "cars", "rain", "ideas"])], vec!["A"]),
            "x",
            Level::Middle,
        )
        .unwrap();
        assert_eq!(p.gap_count(), 1);
        assert_eq!(p.key(0), "apples");
    }

    #[test]
    fn count_mismatch() {
        let err = parse_cloth_passage(
            raw("_ and _ .", vec![opts(["a", "b", "c", "d"])], vec!["A"]),
            "x",
            Level::Middle,
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::CountMismatch { gaps: 2, .. }));
    }

    #[test]
    fn bad_letter() {
        let err = parse_cloth_passage(
            raw("_ .", vec![opts(["a", "b", "c", "d"])], vec!["E"]),
            "x",
            Level::Middle,
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::BadAnswerLetter { .. }));
    }

    #[test]
    fn level_from_cloth_file_name() {
        let mut r = raw("_ .", vec![opts(["a", "b", "c", "d"])], vec!["B"]);
        r.id = None;
        let p = parse_cloth_passage(r, "high1234", Level::Middle).unwrap();
        assert_eq!(p.id, "high1234");
        assert_eq!(p.level, Level::High);
    }

    #[test]
    fn underscores_inside_words_are_not_gaps() {
        assert_eq!(gap_positions("snake_case _ x"), vec![11]);
        assert_eq!(gap_positions("_."), vec![0]);
        assert!(gap_positions("__").is_empty());
    }

    #[test]
    fn whole_passage_fits() {
        let p = parse_cloth_passage(
            raw("A b c. D _ e.", vec![opts(["a", "b", "c", "d"])], vec!["A"]),
            "x",
            Level::Middle,
        )
        .unwrap();
        let items = segment_stems(&p, 2).unwrap();
        assert_eq!(items[0].stem, "A b c. D _ e.");
    }

    #[test]
    fn gap_in_first_sentence() {
        let p = parse_cloth_passage(
            raw("One _ here. Two there.", vec![opts(["a", "b", "c", "d"])], vec!["A"]),
            "x",
            Level::Middle,
        )
        .unwrap();
        let items = segment_stems(&p, 3).unwrap();
        assert_eq!(items[0].stem, "One _ here.");
    }

    fn four_sentences() -> Passage {
        parse_cloth_passage(
            raw(
                "S one. S _ two. S three. S _ four.",
                vec![opts(["red", "b1", "c1", "d1"]), opts(["a2", "green", "c2", "d2"])],
                vec!["A", "B"],
            ),
            "x",
            Level::Middle,
        )
        .unwrap()
    }

    #[test]
    fn window_of_two_drops_sentence_two() {
        let items = segment_stems(&four_sentences(), 2).unwrap();
        assert_eq!(items[0].stem, "S one. S _ two.");
        assert_eq!(items[1].stem, "S three. S _ four.");
    }

    #[test]
    fn earlier_gap_filled_with_answer() {
        let items = segment_stems(&four_sentences(), 3).unwrap();
        assert_eq!(items[1].stem, "S red two. S three. S _ four.");
        assert_eq!(items[1].key(), "green");
    }

    #[test]
    fn later_gap_in_same_sentence_is_filled() {
        let p = parse_cloth_passage(
            raw(
                "I _ and _ .",
                vec![opts(["ran", "b", "c", "d"]), opts(["a", "sang", "c", "d"])],
                vec!["A", "B"],
            ),
            "x",
            Level::Middle,
        )
        .unwrap();
        let items = segment_stems(&p, 3).unwrap();
        assert_eq!(items[0].stem, "I _ and sang .");
        assert_eq!(items[1].stem, "I ran and _ .");
    }

    #[test]
    fn paragraph_break_is_a_boundary() {
        let spans = sentence_spans("Title line\nBody _ here. End");
        assert_eq!(spans.len(), 3);
    }

    #[test]
    fn zero_context_rejected() {
        let p = parse_cloth_passage(
            raw("_ .", vec![opts(["a", "b", "c", "d"])], vec!["A"]),
            "x",
            Level::Middle,
        )
        .unwrap();
        assert!(matches!(segment_stems(&p, 0), Err(CorpusError::BadContext)));
    }

    #[test]
    fn duplicate_options_skipped() {
        let p = parse_cloth_passage(
            raw("_ .", vec![opts(["Cat", "cat", "c", "d"])], vec!["A"]),
            "x",
            Level::Middle,
        )
        .unwrap();
        assert!(segment_stems(&p, 3).unwrap().is_empty());
    }

    fn dummy(n: usize) -> Vec<Passage> {
        (0..n)
            .map(|i| Passage {
                id: format!("p{i:03}"),
                text: "_ .".into(),
                options: vec![["a".into(), "b".into(), "c".into(), "d".into()]],
                answers: vec!['A'],
                level: Level::Middle,
                fold: 0,
            })
            .collect()
    }

    fn fold_sizes(ps: &[Passage], n: usize) -> Vec<usize> {
        let mut sizes = vec![0; n];
        for p in ps {
            sizes[p.fold] += 1;
        }
        sizes
    }

    #[test]
    fn folds_divide_evenly() {
        assert_eq!(fold_sizes(&assign_folds(dummy(10), 5, 1), 5), vec![2; 5]);
    }

    #[test]
    fn folds_deterministic() {
        let a = assign_folds(dummy(17), 5, 9);
        let b = assign_folds(dummy(17), 5, 9);
        assert_eq!(a, b);
    }

    #[test]
    fn eleven_into_five() {
        let mut sizes = fold_sizes(&assign_folds(dummy(11), 5, 3), 5);
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
    }

    #[test]
    fn splits_rotate() {
        let ps = assign_folds(dummy(10), 5, 0);
        let items: Vec<ClozeItem> = ps.iter().flat_map(|p| segment_stems(p, 1).unwrap()).collect();
        let [train, val, test] = fold_splits(&items, 2, 5);
        assert_eq!((train.items.len(), val.items.len(), test.items.len()), (6, 2, 2));
        assert!(test.items.iter().all(|i| i.fold == 2));
        assert!(val.items.iter().all(|i| i.fold == 3));
    }
}
