//! Tokenization and part-of-speech tagging for gap candidates.
//!
//! The default tagger looks words up in a bundled lexicon (universal tag
//! set) and falls back to suffix rules. A per-sentence tag file can override
//! it for corpora that ship their own annotation.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::OnceLock;

use serde::Deserialize;

pub const NOUN: &str = "NOUN";
pub const VERB: &str = "VERB";
pub const ADJ: &str = "ADJ";
pub const ADV: &str = "ADV";
pub const NUM: &str = "NUM";
pub const PUNCT: &str = "PUNCT";
pub const OTHER: &str = "X";

const BUNDLED_LEXICON: &str = include_str!("../data/lexicon.tsv");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    /// Byte range in the source text.
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn is_alphabetic(&self) -> bool {
        !self.text.is_empty() && self.text.chars().all(char::is_alphabetic)
    }
}

/// Splits text into word tokens (letters, digits, apostrophes, underscores)
/// and single-character punctuation tokens.
pub fn tokenize(text: &str) -> Vec<Token> {
    let is_word = |c: char| c.is_alphanumeric() || c == '\'' || c == '_';
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if is_word(c) {
            start.get_or_insert(i);
            continue;
        }
        if let Some(s) = start.take() {
            out.push(Token {
                text: text[s..i].to_string(),
                start: s,
                end: i,
            });
        }
        if !c.is_whitespace() {
            out.push(Token {
                text: c.to_string(),
                start: i,
                end: i + c.len_utf8(),
            });
        }
    }
    if let Some(s) = start {
        out.push(Token {
            text: text[s..].to_string(),
            start: s,
            end: text.len(),
        });
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    tags: HashMap<String, String>,
}

impl Lexicon {
    /// Parses `word<TAB>tag` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Lexicon {
        let tags = text
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .filter_map(|l| {
                let mut parts = l.split('\t');
                Some((parts.next()?.trim().to_lowercase(), parts.next()?.trim().to_string()))
            })
            .collect();
        Lexicon { tags }
    }

    pub fn bundled() -> &'static Lexicon {
        static LEX: OnceLock<Lexicon> = OnceLock::new();
        LEX.get_or_init(|| Lexicon::parse(BUNDLED_LEXICON))
    }

    pub fn get(&self, word: &str) -> Option<&str> {
        self.tags.get(&word.to_lowercase()).map(String::as_str)
    }

    /// Nouns, verbs, adjectives and adverbs, sorted.
    pub fn content_words(&self) -> impl Iterator<Item = &str> {
        let mut words: Vec<&str> = self
            .tags
            .iter()
            .filter(|(_, t)| matches!(t.as_str(), NOUN | VERB | ADJ | ADV))
            .map(|(w, _)| w.as_str())
            .collect();
        words.sort_unstable();
        words.into_iter()
    }

    pub fn words_with_tag<'a>(&'a self, tag: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        let mut words: Vec<&str> = self
            .tags
            .iter()
            .filter(|(_, t)| t.as_str() == tag)
            .map(|(w, _)| w.as_str())
            .collect();
        words.sort_unstable();
        words.into_iter()
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

pub trait PosTagger: Send + Sync {
    /// One tag per token.
    fn tag(&self, sentence_id: &str, tokens: &[Token]) -> Vec<String>;
}

/// Lexicon lookup with suffix-rule fallback.
#[derive(Debug, Clone)]
pub struct LexiconTagger {
    lexicon: Lexicon,
}

impl LexiconTagger {
    pub fn new(lexicon: Lexicon) -> Self {
        LexiconTagger { lexicon }
    }

    pub fn bundled() -> Self {
        LexiconTagger::new(Lexicon::bundled().clone())
    }

    pub fn tag_word(&self, word: &str) -> String {
        if let Some(t) = self.lexicon.get(word) {
            return t.to_string();
        }
        suffix_tag(word).to_string()
    }
}

fn suffix_tag(word: &str) -> &'static str {
    if word.chars().all(|c| c.is_ascii_digit()) {
        return NUM;
    }
    if !word.chars().any(char::is_alphabetic) {
        return if word == "_" { OTHER } else { PUNCT };
    }
    let w = word.to_lowercase();
    const RULES: &[(&str, &str)] = &[
        ("ly", ADV),
        ("ing", VERB),
        ("ed", VERB),
        ("ous", ADJ),
        ("ful", ADJ),
        ("ive", ADJ),
        ("able", ADJ),
        ("ible", ADJ),
        ("less", ADJ),
        ("tion", NOUN),
        ("sion", NOUN),
        ("ness", NOUN),
        ("ment", NOUN),
        ("ity", NOUN),
        ("er", NOUN),
    ];
    RULES
        .iter()
        .find(|(suffix, _)| w.len() > suffix.len() + 2 && w.ends_with(suffix))
        .map_or(NOUN, |&(_, tag)| tag)
}

impl PosTagger for LexiconTagger {
    fn tag(&self, _sentence_id: &str, tokens: &[Token]) -> Vec<String> {
        tokens.iter().map(|t| self.tag_word(&t.text)).collect()
    }
}

#[derive(Debug, Deserialize)]
struct TaggedToken {
    text: String,
    tag: String,
}

#[derive(Debug, Deserialize)]
struct TaggedSentence {
    sentence_id: String,
    tokens: Vec<TaggedToken>,
}

/// Tags from an annotation file of `{sentence_id, tokens:[{text, tag}]}`
/// lines. Sentences that are missing, or whose tokens do not line up with
/// the tokenizer's, go to the fallback tagger.
pub struct FileTagger<T> {
    sentences: HashMap<String, Vec<(String, String)>>,
    fallback: T,
}

impl<T: PosTagger> FileTagger<T> {
    pub fn load(path: &Path, fallback: T) -> std::io::Result<Self> {
        let f = BufReader::new(fs::File::open(path)?);
        let mut sentences = HashMap::new();
        for line in f.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let s: TaggedSentence = serde_json::from_str(&line)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            sentences.insert(
                s.sentence_id,
                s.tokens.into_iter().map(|t| (t.text, t.tag)).collect(),
            );
        }
        Ok(FileTagger {
            sentences,
            fallback,
        })
    }
}

impl<T: PosTagger> PosTagger for FileTagger<T> {
    fn tag(&self, sentence_id: &str, tokens: &[Token]) -> Vec<String> {
        match self.sentences.get(sentence_id) {
            Some(tagged)
                if tagged.len() == tokens.len()
                    && tagged
                        .iter()
                        .zip(tokens)
                        .all(|((text, _), tok)| text.eq_ignore_ascii_case(&tok.text)) =>
            {
                tagged.iter().map(|(_, tag)| tag.clone()).collect()
            }
            Some(_) => {
                log::warn!("tag file tokens for {sentence_id} do not match; using fallback");
                self.fallback.tag(sentence_id, tokens)
            }
            None => self.fallback.tag(sentence_id, tokens),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(ts: &[Token]) -> Vec<&str> {
        ts.iter().map(|t| t.text.as_str()).collect()
    }

    #[test]
    fn tokenizes_words_and_punctuation() {
        let t = tokenize("I saw _ , didn't I?");
        assert_eq!(texts(&t), ["I", "saw", "_", ",", "didn't", "I", "?"]);
        assert_eq!(&"I saw _ , didn't I?"[t[4].start..t[4].end], "didn't");
    }

    #[test]
    fn fixture_sentence_tags() {
        let tagger = LexiconTagger::bundled();
        let toks = tokenize("The big dog saw the small cat");
        let tags = tagger.tag("s", &toks);
        assert_eq!(tags, ["DET", "ADJ", "NOUN", "VERB", "DET", "ADJ", "NOUN"]);
    }

    #[test]
    fn suffix_rules() {
        let tagger = LexiconTagger::new(Lexicon::default());
        assert_eq!(tagger.tag_word("marvellously"), ADV);
        assert_eq!(tagger.tag_word("jumping"), VERB);
        assert_eq!(tagger.tag_word("dangerous"), ADJ);
        assert_eq!(tagger.tag_word("information"), NOUN);
        assert_eq!(tagger.tag_word("1999"), NUM);
        assert_eq!(tagger.tag_word("."), PUNCT);
        // too short for a suffix rule
        assert_eq!(tagger.tag_word("fly"), NOUN);
    }

    #[test]
    fn bundled_lexicon_has_content_words() {
        let lex = Lexicon::bundled();
        assert!(lex.content_words().count() > 300);
        assert_eq!(lex.get("Quickly"), Some(ADV));
    }

    #[test]
    fn file_tagger_overrides_and_falls_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tags.jsonl");
        fs::write(
            &path,
            r#"{"sentence_id":"s1","tokens":[{"text":"Time","tag":"NOUN"},{"text":"flies","tag":"VERB"}]}"#,
        )
        .unwrap();
        let tagger = FileTagger::load(&path, LexiconTagger::bundled()).unwrap();
        assert_eq!(tagger.tag("s1", &tokenize("Time flies")), ["NOUN", "VERB"]);
        assert_eq!(tagger.tag("s2", &tokenize("the dog")), ["DET", "NOUN"]);
        assert_eq!(tagger.tag("s1", &tokenize("other words here")).len(), 3);
    }
}
