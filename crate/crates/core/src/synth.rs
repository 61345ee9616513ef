//! Bundled synthetic data: a CLOTH-style corpus, a word-vector fixture and a
//! default surrogate panel, all derived from seeds so they can be
//! regenerated exactly.
//!
//! Passages are built from sentence templates over the lexicon. Each gap's
//! original distractors are drawn from a middle band of the key's latent
//! relatedness list, so they sit between what a strong scorer ranks right
//! after the key and what it ranks far below it.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{parse_passages, Level, Passage};
use crate::distract::EmbeddingStore;
use crate::hashing::{mix, normal, str_hash};
use crate::scoring::{latent_vector, StubVocabulary, SurrogateProfile, DEFAULT_WORLD_SEED, LATENT_DIM};
use crate::tagger::{Lexicon, ADJ, ADV, NOUN, VERB};

pub const CORPUS_SEED: u64 = 7;
pub const EMBEDDING_SEED: u64 = 11;
pub const EMBEDDING_NOISE: f64 = 0.05;

const BUNDLED_CORPUS: &str = include_str!("../data/synthetic_corpus.jsonl");
const BUNDLED_EMBEDDINGS: &str = include_str!("../data/synthetic_vectors.txt");

/// Relatedness ranks (zero-based) from which original distractors are drawn.
const DISTRACTOR_BAND: std::ops::Range<usize> = 4..24;

const AUXILIARIES: &[&str] = &[
    "was", "were", "is", "are", "had", "has", "have", "did", "could", "would", "should", "must",
    "might", "will", "can",
];

/// `{N}` noun, `{V}` past verb, `{J}` adjective, `{R}` adverb.
const TEMPLATES: &[&str] = &[
    "The {J} {N} {V} the {N}.",
    "A {N} {V} {R} near the {J} {N}.",
    "Every {N} {V} a {J} {N} in the {N}.",
    "Her {N} {V} {R} through the {N}.",
    "They {V} the {J} {N} after the {N}.",
    "Some {J} {N} {V} with his {N}.",
    "The {N} {V} {R} and the {N} {V} too.",
    "Our {J} {N} {V} another {N} at the {N}.",
    "Its {N} {V} {R} under a {J} {N}.",
    "We {V} the {N} because the {N} {V} {R}.",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_passages: usize,
    pub sentences_per_passage: usize,
    pub gaps_per_passage: usize,
    pub seed: u64,
    pub world_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_passages: 50,
            sentences_per_passage: 6,
            gaps_per_passage: 4,
            seed: CORPUS_SEED,
            world_seed: DEFAULT_WORLD_SEED,
        }
    }
}

struct Pools {
    nouns: Vec<String>,
    verbs: Vec<String>,
    adjs: Vec<String>,
    advs: Vec<String>,
}

impl Pools {
    fn new(lex: &Lexicon) -> Self {
        let take = |tag| lex.words_with_tag(tag).map(str::to_string).collect::<Vec<_>>();
        Pools {
            nouns: take(NOUN),
            verbs: take(VERB)
                .into_iter()
                .filter(|v| !AUXILIARIES.contains(&v.as_str()))
                .collect(),
            adjs: take(ADJ),
            advs: take(ADV),
        }
    }

    fn pick(&self, slot: char, rng: &mut ChaCha8Rng) -> String {
        let pool = match slot {
            'N' => &self.nouns,
            'V' => &self.verbs,
            'J' => &self.adjs,
            _ => &self.advs,
        };
        pool.choose(rng).expect("non-empty pool").clone()
    }
}

/// Renders one template; returns the text and the byte spans of its slots.
fn render(template: &str, pools: &Pools, rng: &mut ChaCha8Rng) -> (String, Vec<(usize, usize)>) {
    let mut out = String::new();
    let mut slots = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let slot = rest[open + 1..].chars().next().expect("slot letter");
        let word = pools.pick(slot, rng);
        slots.push((out.len(), out.len() + word.len()));
        out.push_str(&word);
        rest = &rest[open + 3..];
    }
    out.push_str(rest);
    (out, slots)
}

fn original_distractors(vocab: &StubVocabulary, key: &str, rng: &mut ChaCha8Rng) -> Vec<String> {
    let related = vocab.by_relatedness(key);
    let band = &related[DISTRACTOR_BAND.start.min(related.len())..DISTRACTOR_BAND.end.min(related.len())];
    band.choose_multiple(rng, 3).map(|w| w.to_string()).collect()
}

/// Generates CLOTH-style passages. Gaps fall in distinct sentences, one
/// content-word slot each.
pub fn synthetic_passages(cfg: &SynthConfig, lexicon: &Lexicon) -> Vec<Passage> {
    let vocab = StubVocabulary::new(lexicon.content_words().map(str::to_string), cfg.world_seed);
    let pools = Pools::new(lexicon);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.n_passages);
    for p in 0..cfg.n_passages {
        let level = if p % 2 == 0 { Level::Middle } else { Level::High };
        let id = format!("{}{p:04}", if level == Level::Middle { "middle" } else { "high" });
        let mut gap_sentences: Vec<usize> = (0..cfg.sentences_per_passage).collect();
        gap_sentences.shuffle(&mut rng);
        gap_sentences.truncate(cfg.gaps_per_passage.min(cfg.sentences_per_passage));
        gap_sentences.sort_unstable();

        let mut text = String::new();
        let mut options = Vec::new();
        let mut answers = Vec::new();
        for s in 0..cfg.sentences_per_passage {
            let template = TEMPLATES.choose(&mut rng).expect("templates");
            let (mut sentence, slots) = render(template, &pools, &mut rng);
            if gap_sentences.contains(&s) {
                let (a, b) = slots[rng.random_range(0..slots.len())];
                let key = sentence[a..b].to_string();
                let mut opts = original_distractors(&vocab, &key, &mut rng);
                let key_at = rng.random_range(0..4);
                opts.insert(key_at, key);
                sentence.replace_range(a..b, "_");
                options.push(opts);
                answers.push(char::from(b'A' + key_at as u8).to_string());
            }
            if !text.is_empty() {
                text.push(' ');
            }
            text.push_str(&sentence);
        }
        let raw = serde_json::json!({
            "id": id,
            "article": text,
            "options": options,
            "answers": answers,
        });
        out.push(
            crate::corpus::parse_cloth_passage(
                serde_json::from_value(raw).expect("raw passage"),
                &id,
                level,
            )
            .expect("synthetic passage is well formed"),
        );
    }
    out
}

/// Word vectors for `vocab`: each word's latent vector plus seeded Gaussian
/// noise, rounded to six decimals.
pub fn synthetic_embeddings(vocab: &StubVocabulary, seed: u64, noise: f64) -> EmbeddingStore {
    let mut store = EmbeddingStore::new(LATENT_DIM);
    for w in vocab.words() {
        let lat = latent_vector(w, vocab.world_seed());
        let h = str_hash(w);
        let v: Vec<f32> = lat
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let y = x + noise * normal(mix(&[seed, h, i as u64]));
                ((y * 1e6).round() / 1e6) as f32
            })
            .collect();
        store.insert(w, &v).expect("fixed dimension");
    }
    store
}

/// Twelve stub surrogates with graded abilities, labelled after the
/// architectures and hyper-parameter grids they stand in for.
pub fn default_panel() -> Vec<SurrogateProfile> {
    const LABELS: [(&str, f64); 12] = [
        ("bigbird,lr=1e-5,bs=8", -1.5),
        ("bigbird,lr=1e-5,bs=16", -1.29),
        ("bigbird,lr=2e-5,bs=8", -1.07),
        ("bigbird,lr=2e-5,bs=16", -0.86),
        ("bigbird,lr=3e-5,bs=8", -0.65),
        ("bigbird,lr=3e-5,bs=16", -0.43),
        ("electra,lr=1e-5,bs=8", -0.22),
        ("electra,lr=1e-5,bs=16", 0.0),
        ("electra,lr=2e-5,bs=8", 0.21),
        ("electra,lr=2e-5,bs=16", 0.42),
        ("electra,lr=3e-5,bs=8", 0.64),
        ("electra,lr=3e-5,bs=16", 0.85),
    ];
    LABELS
        .iter()
        .enumerate()
        .map(|(i, &(label, ability))| {
            SurrogateProfile::stub(
                label,
                format!("stub surrogate, ability {ability}"),
                ability,
                1000 + i as u64,
            )
        })
        .collect()
}

/// The scorer used to rank candidates during generation.
pub fn default_generator() -> SurrogateProfile {
    SurrogateProfile::stub("generator", "stub generator scorer", 3.0, 42)
}

pub fn bundled_corpus() -> Vec<Passage> {
    parse_passages(BUNDLED_CORPUS, "synthetic", Level::Middle).expect("bundled corpus parses")
}

pub fn bundled_embeddings() -> EmbeddingStore {
    EmbeddingStore::parse(BUNDLED_EMBEDDINGS.as_bytes()).expect("bundled vectors parse")
}

/// Serialized forms of the bundled files, for regeneration.
pub fn render_bundled_corpus() -> String {
    let passages = synthetic_passages(&SynthConfig::default(), Lexicon::bundled());
    let mut out = String::new();
    for p in passages {
        out.push_str(&serde_json::to_string(&p.to_raw()).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn render_bundled_embeddings() -> Vec<u8> {
    let store = synthetic_embeddings(&StubVocabulary::bundled(), EMBEDDING_SEED, EMBEDDING_NOISE);
    let mut out = Vec::new();
    store.write(&mut out).expect("write to memory");
    out
}
