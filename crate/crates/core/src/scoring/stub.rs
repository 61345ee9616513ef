//! Seeded synthetic scorer.
//!
//! The stub models a small "world" in which every word has a latent vector
//! and every (context, key) pair a latent difficulty. For a query it ranks
//! the vocabulary by relatedness to the key plus shared context noise and
//! per-surrogate noise, then inserts the key at a rank that grows with the
//! item's difficulty and shrinks with the stub's ability. Probabilities
//! follow a geometric profile whose decay is steeper for easier gaps, so
//! easy gaps also come out with low entropy.
//!
//! Everything is a pure function of (world seed, surrogate seed, ability,
//! masked stem, key), so two stubs sharing a world agree on which words
//! compete for a gap while still disagreeing in the details.

use std::sync::Arc;

use super::{RawEntry, ScoreQuery, ScoreSource, ScoringError, MASK_TOKEN};
use crate::hashing::{mix, normal, str_hash};
use crate::tagger::Lexicon;

pub const DEFAULT_WORLD_SEED: u64 = 20_240_517;
pub const LATENT_DIM: usize = 16;

const RELATEDNESS_WEIGHT: f64 = 4.0;
const CONTEXT_NOISE: f64 = 0.35;
const SURROGATE_NOISE: f64 = 0.35;
const RANK_SCALE: f64 = 6.0;
const KEY_NOISE: f64 = 0.5;
const DECAY_MIN: f64 = 0.35;
const DECAY_MAX: f64 = 0.95;

const TAG_LATENT: u64 = 0x6c61_7465;
const TAG_DIFFICULTY: u64 = 0x6469_6666;
const TAG_KEY_NOISE: u64 = 0x6b65_796e;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StubParams {
    pub ability: f64,
    pub seed: u64,
    pub world_seed: u64,
}

impl StubParams {
    pub fn new(ability: f64, seed: u64) -> Self {
        StubParams {
            ability,
            seed,
            world_seed: DEFAULT_WORLD_SEED,
        }
    }
}

/// Unit-length latent vector for `word` in the given world.
pub fn latent_vector(word: &str, world_seed: u64) -> [f64; LATENT_DIM] {
    let h = str_hash(&word.to_lowercase());
    let mut v = [0.0; LATENT_DIM];
    for (i, x) in v.iter_mut().enumerate() {
        *x = normal(mix(&[world_seed, TAG_LATENT, h, i as u64]));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

fn dot(a: &[f64; LATENT_DIM], b: &[f64; LATENT_DIM]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Hash of a masked stem that ignores case and whitespace layout.
pub fn context_hash(masked_stem: &str) -> u64 {
    let norm: Vec<String> = masked_stem
        .split_whitespace()
        .map(|w| if w == MASK_TOKEN { w.to_string() } else { w.to_lowercase() })
        .collect();
    str_hash(&norm.join(" "))
}

/// Latent difficulty of a gap, standard normal across gaps.
pub fn gap_difficulty(world_seed: u64, masked_stem: &str, key: &str) -> f64 {
    normal(mix(&[
        world_seed,
        TAG_DIFFICULTY,
        context_hash(masked_stem),
        str_hash(&key.to_lowercase()),
    ]))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Geometric decay rate of the probability profile for a gap.
fn decay_rate(difficulty: f64) -> f64 {
    DECAY_MIN + (DECAY_MAX - DECAY_MIN) / (1.0 + (-difficulty).exp())
}

/// Zero-based rank at which a stub places the key, before clamping to the
/// vocabulary size. Non-increasing in `ability`.
pub fn key_rank(params: &StubParams, masked_stem: &str, key: &str) -> usize {
    let d = gap_difficulty(params.world_seed, masked_stem, key);
    let e = normal(mix(&[
        params.seed,
        TAG_KEY_NOISE,
        context_hash(masked_stem),
        str_hash(&key.to_lowercase()),
    ]));
    (RANK_SCALE * softplus(d + KEY_NOISE * e - params.ability)).floor() as usize
}

/// Shared word list with precomputed latent vectors.
#[derive(Debug, Clone)]
pub struct StubVocabulary {
    inner: Arc<VocabInner>,
}

#[derive(Debug)]
struct VocabInner {
    world_seed: u64,
    words: Vec<String>,
    hashes: Vec<u64>,
    latents: Vec<[f64; LATENT_DIM]>,
}

impl StubVocabulary {
    pub fn new(words: impl IntoIterator<Item = String>, world_seed: u64) -> Self {
        let mut words: Vec<String> = words.into_iter().map(|w| w.to_lowercase()).collect();
        words.sort();
        words.dedup();
        let hashes = words.iter().map(|w| str_hash(w)).collect();
        let latents = words.iter().map(|w| latent_vector(w, world_seed)).collect();
        StubVocabulary {
            inner: Arc::new(VocabInner {
                world_seed,
                words,
                hashes,
                latents,
            }),
        }
    }

    /// Content words of the bundled lexicon.
    pub fn bundled() -> Self {
        Self::new(
            Lexicon::bundled().content_words().map(str::to_string),
            DEFAULT_WORLD_SEED,
        )
    }

    pub fn words(&self) -> &[String] {
        &self.inner.words
    }

    pub fn world_seed(&self) -> u64 {
        self.inner.world_seed
    }

    pub fn len(&self) -> usize {
        self.inner.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.words.is_empty()
    }

    /// Vocabulary words ordered by latent relatedness to `key` (most related
    /// first), excluding the key itself. No context or surrogate noise.
    pub fn by_relatedness(&self, key: &str) -> Vec<&str> {
        let key = key.to_lowercase();
        let kv = latent_vector(&key, self.inner.world_seed);
        let mut scored: Vec<(f64, &str)> = self
            .inner
            .words
            .iter()
            .zip(&self.inner.latents)
            .filter(|(w, _)| **w != key)
            .map(|(w, v)| (dot(&kv, v), w.as_str()))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        scored.into_iter().map(|(_, w)| w).collect()
    }
}

#[derive(Debug, Clone)]
pub struct StubSource {
    id: String,
    params: StubParams,
    vocab: StubVocabulary,
}

impl StubSource {
    pub fn new(id: impl Into<String>, mut params: StubParams, vocab: StubVocabulary) -> Self {
        // The vocabulary's latent vectors fix the world.
        params.world_seed = vocab.world_seed();
        StubSource {
            id: id.into(),
            params,
            vocab,
        }
    }

    pub fn params(&self) -> &StubParams {
        &self.params
    }

    /// Full ranked list (token, prob) for a masked stem.
    pub fn ranking(&self, masked_stem: &str, key: Option<&str>) -> Vec<(String, f64)> {
        let v = &self.vocab.inner;
        let ctx = context_hash(masked_stem);
        let key = key.map(str::to_lowercase);
        let key_vec = key.as_deref().map(|k| latent_vector(k, v.world_seed));

        let mut scored: Vec<(f64, usize)> = (0..v.words.len())
            .filter(|&i| key.as_deref() != Some(v.words[i].as_str()))
            .map(|i| {
                let rel = key_vec.as_ref().map_or(0.0, |kv| dot(kv, &v.latents[i]));
                let shared = normal(mix(&[v.world_seed, ctx, v.hashes[i]]));
                let own = normal(mix(&[self.params.seed, ctx, v.hashes[i]]));
                let s = RELATEDNESS_WEIGHT * rel + CONTEXT_NOISE * shared + SURROGATE_NOISE * own;
                (s, i)
            })
            .collect();
        scored.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| v.words[a.1].cmp(&v.words[b.1]))
        });
        let mut ranked: Vec<&str> = scored.iter().map(|&(_, i)| v.words[i].as_str()).collect();

        let difficulty = match &key {
            Some(k) => {
                let r = key_rank(&self.params, masked_stem, k).min(ranked.len());
                ranked.insert(r, k);
                gap_difficulty(v.world_seed, masked_stem, k)
            }
            None => gap_difficulty(v.world_seed, masked_stem, ""),
        };

        let rho = decay_rate(difficulty);
        let n = ranked.len() as i32;
        let norm = (1.0 - rho) / (1.0 - rho.powi(n));
        ranked
            .into_iter()
            .enumerate()
            .map(|(i, w)| (w.to_string(), norm * rho.powi(i as i32)))
            .collect()
    }
}

impl ScoreSource for StubSource {
    fn source_id(&self) -> &str {
        &self.id
    }

    fn raw_scores(&self, query: &ScoreQuery) -> Result<Vec<RawEntry>, ScoringError> {
        let ranked = self.ranking(&query.masked_stem, query.key_hint.as_deref());
        let entries = ranked.into_iter().map(|(t, p)| RawEntry::new(t, p));
        Ok(match &query.candidate_filter {
            // Candidate filtering happens downstream; skip truncation so
            // deep-ranked candidates survive.
            Some(_) => entries.collect(),
            None => entries.take(query.top_k).collect(),
        })
    }
}
