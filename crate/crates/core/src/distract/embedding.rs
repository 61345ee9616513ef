//! Word vectors in the GloVe text layout and cosine similarity.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("zero vector")]
    ZeroVector,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn cosine_similarity(u: &[f32], v: &[f32]) -> Result<f64, EmbeddingError> {
    if u.len() != v.len() {
        return Err(EmbeddingError::DimensionMismatch(u.len(), v.len()));
    }
    let (mut dot, mut uu, mut vv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok((dot / (uu * vv).sqrt()).clamp(-1.0, 1.0))
}

/// Read-only word → vector map. Lookups are case-insensitive.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    dim: usize,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Adds or replaces a vector. The first word stored fixes the dimension
    /// of an empty store.
    pub fn insert(&mut self, word: &str, vector: &[f32]) -> Result<(), EmbeddingError> {
        if self.index.is_empty() && self.dim == 0 {
            self.dim = vector.len();
        }
        if vector.len() != self.dim {
            return Err(EmbeddingError::DimensionMismatch(self.dim, vector.len()));
        }
        let key = word.to_lowercase();
        match self.index.get(&key) {
            Some(&slot) => self.data[slot * self.dim..(slot + 1) * self.dim].copy_from_slice(vector),
            None => {
                self.index.insert(key, self.index.len());
                self.data.extend_from_slice(vector);
            }
        }
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.index
            .get(&word.to_lowercase())
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    /// `None` when either word has no vector (or a zero vector).
    pub fn similarity(&self, a: &str, b: &str) -> Option<f64> {
        cosine_similarity(self.get(a)?, self.get(b)?).ok()
    }

    /// Parses the GloVe text layout: a word followed by its components on
    /// each line. The first line fixes the dimension. When a word repeats,
    /// the first occurrence wins (GloVe files list frequent forms first).
    pub fn parse<R: BufRead>(reader: R) -> Result<Self, EmbeddingError> {
        let mut store = EmbeddingStore::new(0);
        let mut buf = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            buf.clear();
            for p in parts {
                buf.push(p.parse::<f32>().map_err(|e| EmbeddingError::Parse {
                    line: n + 1,
                    reason: format!("{p:?}: {e}"),
                })?);
            }
            if store.dim == 0 {
                if buf.is_empty() {
                    return Err(EmbeddingError::Parse {
                        line: n + 1,
                        reason: "no vector components".into(),
                    });
                }
                store.dim = buf.len();
            }
            if buf.len() != store.dim {
                return Err(EmbeddingError::Parse {
                    line: n + 1,
                    reason: format!("expected {} components, found {}", store.dim, buf.len()),
                });
            }
            if store.get(word).is_none() {
                store.insert(word, &buf)?;
            }
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        Self::parse(BufReader::new(fs::File::open(path)?))
    }

    /// Writes the store in GloVe text layout, words sorted.
    pub fn write<W: Write>(&self, out: W) -> Result<(), EmbeddingError> {
        let mut words: Vec<(&String, &usize)> = self.index.iter().collect();
        words.sort();
        let mut f = std::io::BufWriter::new(out);
        for (w, &i) in words {
            write!(f, "{w}")?;
            for x in &self.data[i * self.dim..(i + 1) * self.dim] {
                write!(f, " {x}")?;
            }
            writeln!(f)?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbeddingError> {
        self.write(fs::File::create(path)?)
    }
}
