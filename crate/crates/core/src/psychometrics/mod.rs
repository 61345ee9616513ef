//! Surrogate test-takers, response matrices and the utility ratio.
//!
//! A surrogate answers an item by scoring its four options for the masked
//! stem and picking the most confident one. Responses from a panel form a
//! subjects × items binary matrix, which feeds the Rasch fitter in
//! [`rasch`].

mod rasch;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use rasch::{
    fit_rasch_1pl, log_posterior, log_posterior_gradient, logistic, predict_prob, IrtFit,
    RaschConfig,
};

use crate::corpus::ClozeItem;
use crate::scoring::{rank_vocabulary, ScoreQuery, ScoreSource, ScoringError, MASK_TOKEN};

#[derive(Debug, Error)]
pub enum PsychError {
    #[error("degenerate matrix: {subjects} subjects × {items} items, need at least 2 × 2")]
    DegenerateMatrix { subjects: usize, items: usize },
    #[error("unknown id {0:?}")]
    UnknownId(String),
    #[error("malformed response matrix: {0}")]
    Shape(String),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Binary correctness, one row per subject.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseMatrix {
    subjects: Vec<String>,
    items: Vec<String>,
    rows: Vec<Vec<u8>>,
}

impl ResponseMatrix {
    pub fn new(subjects: Vec<String>, items: Vec<String>, rows: Vec<Vec<u8>>) -> Result<Self, PsychError> {
        if rows.len() != subjects.len() {
            return Err(PsychError::Shape(format!(
                "{} subjects but {} rows",
                subjects.len(),
                rows.len()
            )));
        }
        if let Some((j, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != items.len()) {
            return Err(PsychError::Shape(format!(
                "row {} has {} cells, expected {}",
                subjects[j],
                r.len(),
                items.len()
            )));
        }
        if rows.iter().flatten().any(|&c| c > 1) {
            return Err(PsychError::Shape("cells must be 0 or 1".into()));
        }
        check_unique(&subjects, "subject")?;
        check_unique(&items, "item")?;
        Ok(ResponseMatrix { subjects, items, rows })
    }

    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn rows(&self) -> &[Vec<u8>] {
        &self.rows
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn get(&self, subject: usize, item: usize) -> u8 {
        self.rows[subject][item]
    }

    pub fn row_mean(&self, subject: usize) -> f64 {
        let r = &self.rows[subject];
        r.iter().map(|&c| c as f64).sum::<f64>() / r.len().max(1) as f64
    }

    pub fn column_sum(&self, item: usize) -> usize {
        self.rows.iter().map(|r| r[item] as usize).sum()
    }

    /// Keeps only the listed item columns, in the given order.
    pub fn select_items(&self, items: &[String]) -> Result<ResponseMatrix, PsychError> {
        let idx: Vec<usize> = items
            .iter()
            .map(|id| {
                self.items
                    .iter()
                    .position(|x| x == id)
                    .ok_or_else(|| PsychError::UnknownId(id.clone()))
            })
            .collect::<Result<_, _>>()?;
        let rows = self
            .rows
            .iter()
            .map(|r| idx.iter().map(|&i| r[i]).collect())
            .collect();
        ResponseMatrix::new(self.subjects.clone(), items.to_vec(), rows)
    }

    /// Joins matrices column-wise over a shared subject panel.
    pub fn concat_items(parts: &[ResponseMatrix]) -> Result<ResponseMatrix, PsychError> {
        let Some(first) = parts.first() else {
            return ResponseMatrix::new(Vec::new(), Vec::new(), Vec::new());
        };
        let mut items = Vec::new();
        let mut rows = vec![Vec::new(); first.subjects.len()];
        for p in parts {
            if p.subjects != first.subjects {
                return Err(PsychError::Shape("matrices have different subject panels".into()));
            }
            items.extend(p.items.iter().cloned());
            for (dst, src) in rows.iter_mut().zip(&p.rows) {
                dst.extend_from_slice(src);
            }
        }
        ResponseMatrix::new(first.subjects.clone(), items, rows)
    }

    /// Comma-separated: a header `subject,<item ids…>` then one 0/1 row per subject.
    pub fn write_csv(&self, path: &Path) -> Result<(), PsychError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(std::iter::once("subject").chain(self.items.iter().map(String::as_str)))?;
        for (s, row) in self.subjects.iter().zip(&self.rows) {
            w.write_record(
                std::iter::once(s.clone()).chain(row.iter().map(|c| c.to_string())),
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<ResponseMatrix, PsychError> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let items: Vec<String> = r.headers()?.iter().skip(1).map(String::from).collect();
        let mut subjects = Vec::new();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let mut fields = rec.iter();
            subjects.push(fields.next().unwrap_or_default().to_string());
            let row = fields
                .map(|c| match c.trim() {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    other => Err(PsychError::Shape(format!("cell {other:?} is not 0 or 1"))),
                })
                .collect::<Result<Vec<u8>, _>>()?;
            rows.push(row);
        }
        ResponseMatrix::new(subjects, items, rows)
    }
}

fn check_unique(ids: &[String], what: &str) -> Result<(), PsychError> {
    let mut seen = std::collections::HashSet::new();
    match ids.iter().find(|id| !seen.insert(id.as_str())) {
        Some(dup) => Err(PsychError::Shape(format!("duplicate {what} id {dup:?}"))),
        None => Ok(()),
    }
}

/// Index of the option the surrogate prefers: highest confidence in its
/// table for the masked stem, absent options scoring 0, ties to the lower index.
pub fn choose_option(item: &ClozeItem, source: &dyn ScoreSource) -> Result<usize, ScoringError> {
    let query = ScoreQuery::new(item.item_id.clone(), item.masked_stem(MASK_TOKEN), 4)
        .with_candidates(item.options.to_vec())
        .with_key(item.key());
    let table = rank_vocabulary(&query, source, 0)?;
    let mut best = 0;
    let mut best_p = f64::NEG_INFINITY;
    for (i, opt) in item.options.iter().enumerate() {
        let p = table.prob_of(opt).unwrap_or(0.0);
        if p > best_p {
            best = i;
            best_p = p;
        }
    }
    Ok(best)
}

/// Whether the surrogate picks the key.
pub fn simulate_surrogate_answer(item: &ClozeItem, source: &dyn ScoreSource) -> Result<bool, ScoringError> {
    Ok(choose_option(item, source)? == item.key_index)
}

/// Every panel member answers every item. Items that some member cannot
/// score are dropped with a warning; if nothing survives, the first error
/// is returned. Subjects are identified by their source ids.
pub fn build_response_matrix(
    items: &[ClozeItem],
    panel: &[Box<dyn ScoreSource>],
) -> Result<ResponseMatrix, PsychError> {
    let columns: Vec<Result<Vec<u8>, ScoringError>> = items
        .par_iter()
        .map(|item| {
            panel
                .iter()
                .map(|s| simulate_surrogate_answer(item, s.as_ref()).map(u8::from))
                .collect()
        })
        .collect();
    let mut kept = Vec::new();
    let mut cols = Vec::new();
    let mut first_err = None;
    for (item, col) in items.iter().zip(columns) {
        match col {
            Ok(c) => {
                kept.push(item.item_id.clone());
                cols.push(c);
            }
            Err(e) => {
                log::warn!("dropping {}: {e}", item.item_id);
                first_err.get_or_insert(e);
            }
        }
    }
    if let (true, Some(e)) = (kept.is_empty(), first_err) {
        return Err(e.into());
    }
    let subjects = panel.iter().map(|s| s.source_id().to_string()).collect();
    let rows = (0..panel.len())
        .map(|j| cols.iter().map(|c| c[j]).collect())
        .collect();
    ResponseMatrix::new(subjects, kept, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub n_items: usize,
    pub n_informative: usize,
    pub ratio: f64,
}

/// Share of items the panel does not answer unanimously. An empty matrix
/// reports 0.
pub fn utility_ratio(matrix: &ResponseMatrix) -> UtilityReport {
    let n_subjects = matrix.n_subjects();
    let n_items = matrix.n_items();
    let n_informative = (0..n_items)
        .filter(|&i| {
            let s = matrix.column_sum(i);
            s != 0 && s != n_subjects
        })
        .count();
    let ratio = if n_items == 0 {
        0.0
    } else {
        n_informative as f64 / n_items as f64
    };
    UtilityReport {
        n_items,
        n_informative,
        ratio,
    }
}

pub fn write_fit(path: &Path, fit: &IrtFit) -> Result<(), PsychError> {
    let mut text = serde_json::to_string_pretty(fit)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_fit(path: &Path) -> Result<IrtFit, PsychError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
