use std::collections::HashMap;
use std::path::Path;

use super::{read_tables, RawEntry, ScoreQuery, ScoreSource, ScoreTable, ScoringError};

/// Serves pre-computed tables from a score-table file, keyed by item id.
#[derive(Debug, Clone)]
pub struct FixtureSource {
    id: String,
    tables: HashMap<String, ScoreTable>,
}

impl FixtureSource {
    pub fn load(id: &str, path: &Path) -> Result<Self, ScoringError> {
        let tables = read_tables(path).map_err(|e| match e {
            ScoringError::Io(io) => ScoringError::SourceUnavailable {
                source_id: id.to_string(),
                reason: format!("{}: {io}", path.display()),
            },
            other => other,
        })?;
        Ok(Self::from_tables(id, tables))
    }

    pub fn from_tables(id: &str, tables: Vec<ScoreTable>) -> Self {
        FixtureSource {
            id: id.to_string(),
            tables: tables.into_iter().map(|t| (t.item_id.clone(), t)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }
}

impl ScoreSource for FixtureSource {
    fn source_id(&self) -> &str {
        &self.id
    }

    fn raw_scores(&self, query: &ScoreQuery) -> Result<Vec<RawEntry>, ScoringError> {
        let table = self
            .tables
            .get(&query.item_id)
            .ok_or_else(|| ScoringError::SourceUnavailable {
                source_id: self.id.clone(),
                reason: format!("no fixture table for {}", query.item_id),
            })?;
        Ok(table
            .entries()
            .iter()
            .map(|e| RawEntry::new(e.token.clone(), e.prob))
            .collect())
    }
}
