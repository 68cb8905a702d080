//! Correctness labels keyed by trace id.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::table;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("no label for trace {0:?}")]
    MissingLabel(String),
    #[error(transparent)]
    Table(#[from] table::TableError),
    #[error(transparent)]
    Trace(#[from] crate::trace::TraceError),
}

/// Map from trace id to whether the model answered correctly.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Labels(HashMap<String, bool>);

impl Labels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, correct: bool) {
        self.0.insert(id.into(), correct);
    }

    pub fn get(&self, id: &str) -> Result<bool, LabelError> {
        self.0
            .get(id)
            .copied()
            .ok_or_else(|| LabelError::MissingLabel(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.0.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Ids in ascending order.
    pub fn sorted_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.0.keys().map(String::as_str).collect();
        ids.sort_unstable();
        ids
    }

    /// Fraction of correct labels among `ids`.
    pub fn accuracy_over<'a>(
        &self,
        ids: impl IntoIterator<Item = &'a str>,
    ) -> Result<f64, LabelError> {
        let mut n = 0usize;
        let mut hits = 0usize;
        for id in ids {
            n += 1;
            hits += usize::from(self.get(id)?);
        }
        Ok(if n == 0 { 0.0 } else { hits as f64 / n as f64 })
    }

    /// Reads a label table (`id<TAB>correct` with a header row) or, for
    /// `.jsonl` paths, the `correct` field of a trace file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LabelError> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e == "jsonl") {
            let set = crate::trace::load_traces(path, true)?;
            return Ok(set.labels());
        }
        let rows = table::read_rows(path, &["id", "correct"])?;
        let mut labels = Labels::new();
        for (line, row) in rows {
            let correct = table::parse_bool(&row[1]).ok_or_else(|| table::TableError::Parse {
                line,
                reason: format!("bad boolean {:?}", row[1]),
            })?;
            labels.insert(row[0].clone(), correct);
        }
        Ok(labels)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), table::TableError> {
        let mut w = table::TableWriter::create(path, &["id", "correct"])?;
        for id in self.sorted_ids() {
            let c = self.0[id];
            w.row(&[id, if c { "1" } else { "0" }])?;
        }
        w.finish()
    }
}

impl FromIterator<(String, bool)> for Labels {
    fn from_iter<T: IntoIterator<Item = (String, bool)>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}
