//! Femininity norms for role nouns, with an explicit alias map.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NormsError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} row {row}: {message}")]
    Row {
        path: String,
        row: usize,
        message: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NormsTable {
    ratings: BTreeMap<String, f64>,
    aliases: BTreeMap<String, String>,
    pub provenance: String,
}

/// Case-insensitive lemma key: lowercased, whitespace collapsed, leading article dropped.
pub fn normalize_noun(noun: &str) -> String {
    let lowered = noun.trim().to_lowercase();
    let words: Vec<&str> = lowered.split_whitespace().collect();
    let words = match words.as_slice() {
        [first, rest @ ..] if !rest.is_empty() && matches!(*first, "the" | "a" | "an") => rest,
        all => all,
    };
    words.join(" ")
}

impl NormsTable {
    pub fn new(provenance: impl Into<String>) -> Self {
        Self {
            provenance: provenance.into(),
            ..Self::default()
        }
    }

    /// Insert a rating; ratings outside [0, 1] are rejected.
    pub fn insert(&mut self, noun: &str, rating: f64) -> Result<(), String> {
        if !(0.0..=1.0).contains(&rating) {
            return Err(format!("rating {rating} for '{noun}' is outside [0, 1]"));
        }
        self.ratings.insert(normalize_noun(noun), rating);
        Ok(())
    }

    pub fn insert_alias(&mut self, alias: &str, canonical: &str) {
        self.aliases
            .insert(normalize_noun(alias), normalize_noun(canonical));
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn lookup(&self, noun: &str) -> Option<f64> {
        let key = normalize_noun(noun);
        if let Some(r) = self.ratings.get(&key) {
            return Some(*r);
        }
        self.aliases
            .get(&key)
            .and_then(|canonical| self.ratings.get(canonical))
            .copied()
    }

    /// Load `role_noun,femininity_rating` rows.
    pub fn load(path: &Path) -> Result<Self, NormsError> {
        let mut table = NormsTable::new(path.display().to_string());
        for (row, rec) in read_rows(path)?.into_iter().enumerate() {
            let row = row + 2;
            let bad = |message: String| NormsError::Row {
                path: path.display().to_string(),
                row,
                message,
            };
            let noun = rec.first().ok_or_else(|| bad("missing role_noun".into()))?;
            let rating: f64 = rec
                .get(1)
                .ok_or_else(|| bad("missing femininity_rating".into()))?
                .trim()
                .parse()
                .map_err(|e| bad(format!("bad rating: {e}")))?;
            table.insert(noun, rating).map_err(bad)?;
        }
        Ok(table)
    }

    /// Load `alias,canonical` rows into this table.
    pub fn load_aliases(&mut self, path: &Path) -> Result<(), NormsError> {
        for (row, rec) in read_rows(path)?.into_iter().enumerate() {
            match (rec.first(), rec.get(1)) {
                (Some(a), Some(c)) => self.insert_alias(a, c),
                _ => {
                    return Err(NormsError::Row {
                        path: path.display().to_string(),
                        row: row + 2,
                        message: "expected alias,canonical".into(),
                    })
                }
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["role_noun", "femininity_rating"])?;
        for (noun, r) in &self.ratings {
            w.write_record([noun.as_str(), &r.to_string()])?;
        }
        w.flush()
    }
}

fn read_rows(path: &Path) -> Result<Vec<Vec<String>>, NormsError> {
    let io = |source| NormsError::Io {
        path: path.display().to_string(),
        source,
    };
    let bytes = std::fs::read(path).map_err(io)?;
    let delimiter = if path.extension().and_then(|e| e.to_str()) == Some("tsv") {
        b'\t'
    } else {
        b','
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .from_reader(bytes.as_slice());
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| NormsError::Row {
            path: path.display().to_string(),
            row: i + 2,
            message: e.to_string(),
        })?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(rows)
}
