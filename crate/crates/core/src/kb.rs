//! Knowledge-base snapshot: one JSON entity per line.
//!
//! ```text
//! {"id": "Q47722", "label": "Broccoli", "p31": [], "p279": ["vegetable"],
//!  "category": "food", "aliases": [], "has_image": true}
//! ```
//!
//! `p31`/`p279` hold the labels of the instance-of and subclass-of targets.
//! They are merged into [`EntityRecord::hypernyms`].

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const OTHERS_CATEGORY: &str = "others";

#[derive(Debug, Error)]
pub enum KbError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate entity {id}")]
    DuplicateEntity { id: String, line: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub entity_id: String,
    pub label: String,
    pub category: String,
    pub hypernyms: Vec<String>,
    pub aliases: Vec<String>,
    pub has_image: bool,
}

#[derive(Debug, Deserialize)]
struct SnapshotLine {
    id: String,
    label: String,
    #[serde(default)]
    p31: Vec<String>,
    #[serde(default)]
    p279: Vec<String>,
    #[serde(default)]
    category: Option<String>,
    #[serde(default)]
    aliases: Vec<String>,
    #[serde(default)]
    has_image: bool,
}

impl From<SnapshotLine> for EntityRecord {
    fn from(line: SnapshotLine) -> Self {
        let mut hypernyms: Vec<String> = Vec::with_capacity(line.p31.len() + line.p279.len());
        for h in line.p31.into_iter().chain(line.p279) {
            if !hypernyms.contains(&h) {
                hypernyms.push(h);
            }
        }
        let category = line
            .category
            .filter(|c| !c.trim().is_empty())
            .unwrap_or_else(|| OTHERS_CATEGORY.to_string());
        EntityRecord {
            entity_id: line.id,
            label: line.label,
            category,
            hypernyms,
            aliases: line.aliases,
            has_image: line.has_image,
        }
    }
}

impl EntityRecord {
    /// Snapshot line for this record. Hypernyms are written back as `p31`.
    pub fn to_snapshot_json(&self) -> serde_json::Value {
        serde_json::json!({
            "id": self.entity_id,
            "label": self.label,
            "p31": self.hypernyms,
            "p279": [],
            "category": self.category,
            "aliases": self.aliases,
            "has_image": self.has_image,
        })
    }
}

/// Immutable set of entities, kept in load order with an id index.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    entities: Vec<EntityRecord>,
    by_id: HashMap<String, usize>,
}

impl KnowledgeBase {
    pub fn from_records(records: Vec<EntityRecord>) -> Result<Self, KbError> {
        let mut kb = KnowledgeBase::default();
        for (i, rec) in records.into_iter().enumerate() {
            kb.push(rec, i + 1)?;
        }
        Ok(kb)
    }

    fn push(&mut self, rec: EntityRecord, line: usize) -> Result<(), KbError> {
        if rec.label.trim().is_empty() {
            return Err(KbError::Parse {
                line,
                message: format!("entity {} has an empty label", rec.entity_id),
            });
        }
        if self.by_id.contains_key(&rec.entity_id) {
            return Err(KbError::DuplicateEntity {
                id: rec.entity_id,
                line,
            });
        }
        self.by_id.insert(rec.entity_id.clone(), self.entities.len());
        self.entities.push(rec);
        Ok(())
    }

    pub fn get(&self, entity_id: &str) -> Option<&EntityRecord> {
        self.by_id.get(entity_id).map(|&i| &self.entities[i])
    }

    pub fn contains(&self, entity_id: &str) -> bool {
        self.by_id.contains_key(entity_id)
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// Entities in load order.
    pub fn iter(&self) -> std::slice::Iter<'_, EntityRecord> {
        self.entities.iter()
    }

    pub fn entities(&self) -> &[EntityRecord] {
        &self.entities
    }

    /// Entities ordered by `entity_id`.
    pub fn sorted_by_id(&self) -> Vec<&EntityRecord> {
        let mut v: Vec<&EntityRecord> = self.entities.iter().collect();
        v.sort_by(|a, b| a.entity_id.cmp(&b.entity_id));
        v
    }
}

pub fn load_kb(path: impl AsRef<Path>) -> Result<KnowledgeBase, KbError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| KbError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_kb(BufReader::new(file))
}

/// Parses a snapshot from any reader. Blank lines are ignored.
pub fn read_kb(reader: impl BufRead) -> Result<KnowledgeBase, KbError> {
    let mut kb = KnowledgeBase::default();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| KbError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SnapshotLine = serde_json::from_str(&line).map_err(|e| KbError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        kb.push(parsed.into(), lineno)?;
    }
    Ok(kb)
}
