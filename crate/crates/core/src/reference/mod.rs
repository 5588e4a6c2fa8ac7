//! Text references used to prompt the segmenters.
//!
//! Every mention gets the two original-query references (entity label and
//! raw query). Knowledge augmentation adds an intension reference built from
//! the entity's hypernyms and, when the query carries spatial or relational
//! context, an extension reference.

mod extract;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use extract::{
    rule_based_extract, ExtractorChain, ExtractorError, ReferringExtractor, RemoteExtractor,
    RuleBasedExtractor, DEFAULT_PROMPT, DEFAULT_TIMEOUT_S,
};

use crate::kb::EntityRecord;

pub const DEFAULT_INTENSION_TEMPLATE: &str = "{label}, a kind of {hypernym}";

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("template {template:?} has no {{label}} placeholder")]
    MissingPlaceholder { template: String },
    #[error("mention {mention_id} has an empty query")]
    EmptyQuery { mention_id: String },
    #[error(transparent)]
    Extractor(#[from] ExtractorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    Label,
    Query,
    Intension,
    Extension,
}

impl ReferenceKind {
    pub const ALL: [ReferenceKind; 4] = [
        ReferenceKind::Label,
        ReferenceKind::Query,
        ReferenceKind::Intension,
        ReferenceKind::Extension,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ReferenceKind::Label => "label",
            ReferenceKind::Query => "query",
            ReferenceKind::Intension => "intension",
            ReferenceKind::Extension => "extension",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl std::fmt::Display for ReferenceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Entity,
    Query,
    Wiki,
    Human,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Entity, Split::Query, Split::Wiki, Split::Human];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Entity => "entity",
            Split::Query => "query",
            Split::Wiki => "wiki",
            Split::Human => "human",
        }
    }

    pub fn title(&self) -> &'static str {
        match self {
            Split::Entity => "Entity",
            Split::Query => "Query",
            Split::Wiki => "Wiki",
            Split::Human => "Human",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextReference {
    pub mention_id: String,
    pub kind: ReferenceKind,
    pub text: String,
}

/// One visual mention to annotate. `image_size` is `[height, width]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionTask {
    pub mention_id: String,
    pub image_ref: String,
    pub image_size: [usize; 2],
    pub entity_id: String,
    #[serde(rename = "query")]
    pub raw_query: String,
    pub split: Split,
}

pub fn label_reference(mention_id: &str, entity: &EntityRecord) -> TextReference {
    TextReference {
        mention_id: mention_id.to_string(),
        kind: ReferenceKind::Label,
        text: entity.label.clone(),
    }
}

pub fn query_reference(task: &MentionTask) -> Result<TextReference, ReferenceError> {
    let text = task.raw_query.trim();
    if text.is_empty() {
        return Err(ReferenceError::EmptyQuery {
            mention_id: task.mention_id.clone(),
        });
    }
    Ok(TextReference {
        mention_id: task.mention_id.clone(),
        kind: ReferenceKind::Query,
        text: text.to_string(),
    })
}

/// Fills `{label}` and `{hypernym}` from the entity. The first hypernym in
/// snapshot order is used; with no hypernyms the text is the bare label.
pub fn build_intension_reference(
    mention_id: &str,
    entity: &EntityRecord,
    template: &str,
) -> Result<TextReference, ReferenceError> {
    if !template.contains("{label}") {
        return Err(ReferenceError::MissingPlaceholder {
            template: template.to_string(),
        });
    }
    let text = match entity.hypernyms.first() {
        Some(hypernym) => template
            .replace("{label}", &entity.label)
            .replace("{hypernym}", hypernym),
        None => entity.label.clone(),
    };
    Ok(TextReference {
        mention_id: mention_id.to_string(),
        kind: ReferenceKind::Intension,
        text,
    })
}

/// `Ok(None)` means the extractor found no referring expression and the
/// caller should fall back to the label reference.
pub fn build_extension_reference(
    task: &MentionTask,
    extractor: &dyn ReferringExtractor,
) -> Result<Option<TextReference>, ReferenceError> {
    if task.raw_query.trim().is_empty() {
        return Err(ReferenceError::EmptyQuery {
            mention_id: task.mention_id.clone(),
        });
    }
    let expr = extractor.extract(&task.raw_query)?;
    Ok(expr.map(|text| TextReference {
        mention_id: task.mention_id.clone(),
        kind: ReferenceKind::Extension,
        text,
    }))
}

/// All references for one mention, in [`ReferenceKind`] order with distinct
/// kinds. Extractor failures degrade to omitting the extension reference.
pub fn build_references(
    task: &MentionTask,
    entity: &EntityRecord,
    template: &str,
    extractor: &dyn ReferringExtractor,
) -> Result<Vec<TextReference>, ReferenceError> {
    let mut refs = vec![
        label_reference(&task.mention_id, entity),
        query_reference(task)?,
        build_intension_reference(&task.mention_id, entity, template)?,
    ];
    match build_extension_reference(task, extractor) {
        Ok(Some(ext)) => refs.push(ext),
        Ok(None) => {}
        Err(ReferenceError::Extractor(err)) => {
            log::warn!("{}: extension skipped: {err}", task.mention_id);
        }
        Err(err) => return Err(err),
    }
    Ok(refs)
}
