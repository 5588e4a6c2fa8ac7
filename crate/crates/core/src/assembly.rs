//! COCO dataset assembly, split bookkeeping and dataset statistics.
//!
//! Output JSON is canonical: object keys are sorted, ids are dense and
//! assigned in sorted order, and no floats are written, so re-reading and
//! re-emitting a file reproduces it byte for byte.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{FilterVerdict, RuleFired};
use crate::ingest::SourceModel;
use crate::kb::{KnowledgeBase, OTHERS_CATEGORY};
use crate::mask::{RleJson, RleMask};
use crate::par;
use crate::reference::{MentionTask, ReferenceKind, Split};

pub const DEFAULT_CAP: usize = 50;
pub const DEFAULT_HISTOGRAM_BINS: usize = 20;

/// Primary categories reported by name; everything else is "others".
pub const DEFAULT_PRIMARY_CATEGORIES: [&str; 10] = [
    "animal",
    "building",
    "food",
    "location",
    "object",
    "organization",
    "person",
    "plant",
    "sports",
    "vehicle",
];

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("verdict for unknown mention {0}")]
    UnknownMention(String),
    #[error("mention {mention_id} references unknown entity {entity_id}")]
    UnknownEntity { mention_id: String, entity_id: String },
    #[error("entity {entity_id} is not listed for split {split} in the manifest")]
    NotInManifest { entity_id: String, split: Split },
    #[error("duplicate annotation for mention {0}")]
    DuplicateAnnotation(String),
    #[error("cap must be at least 1")]
    InvalidCap,
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Seen {
    Seen,
    Unseen,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitEntities {
    #[serde(default)]
    pub seen: BTreeSet<String>,
    #[serde(default)]
    pub unseen: BTreeSet<String>,
}

/// `{split -> {seen: [entity_id..], unseen: [..]}}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SplitManifest(pub BTreeMap<Split, SplitEntities>);

impl SplitManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, AssemblyError> {
        let text = std::fs::read_to_string(path)?;
        let m: SplitManifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), AssemblyError> {
        for (split, e) in &self.0 {
            if let Some(both) = e.seen.intersection(&e.unseen).next() {
                return Err(AssemblyError::Manifest(format!(
                    "entity {both} is both seen and unseen in split {split}"
                )));
            }
        }
        Ok(())
    }

    pub fn seen_flag(&self, split: Split, entity_id: &str) -> Option<Seen> {
        let e = self.0.get(&split)?;
        if e.seen.contains(entity_id) {
            Some(Seen::Seen)
        } else if e.unseen.contains(entity_id) {
            Some(Seen::Unseen)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub reference_kind: Option<ReferenceKind>,
    pub rule_fired: RuleFired,
    pub source_model: Option<SourceModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub annotation_id: u64,
    pub mention_id: String,
    pub image_ref: String,
    pub height: usize,
    pub width: usize,
    pub entity_id: String,
    pub rle: RleMask,
    pub query: String,
    pub split: Split,
    pub seen: Seen,
    pub provenance: Provenance,
}

/// Joins kept verdicts with their tasks. Annotation ids are assigned
/// `1..` in mention-id order and survive later capping.
pub fn build_records(
    verdicts: &[FilterVerdict],
    tasks: &[MentionTask],
    kb: &KnowledgeBase,
    manifest: &SplitManifest,
) -> Result<Vec<AnnotationRecord>, AssemblyError> {
    let by_id: HashMap<&str, &MentionTask> = tasks.iter().map(|t| (t.mention_id.as_str(), t)).collect();
    let mut kept: Vec<&FilterVerdict> = verdicts.iter().filter(|v| v.is_kept()).collect();
    kept.sort_by(|a, b| a.mention_id.cmp(&b.mention_id));
    if let Some(w) = kept.windows(2).find(|w| w[0].mention_id == w[1].mention_id) {
        return Err(AssemblyError::DuplicateAnnotation(w[0].mention_id.clone()));
    }

    let mut records = Vec::with_capacity(kept.len());
    for (i, v) in kept.into_iter().enumerate() {
        let task = by_id
            .get(v.mention_id.as_str())
            .ok_or_else(|| AssemblyError::UnknownMention(v.mention_id.clone()))?;
        if !kb.contains(&task.entity_id) {
            return Err(AssemblyError::UnknownEntity {
                mention_id: task.mention_id.clone(),
                entity_id: task.entity_id.clone(),
            });
        }
        let seen = manifest
            .seen_flag(task.split, &task.entity_id)
            .ok_or_else(|| AssemblyError::NotInManifest {
                entity_id: task.entity_id.clone(),
                split: task.split,
            })?;
        let rle = v.final_mask.clone().expect("kept verdicts carry a mask");
        records.push(AnnotationRecord {
            annotation_id: i as u64 + 1,
            mention_id: task.mention_id.clone(),
            image_ref: task.image_ref.clone(),
            height: rle.height(),
            width: rle.width(),
            entity_id: task.entity_id.clone(),
            rle,
            query: task.raw_query.clone(),
            split: task.split,
            seen,
            provenance: Provenance {
                reference_kind: v.reference_kind,
                rule_fired: v.rule_fired,
                source_model: v.source_model,
            },
        });
    }
    Ok(records)
}

/// Keeps at most `cap` records per entity, sampled uniformly with `seed`.
/// Entities are visited in id order and kept records stay in id order.
pub fn cap_per_entity(
    records: Vec<AnnotationRecord>,
    cap: usize,
    seed: u64,
) -> Result<Vec<AnnotationRecord>, AssemblyError> {
    if cap == 0 {
        return Err(AssemblyError::InvalidCap);
    }
    let mut groups: BTreeMap<String, Vec<AnnotationRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.entity_id.clone()).or_default().push(r);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (_, mut group) in groups {
        group.sort_by_key(|r| r.annotation_id);
        if group.len() <= cap {
            out.extend(group);
            continue;
        }
        let mut picks = sample(&mut rng, group.len(), cap).into_vec();
        picks.sort_unstable();
        let mut slots: Vec<Option<AnnotationRecord>> = group.into_iter().map(Some).collect();
        out.extend(picks.into_iter().map(|i| slots[i].take().expect("distinct indices")));
    }
    out.sort_by_key(|r| r.annotation_id);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CocoImage {
    pub file_name: String,
    pub height: usize,
    pub id: u64,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub entity_id: String,
    pub id: u64,
    pub name: String,
    pub supercategory: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CocoProvenance {
    pub reference_kind: Option<ReferenceKind>,
    pub rule_fired: RuleFired,
    pub source_model: Option<SourceModel>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub area: u64,
    pub bbox: [u32; 4],
    pub category_id: u64,
    pub entity_id: String,
    pub id: u64,
    pub image_id: u64,
    pub iscrowd: u8,
    pub mention_id: String,
    pub provenance: CocoProvenance,
    pub query: String,
    pub seen: Seen,
    pub segmentation: RleJson,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CocoInfo {
    pub description: String,
    pub split: Split,
}

/// One split of the dataset in COCO layout; categories are entities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CocoDataset {
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
    pub images: Vec<CocoImage>,
    pub info: CocoInfo,
}

impl CocoDataset {
    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

pub fn to_coco(split: Split, records: &[AnnotationRecord], kb: &KnowledgeBase) -> CocoDataset {
    let mut mine: Vec<&AnnotationRecord> = records.iter().filter(|r| r.split == split).collect();
    mine.sort_by_key(|r| r.annotation_id);

    let image_ids: BTreeMap<&str, (usize, usize)> = mine
        .iter()
        .map(|r| (r.image_ref.as_str(), (r.height, r.width)))
        .collect();
    let images: Vec<CocoImage> = image_ids
        .iter()
        .enumerate()
        .map(|(i, (name, (h, w)))| CocoImage {
            file_name: name.to_string(),
            height: *h,
            id: i as u64 + 1,
            width: *w,
        })
        .collect();
    let image_index: HashMap<&str, u64> = images.iter().map(|im| (im.file_name.as_str(), im.id)).collect();

    let entity_ids: BTreeSet<&str> = mine.iter().map(|r| r.entity_id.as_str()).collect();
    let categories: Vec<CocoCategory> = entity_ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let e = kb.get(id);
            CocoCategory {
                entity_id: id.to_string(),
                id: i as u64 + 1,
                name: e.map(|e| e.label.clone()).unwrap_or_default(),
                supercategory: e
                    .map(|e| e.category.clone())
                    .unwrap_or_else(|| OTHERS_CATEGORY.to_string()),
            }
        })
        .collect();
    let category_index: HashMap<&str, u64> = categories.iter().map(|c| (c.entity_id.as_str(), c.id)).collect();

    let annotations = mine
        .iter()
        .map(|r| {
            let mask = r.rle.decode();
            CocoAnnotation {
                area: r.rle.area(),
                bbox: mask.bounding_box().map(Into::into).unwrap_or([0; 4]),
                category_id: category_index[r.entity_id.as_str()],
                entity_id: r.entity_id.clone(),
                id: r.annotation_id,
                image_id: image_index[r.image_ref.as_str()],
                iscrowd: 0,
                mention_id: r.mention_id.clone(),
                provenance: CocoProvenance {
                    reference_kind: r.provenance.reference_kind,
                    rule_fired: r.provenance.rule_fired,
                    source_model: r.provenance.source_model,
                },
                query: r.query.clone(),
                seen: r.seen,
                segmentation: r.rle.to_json(),
            }
        })
        .collect();

    CocoDataset {
        annotations,
        categories,
        images,
        info: CocoInfo {
            description: "pixel-mask entity linking annotations".into(),
            split,
        },
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub seen_entities: u64,
    pub seen_examples: u64,
    pub unseen_entities: u64,
    pub unseen_examples: u64,
    pub total_examples: u64,
}

impl SplitCounts {
    fn add(&mut self, o: &SplitCounts) {
        self.seen_entities += o.seen_entities;
        self.seen_examples += o.seen_examples;
        self.unseen_entities += o.unseen_entities;
        self.unseen_examples += o.unseen_examples;
        self.total_examples += o.total_examples;
    }
}

/// Per-split seen/unseen entity and example counts. `totals` is the sum of
/// the split columns, so an entity present in two splits counts twice.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub splits: BTreeMap<Split, SplitCounts>,
    pub totals: SplitCounts,
}

pub fn summarize(records: &[AnnotationRecord]) -> SplitSummary {
    let mut entities: BTreeMap<(Split, Seen), BTreeSet<&str>> = BTreeMap::new();
    let mut examples: BTreeMap<(Split, Seen), u64> = BTreeMap::new();
    for r in records {
        entities.entry((r.split, r.seen)).or_default().insert(&r.entity_id);
        *examples.entry((r.split, r.seen)).or_default() += 1;
    }
    let mut summary = SplitSummary::default();
    for split in Split::ALL {
        let n = |seen| entities.get(&(split, seen)).map_or(0, |s| s.len() as u64);
        let x = |seen| examples.get(&(split, seen)).copied().unwrap_or(0);
        let c = SplitCounts {
            seen_entities: n(Seen::Seen),
            seen_examples: x(Seen::Seen),
            unseen_entities: n(Seen::Unseen),
            unseen_examples: x(Seen::Unseen),
            total_examples: x(Seen::Seen) + x(Seen::Unseen),
        };
        summary.totals.add(&c);
        summary.splits.insert(split, c);
    }
    summary
}

fn thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

impl SplitSummary {
    /// Aligned text table with one column per split plus a total column.
    pub fn render_table(&self) -> String {
        let mut header = vec![String::new()];
        header.extend(Split::ALL.iter().map(|s| s.title().to_string()));
        header.push("Total".into());
        type Getter = fn(&SplitCounts) -> u64;
        let rows: [(&str, Getter); 5] = [
            ("# SEEN entities", |c| c.seen_entities),
            ("# SEEN examples", |c| c.seen_examples),
            ("# UNSEEN entities", |c| c.unseen_entities),
            ("# UNSEEN examples", |c| c.unseen_examples),
            ("# Total examples", |c| c.total_examples),
        ];
        let mut table = vec![header];
        for (label, get) in rows {
            let mut row = vec![label.to_string()];
            for split in Split::ALL {
                row.push(thousands(self.splits.get(&split).map_or(0, get)));
            }
            row.push(thousands(get(&self.totals)));
            table.push(row);
        }
        render_aligned(&table)
    }
}

/// Left-aligns the first column and right-aligns the rest.
pub(crate) fn render_aligned(table: &[Vec<String>]) -> String {
    let cols = table.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| table.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in table {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            if c == 0 {
                let _ = write!(line, "{cell:<width$}", width = widths[0]);
            } else {
                let _ = write!(line, "  {cell:>width$}", width = widths[c]);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: usize,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(bins: usize) -> Self {
        assert!(bins >= 1, "histogram needs at least one bin");
        Self {
            bins,
            counts: vec![0; bins],
        }
    }

    /// Equal-width bins on `[0, 1]`; the last bin is closed on the right.
    pub fn bin_of(&self, area: u64, pixels: u64) -> usize {
        let b = (area as u128 * self.bins as u128 / pixels.max(1) as u128) as usize;
        b.min(self.bins - 1)
    }

    pub fn add(&mut self, area: u64, pixels: u64) {
        let b = self.bin_of(area, pixels);
        self.counts[b] += 1;
    }

    pub fn merge(mut self, other: Histogram) -> Self {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
        self
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Mask-to-image area ratios, binned.
pub fn area_ratio_histogram(records: &[AnnotationRecord], bins: usize) -> Histogram {
    par::map_reduce(
        records,
        || Histogram::new(bins),
        |mut h, r| {
            h.add(r.rle.area(), (r.height * r.width) as u64);
            h
        },
        Histogram::merge,
    )
}

/// Record counts per entity category; categories outside `primary` (and
/// entities missing from the KB) are grouped under "others".
pub fn category_distribution(
    records: &[AnnotationRecord],
    kb: &KnowledgeBase,
    primary: &BTreeSet<String>,
) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for r in records {
        let cat = kb
            .get(&r.entity_id)
            .map(|e| e.category.as_str())
            .filter(|c| primary.contains(*c))
            .unwrap_or(OTHERS_CATEGORY);
        *out.entry(cat.to_string()).or_insert(0) += 1;
    }
    out
}

pub fn default_primary_categories() -> BTreeSet<String> {
    DEFAULT_PRIMARY_CATEGORIES.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembleOptions {
    pub cap: Option<usize>,
    pub seed: u64,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        Self {
            cap: Some(DEFAULT_CAP),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assembled {
    pub records: Vec<AnnotationRecord>,
    pub coco: BTreeMap<Split, CocoDataset>,
    pub summary: SplitSummary,
    pub cap_removed: usize,
}

pub fn assemble(
    verdicts: &[FilterVerdict],
    tasks: &[MentionTask],
    kb: &KnowledgeBase,
    manifest: &SplitManifest,
    opts: &AssembleOptions,
) -> Result<Assembled, AssemblyError> {
    let all = build_records(verdicts, tasks, kb, manifest)?;
    let before = all.len();
    let records = match opts.cap {
        Some(cap) => cap_per_entity(all, cap, opts.seed)?,
        None => all,
    };
    let cap_removed = before - records.len();
    let splits: BTreeSet<Split> = records.iter().map(|r| r.split).chain(manifest.0.keys().copied()).collect();
    let coco = splits
        .into_iter()
        .map(|s| (s, to_coco(s, &records, kb)))
        .collect();
    let summary = summarize(&records);
    Ok(Assembled {
        records,
        coco,
        summary,
        cap_removed,
    })
}
