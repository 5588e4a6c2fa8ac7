//! Manual review: sampling a queue, recording verdicts, and the accuracy
//! report by reference kind and segmentation model.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{render_aligned, AnnotationRecord};
use crate::ingest::SourceModel;
use crate::kb::KnowledgeBase;
use crate::mask::RleJson;
use crate::reference::{ReferenceKind, Split};

pub const SNAPSHOT_FILE: &str = "queue.json";
pub const LOG_FILE: &str = "verdicts.log";

/// Entity, query and wiki split sizes for a 2,000-item audit.
pub fn default_sizes() -> BTreeMap<Split, usize> {
    BTreeMap::from([(Split::Entity, 1400), (Split::Query, 400), (Split::Wiki, 200)])
}

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("split {split}: requested {requested} items but only {available} distinct entities are available (short by {deficit})")]
    InsufficientEntities {
        split: Split,
        requested: usize,
        available: usize,
        deficit: usize,
    },
    #[error("unknown item {0}")]
    NotFound(u64),
    #[error("item {id} already has verdict {current}")]
    Conflict { id: u64, current: Verdict },
    #[error("a verdict must be correct or incorrect")]
    PendingVerdict,
    #[error("{path}: {message}")]
    Store { path: PathBuf, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pending,
    Correct,
    Incorrect,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pending => "pending",
            Verdict::Correct => "correct",
            Verdict::Incorrect => "incorrect",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Verdict::Pending, Verdict::Correct, Verdict::Incorrect]
            .into_iter()
            .find(|v| v.as_str() == s)
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub annotation_id: u64,
    pub entity_id: String,
    pub entity_label: String,
    pub hypernyms: Vec<String>,
    pub image_ref: String,
    pub image_size: [usize; 2],
    pub mention_id: String,
    pub note: Option<String>,
    pub reference_kind: Option<ReferenceKind>,
    pub reviewed_at: Option<String>,
    pub rle: RleJson,
    pub source_model: Option<SourceModel>,
    pub split: Split,
    pub verdict: Verdict,
}

impl ReviewItem {
    pub fn from_record(r: &AnnotationRecord, kb: &KnowledgeBase) -> Self {
        let e = kb.get(&r.entity_id);
        ReviewItem {
            annotation_id: r.annotation_id,
            entity_id: r.entity_id.clone(),
            entity_label: e.map(|e| e.label.clone()).unwrap_or_default(),
            hypernyms: e.map(|e| e.hypernyms.clone()).unwrap_or_default(),
            image_ref: r.image_ref.clone(),
            image_size: [r.height, r.width],
            mention_id: r.mention_id.clone(),
            note: None,
            reference_kind: r.provenance.reference_kind,
            reviewed_at: None,
            rle: r.rle.to_json(),
            source_model: r.provenance.source_model,
            split: r.split,
            verdict: Verdict::Pending,
        }
    }
}

/// Samples at most one annotation per entity across the whole queue.
///
/// Splits are filled in split order; an entity taken for an earlier split
/// is no longer available to later ones. Within a split, entities are drawn
/// uniformly and then one of the entity's annotations in that split.
pub fn sample_review(
    records: &[AnnotationRecord],
    kb: &KnowledgeBase,
    sizes: &BTreeMap<Split, usize>,
    seed: u64,
) -> Result<Vec<ReviewItem>, ReviewError> {
    let mut by_split: BTreeMap<Split, BTreeMap<&str, Vec<&AnnotationRecord>>> = BTreeMap::new();
    for r in records {
        by_split
            .entry(r.split)
            .or_default()
            .entry(&r.entity_id)
            .or_default()
            .push(r);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used: BTreeSet<&str> = BTreeSet::new();
    let mut queue = Vec::new();
    for (&split, &want) in sizes {
        let pool: Vec<(&str, &Vec<&AnnotationRecord>)> = by_split
            .get(&split)
            .map(|m| m.iter().filter(|(e, _)| !used.contains(*e)).map(|(e, v)| (*e, v)).collect())
            .unwrap_or_default();
        if pool.len() < want {
            return Err(ReviewError::InsufficientEntities {
                split,
                requested: want,
                available: pool.len(),
                deficit: want - pool.len(),
            });
        }
        let mut picks = sample(&mut rng, pool.len(), want).into_vec();
        picks.sort_unstable();
        for i in picks {
            let (entity, recs) = pool[i];
            let mut recs = recs.clone();
            recs.sort_by_key(|r| r.annotation_id);
            let r = recs[rng.random_range(0..recs.len())];
            used.insert(entity);
            queue.push(ReviewItem::from_record(r, kb));
        }
    }
    queue.sort_by_key(|i| (i.split, i.annotation_id));
    Ok(queue)
}

/// One verdict change, as written to the append log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictEvent {
    pub annotation_id: u64,
    pub at: String,
    pub forced: bool,
    pub note: Option<String>,
    pub previous: Verdict,
    pub verdict: Verdict,
}

/// Snapshot file plus an append-only verdict log. Opening replays the log
/// over the snapshot, so prior verdicts are never lost.
#[derive(Debug)]
pub struct ReviewStore {
    dir: PathBuf,
    items: Vec<ReviewItem>,
    index: HashMap<u64, usize>,
    history: Vec<VerdictEvent>,
    log: File,
}

fn store_err(path: &Path, message: impl std::fmt::Display) -> ReviewError {
    ReviewError::Store {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

impl ReviewStore {
    /// Writes a fresh snapshot and an empty log.
    pub fn create(dir: impl AsRef<Path>, items: Vec<ReviewItem>) -> Result<Self, ReviewError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut text = serde_json::to_string_pretty(&items).expect("serializable");
        text.push('\n');
        std::fs::write(dir.join(SNAPSHOT_FILE), text)?;
        File::create(dir.join(LOG_FILE))?;
        Self::open(dir)
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self, ReviewError> {
        let dir = dir.as_ref().to_path_buf();
        let snap = dir.join(SNAPSHOT_FILE);
        let text = std::fs::read_to_string(&snap).map_err(|e| store_err(&snap, e))?;
        let items: Vec<ReviewItem> = serde_json::from_str(&text).map_err(|e| store_err(&snap, e))?;
        let index = items.iter().enumerate().map(|(i, it)| (it.annotation_id, i)).collect();
        let log_path = dir.join(LOG_FILE);
        let log = OpenOptions::new().create(true).append(true).read(true).open(&log_path)?;
        let mut store = ReviewStore {
            dir,
            items,
            index,
            history: Vec::new(),
            log,
        };
        for (n, line) in BufReader::new(File::open(&log_path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ev: VerdictEvent =
                serde_json::from_str(&line).map_err(|e| store_err(&log_path, format!("line {}: {e}", n + 1)))?;
            store.apply(&ev).map_err(|e| store_err(&log_path, format!("line {}: {e}", n + 1)))?;
            store.history.push(ev);
        }
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn apply(&mut self, ev: &VerdictEvent) -> Result<(), ReviewError> {
        let i = *self.index.get(&ev.annotation_id).ok_or(ReviewError::NotFound(ev.annotation_id))?;
        let item = &mut self.items[i];
        item.verdict = ev.verdict;
        item.note = ev.note.clone();
        item.reviewed_at = Some(ev.at.clone());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[ReviewItem] {
        &self.items
    }

    pub fn get(&self, id: u64) -> Option<&ReviewItem> {
        self.index.get(&id).map(|&i| &self.items[i])
    }

    pub fn list(&self, status: Option<Verdict>, offset: usize, limit: usize) -> Vec<&ReviewItem> {
        self.items
            .iter()
            .filter(|i| status.is_none_or(|s| i.verdict == s))
            .skip(offset)
            .take(limit)
            .collect()
    }

    pub fn history(&self, id: u64) -> Vec<&VerdictEvent> {
        self.history.iter().filter(|e| e.annotation_id == id).collect()
    }

    /// Records a verdict. A reviewed item can only be changed with `force`.
    pub fn submit(
        &mut self,
        id: u64,
        verdict: Verdict,
        note: Option<String>,
        force: bool,
    ) -> Result<&ReviewItem, ReviewError> {
        if verdict == Verdict::Pending {
            return Err(ReviewError::PendingVerdict);
        }
        let current = self.get(id).ok_or(ReviewError::NotFound(id))?.verdict;
        if current != Verdict::Pending && !force {
            return Err(ReviewError::Conflict { id, current });
        }
        let ev = VerdictEvent {
            annotation_id: id,
            at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            forced: force && current != Verdict::Pending,
            note,
            previous: current,
            verdict,
        };
        let mut line = serde_json::to_string(&ev).expect("serializable");
        line.push('\n');
        self.log.write_all(line.as_bytes())?;
        self.log.flush()?;
        self.apply(&ev)?;
        self.history.push(ev);
        Ok(self.get(id).expect("just applied"))
    }

    pub fn report(&self) -> ReviewReport {
        review_report(&self.items)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub accuracy_pct: f64,
    pub correct: u64,
    pub reviewed: u64,
}

impl ReportCell {
    fn new(correct: u64, reviewed: u64) -> Option<Self> {
        (reviewed > 0).then(|| ReportCell {
            // integer rounding, half up, to one decimal
            accuracy_pct: ((correct * 2000 + reviewed) / (2 * reviewed)) as f64 / 10.0,
            correct,
            reviewed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindModelCell {
    pub cell: ReportCell,
    pub reference_kind: Option<ReferenceKind>,
    pub source_model: Option<SourceModel>,
}

/// Accuracy per (reference kind, model) plus an overall row. Cells with no
/// reviewed items are omitted; `overall` is `None` until something is
/// reviewed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewReport {
    pub cells: Vec<KindModelCell>,
    pub overall: Option<ReportCell>,
    pub pending: u64,
}

pub fn review_report(items: &[ReviewItem]) -> ReviewReport {
    let mut tally: BTreeMap<(Option<ReferenceKind>, Option<SourceModel>), (u64, u64)> = BTreeMap::new();
    let mut pending = 0;
    for it in items {
        if it.verdict == Verdict::Pending {
            pending += 1;
            continue;
        }
        let e = tally.entry((it.reference_kind, it.source_model)).or_insert((0, 0));
        e.0 += (it.verdict == Verdict::Correct) as u64;
        e.1 += 1;
    }
    let (c, t) = tally.values().fold((0, 0), |(c, t), (a, b)| (c + a, t + b));
    ReviewReport {
        cells: tally
            .into_iter()
            .filter_map(|((k, m), (c, t))| {
                ReportCell::new(c, t).map(|cell| KindModelCell {
                    cell,
                    reference_kind: k,
                    source_model: m,
                })
            })
            .collect(),
        overall: ReportCell::new(c, t),
        pending,
    }
}

impl ReviewReport {
    /// Reference kinds as rows, models as columns, then the overall row.
    pub fn render_table(&self) -> String {
        let models: BTreeSet<Option<SourceModel>> = self.cells.iter().map(|c| c.source_model).collect();
        let kinds: BTreeSet<Option<ReferenceKind>> = self.cells.iter().map(|c| c.reference_kind).collect();
        let mut header = vec!["Reference".to_string()];
        header.extend(models.iter().map(|m| m.map_or("unknown", |m| m.as_str()).to_string()));
        let mut table = vec![header];
        for k in &kinds {
            let mut row = vec![k.map_or("unknown", |k| k.as_str()).to_string()];
            for m in &models {
                let cell = self
                    .cells
                    .iter()
                    .find(|c| c.reference_kind == *k && c.source_model == *m);
                row.push(cell.map_or("-".into(), |c| format!("{:.1}", c.cell.accuracy_pct)));
            }
            table.push(row);
        }
        table.push(vec![
            "overall after filtering".to_string(),
            self.overall.as_ref().map_or("-".into(), |c| format!("{:.1}", c.accuracy_pct)),
        ]);
        render_aligned(&table)
    }
}
