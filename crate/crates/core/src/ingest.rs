//! Normalizes segmenter output into [`DetectionSet`]s.
//!
//! Input is line-delimited JSON, one line per (mention, reference kind, model):
//!
//! ```text
//! {"mention_id": "m1", "image_size": [h, w], "model": "pipeline",
//!  "reference_kind": "label",
//!  "detections": [{"box": [x, y, w, h], "score": 0.8,
//!                  "rle": {"size": [h, w], "counts": [..]}}]}
//! ```
//!
//! Pipeline (box-then-mask) detections below the box threshold are dropped.
//! A detection may also carry `text_score`, checked against the text
//! threshold. Broken detections (bad RLE, wrong mask size, box outside the
//! frame) are skipped and counted; only unparseable lines are fatal.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{BBox, MaskError, RleJson, RleMask};
use crate::par;
use crate::reference::{MentionTask, ReferenceKind, TextReference};

pub const DEFAULT_BOX_THRESHOLD: f64 = 0.3;
pub const DEFAULT_TEXT_THRESHOLD: f64 = 0.25;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("record {record}: {message}")]
    Schema { record: usize, message: String },
    #[error("shard {shard} ({path}): {source}")]
    Shard {
        shard: usize,
        path: String,
        #[source]
        source: Box<IngestError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceModel {
    Pipeline,
    EndToEnd,
    Mock,
}

impl SourceModel {
    pub fn as_str(&self) -> &'static str {
        match self {
            SourceModel::Pipeline => "pipeline",
            SourceModel::EndToEnd => "end_to_end",
            SourceModel::Mock => "mock",
        }
    }
}

impl std::fmt::Display for SourceModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    #[serde(rename = "box", default = "default_box")]
    pub box_threshold: f64,
    #[serde(rename = "text", default = "default_text")]
    pub text_threshold: f64,
}

fn default_box() -> f64 {
    DEFAULT_BOX_THRESHOLD
}

fn default_text() -> f64 {
    DEFAULT_TEXT_THRESHOLD
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            box_threshold: DEFAULT_BOX_THRESHOLD,
            text_threshold: DEFAULT_TEXT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: Option<BBox>,
    pub mask: RleMask,
    pub confidence: f64,
    pub reference_kind: ReferenceKind,
    pub source_model: SourceModel,
}

/// All detections one model produced for one reference of one mention.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSet {
    pub mention_id: String,
    pub height: usize,
    pub width: usize,
    pub reference_kind: ReferenceKind,
    pub source_model: SourceModel,
    /// Ordered by confidence, highest first.
    pub detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn empty(
        mention_id: &str,
        image_size: [usize; 2],
        reference_kind: ReferenceKind,
        source_model: SourceModel,
    ) -> Self {
        Self {
            mention_id: mention_id.to_string(),
            height: image_size[0],
            width: image_size[1],
            reference_kind,
            source_model,
            detections: Vec::new(),
        }
    }

    pub fn top(&self) -> Option<&Detection> {
        self.detections.first()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    fn sort_key(&self) -> (&str, ReferenceKind, SourceModel) {
        (&self.mention_id, self.reference_kind, self.source_model)
    }

    /// Wire form, re-ingestable by [`DetectionReader`].
    pub fn to_line(&self) -> DetectionLine {
        DetectionLine {
            mention_id: self.mention_id.clone(),
            image_size: [self.height, self.width],
            model: self.source_model,
            reference_kind: self.reference_kind,
            detections: self
                .detections
                .iter()
                .map(|d| RawDetection {
                    bbox: d.bbox,
                    score: d.confidence,
                    text_score: None,
                    rle: d.mask.to_json(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawDetection {
    #[serde(rename = "box", default)]
    pub bbox: Option<BBox>,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_score: Option<f64>,
    pub rle: RleJson,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionLine {
    pub mention_id: String,
    pub image_size: [usize; 2],
    pub model: SourceModel,
    pub reference_kind: ReferenceKind,
    #[serde(default)]
    pub detections: Vec<RawDetection>,
}

/// Per-detection accounting. `kept + dropped + skipped == records`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub lines: usize,
    pub records: usize,
    pub kept: usize,
    pub dropped: usize,
    pub skipped: usize,
}

impl IngestStats {
    pub fn merge(mut self, other: IngestStats) -> Self {
        self.lines += other.lines;
        self.records += other.records;
        self.kept += other.kept;
        self.dropped += other.dropped;
        self.skipped += other.skipped;
        self
    }
}

enum Triage {
    Keep(Detection),
    Drop,
    Skip(String),
}

fn triage(
    raw: RawDetection,
    line: &DetectionLine,
    thresholds: &Thresholds,
) -> Triage {
    let [h, w] = line.image_size;
    if !(0.0..=1.0).contains(&raw.score) {
        return Triage::Skip(format!("score {} outside [0, 1]", raw.score));
    }
    let mask = match RleMask::try_from(raw.rle) {
        Ok(m) => m,
        Err(err) => return Triage::Skip(err.to_string()),
    };
    if mask.dims() != (h, w) {
        let err = MaskError::DimensionMismatch {
            left_h: mask.height(),
            left_w: mask.width(),
            right_h: h,
            right_w: w,
        };
        return Triage::Skip(err.to_string());
    }
    if let Some(b) = &raw.bbox {
        if let Err(err) = b.validate(h, w) {
            return Triage::Skip(err.to_string());
        }
    }
    if line.model == SourceModel::Pipeline {
        if raw.bbox.is_none() {
            return Triage::Skip("pipeline detection without a box".into());
        }
        if raw.score < thresholds.box_threshold {
            return Triage::Drop;
        }
        if raw.text_score.is_some_and(|t| t < thresholds.text_threshold) {
            return Triage::Drop;
        }
    }
    Triage::Keep(Detection {
        bbox: raw.bbox,
        mask,
        confidence: raw.score,
        reference_kind: line.reference_kind,
        source_model: line.model,
    })
}

/// Converts one parsed line, updating `stats`.
pub fn normalize_line(mut line: DetectionLine, thresholds: &Thresholds, stats: &mut IngestStats) -> DetectionSet {
    stats.lines += 1;
    let mut set = DetectionSet::empty(&line.mention_id, line.image_size, line.reference_kind, line.model);
    let raws = std::mem::take(&mut line.detections);
    for raw in raws {
        stats.records += 1;
        match triage(raw, &line, thresholds) {
            Triage::Keep(d) => {
                stats.kept += 1;
                set.detections.push(d);
            }
            Triage::Drop => stats.dropped += 1,
            Triage::Skip(why) => {
                stats.skipped += 1;
                log::debug!("{}: skipped detection: {why}", line.mention_id);
            }
        }
    }
    // stable: equal scores keep file order
    set.detections
        .sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    set
}

/// Streams [`DetectionSet`]s from a line-delimited reader.
pub struct DetectionReader<R> {
    lines: std::io::Lines<R>,
    expected: Option<SourceModel>,
    thresholds: Thresholds,
    record: usize,
    stats: IngestStats,
}

impl<R: BufRead> DetectionReader<R> {
    /// `expected` rejects lines from any other model as schema errors.
    pub fn new(reader: R, expected: Option<SourceModel>, thresholds: Thresholds) -> Self {
        Self {
            lines: reader.lines(),
            expected,
            thresholds,
            record: 0,
            stats: IngestStats::default(),
        }
    }

    pub fn stats(&self) -> IngestStats {
        self.stats
    }
}

impl<R: BufRead> Iterator for DetectionReader<R> {
    type Item = Result<DetectionSet, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.record += 1;
            let record = self.record;
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    return Some(Err(IngestError::Schema {
                        record,
                        message: e.to_string(),
                    }))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let parsed: DetectionLine = match serde_json::from_str(&line) {
                Ok(p) => p,
                Err(e) => {
                    return Some(Err(IngestError::Schema {
                        record,
                        message: e.to_string(),
                    }))
                }
            };
            if parsed.image_size[0] == 0 || parsed.image_size[1] == 0 {
                return Some(Err(IngestError::Schema {
                    record,
                    message: format!("invalid image_size {:?}", parsed.image_size),
                }));
            }
            if let Some(expected) = self.expected {
                if parsed.model != expected {
                    return Some(Err(IngestError::Schema {
                        record,
                        message: format!("expected model {expected}, found {}", parsed.model),
                    }));
                }
            }
            return Some(Ok(normalize_line(parsed, &self.thresholds, &mut self.stats)));
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestOutput {
    pub sets: Vec<DetectionSet>,
    pub stats: IngestStats,
}

fn open(path: &Path) -> Result<BufReader<File>, IngestError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })
}

fn ingest_file(
    path: &Path,
    expected: Option<SourceModel>,
    thresholds: &Thresholds,
) -> Result<IngestOutput, IngestError> {
    let mut reader = DetectionReader::new(open(path)?, expected, *thresholds);
    let sets = reader.by_ref().collect::<Result<Vec<_>, _>>()?;
    Ok(IngestOutput {
        sets,
        stats: reader.stats(),
    })
}

pub fn ingest_pipeline_output(path: impl AsRef<Path>, thresholds: &Thresholds) -> Result<IngestOutput, IngestError> {
    ingest_file(path.as_ref(), Some(SourceModel::Pipeline), thresholds)
}

pub fn ingest_end_to_end_output(path: impl AsRef<Path>, thresholds: &Thresholds) -> Result<IngestOutput, IngestError> {
    ingest_file(path.as_ref(), Some(SourceModel::EndToEnd), thresholds)
}

/// Ingests shards independently and merges them, sorted by mention id
/// (then reference kind and model) regardless of shard order.
pub fn ingest_shards(paths: &[PathBuf], thresholds: &Thresholds) -> Result<IngestOutput, IngestError> {
    let indexed: Vec<(usize, &PathBuf)> = paths.iter().enumerate().collect();
    let results = par::map(&indexed, |(i, p)| {
        ingest_file(p, None, thresholds).map_err(|e| IngestError::Shard {
            shard: *i,
            path: p.display().to_string(),
            source: Box::new(e),
        })
    });
    let mut out = IngestOutput::default();
    for r in results {
        let part = r?;
        out.stats = out.stats.merge(part.stats);
        out.sets.extend(part.sets);
    }
    sort_sets(&mut out.sets);
    Ok(out)
}

pub fn sort_sets(sets: &mut [DetectionSet]) {
    sets.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

#[derive(Debug, Deserialize)]
struct ScenarioEntry {
    mention_id: String,
    reference_kind: ReferenceKind,
    model: SourceModel,
    #[serde(default)]
    detections: Vec<RawDetection>,
}

#[derive(Debug, Deserialize)]
struct ScenarioFile {
    scenarios: Vec<ScenarioEntry>,
}

/// Scripted segmenter output keyed by (mention, reference kind, model).
///
/// File form: `{"scenarios": [{"mention_id", "reference_kind", "model",
/// "detections": [..]}]}` with detections in the ingest wire format.
#[derive(Debug, Clone, Default)]
pub struct ScenarioTable {
    entries: HashMap<(String, ReferenceKind, SourceModel), Vec<RawDetection>>,
}

impl ScenarioTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| IngestError::Schema {
            record: 0,
            message: e.to_string(),
        })?;
        let mut table = ScenarioTable::default();
        for (i, entry) in file.scenarios.into_iter().enumerate() {
            for d in &entry.detections {
                RleMask::try_from(d.rle.clone()).map_err(|e| IngestError::Schema {
                    record: i + 1,
                    message: e.to_string(),
                })?;
            }
            table.insert(entry.mention_id, entry.reference_kind, entry.model, entry.detections);
        }
        Ok(table)
    }

    pub fn insert(
        &mut self,
        mention_id: impl Into<String>,
        kind: ReferenceKind,
        model: SourceModel,
        detections: Vec<RawDetection>,
    ) {
        self.entries.insert((mention_id.into(), kind, model), detections);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Deterministic test double for both segmenters. Unknown keys give an
/// empty set. Scripted detections bypass thresholds.
pub fn mock_segment(
    task: &MentionTask,
    reference: &TextReference,
    model: SourceModel,
    table: &ScenarioTable,
) -> DetectionSet {
    let key = (task.mention_id.clone(), reference.kind, model);
    let mut set = DetectionSet::empty(&task.mention_id, task.image_size, reference.kind, model);
    let Some(raws) = table.entries.get(&key) else {
        return set;
    };
    for raw in raws {
        let mask = RleMask::try_from(raw.rle.clone()).expect("validated at load");
        if mask.dims() != (task.image_size[0], task.image_size[1]) {
            log::warn!("{}: scripted mask size differs from the image", task.mention_id);
            continue;
        }
        set.detections.push(Detection {
            bbox: raw.bbox,
            mask,
            confidence: raw.score,
            reference_kind: reference.kind,
            source_model: model,
        });
    }
    set.detections
        .sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    set
}
