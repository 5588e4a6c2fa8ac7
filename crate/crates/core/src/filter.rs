//! Heuristic filtering and correction of ensemble segmentation output.
//!
//! Rules run in a fixed order for each mention:
//!
//! 1. **non-visual**: drop entities of excluded categories and queries that
//!    open with an excluded interrogative ("when", "how", "why").
//! 2. **pipeline error**: compare the top masks of every (reference kind,
//!    model) source. When no pair reaches the IOU agreement threshold, pick
//!    the pipeline box that best balances confidence against its IOU with the
//!    end-to-end mask, and clip the pipeline mask it best covers to that box.
//! 3. **incomplete location**: low-confidence location/building candidates
//!    become a full-image mask.
//! 4. **dense inversion**: when several boxes of one reference cover most of
//!    the image and morphological opening breaks the candidate into many
//!    pieces, the candidate is background and is inverted.
//!
//! The first drop wins. Corrections compose left to right and the last one
//! applied is reported in [`FilterVerdict::rule_fired`].

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Detection, DetectionSet, SourceModel};
use crate::kb::EntityRecord;
use crate::mask::{
    box_to_mask, box_union_coverage, clip_to_box, connected_components, intersect_box_mask, iou,
    open, rle_encode, BBox, BinaryMask, MaskError, RleMask,
};
use crate::par;
use crate::reference::{MentionTask, ReferenceKind};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
    #[error("mention {0} has no detections from any source")]
    NoDetections(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Accepted,
    Corrected,
    Dropped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleFired {
    None,
    NonVisual,
    PipelineError,
    IncompleteLocation,
    DenseInversion,
}

impl RuleFired {
    pub fn as_str(&self) -> &'static str {
        match self {
            RuleFired::None => "none",
            RuleFired::NonVisual => "non_visual",
            RuleFired::PipelineError => "pipeline_error",
            RuleFired::IncompleteLocation => "incomplete_location",
            RuleFired::DenseInversion => "dense_inversion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub iou_agreement_threshold: f64,
    pub location_confidence_threshold: f64,
    pub dense_component_threshold: usize,
    pub dense_coverage_fraction: f64,
    pub morphology_radius: usize,
    /// Non-visual entity categories; mentions of these are dropped.
    pub excluded_categories: BTreeSet<String>,
    pub excluded_interrogatives: BTreeSet<String>,
    /// Categories whose low-confidence masks become the whole image.
    pub full_image_categories: BTreeSet<String>,
}

fn set_of(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            iou_agreement_threshold: 0.5,
            location_confidence_threshold: 0.5,
            dense_component_threshold: 5,
            dense_coverage_fraction: 0.7,
            morphology_radius: crate::mask::DEFAULT_RADIUS,
            excluded_categories: set_of(&["time", "location", "method", "event", "game", "technology"]),
            excluded_interrogatives: set_of(&["when", "how", "why"]),
            full_image_categories: set_of(&["location", "building"]),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(FilterError::InvalidConfig(format!("{name} = {v} is outside [0, 1]")))
            }
        };
        unit("iou_agreement_threshold", self.iou_agreement_threshold)?;
        unit("location_confidence_threshold", self.location_confidence_threshold)?;
        unit("dense_coverage_fraction", self.dense_coverage_fraction)?;
        if self.dense_component_threshold == 0 {
            return Err(FilterError::InvalidConfig(
                "dense_component_threshold must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub mention_id: String,
    pub outcome: Outcome,
    pub rule_fired: RuleFired,
    pub final_mask: Option<RleMask>,
    /// Best pairwise IOU between sources; `None` with fewer than two sources.
    pub agreement_iou: Option<f64>,
    pub notes: String,
    pub reference_kind: Option<ReferenceKind>,
    pub source_model: Option<SourceModel>,
    pub confidence: Option<f64>,
}

impl FilterVerdict {
    fn dropped(mention_id: &str, rule: RuleFired, notes: impl Into<String>) -> Self {
        Self {
            mention_id: mention_id.to_string(),
            outcome: Outcome::Dropped,
            rule_fired: rule,
            final_mask: None,
            agreement_iou: None,
            notes: notes.into(),
            reference_kind: None,
            source_model: None,
            confidence: None,
        }
    }

    pub fn is_kept(&self) -> bool {
        self.outcome != Outcome::Dropped
    }
}

/// Mask chosen to represent a mention, with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub mask: BinaryMask,
    pub confidence: f64,
    pub reference_kind: ReferenceKind,
    pub source_model: SourceModel,
}

impl Candidate {
    fn from_detection(d: &Detection) -> Self {
        Self {
            mask: d.mask.decode(),
            confidence: d.confidence,
            reference_kind: d.reference_kind,
            source_model: d.source_model,
        }
    }
}

fn leading_word(query: &str) -> String {
    query
        .trim_start()
        .chars()
        .take_while(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

pub fn rule_non_visual(task: &MentionTask, entity: &EntityRecord, cfg: &FilterConfig) -> Option<FilterVerdict> {
    if cfg.excluded_categories.contains(&entity.category) {
        return Some(FilterVerdict::dropped(
            &task.mention_id,
            RuleFired::NonVisual,
            format!("excluded category {}", entity.category),
        ));
    }
    let word = leading_word(&task.raw_query);
    if cfg.excluded_interrogatives.contains(&word) {
        return Some(FilterVerdict::dropped(
            &task.mention_id,
            RuleFired::NonVisual,
            format!("query opens with \"{word}\""),
        ));
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgreementCheck {
    pub candidate: Candidate,
    pub agreement_iou: Option<f64>,
    pub corrected: bool,
    pub notes: Vec<String>,
}

/// Non-empty sources in a fixed (model, kind) order so results do not
/// depend on input order.
fn sources(sets: &[DetectionSet]) -> Vec<&DetectionSet> {
    let mut v: Vec<&DetectionSet> = sets.iter().filter(|s| !s.is_empty()).collect();
    v.sort_by_key(|s| (s.source_model, s.reference_kind));
    v
}

pub fn rule_pipeline_error(
    mention_id: &str,
    sets: &[DetectionSet],
    cfg: &FilterConfig,
) -> Result<AgreementCheck, FilterError> {
    let srcs = sources(sets);
    let tops: Vec<&Detection> = srcs.iter().filter_map(|s| s.top()).collect();
    match tops.len() {
        0 => return Err(FilterError::NoDetections(mention_id.to_string())),
        1 => {
            return Ok(AgreementCheck {
                candidate: Candidate::from_detection(tops[0]),
                agreement_iou: None,
                corrected: false,
                notes: vec![],
            })
        }
        _ => {}
    }

    let masks: Vec<BinaryMask> = tops.iter().map(|d| d.mask.decode()).collect();
    let mut best = (f64::NEG_INFINITY, 0, 1);
    for i in 0..masks.len() {
        for j in i + 1..masks.len() {
            let v = iou(&masks[i], &masks[j])?;
            if v > best.0 {
                best = (v, i, j);
            }
        }
    }
    let (agreement, i, j) = best;
    if agreement >= cfg.iou_agreement_threshold {
        let pick = if tops[j].confidence > tops[i].confidence { j } else { i };
        return Ok(AgreementCheck {
            candidate: Candidate {
                mask: masks[pick].clone(),
                confidence: tops[pick].confidence,
                reference_kind: tops[pick].reference_kind,
                source_model: tops[pick].source_model,
            },
            agreement_iou: Some(agreement),
            corrected: false,
            notes: vec![],
        });
    }

    let (candidate, note) = correct_pipeline(&srcs)?;
    Ok(AgreementCheck {
        candidate,
        agreement_iou: Some(agreement),
        corrected: true,
        notes: vec![note],
    })
}

/// Highest confidence, earliest on ties.
fn most_confident<'a>(dets: impl Iterator<Item = &'a Detection>) -> Option<&'a Detection> {
    dets.fold(None, |acc: Option<&Detection>, d| match acc {
        Some(a) if a.confidence >= d.confidence => Some(a),
        _ => Some(d),
    })
}

fn correct_pipeline(srcs: &[&DetectionSet]) -> Result<(Candidate, String), FilterError> {
    let pipeline: Vec<&Detection> = srcs
        .iter()
        .filter(|s| s.source_model == SourceModel::Pipeline)
        .flat_map(|s| s.detections.iter())
        .collect();
    let end_to_end = most_confident(
        srcs.iter()
            .filter(|s| s.source_model == SourceModel::EndToEnd)
            .filter_map(|s| s.top()),
    );
    let boxed: Vec<(&Detection, BBox)> = pipeline
        .iter()
        .filter_map(|d| d.bbox.map(|b| (*d, b)))
        .collect();

    let Some(e2e) = end_to_end else {
        let top = most_confident(srcs.iter().flat_map(|s| s.detections.iter()))
            .expect("at least two sources");
        return Ok((
            Candidate::from_detection(top),
            "no end-to-end mask; kept the most confident mask".into(),
        ));
    };
    if boxed.is_empty() {
        return Ok((
            Candidate::from_detection(e2e),
            "no pipeline boxes; kept the end-to-end mask".into(),
        ));
    }

    let reference = e2e.mask.decode();
    let (h, w) = reference.dims();
    let mut chosen: Option<(f64, &Detection, BBox)> = None;
    for (d, b) in &boxed {
        let score = d.confidence * iou(&box_to_mask(b, h, w)?, &reference)?;
        if chosen.as_ref().is_none_or(|(s, _, _)| score > *s) {
            chosen = Some((score, d, *b));
        }
    }
    let (score, det, bbox) = chosen.expect("non-empty");
    if score <= 0.0 {
        return Ok((
            Candidate::from_detection(e2e),
            "no pipeline box overlaps the end-to-end mask; kept the end-to-end mask".into(),
        ));
    }

    // the pipeline mask covering most of the chosen box, confidence breaking ties
    let mut source: Option<(u64, &Detection)> = None;
    for d in &pipeline {
        let overlap = intersect_box_mask(&bbox, &d.mask.decode())?;
        let better = match source {
            None => true,
            Some((o, s)) => overlap > o || (overlap == o && d.confidence > s.confidence),
        };
        if better {
            source = Some((overlap, d));
        }
    }
    let (_, src) = source.expect("non-empty");
    let clipped = clip_to_box(&src.mask.decode(), &bbox)?;
    if clipped.is_empty() {
        return Ok((
            Candidate::from_detection(e2e),
            "clipped pipeline mask is empty; kept the end-to-end mask".into(),
        ));
    }
    Ok((
        Candidate {
            mask: clipped,
            confidence: det.confidence,
            reference_kind: det.reference_kind,
            source_model: SourceModel::Pipeline,
        },
        format!(
            "re-selected box [{}, {}, {}, {}] (score {:.4})",
            bbox.x, bbox.y, bbox.w, bbox.h, score
        ),
    ))
}

pub fn rule_incomplete_location(
    entity: &EntityRecord,
    best: &Candidate,
    cfg: &FilterConfig,
) -> Option<BinaryMask> {
    if !cfg.full_image_categories.contains(&entity.category) {
        return None;
    }
    if best.confidence >= cfg.location_confidence_threshold {
        return None;
    }
    if best.mask.area() as usize == best.mask.pixel_count() {
        return None;
    }
    let (h, w) = best.mask.dims();
    Some(BinaryMask::full(h, w).expect("valid dims"))
}

/// Largest fraction of the image covered by the boxes of a single
/// reference, counting only references with at least two boxes.
pub fn same_reference_box_coverage(sets: &[DetectionSet]) -> Result<f64, MaskError> {
    let mut best = 0.0f64;
    for set in sets {
        let boxes: Vec<BBox> = set.detections.iter().filter_map(|d| d.bbox).collect();
        if boxes.len() < 2 {
            continue;
        }
        best = best.max(box_union_coverage(&boxes, set.height, set.width)?);
    }
    Ok(best)
}

/// Component counts of a mask before and after opening.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fragmentation {
    pub raw: usize,
    pub opened: usize,
}

pub fn fragmentation(mask: &BinaryMask, radius: usize) -> Fragmentation {
    Fragmentation {
        raw: connected_components(mask).count,
        opened: connected_components(&open(mask, radius)).count,
    }
}

/// Returns the inverted mask when the dense-scene pattern is present.
///
/// Besides the coverage and component-count gates, the opened mask must
/// have more components than the mask itself: a background mask is a
/// connected web between objects that falls apart under opening, while the
/// inverted foreground does not, so the rule never fires on its own output.
pub fn rule_dense_inversion(
    sets: &[DetectionSet],
    mask: &BinaryMask,
    cfg: &FilterConfig,
) -> Result<Option<BinaryMask>, MaskError> {
    if same_reference_box_coverage(sets)? < cfg.dense_coverage_fraction {
        return Ok(None);
    }
    let frag = fragmentation(mask, cfg.morphology_radius);
    if frag.opened > cfg.dense_component_threshold && frag.opened > frag.raw {
        return Ok(Some(mask.invert()));
    }
    Ok(None)
}

pub fn run_filters(
    task: &MentionTask,
    entity: &EntityRecord,
    sets: &[DetectionSet],
    cfg: &FilterConfig,
) -> FilterVerdict {
    if let Some(v) = rule_non_visual(task, entity, cfg) {
        return v;
    }
    let check = match rule_pipeline_error(&task.mention_id, sets, cfg) {
        Ok(c) => c,
        Err(err) => return FilterVerdict::dropped(&task.mention_id, RuleFired::PipelineError, err.to_string()),
    };
    let mut fired = Vec::new();
    let mut notes = check.notes;
    let mut candidate = check.candidate;
    if check.corrected {
        fired.push(RuleFired::PipelineError);
    }
    if let Some(full) = rule_incomplete_location(entity, &candidate, cfg) {
        fired.push(RuleFired::IncompleteLocation);
        notes.push(format!(
            "confidence {:.4} below {}; using the whole image",
            candidate.confidence, cfg.location_confidence_threshold
        ));
        candidate.mask = full;
    }
    match rule_dense_inversion(sets, &candidate.mask, cfg) {
        Ok(Some(inverted)) => {
            fired.push(RuleFired::DenseInversion);
            notes.push("dense scene; inverted the background mask".into());
            candidate.mask = inverted;
        }
        Ok(None) => {}
        Err(err) => notes.push(format!("dense check skipped: {err}")),
    }
    if fired.len() > 1 {
        let names: Vec<&str> = fired.iter().map(|r| r.as_str()).collect();
        notes.push(format!("rules applied: {}", names.join(", ")));
    }

    let rule = fired.last().copied().unwrap_or(RuleFired::None);
    FilterVerdict {
        mention_id: task.mention_id.clone(),
        outcome: if rule == RuleFired::None {
            Outcome::Accepted
        } else {
            Outcome::Corrected
        },
        rule_fired: rule,
        final_mask: Some(rle_encode(&candidate.mask)),
        agreement_iou: check.agreement_iou,
        notes: notes.join("; "),
        reference_kind: Some(candidate.reference_kind),
        source_model: Some(candidate.source_model),
        confidence: Some(candidate.confidence),
    }
}

/// Everything the filters need for one mention.
#[derive(Debug, Clone)]
pub struct MentionInput {
    pub task: MentionTask,
    pub entity: EntityRecord,
    pub sets: Vec<DetectionSet>,
}

/// Filters every mention in parallel; verdicts come back sorted by mention id.
pub fn run_filters_batch(inputs: &[MentionInput], cfg: &FilterConfig) -> Vec<FilterVerdict> {
    let mut verdicts = par::map(inputs, |m| run_filters(&m.task, &m.entity, &m.sets, cfg));
    verdicts.sort_by(|a, b| a.mention_id.cmp(&b.mention_id));
    verdicts
}

/// Replaces every detection mask with the verdict's final mask, keeping
/// boxes and scores. Feeding the result back through [`run_filters`] checks
/// that corrections are stable.
pub fn resubmit_sets(sets: &[DetectionSet], verdict: &FilterVerdict) -> Vec<DetectionSet> {
    let Some(mask) = &verdict.final_mask else {
        return sets.to_vec();
    };
    sets.iter()
        .map(|s| {
            let mut s = s.clone();
            for d in &mut s.detections {
                d.mask = mask.clone();
            }
            s
        })
        .collect()
}
