//! Stage orchestration for a full annotation run.
//!
//! Every stage reads its inputs from files and writes its outputs to the
//! output directory, so a resumed run sees exactly what a fresh one does.
//! A stage is skipped when all its outputs exist and nothing upstream ran.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{
    area_ratio_histogram, assemble, category_distribution, render_aligned, AnnotationRecord, AssembleOptions,
    Histogram, SplitManifest, SplitSummary,
};
use crate::codes::{build_codebook, Codebook, Vocab};
use crate::config::{ConfigError, PipelineConfig};
use crate::eval::{accuracy_report, build_index, load_predictions, resolve_all, IndexOptions};
use crate::filter::{run_filters_batch, FilterVerdict, MentionInput, Outcome, RuleFired};
use crate::ingest::{
    ingest_shards, mock_segment, DetectionLine, DetectionReader, DetectionSet, IngestStats, ScenarioTable,
    SourceModel, Thresholds,
};
use crate::kb::{load_kb, KnowledgeBase};
use crate::par;
use crate::reference::{
    build_references, ExtractorChain, MentionTask, ReferringExtractor, RemoteExtractor, TextReference,
};

pub const REFERENCES_FILE: &str = "references.jsonl";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const INGEST_STATS_FILE: &str = "ingest_stats.json";
pub const VERDICTS_FILE: &str = "verdicts.jsonl";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const COCO_DIR: &str = "coco";
pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_TXT: &str = "summary.txt";
pub const STATS_JSON: &str = "stats.json";
pub const STATS_TXT: &str = "stats.txt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const CODEBOOK_FILE: &str = "codebook.jsonl";
pub const COLLISIONS_FILE: &str = "collisions.json";
pub const EVAL_JSON: &str = "eval_report.json";
pub const EVAL_TXT: &str = "eval_report.txt";
pub const RESOLVED_FILE: &str = "resolved.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    References,
    Ingest,
    Filter,
    Assemble,
    Stats,
    Codes,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::References,
        Stage::Ingest,
        Stage::Filter,
        Stage::Assemble,
        Stage::Stats,
        Stage::Codes,
        Stage::Eval,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::References => "references",
            Stage::Ingest => "ingest",
            Stage::Filter => "filter",
            Stage::Assemble => "assemble",
            Stage::Stats => "stats",
            Stage::Codes => "codes",
            Stage::Eval => "eval",
        }
    }

    /// Stages whose outputs this one reads.
    pub fn upstream(&self) -> &'static [Stage] {
        match self {
            Stage::References => &[],
            Stage::Ingest => &[Stage::References],
            Stage::Filter => &[Stage::Ingest],
            Stage::Assemble => &[Stage::Filter],
            Stage::Stats => &[Stage::Ingest, Stage::Filter, Stage::Assemble],
            Stage::Codes => &[],
            Stage::Eval => &[Stage::Codes],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage {stage}: {message}")]
    Stage { stage: Stage, message: String },
}

fn stage_err(stage: Stage) -> impl Fn(&dyn fmt::Display) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        message: e.to_string(),
    }
}

/// Writes through a temporary file so a crashed stage never leaves a
/// complete-looking output behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("partial");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(tmp, path)
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, String> {
    let f = std::fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| format!("{}: {e}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("{} line {}: {e}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn to_pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

pub fn load_tasks(path: &Path) -> Result<Vec<MentionTask>, String> {
    let mut tasks: Vec<MentionTask> = read_jsonl(path)?;
    tasks.sort_by(|a, b| a.mention_id.cmp(&b.mention_id));
    if let Some(w) = tasks.windows(2).find(|w| w[0].mention_id == w[1].mention_id) {
        return Err(format!("duplicate mention id {}", w[0].mention_id));
    }
    Ok(tasks)
}

/// Outcome tallies over the verdict log.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub accepted: u64,
    pub corrected: u64,
    pub dropped: u64,
    pub mentions: u64,
    pub rules: BTreeMap<RuleFired, u64>,
}

impl OutcomeCounts {
    pub fn from_verdicts(verdicts: &[FilterVerdict]) -> Self {
        let mut c = OutcomeCounts::default();
        for v in verdicts {
            match v.outcome {
                Outcome::Accepted => c.accepted += 1,
                Outcome::Corrected => c.corrected += 1,
                Outcome::Dropped => c.dropped += 1,
            }
            c.mentions += 1;
            *c.rules.entry(v.rule_fired).or_insert(0) += 1;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub area_ratio_histogram: Histogram,
    pub categories: BTreeMap<String, u64>,
    pub ingest: Option<IngestStats>,
    pub outcomes: OutcomeCounts,
    pub splits: SplitSummary,
}

impl DatasetStats {
    pub fn render(&self) -> String {
        let mut out = String::from("Splits\n");
        out.push_str(&self.splits.render_table());
        out.push_str("\nFilter outcomes\n");
        let o = &self.outcomes;
        let mut rows = vec![
            vec!["accepted".to_string(), o.accepted.to_string()],
            vec!["corrected".to_string(), o.corrected.to_string()],
            vec!["dropped".to_string(), o.dropped.to_string()],
            vec!["mentions".to_string(), o.mentions.to_string()],
        ];
        for (rule, n) in &o.rules {
            rows.push(vec![format!("rule {}", rule.as_str()), n.to_string()]);
        }
        out.push_str(&render_aligned(&rows));
        out.push_str("\nCategories\n");
        let rows: Vec<Vec<String>> = self
            .categories
            .iter()
            .map(|(c, n)| vec![c.clone(), n.to_string()])
            .collect();
        out.push_str(&render_aligned(&rows));
        out.push_str("\nMask area ratio\n");
        let h = &self.area_ratio_histogram;
        let rows: Vec<Vec<String>> = h
            .counts
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let lo = i as f64 / h.bins as f64;
                let hi = (i + 1) as f64 / h.bins as f64;
                vec![format!("[{lo:.2}, {hi:.2}{}", if i + 1 == h.bins { "]" } else { ")" }), n.to_string()]
            })
            .collect();
        out.push_str(&render_aligned(&rows));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: Stage,
    pub ran: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub stages: Vec<StageStatus>,
}

impl RunReport {
    pub fn ran(&self) -> Vec<Stage> {
        self.stages.iter().filter(|s| s.ran).map(|s| s.stage).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Rerun every stage even when outputs exist.
    pub force: bool,
}

/// Lazily loaded shared inputs.
struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    out: PathBuf,
    kb: Option<KnowledgeBase>,
    tasks: Option<Vec<MentionTask>>,
}

impl<'a> Ctx<'a> {
    fn new(cfg: &'a PipelineConfig) -> Result<Self, PipelineError> {
        Ok(Self {
            cfg,
            out: cfg.output_dir()?.to_path_buf(),
            kb: None,
            tasks: None,
        })
    }

    fn kb(&mut self, stage: Stage) -> Result<&KnowledgeBase, PipelineError> {
        if self.kb.is_none() {
            let path = self
                .cfg
                .paths
                .kb
                .as_ref()
                .ok_or_else(|| ConfigError::Invalid("knowledge base path is not set".into()))?;
            self.kb = Some(load_kb(path).map_err(|e| stage_err(stage)(&e))?);
        }
        Ok(self.kb.as_ref().expect("loaded"))
    }

    fn tasks(&mut self, stage: Stage) -> Result<&[MentionTask], PipelineError> {
        if self.tasks.is_none() {
            let path = self
                .cfg
                .paths
                .tasks
                .as_ref()
                .ok_or_else(|| ConfigError::Invalid("tasks file path is not set".into()))?;
            self.tasks = Some(load_tasks(path).map_err(|e| stage_err(stage)(&e))?);
        }
        Ok(self.tasks.as_deref().expect("loaded"))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn outputs(&self, stage: Stage) -> Vec<PathBuf> {
        let names: &[&str] = match stage {
            Stage::References => &[REFERENCES_FILE],
            Stage::Ingest => &[DETECTIONS_FILE, INGEST_STATS_FILE],
            Stage::Filter => &[VERDICTS_FILE],
            Stage::Assemble => &[ANNOTATIONS_FILE, SUMMARY_JSON, SUMMARY_TXT, COCO_DIR],
            Stage::Stats => &[STATS_JSON, STATS_TXT],
            Stage::Codes => &[VOCAB_FILE, CODEBOOK_FILE, COLLISIONS_FILE],
            Stage::Eval => &[EVAL_JSON, EVAL_TXT, RESOLVED_FILE],
        };
        names.iter().map(|n| self.path(n)).collect()
    }

    fn write(&self, stage: Stage, name: &str, text: &str) -> Result<(), PipelineError> {
        write_atomic(&self.path(name), text.as_bytes()).map_err(|e| stage_err(stage)(&e))
    }

    fn run_stage(&mut self, stage: Stage) -> Result<(), PipelineError> {
        match stage {
            Stage::References => self.references(),
            Stage::Ingest => self.ingest(),
            Stage::Filter => self.filter(),
            Stage::Assemble => self.assemble(),
            Stage::Stats => self.stats(),
            Stage::Codes => self.codes(),
            Stage::Eval => self.eval(),
        }
    }

    fn extractor(&self) -> ExtractorChain {
        let ex = &self.cfg.extractor;
        match &ex.endpoint {
            Some(url) => ExtractorChain::with_remote(RemoteExtractor::new(
                url.clone(),
                ex.prompt.clone(),
                Duration::from_secs_f64(ex.timeout_s),
            )),
            None => ExtractorChain::offline(),
        }
    }

    fn references(&mut self) -> Result<(), PipelineError> {
        let st = Stage::References;
        let extractor = self.extractor();
        let template = self.cfg.templates.intension.clone();
        let in_flight = self.cfg.extractor.max_in_flight;
        self.kb(st)?;
        self.tasks(st)?;
        let kb = self.kb.as_ref().expect("loaded");
        let tasks = self.tasks.as_deref().expect("loaded");
        let built = par::with_threads(in_flight, || {
            par::map(tasks, |t| {
                let entity = kb
                    .get(&t.entity_id)
                    .ok_or_else(|| format!("mention {} references unknown entity {}", t.mention_id, t.entity_id))?;
                build_references(t, entity, &template, &extractor as &dyn ReferringExtractor).map_err(|e| e.to_string())
            })
        });
        let mut refs: Vec<TextReference> = Vec::new();
        for r in built {
            refs.extend(r.map_err(|e| stage_err(st)(&e))?);
        }
        self.write(st, REFERENCES_FILE, &to_jsonl(&refs))
    }

    fn ingest(&mut self) -> Result<(), PipelineError> {
        let st = Stage::Ingest;
        let cfg = self.cfg;
        let mut sets = Vec::new();
        let mut stats = IngestStats::default();
        if !cfg.paths.shards.is_empty() {
            let out = ingest_shards(&cfg.paths.shards, &cfg.thresholds).map_err(|e| stage_err(st)(&e))?;
            sets = out.sets;
            stats = out.stats;
        } else if let Some(path) = &cfg.paths.scenarios {
            let table = ScenarioTable::load(path).map_err(|e| stage_err(st)(&e))?;
            let refs: Vec<TextReference> = read_jsonl(&self.path(REFERENCES_FILE)).map_err(|e| stage_err(st)(&e))?;
            let tasks = self.tasks(st)?;
            let by_id: HashMap<&str, &MentionTask> = tasks.iter().map(|t| (t.mention_id.as_str(), t)).collect();
            for r in &refs {
                let task = by_id
                    .get(r.mention_id.as_str())
                    .ok_or_else(|| stage_err(st)(&format!("reference for unknown mention {}", r.mention_id)))?;
                for model in [SourceModel::Pipeline, SourceModel::EndToEnd] {
                    let set = mock_segment(task, r, model, &table);
                    stats.lines += 1;
                    stats.records += set.detections.len();
                    stats.kept += set.detections.len();
                    if !set.is_empty() {
                        sets.push(set);
                    }
                }
            }
            crate::ingest::sort_sets(&mut sets);
        }
        let lines: Vec<DetectionLine> = sets.iter().map(DetectionSet::to_line).collect();
        self.write(st, DETECTIONS_FILE, &to_jsonl(&lines))?;
        self.write(st, INGEST_STATS_FILE, &to_pretty(&stats))
    }

    fn load_sets(&self, st: Stage) -> Result<Vec<DetectionSet>, PipelineError> {
        let path = self.path(DETECTIONS_FILE);
        let f = std::fs::File::open(&path).map_err(|e| stage_err(st)(&format!("{}: {e}", path.display())))?;
        // persisted sets were already triaged; keep everything on reload
        let keep_all = Thresholds {
            box_threshold: 0.0,
            text_threshold: 0.0,
        };
        DetectionReader::new(BufReader::new(f), None, keep_all)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| stage_err(st)(&e))
    }

    fn filter(&mut self) -> Result<(), PipelineError> {
        let st = Stage::Filter;
        let sets = self.load_sets(st)?;
        let mut by_mention: HashMap<String, Vec<DetectionSet>> = HashMap::new();
        for s in sets {
            by_mention.entry(s.mention_id.clone()).or_default().push(s);
        }
        self.kb(st)?;
        self.tasks(st)?;
        let kb = self.kb.as_ref().expect("loaded");
        let tasks = self.tasks.as_deref().expect("loaded");
        let mut inputs = Vec::with_capacity(tasks.len());
        for t in tasks {
            let entity = kb.get(&t.entity_id).ok_or_else(|| {
                stage_err(st)(&format!("mention {} references unknown entity {}", t.mention_id, t.entity_id))
            })?;
            inputs.push(MentionInput {
                task: t.clone(),
                entity: entity.clone(),
                sets: by_mention.remove(&t.mention_id).unwrap_or_default(),
            });
        }
        if let Some(orphan) = by_mention.keys().min() {
            log::warn!("detections for unknown mention {orphan} ignored");
        }
        let verdicts = run_filters_batch(&inputs, &self.cfg.filter);
        self.write(st, VERDICTS_FILE, &to_jsonl(&verdicts))
    }

    fn manifest(&self, st: Stage) -> Result<SplitManifest, PipelineError> {
        let path = self
            .cfg
            .paths
            .manifest
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("split manifest path is not set".into()))?;
        SplitManifest::load(path).map_err(|e| stage_err(st)(&e))
    }

    fn assemble(&mut self) -> Result<(), PipelineError> {
        let st = Stage::Assemble;
        let verdicts: Vec<FilterVerdict> = read_jsonl(&self.path(VERDICTS_FILE)).map_err(|e| stage_err(st)(&e))?;
        let manifest = self.manifest(st)?;
        let opts = AssembleOptions {
            cap: self.cfg.cap(),
            seed: self.cfg.seed,
        };
        self.kb(st)?;
        self.tasks(st)?;
        let kb = self.kb.as_ref().expect("loaded");
        let tasks = self.tasks.as_deref().expect("loaded");
        let out = assemble(&verdicts, tasks, kb, &manifest, &opts).map_err(|e| stage_err(st)(&e))?;
        if out.cap_removed > 0 {
            log::info!("per-entity cap removed {} annotations", out.cap_removed);
        }
        for (split, coco) in &out.coco {
            self.write(st, &format!("{COCO_DIR}/{split}.json"), &coco.to_canonical_json())?;
        }
        self.write(st, ANNOTATIONS_FILE, &to_jsonl(&out.records))?;
        self.write(st, SUMMARY_JSON, &to_pretty(&out.summary))?;
        self.write(st, SUMMARY_TXT, &out.summary.render_table())
    }

    fn stats(&mut self) -> Result<(), PipelineError> {
        let st = Stage::Stats;
        let records: Vec<AnnotationRecord> =
            read_jsonl(&self.path(ANNOTATIONS_FILE)).map_err(|e| stage_err(st)(&e))?;
        let verdicts: Vec<FilterVerdict> = read_jsonl(&self.path(VERDICTS_FILE)).map_err(|e| stage_err(st)(&e))?;
        let ingest = match std::fs::read_to_string(self.path(INGEST_STATS_FILE)) {
            Ok(text) => Some(serde_json::from_str(&text).map_err(|e| stage_err(st)(&e))?),
            Err(_) => None,
        };
        let bins = self.cfg.stats.histogram_bins;
        let primary = self.cfg.stats.primary_categories.clone();
        let kb = self.kb(st)?;
        let stats = DatasetStats {
            area_ratio_histogram: area_ratio_histogram(&records, bins),
            categories: category_distribution(&records, kb, &primary),
            ingest,
            outcomes: OutcomeCounts::from_verdicts(&verdicts),
            splits: crate::assembly::summarize(&records),
        };
        self.write(st, STATS_JSON, &to_pretty(&stats))?;
        self.write(st, STATS_TXT, &stats.render())
    }

    fn codes(&mut self) -> Result<(), PipelineError> {
        let st = Stage::Codes;
        let length = self.cfg.codes.length;
        let vocab_path = self.cfg.paths.vocab.clone();
        let kb = self.kb(st)?;
        let vocab = match &vocab_path {
            Some(p) => Vocab::load(p).map_err(|e| stage_err(st)(&e))?,
            None => Vocab::from_words(kb.iter().map(|e| e.label.as_str())),
        };
        let cb = build_codebook(kb, &vocab, length).map_err(|e| stage_err(st)(&e))?;
        let report = cb.collisions();
        if !report.collisions.is_empty() {
            log::warn!(
                "{} codes are shared by more than one entity ({} entities)",
                report.collisions.len(),
                report.colliding_entities
            );
        }
        self.write(st, VOCAB_FILE, &cb.vocab().to_text())?;
        self.write(st, CODEBOOK_FILE, &cb.to_jsonl())?;
        self.write(st, COLLISIONS_FILE, &to_pretty(&report))
    }

    fn load_codebook(&self, st: Stage) -> Result<Codebook, PipelineError> {
        let vocab = Vocab::load(self.path(VOCAB_FILE)).map_err(|e| stage_err(st)(&e))?;
        let text = std::fs::read_to_string(self.path(CODEBOOK_FILE)).map_err(|e| stage_err(st)(&e))?;
        Codebook::from_jsonl(vocab, &text, self.cfg.codes.length).map_err(|e| stage_err(st)(&e))
    }

    fn eval(&mut self) -> Result<(), PipelineError> {
        let st = Stage::Eval;
        let Some(pred_path) = self.cfg.paths.predictions.clone() else {
            return Err(stage_err(st)(&"paths.predictions is not set"));
        };
        let preds = load_predictions(&pred_path).map_err(|e| stage_err(st)(&e))?;
        let codebook = self.load_codebook(st)?;
        let opts = IndexOptions {
            params: self.cfg.eval.bm25,
            aliases: self.cfg.eval.aliases,
        };
        let kb = self.kb(st)?;
        let index = build_index(kb, &opts).map_err(|e| stage_err(st)(&e))?;
        let resolved = resolve_all(&preds, Some(&codebook), &index);
        let report = accuracy_report(&resolved);
        self.write(st, RESOLVED_FILE, &to_jsonl(&resolved))?;
        self.write(st, EVAL_JSON, &to_pretty(&report))?;
        self.write(st, EVAL_TXT, &report.render_table())
    }
}

fn stages_for(cfg: &PipelineConfig) -> Vec<Stage> {
    Stage::ALL
        .into_iter()
        .filter(|s| *s != Stage::Eval || cfg.paths.predictions.is_some())
        .collect()
}

/// Runs `stages` in order, skipping any whose outputs are complete unless
/// an upstream stage ran in this invocation.
pub fn run_stages(cfg: &PipelineConfig, stages: &[Stage], opts: RunOptions) -> Result<RunReport, PipelineError> {
    let mut ctx = Ctx::new(cfg)?;
    std::fs::create_dir_all(&ctx.out).map_err(|e| ConfigError::Invalid(format!("{}: {e}", ctx.out.display())))?;
    let mut report = RunReport::default();
    for &stage in stages {
        let upstream_ran = stage.upstream().iter().any(|u| report.ran().contains(u));
        let complete = ctx.outputs(stage).iter().all(|p| p.exists());
        let ran = opts.force || upstream_ran || !complete;
        if ran {
            log::info!("stage {stage}: running");
            ctx.run_stage(stage)?;
        } else {
            log::info!("stage {stage}: outputs present, skipped");
        }
        report.stages.push(StageStatus { stage, ran });
    }
    Ok(report)
}

/// Full run: references, ingest, filter, assemble, stats, codes, and eval
/// when a predictions file is configured.
pub fn cmd_run(cfg: &PipelineConfig, opts: RunOptions) -> Result<RunReport, PipelineError> {
    cfg.validate_for_run()?;
    run_stages(cfg, &stages_for(cfg), opts)
}

/// Recomputes dataset statistics from an existing assembly.
pub fn cmd_stats(cfg: &PipelineConfig) -> Result<DatasetStats, PipelineError> {
    run_stages(cfg, &[Stage::Stats], RunOptions { force: true })?;
    let path = cfg.output_dir()?.join(STATS_JSON);
    let text = std::fs::read_to_string(&path).map_err(|e| stage_err(Stage::Stats)(&e))?;
    serde_json::from_str(&text).map_err(|e| stage_err(Stage::Stats)(&e))
}

pub fn cmd_codes(cfg: &PipelineConfig) -> Result<RunReport, PipelineError> {
    run_stages(cfg, &[Stage::Codes], RunOptions { force: true })
}

/// Builds codes if missing, then evaluates the configured predictions.
pub fn cmd_eval(cfg: &PipelineConfig) -> Result<RunReport, PipelineError> {
    let mut report = run_stages(cfg, &[Stage::Codes], RunOptions::default())?;
    report
        .stages
        .extend(run_stages(cfg, &[Stage::Eval], RunOptions { force: true })?.stages);
    Ok(report)
}

pub fn load_annotations(cfg: &PipelineConfig) -> Result<Vec<AnnotationRecord>, PipelineError> {
    read_jsonl(&cfg.output_dir()?.join(ANNOTATIONS_FILE)).map_err(|e| stage_err(Stage::Assemble)(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_skips_blank_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        std::fs::write(&p, "[1]\n\n[2,3]\n").unwrap();
        let v: Vec<Vec<u32>> = read_jsonl(&p).unwrap();
        assert_eq!(v, vec![vec![1], vec![2, 3]]);
        assert_eq!(to_jsonl(&v), "[1]\n[2,3]\n");
        std::fs::write(&p, "[1]\n{").unwrap();
        assert!(read_jsonl::<Vec<u32>>(&p).unwrap_err().contains("line 2"));
    }

    #[test]
    fn atomic_write_leaves_no_partial() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.json");
        write_atomic(&p, b"{}\n").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "{}\n");
        assert!(!p.with_extension("partial").exists());
    }

    #[test]
    fn eval_only_with_predictions() {
        let mut cfg = PipelineConfig::default();
        assert!(!stages_for(&cfg).contains(&Stage::Eval));
        cfg.paths.predictions = Some("p.jsonl".into());
        assert_eq!(stages_for(&cfg).last(), Some(&Stage::Eval));
    }

    #[test]
    fn outcome_counts() {
        let v = |o, r| FilterVerdict {
            mention_id: String::new(),
            outcome: o,
            rule_fired: r,
            final_mask: None,
            agreement_iou: None,
            notes: String::new(),
            reference_kind: None,
            source_model: None,
            confidence: None,
        };
        let c = OutcomeCounts::from_verdicts(&[
            v(Outcome::Accepted, RuleFired::None),
            v(Outcome::Dropped, RuleFired::NonVisual),
            v(Outcome::Corrected, RuleFired::DenseInversion),
        ]);
        assert_eq!((c.accepted, c.corrected, c.dropped, c.mentions), (1, 1, 1, 3));
        assert_eq!(c.rules[&RuleFired::NonVisual], 1);
    }
}
