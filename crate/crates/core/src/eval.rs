//! BM25 entity-name retrieval and accuracy reporting.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::render_aligned;
use crate::codes::Codebook;
use crate::kb::KnowledgeBase;
use crate::par;
use crate::reference::Split;

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("prediction line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid BM25 parameters k1={k1} b={b}")]
    InvalidParams { k1: f64, b: f64 },
}

/// Lowercase, then split on anything that is not alphanumeric.
pub fn analyze(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self {
            k1: DEFAULT_K1,
            b: DEFAULT_B,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IndexOptions {
    pub params: Bm25Params,
    /// Index each alias as an extra document for its entity.
    pub aliases: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Doc {
    pub entity_id: String,
    pub len: u32,
}

/// Inverted index over entity names. Documents are ordered by entity id,
/// so posting lists (sorted by document) are also in entity id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NameIndex {
    pub params: Bm25Params,
    pub docs: Vec<Doc>,
    pub avg_len: f64,
    pub postings: BTreeMap<String, Vec<(u32, u32)>>,
}

pub fn build_index(kb: &KnowledgeBase, opts: &IndexOptions) -> Result<NameIndex, EvalError> {
    let Bm25Params { k1, b } = opts.params;
    if !(k1 >= 0.0 && (0.0..=1.0).contains(&b)) {
        return Err(EvalError::InvalidParams { k1, b });
    }
    let mut names: Vec<(&str, usize, &str)> = Vec::new();
    for e in kb.iter() {
        names.push((&e.entity_id, 0, &e.label));
        if opts.aliases {
            for (i, a) in e.aliases.iter().enumerate() {
                names.push((&e.entity_id, i + 1, a));
            }
        }
    }
    names.sort();
    let analyzed: Vec<Vec<String>> = par::map(&names, |(_, _, n)| analyze(n));

    let mut docs = Vec::with_capacity(names.len());
    let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
    let mut total = 0u64;
    for (d, ((id, _, _), terms)) in names.iter().zip(&analyzed).enumerate() {
        let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
        for t in terms {
            *tf.entry(t).or_insert(0) += 1;
        }
        for (t, n) in tf {
            postings.entry(t.to_string()).or_default().push((d as u32, n));
        }
        total += terms.len() as u64;
        docs.push(Doc {
            entity_id: id.to_string(),
            len: terms.len() as u32,
        });
    }
    let avg_len = if docs.is_empty() { 0.0 } else { total as f64 / docs.len() as f64 };
    Ok(NameIndex {
        params: opts.params,
        docs,
        avg_len,
        postings,
    })
}

pub fn idf(n_docs: usize, df: usize) -> f64 {
    let (n, df) = (n_docs as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub entity_id: String,
    pub score: f64,
}

/// Score descending, then entity id ascending.
pub(crate) fn rank(hits: &mut [Hit]) {
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.entity_id.cmp(&b.entity_id)));
}

impl NameIndex {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("serializable")
    }

    /// Top `k` entities. Repeated query terms count once; an entity with
    /// several documents (aliases) scores as its best document.
    pub fn search(&self, query: &str, k: usize) -> Vec<Hit> {
        let mut terms = analyze(query);
        terms.sort();
        terms.dedup();
        let Bm25Params { k1, b } = self.params;
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for t in &terms {
            let Some(list) = self.postings.get(t) else { continue };
            let w = idf(self.docs.len(), list.len());
            for &(d, tf) in list {
                let dl = self.docs[d as usize].len as f64;
                let tf = tf as f64;
                let s = w * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / self.avg_len));
                *scores.entry(d).or_insert(0.0) += s;
            }
        }
        let mut best: HashMap<&str, f64> = HashMap::new();
        for (d, s) in scores {
            let e = best.entry(self.docs[d as usize].entity_id.as_str()).or_insert(f64::MIN);
            *e = e.max(s);
        }
        let mut hits: Vec<Hit> = best
            .into_iter()
            .map(|(id, score)| Hit {
                entity_id: id.to_string(),
                score,
            })
            .collect();
        rank(&mut hits);
        hits.truncate(k);
        hits
    }

    pub fn top1(&self, query: &str) -> Option<String> {
        self.search(query, 1).into_iter().next().map(|h| h.entity_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prediction {
    Text(String),
    Code { tokens: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub mention_id: String,
    pub prediction: Prediction,
    pub gold: String,
    pub split: Split,
    pub seen: bool,
}

pub fn read_predictions(reader: impl BufRead) -> Result<Vec<PredictionRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| EvalError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>, EvalError> {
    let f = std::fs::File::open(path)?;
    read_predictions(std::io::BufReader::new(f))
}

/// A code with an exact codebook hit maps to that entity (the smallest id
/// if the code collides). Anything else goes through BM25 as text.
pub fn resolve_prediction(pred: &Prediction, codebook: Option<&Codebook>, index: &NameIndex) -> Option<String> {
    match pred {
        Prediction::Text(text) => index.top1(text),
        Prediction::Code { tokens } => {
            let cb = codebook?;
            if let Some(ids) = cb.lookup(tokens) {
                return ids.iter().next().cloned();
            }
            let text = cb.strings(tokens).join(" ");
            index.top1(&text)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedPrediction {
    pub mention_id: String,
    pub resolved: Option<String>,
    pub gold: String,
    pub split: Split,
    pub seen: bool,
}

impl ResolvedPrediction {
    pub fn is_correct(&self) -> bool {
        self.resolved.as_deref() == Some(self.gold.as_str())
    }
}

pub fn resolve_all(
    preds: &[PredictionRecord],
    codebook: Option<&Codebook>,
    index: &NameIndex,
) -> Vec<ResolvedPrediction> {
    par::map(preds, |p| ResolvedPrediction {
        mention_id: p.mention_id.clone(),
        resolved: resolve_prediction(&p.prediction, codebook, index),
        gold: p.gold.clone(),
        split: p.split,
        seen: p.seen,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub accuracy: f64,
    pub correct: u64,
    pub total: u64,
}

impl Cell {
    fn from_counts(correct: u64, total: u64) -> Option<Cell> {
        (total > 0).then(|| Cell {
            accuracy: correct as f64 / total as f64,
            correct,
            total,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitAccuracy {
    pub all: Option<Cell>,
    pub seen: Option<Cell>,
    pub unseen: Option<Cell>,
}

/// Empty cells are `None` rather than zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub overall: Option<Cell>,
    pub splits: BTreeMap<Split, SplitAccuracy>,
}

type Tally = BTreeMap<(Split, bool), (u64, u64)>;

pub fn accuracy_report(records: &[ResolvedPrediction]) -> AccuracyReport {
    let tally: Tally = par::map_reduce(
        records,
        Tally::new,
        |mut acc, r| {
            let e = acc.entry((r.split, r.seen)).or_insert((0, 0));
            e.0 += r.is_correct() as u64;
            e.1 += 1;
            acc
        },
        |mut a, b| {
            for (k, (c, t)) in b {
                let e = a.entry(k).or_insert((0, 0));
                e.0 += c;
                e.1 += t;
            }
            a
        },
    );
    let mut report = AccuracyReport::default();
    let (mut oc, mut ot) = (0, 0);
    for split in Split::ALL {
        let (sc, st) = tally.get(&(split, true)).copied().unwrap_or((0, 0));
        let (uc, ut) = tally.get(&(split, false)).copied().unwrap_or((0, 0));
        if st + ut == 0 {
            continue;
        }
        oc += sc + uc;
        ot += st + ut;
        report.splits.insert(
            split,
            SplitAccuracy {
                all: Cell::from_counts(sc + uc, st + ut),
                seen: Cell::from_counts(sc, st),
                unseen: Cell::from_counts(uc, ut),
            },
        );
    }
    report.overall = Cell::from_counts(oc, ot);
    report
}

fn pct(cell: Option<Cell>) -> String {
    match cell {
        Some(c) => format!("{:.1}", c.accuracy * 100.0),
        None => "-".into(),
    }
}

impl AccuracyReport {
    /// Entity, Query and Human columns (Wiki when present) plus Overall;
    /// rows for all, seen and unseen examples, in percent.
    pub fn render_table(&self) -> String {
        let mut splits = vec![Split::Entity, Split::Query];
        if self.splits.contains_key(&Split::Wiki) {
            splits.push(Split::Wiki);
        }
        splits.push(Split::Human);
        let mut header = vec![String::new()];
        header.extend(splits.iter().map(|s| s.title().to_string()));
        header.push("Overall".into());
        let mut table = vec![header];
        type Getter = fn(&SplitAccuracy) -> Option<Cell>;
        let rows: [(&str, Getter); 3] = [("All", |s| s.all), ("Seen", |s| s.seen), ("Unseen", |s| s.unseen)];
        for (label, get) in rows {
            let mut row = vec![label.to_string()];
            for s in &splits {
                row.push(pct(self.splits.get(s).and_then(get)));
            }
            row.push(if label == "All" { pct(self.overall) } else { overall_by(self, get) });
            table.push(row);
        }
        render_aligned(&table)
    }
}

fn overall_by(report: &AccuracyReport, get: fn(&SplitAccuracy) -> Option<Cell>) -> String {
    let (c, t) = report
        .splits
        .values()
        .filter_map(get)
        .fold((0, 0), |(c, t), cell| (c + cell.correct, t + cell.total));
    pct(Cell::from_counts(c, t))
}
