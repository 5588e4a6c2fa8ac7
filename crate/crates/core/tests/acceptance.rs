//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Each check compares against an independent
//! brute-force oracle or the hand-labelled golden fixture.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use forge_core::assembly::{AnnotationRecord, CocoDataset, Histogram, Provenance, Seen, SplitSummary};
use forge_core::codes::{build_ald, build_codebook, term_frequencies, Vocab};
use forge_core::config::PipelineConfig;
use forge_core::eval::{accuracy_report, analyze, build_index, idf, resolve_all, IndexOptions, Prediction, PredictionRecord};
use forge_core::filter::{resubmit_sets, run_filters, FilterVerdict, Outcome, RuleFired};
use forge_core::ingest::{DetectionReader, DetectionSet, SourceModel, Thresholds};
use forge_core::kb::{load_kb, EntityRecord, KnowledgeBase};
use forge_core::mask::{connected_components, dilate, erode, iou, rle_decode, rle_encode, BinaryMask};
use forge_core::par;
use forge_core::pipeline::{self, cmd_run, load_tasks, read_jsonl, RunOptions};
use forge_core::reference::{ReferenceKind, Split};
use forge_core::review::sample_review;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Check = fn() -> Result<String, String>;

fn main() {
    let checks: [(&str, Check); 9] = [
        ("rle round-trip", rle_round_trip),
        ("geometry oracles", geometry_oracles),
        ("filter archetypes", filter_archetypes),
        ("dense inversion non-refire", no_refires),
        ("ald codes", ald_codes),
        ("bm25 oracle", bm25_oracle),
        ("assembly conservation", assembly_conservation),
        ("review sampling", review_sampling),
        ("evaluation arithmetic", evaluation_arithmetic),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<Duration, String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("took {t:.2?}, limit {limit:?}"))?;
    Ok(t)
}

fn random_mask(rng: &mut ChaCha8Rng, max: usize) -> BinaryMask {
    let h = rng.random_range(1..=max);
    let w = rng.random_range(1..=max);
    // mix sparse noise, dense noise and blocky shapes
    match rng.random_range(0..3) {
        0 => {
            let p = rng.random::<f64>();
            let bits = (0..h * w).map(|_| rng.random_bool(p)).collect();
            BinaryMask::from_bits(h, w, bits).unwrap()
        }
        1 => {
            let (r0, c0) = (rng.random_range(0..h), rng.random_range(0..w));
            let (r1, c1) = (rng.random_range(r0..h), rng.random_range(c0..w));
            BinaryMask::from_fn(h, w, |r, c| (r0..=r1).contains(&r) && (c0..=c1).contains(&c)).unwrap()
        }
        _ => {
            let cell = rng.random_range(1..=8);
            let seed: u64 = rng.random();
            BinaryMask::from_fn(h, w, |r, c| {
                let k = ((r / cell) as u64 * 7919 + (c / cell) as u64).wrapping_mul(seed | 1);
                (k >> 17) & 1 == 1
            })
            .unwrap()
        }
    }
}

fn rle_round_trip() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let masks: Vec<BinaryMask> = (0..10_000).map(|_| random_mask(&mut rng, 128)).collect();
    let start = Instant::now();
    let bad = par::map(&masks, |m| rle_decode(&rle_encode(m)) != *m)
        .iter()
        .filter(|&&b| b)
        .count();
    let t = within(start, Duration::from_secs(10))?;
    ensure(bad == 0, || format!("{bad} masks differ after round-trip"))?;
    Ok(format!("10000/10000 masks bit-exact in {t:.2?}"))
}

fn naive_iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (mut i, mut u) = (0u64, 0u64);
    for r in 0..a.height() {
        for c in 0..a.width() {
            let (x, y) = (a.get(r, c), b.get(r, c));
            i += (x && y) as u64;
            u += (x || y) as u64;
        }
    }
    if u == 0 {
        1.0
    } else {
        i as f64 / u as f64
    }
}

fn naive_morph(m: &BinaryMask, radius: usize, erode: bool) -> BinaryMask {
    let (h, w) = m.dims();
    let k = radius as i64;
    BinaryMask::from_fn(h, w, |r, c| {
        let mut hits = 0;
        let mut cells = 0;
        for rr in r as i64 - k..=r as i64 + k {
            for cc in c as i64 - k..=c as i64 + k {
                cells += 1;
                if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w && m.get(rr as usize, cc as usize) {
                    hits += 1;
                }
            }
        }
        if erode {
            hits == cells
        } else {
            hits > 0
        }
    })
    .unwrap()
}

/// Union-find over set pixels; returns the number of components.
fn naive_components(m: &BinaryMask) -> usize {
    let (h, w) = m.dims();
    let mut parent: Vec<usize> = (0..h * w).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for r in 0..h {
        for c in 0..w {
            if !m.get(r, c) {
                continue;
            }
            let i = r * w + c;
            if r + 1 < h && m.get(r + 1, c) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, i + w));
                parent[a] = b;
            }
            if c + 1 < w && m.get(r, c + 1) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, i + 1));
                parent[a] = b;
            }
        }
    }
    (0..h * w).filter(|&i| m.bits()[i] && find(&mut parent, i) == i).count()
}

fn geometry_oracles() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cases: Vec<(BinaryMask, BinaryMask, usize)> = (0..1000)
        .map(|_| {
            let a = random_mask(&mut rng, 64);
            let b = random_mask(&mut rng, 64);
            // reshape b to a's frame so iou applies
            let b = BinaryMask::from_fn(a.height(), a.width(), |r, c| {
                r < b.height() && c < b.width() && b.get(r, c)
            })
            .unwrap();
            (a, b, rng.random_range(1..=3))
        })
        .collect();
    let start = Instant::now();
    let mismatches: Vec<String> = par::map(&cases, |(a, b, radius)| {
        let mut out = Vec::new();
        if iou(a, b).unwrap() != naive_iou(a, b) {
            out.push("iou");
        }
        if erode(a, *radius) != naive_morph(a, *radius, true) {
            out.push("erode");
        }
        if dilate(a, *radius) != naive_morph(a, *radius, false) {
            out.push("dilate");
        }
        if connected_components(a).count != naive_components(a) {
            out.push("components");
        }
        out
    })
    .into_iter()
    .enumerate()
    .flat_map(|(i, v)| v.into_iter().map(move |op| format!("{op}#{i}")))
    .collect();
    let t = within(start, Duration::from_secs(30))?;
    ensure(mismatches.is_empty(), || format!("mismatches: {:?}", &mismatches[..mismatches.len().min(10)]))?;
    Ok(format!("1000 masks, iou/erode/dilate/components exact in {t:.2?}"))
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

fn golden_expected() -> Value {
    serde_json::from_str(&std::fs::read_to_string(golden_dir().join("expected.json")).unwrap()).unwrap()
}

struct GoldenRun {
    _dir: tempfile::TempDir,
    out: PathBuf,
    cfg: PipelineConfig,
}

fn golden_run() -> GoldenRun {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut cfg = PipelineConfig::load(golden_dir().join("forge.toml")).unwrap();
    cfg.paths.output = Some(out.clone());
    cmd_run(&cfg, RunOptions::default()).unwrap();
    GoldenRun { _dir: dir, out, cfg }
}

/// Mention task, entity and detection sets for every golden mention,
/// reloaded from the run's persisted detections.
fn golden_inputs(run: &GoldenRun) -> Vec<(forge_core::reference::MentionTask, EntityRecord, Vec<DetectionSet>)> {
    let kb = load_kb(run.cfg.paths.kb.as_ref().unwrap()).unwrap();
    let tasks = load_tasks(run.cfg.paths.tasks.as_ref().unwrap()).unwrap();
    let f = std::fs::File::open(run.out.join(pipeline::DETECTIONS_FILE)).unwrap();
    let keep_all = Thresholds {
        box_threshold: 0.0,
        text_threshold: 0.0,
    };
    let mut by_mention: HashMap<String, Vec<DetectionSet>> = HashMap::new();
    for s in DetectionReader::new(BufReader::new(f), None, keep_all) {
        let s = s.unwrap();
        by_mention.entry(s.mention_id.clone()).or_default().push(s);
    }
    tasks
        .into_iter()
        .map(|t| {
            let e = kb.get(&t.entity_id).unwrap().clone();
            let sets = by_mention.remove(&t.mention_id).unwrap_or_default();
            (t, e, sets)
        })
        .collect()
}

fn rule_name(r: RuleFired) -> String {
    serde_json::to_value(r).unwrap().as_str().unwrap().to_string()
}

fn filter_archetypes() -> Result<String, String> {
    let run = golden_run();
    let expected = golden_expected();
    let archetypes = expected["archetypes"].as_object().unwrap();
    let inputs = golden_inputs(&run);
    let mut hits = 0;
    for (mention, rule) in archetypes {
        let (task, entity, sets) = inputs
            .iter()
            .find(|(t, _, _)| &t.mention_id == mention)
            .ok_or_else(|| format!("no task for {mention}"))?;
        let v = run_filters(task, entity, sets, &run.cfg.filter);
        let got = rule_name(v.rule_fired);
        ensure(got == rule.as_str().unwrap(), || format!("{mention}: expected {rule}, fired {got}"))?;
        hits += 1;
    }
    ensure(hits == 4, || format!("only {hits} archetypes in the fixture"))?;
    Ok(format!("{hits}/4 archetypes fire the expected rule"))
}

fn no_refires() -> Result<String, String> {
    let run = golden_run();
    let mut corrected = 0;
    let mut dense = 0;
    let mut refires = Vec::new();
    for (task, entity, sets) in golden_inputs(&run) {
        let v = run_filters(&task, &entity, &sets, &run.cfg.filter);
        if v.outcome != Outcome::Corrected {
            continue;
        }
        corrected += 1;
        dense += (v.rule_fired == RuleFired::DenseInversion) as usize;
        let again = run_filters(&task, &entity, &resubmit_sets(&sets, &v), &run.cfg.filter);
        if again.rule_fired != RuleFired::None {
            refires.push(format!("{} -> {}", task.mention_id, rule_name(again.rule_fired)));
        }
    }
    ensure(dense > 0, || "fixture has no dense-inversion corrections".into())?;
    ensure(refires.is_empty(), || format!("refires: {refires:?}"))?;
    Ok(format!("0 refires over {corrected} corrected outputs ({dense} dense inversions)"))
}

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ne", "ru", "sa", "to", "vi", "ze", "po", "da", "fu", "gi", "ha", "jo", "be", "ce", "wu",
    "xa", "yo", "qui", "ster", "ton", "ville",
];

fn synthetic_word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(1..=4);
    (0..n).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect()
}

fn entity(id: String, label: String) -> EntityRecord {
    EntityRecord {
        entity_id: id,
        label,
        category: "landmark".into(),
        hypernyms: vec!["place".into()],
        aliases: vec![],
        has_image: true,
    }
}

/// Greedy longest-match by linear scan over the token list.
fn oracle_tokenize(tokens: &[String], name: &str) -> Vec<u32> {
    let mut out = Vec::new();
    for word in name.split_whitespace() {
        let mut rest = word;
        while !rest.is_empty() {
            let (id, tok) = tokens
                .iter()
                .enumerate()
                .filter(|(_, t)| rest.starts_with(t.as_str()))
                .max_by_key(|(i, t)| (t.len(), std::cmp::Reverse(*i)))
                .expect("covered");
            out.push(id as u32);
            rest = &rest[tok.len()..];
        }
    }
    out
}

/// Distinct tokens by ascending corpus frequency, earlier occurrence first
/// on ties, via repeated minimum selection.
fn oracle_code(all: &[Vec<u32>], name: &[u32], length: usize) -> Vec<u32> {
    let freq = |t: u32| all.iter().flatten().filter(|&&x| x == t).count();
    let mut pool: Vec<u32> = Vec::new();
    for &t in name {
        if !pool.contains(&t) {
            pool.push(t);
        }
    }
    let mut out = Vec::new();
    while !pool.is_empty() && out.len() < length {
        let mut best = 0;
        for i in 1..pool.len() {
            if freq(pool[i]) < freq(pool[best]) {
                best = i;
            }
        }
        out.push(pool.remove(best));
    }
    out
}

fn ald_codes() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let names: Vec<String> = (0..1000)
        .map(|_| {
            let words = rng.random_range(1..=4);
            (0..words).map(|_| synthetic_word(&mut rng)).collect::<Vec<_>>().join(" ")
        })
        .collect();
    let kb = KnowledgeBase::from_records(
        names
            .iter()
            .enumerate()
            .map(|(i, n)| entity(format!("Q{i:04}"), n.clone()))
            .collect(),
    )
    .map_err(|e| e.to_string())?;

    // syllables, some whole words and single letters so every name segments
    let mut token_list: Vec<String> = SYLLABLES.iter().map(|s| s.to_string()).collect();
    token_list.extend(names.iter().take(50).flat_map(|n| n.split_whitespace().map(str::to_string)));
    token_list.extend(('a'..='z').map(|c| c.to_string()));
    let mut seen = BTreeSet::new();
    token_list.retain(|t| seen.insert(t.clone()));
    let vocab = Vocab::from_tokens(&token_list).map_err(|e| e.to_string())?;

    let freqs = term_frequencies(&kb, &vocab).map_err(|e| e.to_string())?;
    let tokenized: Vec<Vec<u32>> = names.iter().map(|n| oracle_tokenize(&token_list, n)).collect();
    let mut full = 0;
    for (e, name) in kb.iter().zip(&tokenized) {
        let code = build_ald(e, &freqs, &vocab, 4).map_err(|err| err.to_string())?;
        let want = oracle_code(&tokenized, name, 4);
        ensure(code.tokens == want, || format!("{}: {:?} != oracle {:?}", e.entity_id, code.tokens, want))?;
        ensure(code.tokens.len() <= 4, || format!("{} longer than 4", e.entity_id))?;
        let f: Vec<u64> = code.tokens.iter().map(|t| freqs[t]).collect();
        ensure(f.windows(2).all(|w| w[0] <= w[1]), || format!("{} not frequency-ascending", e.entity_id))?;
        full += (code.tokens.len() == 4) as usize;
    }

    let bytes: Vec<String> = (0..3)
        .map(|i| {
            let build = || build_codebook(&kb, &vocab, 4).unwrap().to_jsonl();
            if i == 1 {
                par::with_threads(1, build)
            } else {
                build()
            }
        })
        .collect();
    ensure(bytes.windows(2).all(|w| w[0] == w[1]), || "codebook differs between runs".into())?;
    Ok(format!("1000/1000 codes equal the oracle ({full} at length 4); codebook identical over 3 runs"))
}

/// Full-scan BM25 straight from the definition, best document per entity.
fn oracle_bm25(docs: &[(String, Vec<String>)], query: &str) -> Vec<(String, f64)> {
    let (k1, b) = (1.2, 0.75);
    let n = docs.len();
    let avg = docs.iter().map(|(_, t)| t.len()).sum::<usize>() as f64 / n as f64;
    let mut terms = analyze(query);
    terms.sort();
    terms.dedup();
    let mut best: BTreeMap<String, f64> = BTreeMap::new();
    for (id, doc) in docs {
        let mut score = 0.0;
        let mut matched = false;
        for t in &terms {
            let tf = doc.iter().filter(|x| *x == t).count() as f64;
            if tf == 0.0 {
                continue;
            }
            matched = true;
            let df = docs.iter().filter(|(_, d)| d.contains(t)).count();
            let w = idf(n, df);
            score += w * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * doc.len() as f64 / avg));
        }
        if matched {
            let e = best.entry(id.clone()).or_insert(f64::MIN);
            *e = e.max(score);
        }
    }
    let mut out: Vec<(String, f64)> = best.into_iter().collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

fn bm25_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let words: Vec<String> = (0..40).map(|_| synthetic_word(&mut rng)).collect();
    let pick = |rng: &mut ChaCha8Rng, most: usize| -> String {
        let n = rng.random_range(1..=most);
        (0..n).map(|_| words[rng.random_range(0..words.len())].clone()).collect::<Vec<_>>().join(" ")
    };
    let mut queries = 0;
    for corpus in 0..300 {
        let size = corpus % 100 + 1;
        let aliases = corpus % 2 == 1;
        let records: Vec<EntityRecord> = (0..size)
            .map(|i| {
                let mut e = entity(format!("E{i:03}"), pick(&mut rng, 4));
                if aliases {
                    e.aliases = (0..rng.random_range(0..3)).map(|_| pick(&mut rng, 2)).collect();
                }
                e
            })
            .collect();
        let mut docs: Vec<(String, Vec<String>)> = Vec::new();
        for e in &records {
            docs.push((e.entity_id.clone(), analyze(&e.label)));
            if aliases {
                docs.extend(e.aliases.iter().map(|a| (e.entity_id.clone(), analyze(a))));
            }
        }
        let kb = KnowledgeBase::from_records(records).map_err(|e| e.to_string())?;
        let opts = IndexOptions {
            aliases,
            ..Default::default()
        };
        let index = build_index(&kb, &opts).map_err(|e| e.to_string())?;
        for _ in 0..10 {
            let extra = ["", "unknownword", "KA-lo"][rng.random_range(0..3)];
            let q = format!("{} {extra}", pick(&mut rng, 3));
            let got = index.search(&q, usize::MAX);
            let want = oracle_bm25(&docs, &q);
            ensure(got.len() == want.len(), || format!("corpus {corpus} {q:?}: {} hits vs {}", got.len(), want.len()))?;
            for (g, (id, s)) in got.iter().zip(&want) {
                ensure(&g.entity_id == id && (g.score - s).abs() <= 1e-9, || {
                    format!("corpus {corpus} {q:?}: {}={} vs oracle {id}={s}", g.entity_id, g.score)
                })?;
            }
            queries += 1;
        }
    }

    // exact-name retrieval on a large corpus of distinct names
    let mut big = BTreeSet::new();
    while big.len() < 10_000 {
        let n = rng.random_range(1..=3);
        big.insert((0..n).map(|_| synthetic_word(&mut rng)).collect::<Vec<_>>().join(" "));
    }
    let names: Vec<String> = big.into_iter().collect();
    let kb = KnowledgeBase::from_records(
        names
            .iter()
            .enumerate()
            .map(|(i, n)| entity(format!("Q{i:05}"), n.clone()))
            .collect(),
    )
    .map_err(|e| e.to_string())?;
    let index = build_index(&kb, &IndexOptions::default()).map_err(|e| e.to_string())?;
    let ids: Vec<usize> = (0..names.len()).collect();
    let correct = par::map(&ids, |&i| index.top1(&names[i]).as_deref() == Some(format!("Q{i:05}").as_str()))
        .iter()
        .filter(|&&ok| ok)
        .count();
    let rate = correct as f64 / names.len() as f64;
    ensure(rate >= 0.99, || format!("exact-name top-1 {correct}/10000 below 99%"))?;
    Ok(format!(
        "{queries} queries over 300 corpora within 1e-9; exact-name top-1 {correct}/10000 ({:.2}%)",
        rate * 100.0
    ))
}

fn assembly_conservation() -> Result<String, String> {
    let a = golden_run();
    let b = golden_run();
    let expected = golden_expected();

    let verdicts: Vec<FilterVerdict> = read_jsonl(&a.out.join(pipeline::VERDICTS_FILE))?;
    let count = |o: Outcome| verdicts.iter().filter(|v| v.outcome == o).count();
    let (acc, cor, drop) = (count(Outcome::Accepted), count(Outcome::Corrected), count(Outcome::Dropped));
    let mentions = load_tasks(a.cfg.paths.tasks.as_ref().unwrap())?.len();
    ensure(acc + cor + drop == mentions && mentions == 50, || {
        format!("{acc}+{cor}+{drop} != {mentions}")
    })?;
    let want = &expected["outcomes"];
    ensure(
        want["accepted"] == acc && want["corrected"] == cor && want["dropped"] == drop,
        || format!("outcomes {acc}/{cor}/{drop} differ from hand labels {want}"),
    )?;

    let coco_dir = |r: &GoldenRun| r.out.join(pipeline::COCO_DIR);
    let mut coco_files = 0;
    for entry in std::fs::read_dir(coco_dir(&a)).map_err(|e| e.to_string())? {
        let name = entry.map_err(|e| e.to_string())?.file_name();
        let x = std::fs::read(coco_dir(&a).join(&name)).map_err(|e| e.to_string())?;
        let y = std::fs::read(coco_dir(&b).join(&name)).map_err(|e| e.to_string())?;
        ensure(x == y, || format!("{name:?} differs between reruns"))?;
        let golden = std::fs::read(golden_dir().join("out").join(pipeline::COCO_DIR).join(&name)).map_err(|e| e.to_string())?;
        ensure(x == golden, || format!("{name:?} differs from the golden copy"))?;
        CocoDataset::from_json(std::str::from_utf8(&x).unwrap()).map_err(|e| e.to_string())?;
        coco_files += 1;
    }

    let summary: SplitSummary =
        serde_json::from_str(&std::fs::read_to_string(a.out.join(pipeline::SUMMARY_JSON)).unwrap()).unwrap();
    for (split, counts) in expected["splits"].as_object().unwrap() {
        let got = summary
            .splits
            .iter()
            .find(|(s, _)| s.as_str() == split)
            .map(|(_, c)| serde_json::to_value(c).unwrap());
        ensure(got.as_ref() == Some(counts), || format!("split {split}: {got:?} != {counts}"))?;
    }

    let records: Vec<AnnotationRecord> = read_jsonl(&a.out.join(pipeline::ANNOTATIONS_FILE))?;
    let hist = Histogram::new(a.cfg.stats.histogram_bins);
    let last = a.cfg.stats.histogram_bins - 1;
    let full: Vec<&str> = expected["full_image"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    ensure(!full.is_empty(), || "fixture has no full-image corrections".into())?;
    for m in &full {
        let r = records
            .iter()
            .find(|r| r.mention_id == *m)
            .ok_or_else(|| format!("{m} missing from annotations"))?;
        let bin = hist.bin_of(r.rle.area(), (r.height * r.width) as u64);
        ensure(bin == last, || format!("{m} lands in bin {bin}, not {last}"))?;
    }
    Ok(format!(
        "{acc}+{cor}+{drop}={mentions}; {coco_files} COCO files identical; summary matches; {} full-image corrections in the last bin",
        full.len()
    ))
}

fn review_sampling() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mask = rle_encode(&BinaryMask::full(4, 4).unwrap());
    let plan = [(Split::Entity, 14_000), (Split::Query, 4_000), (Split::Wiki, 2_000)];
    let mut entities = Vec::new();
    let mut records = Vec::new();
    for (split, n) in plan {
        for i in 0..n {
            let id = format!("{}-{i:05}", split.as_str());
            entities.push(entity(id.clone(), format!("name {i}")));
            for _ in 0..rng.random_range(1..=3) {
                let k = records.len() as u64 + 1;
                records.push(AnnotationRecord {
                    annotation_id: k,
                    mention_id: format!("m{k}"),
                    image_ref: format!("{k}.jpg"),
                    height: 4,
                    width: 4,
                    entity_id: id.clone(),
                    rle: mask.clone(),
                    query: String::new(),
                    split,
                    seen: Seen::Seen,
                    provenance: Provenance {
                        reference_kind: Some(ReferenceKind::Label),
                        rule_fired: RuleFired::None,
                        source_model: Some(SourceModel::Pipeline),
                    },
                });
            }
        }
    }
    let kb = KnowledgeBase::from_records(entities).map_err(|e| e.to_string())?;
    let sizes = BTreeMap::from([(Split::Entity, 1400), (Split::Query, 400), (Split::Wiki, 200)]);
    let items = sample_review(&records, &kb, &sizes, 42).map_err(|e| e.to_string())?;
    ensure(items.len() == 2000, || format!("{} items", items.len()))?;
    let distinct: BTreeSet<&str> = items.iter().map(|i| i.entity_id.as_str()).collect();
    ensure(distinct.len() == 2000, || format!("{} distinct entities", distinct.len()))?;
    for (split, want) in &sizes {
        let got = items.iter().filter(|i| i.split == *split).count();
        ensure(got == *want, || format!("{split}: {got} != {want}"))?;
    }
    let again = sample_review(&records, &kb, &sizes, 42).map_err(|e| e.to_string())?;
    ensure(again == items, || "same seed gave a different sample".into())?;
    let other = sample_review(&records, &kb, &sizes, 43).map_err(|e| e.to_string())?;
    ensure(other != items, || "different seeds gave the same sample".into())?;
    Ok(format!("2000 items over {} entities, 1400/400/200, all distinct, seed-stable", kb.len()))
}

fn evaluation_arithmetic() -> Result<String, String> {
    // (split, seen, total, correct): hand tally summing to 948 of 1000
    let plan = [
        (Split::Entity, true, 300, 290),
        (Split::Entity, false, 100, 91),
        (Split::Query, true, 200, 190),
        (Split::Query, false, 100, 93),
        (Split::Wiki, true, 100, 97),
        (Split::Wiki, false, 50, 44),
        (Split::Human, true, 100, 98),
        (Split::Human, false, 50, 45),
    ];
    let totals: (u64, u64) = plan.iter().fold((0, 0), |(t, c), p| (t + p.2, c + p.3));
    ensure(totals == (1000, 948), || format!("plan sums to {totals:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // distinct as token bags, so no two names tie under BM25
    let mut bags = BTreeSet::new();
    let mut names = Vec::new();
    while names.len() < 1000 {
        let (a, b) = (synthetic_word(&mut rng), synthetic_word(&mut rng));
        let bag = if a <= b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
        if a != b && bags.insert(bag) {
            names.push(format!("{a} {b}"));
        }
    }
    let kb = KnowledgeBase::from_records(
        names
            .iter()
            .enumerate()
            .map(|(i, n)| entity(format!("Q{i:04}"), n.clone()))
            .collect(),
    )
    .map_err(|e| e.to_string())?;
    let index = build_index(&kb, &IndexOptions::default()).map_err(|e| e.to_string())?;

    let mut preds = Vec::new();
    let mut next = 0usize;
    for &(split, seen, total, correct) in &plan {
        for k in 0..total {
            let gold = format!("Q{next:04}");
            let said = if k < correct { &names[next] } else { &names[(next + 1) % names.len()] };
            // planted answers must resolve as intended
            let hit = index.top1(said).unwrap();
            ensure((hit == gold) == (k < correct), || format!("{said:?} resolves to {hit}"))?;
            preds.push(PredictionRecord {
                mention_id: format!("m{next}"),
                prediction: Prediction::Text(said.clone()),
                gold,
                split,
                seen,
            });
            next += 1;
        }
    }
    let report = accuracy_report(&resolve_all(&preds, None, &index));
    let overall = report.overall.ok_or("no overall cell")?;
    ensure(overall.accuracy == 0.948 && overall.correct == 948 && overall.total == 1000, || {
        format!("overall {overall:?}")
    })?;
    for &(split, seen, total, correct) in &plan {
        let s = &report.splits[&split];
        let cell = if seen { s.seen } else { s.unseen }.ok_or("missing cell")?;
        ensure(cell.correct == correct && cell.total == total && cell.accuracy == correct as f64 / total as f64, || {
            format!("{split} seen={seen}: {cell:?}")
        })?;
    }
    Ok(format!("overall {} (948/1000); 8 cells equal the hand tally", overall.accuracy))
}
