//! End-to-end run over the bundled 50-mention fixture.
//!
//! Outputs are compared byte for byte with `tests/fixtures/golden/out`.
//! Set `FORGE_BLESS=1` to rewrite them after an audited change.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use forge_core::assembly::{CocoDataset, SplitSummary};
use forge_core::config::PipelineConfig;
use forge_core::filter::FilterVerdict;
use forge_core::pipeline::{self, cmd_run, read_jsonl, RunOptions, Stage};
use serde_json::Value;

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

fn config(out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::load(fixture_dir().join("forge.toml")).unwrap();
    cfg.paths.output = Some(out.to_path_buf());
    cfg
}

fn expected() -> Value {
    let text = std::fs::read_to_string(fixture_dir().join("expected.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn verdicts_match_hand_labels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    cmd_run(&cfg, RunOptions::default()).unwrap();
    let verdicts: Vec<FilterVerdict> = read_jsonl(&dir.path().join(pipeline::VERDICTS_FILE)).unwrap();
    let exp = expected();
    let mentions = exp["mentions"].as_object().unwrap();
    assert_eq!(verdicts.len(), mentions.len());
    for v in &verdicts {
        let e = &mentions[&v.mention_id];
        assert_eq!(serde_json::to_value(v.outcome).unwrap(), e["outcome"], "{}", v.mention_id);
        assert_eq!(serde_json::to_value(v.rule_fired).unwrap(), e["rule_fired"], "{}", v.mention_id);
        let area = v.final_mask.as_ref().map(|m| m.area());
        assert_eq!(area, e["area"].as_u64(), "{} area", v.mention_id);
    }
}

#[test]
fn summary_matches_hand_tally() {
    let dir = tempfile::tempdir().unwrap();
    cmd_run(&config(dir.path()), RunOptions::default()).unwrap();
    let text = std::fs::read_to_string(dir.path().join(pipeline::SUMMARY_JSON)).unwrap();
    let summary: SplitSummary = serde_json::from_str(&text).unwrap();
    let exp = expected();
    for (split, counts) in exp["splits"].as_object().unwrap() {
        let got = summary
            .splits
            .iter()
            .find(|(s, _)| s.as_str() == split)
            .map(|(_, c)| serde_json::to_value(c).unwrap())
            .unwrap();
        assert_eq!(&got, counts, "split {split}");
    }
    let coco = std::fs::read_to_string(dir.path().join("coco/entity.json")).unwrap();
    let coco = CocoDataset::from_json(&coco).unwrap();
    assert_eq!(coco.annotations.len() as u64, exp["splits"]["entity"]["total_examples"].as_u64().unwrap());
}

#[test]
fn reruns_are_byte_identical_and_match_golden() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_run(&config(a.path()), RunOptions::default()).unwrap();
    cmd_run(&config(b.path()), RunOptions::default()).unwrap();
    let fa = files(a.path());
    assert_eq!(fa, files(b.path()));

    let golden = fixture_dir().join("out");
    if std::env::var_os("FORGE_BLESS").is_some() {
        let _ = std::fs::remove_dir_all(&golden);
        for (rel, bytes) in &fa {
            let p = golden.join(rel);
            std::fs::create_dir_all(p.parent().unwrap()).unwrap();
            std::fs::write(p, bytes).unwrap();
        }
    }
    let want = files(&golden);
    assert_eq!(fa.keys().collect::<Vec<_>>(), want.keys().collect::<Vec<_>>());
    for (rel, bytes) in &fa {
        assert!(bytes == &want[rel], "{rel} differs from the golden copy");
    }
}

#[test]
fn rerun_recomputes_only_missing_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let first = cmd_run(&cfg, RunOptions::default()).unwrap();
    assert_eq!(first.ran(), Stage::ALL.to_vec());
    let before = files(dir.path());

    let again = cmd_run(&cfg, RunOptions::default()).unwrap();
    assert!(again.ran().is_empty());

    std::fs::remove_file(dir.path().join(pipeline::STATS_JSON)).unwrap();
    let resumed = cmd_run(&cfg, RunOptions::default()).unwrap();
    assert_eq!(resumed.ran(), vec![Stage::Stats]);
    assert_eq!(files(dir.path()), before);

    std::fs::remove_file(dir.path().join(pipeline::VERDICTS_FILE)).unwrap();
    let resumed = cmd_run(&cfg, RunOptions::default()).unwrap();
    assert_eq!(resumed.ran(), vec![Stage::Filter, Stage::Assemble, Stage::Stats]);
    assert_eq!(files(dir.path()), before);
}

#[test]
fn missing_kb_fails_before_any_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut cfg = config(&out);
    cfg.paths.kb = Some(dir.path().join("missing.jsonl"));
    let err = cmd_run(&cfg, RunOptions::default()).unwrap_err();
    assert!(err.to_string().contains("knowledge base"), "{err}");
    assert!(!out.exists());
}

#[test]
fn stage_errors_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("tasks.jsonl");
    std::fs::write(&bad, "{\"mention_id\": \"m1\"}\n").unwrap();
    let mut cfg = config(&dir.path().join("out"));
    cfg.paths.tasks = Some(bad);
    let err = cmd_run(&cfg, RunOptions::default()).unwrap_err();
    assert!(err.to_string().starts_with("stage references:"), "{err}");
}

#[test]
fn full_image_corrections_land_in_last_bin() {
    let dir = tempfile::tempdir().unwrap();
    cmd_run(&config(dir.path()), RunOptions::default()).unwrap();
    let stats: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(pipeline::STATS_JSON)).unwrap()).unwrap();
    let counts: Vec<u64> = stats["area_ratio_histogram"]["counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    let full = expected()["full_image"].as_array().unwrap().len() as u64;
    assert!(full > 0);
    assert!(counts[counts.len() - 1] >= full);
    assert_eq!(counts.iter().sum::<u64>(), stats["splits"]["totals"]["total_examples"].as_u64().unwrap());
}
