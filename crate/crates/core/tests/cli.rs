//! End-to-end runs of the `caml` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use caml::harness::schema::{self, validate, validate_distance_matrix};
use serde_json::Value;

const SMALL: &str = r#"
seed = 5
layout = [2, 16, 4]
[population]
num_latent = 4
variants_per_latent = 2
[train]
batch_size = 6
[divergence]
m_samples = 30
[study]
updates = 20
snapshot_every = 10
k = 4
[learners]
iterations = 12
[learners.caml]
n = 4
k = 2
[evaluation]
query_count = 1
num_updates = 5
seeds = [0, 1]
"#;

const LEARNERS: [&str; 6] = ["caml", "reptile", "joint", "pretrain-matched", "pretrain-unmatched", "random"];

fn caml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_caml")).args(args).output().unwrap()
}

fn run_ok(args: &[&str]) -> String {
    let out = caml(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn setup(dir: &Path) -> (String, String) {
    let cfg = dir.join("config.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = dir.join("out");
    (cfg.to_string_lossy().into_owned(), out.to_string_lossy().into_owned())
}

fn manifest(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn of_type<'a>(lines: &'a [Value], kind: &str) -> Vec<&'a Value> {
    lines.iter().filter(|l| l["type"] == kind).collect()
}

fn full_run(dir: &Path) -> PathBuf {
    let (cfg, out) = setup(dir);
    run_ok(&["gen-population", "--config", &cfg, "--out", &out]);
    run_ok(&["divergence-study", "--config", &cfg, "--out", &out]);
    for l in LEARNERS {
        run_ok(&["train", "--config", &cfg, "--out", &out, "--learner", l]);
    }
    run_ok(&["evaluate", "--config", &cfg, "--out", &out]);
    PathBuf::from(out)
}

#[test]
fn default_population_has_24_types_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let stdout = run_ok(&["gen-population", "--seed", "3", "--out", a.to_str().unwrap()]);
    run_ok(&["gen-population", "--seed", "3", "--out", b.to_str().unwrap()]);
    assert!(stdout.starts_with("24 entity types"));
    let text = std::fs::read_to_string(a.join("population.json")).unwrap();
    let pop = caml::env::Population::from_json(&text).unwrap();
    assert_eq!(pop.entities.len(), 24);
    assert_eq!(text, std::fs::read_to_string(b.join("population.json")).unwrap());
}

#[test]
fn invalid_population_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[population]\nnum_latent = 25\n").unwrap();
    let out = dir.path().join("out");
    let res = caml(&["gen-population", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn usage_and_runtime_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = setup(dir.path());

    let res = caml(&["divergence-study", "--config", &cfg, "--out", &out]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("population.json"));

    run_ok(&["gen-population", "--config", &cfg, "--out", &out]);
    let res = caml(&["train", "--config", &cfg, "--out", &out, "--learner", "maml"]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    for l in LEARNERS {
        assert!(err.contains(l), "{err}");
    }

    let res = caml(&["evaluate", "--config", &cfg, "--out", &out]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("'caml'"));

    assert_eq!(caml(&["train", "--out", &out]).status.code(), Some(2));
}

#[test]
fn random_learner_touches_no_environment() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = setup(dir.path());
    run_ok(&["gen-population", "--config", &cfg, "--out", &out]);
    run_ok(&["train", "--config", &cfg, "--out", &out, "--learner", "random"]);
    let out = Path::new(&out);
    let lines = manifest(&out.join("train/random/manifest.jsonl"));
    assert!(of_type(&lines, "iteration").is_empty());
    assert!(of_type(&lines, "recluster").is_empty());
    let ckpt: Value = serde_json::from_str(&std::fs::read_to_string(out.join("train/random/checkpoint.json")).unwrap()).unwrap();
    assert_eq!(ckpt["trained"]["kind"], "single");
    assert_eq!(ckpt["query_training_episodes"], 0);
}

#[test]
fn full_pipeline_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = full_run(dir.path());

    // divergence study
    let study = out.join("divergence");
    for u in [10, 20] {
        let d = std::fs::read_to_string(study.join(format!("distances_update_{u:03}.csv"))).unwrap();
        assert_eq!(validate_distance_matrix(&d).unwrap(), 8);
        let a = std::fs::read_to_string(study.join(format!("assignment_update_{u:03}.csv"))).unwrap();
        assert_eq!(validate(&a, &schema::ASSIGNMENT).unwrap(), 8);
    }
    let summary = std::fs::read_to_string(study.join("summary.csv")).unwrap();
    assert_eq!(validate(&summary, &schema::STUDY_SUMMARY).unwrap(), 2);

    // every manifest lists its outputs with matching hashes
    let mut manifests = vec![out.join("gen-population.manifest.jsonl"), study.join("manifest.jsonl"), out.join("eval/manifest.jsonl")];
    manifests.extend(LEARNERS.iter().map(|l| out.join(format!("train/{l}/manifest.jsonl"))));
    let mut pop_hashes = Vec::new();
    for m in &manifests {
        let lines = manifest(m);
        assert_eq!(lines[0]["type"], "config");
        assert!(lines[0]["tool_version"].is_string());
        assert_eq!(lines[1]["type"], "seeds");
        let outputs = of_type(&lines, "output");
        assert!(!outputs.is_empty());
        for o in outputs {
            let bytes = std::fs::read(out.join(o["path"].as_str().unwrap())).unwrap();
            assert_eq!(o["sha256"], caml::harness::output::sha256_hex(&bytes));
        }
        for i in of_type(&lines, "input") {
            if i["role"] == "population" {
                pop_hashes.push(i["sha256"].clone());
            }
        }
    }
    assert!(pop_hashes.len() > 2 && pop_hashes.iter().all(|h| *h == pop_hashes[0]));

    let caml_lines = manifest(&out.join("train/caml/manifest.jsonl"));
    assert!(!of_type(&caml_lines, "recluster").is_empty());
    assert_eq!(of_type(&caml_lines, "iteration").len(), 12);

    // evaluation
    let curves = std::fs::read_to_string(out.join("eval/reward_curves.csv")).unwrap();
    assert_eq!(validate(&curves, &schema::REWARD_CURVES).unwrap(), 6 * 2 * 6);
    let ends = std::fs::read_to_string(out.join("eval/end_positions.csv")).unwrap();
    assert_eq!(validate(&ends, &schema::END_POSITIONS).unwrap(), 6 * 2 * 6 * 6);
    let bandit = std::fs::read_to_string(out.join("eval/bandit_log.csv")).unwrap();
    assert_eq!(validate(&bandit, &schema::BANDIT_LOG).unwrap(), 2 * 6);

    let mut rows = csv::Reader::from_reader(curves.as_bytes());
    let mut per_cell = std::collections::BTreeMap::new();
    for r in rows.records() {
        let r = r.unwrap();
        *per_cell.entry((r[0].to_string(), r[1].to_string(), r[2].to_string())).or_insert(0) += 1;
    }
    assert!(per_cell.values().all(|&c| c == 6));

    let eval_lines = manifest(&out.join("eval/manifest.jsonl"));
    for cell in of_type(&eval_lines, "cell") {
        let expected = if cell["learner"] == "caml" { 6 } else { 0 };
        assert_eq!(cell["pre_curve_episodes"], expected);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (oa, ob) = (full_run(a.path()), full_run(b.path()));
    for rel in [
        "population.json",
        "divergence/distances_update_020.csv",
        "divergence/assignment_update_020.csv",
        "divergence/manifest.jsonl",
        "train/caml/checkpoint.json",
        "train/caml/manifest.jsonl",
        "eval/reward_curves.csv",
        "eval/end_positions.csv",
        "eval/bandit_log.csv",
        "eval/manifest.jsonl",
    ] {
        assert_eq!(std::fs::read(oa.join(rel)).unwrap(), std::fs::read(ob.join(rel)).unwrap(), "{rel}");
    }
}

#[test]
fn default_study_emits_four_checkpoints_with_group_structure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = out.to_str().unwrap();
    run_ok(&["gen-population", "--out", o]);
    run_ok(&["divergence-study", "--out", o]);
    let pop = caml::env::Population::from_json(&std::fs::read_to_string(out.join("population.json")).unwrap()).unwrap();
    let group = |id: usize| pop.entities.iter().find(|e| e.id == id).unwrap().latent_group;
    for u in [10, 20, 30, 40] {
        assert!(out.join(format!("divergence/distances_update_{u:03}.csv")).is_file());
    }
    assert!(!out.join("divergence/distances_update_050.csv").exists());

    let text = std::fs::read_to_string(out.join("divergence/distances_update_040.csv")).unwrap();
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let ids: Vec<usize> = r.headers().unwrap().iter().skip(1).map(|h| h.parse().unwrap()).collect();
    let (mut intra, mut inter) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.unwrap();
        let i: usize = rec[0].parse().unwrap();
        for (j, v) in ids.iter().zip(rec.iter().skip(1)) {
            if i < *j {
                let v: f64 = v.parse().unwrap();
                if group(i) == group(*j) { intra.push(v) } else { inter.push(v) }
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&intra) / mean(&inter) < 1.0);
}
