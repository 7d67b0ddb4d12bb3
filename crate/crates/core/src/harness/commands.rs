//! The four CLI commands. Each takes a validated config and an output
//! directory and writes its files atomically plus a JSON-lines manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::env::{make_population_with, Population};
use crate::meta::Learner;

use super::config::{split_population, ExperimentConfig};
use super::experiment::{evaluate_learner, train_learner, EvalCell, Trained};
use super::output::{csv_bytes, read_to_string, sha256_hex, Manifest};
use super::schema;
use super::study::run_divergence_study;
use super::HarnessError;

pub const POPULATION_FILE: &str = "population.json";
pub const CHECKPOINT_VERSION: u32 = 1;

/// What a command wrote, plus a human-readable summary for stdout.
#[derive(Debug, Clone)]
pub struct CommandOutput {
    pub summary: String,
    pub files: Vec<PathBuf>,
    pub manifest: PathBuf,
}

pub fn population_path(out: &Path) -> PathBuf {
    out.join(POPULATION_FILE)
}

pub fn study_dir(out: &Path) -> PathBuf {
    out.join("divergence")
}

pub fn train_dir(out: &Path, learner: Learner) -> PathBuf {
    out.join("train").join(learner.name())
}

pub fn checkpoint_path(out: &Path, learner: Learner) -> PathBuf {
    train_dir(out, learner).join("checkpoint.json")
}

pub fn eval_dir(out: &Path) -> PathBuf {
    out.join("eval")
}

/// Manifest opened with the resolved config and every seed in effect.
fn open_manifest(out: &Path, command: &str, cfg: &ExperimentConfig) -> Manifest {
    let mut m = Manifest::new(out, command, cfg);
    m.push(
        "seeds",
        json!({
            "run_seed": cfg.seed,
            "init_seed": cfg.init_seed,
            "population_seed": cfg.population_seed(),
            "evaluation_seeds": cfg.evaluation.seeds,
        }),
    );
    m
}

fn finish(manifest: Manifest, path: PathBuf, files: Vec<PathBuf>, summary: String) -> Result<CommandOutput, HarnessError> {
    manifest.save(&path)?;
    Ok(CommandOutput {
        summary,
        files,
        manifest: path,
    })
}

pub fn gen_population(cfg: &ExperimentConfig, out: &Path) -> Result<CommandOutput, HarnessError> {
    cfg.validate()?;
    let p = &cfg.population;
    let pop = make_population_with(
        p.num_latent,
        p.variants_per_latent,
        p.variance_magnitude,
        p.pure_first_variant,
        cfg.population_seed(),
    )?;
    let path = population_path(out);
    let mut manifest = open_manifest(out, "gen-population", cfg);
    manifest.write_output(&path, pop.to_json().as_bytes())?;

    let mut summary = format!(
        "{} entity types ({} latent groups x {} variants), seed {}\n",
        pop.entities.len(),
        pop.num_latent,
        pop.variants_per_latent,
        pop.seed
    );
    let _ = writeln!(summary, "{:>4} {:>5}  {:<9} offsets (left, right, down, up)", "id", "group", "remap");
    for e in &pop.entities {
        let remap: String = e.remap.iter().map(|r| r.to_string()).collect();
        let offs: Vec<String> = e.offsets.iter().map(|o| format!("{o:+.3}")).collect();
        let _ = writeln!(summary, "{:>4} {:>5}  {:<9} {}", e.id, e.latent_group, remap, offs.join(" "));
    }
    finish(manifest, out.join("gen-population.manifest.jsonl"), vec![path], summary)
}

/// Read the population written by `gen-population`.
pub fn load_population(out: &Path) -> Result<(Population, Vec<u8>), HarnessError> {
    let path = population_path(out);
    if !path.is_file() {
        return Err(HarnessError::NotFound {
            what: "population file (run gen-population first)".into(),
            path,
        });
    }
    let bytes = std::fs::read(&path).map_err(super::output::io_err(&path))?;
    let text = String::from_utf8_lossy(&bytes);
    let pop = Population::from_json(&text).map_err(|e| HarnessError::Malformed {
        what: "population".into(),
        path: path.clone(),
        message: e.to_string(),
    })?;
    Ok((pop, bytes))
}

fn fmt_f(x: f64) -> String {
    format!("{x}")
}

pub fn divergence_study(cfg: &ExperimentConfig, out: &Path) -> Result<CommandOutput, HarnessError> {
    cfg.validate()?;
    let (pop, pop_bytes) = load_population(out)?;
    let dir = study_dir(out);
    let mut manifest = open_manifest(out, "divergence-study", cfg);
    manifest.input("population", &population_path(out), &pop_bytes);

    let outcome = run_divergence_study(&pop.entities, cfg, cfg.seed)?;
    let mut files = Vec::new();
    let mut summary_rows = Vec::new();
    let mut summary = String::from("update  intra     inter     ratio   ARI\n");
    for c in &outcome.checkpoints {
        let dpath = dir.join(format!("distances_update_{:03}.csv", c.update));
        manifest.write_output(&dpath, c.distances.to_csv_string().as_bytes())?;
        let mut abuf = Vec::new();
        c.assignment.write_csv(&mut abuf).expect("in-memory csv");
        let apath = dir.join(format!("assignment_update_{:03}.csv", c.update));
        manifest.write_output(&apath, &abuf)?;
        files.extend([dpath, apath]);

        let medoid_ids: Vec<usize> = c.assignment.medoid_indices.iter().map(|&i| pop.entities[i].id).collect();
        manifest.push(
            "checkpoint",
            json!({
                "update": c.update,
                "intra_mean": c.intra_mean,
                "inter_mean": c.inter_mean,
                "adjusted_rand_index": c.ari,
                "kmedoids_cost": c.assignment.cost,
                "medoid_entity_ids": medoid_ids,
            }),
        );
        summary_rows.push(vec![
            c.update.to_string(),
            fmt_f(c.intra_mean),
            fmt_f(c.inter_mean),
            fmt_f(c.ari),
            fmt_f(c.assignment.cost),
        ]);
        let _ = writeln!(
            summary,
            "{:>6}  {:<8.4}  {:<8.4}  {:<6.3}  {:.3}",
            c.update,
            c.intra_mean,
            c.inter_mean,
            c.intra_mean / c.inter_mean,
            c.ari
        );
    }
    let spath = dir.join("summary.csv");
    let header: Vec<&str> = schema::STUDY_SUMMARY.columns.iter().map(|c| c.0).collect();
    manifest.write_output(&spath, &csv_bytes(&header, summary_rows))?;
    files.push(spath);
    finish(manifest, dir.join("manifest.jsonl"), files, summary)
}

/// On-disk form of a trained learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerCheckpoint {
    pub version: u32,
    pub learner: Learner,
    pub population_sha256: String,
    /// Training episodes that touched query entities.
    pub query_training_episodes: usize,
    pub trained: Trained,
}

pub fn train(cfg: &ExperimentConfig, out: &Path, learner: Learner) -> Result<CommandOutput, HarnessError> {
    cfg.validate()?;
    let (pop, pop_bytes) = load_population(out)?;
    let split = split_population(&pop, cfg.evaluation.split, cfg.evaluation.query_count)?;
    let dir = train_dir(out, learner);
    let mut manifest = open_manifest(out, "train", cfg);
    manifest.push("learner", json!({ "learner": learner }));
    manifest.input("population", &population_path(out), &pop_bytes);
    manifest.push(
        "split",
        json!({
            "support_ids": split.support.iter().map(|e| e.id).collect::<Vec<_>>(),
            "query_ids": split.query.iter().map(|e| e.id).collect::<Vec<_>>(),
        }),
    );

    let result = train_learner(learner, &split, cfg, cfg.seed)?;
    for it in &result.iterations {
        manifest.push("iteration", serde_json::to_value(it).expect("record serializes"));
    }
    for r in &result.rounds {
        manifest.push("recluster", serde_json::to_value(r).expect("record serializes"));
    }
    let ckpt = LearnerCheckpoint {
        version: CHECKPOINT_VERSION,
        learner,
        population_sha256: sha256_hex(&pop_bytes),
        query_training_episodes: result.query_episodes,
        trained: result.trained,
    };
    let path = checkpoint_path(out, learner);
    let mut text = serde_json::to_string(&ckpt).expect("checkpoint serializes");
    text.push('\n');
    manifest.write_output(&path, text.as_bytes())?;

    let summary = format!(
        "trained {learner} on {} support entities ({} re-clustering rounds); checkpoint at {}\n",
        split.support.len(),
        result.rounds.len(),
        path.display()
    );
    finish(manifest, dir.join("manifest.jsonl"), vec![path], summary)
}

pub fn load_checkpoint(out: &Path, learner: Learner) -> Result<LearnerCheckpoint, HarnessError> {
    let path = checkpoint_path(out, learner);
    if !path.is_file() {
        return Err(HarnessError::MissingCheckpoint {
            learner: learner.name().into(),
            path,
        });
    }
    let text = read_to_string(&path)?;
    let malformed = |message: String| HarnessError::Malformed {
        what: format!("{learner} checkpoint"),
        path: path.clone(),
        message,
    };
    let ckpt: LearnerCheckpoint = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(malformed(format!("unsupported version {}", ckpt.version)));
    }
    if ckpt.learner != learner {
        return Err(malformed(format!("file holds learner {}", ckpt.learner)));
    }
    Ok(ckpt)
}

fn curve_rows(cells: &[EvalCell]) -> Vec<Vec<String>> {
    cells
        .iter()
        .flat_map(|c| {
            c.curve.points.iter().map(move |p| {
                vec![
                    c.learner.name().to_string(),
                    c.query_id.to_string(),
                    c.seed.to_string(),
                    p.update.to_string(),
                    fmt_f(p.mean_return),
                    fmt_f(p.std_return),
                    fmt_f(p.goal_rate),
                ]
            })
        })
        .collect()
}

fn end_rows(cells: &[EvalCell]) -> Vec<Vec<String>> {
    cells
        .iter()
        .flat_map(|c| {
            c.curve.end_positions.iter().map(move |e| {
                vec![
                    c.learner.name().to_string(),
                    c.query_id.to_string(),
                    c.seed.to_string(),
                    e.update.to_string(),
                    e.episode.to_string(),
                    fmt_f(e.position.x),
                    fmt_f(e.position.y),
                ]
            })
        })
        .collect()
}

fn bandit_rows(cells: &[EvalCell]) -> Vec<Vec<String>> {
    cells
        .iter()
        .filter_map(|c| c.bandit.as_ref().map(|b| (c, b)))
        .flat_map(|(c, b)| {
            b.pulls.iter().enumerate().map(move |(i, p)| {
                vec![
                    c.learner.name().to_string(),
                    c.query_id.to_string(),
                    c.seed.to_string(),
                    i.to_string(),
                    p.medoid_index.to_string(),
                    fmt_f(p.episode_return),
                    u8::from(p.medoid_index == b.chosen_index).to_string(),
                ]
            })
        })
        .collect()
}

fn header(s: &schema::Schema) -> Vec<&'static str> {
    s.columns.iter().map(|c| c.0).collect()
}

pub fn evaluate(cfg: &ExperimentConfig, out: &Path) -> Result<CommandOutput, HarnessError> {
    cfg.validate()?;
    let (pop, pop_bytes) = load_population(out)?;
    let pop_hash = sha256_hex(&pop_bytes);
    let split = split_population(&pop, cfg.evaluation.split, cfg.evaluation.query_count)?;
    let dir = eval_dir(out);
    let mut manifest = open_manifest(out, "evaluate", cfg);
    manifest.input("population", &population_path(out), &pop_bytes);

    let checkpoints = cfg
        .evaluation
        .learners
        .iter()
        .map(|&l| {
            let ckpt = load_checkpoint(out, l)?;
            if ckpt.population_sha256 != pop_hash {
                return Err(HarnessError::Malformed {
                    what: format!("{l} checkpoint"),
                    path: checkpoint_path(out, l),
                    message: "trained on a different population file".into(),
                });
            }
            Ok(ckpt)
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;

    let budget = cfg.train.batch_size;
    let mut cells = Vec::new();
    let mut summary = String::from("learner             update0    final\n");
    for ckpt in &checkpoints {
        let bytes = std::fs::read(checkpoint_path(out, ckpt.learner))
            .map_err(super::output::io_err(&checkpoint_path(out, ckpt.learner)))?;
        manifest.input(&format!("checkpoint:{}", ckpt.learner), &checkpoint_path(out, ckpt.learner), &bytes);
        let learner_cells = evaluate_learner(ckpt.learner, &ckpt.trained, &split.query, cfg, &cfg.evaluation.seeds)?;
        for c in &learner_cells {
            debug_assert!(c.pre_curve_episodes <= budget);
            let last = c.curve.points.last().expect("curve has update 0");
            manifest.push(
                "cell",
                json!({
                    "learner": c.learner,
                    "query_id": c.query_id,
                    "seed": c.seed,
                    "pre_curve_episodes": c.pre_curve_episodes,
                    "bandit_choice": c.bandit.as_ref().map(|b| b.chosen_index),
                    "initial_mean_return": c.curve.points[0].mean_return,
                    "final_mean_return": last.mean_return,
                    "episodes": c.curve.episodes,
                }),
            );
        }
        let n = learner_cells.len() as f64;
        let first = learner_cells.iter().map(|c| c.curve.points[0].mean_return).sum::<f64>() / n;
        let fin = learner_cells
            .iter()
            .map(|c| c.curve.points.last().map_or(0.0, |p| p.mean_return))
            .sum::<f64>()
            / n;
        let _ = writeln!(summary, "{:<18} {:>9.2} {:>9.2}", ckpt.learner.name(), first, fin);
        cells.extend(learner_cells);
    }

    let curves = dir.join("reward_curves.csv");
    let ends = dir.join("end_positions.csv");
    let bandit = dir.join("bandit_log.csv");
    manifest.write_output(&curves, &csv_bytes(&header(&schema::REWARD_CURVES), curve_rows(&cells)))?;
    manifest.write_output(&ends, &csv_bytes(&header(&schema::END_POSITIONS), end_rows(&cells)))?;
    manifest.write_output(&bandit, &csv_bytes(&header(&schema::BANDIT_LOG), bandit_rows(&cells)))?;
    finish(manifest, dir.join("manifest.jsonl"), vec![curves, ends, bandit], summary)
}
