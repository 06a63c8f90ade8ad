use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use keypose::geometry::Trajectory;
use keypose::metrics::{evaluate, pr_csv, EpisodeRecord, EvalOptions, Prediction, UnitExchange, MAP_THRESHOLDS_CM};

use super::ConfigArg;
use crate::config::{parse_list, CmdResult, Failure, Layers};
use crate::io::{from_line, print_json, read_jsonl, write_json};

#[derive(Debug, clap::Args)]
pub struct Args {
    #[command(flatten)]
    config: ConfigArg,
    /// JSONL predictions: `episode_id` (string or integer), `trajectory`, `confidence`.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// JSONL ground truth: `episode_id` (or dataset `scene_id`) and `trajectory`.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Directory for `report.json` and `pr.csv`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Comma-separated AP thresholds in cm.
    #[arg(long)]
    thresholds: Option<String>,
    /// Degrees equivalent to 1 cm for the AP thresholds.
    #[arg(long)]
    map_deg_per_cm: Option<f64>,
    /// Degrees equivalent to 1 cm for the L1 summaries and correlation.
    #[arg(long)]
    l1_deg_per_cm: Option<f64>,
    /// k for the best-of-k L1 summary.
    #[arg(long)]
    top_k: Option<usize>,
    /// Count ground-truth episodes without predictions as misses instead of
    /// failing.
    #[arg(long)]
    allow_missing: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    predictions: Option<PathBuf>,
    ground_truth: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    thresholds_cm: Vec<f64>,
    map_deg_per_cm: f64,
    l1_deg_per_cm: f64,
    top_k: usize,
    allow_missing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            predictions: None,
            ground_truth: None,
            out_dir: None,
            thresholds_cm: MAP_THRESHOLDS_CM.to_vec(),
            map_deg_per_cm: UnitExchange::MAP.deg_per_cm,
            l1_deg_per_cm: UnitExchange::L1.deg_per_cm,
            top_k: 3,
            allow_missing: false,
        }
    }
}

/// Episode ids may be written as strings or integers.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum EpisodeId {
    Text(String),
    Number(u64),
}

impl From<EpisodeId> for String {
    fn from(id: EpisodeId) -> Self {
        match id {
            EpisodeId::Text(s) => s,
            EpisodeId::Number(n) => n.to_string(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct PredictionLine {
    episode_id: EpisodeId,
    trajectory: Trajectory,
    confidence: f64,
}

#[derive(Debug, Deserialize)]
struct TruthLine {
    #[serde(default)]
    episode_id: Option<EpisodeId>,
    #[serde(default)]
    scene_id: Option<u64>,
    trajectory: Trajectory,
}

pub fn run(a: Args) -> CmdResult<()> {
    let mut l = Layers::from_file(a.config.config.as_deref())?;
    l.set("predictions", a.predictions);
    l.set("ground_truth", a.ground_truth);
    l.set("out_dir", a.out_dir);
    let thresholds = a
        .thresholds
        .as_deref()
        .map(parse_list)
        .transpose()
        .map_err(Failure::usage)?;
    l.set("thresholds_cm", thresholds);
    l.set("map_deg_per_cm", a.map_deg_per_cm);
    l.set("l1_deg_per_cm", a.l1_deg_per_cm);
    l.set("top_k", a.top_k);
    l.set_flag("allow_missing", a.allow_missing, true);
    let cfg: RunConfig = l.build()?;
    let pred_path = cfg
        .predictions
        .clone()
        .ok_or_else(|| Failure::usage("--predictions is required"))?;
    let gt_path = cfg
        .ground_truth
        .clone()
        .ok_or_else(|| Failure::usage("--ground-truth is required"))?;
    let out_dir = cfg
        .out_dir
        .clone()
        .ok_or_else(|| Failure::usage("--out-dir is required"))?;
    let opts = EvalOptions {
        thresholds_cm: cfg.thresholds_cm.clone(),
        map_units: UnitExchange::new(cfg.map_deg_per_cm).map_err(Failure::usage)?,
        l1_units: UnitExchange::new(cfg.l1_deg_per_cm).map_err(Failure::usage)?,
        top_k: cfg.top_k,
    };
    if opts.thresholds_cm.is_empty() || opts.thresholds_cm.iter().any(|t| t.is_nan() || *t < 0.0) {
        return Err(Failure::usage(
            "thresholds must be a non-empty list of non-negative numbers",
        ));
    }
    if opts.top_k == 0 {
        return Err(Failure::usage("--top-k must be at least 1"));
    }

    let mut truth: BTreeMap<String, Trajectory> = BTreeMap::new();
    for (line, v) in read_jsonl(&gt_path)? {
        let t: TruthLine = from_line(&gt_path, line, v)?;
        let id = t
            .episode_id
            .map(String::from)
            .or(t.scene_id.map(|s| s.to_string()))
            .ok_or_else(|| Failure::data(format!("{}:{line}: missing episode_id", gt_path.display())))?;
        if truth.insert(id.clone(), t.trajectory).is_some() {
            return Err(Failure::data(format!(
                "{}:{line}: duplicate episode {id:?}",
                gt_path.display()
            )));
        }
    }
    let mut preds: BTreeMap<String, Vec<Prediction>> = BTreeMap::new();
    for (line, v) in read_jsonl(&pred_path)? {
        let p: PredictionLine = from_line(&pred_path, line, v)?;
        if !p.confidence.is_finite() {
            return Err(Failure::data(format!(
                "{}:{line}: non-finite confidence",
                pred_path.display()
            )));
        }
        preds.entry(p.episode_id.into()).or_default().push(Prediction {
            trajectory: p.trajectory,
            confidence: p.confidence,
        });
    }

    let unknown: BTreeSet<&String> = preds.keys().filter(|k| !truth.contains_key(*k)).collect();
    let missing: BTreeSet<&String> = truth.keys().filter(|k| !preds.contains_key(*k)).collect();
    if !unknown.is_empty() || (!missing.is_empty() && !cfg.allow_missing) {
        return Err(Failure::data(format!(
            "UnmatchedEpisode: predictions without ground truth {unknown:?}; ground truth without predictions {missing:?}"
        )));
    }
    let episodes: Vec<EpisodeRecord> = truth
        .into_iter()
        .map(|(id, gt)| EpisodeRecord {
            predictions: preds.remove(&id).unwrap_or_default(),
            episode_id: id,
            ground_truth: gt,
        })
        .collect();

    let report = evaluate(&episodes, &opts);
    std::fs::create_dir_all(&out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let doc = serde_json::json!({ "config": cfg, "report": report });
    write_json(&out_dir.join("report.json"), &doc)?;
    std::fs::write(out_dir.join("pr.csv"), pr_csv(&report))
        .with_context(|| format!("cannot write {}", out_dir.join("pr.csv").display()))?;
    print_json(&doc)?;
    Ok(())
}
