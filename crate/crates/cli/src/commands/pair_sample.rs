use std::path::PathBuf;

use anyhow::Context;
use clap::ValueEnum;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use keypose::codec::{Codec, CodecConfig};
use keypose::imitation::{
    assemble_imitation_prompt, assemble_language_prompt, build_task_index, sample_pairs, PromptRecord, RecordLookup,
};
use keypose::scenegen::read_records;

use super::{CodecArgs, ConfigArg};
use crate::config::{CmdResult, Failure, Layers};
use crate::io::{print_json, write_json, JsonlWriter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    /// Demo scene + live scene sharing a task, no language.
    Imitation,
    /// Live scene + instruction.
    Language,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[command(flatten)]
    config: ConfigArg,
    /// Dataset `records.jsonl`.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Output directory for `prompts/*.txt`, `prompts.jsonl` and `config.json`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Number of prompts.
    #[arg(long)]
    k: Option<usize>,
    /// Sampling seed (default: $KEYPOSE_SEED, else 0).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<PromptMode>,
    #[command(flatten)]
    codec: CodecArgs,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    records: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    k: usize,
    seed: u64,
    mode: PromptMode,
    codec: CodecConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            records: None,
            out_dir: None,
            k: 100,
            seed: 0,
            mode: PromptMode::Imitation,
            codec: CodecConfig::default(),
        }
    }
}

pub fn run(a: Args) -> CmdResult<()> {
    let mut l = Layers::from_file(a.config.config.as_deref())?;
    l.set("records", a.records);
    l.set("out_dir", a.out_dir);
    l.set("k", a.k);
    l.set("seed", a.seed);
    l.set("mode", a.mode);
    a.codec.apply(&mut l, "codec");
    l.seed_from_env("seed")?;
    let cfg: RunConfig = l.build()?;
    let records_path = cfg
        .records
        .clone()
        .ok_or_else(|| Failure::usage("--records is required"))?;
    let out_dir = cfg
        .out_dir
        .clone()
        .ok_or_else(|| Failure::usage("--out-dir is required"))?;
    let codec = Codec::new(cfg.codec).map_err(Failure::usage)?;

    let records = read_records(&records_path).map_err(Failure::data)?;
    let prompts: Vec<PromptRecord> = match cfg.mode {
        PromptMode::Imitation => {
            let index = build_task_index(&records).map_err(Failure::data)?;
            let lookup = RecordLookup::new(&records);
            sample_pairs(&index, cfg.k, cfg.seed)
                .map_err(Failure::data)?
                .into_iter()
                .map(|ids| {
                    let prompt = assemble_imitation_prompt(lookup.pair(ids)?, &codec)?;
                    Ok(PromptRecord {
                        demo_scene_id: Some(ids.demo),
                        query_scene_id: ids.query,
                        text: prompt.to_text(),
                        prompt,
                    })
                })
                .collect::<Result<_, keypose::imitation::ImitationError>>()
                .map_err(Failure::data)?
        }
        PromptMode::Language => {
            if cfg.k > records.len() {
                return Err(Failure::data(format!(
                    "requested {} prompts but {} has only {} records",
                    cfg.k,
                    records_path.display(),
                    records.len()
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut picks = rand::seq::index::sample(&mut rng, records.len(), cfg.k).into_vec();
            picks.sort_unstable();
            picks
                .into_iter()
                .map(|i| {
                    let prompt = assemble_language_prompt(&records[i], &codec)?;
                    Ok(PromptRecord {
                        demo_scene_id: None,
                        query_scene_id: records[i].scene_id,
                        text: prompt.to_text(),
                        prompt,
                    })
                })
                .collect::<Result<_, keypose::imitation::ImitationError>>()
                .map_err(Failure::data)?
        }
    };

    let text_dir = out_dir.join("prompts");
    std::fs::create_dir_all(&text_dir).with_context(|| format!("cannot create {}", text_dir.display()))?;
    let mut jsonl = JsonlWriter::create(Some(&out_dir.join("prompts.jsonl")))?;
    for (i, p) in prompts.iter().enumerate() {
        let path = text_dir.join(format!("{i:06}.txt"));
        std::fs::write(&path, &p.text).with_context(|| format!("cannot write {}", path.display()))?;
        jsonl.write(p)?;
    }
    jsonl.finish()?;
    let doc = serde_json::json!({ "config": cfg, "num_prompts": prompts.len() });
    write_json(&out_dir.join("config.json"), &doc)?;
    print_json(&doc)?;
    Ok(())
}
