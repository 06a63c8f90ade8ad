use std::path::PathBuf;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use keypose::codec::CodecError;
use keypose::scenegen::{write_dataset, DatasetConfig, SceneGenError};

use super::{ConfigArg, DepthModeArg};
use crate::config::{CmdResult, Failure, Layers};
use crate::io::print_json;

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DifficultyArg {
    Easy,
    Hard,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[command(flatten)]
    config: ConfigArg,
    /// Output dataset directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    num_scenes: Option<u64>,
    /// Base seed (default: $KEYPOSE_SEED, else 0).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    difficulty: Option<DifficultyArg>,
    #[arg(long)]
    n_loc: Option<u32>,
    #[arg(long, value_enum)]
    depth_mode: Option<DepthModeArg>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    /// Write records only, without rendering images.
    #[arg(long)]
    no_images: bool,
    /// Skip the 16-bit depth PNGs.
    #[arg(long)]
    no_depth: bool,
    /// Also write viridis-colored depth images.
    #[arg(long)]
    depth_rgb: bool,
    /// Brightness/contrast jitter amplitude.
    #[arg(long)]
    jitter: Option<f64>,
    /// Probability of replacing the background with a pool image.
    #[arg(long)]
    background_p: Option<f64>,
    /// Directory of background images.
    #[arg(long)]
    background_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    out: Option<PathBuf>,
    #[serde(flatten)]
    dataset: DatasetConfig,
}

pub fn run(a: Args) -> CmdResult<()> {
    let mut l = Layers::from_file(a.config.config.as_deref())?;
    l.set("out", a.out);
    l.set("num_scenes", a.num_scenes);
    l.set("seed", a.seed);
    l.set("difficulty", a.difficulty);
    l.set("n_loc", a.n_loc);
    l.set("depth_mode", a.depth_mode);
    l.set("scene.width", a.width);
    l.set("scene.height", a.height);
    l.set_flag("write_images", a.no_images, false);
    l.set_flag("write_depth", a.no_depth, false);
    l.set_flag("write_depth_rgb", a.depth_rgb, true);
    l.set("jitter", a.jitter);
    l.set("background_p", a.background_p);
    l.set("background_dir", a.background_dir);
    l.seed_from_env("seed")?;
    let cfg: RunConfig = l.build()?;
    let out = cfg.out.ok_or_else(|| Failure::usage("--out is required"))?;
    let manifest = write_dataset(&cfg.dataset, &out).map_err(|e| match e {
        SceneGenError::InvalidConfig(_) | SceneGenError::Codec(CodecError::InvalidConfig(_)) => Failure::usage(e),
        e => Failure::Data(anyhow::Error::new(e).context(format!("generating dataset in {}", out.display()))),
    })?;
    let summary = serde_json::json!({
        "out": out,
        "num_records": manifest.num_records,
        "records_sha256": manifest.records_sha256,
        "config_sha256": manifest.config_sha256,
        "config": manifest.config,
    });
    print_json(&summary)?;
    Ok(())
}
