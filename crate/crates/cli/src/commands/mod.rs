pub mod crop;
pub mod decode;
pub mod encode;
pub mod eval;
pub mod gen_dataset;
pub mod pair_sample;

use std::path::PathBuf;

use clap::ValueEnum;
use serde::Serialize;

use crate::config::{parse_list, Layers};

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameArg {
    Image,
    Robot,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthModeArg {
    SharedLoc,
    SeparateBand,
}

/// Codec flags shared by the commands that tokenize.
#[derive(Debug, Clone, clap::Args)]
pub struct CodecArgs {
    /// Frame in which positions are quantized.
    #[arg(long, value_enum)]
    pub frame: Option<FrameArg>,
    /// Bins per position coordinate (1024, 512, 256 or 128).
    #[arg(long)]
    pub n_loc: Option<u32>,
    /// Depth / z token layout.
    #[arg(long, value_enum)]
    pub depth_mode: Option<DepthModeArg>,
    /// Camera depth range in meters, "min,max".
    #[arg(long, value_parser = parse_range)]
    pub depth_range: Option<(f64, f64)>,
}

impl CodecArgs {
    pub fn apply(&self, layers: &mut Layers, prefix: &str) {
        layers.set(&format!("{prefix}.frame"), self.frame);
        layers.set(&format!("{prefix}.n_loc"), self.n_loc);
        layers.set(&format!("{prefix}.depth_mode"), self.depth_mode);
        layers.set(&format!("{prefix}.depth_range"), self.depth_range);
    }
}

pub fn parse_range(s: &str) -> Result<(f64, f64), String> {
    match parse_list(s)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(format!("expected min,max, got {s:?}")),
    }
}

/// Config file flag shared by every command.
#[derive(Debug, Clone, clap::Args)]
pub struct ConfigArg {
    /// Run configuration file (TOML or JSON); flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}
