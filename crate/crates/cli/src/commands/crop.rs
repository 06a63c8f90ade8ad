use std::path::PathBuf;

use anyhow::Context;
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use keypose::scenegen::{crop_transform, resolve_center, CenterMode, CropSize, SceneGenError, MODEL_RESOLUTION};

use super::ConfigArg;
use crate::config::{parse_point, CmdResult, Failure, Layers};
use crate::io::print_json;

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterArg {
    ImageCenter,
    StartObject,
    Midpoint,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[command(flatten)]
    config: ConfigArg,
    /// Input image.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Output PNG.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    center_mode: Option<CenterArg>,
    /// Start object pixel "x,y".
    #[arg(long, value_parser = parse_point)]
    start: Option<[f64; 2]>,
    /// End object pixel "x,y".
    #[arg(long, value_parser = parse_point)]
    end: Option<[f64; 2]>,
    /// Crop side in pixels, or "full" for max(width, height).
    #[arg(long, value_parser = parse_size)]
    size: Option<CropSize>,
    /// Clip the window to the image instead of zero-padding.
    #[arg(long)]
    valid: bool,
    /// Output side length.
    #[arg(long)]
    resolution: Option<u32>,
    /// Original-image points "x,y" to map into the crop (repeatable).
    #[arg(long = "point", value_parser = parse_point)]
    points: Vec<[f64; 2]>,
}

fn parse_size(s: &str) -> Result<CropSize, String> {
    if s == "full" {
        return Ok(CropSize::Full);
    }
    s.parse()
        .map(CropSize::Pixels)
        .map_err(|_| format!("expected a pixel count or \"full\", got {s:?}"))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    image: Option<PathBuf>,
    out: Option<PathBuf>,
    center_mode: CenterMode,
    start: Option<[f64; 2]>,
    end: Option<[f64; 2]>,
    size: CropSize,
    padded: bool,
    resolution: u32,
    points: Vec<[f64; 2]>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            image: None,
            out: None,
            center_mode: CenterMode::ImageCenter,
            start: None,
            end: None,
            size: CropSize::Full,
            padded: true,
            resolution: MODEL_RESOLUTION,
            points: Vec::new(),
        }
    }
}

pub fn run(a: Args) -> CmdResult<()> {
    let mut l = Layers::from_file(a.config.config.as_deref())?;
    l.set("image", a.image);
    l.set("out", a.out);
    l.set("center_mode", a.center_mode);
    l.set("start", a.start);
    l.set("end", a.end);
    l.set("size", a.size);
    l.set_flag("padded", a.valid, false);
    l.set("resolution", a.resolution);
    if !a.points.is_empty() {
        l.set("points", Some(a.points));
    }
    let cfg: RunConfig = l.build()?;
    let image_path = cfg.image.clone().ok_or_else(|| Failure::usage("--image is required"))?;
    let out = cfg.out.clone().ok_or_else(|| Failure::usage("--out is required"))?;
    let img = image::open(&image_path)
        .with_context(|| format!("cannot read image {}", image_path.display()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let center = resolve_center(cfg.center_mode, w, h, cfg.start, cfg.end).map_err(Failure::usage)?;
    let (crop, map) = crop_transform(&img, center, cfg.size, cfg.padded, cfg.resolution).map_err(|e| match e {
        SceneGenError::InvalidConfig(_) => Failure::usage(e),
        e => Failure::data(e),
    })?;
    crop.save(&out)
        .with_context(|| format!("cannot write {}", out.display()))?;
    let points: Vec<_> = cfg
        .points
        .iter()
        .map(|&[x, y]| {
            serde_json::json!({
                "original": [x, y],
                "crop_px": map.to_crop_px(x, y),
                "crop_norm": map.to_crop_norm(x, y),
                "inside": map.contains(x, y),
            })
        })
        .collect();
    let doc = serde_json::json!({
        "config": cfg,
        "image_size": [w, h],
        "center": center,
        "map": map,
        "points": points,
    });
    print_json(&doc)?;
    Ok(())
}
