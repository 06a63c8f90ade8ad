//! Synthetic pick-and-place scenes with CLEVR-style assets: scene and
//! camera randomization, analytic grasps, rendering, augmentation,
//! instruction text, cropping and dataset writing.

mod assets;
mod augment;
mod colormap;
mod crop;
mod dataset;
mod render;
mod scene;
mod text;
mod viridis;

use thiserror::Error;

use crate::codec::CodecError;
use crate::geometry::GeometryError;

pub use assets::{AssetSpec, Color, Shape, Size};
pub use augment::{
    adjust_brightness_contrast, jitter_brightness_contrast, randomize_background, BackgroundPool, DEFAULT_BACKGROUND_P,
    DEFAULT_JITTER,
};
pub use colormap::{depth_to_rgb, viridis, viridis_u8};
pub use crop::{crop_transform, crop_window, resolve_center, warp, CenterMode, CropMap, CropSize, MODEL_RESOLUTION};
pub use dataset::{
    generate_record, read_records, validate_record, write_dataset, write_records_jsonl, DatasetCodecs, DatasetConfig,
    DatasetRecord, FrameTokens, Manifest, MANIFEST_FILE, RECORDS_FILE, SCHEMA_VERSION,
};
pub use render::{
    depth_to_mm, first_hit, render, render_scene, DepthImage, DepthImageMm, RenderOutput, BACKGROUND_RGB, FAR_PLANE,
};
pub use scene::{
    compute_trajectory, grasp_yaw_deg, is_visible, sample_scene, scene_rng, top_down, CameraBand, Difficulty,
    PlacedObject, SceneConfig, SceneSpec, TaskRef, RELEASE_CLEARANCE,
};
pub use text::{instruction_text, parse_asset_names, validate_templates, DEFAULT_TEMPLATES};

#[derive(Debug, Error)]
pub enum SceneGenError {
    #[error("scene {scene_id}: no valid placement after {attempts} attempts")]
    PlacementFailure { scene_id: u64, attempts: usize },
    #[error("unknown object name {0:?}, expected \"<size> <color> <shape>\"")]
    UnknownAsset(String),
    #[error("background pool is empty")]
    EmptyPool,
    #[error("crop of size {size} at ({}, {}) does not intersect the {width}x{height} image", center[0], center[1])]
    DegenerateCrop {
        center: [f64; 2],
        size: u32,
        width: u32,
        height: u32,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("record for scene {scene_id} is inconsistent: {reason}")]
    Inconsistent { scene_id: u64, reason: String },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
