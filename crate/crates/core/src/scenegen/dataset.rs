//! Dataset records, generation, self-consistency validation and I/O.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::augment::{jitter_brightness_contrast, randomize_background, BackgroundPool};
use super::colormap::depth_to_rgb;
use super::render::{depth_to_mm, render_scene};
use super::scene::{compute_trajectory, sample_scene, scene_rng, Difficulty, PlacedObject, SceneConfig, TaskRef};
use super::SceneGenError;
use crate::codec::{Codec, CodecConfig, DepthMode, Frame, TokenSequence, TOKENS_PER_KEYPOSE};
use crate::geometry::{relative_angle_deg, CameraModel, Pose6D, Trajectory};

pub const SCHEMA_VERSION: u32 = 1;
pub const RECORDS_FILE: &str = "records.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
const IMAGE_DIR: &str = "images";
/// Augmentation draws start this far into the scene's RNG stream, well past
/// anything scene sampling consumes.
const AUGMENT_WORD_POS: u128 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub num_scenes: u64,
    pub seed: u64,
    pub difficulty: Difficulty,
    pub scene: SceneConfig,
    pub n_loc: u32,
    pub depth_mode: DepthMode,
    /// Render and write RGB images (and depth when `write_depth`).
    pub write_images: bool,
    pub write_depth: bool,
    /// Also write the viridis-colored depth used as model input.
    pub write_depth_rgb: bool,
    pub jitter: f64,
    pub background_p: f64,
    pub background_dir: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            num_scenes: 100,
            seed: 0,
            difficulty: Difficulty::Hard,
            scene: SceneConfig::default(),
            n_loc: 1024,
            depth_mode: DepthMode::SharedLoc,
            write_images: true,
            write_depth: true,
            write_depth_rgb: false,
            jitter: super::augment::DEFAULT_JITTER,
            background_p: super::augment::DEFAULT_BACKGROUND_P,
            background_dir: None,
        }
    }
}

impl DatasetConfig {
    pub fn codec_config(&self, frame: Frame) -> CodecConfig {
        CodecConfig {
            n_loc: self.n_loc,
            frame,
            depth_mode: self.depth_mode,
            depth_range: self.scene.depth_range,
            position_range: self.scene.workspace,
        }
    }

    /// Hex SHA-256 of the config's JSON serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

/// Image- and robot-frame codecs sharing one configuration.
#[derive(Debug, Clone)]
pub struct DatasetCodecs {
    pub image: Codec,
    pub robot: Codec,
}

impl DatasetCodecs {
    pub fn new(cfg: &DatasetConfig) -> Result<Self, SceneGenError> {
        Ok(Self {
            image: Codec::new(cfg.codec_config(Frame::Image))?,
            robot: Codec::new(cfg.codec_config(Frame::Robot))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    /// Path relative to the dataset directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameTokens {
    pub image: TokenSequence,
    pub robot: TokenSequence,
}

/// One line of `records.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub schema: u32,
    pub scene_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rgb: Option<ImageRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<ImageRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_rgb: Option<ImageRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot_state: Option<Pose6D>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Trajectory>,
    /// Image-frame `(u, v, depth, angle_x, angle_y, angle_z)` per keypose.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_coords: Option<[[f64; TOKENS_PER_KEYPOSE]; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<FrameTokens>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot_state_tokens: Option<FrameTokens>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objects: Vec<PlacedObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    pub generator: String,
    pub seed: u64,
    pub num_records: u64,
    pub config_sha256: String,
    pub records_sha256: String,
    pub config: DatasetConfig,
}

fn encode_png(bytes: &[u8], w: u32, h: u32, color: ExtendedColorType) -> Result<Vec<u8>, SceneGenError> {
    let mut out = Vec::new();
    PngEncoder::new_with_quality(&mut out, CompressionType::Fast, FilterType::Sub).write_image(bytes, w, h, color)?;
    Ok(out)
}

fn store(dir: Option<&Path>, name: String, png: Vec<u8>) -> Result<ImageRef, SceneGenError> {
    let rel = format!("{IMAGE_DIR}/{name}");
    if let Some(dir) = dir {
        fs::write(dir.join(&rel), &png)?;
    }
    Ok(ImageRef {
        path: rel,
        sha256: hex::encode(Sha256::digest(&png)),
    })
}

/// Generates one record. Images are rendered when `cfg.write_images` is set
/// and written below `out_dir` when it is given; their hashes are recorded
/// either way.
pub fn generate_record(
    cfg: &DatasetConfig,
    codecs: &DatasetCodecs,
    pool: &BackgroundPool,
    scene_id: u64,
    out_dir: Option<&Path>,
) -> Result<DatasetRecord, SceneGenError> {
    let scene = sample_scene(&cfg.scene, cfg.difficulty, cfg.seed, scene_id)?;
    let traj = compute_trajectory(&scene);
    let cam = &scene.camera;
    let coords = [
        codecs.image.coordinates(traj.grasp(), Some(cam))?,
        codecs.image.coordinates(traj.release(), Some(cam))?,
    ];
    let tokens = FrameTokens {
        image: TokenSequence(
            [
                codecs.image.encode_coordinates(&coords[0])?.0,
                codecs.image.encode_coordinates(&coords[1])?.0,
            ]
            .concat(),
        ),
        robot: codecs.robot.encode_trajectory(&traj, None)?,
    };
    let robot_state_tokens = FrameTokens {
        image: codecs.image.encode_robot_state(&scene.robot_state, Some(cam))?,
        robot: codecs.robot.encode_robot_state(&scene.robot_state, None)?,
    };
    let (mut rgb_ref, mut depth_ref, mut depth_rgb_ref) = (None, None, None);
    if cfg.write_images {
        let out = render_scene(&scene);
        let mut rgb = out.rgb;
        let mut rng: ChaCha8Rng = scene_rng(cfg.seed, scene_id);
        rng.set_word_pos(AUGMENT_WORD_POS);
        jitter_brightness_contrast(&mut rgb, cfg.jitter, &mut rng);
        randomize_background(&mut rgb, &out.mask, pool, cfg.background_p, &mut rng)?;
        let (w, h) = rgb.dimensions();
        let png = encode_png(rgb.as_raw(), w, h, ExtendedColorType::Rgb8)?;
        rgb_ref = Some(store(out_dir, format!("{scene_id:06}_rgb.png"), png)?);
        if cfg.write_depth {
            let mm = depth_to_mm(&out.depth);
            let raw: Vec<u8> = mm.as_raw().iter().flat_map(|v| v.to_be_bytes()).collect();
            let png = encode_png(&raw, w, h, ExtendedColorType::L16)?;
            depth_ref = Some(store(out_dir, format!("{scene_id:06}_depth.png"), png)?);
        }
        if cfg.write_depth_rgb {
            let colored = depth_to_rgb(&out.depth, cfg.scene.depth_range)?;
            let png = encode_png(colored.as_raw(), w, h, ExtendedColorType::Rgb8)?;
            depth_rgb_ref = Some(store(out_dir, format!("{scene_id:06}_depth_rgb.png"), png)?);
        }
    }
    Ok(DatasetRecord {
        schema: SCHEMA_VERSION,
        scene_id,
        difficulty: Some(scene.difficulty),
        rgb: rgb_ref,
        depth: depth_ref,
        depth_rgb: depth_rgb_ref,
        camera: Some(scene.camera),
        robot_state: Some(scene.robot_state),
        instruction: Some(scene.instruction),
        trajectory: Some(traj),
        image_coords: Some(coords),
        tokens: Some(tokens),
        robot_state_tokens: Some(robot_state_tokens),
        task: Some(scene.task),
        objects: scene.objects,
    })
}

/// Largest world-space distance between a point inside the image-frame bin
/// box and the box's center, given the decoded center coordinates.
fn image_position_bound(codec: &Codec, cam: &CameraModel, center: &[f64; TOKENS_PER_KEYPOSE]) -> f64 {
    let q = codec.quantizers();
    let (w, h) = (cam.width() as f64, cam.height() as f64);
    let hx = q[0].error_bound() * w;
    let hy = q[1].error_bound() * h;
    let hd = q[2].error_bound();
    let (px, py, d) = (center[0] * w, center[1] * h, center[2]);
    let bx = ((px - cam.cx()).abs() * hd + hx * d + hx * hd) / cam.fx();
    let by = ((py - cam.cy()).abs() * hd + hy * d + hy * hd) / cam.fy();
    (bx * bx + by * by + hd * hd).sqrt()
}

fn robot_position_bound(codec: &Codec) -> f64 {
    let q = codec.quantizers();
    (0..3).map(|i| q[i].error_bound().powi(2)).sum::<f64>().sqrt()
}

/// Rotation error bound: one half-bin per Euler angle.
fn rotation_bound_deg(codec: &Codec) -> f64 {
    let q = codec.quantizers();
    q[3].error_bound() + q[4].error_bound() + q[5].error_bound()
}

const SLACK: f64 = 1e-9;

fn check_recovery(
    scene_id: u64,
    what: &str,
    truth: &Pose6D,
    decoded: &Pose6D,
    pos_bound: f64,
    rot_bound: f64,
) -> Result<(), SceneGenError> {
    let dp = (truth.position() - decoded.position()).norm();
    let da = relative_angle_deg(truth.orientation(), decoded.orientation());
    if dp > pos_bound * (1.0 + SLACK) + SLACK || da > rot_bound + SLACK {
        return Err(SceneGenError::Inconsistent {
            scene_id,
            reason: format!(
                "{what}: position error {dp:.3e} m (bound {pos_bound:.3e}), rotation error {da:.3e}° (bound {rot_bound:.3e})"
            ),
        });
    }
    Ok(())
}

fn field<'a, T>(scene_id: u64, v: &'a Option<T>, name: &str) -> Result<&'a T, SceneGenError> {
    v.as_ref().ok_or_else(|| SceneGenError::Inconsistent {
        scene_id,
        reason: format!("missing {name}"),
    })
}

/// Self-consistency of a record: stored image coordinates are reproduced
/// exactly by re-projection, stored tokens equal a fresh encoding, and
/// decoding the tokens recovers every world pose within quantization bounds
/// in both frames.
pub fn validate_record(rec: &DatasetRecord, codecs: &DatasetCodecs) -> Result<(), SceneGenError> {
    let id = rec.scene_id;
    let inconsistent = |reason: String| SceneGenError::Inconsistent { scene_id: id, reason };
    let cam = field(id, &rec.camera, "camera")?;
    let traj = field(id, &rec.trajectory, "trajectory")?;
    let coords = field(id, &rec.image_coords, "image_coords")?;
    let tokens = field(id, &rec.tokens, "tokens")?;
    let state = field(id, &rec.robot_state, "robot_state")?;
    let state_tokens = field(id, &rec.robot_state_tokens, "robot_state_tokens")?;

    for (k, pose) in traj.poses().iter().enumerate() {
        if codecs.image.coordinates(pose, Some(cam))? != coords[k] {
            return Err(inconsistent(format!(
                "keypose {k}: re-projection differs from stored coordinates"
            )));
        }
    }
    if codecs.image.encode_trajectory(traj, Some(cam))? != tokens.image {
        return Err(inconsistent("image-frame tokens differ from a fresh encoding".into()));
    }
    if codecs.robot.encode_trajectory(traj, None)? != tokens.robot {
        return Err(inconsistent("robot-frame tokens differ from a fresh encoding".into()));
    }

    let rot = rotation_bound_deg(&codecs.image);
    let decoded = codecs.image.decode_trajectory(&tokens.image.0, Some(cam))?;
    let halves = tokens.image.0.chunks(TOKENS_PER_KEYPOSE);
    for (k, ((t, d), toks)) in traj.poses().iter().zip(decoded.poses()).zip(halves).enumerate() {
        let center = codecs.image.decode_coordinates(toks)?;
        let bound = image_position_bound(&codecs.image, cam, &center);
        check_recovery(id, &format!("image-frame keypose {k}"), t, &d, bound, rot)?;
    }
    let decoded = codecs.robot.decode_trajectory(&tokens.robot.0, None)?;
    let rbound = robot_position_bound(&codecs.robot);
    for (k, (t, d)) in traj.poses().iter().zip(decoded.poses()).enumerate() {
        check_recovery(id, &format!("robot-frame keypose {k}"), t, &d, rbound, rot)?;
    }

    let center = codecs.image.decode_coordinates(&state_tokens.image.0)?;
    let d = codecs.image.decode_robot_state(&state_tokens.image.0, Some(cam))?;
    let bound = image_position_bound(&codecs.image, cam, &center);
    check_recovery(id, "image-frame robot state", state, &d, bound, rot)?;
    let d = codecs.robot.decode_robot_state(&state_tokens.robot.0, None)?;
    check_recovery(id, "robot-frame robot state", state, &d, rbound, rot)?;
    Ok(())
}

pub fn write_records_jsonl(records: &[DatasetRecord], mut out: impl Write) -> Result<(), SceneGenError> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a JSONL file of records; blank lines are skipped.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>, SceneGenError> {
    let path = path.as_ref();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| SceneGenError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

/// Generates `cfg.num_scenes` records into `out_dir` (images under
/// `images/`, `records.jsonl`, `manifest.json`). Scenes are generated in
/// parallel; the output is identical for any thread count.
pub fn write_dataset(cfg: &DatasetConfig, out_dir: impl AsRef<Path>) -> Result<Manifest, SceneGenError> {
    let out_dir = out_dir.as_ref();
    let codecs = DatasetCodecs::new(cfg)?;
    cfg.scene.validate()?;
    let pool = match &cfg.background_dir {
        Some(dir) if cfg.write_images => BackgroundPool::load_dir(dir)?.resized(cfg.scene.width, cfg.scene.height),
        _ => BackgroundPool::default(),
    };
    if cfg.write_images && cfg.background_p > 0.0 && pool.is_empty() && cfg.background_dir.is_some() {
        return Err(SceneGenError::EmptyPool);
    }
    // Without a pool directory, background replacement is disabled.
    let effective = if cfg.background_dir.is_none() {
        DatasetConfig {
            background_p: 0.0,
            ..cfg.clone()
        }
    } else {
        cfg.clone()
    };
    fs::create_dir_all(out_dir.join(IMAGE_DIR))?;
    let records: Vec<DatasetRecord> = (0..cfg.num_scenes)
        .into_par_iter()
        .map(|id| generate_record(&effective, &codecs, &pool, id, Some(out_dir)))
        .collect::<Result<_, _>>()?;
    let mut jsonl = Vec::new();
    write_records_jsonl(&records, &mut jsonl)?;
    fs::write(out_dir.join(RECORDS_FILE), &jsonl)?;
    let manifest = Manifest {
        schema: SCHEMA_VERSION,
        generator: format!("keypose-core {}", env!("CARGO_PKG_VERSION")),
        seed: cfg.seed,
        num_records: records.len() as u64,
        config_sha256: cfg.hash(),
        records_sha256: hex::encode(Sha256::digest(&jsonl)),
        config: cfg.clone(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(out_dir.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}
