//! Photometric jitter and background randomization.

use std::fs;
use std::path::Path;

use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::Rng;

use super::SceneGenError;

/// Default probability of replacing the background.
pub const DEFAULT_BACKGROUND_P: f64 = 0.2;
/// Default relative amplitude of brightness and contrast jitter.
pub const DEFAULT_JITTER: f64 = 0.2;

/// `x' = clamp(((x − 127.5)·contrast + 127.5)·brightness)` per channel.
pub fn adjust_brightness_contrast(img: &mut RgbImage, brightness: f64, contrast: f64) {
    for p in img.pixels_mut() {
        for c in p.0.iter_mut() {
            let v = ((*c as f64 - 127.5) * contrast + 127.5) * brightness;
            *c = v.round().clamp(0.0, 255.0) as u8;
        }
    }
}

/// Draws brightness and contrast factors uniformly from `[1−a, 1+a]` and
/// applies them. Returns the factors.
pub fn jitter_brightness_contrast<R: Rng>(img: &mut RgbImage, amplitude: f64, rng: &mut R) -> (f64, f64) {
    let (b, c) = if amplitude > 0.0 {
        (
            rng.gen_range(1.0 - amplitude..1.0 + amplitude),
            rng.gen_range(1.0 - amplitude..1.0 + amplitude),
        )
    } else {
        (1.0, 1.0)
    };
    adjust_brightness_contrast(img, b, c);
    (b, c)
}

/// Background images, kept in a fixed order for reproducibility.
#[derive(Debug, Clone, Default)]
pub struct BackgroundPool {
    images: Vec<RgbImage>,
}

impl BackgroundPool {
    pub fn new(images: Vec<RgbImage>) -> Self {
        Self { images }
    }

    /// Loads every decodable image in `dir`, sorted by file name. Files the
    /// image layer cannot decode are skipped.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, SceneGenError> {
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        let images = paths
            .iter()
            .filter_map(|p| image::open(p).ok().map(|i| i.to_rgb8()))
            .collect();
        Ok(Self { images })
    }

    /// Pre-resizes every image to `width × height`.
    pub fn resized(&self, width: u32, height: u32) -> Self {
        Self {
            images: self.images.iter().map(|i| fit(i, width, height)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[RgbImage] {
        &self.images
    }
}

fn fit(img: &RgbImage, width: u32, height: u32) -> RgbImage {
    if img.dimensions() == (width, height) {
        img.clone()
    } else {
        imageops::resize(img, width, height, FilterType::Triangle)
    }
}

/// With probability `p`, replaces every pixel outside `mask` by the matching
/// pixel of a pool image (resized to the frame). Pixels inside the mask are
/// never touched. Returns whether a replacement happened.
pub fn randomize_background<R: Rng>(
    rgb: &mut RgbImage,
    mask: &[bool],
    pool: &BackgroundPool,
    p: f64,
    rng: &mut R,
) -> Result<bool, SceneGenError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(SceneGenError::InvalidConfig(format!("probability {p} outside [0, 1]")));
    }
    let (w, h) = rgb.dimensions();
    if mask.len() != (w * h) as usize {
        return Err(SceneGenError::InvalidConfig(format!(
            "mask has {} entries, image has {} pixels",
            mask.len(),
            w * h
        )));
    }
    if p == 0.0 {
        return Ok(false);
    }
    if pool.is_empty() {
        return Err(SceneGenError::EmptyPool);
    }
    if !rng.gen_bool(p) {
        return Ok(false);
    }
    let bg = fit(&pool.images[rng.gen_range(0..pool.len())], w, h);
    for ((px, bgp), &m) in rgb.pixels_mut().zip(bg.pixels()).zip(mask) {
        if !m {
            *px = *bgp;
        }
    }
    Ok(true)
}
