//! Square crops around a chosen center, resized to the model resolution,
//! with the exact affine map between original and crop coordinates.
//!
//! Pixel coordinates are continuous with the top-left image corner at 0.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::SceneGenError;

/// Model input resolution.
pub const MODEL_RESOLUTION: u32 = 224;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterMode {
    ImageCenter,
    StartObject,
    /// Midpoint between the start and end objects.
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropSize {
    Pixels(u32),
    /// `max(width, height)` of the image.
    Full,
}

impl CropSize {
    pub fn resolve(self, width: u32, height: u32) -> u32 {
        match self {
            CropSize::Pixels(s) => s,
            CropSize::Full => width.max(height),
        }
    }
}

/// Crop center in original pixel coordinates.
pub fn resolve_center(
    mode: CenterMode,
    width: u32,
    height: u32,
    start: Option<[f64; 2]>,
    end: Option<[f64; 2]>,
) -> Result<[f64; 2], SceneGenError> {
    let missing = |what: &str| SceneGenError::InvalidConfig(format!("center mode {mode:?} needs the {what} point"));
    match mode {
        CenterMode::ImageCenter => Ok([width as f64 / 2.0, height as f64 / 2.0]),
        CenterMode::StartObject => start.ok_or_else(|| missing("start")),
        CenterMode::Midpoint => {
            let s = start.ok_or_else(|| missing("start"))?;
            let e = end.ok_or_else(|| missing("end"))?;
            Ok([(s[0] + e[0]) / 2.0, (s[1] + e[1]) / 2.0])
        }
    }
}

/// Axis-aligned window `[x0, x0 + sx) × [y0, y0 + sy)` of the original image
/// mapped onto an `out_w × out_h` crop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropMap {
    pub x0: f64,
    pub y0: f64,
    pub sx: f64,
    pub sy: f64,
    pub out_w: u32,
    pub out_h: u32,
}

impl CropMap {
    pub fn to_crop_px(&self, x: f64, y: f64) -> [f64; 2] {
        [
            (x - self.x0) * self.out_w as f64 / self.sx,
            (y - self.y0) * self.out_h as f64 / self.sy,
        ]
    }

    pub fn from_crop_px(&self, u: f64, v: f64) -> [f64; 2] {
        [
            self.x0 + u * self.sx / self.out_w as f64,
            self.y0 + v * self.sy / self.out_h as f64,
        ]
    }

    /// Crop-normalized coordinates in `[0, 1]²` for points inside the window.
    pub fn to_crop_norm(&self, x: f64, y: f64) -> [f64; 2] {
        [(x - self.x0) / self.sx, (y - self.y0) / self.sy]
    }

    pub fn from_crop_norm(&self, u: f64, v: f64) -> [f64; 2] {
        [self.x0 + u * self.sx, self.y0 + v * self.sy]
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x0 + self.sx && y >= self.y0 && y < self.y0 + self.sy
    }
}

/// Window of side `size` centered at `center`. In padded mode the window
/// may extend past the image (filled with zeros); in valid mode it is
/// clipped to the image, which changes its aspect ratio.
pub fn crop_window(
    width: u32,
    height: u32,
    center: [f64; 2],
    size: u32,
    padded: bool,
    out: u32,
) -> Result<CropMap, SceneGenError> {
    if size == 0 || out == 0 {
        return Err(SceneGenError::InvalidConfig("crop size must be positive".into()));
    }
    if !(center[0].is_finite() && center[1].is_finite()) {
        return Err(SceneGenError::InvalidConfig("crop center must be finite".into()));
    }
    let s = size as f64;
    let (mut x0, mut y0) = (center[0] - s / 2.0, center[1] - s / 2.0);
    let (mut x1, mut y1) = (x0 + s, y0 + s);
    if !padded {
        x0 = x0.max(0.0);
        y0 = y0.max(0.0);
        x1 = x1.min(width as f64);
        y1 = y1.min(height as f64);
        if x1 <= x0 || y1 <= y0 {
            return Err(SceneGenError::DegenerateCrop {
                center,
                size,
                width,
                height,
            });
        }
    }
    Ok(CropMap {
        x0,
        y0,
        sx: x1 - x0,
        sy: y1 - y0,
        out_w: out,
        out_h: out,
    })
}

/// Resamples `image` through `map` with bilinear interpolation at crop pixel
/// centers. Samples outside the image read as black.
pub fn warp(image: &RgbImage, map: &CropMap) -> RgbImage {
    let (w, h) = (image.width() as i64, image.height() as i64);
    let texel = |x: i64, y: i64| -> [f64; 3] {
        if x < 0 || y < 0 || x >= w || y >= h {
            [0.0; 3]
        } else {
            image.get_pixel(x as u32, y as u32).0.map(|c| c as f64)
        }
    };
    RgbImage::from_fn(map.out_w, map.out_h, |i, j| {
        let [x, y] = map.from_crop_px(i as f64 + 0.5, j as f64 + 0.5);
        // Texel centers sit at half-integers.
        let (fx, fy) = (x - 0.5, y - 0.5);
        let (ix, iy) = (fx.floor() as i64, fy.floor() as i64);
        let (ax, ay) = (fx - ix as f64, fy - iy as f64);
        let mut acc = [0.0; 3];
        for (dx, dy, wgt) in [
            (0, 0, (1.0 - ax) * (1.0 - ay)),
            (1, 0, ax * (1.0 - ay)),
            (0, 1, (1.0 - ax) * ay),
            (1, 1, ax * ay),
        ] {
            let t = texel(ix + dx, iy + dy);
            for c in 0..3 {
                acc[c] += wgt * t[c];
            }
        }
        Rgb(acc.map(|v| v.round().clamp(0.0, 255.0) as u8))
    })
}

/// Crops `image` around `center` and resizes to `out × out`.
pub fn crop_transform(
    image: &RgbImage,
    center: [f64; 2],
    size: CropSize,
    padded: bool,
    out: u32,
) -> Result<(RgbImage, CropMap), SceneGenError> {
    let (w, h) = image.dimensions();
    let map = crop_window(w, h, center, size.resolve(w, h), padded, out)?;
    Ok((warp(image, &map), map))
}
