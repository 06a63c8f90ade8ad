use image::{Rgb, RgbImage};

use super::render::DepthImage;
use super::viridis::VIRIDIS;
use super::SceneGenError;

/// Viridis color at `t ∈ [0, 1]` (clamped), linearly interpolated between
/// adjacent lookup-table entries; components in `[0, 1]`.
pub fn viridis(t: f64) -> [f64; 3] {
    let pos = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) * 255.0 };
    let i = (pos.floor() as usize).min(254);
    let f = pos - i as f64;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    [0, 1, 2].map(|c| a[c] + f * (b[c] - a[c]))
}

pub fn viridis_u8(t: f64) -> [u8; 3] {
    viridis(t).map(|c| (c * 255.0).round() as u8)
}

/// Maps depth (meters) to RGB: normalize over `range`, clamp, then viridis.
pub fn depth_to_rgb(depth: &DepthImage, range: (f64, f64)) -> Result<RgbImage, SceneGenError> {
    let (lo, hi) = range;
    if !(lo < hi && lo.is_finite() && hi.is_finite()) {
        return Err(SceneGenError::InvalidConfig(format!(
            "depth range ({lo}, {hi}) must be finite with min < max"
        )));
    }
    Ok(RgbImage::from_fn(depth.width(), depth.height(), |x, y| {
        let d = depth.get_pixel(x, y)[0] as f64;
        Rgb(viridis_u8((d - lo) / (hi - lo)))
    }))
}
