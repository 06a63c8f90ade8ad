//! Flat-shaded ray-cast renderer for table-top scenes of spheres and boxes.

use image::{ImageBuffer, Luma, RgbImage};
use nalgebra::{Matrix3, Vector3};

use super::assets::Shape;
use super::scene::{PlacedObject, SceneSpec};
use crate::geometry::CameraModel;

/// Depth assigned to background pixels, meters.
pub const FAR_PLANE: f64 = 10.0;
pub const BACKGROUND_RGB: [u8; 3] = [196, 196, 190];

/// Per-pixel camera depth (z in the camera frame) in meters.
pub type DepthImage = ImageBuffer<Luma<f32>, Vec<f32>>;
/// 16-bit depth in millimeters, as stored on disk.
pub type DepthImageMm = ImageBuffer<Luma<u16>, Vec<u16>>;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub rgb: RgbImage,
    pub depth: DepthImage,
    /// True where an object covers the pixel center.
    pub mask: Vec<bool>,
}

/// An object expressed in the camera frame.
struct CamObject {
    center: Vector3<f64>,
    /// Columns: object axes in camera coordinates.
    rot: Matrix3<f64>,
    half: Vector3<f64>,
    sphere: bool,
    color: [u8; 3],
}

impl CamObject {
    fn new(obj: &PlacedObject, camera: &CameraModel) -> Self {
        let ext = camera.extrinsic();
        Self {
            center: camera.world_to_camera(&obj.center()),
            rot: (ext.orientation() * obj.rotation()).to_rotation_matrix().into_inner(),
            half: obj.asset.extents() / 2.0,
            sphere: obj.asset.shape == Shape::Sphere,
            color: obj.asset.color.rgb(),
        }
    }

    /// Ray from the camera origin along `dir` (with `dir.z == 1`, so the hit
    /// parameter equals camera depth). Returns depth and camera-frame normal.
    fn intersect(&self, dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        if self.sphere {
            let r = self.half.x;
            let a = dir.norm_squared();
            let b = dir.dot(&self.center);
            let c = self.center.norm_squared() - r * r;
            let disc = b * b - a * c;
            if disc < 0.0 {
                return None;
            }
            let t = (b - disc.sqrt()) / a;
            if t <= 0.0 {
                return None;
            }
            return Some((t, (t * dir - self.center) / r));
        }
        let o = self.rot.tr_mul(&(-self.center));
        let d = self.rot.tr_mul(dir);
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        let mut axis = 0;
        let mut sign = 1.0;
        for i in 0..3 {
            if d[i].abs() < 1e-15 {
                if o[i].abs() > self.half[i] {
                    return None;
                }
                continue;
            }
            let ta = (-self.half[i] - o[i]) / d[i];
            let tb = (self.half[i] - o[i]) / d[i];
            let (near, far, s) = if ta < tb { (ta, tb, -1.0) } else { (tb, ta, 1.0) };
            if near > t0 {
                t0 = near;
                axis = i;
                sign = s;
            }
            t1 = t1.min(far);
        }
        if t0 > t1 || t0 <= 0.0 {
            return None;
        }
        let mut n = Vector3::zeros();
        n[axis] = sign;
        Some((t0, self.rot * n))
    }
}

fn pixel_dir(camera: &CameraModel, px: f64, py: f64) -> Vector3<f64> {
    Vector3::new((px - camera.cx()) / camera.fx(), (py - camera.cy()) / camera.fy(), 1.0)
}

/// Nearest object hit by the ray through pixel coordinates `(px, py)`:
/// its index and camera depth.
pub fn first_hit(objects: &[PlacedObject], camera: &CameraModel, px: f64, py: f64) -> Option<(usize, f64)> {
    let dir = pixel_dir(camera, px, py);
    objects
        .iter()
        .enumerate()
        .filter_map(|(i, o)| CamObject::new(o, camera).intersect(&dir).map(|(t, _)| (i, t)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// Renders objects with a z-buffer. Pixels are sampled at their centers;
/// background pixels get [`BACKGROUND_RGB`] and depth [`FAR_PLANE`].
pub fn render(objects: &[PlacedObject], camera: &CameraModel) -> RenderOutput {
    let (w, h) = (camera.width(), camera.height());
    let cam_objs: Vec<CamObject> = objects.iter().map(|o| CamObject::new(o, camera)).collect();
    let light = camera
        .extrinsic()
        .orientation()
        .transform_vector(&Vector3::new(0.3, -0.2, 1.0).normalize());
    let mut rgb = RgbImage::from_pixel(w, h, image::Rgb(BACKGROUND_RGB));
    let mut depth = DepthImage::from_pixel(w, h, Luma([FAR_PLANE as f32]));
    let mut mask = vec![false; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let dir = pixel_dir(camera, x as f64 + 0.5, y as f64 + 0.5);
            let mut best: Option<(f64, Vector3<f64>, [u8; 3])> = None;
            for o in &cam_objs {
                if let Some((t, n)) = o.intersect(&dir) {
                    if best.as_ref().is_none_or(|b| t < b.0) {
                        best = Some((t, n, o.color));
                    }
                }
            }
            if let Some((t, n, color)) = best {
                let shade = 0.35 + 0.65 * n.dot(&light).max(0.0);
                let px = color.map(|c| (c as f64 * shade).round().min(255.0) as u8);
                rgb.put_pixel(x, y, image::Rgb(px));
                depth.put_pixel(x, y, Luma([t as f32]));
                mask[(y * w + x) as usize] = true;
            }
        }
    }
    RenderOutput { rgb, depth, mask }
}

pub fn render_scene(scene: &SceneSpec) -> RenderOutput {
    render(&scene.objects, &scene.camera)
}

/// Converts meters to rounded millimeters, saturating at `u16::MAX`.
pub fn depth_to_mm(depth: &DepthImage) -> DepthImageMm {
    DepthImageMm::from_fn(depth.width(), depth.height(), |x, y| {
        let mm = (depth.get_pixel(x, y)[0] as f64 * 1000.0).round();
        Luma([mm.clamp(0.0, u16::MAX as f64) as u16])
    })
}
