use nalgebra::{UnitQuaternion, Vector3};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::assets::{AssetSpec, Shape};
use super::render::first_hit;
use super::text::{instruction_text, DEFAULT_TEMPLATES};
use super::SceneGenError;
use crate::codec::PositionBox;
use crate::geometry::{CameraModel, Pose6D, Trajectory};

/// Gap between the release pose's object bottom and the target's top face.
pub const RELEASE_CLEARANCE: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Hard,
}

/// Camera randomization band around a nominal viewpoint looking at the table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraBand {
    /// Half-width of the azimuth/elevation perturbation, degrees.
    pub view_cone_deg: f64,
    pub fov_deg: (f64, f64),
    /// Eye distance from the look-at target, meters.
    pub radius: (f64, f64),
    /// Per-axis jitter of the look-at target, meters.
    pub target_jitter: f64,
}

impl CameraBand {
    pub fn easy() -> Self {
        Self {
            view_cone_deg: 10.0,
            fov_deg: (52.0, 58.0),
            radius: (0.85, 0.95),
            target_jitter: 0.02,
        }
    }

    pub fn hard() -> Self {
        Self {
            view_cone_deg: 35.0,
            fov_deg: (40.0, 70.0),
            radius: (0.6, 1.2),
            target_jitter: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub easy: CameraBand,
    pub hard: CameraBand,
    /// Nominal camera azimuth (about world z, 0 = on the +x side) and elevation, degrees.
    pub camera_azimuth_deg: f64,
    pub camera_elevation_deg: f64,
    pub camera_target: [f64; 3],
    pub table_x: (f64, f64),
    pub table_y: (f64, f64),
    pub num_objects: (usize, usize),
    pub width: u32,
    pub height: u32,
    /// Fraction of the image size kept free at the border for task objects.
    pub visibility_margin: f64,
    /// Keyposes and robot state must be encodable: camera depth inside this
    /// range and positions inside `workspace`.
    pub depth_range: (f64, f64),
    pub workspace: PositionBox,
    pub robot_state_x: (f64, f64),
    pub robot_state_y: (f64, f64),
    pub robot_state_z: (f64, f64),
    pub max_attempts: usize,
    pub templates: Vec<String>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            easy: CameraBand::easy(),
            hard: CameraBand::hard(),
            camera_azimuth_deg: 0.0,
            camera_elevation_deg: 45.0,
            camera_target: [0.35, 0.0, 0.0],
            table_x: (0.2, 0.5),
            table_y: (-0.2, 0.2),
            num_objects: (2, 4),
            width: 320,
            height: 240,
            visibility_margin: 0.02,
            depth_range: (0.2, 2.0),
            workspace: PositionBox::centered_cube([0.0, 0.0, 0.0], 1.2),
            robot_state_x: (0.25, 0.45),
            robot_state_y: (-0.1, 0.1),
            robot_state_z: (0.2, 0.3),
            max_attempts: 100,
            templates: DEFAULT_TEMPLATES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl SceneConfig {
    pub fn band(&self, difficulty: Difficulty) -> &CameraBand {
        match difficulty {
            Difficulty::Easy => &self.easy,
            Difficulty::Hard => &self.hard,
        }
    }

    pub fn validate(&self) -> Result<(), SceneGenError> {
        let (lo, hi) = self.num_objects;
        if !(2 <= lo && lo <= hi && hi <= 4) {
            return Err(SceneGenError::InvalidConfig(format!(
                "num_objects must satisfy 2 <= min <= max <= 4 (got {lo}..={hi})"
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SceneGenError::InvalidConfig("image size must be nonzero".into()));
        }
        for band in [&self.easy, &self.hard] {
            let ok = band.fov_deg.0 > 0.0
                && band.fov_deg.0 <= band.fov_deg.1
                && band.fov_deg.1 < 180.0
                && band.radius.0 > 0.0
                && band.radius.0 <= band.radius.1
                && band.view_cone_deg >= 0.0
                && band.target_jitter >= 0.0;
            if !ok {
                return Err(SceneGenError::InvalidConfig(format!("invalid camera band {band:?}")));
            }
        }
        if self.max_attempts == 0 {
            return Err(SceneGenError::InvalidConfig("max_attempts must be positive".into()));
        }
        super::text::validate_templates(&self.templates)
    }
}

/// An asset resting on the table plane (z = 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacedObject {
    pub asset: AssetSpec,
    /// Object center in world coordinates.
    pub position: [f64; 3],
    /// Rotation about world z, degrees. Always 0 for spheres.
    pub yaw_deg: f64,
}

impl PlacedObject {
    pub fn center(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), self.yaw_deg.to_radians())
    }

    pub fn top(&self) -> f64 {
        self.position[2] + self.asset.height() / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRef {
    pub source: usize,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scene_id: u64,
    pub difficulty: Difficulty,
    pub objects: Vec<PlacedObject>,
    pub camera: CameraModel,
    pub robot_state: Pose6D,
    pub instruction: String,
    pub task: TaskRef,
}

impl SceneSpec {
    pub fn source(&self) -> &PlacedObject {
        &self.objects[self.task.source]
    }

    pub fn target(&self) -> &PlacedObject {
        &self.objects[self.task.target]
    }
}

/// Deterministic per-scene RNG: one ChaCha stream per scene id.
pub fn scene_rng(seed: u64, scene_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(scene_id);
    rng
}

/// Top-down gripper orientation: gripper z along world −z, gripper x
/// (the closing direction) at `yaw_deg` about world z.
pub fn top_down(yaw_deg: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw_deg.to_radians())
        * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI)
}

/// Maps a yaw to `[-90°, 90°)`: a parallel gripper is symmetric under 180°.
fn gripper_yaw(yaw_deg: f64) -> f64 {
    (yaw_deg + 90.0).rem_euclid(180.0) - 90.0
}

/// Analytic top-down grasp yaw: the closing direction runs along the
/// object's shortest horizontal extent.
pub fn grasp_yaw_deg(obj: &PlacedObject) -> f64 {
    match obj.asset.shape {
        Shape::Sphere => 0.0,
        Shape::Cube => gripper_yaw(obj.yaw_deg),
        Shape::Block => gripper_yaw(obj.yaw_deg + 90.0),
    }
}

/// Grasp at the source center; release with the source translated onto the
/// target's top face plus clearance, keeping the grasp orientation.
pub fn compute_trajectory(scene: &SceneSpec) -> Trajectory {
    let src = scene.source();
    let dst = scene.target();
    let q = top_down(grasp_yaw_deg(src));
    let grasp = Pose6D::new(src.center(), q);
    let release_pos = Vector3::new(
        dst.position[0],
        dst.position[1],
        dst.top() + src.asset.height() / 2.0 + RELEASE_CLEARANCE,
    );
    Trajectory::new(grasp, Pose6D::new(release_pos, q))
}

/// A task object is visible when its center projects inside the image with
/// the configured margin and the pixel ray toward it hits it first.
pub fn is_visible(objects: &[PlacedObject], camera: &CameraModel, idx: usize, margin: f64) -> bool {
    let Ok((px, py, _)) = camera.project_point(&objects[idx].center()) else {
        return false;
    };
    let (w, h) = (camera.width() as f64, camera.height() as f64);
    let inside = px >= margin * w && px <= (1.0 - margin) * w && py >= margin * h && py <= (1.0 - margin) * h;
    inside && first_hit(objects, camera, px, py).map(|(i, _)| i) == Some(idx)
}

fn in_box(b: &PositionBox, p: &Vector3<f64>) -> bool {
    (0..3).all(|i| p[i] >= b.min[i] && p[i] <= b.max[i])
}

/// Pose is encodable in both frames under `cfg`'s depth range and workspace.
fn encodable(cfg: &SceneConfig, camera: &CameraModel, pose: &Pose6D) -> bool {
    let Ok(a) = camera.project(pose) else {
        return false;
    };
    let (d0, d1) = cfg.depth_range;
    (0.0..=1.0).contains(&a.u)
        && (0.0..=1.0).contains(&a.v)
        && a.depth >= d0
        && a.depth <= d1
        && in_box(&cfg.workspace, pose.position())
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

fn sample_camera(cfg: &SceneConfig, band: &CameraBand, rng: &mut ChaCha8Rng) -> Result<CameraModel, SceneGenError> {
    let cone = band.view_cone_deg;
    let az = (cfg.camera_azimuth_deg + uniform(rng, (-cone, cone))).to_radians();
    let el = (cfg.camera_elevation_deg + uniform(rng, (-cone, cone)))
        .clamp(5.0, 85.0)
        .to_radians();
    let r = uniform(rng, band.radius);
    let fov = uniform(rng, band.fov_deg);
    let j = band.target_jitter;
    let t = cfg.camera_target;
    let target = Vector3::new(
        t[0] + uniform(rng, (-j, j)),
        t[1] + uniform(rng, (-j, j)),
        t[2] + uniform(rng, (-j, j)),
    );
    let eye = target + r * Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
    Ok(CameraModel::look_at(eye, target, fov, cfg.width, cfg.height)?)
}

fn sample_objects(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Option<Vec<PlacedObject>> {
    let n = rng.gen_range(cfg.num_objects.0..=cfg.num_objects.1);
    let catalog = AssetSpec::all();
    let picks = index::sample(rng, catalog.len(), n);
    let mut objects: Vec<PlacedObject> = Vec::with_capacity(n);
    for k in picks.iter() {
        let asset = catalog[k];
        let position = [
            uniform(rng, cfg.table_x),
            uniform(rng, cfg.table_y),
            asset.height() / 2.0,
        ];
        let yaw_deg = match asset.shape {
            Shape::Sphere => 0.0,
            _ => uniform(rng, (-180.0, 180.0)),
        };
        let obj = PlacedObject {
            asset,
            position,
            yaw_deg,
        };
        let overlaps = objects.iter().any(|o| {
            let d = (o.center().xy() - obj.center().xy()).norm();
            d <= o.asset.footprint_radius() + obj.asset.footprint_radius()
        });
        if overlaps {
            return None;
        }
        objects.push(obj);
    }
    Some(objects)
}

/// Samples one scene. Each attempt draws objects, task, camera and robot
/// state; attempts failing placement, visibility or encodability are
/// rejected, and after `max_attempts` rejections the scene fails.
pub fn sample_scene(
    cfg: &SceneConfig,
    difficulty: Difficulty,
    seed: u64,
    scene_id: u64,
) -> Result<SceneSpec, SceneGenError> {
    cfg.validate()?;
    let mut rng = scene_rng(seed, scene_id);
    let band = *cfg.band(difficulty);
    for _ in 0..cfg.max_attempts {
        let Some(objects) = sample_objects(cfg, &mut rng) else {
            continue;
        };
        let pair = index::sample(&mut rng, objects.len(), 2);
        let task = TaskRef {
            source: pair.index(0),
            target: pair.index(1),
        };
        let camera = sample_camera(cfg, &band, &mut rng)?;
        let robot_state = Pose6D::new(
            Vector3::new(
                uniform(&mut rng, cfg.robot_state_x),
                uniform(&mut rng, cfg.robot_state_y),
                uniform(&mut rng, cfg.robot_state_z),
            ),
            top_down(uniform(&mut rng, (-45.0, 45.0))),
        );
        let text_seed: u64 = rng.gen();
        let m = cfg.visibility_margin;
        if !is_visible(&objects, &camera, task.source, m) || !is_visible(&objects, &camera, task.target, m) {
            continue;
        }
        let instruction = instruction_text(
            &objects[task.source].asset,
            &objects[task.target].asset,
            &cfg.templates,
            text_seed,
        )?;
        let scene = SceneSpec {
            scene_id,
            difficulty,
            objects,
            camera,
            robot_state,
            instruction,
            task,
        };
        let traj = compute_trajectory(&scene);
        let poses = [traj.grasp(), traj.release(), &scene.robot_state];
        if poses.iter().all(|p| encodable(cfg, &scene.camera, p)) {
            return Ok(scene);
        }
    }
    Err(SceneGenError::PlacementFailure {
        scene_id,
        attempts: cfg.max_attempts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::relative_angle_deg;
    use crate::scenegen::assets::{Color, Size};

    fn obj(shape: Shape, pos: [f64; 3], yaw: f64) -> PlacedObject {
        PlacedObject {
            asset: AssetSpec::new(shape, Size::Large, Color::Yellow),
            position: pos,
            yaw_deg: yaw,
        }
    }

    fn scene_with(objects: Vec<PlacedObject>) -> SceneSpec {
        let camera = CameraModel::look_at(
            Vector3::new(1.0, 0.0, 0.64),
            Vector3::new(0.35, 0.0, 0.0),
            55.0,
            320,
            240,
        )
        .unwrap();
        SceneSpec {
            scene_id: 0,
            difficulty: Difficulty::Easy,
            objects,
            camera,
            robot_state: Pose6D::identity(),
            instruction: String::new(),
            task: TaskRef { source: 0, target: 1 },
        }
    }

    #[test]
    fn cube_grasp_at_center() {
        let s = scene_with(vec![
            obj(Shape::Cube, [0.3, 0.1, 0.035], 20.0),
            obj(Shape::Cube, [0.4, -0.1, 0.035], 0.0),
        ]);
        let t = compute_trajectory(&s);
        assert_eq!(*t.grasp().position(), Vector3::new(0.3, 0.1, 0.035));
        let z = t.grasp().orientation() * Vector3::z();
        assert!((z + Vector3::z()).norm() < 1e-12);
        // Release: target top 0.07 + half source 0.035 + clearance.
        let r = t.release().position();
        assert!((r.z - (0.07 + 0.035 + RELEASE_CLEARANCE)).abs() < 1e-12);
        assert_eq!((r.x, r.y), (0.4, -0.1));
        assert!(relative_angle_deg(t.grasp().orientation(), t.release().orientation()) < 1e-9);
    }

    #[test]
    fn sphere_yaw_zero() {
        let s = obj(Shape::Sphere, [0.3, 0.0, 0.035], 0.0);
        assert_eq!(grasp_yaw_deg(&s), 0.0);
        let q = top_down(grasp_yaw_deg(&s));
        let x = q * Vector3::x();
        assert!((x - Vector3::x()).norm() < 1e-12);
    }

    #[test]
    fn block_grasp_perpendicular_to_long_axis() {
        for yaw in [-170.0, -45.0, 0.0, 30.0, 89.0, 135.0] {
            let b = obj(Shape::Block, [0.3, 0.0, 0.0175], yaw);
            let closing = top_down(grasp_yaw_deg(&b)) * Vector3::x();
            let long_axis = b.rotation() * Vector3::x();
            assert!(closing.dot(&long_axis).abs() < 1e-12, "yaw {yaw}");
            let yaw_g = grasp_yaw_deg(&b);
            assert!((-90.0..90.0).contains(&yaw_g));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SceneConfig::default();
        let a = sample_scene(&cfg, Difficulty::Hard, 7, 3).unwrap();
        let b = sample_scene(&cfg, Difficulty::Hard, 7, 3).unwrap();
        assert_eq!(a, b);
        let c = sample_scene(&cfg, Difficulty::Hard, 7, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn scenes_satisfy_invariants() {
        let cfg = SceneConfig::default();
        for id in 0..200 {
            for d in [Difficulty::Easy, Difficulty::Hard] {
                let s = sample_scene(&cfg, d, 11, id).unwrap();
                assert!((2..=4).contains(&s.objects.len()));
                assert_ne!(s.task.source, s.task.target);
                for (i, a) in s.objects.iter().enumerate() {
                    for b in &s.objects[i + 1..] {
                        let dist = (a.center() - b.center()).norm();
                        let half = |o: &PlacedObject| o.asset.extents().max() / 2.0;
                        assert!(dist > half(a) + half(b));
                    }
                }
                assert!(is_visible(&s.objects, &s.camera, s.task.source, 0.0));
                assert!(is_visible(&s.objects, &s.camera, s.task.target, 0.0));
            }
        }
    }

    #[test]
    fn impossible_config_fails_with_scene_id() {
        let cfg = SceneConfig {
            table_x: (0.3, 0.3),
            table_y: (0.0, 0.0),
            ..SceneConfig::default()
        };
        match sample_scene(&cfg, Difficulty::Easy, 1, 42) {
            Err(SceneGenError::PlacementFailure { scene_id, attempts }) => {
                assert_eq!(scene_id, 42);
                assert_eq!(attempts, 100);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn easy_fov_variance_below_hard() {
        let cfg = SceneConfig::default();
        let var = |d| {
            let f: Vec<f64> = (0..300)
                .map(|i| sample_scene(&cfg, d, 5, i).unwrap().camera.fov_y_deg())
                .collect();
            let m = f.iter().sum::<f64>() / f.len() as f64;
            f.iter().map(|x| (x - m).powi(2)).sum::<f64>() / f.len() as f64
        };
        assert!(var(Difficulty::Easy) < var(Difficulty::Hard));
    }
}
