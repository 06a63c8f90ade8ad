//! Python bindings: poses, cameras, the token codec, decoding over logit
//! matrices, metrics, dataset generation and prompt assembly.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use keypose::codec::{Codec, CodecConfig, DepthMode, Frame, TokenSequence, VOCAB_SIZE};
use keypose::decoder::{
    decode_beam, decode_beam_nms, decode_greedy, decode_sampling, LogitDump, NmsWindows, ReplayScorer,
    DEFAULT_WINDOW_LOC, DEFAULT_WINDOW_SEG,
};
use keypose::geometry::{CameraModel, EulerXyz, Pose6D, Trajectory};
use keypose::imitation::{assemble_imitation_prompt, build_task_index, sample_pairs as sample_pair_ids, RecordLookup};
use keypose::metrics::{self, EpisodeRecord, Prediction, UnitExchange};
use keypose::scenegen::{read_records, write_dataset, DatasetConfig};
use nalgebra::{Quaternion, Vector3};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_enum<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} {s:?}")))
}

/// A 6-DoF pose: position in meters and a unit quaternion `(w, x, y, z)`.
#[pyclass(name = "Pose", frozen, from_py_object)]
#[derive(Clone)]
struct PyPose(Pose6D);

#[pymethods]
impl PyPose {
    #[new]
    #[pyo3(signature = (position, wxyz = [1.0, 0.0, 0.0, 0.0]))]
    fn new(position: [f64; 3], wxyz: [f64; 4]) -> PyResult<Self> {
        Pose6D::from_parts(position, wxyz).map(PyPose).map_err(value_err)
    }

    /// Pose from X-Y-Z Euler angles in degrees (`R = Rx · Ry · Rz`).
    #[staticmethod]
    fn from_euler(position: [f64; 3], xyz_deg: [f64; 3]) -> Self {
        let q = EulerXyz::new(xyz_deg[0], xyz_deg[1], xyz_deg[2]).to_quaternion();
        PyPose(Pose6D::new(Vector3::from(position), q))
    }

    #[getter]
    fn position(&self) -> [f64; 3] {
        let p = self.0.position();
        [p.x, p.y, p.z]
    }

    #[getter]
    fn wxyz(&self) -> [f64; 4] {
        let q: &Quaternion<f64> = self.0.orientation().quaternion();
        [q.w, q.i, q.j, q.k]
    }

    #[getter]
    fn euler_deg(&self) -> [f64; 3] {
        let e = EulerXyz::from_quaternion(self.0.orientation());
        [e.x, e.y, e.z]
    }

    fn __repr__(&self) -> String {
        format!("Pose(position={:?}, wxyz={:?})", self.position(), self.wxyz())
    }
}

/// A grasp keypose followed by a release keypose.
#[pyclass(name = "Trajectory", frozen, from_py_object)]
#[derive(Clone)]
struct PyTrajectory(Trajectory);

#[pymethods]
impl PyTrajectory {
    #[new]
    fn new(grasp: PyPose, release: PyPose) -> Self {
        PyTrajectory(Trajectory::new(grasp.0, release.0))
    }

    #[getter]
    fn grasp(&self) -> PyPose {
        PyPose(*self.0.grasp())
    }

    #[getter]
    fn release(&self) -> PyPose {
        PyPose(*self.0.release())
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(value_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(PyTrajectory).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Trajectory(grasp={}, release={})",
            self.grasp().__repr__(),
            self.release().__repr__()
        )
    }
}

/// Pinhole camera in the OpenCV convention (x right, y down, z forward).
#[pyclass(name = "Camera", frozen, from_py_object)]
#[derive(Clone)]
struct PyCamera(CameraModel);

#[pymethods]
impl PyCamera {
    #[staticmethod]
    fn look_at(eye: [f64; 3], target: [f64; 3], fov_y_deg: f64, width: u32, height: u32) -> PyResult<Self> {
        CameraModel::look_at(Vector3::from(eye), Vector3::from(target), fov_y_deg, width, height)
            .map(PyCamera)
            .map_err(value_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(PyCamera).map_err(value_err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(value_err)
    }

    /// Pixel coordinates and camera depth of a world point.
    fn project(&self, point: [f64; 3]) -> PyResult<(f64, f64, f64)> {
        self.0.project_point(&Vector3::from(point)).map_err(value_err)
    }

    fn unproject(&self, x: f64, y: f64, depth: f64) -> [f64; 3] {
        let p = self.0.unproject_pixel(x, y, depth);
        [p.x, p.y, p.z]
    }

    #[getter]
    fn width(&self) -> u32 {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> u32 {
        self.0.height()
    }
}

/// Pose ↔ `<locNNNN>`/`<segNNN>` token codec.
#[pyclass(name = "Codec", frozen)]
struct PyCodec(Codec);

#[pymethods]
impl PyCodec {
    #[new]
    #[pyo3(signature = (n_loc = 1024, frame = "image", depth_mode = "shared_loc", depth_range = (0.2, 2.0)))]
    fn new(n_loc: u32, frame: &str, depth_mode: &str, depth_range: (f64, f64)) -> PyResult<Self> {
        let cfg = CodecConfig {
            n_loc,
            frame: parse_enum::<Frame>("frame", frame)?,
            depth_mode: parse_enum::<DepthMode>("depth mode", depth_mode)?,
            depth_range,
            ..CodecConfig::default()
        };
        Codec::new(cfg).map(PyCodec).map_err(value_err)
    }

    #[pyo3(signature = (pose, camera = None))]
    fn encode_pose(&self, pose: PyPose, camera: Option<PyCamera>) -> PyResult<String> {
        let cam = camera.as_ref().map(|c| &c.0);
        self.0
            .encode_pose(&pose.0, cam)
            .map(|t| t.to_string())
            .map_err(value_err)
    }

    #[pyo3(signature = (tokens, camera = None))]
    fn decode_pose(&self, tokens: &str, camera: Option<PyCamera>) -> PyResult<PyPose> {
        let seq: TokenSequence = tokens.parse().map_err(value_err)?;
        let cam = camera.as_ref().map(|c| &c.0);
        self.0.decode_pose(&seq.0, cam).map(PyPose).map_err(value_err)
    }

    #[pyo3(signature = (trajectory, camera = None))]
    fn encode_trajectory(&self, trajectory: PyTrajectory, camera: Option<PyCamera>) -> PyResult<String> {
        let cam = camera.as_ref().map(|c| &c.0);
        self.0
            .encode_trajectory(&trajectory.0, cam)
            .map(|t| t.to_string())
            .map_err(value_err)
    }

    #[pyo3(signature = (tokens, camera = None))]
    fn decode_trajectory(&self, tokens: &str, camera: Option<PyCamera>) -> PyResult<PyTrajectory> {
        let seq: TokenSequence = tokens.parse().map_err(value_err)?;
        let cam = camera.as_ref().map(|c| &c.0);
        self.0
            .decode_trajectory(&seq.0, cam)
            .map(PyTrajectory)
            .map_err(value_err)
    }

    /// Bin-center frame coordinates `(p0, p1, p2, ax, ay, az)` of 6 tokens.
    fn decode_coordinates(&self, tokens: &str) -> PyResult<[f64; 6]> {
        let seq: TokenSequence = tokens.parse().map_err(value_err)?;
        self.0.decode_coordinates(&seq.0).map_err(value_err)
    }

    /// Valid `[start, end)` vocabulary ids per trajectory decoding step.
    fn grammar(&self) -> Vec<(u32, u32)> {
        self.0
            .trajectory_grammar()
            .steps()
            .iter()
            .map(|s| (s.band.start, s.band.end))
            .collect()
    }
}

#[pyfunction]
fn token_ids(tokens: &str) -> PyResult<Vec<u32>> {
    tokens.parse::<TokenSequence>().map(|t| t.ids()).map_err(value_err)
}

#[pyfunction]
fn tokens_from_ids(ids: Vec<u32>) -> PyResult<String> {
    TokenSequence::from_ids(&ids).map(|t| t.to_string()).map_err(value_err)
}

#[pyfunction]
fn vocab_size() -> usize {
    VOCAB_SIZE
}

/// Indices of `values` that are maxima within `±window`.
#[pyfunction]
fn nms_1d(values: Vec<f64>, window: usize) -> Vec<usize> {
    keypose::decoder::nms_1d(&values, window)
}

/// Decodes a `num_steps × vocab` raw logit matrix over the codec's
/// trajectory grammar. Returns `(token_ids, log_prob)` per beam.
#[pyfunction]
#[pyo3(signature = (logits, codec, strategy = "beam-nms", n = 3, window_loc = DEFAULT_WINDOW_LOC, window_seg = DEFAULT_WINDOW_SEG, temperature = 1.0, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn decode_logits(
    logits: Vec<Vec<f32>>,
    codec: PyRef<'_, PyCodec>,
    strategy: &str,
    n: usize,
    window_loc: usize,
    window_seg: usize,
    temperature: f64,
    seed: u64,
) -> PyResult<Vec<(Vec<u32>, f64)>> {
    let vocab = logits.first().map_or(VOCAB_SIZE, Vec::len);
    let dump = LogitDump::new(vocab, logits).map_err(value_err)?;
    let scorer = ReplayScorer::new(&dump, VOCAB_SIZE).map_err(value_err)?;
    let grammar = codec.0.trajectory_grammar();
    scorer.check_covers(&grammar).map_err(value_err)?;
    let beams = match strategy {
        "greedy" => vec![decode_greedy(&scorer, &grammar).map_err(value_err)?],
        "sample" => decode_sampling(&scorer, &grammar, temperature, seed, n).map_err(value_err)?,
        "beam" => decode_beam(&scorer, &grammar, n).map_err(value_err)?,
        "beam-nms" => decode_beam_nms(
            &scorer,
            &grammar,
            n,
            NmsWindows {
                loc: window_loc,
                seg: window_seg,
            },
        )
        .map_err(value_err)?,
        other => return Err(PyValueError::new_err(format!("unknown strategy {other:?}"))),
    };
    Ok(beams.into_iter().map(|b| (b.tokens, b.log_prob)).collect())
}

#[pyfunction]
fn read_dump(path: &str) -> PyResult<Vec<Vec<f32>>> {
    LogitDump::read_file(path)
        .map(|d| d.rows().to_vec())
        .map_err(|e| PyIOError::new_err(e.to_string()))
}

#[pyfunction]
fn write_dump(path: &str, logits: Vec<Vec<f32>>) -> PyResult<()> {
    let vocab = logits.first().map_or(0, Vec::len);
    let dump = LogitDump::new(vocab, logits).map_err(value_err)?;
    dump.write_file(path).map_err(|e| PyIOError::new_err(e.to_string()))
}

#[pyfunction]
#[pyo3(signature = (pred, gt, deg_per_cm = 1.0))]
fn traj_l1(pred: PyTrajectory, gt: PyTrajectory, deg_per_cm: f64) -> PyResult<f64> {
    let units = UnitExchange::new(deg_per_cm).map_err(value_err)?;
    Ok(metrics::traj_l1(&pred.0, &gt.0, units))
}

#[pyfunction]
fn reward(current: [f64; 3], init: [f64; 3], goal: [f64; 3]) -> PyResult<f64> {
    metrics::reward(&Vector3::from(current), &Vector3::from(init), &Vector3::from(goal)).map_err(value_err)
}

#[pyfunction]
fn is_success(reward: f64) -> bool {
    metrics::is_success(reward)
}

#[pyfunction]
fn spearman(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    metrics::spearman(&x, &y).map_err(value_err)
}

type PyEpisode = (String, PyTrajectory, Vec<(PyTrajectory, f64)>);

fn episodes(eps: Vec<PyEpisode>) -> Vec<EpisodeRecord> {
    eps.into_iter()
        .map(|(id, gt, preds)| EpisodeRecord {
            episode_id: id,
            ground_truth: gt.0,
            predictions: preds
                .into_iter()
                .map(|(t, c)| Prediction {
                    trajectory: t.0,
                    confidence: c,
                })
                .collect(),
        })
        .collect()
}

/// AP at one L1 threshold over `(episode_id, ground_truth, [(prediction, confidence)])`.
#[pyfunction]
#[pyo3(signature = (episodes_, threshold_cm, deg_per_cm = 10.0))]
fn compute_ap(episodes_: Vec<PyEpisode>, threshold_cm: f64, deg_per_cm: f64) -> PyResult<f64> {
    let units = UnitExchange::new(deg_per_cm).map_err(value_err)?;
    Ok(metrics::compute_ap(&episodes(episodes_), threshold_cm, units).ap)
}

/// mAP over the standard thresholds (0.5 to 50 cm, 1 cm = 10°).
#[pyfunction]
fn compute_map(episodes_: Vec<PyEpisode>) -> f64 {
    metrics::compute_map(&episodes(episodes_)).map
}

/// Writes a dataset and returns its manifest as JSON. `config_json`
/// overrides the defaults; keyword arguments override both.
#[pyfunction]
#[pyo3(signature = (out_dir, num_scenes = None, seed = None, write_images = None, config_json = None))]
fn generate_dataset(
    out_dir: &str,
    num_scenes: Option<u64>,
    seed: Option<u64>,
    write_images: Option<bool>,
    config_json: Option<&str>,
) -> PyResult<String> {
    let mut cfg: DatasetConfig = match config_json {
        Some(t) => serde_json::from_str(t).map_err(value_err)?,
        None => DatasetConfig::default(),
    };
    if let Some(n) = num_scenes {
        cfg.num_scenes = n;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(w) = write_images {
        cfg.write_images = w;
    }
    let manifest = write_dataset(&cfg, out_dir).map_err(value_err)?;
    serde_json::to_string(&manifest).map_err(value_err)
}

/// Same-task `(demo_scene_id, query_scene_id)` pairs from a records file.
#[pyfunction]
fn sample_pairs(records_path: &str, k: usize, seed: u64) -> PyResult<Vec<(u64, u64)>> {
    let records = read_records(records_path).map_err(value_err)?;
    let index = build_task_index(&records).map_err(value_err)?;
    let pairs = sample_pair_ids(&index, k, seed).map_err(value_err)?;
    Ok(pairs.into_iter().map(|p| (p.demo, p.query)).collect())
}

/// Imitation prompt text for one pair of scenes in a records file.
#[pyfunction]
fn imitation_prompt(records_path: &str, demo: u64, query: u64, codec: PyRef<'_, PyCodec>) -> PyResult<String> {
    let records = read_records(records_path).map_err(value_err)?;
    let lookup = RecordLookup::new(&records);
    let pair = lookup
        .pair(keypose::imitation::PairIds { demo, query })
        .map_err(value_err)?;
    assemble_imitation_prompt(pair, &codec.0)
        .map(|p| p.to_text())
        .map_err(value_err)
}

#[pymodule]
fn keypose_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPose>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyCamera>()?;
    m.add_class::<PyCodec>()?;
    m.add_function(wrap_pyfunction!(token_ids, m)?)?;
    m.add_function(wrap_pyfunction!(tokens_from_ids, m)?)?;
    m.add_function(wrap_pyfunction!(vocab_size, m)?)?;
    m.add_function(wrap_pyfunction!(nms_1d, m)?)?;
    m.add_function(wrap_pyfunction!(decode_logits, m)?)?;
    m.add_function(wrap_pyfunction!(read_dump, m)?)?;
    m.add_function(wrap_pyfunction!(write_dump, m)?)?;
    m.add_function(wrap_pyfunction!(traj_l1, m)?)?;
    m.add_function(wrap_pyfunction!(reward, m)?)?;
    m.add_function(wrap_pyfunction!(is_success, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(compute_ap, m)?)?;
    m.add_function(wrap_pyfunction!(compute_map, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(sample_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(imitation_prompt, m)?)?;
    Ok(())
}
