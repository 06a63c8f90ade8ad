//! Keypose ↔ discrete token codec built on the localization (`<locNNNN>`)
//! and segmentation (`<segNNN>`) token ranges.
//!
//! Each keypose is six tokens: three loc tokens for the position and three seg
//! tokens for the orientation as intrinsic X-Y-Z Euler angles. In the image
//! frame the position is `(u, v, depth)`; in the robot frame it is `(x, y, z)`
//! inside a configured box.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraModel, EulerXyz, GeometryError, Gripper, ImageAction, Keypose, Pose6D, Trajectory};

/// Number of localization tokens in the vocabulary.
pub const LOC_TOKENS: u32 = 1024;
/// Number of segmentation tokens in the vocabulary.
pub const SEG_TOKENS: u32 = 128;
/// Size of the combined action vocabulary: loc ids first, then seg ids.
pub const VOCAB_SIZE: usize = (LOC_TOKENS + SEG_TOKENS) as usize;

pub const TOKENS_PER_KEYPOSE: usize = 6;
pub const TOKENS_PER_TRAJECTORY: usize = 12;

/// Seg bins whose centers lie in `(-90°, 90°)`; the middle Euler angle is
/// restricted to these so every valid token string has a unique rotation.
pub const PITCH_BAND: Range<u32> = 32..96;

const ANGLE_MIN: f64 = -180.0;
const ANGLE_MAX: f64 = 180.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("{coordinate} = {value} outside [{min}, {max}]")]
    OutOfRange {
        coordinate: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("grammar violation at token {position}: expected {expected}, found {found}")]
    GrammarViolation {
        position: usize,
        expected: String,
        found: String,
    },
    #[error("image-frame codec requires a camera")]
    MissingCamera,
    #[error("invalid codec config: {0}")]
    InvalidConfig(String),
    #[error("cannot parse token text {0:?}")]
    BadToken(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One action token. Loc ids occupy `0..1024` of the vocabulary, seg ids
/// `1024..1152`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Token {
    Loc(u16),
    Seg(u8),
}

impl Token {
    pub fn id(self) -> u32 {
        match self {
            Token::Loc(i) => i as u32,
            Token::Seg(i) => LOC_TOKENS + i as u32,
        }
    }

    pub fn from_id(id: u32) -> Option<Token> {
        if id < LOC_TOKENS {
            Some(Token::Loc(id as u16))
        } else if id < LOC_TOKENS + SEG_TOKENS {
            Some(Token::Seg((id - LOC_TOKENS) as u8))
        } else {
            None
        }
    }

    pub fn kind(self) -> StepKind {
        match self {
            Token::Loc(_) => StepKind::Loc,
            Token::Seg(_) => StepKind::Seg,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Loc(i) => write!(f, "<loc{i:04}>"),
            Token::Seg(i) => write!(f, "<seg{i:03}>"),
        }
    }
}

impl FromStr for Token {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CodecError::BadToken(s.to_string());
        let inner = s.strip_prefix('<').and_then(|r| r.strip_suffix('>')).ok_or_else(bad)?;
        let (digits, width, max, loc) = if let Some(d) = inner.strip_prefix("loc") {
            (d, 4, LOC_TOKENS, true)
        } else if let Some(d) = inner.strip_prefix("seg") {
            (d, 3, SEG_TOKENS, false)
        } else {
            return Err(bad());
        };
        if digits.len() != width || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let n: u32 = digits.parse().map_err(|_| bad())?;
        if n >= max {
            return Err(bad());
        }
        Ok(if loc { Token::Loc(n as u16) } else { Token::Seg(n as u8) })
    }
}

/// An ordered token string. Renders as 3-token groups separated by a single
/// space, e.g. `<loc0243><loc0423><loc0751> <seg063><seg079><seg112>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSequence(pub Vec<Token>);

impl TokenSequence {
    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn ids(&self) -> Vec<u32> {
        self.0.iter().map(|t| t.id()).collect()
    }

    pub fn from_ids(ids: &[u32]) -> Result<Self, CodecError> {
        ids.iter()
            .map(|&id| Token::from_id(id).ok_or_else(|| CodecError::BadToken(format!("id {id}"))))
            .collect::<Result<Vec<_>, _>>()
            .map(TokenSequence)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 && i % 3 == 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl FromStr for TokenSequence {
    type Err = CodecError;

    /// Parses concatenated tokens; whitespace between tokens is ignored.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut tokens = Vec::new();
        let mut rest = s.trim_start();
        while !rest.is_empty() {
            let end = rest.find('>').ok_or_else(|| CodecError::BadToken(rest.to_string()))?;
            tokens.push(rest[..=end].parse()?);
            rest = rest[end + 1..].trim_start();
        }
        Ok(TokenSequence(tokens))
    }
}

impl Serialize for TokenSequence {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TokenSequence {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Loc,
    Seg,
}

/// Valid vocabulary ids at one decoding step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrammarStep {
    pub kind: StepKind,
    /// Contiguous range of vocabulary ids.
    pub band: Range<u32>,
}

/// A fixed-length token grammar: one contiguous band of valid ids per step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    steps: Vec<GrammarStep>,
}

impl Grammar {
    pub fn new(steps: Vec<GrammarStep>) -> Self {
        Self { steps }
    }

    pub fn steps(&self) -> &[GrammarStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_valid(&self, step: usize, id: u32) -> bool {
        self.steps.get(step).is_some_and(|s| s.band.contains(&id))
    }

    /// Checks a complete or partial sequence; reports the first offending token.
    pub fn check_prefix(&self, ids: &[u32]) -> Result<(), CodecError> {
        if ids.len() > self.steps.len() {
            return Err(CodecError::GrammarViolation {
                position: self.steps.len(),
                expected: "end of sequence".into(),
                found: describe_id(ids[self.steps.len()]),
            });
        }
        for (i, (&id, step)) in ids.iter().zip(&self.steps).enumerate() {
            if !step.band.contains(&id) {
                return Err(CodecError::GrammarViolation {
                    position: i,
                    expected: describe_band(&step.band),
                    found: describe_id(id),
                });
            }
        }
        Ok(())
    }

    pub fn check(&self, ids: &[u32]) -> Result<(), CodecError> {
        self.check_prefix(ids)?;
        if ids.len() < self.steps.len() {
            return Err(CodecError::GrammarViolation {
                position: ids.len(),
                expected: describe_band(&self.steps[ids.len()].band),
                found: "end of sequence".into(),
            });
        }
        Ok(())
    }

    /// Concatenates `times` copies of this grammar.
    pub fn repeat(&self, times: usize) -> Grammar {
        Grammar {
            steps: (0..times).flat_map(|_| self.steps.iter().cloned()).collect(),
        }
    }
}

fn describe_id(id: u32) -> String {
    Token::from_id(id).map_or_else(|| format!("id {id}"), |t| t.to_string())
}

fn describe_band(band: &Range<u32>) -> String {
    match (Token::from_id(band.start), Token::from_id(band.end - 1)) {
        (Some(a), Some(b)) => format!("{a}..={b}"),
        _ => format!("ids {band:?}"),
    }
}

/// Uniform scalar quantizer over `[min, max]` with `bins` bins.
///
/// Values exactly at `max` fall into the last bin; anything outside the
/// closed range is an error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantizer {
    pub min: f64,
    pub max: f64,
    pub bins: u32,
}

impl Quantizer {
    pub fn new(min: f64, max: f64, bins: u32) -> Self {
        Self { min, max, bins }
    }

    pub fn width(&self) -> f64 {
        (self.max - self.min) / self.bins as f64
    }

    /// Worst-case reconstruction error: half a bin.
    pub fn error_bound(&self) -> f64 {
        (self.max - self.min) / (2.0 * self.bins as f64)
    }

    pub fn encode(&self, value: f64, coordinate: &'static str) -> Result<u32, CodecError> {
        if !(value >= self.min && value <= self.max) {
            return Err(CodecError::OutOfRange {
                coordinate,
                value,
                min: self.min,
                max: self.max,
            });
        }
        let norm = (value - self.min) / (self.max - self.min);
        let idx = (norm * self.bins as f64).floor() as u32;
        Ok(idx.min(self.bins - 1))
    }

    pub fn decode(&self, idx: u32) -> f64 {
        self.min + (idx as f64 + 0.5) / self.bins as f64 * (self.max - self.min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Image,
    Robot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthMode {
    /// The third position coordinate uses the same loc bins as the first two.
    SharedLoc,
    /// The third coordinate uses the loc band `[n_loc, 2·n_loc)`.
    SeparateBand,
}

/// Axis-aligned box in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl PositionBox {
    pub fn centered_cube(center: [f64; 3], side: f64) -> Self {
        let h = side / 2.0;
        Self {
            min: [center[0] - h, center[1] - h, center[2] - h],
            max: [center[0] + h, center[1] + h, center[2] + h],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    /// Bins per position coordinate: 1024, 512, 256 or 128.
    pub n_loc: u32,
    pub frame: Frame,
    pub depth_mode: DepthMode,
    /// Camera depth range in meters, `(d_min, d_max)`.
    pub depth_range: (f64, f64),
    pub position_range: PositionBox,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            n_loc: 1024,
            frame: Frame::Image,
            depth_mode: DepthMode::SharedLoc,
            depth_range: (0.2, 2.0),
            position_range: PositionBox::centered_cube([0.0, 0.0, 0.0], 1.2),
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<(), CodecError> {
        if ![1024, 512, 256, 128].contains(&self.n_loc) {
            return Err(CodecError::InvalidConfig(format!(
                "n_loc must be one of 1024, 512, 256, 128 (got {})",
                self.n_loc
            )));
        }
        if self.depth_mode == DepthMode::SeparateBand && 2 * self.n_loc > LOC_TOKENS {
            return Err(CodecError::InvalidConfig(
                "separate depth band needs n_loc < 1024".into(),
            ));
        }
        let (d0, d1) = self.depth_range;
        if !(d0 < d1 && d0 > 0.0 && d1.is_finite()) {
            return Err(CodecError::InvalidConfig(format!(
                "depth range ({d0}, {d1}) must satisfy 0 < d_min < d_max"
            )));
        }
        let b = &self.position_range;
        if (0..3).any(|i| !(b.min[i] < b.max[i]) || !b.max[i].is_finite() || !b.min[i].is_finite()) {
            return Err(CodecError::InvalidConfig(
                "position box must have positive volume".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Slot {
    name: &'static str,
    kind: StepKind,
    /// Offset of the first bin within the token kind's index space.
    offset: u32,
    quantizer: Quantizer,
    /// Valid bin indices (before the offset).
    valid: Range<u32>,
}

impl Slot {
    fn band(&self) -> Range<u32> {
        let base = match self.kind {
            StepKind::Loc => 0,
            StepKind::Seg => LOC_TOKENS,
        };
        base + self.offset + self.valid.start..base + self.offset + self.valid.end
    }

    fn token(&self, bin: u32) -> Token {
        match self.kind {
            StepKind::Loc => Token::Loc((self.offset + bin) as u16),
            StepKind::Seg => Token::Seg((self.offset + bin) as u8),
        }
    }
}

/// Bidirectional pose ↔ token mapping for one [`CodecConfig`].
#[derive(Debug, Clone)]
pub struct Codec {
    cfg: CodecConfig,
    slots: [Slot; TOKENS_PER_KEYPOSE],
}

impl Codec {
    pub fn new(cfg: CodecConfig) -> Result<Self, CodecError> {
        cfg.validate()?;
        let n = cfg.n_loc;
        let third_offset = match cfg.depth_mode {
            DepthMode::SharedLoc => 0,
            DepthMode::SeparateBand => n,
        };
        let (names, ranges) = match cfg.frame {
            Frame::Image => (["u", "v", "depth"], [(0.0, 1.0), (0.0, 1.0), cfg.depth_range]),
            Frame::Robot => {
                let b = cfg.position_range;
                (
                    ["x", "y", "z"],
                    [(b.min[0], b.max[0]), (b.min[1], b.max[1]), (b.min[2], b.max[2])],
                )
            }
        };
        let loc = |i: usize, offset: u32| Slot {
            name: names[i],
            kind: StepKind::Loc,
            offset,
            quantizer: Quantizer::new(ranges[i].0, ranges[i].1, n),
            valid: 0..n,
        };
        let angle = Quantizer::new(ANGLE_MIN, ANGLE_MAX, SEG_TOKENS);
        let seg = |name, valid| Slot {
            name,
            kind: StepKind::Seg,
            offset: 0,
            quantizer: angle,
            valid,
        };
        let slots = [
            loc(0, 0),
            loc(1, 0),
            loc(2, third_offset),
            seg("angle_x", 0..SEG_TOKENS),
            seg("angle_y", PITCH_BAND),
            seg("angle_z", 0..SEG_TOKENS),
        ];
        Ok(Self { cfg, slots })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.cfg
    }

    /// Per-slot quantizers in token order.
    pub fn quantizers(&self) -> [Quantizer; TOKENS_PER_KEYPOSE] {
        std::array::from_fn(|i| self.slots[i].quantizer)
    }

    pub fn keypose_grammar(&self) -> Grammar {
        Grammar::new(
            self.slots
                .iter()
                .map(|s| GrammarStep {
                    kind: s.kind,
                    band: s.band(),
                })
                .collect(),
        )
    }

    pub fn trajectory_grammar(&self) -> Grammar {
        self.keypose_grammar().repeat(2)
    }

    /// Token for a camera depth (image frame) or z coordinate (robot frame).
    pub fn depth_bin(&self, d: f64) -> Result<Token, CodecError> {
        let slot = &self.slots[2];
        Ok(slot.token(slot.quantizer.encode(d, slot.name)?))
    }

    /// Frame coordinates `(p0, p1, p2, angle_x, angle_y, angle_z)` of a pose.
    pub fn coordinates(
        &self,
        pose: &Pose6D,
        cam: Option<&CameraModel>,
    ) -> Result<[f64; TOKENS_PER_KEYPOSE], CodecError> {
        let (p, q) = match self.cfg.frame {
            Frame::Image => {
                let a = cam.ok_or(CodecError::MissingCamera)?.project(pose)?;
                ([a.u, a.v, a.depth], a.orientation)
            }
            Frame::Robot => {
                let p = pose.position();
                ([p.x, p.y, p.z], *pose.orientation())
            }
        };
        let e = EulerXyz::from_quaternion(&q);
        Ok([p[0], p[1], p[2], e.x, e.y, e.z])
    }

    /// Inverse of [`Codec::coordinates`].
    pub fn pose_from_coordinates(
        &self,
        c: &[f64; TOKENS_PER_KEYPOSE],
        cam: Option<&CameraModel>,
    ) -> Result<Pose6D, CodecError> {
        let q = EulerXyz::new(c[3], c[4], c[5]).to_quaternion();
        match self.cfg.frame {
            Frame::Image => {
                let action = ImageAction {
                    u: c[0],
                    v: c[1],
                    depth: c[2],
                    orientation: q,
                };
                Ok(cam.ok_or(CodecError::MissingCamera)?.unproject(&action)?)
            }
            Frame::Robot => Ok(Pose6D::new(Vector3::new(c[0], c[1], c[2]), q)),
        }
    }

    pub fn encode_coordinates(&self, c: &[f64; TOKENS_PER_KEYPOSE]) -> Result<TokenSequence, CodecError> {
        let mut out = Vec::with_capacity(TOKENS_PER_KEYPOSE);
        for (slot, &value) in self.slots.iter().zip(c) {
            let bin = slot.quantizer.encode(value, slot.name)?;
            // Only the gimbal-lock pitch of exactly +90° lands past the band.
            let bin = bin.clamp(slot.valid.start, slot.valid.end - 1);
            out.push(slot.token(bin));
        }
        Ok(TokenSequence(out))
    }

    pub fn decode_coordinates(&self, tokens: &[Token]) -> Result<[f64; TOKENS_PER_KEYPOSE], CodecError> {
        let ids: Vec<u32> = tokens.iter().map(|t| t.id()).collect();
        self.keypose_grammar().check(&ids)?;
        let mut c = [0.0; TOKENS_PER_KEYPOSE];
        for (i, (slot, tok)) in self.slots.iter().zip(tokens).enumerate() {
            let idx = match *tok {
                Token::Loc(k) => k as u32,
                Token::Seg(k) => k as u32,
            };
            c[i] = slot.quantizer.decode(idx - slot.offset);
        }
        Ok(c)
    }

    pub fn encode_pose(&self, pose: &Pose6D, cam: Option<&CameraModel>) -> Result<TokenSequence, CodecError> {
        self.encode_coordinates(&self.coordinates(pose, cam)?)
    }

    pub fn decode_pose(&self, tokens: &[Token], cam: Option<&CameraModel>) -> Result<Pose6D, CodecError> {
        self.pose_from_coordinates(&self.decode_coordinates(tokens)?, cam)
    }

    pub fn encode_keypose(&self, kp: &Keypose, cam: Option<&CameraModel>) -> Result<TokenSequence, CodecError> {
        self.encode_pose(&kp.pose, cam)
    }

    pub fn decode_keypose(
        &self,
        tokens: &[Token],
        cam: Option<&CameraModel>,
        gripper: Gripper,
    ) -> Result<Keypose, CodecError> {
        Ok(Keypose {
            pose: self.decode_pose(tokens, cam)?,
            gripper,
        })
    }

    /// Robot state uses exactly the keypose encoding.
    pub fn encode_robot_state(&self, pose: &Pose6D, cam: Option<&CameraModel>) -> Result<TokenSequence, CodecError> {
        self.encode_pose(pose, cam)
    }

    pub fn decode_robot_state(&self, tokens: &[Token], cam: Option<&CameraModel>) -> Result<Pose6D, CodecError> {
        self.decode_pose(tokens, cam)
    }

    pub fn encode_trajectory(&self, traj: &Trajectory, cam: Option<&CameraModel>) -> Result<TokenSequence, CodecError> {
        let mut out = self.encode_pose(traj.grasp(), cam)?.0;
        out.extend(self.encode_pose(traj.release(), cam)?.0);
        Ok(TokenSequence(out))
    }

    pub fn decode_trajectory(&self, tokens: &[Token], cam: Option<&CameraModel>) -> Result<Trajectory, CodecError> {
        let ids: Vec<u32> = tokens.iter().map(|t| t.id()).collect();
        self.trajectory_grammar().check(&ids)?;
        let (a, b) = tokens.split_at(TOKENS_PER_KEYPOSE);
        Ok(Trajectory::new(self.decode_pose(a, cam)?, self.decode_pose(b, cam)?))
    }
}
