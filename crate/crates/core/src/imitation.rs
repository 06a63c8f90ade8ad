//! One-shot imitation: task identities, demo–query pair sampling and prompt
//! assembly/parsing.
//!
//! Text prompts are line-oriented:
//!
//! ```text
//! <demo_img:images/000001_rgb.png>
//! <loc0512><loc0498><loc0300> <seg010><seg064><seg100>
//! <loc0243><loc0423><loc0751> <seg063><seg079><seg112> <loc0403>...
//! <live_img:images/000007_rgb.png>
//! <loc0500><loc0480><loc0310> <seg012><seg060><seg101>
//! <target>
//! <loc0354><loc0050><loc0772> <seg045><seg067><seg071> <loc0314>...
//! ```
//!
//! i.e. demo image, demo robot state, demo trajectory, live image, live
//! robot state, then the target trajectory. Language prompts replace the
//! demo block by an instruction line after the live robot state.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Codec, CodecError, TokenSequence, TOKENS_PER_KEYPOSE, TOKENS_PER_TRAJECTORY};
use crate::scenegen::{parse_asset_names, AssetSpec, DatasetRecord};

#[derive(Debug, Error)]
pub enum ImitationError {
    #[error("scene {scene_id}: unparseable instruction {instruction:?}")]
    UnparseableInstruction { scene_id: u64, instruction: String },
    #[error("requested {requested} pairs but only {available} ordered same-task pairs exist")]
    InsufficientPairs { requested: usize, available: usize },
    #[error("scene {scene_id}: missing {field}")]
    MissingField { scene_id: u64, field: &'static str },
    #[error("invalid pair: demo and query are both scene {0}")]
    InvalidPair(u64),
    #[error("duplicate scene id {0}")]
    DuplicateScene(u64),
    #[error("unknown scene id {0}")]
    UnknownScene(u64),
    #[error("scene {scene_id}: {what} cannot be embedded in a prompt: {value:?}")]
    Unembeddable {
        scene_id: u64,
        what: &'static str,
        value: String,
    },
    #[error("prompt line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    /// Source placed on top of target.
    On,
}

/// Task identity shared by both members of a pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKey {
    Clevr {
        source: AssetSpec,
        target: AssetSpec,
        relation: Relation,
    },
    /// Instructions that name no known asset match by exact (trimmed) text.
    FreeText(String),
}

impl fmt::Display for TaskKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKey::Clevr { source, target, .. } => write!(f, "{source} -> on -> {target}"),
            TaskKey::FreeText(s) => write!(f, "text:{s}"),
        }
    }
}

/// Two object names give a CLEVR key (first mentioned is the source); no
/// known name gives a free-text key; empty text or one/three-plus names is
/// unparseable.
pub fn parse_task_key(instruction: &str) -> Option<TaskKey> {
    let text = instruction.trim();
    if text.is_empty() {
        return None;
    }
    match parse_asset_names(text).as_slice() {
        [] => Some(TaskKey::FreeText(text.to_string())),
        [source, target] => Some(TaskKey::Clevr {
            source: *source,
            target: *target,
            relation: Relation::On,
        }),
        _ => None,
    }
}

/// Task → scene ids, plus the records that could not be keyed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskIndex {
    buckets: BTreeMap<TaskKey, Vec<u64>>,
    skipped: Vec<u64>,
}

impl TaskIndex {
    pub fn buckets(&self) -> &BTreeMap<TaskKey, Vec<u64>> {
        &self.buckets
    }

    /// Scene ids whose instruction was missing or unparseable.
    pub fn skipped(&self) -> &[u64] {
        &self.skipped
    }

    pub fn num_indexed(&self) -> usize {
        self.buckets.values().map(Vec::len).sum()
    }

    /// Number of ordered (demo, query) pairs with demo ≠ query.
    pub fn num_pairs(&self) -> usize {
        self.buckets.values().map(|b| b.len() * b.len().saturating_sub(1)).sum()
    }
}

/// Groups records by task. Scene ids keep record order inside a bucket.
pub fn build_task_index(records: &[DatasetRecord]) -> Result<TaskIndex, ImitationError> {
    let mut index = TaskIndex::default();
    let mut seen = std::collections::HashSet::new();
    for r in records {
        if !seen.insert(r.scene_id) {
            return Err(ImitationError::DuplicateScene(r.scene_id));
        }
        match r.instruction.as_deref().and_then(parse_task_key) {
            Some(key) => index.buckets.entry(key).or_default().push(r.scene_id),
            None => index.skipped.push(r.scene_id),
        }
    }
    Ok(index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairIds {
    pub demo: u64,
    pub query: u64,
}

/// Draws `k` distinct ordered same-task pairs uniformly without
/// replacement. Deterministic per seed.
pub fn sample_pairs(index: &TaskIndex, k: usize, seed: u64) -> Result<Vec<PairIds>, ImitationError> {
    let available = index.num_pairs();
    if k > available {
        return Err(ImitationError::InsufficientPairs {
            requested: k,
            available,
        });
    }
    let buckets: Vec<&Vec<u64>> = index.buckets.values().filter(|b| b.len() >= 2).collect();
    // ends[i] = number of pairs in buckets 0..=i.
    let ends: Vec<usize> = buckets
        .iter()
        .scan(0, |acc, b| {
            *acc += b.len() * (b.len() - 1);
            Some(*acc)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, available, k)
        .into_iter()
        .map(|g| {
            let bi = ends.partition_point(|&e| e <= g);
            let start = if bi == 0 { 0 } else { ends[bi - 1] };
            let bucket = buckets[bi];
            let m = bucket.len();
            let local = g - start;
            let demo = local / (m - 1);
            let q = local % (m - 1);
            let query = if q < demo { q } else { q + 1 };
            PairIds {
                demo: bucket[demo],
                query: bucket[query],
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy)]
pub struct PairSample<'a> {
    pub demo: &'a DatasetRecord,
    pub query: &'a DatasetRecord,
}

/// Scene id → record lookup.
pub struct RecordLookup<'a> {
    by_id: HashMap<u64, &'a DatasetRecord>,
}

impl<'a> RecordLookup<'a> {
    pub fn new(records: &'a [DatasetRecord]) -> Self {
        Self {
            by_id: records.iter().map(|r| (r.scene_id, r)).collect(),
        }
    }

    pub fn get(&self, id: u64) -> Result<&'a DatasetRecord, ImitationError> {
        self.by_id.get(&id).copied().ok_or(ImitationError::UnknownScene(id))
    }

    pub fn pair(&self, ids: PairIds) -> Result<PairSample<'a>, ImitationError> {
        Ok(PairSample {
            demo: self.get(ids.demo)?,
            query: self.get(ids.query)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoBlock {
    pub image: String,
    pub state: TokenSequence,
    pub trajectory: TokenSequence,
}

/// A fully assembled prompt and its target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demo: Option<DemoBlock>,
    pub live_image: String,
    pub live_state: TokenSequence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    pub target: TokenSequence,
}

/// One JSONL line of assembled prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demo_scene_id: Option<u64>,
    pub query_scene_id: u64,
    pub prompt: Prompt,
    pub text: String,
}

const DEMO_IMG: &str = "<demo_img:";
const LIVE_IMG: &str = "<live_img:";
const TARGET: &str = "<target>";

/// Image reference of a record: its RGB path, or `scene:<id>` for records
/// without images.
pub fn image_ref(r: &DatasetRecord) -> String {
    r.rgb
        .as_ref()
        .map(|i| i.path.clone())
        .unwrap_or_else(|| format!("scene:{}", r.scene_id))
}

fn check_line(scene_id: u64, what: &'static str, value: &str, allow_gt: bool) -> Result<(), ImitationError> {
    let bad = value.is_empty()
        || value.contains(['\n', '\r'])
        || (!allow_gt && value.contains('>'))
        || value.trim() != value
        || value.starts_with('<');
    if bad {
        return Err(ImitationError::Unembeddable {
            scene_id,
            what,
            value: value.to_string(),
        });
    }
    Ok(())
}

/// State and trajectory tokens of a record under `codec`.
fn record_tokens(r: &DatasetRecord, codec: &Codec) -> Result<(TokenSequence, TokenSequence), ImitationError> {
    let id = r.scene_id;
    let missing = |field| ImitationError::MissingField { scene_id: id, field };
    let cam = match codec.config().frame {
        crate::codec::Frame::Image => Some(r.camera.as_ref().ok_or(missing("camera"))?),
        crate::codec::Frame::Robot => None,
    };
    let traj = r.trajectory.as_ref().ok_or(missing("trajectory"))?;
    let state = r.robot_state.as_ref().ok_or(missing("robot_state"))?;
    Ok((
        codec.encode_robot_state(state, cam)?,
        codec.encode_trajectory(traj, cam)?,
    ))
}

/// `<demo img> <demo state> <demo trajectory> <live img> <live state>` →
/// query trajectory. No language is included.
pub fn assemble_imitation_prompt(pair: PairSample<'_>, codec: &Codec) -> Result<Prompt, ImitationError> {
    if pair.demo.scene_id == pair.query.scene_id {
        return Err(ImitationError::InvalidPair(pair.demo.scene_id));
    }
    let (demo_state, demo_traj) = record_tokens(pair.demo, codec)?;
    let (live_state, target) = record_tokens(pair.query, codec)?;
    let demo_image = image_ref(pair.demo);
    let live_image = image_ref(pair.query);
    check_line(pair.demo.scene_id, "image path", &demo_image, false)?;
    check_line(pair.query.scene_id, "image path", &live_image, false)?;
    Ok(Prompt {
        demo: Some(DemoBlock {
            image: demo_image,
            state: demo_state,
            trajectory: demo_traj,
        }),
        live_image,
        live_state,
        instruction: None,
        target,
    })
}

/// `<live img> <live state> <instruction>` → trajectory.
pub fn assemble_language_prompt(record: &DatasetRecord, codec: &Codec) -> Result<Prompt, ImitationError> {
    let instruction = record.instruction.clone().ok_or(ImitationError::MissingField {
        scene_id: record.scene_id,
        field: "instruction",
    })?;
    check_line(record.scene_id, "instruction", &instruction, true)?;
    let (live_state, target) = record_tokens(record, codec)?;
    let live_image = image_ref(record);
    check_line(record.scene_id, "image path", &live_image, false)?;
    Ok(Prompt {
        demo: None,
        live_image,
        live_state,
        instruction: Some(instruction),
        target,
    })
}

impl Prompt {
    /// Line-oriented text serialization (see the module docs).
    pub fn to_text(&self) -> String {
        let mut lines = Vec::new();
        if let Some(d) = &self.demo {
            lines.push(format!("{DEMO_IMG}{}>", d.image));
            lines.push(d.state.to_string());
            lines.push(d.trajectory.to_string());
        }
        lines.push(format!("{LIVE_IMG}{}>", self.live_image));
        lines.push(self.live_state.to_string());
        if let Some(i) = &self.instruction {
            lines.push(i.clone());
        }
        lines.push(TARGET.to_string());
        lines.push(self.target.to_string());
        let mut s = lines.join("\n");
        s.push('\n');
        s
    }

    /// Prompt text without the target section: the model input.
    pub fn input_text(&self) -> String {
        let full = self.to_text();
        let cut = full.find(&format!("\n{TARGET}\n")).expect("target sentinel present");
        full[..=cut].to_string()
    }

    /// Inverse of [`Prompt::to_text`].
    pub fn parse(text: &str) -> Result<Prompt, ImitationError> {
        let lines: Vec<&str> = text.lines().collect();
        let mut pos = 0;
        let err = |line: usize, reason: String| ImitationError::Parse { line: line + 1, reason };
        let next = |pos: &mut usize| -> Result<&str, ImitationError> {
            let l = lines
                .get(*pos)
                .copied()
                .ok_or_else(|| err(*pos, "unexpected end of prompt".into()))?;
            *pos += 1;
            Ok(l)
        };
        let sentinel = |line: &str, at: usize, prefix: &str| -> Result<String, ImitationError> {
            line.strip_prefix(prefix)
                .and_then(|r| r.strip_suffix('>'))
                .filter(|p| !p.is_empty() && !p.contains('>'))
                .map(str::to_string)
                .ok_or_else(|| err(at, format!("expected {prefix}PATH>, found {line:?}")))
        };
        let tokens = |line: &str, at: usize, expected: usize| -> Result<TokenSequence, ImitationError> {
            let seq: TokenSequence = line.parse().map_err(|e| err(at, format!("{e}")))?;
            if seq.len() != expected {
                return Err(err(at, format!("expected {expected} tokens, found {}", seq.len())));
            }
            Ok(seq)
        };
        let first = next(&mut pos)?;
        let demo = if first.starts_with(DEMO_IMG) {
            let image = sentinel(first, 0, DEMO_IMG)?;
            let state = tokens(next(&mut pos)?, 1, TOKENS_PER_KEYPOSE)?;
            let trajectory = tokens(next(&mut pos)?, 2, TOKENS_PER_TRAJECTORY)?;
            Some(DemoBlock {
                image,
                state,
                trajectory,
            })
        } else {
            pos = 0;
            None
        };
        let at = pos;
        let live_image = sentinel(next(&mut pos)?, at, LIVE_IMG)?;
        let at = pos;
        let live_state = tokens(next(&mut pos)?, at, TOKENS_PER_KEYPOSE)?;
        let at = pos;
        let line = next(&mut pos)?;
        let instruction = if line == TARGET {
            None
        } else {
            let at = pos;
            if next(&mut pos)? != TARGET {
                return Err(err(at, format!("expected {TARGET}")));
            }
            Some(line.to_string())
        };
        if demo.is_some() == instruction.is_some() {
            return Err(err(
                at,
                "prompt needs exactly one of a demonstration or an instruction".into(),
            ));
        }
        let at = pos;
        let target = tokens(next(&mut pos)?, at, TOKENS_PER_TRAJECTORY)?;
        if pos != lines.len() {
            return Err(err(pos, "trailing content after target".into()));
        }
        Ok(Prompt {
            demo,
            live_image,
            live_state,
            instruction,
            target,
        })
    }
}
