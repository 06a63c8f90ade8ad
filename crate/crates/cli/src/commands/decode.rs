use std::path::PathBuf;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use keypose::codec::{Codec, CodecConfig, Frame, TokenSequence, TOKENS_PER_KEYPOSE};
use keypose::decoder::{
    decode_beam, decode_beam_nms, decode_greedy, decode_sampling, Beam, LogitDump, ReplayScorer, DEFAULT_WINDOW_LOC,
    DEFAULT_WINDOW_SEG,
};
use keypose::geometry::{CameraModel, Trajectory};

use super::{CodecArgs, ConfigArg};
use crate::config::{CmdResult, Failure, Layers};
use crate::io::JsonlWriter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Greedy,
    Sample,
    Beam,
    BeamNms,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[command(flatten)]
    config: ConfigArg,
    /// LGTD logit dump covering the 12 trajectory steps.
    #[arg(long)]
    dump: Option<PathBuf>,
    #[arg(long, value_enum)]
    strategy: Option<Strategy>,
    /// Beams to keep (beam, beam-nms) or samples to draw (sample).
    #[arg(long)]
    n: Option<usize>,
    /// Suppression window for loc steps (beam-nms).
    #[arg(long)]
    window_loc: Option<usize>,
    /// Suppression window for seg steps (beam-nms).
    #[arg(long)]
    window_seg: Option<usize>,
    /// Sampling temperature.
    #[arg(long)]
    temperature: Option<f64>,
    /// Sampling seed (default: $KEYPOSE_SEED, else 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Camera JSON used to lift image-frame tokens to world trajectories.
    #[arg(long)]
    camera: Option<PathBuf>,
    /// JSONL output (default stdout).
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    codec: CodecArgs,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    dump: Option<PathBuf>,
    strategy: Strategy,
    n: usize,
    window_loc: usize,
    window_seg: usize,
    temperature: f64,
    seed: u64,
    camera: Option<PathBuf>,
    output: Option<PathBuf>,
    codec: CodecConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dump: None,
            strategy: Strategy::BeamNms,
            n: 3,
            window_loc: DEFAULT_WINDOW_LOC,
            window_seg: DEFAULT_WINDOW_SEG,
            temperature: 1.0,
            seed: 0,
            camera: None,
            output: None,
            codec: CodecConfig::default(),
        }
    }
}

#[derive(Debug, Serialize)]
struct BeamLine {
    rank: usize,
    tokens: TokenSequence,
    log_prob: f64,
    coordinates: [[f64; TOKENS_PER_KEYPOSE]; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    trajectory: Option<Trajectory>,
}

pub fn run(a: Args) -> CmdResult<()> {
    let mut l = Layers::from_file(a.config.config.as_deref())?;
    l.set("dump", a.dump);
    l.set("strategy", a.strategy);
    l.set("n", a.n);
    l.set("window_loc", a.window_loc);
    l.set("window_seg", a.window_seg);
    l.set("temperature", a.temperature);
    l.set("seed", a.seed);
    l.set("camera", a.camera);
    l.set("output", a.output);
    a.codec.apply(&mut l, "codec");
    l.seed_from_env("seed")?;
    let cfg: RunConfig = l.build()?;
    let dump_path = cfg.dump.clone().ok_or_else(|| Failure::usage("--dump is required"))?;
    let codec = Codec::new(cfg.codec).map_err(Failure::usage)?;
    if cfg.n == 0 {
        return Err(Failure::usage("--n must be at least 1"));
    }
    if cfg.window_loc == 0 || cfg.window_seg == 0 {
        return Err(Failure::usage("NMS windows must be at least 1"));
    }
    let camera: Option<CameraModel> = match &cfg.camera {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::data(format!("cannot read camera {}: {e}", p.display())))?;
            Some(serde_json::from_str(&text).map_err(|e| Failure::data(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };

    let dump = LogitDump::read_file(&dump_path).map_err(|e| Failure::data(format!("{}: {e}", dump_path.display())))?;
    let grammar = codec.trajectory_grammar();
    let scorer = ReplayScorer::new(&dump, keypose::codec::VOCAB_SIZE)
        .map_err(|e| Failure::data(format!("{}: {e}", dump_path.display())))?;
    scorer.check_covers(&grammar).map_err(|_| {
        Failure::data(format!(
            "{}: dump has {} steps; step {} of the {}-token trajectory is missing",
            dump_path.display(),
            scorer.num_steps(),
            scorer.num_steps(),
            grammar.len()
        ))
    })?;
    let beams: Vec<Beam> = match cfg.strategy {
        Strategy::Greedy => vec![decode_greedy(&scorer, &grammar).map_err(Failure::data)?],
        Strategy::Sample => {
            decode_sampling(&scorer, &grammar, cfg.temperature, cfg.seed, cfg.n).map_err(Failure::usage)?
        }
        Strategy::Beam => decode_beam(&scorer, &grammar, cfg.n).map_err(Failure::data)?,
        Strategy::BeamNms => decode_beam_nms(
            &scorer,
            &grammar,
            cfg.n,
            keypose::decoder::NmsWindows {
                loc: cfg.window_loc,
                seg: cfg.window_seg,
            },
        )
        .map_err(Failure::data)?,
    };

    let lift = codec.config().frame == Frame::Robot || camera.is_some();
    let mut out = JsonlWriter::create(cfg.output.as_ref())?;
    out.write(&serde_json::json!({ "config": cfg }))?;
    for (rank, beam) in beams.into_iter().enumerate() {
        let tokens = TokenSequence::from_ids(&beam.tokens).map_err(Failure::data)?;
        let (a, b) = tokens.0.split_at(TOKENS_PER_KEYPOSE);
        let coordinates = [
            codec.decode_coordinates(a).map_err(Failure::data)?,
            codec.decode_coordinates(b).map_err(Failure::data)?,
        ];
        let trajectory = if lift {
            Some(
                codec
                    .decode_trajectory(&tokens.0, camera.as_ref())
                    .map_err(Failure::data)?,
            )
        } else {
            None
        };
        out.write(&BeamLine {
            rank,
            tokens,
            log_prob: beam.log_prob,
            coordinates,
            trajectory,
        })?;
    }
    out.finish()
}
