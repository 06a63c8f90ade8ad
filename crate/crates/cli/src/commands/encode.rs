use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use keypose::codec::{Codec, CodecConfig, CodecError, TokenSequence, TOKENS_PER_KEYPOSE};
use keypose::geometry::{CameraModel, Trajectory};

use super::{CodecArgs, ConfigArg};
use crate::config::{CmdResult, Failure, Layers};
use crate::io::{from_line, read_jsonl, JsonlWriter};

#[derive(Debug, clap::Args)]
pub struct Args {
    #[command(flatten)]
    config: ConfigArg,
    /// JSONL input (`-` for stdin). Lines carrying a `trajectory` are encoded;
    /// lines carrying only a `tokens` string are decoded. An optional
    /// `camera` is required in the image frame. Dataset records work as-is.
    #[arg(long)]
    input: Option<PathBuf>,
    /// JSONL output (default stdout).
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    codec: CodecArgs,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    input: Option<PathBuf>,
    output: Option<PathBuf>,
    codec: CodecConfig,
}

#[derive(Debug, Deserialize)]
struct InputLine {
    #[serde(default)]
    id: Option<Value>,
    #[serde(default)]
    scene_id: Option<u64>,
    #[serde(default)]
    trajectory: Option<Trajectory>,
    #[serde(default)]
    tokens: Option<Value>,
    #[serde(default)]
    camera: Option<CameraModel>,
}

#[derive(Debug, Serialize)]
struct OutputLine {
    id: Value,
    tokens: TokenSequence,
    /// Bin-center coordinates per keypose in the codec frame.
    coordinates: [[f64; TOKENS_PER_KEYPOSE]; 2],
    /// Reconstructed trajectory (bin centers, lifted through the camera in
    /// the image frame).
    trajectory: Trajectory,
}

pub fn run(a: Args) -> CmdResult<()> {
    let mut l = Layers::from_file(a.config.config.as_deref())?;
    l.set("input", a.input);
    l.set("output", a.output);
    a.codec.apply(&mut l, "codec");
    let cfg: RunConfig = l.build()?;
    let input = cfg.input.clone().ok_or_else(|| Failure::usage("--input is required"))?;
    let codec = Codec::new(cfg.codec).map_err(Failure::usage)?;

    let lines = read_jsonl(&input)?;
    let mut out = JsonlWriter::create(cfg.output.as_ref())?;
    out.write(&serde_json::json!({ "config": cfg }))?;
    for (line_no, v) in lines {
        let line: InputLine = from_line(&input, line_no, v)?;
        let at = |e: CodecError| Failure::data(format!("{}:{line_no}: {e}", input.display()));
        let id = line
            .id
            .or(line.scene_id.map(Value::from))
            .unwrap_or(Value::from(line_no));
        let cam = line.camera.as_ref();
        let tokens = match (&line.trajectory, &line.tokens) {
            (Some(t), _) => codec.encode_trajectory(t, cam).map_err(at)?,
            (None, Some(Value::String(s))) => s.parse::<TokenSequence>().map_err(at)?,
            _ => {
                return Err(Failure::data(format!(
                    "{}:{line_no}: expected a \"trajectory\" or a \"tokens\" string",
                    input.display()
                )))
            }
        };
        let trajectory = codec.decode_trajectory(&tokens.0, cam).map_err(at)?;
        let (a, b) = tokens.0.split_at(TOKENS_PER_KEYPOSE);
        let coordinates = [
            codec.decode_coordinates(a).map_err(at)?,
            codec.decode_coordinates(b).map_err(at)?,
        ];
        out.write(&OutputLine {
            id,
            tokens,
            coordinates,
            trajectory,
        })?;
    }
    out.finish()
}
