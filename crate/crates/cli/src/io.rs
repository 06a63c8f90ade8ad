//! JSONL input/output on files or stdin/stdout.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use serde_json::Value;

use crate::config::{CmdResult, Failure};

/// Reads non-empty JSONL lines from `path` (`-` is stdin) as `(line_no, value)`.
pub fn read_jsonl(path: &Path) -> CmdResult<Vec<(usize, Value)>> {
    let reader: Box<dyn BufRead> = if path == Path::new("-") {
        Box::new(BufReader::new(io::stdin()))
    } else {
        let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
        Box::new(BufReader::new(f))
    };
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| Failure::data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push((i + 1, v));
    }
    Ok(out)
}

/// Line-buffered JSONL sink: a file, or stdout when no path is given.
pub struct JsonlWriter {
    inner: Box<dyn Write>,
    path: String,
}

impl JsonlWriter {
    pub fn create(path: Option<&PathBuf>) -> CmdResult<Self> {
        match path {
            Some(p) if p != Path::new("-") => {
                if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
                }
                let f = File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
                Ok(Self {
                    inner: Box::new(BufWriter::new(f)),
                    path: p.display().to_string(),
                })
            }
            _ => Ok(Self {
                inner: Box::new(BufWriter::new(io::stdout().lock())),
                path: "<stdout>".into(),
            }),
        }
    }

    pub fn write<T: Serialize>(&mut self, value: &T) -> CmdResult<()> {
        let line = serde_json::to_string(value).context("serializing output")?;
        writeln!(self.inner, "{line}").with_context(|| format!("writing {}", self.path))?;
        Ok(())
    }

    pub fn finish(mut self) -> CmdResult<()> {
        self.inner.flush().with_context(|| format!("writing {}", self.path))?;
        Ok(())
    }
}

/// Prints one JSON line to stdout. A closed pipe (e.g. `| head`) is not
/// an error.
pub fn print_json<T: Serialize>(value: &T) -> CmdResult<()> {
    let line = serde_json::to_string(value).context("serializing output")?;
    let mut out = io::stdout().lock();
    match writeln!(out, "{line}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => {
            Err(anyhow::Error::new(e).context("writing <stdout>").into())
        }
        _ => Ok(()),
    }
}

/// Writes pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult<()> {
    let mut text = serde_json::to_string_pretty(value).context("serializing output")?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Parses one JSONL value into `T`, naming the line on failure.
pub fn from_line<T: serde::de::DeserializeOwned>(path: &Path, line: usize, v: Value) -> CmdResult<T> {
    serde_json::from_value(v).map_err(|e| Failure::data(format!("{}:{line}: {e}", path.display())))
}
