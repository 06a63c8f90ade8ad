//! Layered run configuration: command-line flags override the config file,
//! which overrides built-in defaults. `KEYPOSE_SEED` supplies the seed when
//! neither a flag nor the file sets one.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub const SEED_ENV: &str = "KEYPOSE_SEED";

/// Error classes that map onto process exit codes.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config keys or argument combinations (exit 1).
    Usage(anyhow::Error),
    /// Unreadable, malformed or inconsistent data, and I/O failures (exit 2).
    Data(anyhow::Error),
}

impl Failure {
    pub fn usage(msg: impl fmt::Display) -> Self {
        Failure::Usage(anyhow::anyhow!("{msg}"))
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        Failure::Data(anyhow::anyhow!("{msg}"))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(e) | Failure::Data(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

pub type CmdResult<T> = Result<T, Failure>;

/// A JSON object assembled from the config file and flag overrides.
pub struct Layers {
    value: Map<String, Value>,
}

impl Layers {
    /// Reads `path` as TOML (`.toml`) or JSON (anything else).
    pub fn from_file(path: Option<&Path>) -> CmdResult<Self> {
        let Some(path) = path else {
            return Ok(Self { value: Map::new() });
        };
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config file {}: {e}", path.display())))?;
        let value: Value = if path.extension().is_some_and(|e| e == "toml") {
            let t: toml::Value =
                toml::from_str(&text).map_err(|e| Failure::usage(format!("config file {}: {e}", path.display())))?;
            serde_json::to_value(t).map_err(|e| Failure::usage(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| Failure::usage(format!("config file {}: {e}", path.display())))?
        };
        match value {
            Value::Object(value) => Ok(Self { value }),
            _ => Err(Failure::usage(format!(
                "config file {} must hold a table",
                path.display()
            ))),
        }
    }

    /// Overrides the dotted `key` when the flag was given.
    pub fn set<T: Serialize>(&mut self, key: &str, flag: Option<T>) {
        let Some(v) = flag else { return };
        let v = serde_json::to_value(v).expect("flag values serialize");
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts.pop().expect("non-empty key");
        let mut obj = &mut self.value;
        for p in parts {
            let entry = obj.entry(p).or_insert_with(|| Value::Object(Map::new()));
            if !entry.is_object() {
                *entry = Value::Object(Map::new());
            }
            obj = entry.as_object_mut().expect("object");
        }
        obj.insert(last.to_string(), v);
    }

    pub fn set_flag(&mut self, key: &str, on: bool, value: bool) {
        if on {
            self.set(key, Some(value));
        }
    }

    /// Fills `key` from `KEYPOSE_SEED` if neither the file nor a flag set it.
    pub fn seed_from_env(&mut self, key: &str) -> CmdResult<()> {
        if self.value.contains_key(key) {
            return Ok(());
        }
        if let Ok(s) = std::env::var(SEED_ENV) {
            let seed: u64 = s
                .trim()
                .parse()
                .map_err(|_| Failure::usage(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
            self.value.insert(key.to_string(), Value::from(seed));
        }
        Ok(())
    }

    /// Deserializes the layered object over `T`'s defaults, rejecting keys
    /// that `T` does not know.
    pub fn build<T: DeserializeOwned + Serialize>(self) -> CmdResult<T> {
        let input = Value::Object(self.value);
        let cfg: T =
            serde_json::from_value(input.clone()).map_err(|e| Failure::usage(format!("invalid config: {e}")))?;
        let echoed = serde_json::to_value(&cfg).map_err(|e| Failure::usage(e.to_string()))?;
        if let Some(key) = unknown_key(&input, &echoed, "") {
            return Err(Failure::usage(format!("unknown config key {key:?}")));
        }
        Ok(cfg)
    }
}

fn unknown_key(input: &Value, known: &Value, prefix: &str) -> Option<String> {
    let (Value::Object(i), Value::Object(k)) = (input, known) else {
        return None;
    };
    for (name, v) in i {
        let path = if prefix.is_empty() {
            name.clone()
        } else {
            format!("{prefix}.{name}")
        };
        match k.get(name) {
            None => return Some(path),
            Some(kv) => {
                if let Some(p) = unknown_key(v, kv, &path) {
                    return Some(p);
                }
            }
        }
    }
    None
}

/// Parses `"x,y"`.
pub fn parse_point(s: &str) -> Result<[f64; 2], String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected x,y, got {s:?}"))?;
    let x = a.trim().parse().map_err(|_| format!("bad x in {s:?}"))?;
    let y = b.trim().parse().map_err(|_| format!("bad y in {s:?}"))?;
    Ok([x, y])
}

/// Parses a comma-separated float list.
pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("bad number {t:?}")))
        .collect()
}
