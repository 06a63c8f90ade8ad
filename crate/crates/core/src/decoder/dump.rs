//! LGTD logit dump files and teacher-forced replay scoring.
//!
//! Layout (little-endian):
//! - magic `b"LGTD"`
//! - version: u32 = 1
//! - vocab_size: u32
//! - num_steps: u32
//! - num_steps × vocab_size raw logits as f32, one row per step

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{log_softmax, DecodeError, Scorer};
use crate::codec::Grammar;

pub const MAGIC: &[u8; 4] = b"LGTD";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("bad magic {found:?} at byte 0, expected \"LGTD\"")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported version {version} at byte 4")]
    UnsupportedVersion { version: u32 },
    #[error("truncated header: file has {len} bytes, header needs {HEADER_LEN}")]
    TruncatedHeader { len: usize },
    #[error("truncated data: step {step} of {num_steps} missing (needs bytes {offset}..{end}, file has {len})")]
    Truncated {
        step: usize,
        num_steps: usize,
        offset: usize,
        end: usize,
        len: usize,
    },
    #[error("{extra} trailing bytes after the last step at byte {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("non-finite logit at step {step}, index {index} (byte {offset})")]
    NonFiniteLogit { step: usize, index: usize, offset: usize },
    #[error("logit matrix shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-step raw logits over a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitDump {
    vocab_size: usize,
    rows: Vec<Vec<f32>>,
}

impl LogitDump {
    pub fn new(vocab_size: usize, rows: Vec<Vec<f32>>) -> Result<Self, DumpError> {
        for (step, row) in rows.iter().enumerate() {
            if row.len() != vocab_size {
                return Err(DumpError::Shape(format!(
                    "step {step} has {} logits, vocab size is {vocab_size}",
                    row.len()
                )));
            }
            if let Some(index) = row.iter().position(|v| !v.is_finite()) {
                return Err(DumpError::NonFiniteLogit {
                    step,
                    index,
                    offset: HEADER_LEN + 4 * (step * vocab_size + index),
                });
            }
        }
        Ok(Self { vocab_size, rows })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn num_steps(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f32>] {
        &self.rows
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.vocab_size * self.rows.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.vocab_size as u32).to_le_bytes());
        out.extend_from_slice(&(self.rows.len() as u32).to_le_bytes());
        for row in &self.rows {
            for v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DumpError> {
        let len = bytes.len();
        if len < 4 || &bytes[..4] != MAGIC {
            return Err(DumpError::BadMagic {
                found: bytes[..len.min(4)].to_vec(),
            });
        }
        if len < HEADER_LEN {
            return Err(DumpError::TruncatedHeader { len });
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = word(4);
        if version != VERSION {
            return Err(DumpError::UnsupportedVersion { version });
        }
        let vocab_size = word(8) as usize;
        let num_steps = word(12) as usize;
        let row_bytes = 4 * vocab_size;
        let mut rows = Vec::with_capacity(num_steps);
        for step in 0..num_steps {
            let offset = HEADER_LEN + step * row_bytes;
            let end = offset + row_bytes;
            if end > len {
                return Err(DumpError::Truncated {
                    step,
                    num_steps,
                    offset,
                    end,
                    len,
                });
            }
            let row: Vec<f32> = bytes[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if let Some(index) = row.iter().position(|v| !v.is_finite()) {
                return Err(DumpError::NonFiniteLogit {
                    step,
                    index,
                    offset: offset + 4 * index,
                });
            }
            rows.push(row);
        }
        let expected = HEADER_LEN + num_steps * row_bytes;
        if len > expected {
            return Err(DumpError::TrailingBytes {
                offset: expected,
                extra: len - expected,
            });
        }
        Ok(Self { vocab_size, rows })
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, DumpError> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), DumpError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

/// Replays a dump: step `k` log-probabilities are returned for any prefix of
/// length `k`, regardless of the prefix content.
#[derive(Debug, Clone)]
pub struct ReplayScorer {
    vocab_size: usize,
    log_probs: Vec<Vec<f64>>,
}

impl ReplayScorer {
    /// Fails with `VocabMismatch` unless the dump's vocabulary is `expected_vocab`.
    pub fn new(dump: &LogitDump, expected_vocab: usize) -> Result<Self, DecodeError> {
        if dump.vocab_size() != expected_vocab {
            return Err(DecodeError::VocabMismatch {
                expected: expected_vocab,
                found: dump.vocab_size(),
            });
        }
        let log_probs = dump
            .rows()
            .iter()
            .map(|row| log_softmax(row.iter().map(|&v| v as f64)))
            .collect();
        Ok(Self {
            vocab_size: dump.vocab_size(),
            log_probs,
        })
    }

    pub fn num_steps(&self) -> usize {
        self.log_probs.len()
    }

    /// Checks that the dump covers every step of `grammar`.
    pub fn check_covers(&self, grammar: &Grammar) -> Result<(), DecodeError> {
        if self.num_steps() < grammar.len() {
            return Err(DecodeError::StepOutOfRange {
                step: self.num_steps(),
                num_steps: self.num_steps(),
            });
        }
        Ok(())
    }
}

impl Scorer for ReplayScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn score(&self, prefix: &[u32]) -> Result<Vec<f64>, DecodeError> {
        self.log_probs
            .get(prefix.len())
            .cloned()
            .ok_or(DecodeError::StepOutOfRange {
                step: prefix.len(),
                num_steps: self.log_probs.len(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn golden() -> LogitDump {
        LogitDump::new(4, vec![vec![0.0, 1.0, -1.0, 2.5], vec![0.5, 0.25, 3.0, -2.0]]).unwrap()
    }

    #[test]
    fn golden_bytes() {
        let bytes = golden().to_bytes();
        assert_eq!(bytes.len(), 16 + 32);
        let mut expected = b"LGTD".to_vec();
        for w in [1u32, 4, 2] {
            expected.extend_from_slice(&w.to_le_bytes());
        }
        for v in [0.0f32, 1.0, -1.0, 2.5, 0.5, 0.25, 3.0, -2.0] {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(bytes, expected);
        assert_eq!(&bytes[16..20], &[0, 0, 0, 0]);
        assert_eq!(&bytes[20..24], &[0x00, 0x00, 0x80, 0x3f]);
        assert_eq!(LogitDump::from_bytes(&bytes).unwrap(), golden());
    }

    #[test]
    fn empty_dump_is_header_only() {
        let d = LogitDump::new(1152, vec![]).unwrap();
        let bytes = d.to_bytes();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(LogitDump::from_bytes(&bytes).unwrap().num_steps(), 0);
    }

    #[test]
    fn truncated_names_missing_step() {
        let mut bytes = golden().to_bytes();
        bytes.truncate(16 + 20);
        match LogitDump::from_bytes(&bytes) {
            Err(DumpError::Truncated { step, offset, .. }) => {
                assert_eq!(step, 1);
                assert_eq!(offset, 32);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_errors() {
        assert!(matches!(
            LogitDump::from_bytes(b"LGTX\x01\0\0\0"),
            Err(DumpError::BadMagic { .. })
        ));
        assert!(matches!(
            LogitDump::from_bytes(b"LGTD\x01\0\0"),
            Err(DumpError::TruncatedHeader { .. })
        ));
        let mut bytes = golden().to_bytes();
        bytes[4] = 2;
        assert!(matches!(
            LogitDump::from_bytes(&bytes),
            Err(DumpError::UnsupportedVersion { version: 2 })
        ));
        let mut bytes = golden().to_bytes();
        bytes.push(0);
        assert!(matches!(
            LogitDump::from_bytes(&bytes),
            Err(DumpError::TrailingBytes { offset: 48, extra: 1 })
        ));
    }

    #[test]
    fn nan_rejected() {
        assert!(matches!(
            LogitDump::new(2, vec![vec![0.0, f32::NAN]]),
            Err(DumpError::NonFiniteLogit {
                step: 0,
                index: 1,
                offset: 20
            })
        ));
        let mut bytes = golden().to_bytes();
        bytes[16..20].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(
            LogitDump::from_bytes(&bytes),
            Err(DumpError::NonFiniteLogit { step: 0, index: 0, .. })
        ));
    }

    #[test]
    fn replay_normalizes_and_checks_vocab() {
        let s = ReplayScorer::new(&golden(), 4).unwrap();
        let lp = s.score(&[]).unwrap();
        let total: f64 = lp.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // Prefix content is ignored.
        assert_eq!(s.score(&[3]).unwrap(), s.score(&[0]).unwrap());
        assert!(matches!(
            s.score(&[0, 0]),
            Err(DecodeError::StepOutOfRange { step: 2, num_steps: 2 })
        ));
        assert!(matches!(
            ReplayScorer::new(&golden(), 1152),
            Err(DecodeError::VocabMismatch {
                expected: 1152,
                found: 4
            })
        ));
    }
}
