//! Decoding strategies over an abstract autoregressive scorer: greedy,
//! temperature sampling, beam search and beam search with per-step
//! non-maximum suppression. Every strategy masks tokens outside the
//! grammar's band at each step.

mod dump;
mod nms;
mod synthetic;

pub use dump::{DumpError, LogitDump, ReplayScorer, HEADER_LEN, MAGIC, VERSION};
pub use nms::{nms_1d, suppress_non_maxima, DEFAULT_WINDOW_LOC, DEFAULT_WINDOW_SEG};
pub use synthetic::{Mode, StepSpec, SyntheticScorer};

use std::cmp::Ordering;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Grammar, StepKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error("scorer failure: {0}")]
    ScorerFailure(String),
    #[error("scorer has no step {step} (only {num_steps} steps available)")]
    StepOutOfRange { step: usize, num_steps: usize },
    #[error("vocabulary size mismatch: expected {expected}, found {found}")]
    VocabMismatch { expected: usize, found: usize },
    #[error("no token survives at step {step}")]
    DegenerateDistribution { step: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// An autoregressive model head: log-probabilities of the next token given a
/// prefix. Must be deterministic for a fixed prefix.
pub trait Scorer {
    fn vocab_size(&self) -> usize;

    fn score(&self, prefix: &[u32]) -> Result<Vec<f64>, DecodeError>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn score(&self, prefix: &[u32]) -> Result<Vec<f64>, DecodeError> {
        (**self).score(prefix)
    }
}

/// A decoded hypothesis; `log_prob` is the sum of the scorer's
/// log-probabilities of the chosen tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Beam {
    pub tokens: Vec<u32>,
    pub log_prob: f64,
}

impl Beam {
    fn empty() -> Self {
        Self {
            tokens: Vec::new(),
            log_prob: 0.0,
        }
    }
}

/// Suppression windows for beam-search-NMS, one per token kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NmsWindows {
    pub loc: usize,
    pub seg: usize,
}

impl Default for NmsWindows {
    fn default() -> Self {
        Self {
            loc: DEFAULT_WINDOW_LOC,
            seg: DEFAULT_WINDOW_SEG,
        }
    }
}

impl NmsWindows {
    fn for_kind(&self, kind: StepKind) -> usize {
        match kind {
            StepKind::Loc => self.loc,
            StepKind::Seg => self.seg,
        }
    }
}

pub(crate) fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn log_softmax(values: impl Iterator<Item = f64> + Clone) -> Vec<f64> {
    let norm = logsumexp(values.clone());
    values.map(|v| v - norm).collect()
}

fn score_checked<S: Scorer>(scorer: &S, prefix: &[u32]) -> Result<Vec<f64>, DecodeError> {
    let lp = scorer.score(prefix)?;
    if lp.len() != scorer.vocab_size() {
        return Err(DecodeError::VocabMismatch {
            expected: scorer.vocab_size(),
            found: lp.len(),
        });
    }
    Ok(lp)
}

fn check_grammar<S: Scorer>(scorer: &S, grammar: &Grammar) -> Result<(), DecodeError> {
    if grammar.is_empty() {
        return Err(DecodeError::InvalidArgument("grammar is empty".into()));
    }
    for s in grammar.steps() {
        if s.band.is_empty() || s.band.end as usize > scorer.vocab_size() {
            return Err(DecodeError::VocabMismatch {
                expected: s.band.end as usize,
                found: scorer.vocab_size(),
            });
        }
    }
    Ok(())
}

/// Argmax over grammar-valid tokens at every step; ties go to the lowest id.
pub fn decode_greedy<S: Scorer>(scorer: &S, grammar: &Grammar) -> Result<Beam, DecodeError> {
    check_grammar(scorer, grammar)?;
    let mut beam = Beam::empty();
    for (step, s) in grammar.steps().iter().enumerate() {
        let lp = score_checked(scorer, &beam.tokens)?;
        let mut best: Option<(u32, f64)> = None;
        for id in s.band.clone() {
            let v = lp[id as usize];
            if v > f64::NEG_INFINITY && best.is_none_or(|(_, b)| v > b) {
                best = Some((id, v));
            }
        }
        let (id, v) = best.ok_or(DecodeError::DegenerateDistribution { step })?;
        beam.tokens.push(id);
        beam.log_prob += v;
    }
    Ok(beam)
}

/// Draws `k` independent samples. Band logits are divided by `temperature`
/// and renormalized before sampling; the reported `log_prob` uses the
/// untempered scorer values.
pub fn decode_sampling<S: Scorer>(
    scorer: &S,
    grammar: &Grammar,
    temperature: f64,
    seed: u64,
    k: usize,
) -> Result<Vec<Beam>, DecodeError> {
    if !(temperature > 0.0) {
        return Err(DecodeError::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    check_grammar(scorer, grammar)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut beam = Beam::empty();
        for (step, s) in grammar.steps().iter().enumerate() {
            let lp = score_checked(scorer, &beam.tokens)?;
            let band = &lp[s.band.start as usize..s.band.end as usize];
            let max = band.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / temperature));
            if max == f64::NEG_INFINITY {
                return Err(DecodeError::DegenerateDistribution { step });
            }
            let weights: Vec<f64> = band.iter().map(|&v| (v / temperature - max).exp()).collect();
            let dist = WeightedIndex::new(&weights).map_err(|_| DecodeError::DegenerateDistribution { step })?;
            let k = dist.sample(&mut rng);
            beam.tokens.push(s.band.start + k as u32);
            beam.log_prob += band[k];
        }
        out.push(beam);
    }
    Ok(out)
}

/// Standard beam search with `n` beams, sorted by log-probability descending.
/// All hypotheses have the grammar's length, so no length normalization.
pub fn decode_beam<S: Scorer>(scorer: &S, grammar: &Grammar, n: usize) -> Result<Vec<Beam>, DecodeError> {
    beam_search(scorer, grammar, n, None)
}

/// Beam search where, at every step, each beam's band distribution is reduced
/// to its local maxima (window by token kind) before the top-`n` expansion.
/// May return fewer than `n` beams when fewer maxima exist.
pub fn decode_beam_nms<S: Scorer>(
    scorer: &S,
    grammar: &Grammar,
    n: usize,
    windows: NmsWindows,
) -> Result<Vec<Beam>, DecodeError> {
    if windows.loc == 0 || windows.seg == 0 {
        return Err(DecodeError::InvalidArgument("NMS windows must be ≥ 1".into()));
    }
    beam_search(scorer, grammar, n, Some(windows))
}

struct Candidate {
    total: f64,
    step_lp: f64,
    parent: usize,
    token: u32,
}

fn beam_search<S: Scorer>(
    scorer: &S,
    grammar: &Grammar,
    n: usize,
    nms: Option<NmsWindows>,
) -> Result<Vec<Beam>, DecodeError> {
    if n == 0 {
        return Err(DecodeError::InvalidArgument("beam count must be ≥ 1".into()));
    }
    check_grammar(scorer, grammar)?;
    let mut beams = vec![Beam::empty()];
    for (step, s) in grammar.steps().iter().enumerate() {
        let mut candidates = Vec::new();
        for (parent, beam) in beams.iter().enumerate() {
            let lp = score_checked(scorer, &beam.tokens)?;
            let mut band = lp[s.band.start as usize..s.band.end as usize].to_vec();
            if let Some(w) = nms {
                if suppress_non_maxima(&mut band, w.for_kind(s.kind)) == 0 {
                    return Err(DecodeError::DegenerateDistribution { step });
                }
            }
            for (k, &v) in band.iter().enumerate() {
                if v > f64::NEG_INFINITY {
                    candidates.push(Candidate {
                        total: beam.log_prob + v,
                        step_lp: v,
                        parent,
                        token: s.band.start + k as u32,
                    });
                }
            }
        }
        if candidates.is_empty() {
            return Err(DecodeError::DegenerateDistribution { step });
        }
        // Already ordered by (parent, token), so a stable sort on score keeps
        // that order among ties.
        candidates.sort_by(|a, b| b.total.partial_cmp(&a.total).unwrap_or(Ordering::Equal));
        beams = candidates
            .into_iter()
            .take(n)
            .map(|c| {
                let parent = &beams[c.parent];
                let mut tokens = Vec::with_capacity(parent.tokens.len() + 1);
                tokens.extend_from_slice(&parent.tokens);
                tokens.push(c.token);
                Beam {
                    tokens,
                    log_prob: parent.log_prob + c.step_lp,
                }
            })
            .collect();
    }
    Ok(beams)
}
