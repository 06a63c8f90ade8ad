//! Synthetic scorers with smooth, multi-peaked per-step distributions.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{logsumexp, DecodeError, Scorer};
use crate::codec::Grammar;

/// One Gaussian-shaped mode over the token axis, in bins relative to the
/// start of the step's valid band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub center: f64,
    pub width: f64,
    pub weight: f64,
}

impl Mode {
    pub fn new(center: f64, width: f64, weight: f64) -> Self {
        Self { center, width, weight }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSpec {
    pub band: Range<u32>,
    pub modes: Vec<Mode>,
}

/// Per-step independent mixture scorer: the distribution at step `k` depends
/// only on `k`, never on the prefix tokens.
///
/// In-band log-probabilities are `log Σ w·exp(-(x-c)²/2σ²)`, normalized over
/// the band and computed in log space so tails never underflow into plateaus.
/// `off_band_mass` is spread uniformly over the rest of the vocabulary.
#[derive(Debug, Clone)]
pub struct SyntheticScorer {
    vocab_size: usize,
    steps: Vec<StepSpec>,
    off_band_mass: f64,
    tables: Vec<Vec<f64>>,
}

impl SyntheticScorer {
    pub fn new(vocab_size: usize, steps: Vec<StepSpec>, off_band_mass: f64) -> Self {
        assert!((0.0..1.0).contains(&off_band_mass));
        let tables = steps
            .iter()
            .map(|s| build_table(vocab_size, s, off_band_mass))
            .collect();
        Self {
            vocab_size,
            steps,
            off_band_mass,
            tables,
        }
    }

    /// Random unimodal scorer over `grammar`: each step gets one mode with a
    /// center inside the band and a width of 2–8% of the band.
    pub fn random_unimodal(grammar: &Grammar, vocab_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let steps = grammar
            .steps()
            .iter()
            .map(|s| {
                let len = (s.band.end - s.band.start) as f64;
                StepSpec {
                    band: s.band.clone(),
                    modes: vec![Mode::new(
                        rng.gen_range(0.0..len - 1.0),
                        rng.gen_range(0.02..0.08) * len,
                        1.0,
                    )],
                }
            })
            .collect();
        Self::new(vocab_size, steps, 0.0)
    }

    /// Replaces the modes at one step.
    pub fn with_modes(mut self, step: usize, modes: Vec<Mode>) -> Self {
        self.steps[step].modes = modes;
        self.tables[step] = build_table(self.vocab_size, &self.steps[step], self.off_band_mass);
        self
    }

    pub fn steps(&self) -> &[StepSpec] {
        &self.steps
    }
}

fn build_table(vocab_size: usize, spec: &StepSpec, off_band_mass: f64) -> Vec<f64> {
    let band = spec.band.start as usize..spec.band.end as usize;
    let raw: Vec<f64> = (0..band.len())
        .map(|x| {
            let terms = spec.modes.iter().map(|m| {
                let z = (x as f64 - m.center) / m.width;
                m.weight.ln() - 0.5 * z * z
            });
            logsumexp(terms)
        })
        .collect();
    let norm = logsumexp(raw.iter().copied());
    let off_count = vocab_size - band.len();
    let in_scale = if off_count == 0 {
        0.0
    } else {
        (1.0 - off_band_mass).ln()
    };
    let off_lp = if off_band_mass > 0.0 && off_count > 0 {
        off_band_mass.ln() - (off_count as f64).ln()
    } else {
        f64::NEG_INFINITY
    };
    let mut table = vec![off_lp; vocab_size];
    for (k, v) in raw.into_iter().enumerate() {
        table[band.start + k] = v - norm + in_scale;
    }
    table
}

impl Scorer for SyntheticScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn score(&self, prefix: &[u32]) -> Result<Vec<f64>, DecodeError> {
        self.tables
            .get(prefix.len())
            .cloned()
            .ok_or(DecodeError::StepOutOfRange {
                step: prefix.len(),
                num_steps: self.tables.len(),
            })
    }
}
