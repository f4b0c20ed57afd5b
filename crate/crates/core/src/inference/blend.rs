use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::InferenceError;

/// Age weighting for overlapping chunk predictions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightScheme {
    /// No averaging: the newest chunk is used as is.
    None,
    /// `1 / (i + 1)`.
    Inverse,
    /// `exp(−m · i)`.
    Exponential { m: f64 },
    /// `1 / log_base(i + 1)`; the base rescales every weight equally.
    InverseLog {
        #[serde(default = "e")]
        base: f64,
    },
}

fn e() -> f64 {
    std::f64::consts::E
}

pub const DEFAULT_DECAY: f64 = 0.05;

impl Default for WeightScheme {
    fn default() -> Self {
        WeightScheme::InverseLog { base: e() }
    }
}

impl WeightScheme {
    pub fn name(&self) -> &'static str {
        match self {
            WeightScheme::None => "none",
            WeightScheme::Inverse => "inverse",
            WeightScheme::Exponential { .. } => "exponential",
            WeightScheme::InverseLog { .. } => "inverse_log",
        }
    }

    /// Parses `none`, `inverse`, `inverse_log`, `exponential` or `exponential:<m>`.
    pub fn parse(text: &str) -> Result<Self, InferenceError> {
        let bad = || InferenceError::Scheme(text.to_string());
        match text {
            "none" => Ok(WeightScheme::None),
            "inverse" => Ok(WeightScheme::Inverse),
            "inverse_log" => Ok(WeightScheme::default()),
            "exponential" => Ok(WeightScheme::Exponential { m: DEFAULT_DECAY }),
            other => {
                let m: f64 = other.strip_prefix("exponential:").ok_or_else(bad)?.parse().map_err(|_| bad())?;
                if m > 0.0 && m.is_finite() {
                    Ok(WeightScheme::Exponential { m })
                } else {
                    Err(bad())
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            WeightScheme::Exponential { m } => format!("exponential:{m}"),
            other => other.name().to_string(),
        }
    }
}

/// Weight of a prediction of age `i ≥ 1`.
pub fn weight(scheme: &WeightScheme, i: usize) -> Result<f64, InferenceError> {
    if i == 0 {
        return Err(InferenceError::ZeroAge);
    }
    let x = i as f64;
    Ok(match *scheme {
        WeightScheme::None => 1.0,
        WeightScheme::Inverse => 1.0 / (x + 1.0),
        WeightScheme::Exponential { m } => (-m * x).exp(),
        WeightScheme::InverseLog { base } => base.ln() / (x + 1.0).ln(),
    })
}

/// A decoded chunk: `W` state rows, generated at model step `generated`.
#[derive(Clone, Debug, PartialEq)]
pub struct Chunk {
    pub generated: usize,
    pub rows: Vec<Vec<f64>>,
}

/// The most recent `W − 1` chunks, newest last.
#[derive(Clone, Debug)]
pub struct ChunkBuffer {
    width: usize,
    entries: VecDeque<Chunk>,
}

impl ChunkBuffer {
    pub fn new(width: usize) -> Self {
        assert!(width >= 2, "a chunk needs at least two rows");
        Self {
            width,
            entries: VecDeque::with_capacity(width - 1),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn entries(&self) -> impl Iterator<Item = &Chunk> {
        self.entries.iter()
    }

    /// Adds the chunk for step `generated` and evicts anything aged past `W − 1`.
    pub fn push(&mut self, generated: usize, rows: Vec<Vec<f64>>) -> Result<(), InferenceError> {
        if rows.len() != self.width {
            return Err(InferenceError::ChunkWidth {
                expected: self.width,
                found: rows.len(),
            });
        }
        if let Some(last) = self.entries.back() {
            if generated <= last.generated {
                return Err(InferenceError::OutOfOrder {
                    last: last.generated,
                    pushed: generated,
                });
            }
        }
        self.entries.push_back(Chunk { generated, rows });
        let oldest_kept = (generated + 2).saturating_sub(self.width);
        while self.entries.len() > self.width - 1 || self.entries.front().is_some_and(|c| c.generated < oldest_kept) {
            self.entries.pop_front();
        }
        Ok(())
    }

    fn at(&self, generated: usize) -> Option<&Chunk> {
        self.entries.iter().rev().find(|c| c.generated == generated)
    }

    /// Next commanded state after step `t`:
    /// `Σ_{i=1..min(t, W−1)} w_i · Â_{t+1−i}[i] / Σ w_i`, and `Â_0[1]` at `t = 0`.
    pub fn blend(&self, t: usize, scheme: &WeightScheme) -> Result<Vec<f64>, InferenceError> {
        let newest = self.entries.back().ok_or(InferenceError::EmptyBuffer)?;
        if newest.generated != t {
            return Err(InferenceError::MissingChunk { tick: t });
        }
        if t == 0 || matches!(scheme, WeightScheme::None) {
            return Ok(newest.rows[1].clone());
        }
        let dim = newest.rows[1].len();
        let mut acc = vec![0.0; dim];
        let mut total = 0.0;
        for i in 1..=t.min(self.width - 1) {
            let Some(chunk) = self.at(t + 1 - i) else {
                continue;
            };
            let w = weight(scheme, i)?;
            for (a, v) in acc.iter_mut().zip(&chunk.rows[i]) {
                *a += w * v;
            }
            total += w;
        }
        Ok(acc.into_iter().map(|a| a / total).collect())
    }
}
