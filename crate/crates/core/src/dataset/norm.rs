use serde::{Deserialize, Serialize};

use super::DatasetError;

/// Channels whose spread falls below this are passed through unscaled.
pub const MIN_STD: f64 = 1e-9;

/// Per-channel z-score statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// `true` where the channel was degenerate and is left untouched.
    pub flagged: Vec<bool>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
            flagged: vec![true; dim],
        }
    }

    /// Statistics over rows of length `dim`, drawn from any number of row-major blocks.
    pub fn fit<'a>(blocks: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Result<Self, DatasetError> {
        let mut count = 0usize;
        let mut sum = vec![0.0; dim];
        let mut rows = Vec::new();
        for block in blocks {
            for row in block.chunks_exact(dim) {
                for (s, v) in sum.iter_mut().zip(row) {
                    *s += v;
                }
                rows.push(row);
                count += 1;
            }
        }
        if count == 0 {
            return Err(DatasetError::Invalid("training split is empty".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut var = vec![0.0; dim];
        for row in &rows {
            for ((acc, v), m) in var.iter_mut().zip(*row).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let mut std = Vec::with_capacity(dim);
        let mut flagged = Vec::with_capacity(dim);
        let mut means = Vec::with_capacity(dim);
        for (c, v) in var.iter().enumerate() {
            let sd = (v / count as f64).sqrt();
            if sd > MIN_STD {
                std.push(sd);
                means.push(mean[c]);
                flagged.push(false);
            } else {
                std.push(1.0);
                means.push(0.0);
                flagged.push(true);
            }
        }
        Ok(Self {
            mean: means,
            std,
            flagged,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Normalizes a row-major block of rows in place.
    pub fn normalize_in_place(&self, data: &mut [f64]) {
        for row in data.chunks_exact_mut(self.dim()) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }

    pub fn denormalize_in_place(&self, data: &mut [f64]) {
        for row in data.chunks_exact_mut(self.dim()) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
    }

    pub fn normalize(&self, state: &[f64]) -> Vec<f64> {
        let mut v = state.to_vec();
        self.normalize_in_place(&mut v);
        v
    }

    pub fn denormalize(&self, state: &[f64]) -> Vec<f64> {
        let mut v = state.to_vec();
        self.denormalize_in_place(&mut v);
        v
    }
}
