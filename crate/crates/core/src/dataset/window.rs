use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::sim::Demonstration;

/// Keeps ticks `0, stride, 2·stride, …` and scales `dt` by `stride`.
pub fn downsample(demo: &Demonstration, stride: usize) -> Result<Demonstration, DatasetError> {
    if stride == 0 {
        return Err(DatasetError::Invalid("stride must be at least 1".into()));
    }
    if stride > 1 && stride >= demo.len() {
        return Err(DatasetError::Invalid(format!(
            "stride {stride} is not shorter than the demonstration ({} ticks)",
            demo.len()
        )));
    }
    Ok(Demonstration {
        states: demo.states.iter().step_by(stride).cloned().collect(),
        dt: demo.dt * stride as f64,
        labels: demo.labels.clone(),
        meta: demo.meta.clone(),
    })
}

/// A `W × D` slice of a demonstration; row 0 is the conditioning state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionWindow {
    /// Row-major `W × D` state matrix.
    pub sequence: Vec<f64>,
    pub width: usize,
    pub dim: usize,
    /// Weak labels in the bundle's directive order.
    pub labels: Vec<f64>,
    pub demo: usize,
    pub start: usize,
}

impl ActionWindow {
    pub fn condition(&self) -> &[f64] {
        &self.sequence[..self.dim]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.sequence[k * self.dim..(k + 1) * self.dim]
    }
}

pub fn window_count(len: usize, width: usize, hop: usize) -> usize {
    if len < width || hop == 0 {
        0
    } else {
        (len - width) / hop + 1
    }
}

/// Windows starting at `0, hop, 2·hop, …` up to `T' − W`, each carrying the demo's labels.
pub fn window(
    demo: &Demonstration,
    width: usize,
    hop: usize,
    directives: &[String],
    demo_index: usize,
) -> Result<Vec<ActionWindow>, DatasetError> {
    if width == 0 || hop == 0 {
        return Err(DatasetError::Invalid("window width and hop must be positive".into()));
    }
    if demo.len() < width {
        return Err(DatasetError::Invalid(format!(
            "demonstration has {} states, fewer than the window width {width}",
            demo.len()
        )));
    }
    let labels = directives
        .iter()
        .map(|d| {
            demo.labels
                .get(d)
                .copied()
                .ok_or_else(|| DatasetError::Invalid(format!("demonstration lacks label {d:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<Vec<f64>> = demo.states.iter().map(|s| s.to_vec()).collect();
    let dim = rows[0].len();
    Ok((0..window_count(demo.len(), width, hop))
        .map(|i| {
            let start = i * hop;
            ActionWindow {
                sequence: rows[start..start + width].concat(),
                width,
                dim,
                labels: labels.clone(),
                demo: demo_index,
                start,
            }
        })
        .collect())
}
