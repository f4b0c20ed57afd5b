//! Training data: downsampling, windowing, normalization, per-demo split and persistence.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::sim::{self, Demonstration, ScenarioConfig, SimError, LABEL_LEVELS};
use crate::util::{derive_seed, rng};

mod format;
mod norm;
mod window;

pub use format::{FORMAT_VERSION, MAGIC};
pub use norm::{Normalization, MIN_STD};
pub use window::{downsample, window, window_count, ActionWindow};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("version mismatch: file has version {found}, this build reads {supported}")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

/// How demonstrations become windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    pub stride: usize,
    pub window: usize,
    pub hop: usize,
    pub validation_fraction: f64,
    pub split_seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            stride: 20,
            window: 50,
            hop: 1,
            validation_fraction: 0.2,
            split_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoInfo {
    /// Labels in the bundle's directive order.
    pub labels: Vec<f64>,
    pub seed: u64,
    pub split: Split,
    pub windows: usize,
}

/// Windows in physical units plus the train-split normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub scenario: ScenarioConfig,
    pub build: BuildConfig,
    pub directive_names: Vec<String>,
    pub demos: Vec<DemoInfo>,
    pub windows: Vec<ActionWindow>,
    pub normalization: Normalization,
}

/// Every label combination, `repeats` noise seeds each, in a fixed order.
pub fn synthesize_grid(scenario: &ScenarioConfig, repeats: usize) -> Result<Vec<Demonstration>, DatasetError> {
    let names = scenario.directives();
    let cells = LABEL_LEVELS.len().pow(names.len() as u32);
    let mut demos = Vec::with_capacity(cells * repeats);
    for cell in 0..cells {
        let mut labels = BTreeMap::new();
        let mut rest = cell;
        for name in names.iter().rev() {
            labels.insert(name.to_string(), LABEL_LEVELS[rest % LABEL_LEVELS.len()]);
            rest /= LABEL_LEVELS.len();
        }
        for rep in 0..repeats {
            let seed = derive_seed(scenario.seed, (cell * repeats + rep) as u64);
            demos.push(sim::synthesize_demo(scenario, &labels, seed)?);
        }
    }
    Ok(demos)
}

/// Indices of validation demos: a seeded shuffle, `round(M · fraction)` of them,
/// keeping at least one demo on each side when `M ≥ 2`.
pub fn split_demos(m: usize, fraction: f64, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng(seed));
    let mut n_val = (m as f64 * fraction).round() as usize;
    if m >= 2 {
        n_val = n_val.clamp(usize::from(fraction > 0.0), m - 1);
    } else {
        n_val = 0;
    }
    let mut split = vec![Split::Train; m];
    for &i in &order[..n_val] {
        split[i] = Split::Validation;
    }
    split
}

impl DatasetBundle {
    pub fn build(
        scenario: &ScenarioConfig,
        demos: &[Demonstration],
        build: &BuildConfig,
    ) -> Result<Self, DatasetError> {
        if demos.is_empty() {
            return Err(DatasetError::Invalid("no demonstrations".into()));
        }
        scenario.validate_for_windows(build.stride, build.window)?;
        let directive_names: Vec<String> = scenario.directives().iter().map(|s| s.to_string()).collect();
        let split = split_demos(demos.len(), build.validation_fraction, build.split_seed);
        let mut windows = Vec::new();
        let mut infos = Vec::with_capacity(demos.len());
        for (i, demo) in demos.iter().enumerate() {
            let down = downsample(demo, build.stride)?;
            let w = window(&down, build.window, build.hop, &directive_names, i)?;
            infos.push(DemoInfo {
                labels: demo.label_vector(&directive_names),
                seed: demo.meta.seed,
                split: split[i],
                windows: w.len(),
            });
            windows.extend(w);
        }
        let dim = scenario.state_dim();
        let normalization = Normalization::fit(
            windows
                .iter()
                .filter(|w| split[w.demo] == Split::Train)
                .map(|w| w.sequence.as_slice()),
            dim,
        )?;
        Ok(Self {
            scenario: scenario.clone(),
            build: build.clone(),
            directive_names,
            demos: infos,
            windows,
            normalization,
        })
    }

    /// Source demonstration count `M`.
    pub fn num_demos(&self) -> usize {
        self.demos.len()
    }

    pub fn state_dim(&self) -> usize {
        self.scenario.state_dim()
    }

    pub fn width(&self) -> usize {
        self.build.window
    }

    pub fn split_of(&self, w: &ActionWindow) -> Split {
        self.demos[w.demo].split
    }

    pub fn windows_in(&self, split: Split) -> Vec<&ActionWindow> {
        self.windows.iter().filter(|w| self.split_of(w) == split).collect()
    }

    /// Copy of a window's sequence in normalized units.
    pub fn normalized(&self, w: &ActionWindow) -> Vec<f64> {
        let mut seq = w.sequence.clone();
        self.normalization.normalize_in_place(&mut seq);
        seq
    }

    /// Demo counts per directive and label value.
    pub fn label_histogram(&self) -> BTreeMap<String, BTreeMap<String, usize>> {
        let mut hist = BTreeMap::new();
        for (s, name) in self.directive_names.iter().enumerate() {
            let entry: &mut BTreeMap<String, usize> = hist.entry(name.clone()).or_default();
            for d in &self.demos {
                *entry.entry(format!("{:.1}", d.labels[s])).or_default() += 1;
            }
        }
        hist
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_bundle() -> DatasetBundle {
        let scenario = ScenarioConfig::wiping(3);
        let demos = synthesize_grid(&scenario, 2).unwrap();
        DatasetBundle::build(&scenario, &demos, &BuildConfig { hop: 25, ..BuildConfig::default() }).unwrap()
    }

    #[test]
    fn grid_has_every_label_combination() {
        let scenario = ScenarioConfig::wiping(3);
        let demos = synthesize_grid(&scenario, 2).unwrap();
        assert_eq!(demos.len(), 18);
        let combos: std::collections::BTreeSet<String> = demos.iter().map(|d| format!("{:?}", d.labels)).collect();
        assert_eq!(combos.len(), 9);
    }

    #[test]
    fn split_is_per_demo_and_stats_come_from_train() {
        let b = small_bundle();
        assert_eq!(b.num_demos(), 18);
        assert_eq!(b.demos.iter().filter(|d| d.split == Split::Validation).count(), 4);
        for w in &b.windows {
            assert_eq!(w.labels, b.demos[w.demo].labels);
            assert_eq!(w.width, 50);
        }
        let train = b.windows_in(Split::Train);
        let dim = b.state_dim();
        let mut mean = vec![0.0; dim];
        let mut n = 0.0;
        for w in &train {
            for row in b.normalized(w).chunks(dim) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
                n += 1.0;
            }
        }
        for (c, m) in mean.iter().enumerate() {
            if !b.normalization.flagged[c] {
                assert!((m / n).abs() < 1e-10, "channel {c} mean {}", m / n);
            }
        }
    }

    #[test]
    fn split_edge_cases() {
        assert_eq!(split_demos(1, 0.2, 0), vec![Split::Train]);
        assert_eq!(split_demos(2, 0.2, 0).iter().filter(|s| **s == Split::Validation).count(), 1);
        assert!(split_demos(5, 0.0, 0).iter().all(|s| *s == Split::Train));
    }
}
