//! One TOML file drives every subcommand; every section is optional.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use modir_core::dataset::BuildConfig;
use modir_core::inference::{EngineConfig, WeightScheme};
use modir_core::sim::{ScenarioConfig, Task};
use modir_core::train::Preset;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Built-in scenario used when `[scenario]` is absent.
    pub task: Option<Task>,
    pub joints: Option<usize>,
    pub scenario: Option<ScenarioConfig>,
    pub dataset: DatasetSection,
    pub train: TrainSection,
    pub engine: EngineConfig,
    pub eval: EvalSection,
    pub ablation: AblationSection,
    pub serve: ServeSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Demonstrations per label cell.
    pub repeats: usize,
    /// Window hop; the train preset's hop when unset.
    pub hop: Option<usize>,
    pub stride: usize,
    pub window: Option<usize>,
    pub validation_fraction: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let b = BuildConfig::default();
        Self {
            repeats: 2,
            hop: None,
            stride: b.stride,
            window: None,
            validation_fraction: b.validation_fraction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub preset: String,
    pub baseline: bool,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub shards: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            preset: "smoke".into(),
            baseline: false,
            epochs: None,
            batch_size: None,
            hidden_dim: None,
            shards: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// `synthesized` or `table`.
    pub reference: String,
    pub reference_file: Option<PathBuf>,
    pub trials: usize,
    pub noise_free: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            reference: "synthesized".into(),
            reference_file: None,
            trials: 4,
            noise_free: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub trials: usize,
    pub schemes: Vec<String>,
    pub magnitude: (f64, f64),
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            trials: 5,
            schemes: ["none", "inverse", "exponential:0.05", "inverse_log"].map(String::from).to_vec(),
            magnitude: (0.5, 1.5),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub host: String,
    pub port: u16,
    /// Outbound state messages per second of wall time.
    pub rate_hz: f64,
    /// Simulated seconds per wall second; 0 runs unpaced.
    pub pace: f64,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8765,
            rate_hz: 30.0,
            pace: 1.0,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Defaults when `path` is `None`; a named file must exist.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn scenario(&self, seed: Option<u64>) -> Result<ScenarioConfig> {
        let mut s = match &self.scenario {
            Some(s) => s.clone(),
            None => {
                let joints = self.joints.unwrap_or(3);
                match self.task.unwrap_or(Task::Wiping) {
                    Task::Wiping => ScenarioConfig::wiping(joints),
                    Task::PickAndPlace => ScenarioConfig::pick_and_place(joints),
                }
            }
        };
        if let Some(seed) = seed {
            s.seed = seed;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn preset(&self, seed: Option<u64>) -> Result<Preset> {
        let t = &self.train;
        let Some(mut p) = Preset::by_name(&t.preset) else {
            bail!("unknown preset {:?}; expected smoke or full-wiping", t.preset);
        };
        if t.baseline {
            p = p.baseline();
        }
        if let Some(v) = t.epochs {
            p.train.epochs = v;
        }
        if let Some(v) = t.batch_size {
            p.train.batch_size = v;
        }
        if let Some(v) = t.hidden_dim {
            p.hidden_dim = v;
        }
        if let Some(v) = t.shards {
            p.train.shards = v;
        }
        if let Some(v) = self.dataset.hop {
            p.hop = v;
        }
        if let Some(v) = self.dataset.window {
            p.window = v;
        }
        if let Some(seed) = seed {
            p.train.seed = seed;
        }
        Ok(p)
    }

    pub fn build_config(&self, preset: &Preset, seed: Option<u64>) -> BuildConfig {
        BuildConfig {
            stride: self.dataset.stride,
            window: preset.window,
            hop: preset.hop,
            validation_fraction: self.dataset.validation_fraction,
            split_seed: seed.unwrap_or(0),
        }
    }

    pub fn schemes(&self) -> Result<Vec<WeightScheme>> {
        self.ablation
            .schemes
            .iter()
            .map(|s| WeightScheme::parse(s).map_err(anyhow::Error::from))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.scenario(None).unwrap(), ScenarioConfig::wiping(3));
        assert_eq!(c.preset(None).unwrap(), Preset::smoke());
    }

    #[test]
    fn sections_override_presets() {
        let c = RunConfig::from_toml_str(
            "task = \"pick_and_place\"\n[train]\npreset = \"full-wiping\"\nbaseline = true\nepochs = 3\n[engine]\nscheme = { kind = \"none\" }\n",
        )
        .unwrap();
        assert_eq!(c.scenario(Some(9)).unwrap().seed, 9);
        let p = c.preset(Some(4)).unwrap();
        assert_eq!((p.train.epochs, p.train.seed, p.train.weights.gamma), (3, 4, 0.0));
        assert_eq!(c.engine.scheme, WeightScheme::None);
        assert!(RunConfig::from_toml_str("[train]\nlr = 1").is_err());
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = RunConfig::load(Some(Path::new("/nonexistent/run.toml"))).unwrap_err();
        assert!(format!("{err:#}").contains("/nonexistent/run.toml"));
    }

    #[test]
    fn shipped_config_spells_out_the_defaults() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
        let c = RunConfig::load(Some(&path)).unwrap();
        assert_eq!(c.engine, EngineConfig::default());
        assert_eq!(c.eval, EvalSection::default());
        assert_eq!(c.ablation, AblationSection::default());
        assert_eq!(c.serve, ServeSection::default());
        assert_eq!(c.scenario(None).unwrap(), RunConfig::default().scenario(None).unwrap());
    }
}
