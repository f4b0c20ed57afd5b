use std::path::Path;

use serde_json::json;

use super::{Cvae, ModelConfig};
use crate::autodiff::checkpoint::{fingerprint, Checkpoint, CheckpointError};
use crate::autodiff::{Adam, TensorError};
use crate::dataset::Normalization;
use crate::sim::ScenarioConfig;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("predictor head {index} out of range for {constrained} constrained latents")]
    HeadIndex { index: usize, constrained: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// A trained model with everything inference needs: config, latent layout,
/// data normalization and the scenario it was trained on.
#[derive(Clone, Debug)]
pub struct ModelCheckpoint {
    pub model: Cvae,
    pub normalization: Normalization,
    pub scenario: ScenarioConfig,
    /// Free-form training metadata (loss weights, seeds, epochs).
    pub training: serde_json::Value,
}

impl ModelCheckpoint {
    pub fn to_checkpoint(&self, optimizer: Option<&Adam>) -> Checkpoint {
        let metadata = json!({
            "kind": "cvae",
            "model_config": self.model.config,
            "normalization": self.normalization,
            "scenario": self.scenario,
            "training": self.training,
        });
        let fp = fingerprint(&(&self.model.config, &self.scenario));
        Checkpoint::new(&self.model.store, metadata, fp, optimizer)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        let field = |name: &str| {
            ckpt.metadata
                .get(name)
                .cloned()
                .ok_or_else(|| CheckpointError::Corrupt(format!("metadata lacks {name:?}")))
        };
        let parse = |name: &str, e: serde_json::Error| CheckpointError::Corrupt(format!("metadata {name}: {e}"));
        let config: ModelConfig = serde_json::from_value(field("model_config")?).map_err(|e| parse("model_config", e))?;
        let normalization: Normalization =
            serde_json::from_value(field("normalization")?).map_err(|e| parse("normalization", e))?;
        let scenario: ScenarioConfig = serde_json::from_value(field("scenario")?).map_err(|e| parse("scenario", e))?;
        let training = ckpt.metadata.get("training").cloned().unwrap_or(serde_json::Value::Null);
        if normalization.dim() != config.state_dim {
            return Err(CheckpointError::Corrupt("normalization width differs from state_dim".into()).into());
        }
        let mut model = Cvae::new(config, 0)?;
        ckpt.restore_into(&mut model.store)?;
        Ok(Self {
            model,
            normalization,
            scenario,
            training,
        })
    }

    pub fn save(&self, path: &Path, optimizer: Option<&Adam>) -> Result<(), ModelError> {
        Ok(self.to_checkpoint(optimizer).save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
