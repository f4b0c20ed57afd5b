//! Parameter checkpoints.
//!
//! A checkpoint is a single JSON document:
//!
//! ```text
//! {
//!   "format": "modir-checkpoint",
//!   "version": 1,
//!   "fingerprint": "<16 hex digits>",
//!   "metadata": { ... },
//!   "params": [ { "name": "...", "shape": [r, c], "data": [f64, ...] }, ... ],
//!   "optimizer": null | { "config": {...}, "step_count": n,
//!                         "first_moment": [...], "second_moment": [...] }
//! }
//! ```
//!
//! Floats are written with shortest round-trip formatting, so loading
//! reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, AdamConfig, AdamState, ParamStore, Tensor};

pub const CHECKPOINT_FORMAT: &str = "modir-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint version mismatch: file has {found}, supported {supported}")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("checkpoint parameter {name}: {detail}")]
    Parameter { name: String, detail: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSnapshot {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub fingerprint: String,
    pub metadata: serde_json::Value,
    pub params: Vec<NamedTensor>,
    pub optimizer: Option<OptimizerSnapshot>,
}

/// FNV-1a over the canonical JSON encoding of a configuration value.
pub fn fingerprint<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("configs serialize to JSON");
    format!("{:016x}", crate::util::fnv1a(&bytes))
}

impl Checkpoint {
    pub fn new(params: &ParamStore, metadata: serde_json::Value, fingerprint: String, optimizer: Option<&Adam>) -> Self {
        let params = params
            .iter()
            .map(|(_, name, t)| NamedTensor {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect();
        let optimizer = optimizer.map(|adam| OptimizerSnapshot {
            config: adam.config.clone(),
            step_count: adam.state.step_count,
            first_moment: adam.state.first_moment.iter().map(|t| t.data().to_vec()).collect(),
            second_moment: adam.state.second_moment.iter().map(|t| t.data().to_vec()).collect(),
        });
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            fingerprint,
            metadata,
            params,
            optimizer,
        }
    }

    /// Copies stored values into a store with the same parameter layout.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<(), CheckpointError> {
        if self.params.len() != store.len() {
            return Err(CheckpointError::Corrupt(format!(
                "expected {} parameters, found {}",
                store.len(),
                self.params.len()
            )));
        }
        for named in &self.params {
            let id = store.id(&named.name).ok_or_else(|| CheckpointError::Parameter {
                name: named.name.clone(),
                detail: "not present in model".into(),
            })?;
            let target = store.get_mut(id);
            if target.shape() != named.shape.as_slice() {
                return Err(CheckpointError::Parameter {
                    name: named.name.clone(),
                    detail: format!("shape {:?} does not match model {:?}", named.shape, target.shape()),
                });
            }
            *target = Tensor::new(named.shape.clone(), named.data.clone()).map_err(|e| CheckpointError::Parameter {
                name: named.name.clone(),
                detail: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn restore_optimizer(&self, store: &ParamStore) -> Option<Adam> {
        let snap = self.optimizer.as_ref()?;
        let shapes: Vec<Vec<usize>> = store.iter().map(|(_, _, t)| t.shape().to_vec()).collect();
        let rebuild = |rows: &[Vec<f64>]| -> Option<Vec<Tensor>> {
            rows.iter()
                .zip(&shapes)
                .map(|(d, s)| Tensor::new(s.clone(), d.clone()).ok())
                .collect()
        };
        Some(Adam {
            config: snap.config.clone(),
            state: AdamState {
                first_moment: rebuild(&snap.first_moment)?,
                second_moment: rebuild(&snap.second_moment)?,
                step_count: snap.step_count,
            },
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        if value.get("format").and_then(|f| f.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(CheckpointError::Corrupt("missing checkpoint format tag".into()));
        }
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| CheckpointError::Corrupt("missing version field".into()))? as u32;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|e| CheckpointError::Corrupt(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
