//! Scripted joint-space arm: demonstration synthesis, a lagged follower and task predicates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

mod config;
pub mod cycles;
mod follower;
pub mod predicate;
mod synth;

pub use config::{DirectiveMap, JointRoles, PickPlaceParams, ScenarioConfig, Task, WipingParams};
pub use follower::{rollout, Follower, RolloutError};
pub use predicate::{gripper_events, success_predicate, Outcome};
pub use synth::{home_state, synthesize_demo, LABEL_LEVELS};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("invalid scenario config: {0}")]
    Config(String),
    #[error("label for {directive:?} must be one of 0.0, 0.5, 1.0, got {value}")]
    InvalidLabel { directive: String, value: f64 },
    #[error("labels must cover exactly {expected:?}")]
    LabelKeys { expected: Vec<String> },
    #[error("duration of {have:.3} s is too short; the scripted motion needs {need:.3} s")]
    TooShort { have: f64, need: f64 },
}

/// One control tick of the arm: angles, velocities, torques.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub q: Vec<f64>,
    pub dq: Vec<f64>,
    pub tau: Vec<f64>,
}

impl RobotState {
    pub fn zeros(joints: usize) -> Self {
        Self {
            q: vec![0.0; joints],
            dq: vec![0.0; joints],
            tau: vec![0.0; joints],
        }
    }

    pub fn joints(&self) -> usize {
        self.q.len()
    }

    /// Flat `[q, dq, tau]` vector of length 3J.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * self.q.len());
        v.extend_from_slice(&self.q);
        v.extend_from_slice(&self.dq);
        v.extend_from_slice(&self.tau);
        v
    }

    pub fn from_slice(flat: &[f64]) -> Self {
        assert_eq!(flat.len() % 3, 0, "state vector length must be a multiple of 3");
        let j = flat.len() / 3;
        Self {
            q: flat[..j].to_vec(),
            dq: flat[j..2 * j].to_vec(),
            tau: flat[2 * j..].to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.dq).chain(&self.tau).all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoMeta {
    pub task: Task,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub states: Vec<RobotState>,
    pub dt: f64,
    pub labels: BTreeMap<String, f64>,
    pub meta: DemoMeta,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn joints(&self) -> usize {
        self.states.first().map_or(0, RobotState::joints)
    }

    /// Label values in the given directive order.
    pub fn label_vector(&self, directives: &[String]) -> Vec<f64> {
        directives.iter().map(|d| self.labels[d]).collect()
    }
}

/// Executed or commanded trajectory for predicates and feature extraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub states: Vec<RobotState>,
    pub dt: f64,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn channel_q(&self, joint: usize) -> Vec<f64> {
        self.states.iter().map(|s| s.q[joint]).collect()
    }

    pub fn channel_dq(&self, joint: usize) -> Vec<f64> {
        self.states.iter().map(|s| s.dq[joint]).collect()
    }

    pub fn channel_tau(&self, joint: usize) -> Vec<f64> {
        self.states.iter().map(|s| s.tau[joint]).collect()
    }
}

impl From<&Demonstration> for Trace {
    fn from(demo: &Demonstration) -> Self {
        Trace {
            states: demo.states.clone(),
            dt: demo.dt,
        }
    }
}
