use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::sim::{cycles, gripper_events, ScenarioConfig, Task, Trace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Mean duration of the first `cycles` wipe cycles, in seconds.
    CycleTime,
    /// Mean over the first `cycles` wipe cycles of the per-cycle minimum torque.
    MinTorque,
    /// Angle of the joint on the last tick.
    FinalAngle,
    /// Seconds from the start until the gripper releases at table height.
    CompletionTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub kind: FeatureKind,
    pub joint: String,
    #[serde(default = "three")]
    pub cycles: usize,
}

fn three() -> usize {
    3
}

impl FeatureExtractor {
    /// The extractor that measures `directive` on `config`'s task.
    pub fn for_directive(config: &ScenarioConfig, directive: &str) -> Result<Self, EvalError> {
        let r = &config.roles;
        let (kind, joint) = match (config.task, directive) {
            (Task::Wiping, "temporal") => (FeatureKind::CycleTime, &r.wipe),
            (Task::Wiping, "physical") => (FeatureKind::MinTorque, &r.press),
            (Task::PickAndPlace, "temporal") => (FeatureKind::CompletionTime, &r.gripper),
            (Task::PickAndPlace, "spatial") => (FeatureKind::FinalAngle, &r.place),
            (task, d) => return Err(EvalError::Directive(format!("{d:?} is not measured on {}", task.name()))),
        };
        Ok(Self {
            kind,
            joint: joint.clone(),
            cycles: 3,
        })
    }

    pub fn extract(&self, trace: &Trace, config: &ScenarioConfig) -> Result<f64, EvalError> {
        if trace.is_empty() {
            return Err(EvalError::Feature("empty trace".into()));
        }
        let joint = config.joint_index(&self.joint).map_err(|e| EvalError::Feature(e.to_string()))?;
        match self.kind {
            FeatureKind::FinalAngle => Ok(trace.states[trace.len() - 1].q[joint]),
            FeatureKind::CompletionTime => {
                let (_, release) = gripper_events(trace, config);
                release
                    .map(|k| k as f64 * trace.dt)
                    .ok_or_else(|| EvalError::Feature("no release detected".into()))
            }
            FeatureKind::CycleTime | FeatureKind::MinTorque => {
                let wipe = config.joint_index(&config.roles.wipe).map_err(|e| EvalError::Feature(e.to_string()))?;
                let peaks = cycles::detect(&trace.channel_q(wipe), &trace.channel_dq(wipe), config.wiping.cycle_hysteresis);
                if self.cycles == 0 || peaks.len() < self.cycles + 1 {
                    return Err(EvalError::InsufficientCycles);
                }
                let n = self.cycles as f64;
                if self.kind == FeatureKind::CycleTime {
                    return Ok((peaks[self.cycles] - peaks[0]) as f64 * trace.dt / n);
                }
                let total: f64 = peaks
                    .windows(2)
                    .take(self.cycles)
                    .map(|w| trace.states[w[0]..w[1]].iter().map(|s| s.tau[joint]).fold(f64::INFINITY, f64::min))
                    .sum();
                Ok(total / n)
            }
        }
    }
}
