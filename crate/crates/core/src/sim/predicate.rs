use serde::{Deserialize, Serialize};

use super::{cycles, ScenarioConfig, Task, Trace};

/// Result of checking a trace against its task's success conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub success: bool,
    pub reason: Option<String>,
}

impl Outcome {
    pub fn pass() -> Self {
        Self { success: true, reason: None }
    }

    pub fn fail(reason: &str) -> Self {
        Self {
            success: false,
            reason: Some(reason.to_string()),
        }
    }
}

pub const DIVERGENCE: &str = "divergence";
pub const PREMATURE_STOP: &str = "premature stop";
pub const LIFTED: &str = "lifted off surface";
pub const MISSING_GRASP: &str = "missing grasp";
pub const MISSING_RELEASE: &str = "missing release";
pub const OUT_OF_BAND: &str = "placement out of band";

pub fn success_predicate(trace: &Trace, config: &ScenarioConfig) -> Outcome {
    if trace.is_empty() {
        return Outcome::fail(PREMATURE_STOP);
    }
    if trace.states.iter().any(|s| !s.is_finite()) {
        return Outcome::fail(DIVERGENCE);
    }
    match config.task {
        Task::Wiping => wiping(trace, config),
        Task::PickAndPlace => pick_and_place(trace, config),
    }
}

fn wiping(trace: &Trace, config: &ScenarioConfig) -> Outcome {
    let p = &config.wiping;
    let (Ok(wipe), Ok(press)) = (config.joint_index(&config.roles.wipe), config.joint_index(&config.roles.press)) else {
        return Outcome::fail(DIVERGENCE);
    };
    let q = trace.channel_q(wipe);
    let dq = trace.channel_dq(wipe);
    let peaks = cycles::detect(&q, &dq, p.cycle_hysteresis);
    if peaks.len() < p.required_cycles + 1 {
        return Outcome::fail(PREMATURE_STOP);
    }
    let span = peaks[0]..=peaks[p.required_cycles];
    let lifted = trace.states[span].iter().any(|s| s.tau[press] >= p.contact_threshold);
    if lifted {
        return Outcome::fail(LIFTED);
    }
    Outcome::pass()
}

/// Tick of the grasp and of the release, when they occur in order at table height.
pub fn gripper_events(trace: &Trace, config: &ScenarioConfig) -> (Option<usize>, Option<usize>) {
    let p = &config.pick_and_place;
    let (Ok(lift), Ok(gripper)) = (config.joint_index(&config.roles.lift), config.joint_index(&config.roles.gripper)) else {
        return (None, None);
    };
    let opened = trace.states.iter().position(|s| s.q[gripper] >= p.open_threshold);
    let Some(opened) = opened else {
        return (None, None);
    };
    let lowered = |k: usize| trace.states[k].q[lift] >= p.lowered_threshold;
    let grasp = (opened..trace.len()).find(|&k| trace.states[k].q[gripper] <= p.closed_threshold && lowered(k));
    let Some(grasp) = grasp else {
        return (None, None);
    };
    // The arm has to leave the table between grasp and release.
    let raised = (grasp..trace.len()).find(|&k| !lowered(k));
    let release = raised.and_then(|r| {
        (r..trace.len()).find(|&k| trace.states[k].q[gripper] >= p.open_threshold && lowered(k))
    });
    (Some(grasp), release)
}

fn pick_and_place(trace: &Trace, config: &ScenarioConfig) -> Outcome {
    let p = &config.pick_and_place;
    let (grasp, release) = gripper_events(trace, config);
    if grasp.is_none() {
        return Outcome::fail(MISSING_GRASP);
    }
    if release.is_none() {
        return Outcome::fail(MISSING_RELEASE);
    }
    let Ok(place) = config.joint_index(&config.roles.place) else {
        return Outcome::fail(DIVERGENCE);
    };
    let spatial = config.directive("spatial").expect("validated config");
    let (lo, hi) = if spatial.at_zero < spatial.at_one {
        (spatial.at_zero, spatial.at_one)
    } else {
        (spatial.at_one, spatial.at_zero)
    };
    let last = trace.states[trace.len() - 1].q[place];
    if last < lo - p.placement_tolerance || last > hi + p.placement_tolerance {
        return Outcome::fail(OUT_OF_BAND);
    }
    Outcome::pass()
}
