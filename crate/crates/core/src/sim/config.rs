use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Wiping,
    PickAndPlace,
}

impl Task {
    /// Directive names in latent order: constrained latent `s` encodes `directives()[s]`.
    pub fn directives(self) -> &'static [&'static str] {
        match self {
            Task::Wiping => &["physical", "temporal"],
            Task::PickAndPlace => &["temporal", "spatial"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Wiping => "wiping",
            Task::PickAndPlace => "pick_and_place",
        }
    }
}

/// Linear map from a weak label `y ∈ [0, 1]` to a physical parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectiveMap {
    pub at_zero: f64,
    pub at_one: f64,
}

impl DirectiveMap {
    pub fn value(&self, y: f64) -> f64 {
        self.at_zero - (self.at_zero - self.at_one) * y
    }
}

/// Which named joint plays which part in the scripted tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointRoles {
    /// Joint whose oscillation defines wipe cycles.
    pub wipe: String,
    /// Joint that holds the arm down during wiping.
    pub support: String,
    /// Joint carrying the contact torque (the "joint 4" channel).
    pub press: String,
    /// Joint that lowers and raises the arm in pick-and-place.
    pub lift: String,
    /// Joint whose final angle is the placement (the "joint 2" channel).
    pub place: String,
    pub gripper: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WipingParams {
    pub approach_time: f64,
    pub wipe_center: f64,
    pub wipe_amplitude: f64,
    pub support_pose: f64,
    pub support_swing: f64,
    pub press_pose: f64,
    /// Fractional ripple of the contact torque around its floor.
    pub torque_ripple: f64,
    /// Contact torque must stay below this value during wipe cycles.
    pub contact_threshold: f64,
    /// Distance from the midline the wiping joint must pass for a cycle to count.
    pub cycle_hysteresis: f64,
    pub required_cycles: usize,
}

impl Default for WipingParams {
    fn default() -> Self {
        Self {
            approach_time: 1.0,
            wipe_center: 0.0,
            wipe_amplitude: 0.5,
            support_pose: 0.6,
            support_swing: 0.05,
            press_pose: -0.4,
            torque_ripple: 0.05,
            contact_threshold: -0.25,
            cycle_hysteresis: 0.15,
            required_cycles: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PickPlaceParams {
    pub lift_down: f64,
    pub lift_carry: f64,
    pub gripper_open: f64,
    pub gripper_closed: f64,
    pub grip_torque: f64,
    /// Gripper angle at or below which the gripper counts as closed.
    pub closed_threshold: f64,
    /// Gripper angle at or above which the gripper counts as open.
    pub open_threshold: f64,
    /// Lift angle at or above which the arm is at table height.
    pub lowered_threshold: f64,
    pub placement_tolerance: f64,
}

impl Default for PickPlaceParams {
    fn default() -> Self {
        Self {
            lift_down: 0.8,
            lift_carry: 0.3,
            gripper_open: 0.8,
            gripper_closed: 0.0,
            grip_torque: -1.0,
            closed_threshold: 0.2,
            open_threshold: 0.6,
            lowered_threshold: 0.7,
            placement_tolerance: 0.15,
        }
    }
}

/// Scripted scenario description; loads from TOML with these exact keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub task: Task,
    pub joints: usize,
    /// Control period in seconds.
    pub dt: f64,
    /// Total demonstration length in control ticks.
    pub duration: usize,
    pub directive_params: BTreeMap<String, DirectiveMap>,
    pub noise_scale: f64,
    pub seed: u64,
    pub joint_names: Vec<String>,
    pub roles: JointRoles,
    #[serde(default)]
    pub wiping: WipingParams,
    #[serde(default)]
    pub pick_and_place: PickPlaceParams,
}

fn default_names(joints: usize) -> Vec<String> {
    if joints == 3 {
        vec!["joint1".into(), "joint2".into(), "joint4".into()]
    } else {
        (1..=joints).map(|i| format!("joint{i}")).collect()
    }
}

fn default_roles(joints: usize) -> JointRoles {
    let gripper = if joints == 3 { "joint4".to_string() } else { format!("joint{joints}") };
    JointRoles {
        wipe: "joint1".into(),
        support: "joint2".into(),
        press: "joint4".into(),
        lift: "joint1".into(),
        place: "joint2".into(),
        gripper,
    }
}

impl ScenarioConfig {
    /// Desk-scale wiping scenario. `joints` must be 3 or at least 4.
    pub fn wiping(joints: usize) -> Self {
        let mut directive_params = BTreeMap::new();
        directive_params.insert("temporal".into(), DirectiveMap { at_zero: 4.0, at_one: 1.0 });
        directive_params.insert("physical".into(), DirectiveMap { at_zero: -0.5, at_one: -2.5 });
        Self {
            task: Task::Wiping,
            joints,
            dt: 0.002,
            duration: 8000,
            directive_params,
            noise_scale: 0.01,
            seed: 0,
            joint_names: default_names(joints),
            roles: default_roles(joints),
            wiping: WipingParams::default(),
            pick_and_place: PickPlaceParams::default(),
        }
    }

    pub fn pick_and_place(joints: usize) -> Self {
        let mut directive_params = BTreeMap::new();
        directive_params.insert("temporal".into(), DirectiveMap { at_zero: 8.0, at_one: 4.0 });
        directive_params.insert("spatial".into(), DirectiveMap { at_zero: 0.6, at_one: -0.6 });
        Self {
            task: Task::PickAndPlace,
            duration: 5000,
            directive_params,
            ..Self::wiping(joints)
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let cfg: Self = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn directives(&self) -> &'static [&'static str] {
        self.task.directives()
    }

    pub fn directive(&self, name: &str) -> Result<DirectiveMap, SimError> {
        self.directive_params
            .get(name)
            .copied()
            .ok_or_else(|| SimError::Config(format!("no directive map for {name:?}")))
    }

    pub fn joint_index(&self, name: &str) -> Result<usize, SimError> {
        self.joint_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| SimError::Config(format!("unknown joint {name:?}")))
    }

    pub fn state_dim(&self) -> usize {
        3 * self.joints
    }

    pub fn duration_secs(&self) -> f64 {
        self.duration as f64 * self.dt
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0) {
            return Err(SimError::Config("dt must be positive".into()));
        }
        if self.joints < 3 {
            return Err(SimError::Config("at least 3 joints are required".into()));
        }
        if self.joint_names.len() != self.joints {
            return Err(SimError::Config(format!(
                "{} joint names for {} joints",
                self.joint_names.len(),
                self.joints
            )));
        }
        if self.noise_scale < 0.0 || !self.noise_scale.is_finite() {
            return Err(SimError::Config("noise_scale must be non-negative".into()));
        }
        let expected = self.directives();
        if self.directive_params.len() != expected.len() || expected.iter().any(|d| !self.directive_params.contains_key(*d)) {
            return Err(SimError::Config(format!(
                "directive_params must define exactly {expected:?}"
            )));
        }
        for (name, map) in &self.directive_params {
            if map.at_zero == map.at_one || !map.at_zero.is_finite() || !map.at_one.is_finite() {
                return Err(SimError::Config(format!("directive map {name:?} must be strictly monotone")));
            }
        }
        let r = &self.roles;
        let names = match self.task {
            Task::Wiping => vec![&r.wipe, &r.support, &r.press],
            Task::PickAndPlace => vec![&r.lift, &r.place, &r.gripper],
        };
        let mut seen = Vec::new();
        for n in names {
            let idx = self.joint_index(n)?;
            if seen.contains(&idx) {
                return Err(SimError::Config(format!("joint {n:?} assigned to two roles")));
            }
            seen.push(idx);
        }
        Ok(())
    }

    /// Checks that a demonstration can be downsampled and windowed.
    pub fn validate_for_windows(&self, stride: usize, window: usize) -> Result<(), SimError> {
        let needed = stride * (window + 1);
        if self.duration < needed {
            return Err(SimError::Config(format!(
                "duration {} ticks is shorter than stride × (W + 1) = {needed}",
                self.duration
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        for cfg in [ScenarioConfig::wiping(3), ScenarioConfig::wiping(8), ScenarioConfig::pick_and_place(3)] {
            cfg.validate().unwrap();
            let back = ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn linear_maps_hit_their_endpoints() {
        let cfg = ScenarioConfig::wiping(3);
        let temporal = cfg.directive("temporal").unwrap();
        assert_eq!(temporal.value(0.5), 2.5);
        assert_eq!(cfg.directive("physical").unwrap().value(1.0), -2.5);
        let pp = ScenarioConfig::pick_and_place(3);
        assert_eq!(pp.directive("spatial").unwrap().value(0.0), 0.6);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = ScenarioConfig::wiping(3);
        cfg.dt = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::wiping(3);
        cfg.directive_params.remove("physical");
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::wiping(3);
        cfg.roles.press = "joint1".into();
        assert!(cfg.validate().is_err());
        let cfg = ScenarioConfig::wiping(3);
        assert!(cfg.validate_for_windows(20, 50).is_ok());
        assert!(cfg.validate_for_windows(200, 50).is_err());
    }
}
