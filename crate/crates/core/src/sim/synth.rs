use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DemoMeta, Demonstration, RobotState, ScenarioConfig, SimError, Task};

/// The three weak-label levels, ordered by directive intensity.
pub const LABEL_LEVELS: [f64; 3] = [0.0, 0.5, 1.0];

const NOISE_COMPONENTS: usize = 4;
const NOISE_FREQ_HZ: (f64, f64) = (0.1, 0.6);

/// Quintic smoothstep on `[0, 1]` with zero end velocity and acceleration.
pub(crate) fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (u * (6.0 * u - 15.0) + 10.0)
}

/// Piecewise smoothstep through `(time, value)` keys, held constant outside them.
fn keyframes(t: f64, keys: &[(f64, f64)]) -> f64 {
    if t <= keys[0].0 {
        return keys[0].1;
    }
    for pair in keys.windows(2) {
        let (t0, v0) = pair[0];
        let (t1, v1) = pair[1];
        if t <= t1 {
            return v0 + (v1 - v0) * smoothstep((t - t0) / (t1 - t0));
        }
    }
    keys[keys.len() - 1].1
}

/// Band-limited Gaussian perturbation: a random-coefficient sum of slow sinusoids,
/// so each sample is exactly `N(0, scale²)` while derivatives stay small.
struct SmoothNoise {
    terms: Vec<(f64, f64, f64)>,
}

impl SmoothNoise {
    fn new(rng: &mut ChaCha8Rng, scale: f64) -> Self {
        let sd = scale / (NOISE_COMPONENTS as f64).sqrt();
        let normal = Normal::new(0.0, sd.max(f64::MIN_POSITIVE)).expect("positive noise sd");
        let terms = (0..NOISE_COMPONENTS)
            .map(|_| {
                let f = rng.gen_range(NOISE_FREQ_HZ.0..NOISE_FREQ_HZ.1);
                let (a, b) = if scale > 0.0 {
                    (normal.sample(rng), normal.sample(rng))
                } else {
                    (0.0, 0.0)
                };
                (2.0 * PI * f, a, b)
            })
            .collect();
        Self { terms }
    }

    fn at(&self, t: f64) -> f64 {
        self.terms.iter().map(|&(w, a, b)| a * (w * t).cos() + b * (w * t).sin()).sum()
    }
}

fn check_labels(config: &ScenarioConfig, labels: &BTreeMap<String, f64>) -> Result<(), SimError> {
    let expected = config.directives();
    if labels.len() != expected.len() || expected.iter().any(|d| !labels.contains_key(*d)) {
        return Err(SimError::LabelKeys {
            expected: expected.iter().map(|s| s.to_string()).collect(),
        });
    }
    for (name, &value) in labels {
        if !LABEL_LEVELS.contains(&value) {
            return Err(SimError::InvalidLabel {
                directive: name.clone(),
                value,
            });
        }
    }
    Ok(())
}

/// Scripted demonstration for the given weak labels. Noise draws depend only on `seed`.
pub fn synthesize_demo(
    config: &ScenarioConfig,
    labels: &BTreeMap<String, f64>,
    seed: u64,
) -> Result<Demonstration, SimError> {
    config.validate()?;
    check_labels(config, labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<SmoothNoise> = (0..config.joints)
        .map(|_| SmoothNoise::new(&mut rng, config.noise_scale))
        .collect();
    let states = match config.task {
        Task::Wiping => wiping(config, labels, &noise)?,
        Task::PickAndPlace => pick_and_place(config, labels, &noise)?,
    };
    Ok(Demonstration {
        states,
        dt: config.dt,
        labels: labels.clone(),
        meta: DemoMeta {
            task: config.task,
            seed,
        },
    })
}

/// Noise-free first state of the script at the lowest label levels; the pose every
/// online episode starts from.
pub fn home_state(config: &ScenarioConfig) -> Result<RobotState, SimError> {
    let mut quiet = config.clone();
    quiet.noise_scale = 0.0;
    let labels = config.directives().iter().map(|d| (d.to_string(), 0.0)).collect();
    let demo = synthesize_demo(&quiet, &labels, 0)?;
    Ok(demo.states[0].clone())
}

/// Turns clean joint angles into states: adds noise, differentiates, then asks
/// `torque` for each tick's torques given the noisy angles and velocities.
fn assemble(
    config: &ScenarioConfig,
    clean: impl Fn(f64) -> Vec<f64>,
    noise: &[SmoothNoise],
    torque: impl Fn(f64, &[f64], &[f64]) -> Vec<f64>,
) -> Vec<RobotState> {
    let mut states: Vec<RobotState> = Vec::with_capacity(config.duration);
    for k in 0..config.duration {
        let t = k as f64 * config.dt;
        let q: Vec<f64> = clean(t).iter().zip(noise).map(|(v, n)| v + n.at(t)).collect();
        let dq = match states.last() {
            Some(prev) => q.iter().zip(&prev.q).map(|(a, b)| (a - b) / config.dt).collect(),
            None => vec![0.0; config.joints],
        };
        let tau = torque(t, &q, &dq);
        states.push(RobotState { q, dq, tau });
    }
    states
}

fn wiping(
    config: &ScenarioConfig,
    labels: &BTreeMap<String, f64>,
    noise: &[SmoothNoise],
) -> Result<Vec<RobotState>, SimError> {
    let p = &config.wiping;
    let period = config.directive("temporal")?.value(labels["temporal"]);
    let floor = config.directive("physical")?.value(labels["physical"]);
    if !(period > 0.0) {
        return Err(SimError::Config(format!("wipe period {period} must be positive")));
    }
    // The last counted peak sits half a period after the cycles it closes;
    // a quarter period more lets the velocity sign change register.
    let need = p.approach_time + (p.required_cycles as f64 + 0.75) * period;
    if config.duration_secs() < need {
        return Err(SimError::TooShort {
            have: config.duration_secs(),
            need,
        });
    }
    let wipe = config.joint_index(&config.roles.wipe)?;
    let support = config.joint_index(&config.roles.support)?;
    let press = config.joint_index(&config.roles.press)?;
    let j = config.joints;
    let ta = p.approach_time;

    let clean = |t: f64| {
        let mut q = vec![0.0; j];
        if t < ta {
            let s = smoothstep(t / ta);
            q[wipe] = (p.wipe_center - p.wipe_amplitude) * s;
            q[support] = p.support_pose * s;
            q[press] = p.press_pose * s;
        } else {
            let phase = 2.0 * PI * (t - ta) / period;
            q[wipe] = p.wipe_center - p.wipe_amplitude * phase.cos();
            q[support] = p.support_pose + p.support_swing * phase.sin();
            q[press] = p.press_pose;
        }
        q
    };
    let torque = |t: f64, q: &[f64], dq: &[f64]| {
        let mut tau = vec![0.0; j];
        tau[wipe] = 0.3 * dq[wipe];
        tau[support] = -0.8 * q[support].cos();
        tau[press] = if t < ta {
            floor * smoothstep(t / ta)
        } else {
            let phase = 2.0 * PI * (t - ta) / period;
            floor * (1.0 - p.torque_ripple + p.torque_ripple * (2.0 * phase).cos())
        };
        tau
    };
    Ok(assemble(config, clean, noise, torque))
}

fn pick_and_place(
    config: &ScenarioConfig,
    labels: &BTreeMap<String, f64>,
    noise: &[SmoothNoise],
) -> Result<Vec<RobotState>, SimError> {
    let p = &config.pick_and_place;
    let tc = config.directive("temporal")?.value(labels["temporal"]);
    let q2_final = config.directive("spatial")?.value(labels["spatial"]);
    if !(tc > 0.0) {
        return Err(SimError::Config(format!("completion time {tc} must be positive")));
    }
    if config.duration_secs() < tc {
        return Err(SimError::TooShort {
            have: config.duration_secs(),
            need: tc,
        });
    }
    let lift = config.joint_index(&config.roles.lift)?;
    let place = config.joint_index(&config.roles.place)?;
    let gripper = config.joint_index(&config.roles.gripper)?;
    let j = config.joints;
    let ts = |f: f64| f * tc;
    let lift_keys = [
        (ts(0.0), 0.0),
        (ts(0.25), p.lift_down),
        (ts(0.35), p.lift_down),
        (ts(0.5), p.lift_carry),
        (ts(0.75), p.lift_carry),
        (ts(0.85), p.lift_down),
        (ts(0.95), p.lift_down),
        (ts(1.0), p.lift_carry),
    ];
    let place_keys = [(ts(0.0), 0.0), (ts(0.5), 0.0), (ts(0.75), q2_final)];
    let grip_keys = [
        (ts(0.0), p.gripper_closed),
        (ts(0.2), p.gripper_open),
        (ts(0.25), p.gripper_open),
        (ts(0.35), p.gripper_closed),
        (ts(0.85), p.gripper_closed),
        (ts(0.95), p.gripper_open),
    ];
    let clean = |t: f64| {
        let mut q = vec![0.0; j];
        q[lift] = keyframes(t, &lift_keys);
        q[place] = keyframes(t, &place_keys);
        q[gripper] = keyframes(t, &grip_keys);
        q
    };
    let span = p.gripper_open - p.gripper_closed;
    let torque = |t: f64, q: &[f64], dq: &[f64]| {
        let mut tau = vec![0.0; j];
        let held = (ts(0.25)..=ts(0.95)).contains(&t);
        let closure = ((p.gripper_open - q[gripper]) / span).clamp(0.0, 1.0);
        tau[gripper] = if held { p.grip_torque * closure } else { 0.0 };
        tau[lift] = -1.5 * q[lift].sin() - if held { 0.5 * closure } else { 0.0 };
        tau[place] = 0.3 * dq[place];
        tau
    };
    Ok(assemble(config, clean, noise, torque))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn smoothstep_endpoints() {
        assert_eq!(smoothstep(0.0), 0.0);
        assert_eq!(smoothstep(1.0), 1.0);
        assert_eq!(smoothstep(0.5), 0.5);
    }

    #[test]
    fn velocities_are_backward_differences() {
        let cfg = ScenarioConfig::wiping(3);
        let demo = synthesize_demo(&cfg, &labels(&[("physical", 0.5), ("temporal", 1.0)]), 3).unwrap();
        assert_eq!(demo.len(), cfg.duration);
        for pair in demo.states.windows(2) {
            for j in 0..3 {
                let fd = (pair[1].q[j] - pair[0].q[j]) / cfg.dt;
                assert!((pair[1].dq[j] - fd).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn wiping_torque_floor_follows_physical_label() {
        let mut cfg = ScenarioConfig::wiping(3);
        cfg.noise_scale = 0.0;
        let demo = synthesize_demo(&cfg, &labels(&[("physical", 1.0), ("temporal", 0.5)]), 0).unwrap();
        let press = cfg.joint_index("joint4").unwrap();
        let min = demo.states.iter().map(|s| s.tau[press]).fold(f64::INFINITY, f64::min);
        assert!((min + 2.5).abs() < 1e-9, "min torque {min}");
    }

    #[test]
    fn pick_and_place_final_angle_follows_spatial_label() {
        let cfg = ScenarioConfig::pick_and_place(3);
        let place = cfg.joint_index("joint2").unwrap();
        for (y, expect) in [(0.0, 0.6), (0.5, 0.0), (1.0, -0.6)] {
            let demo = synthesize_demo(&cfg, &labels(&[("temporal", 0.0), ("spatial", y)]), 1).unwrap();
            let last = demo.states.last().unwrap().q[place];
            assert!((last - expect).abs() < 0.05, "y={y}: final {last}");
        }
    }

    #[test]
    fn rejects_bad_labels_and_short_durations() {
        let cfg = ScenarioConfig::wiping(3);
        let bad = labels(&[("physical", 0.3), ("temporal", 0.0)]);
        assert!(matches!(synthesize_demo(&cfg, &bad, 0), Err(SimError::InvalidLabel { .. })));
        let missing = labels(&[("physical", 0.0)]);
        assert!(matches!(synthesize_demo(&cfg, &missing, 0), Err(SimError::LabelKeys { .. })));
        let mut short = cfg.clone();
        short.duration = 4000;
        let slow = labels(&[("physical", 0.0), ("temporal", 0.0)]);
        assert!(matches!(synthesize_demo(&short, &slow, 0), Err(SimError::TooShort { .. })));
    }

    #[test]
    fn same_inputs_same_demo() {
        let cfg = ScenarioConfig::wiping(8);
        let l = labels(&[("physical", 0.0), ("temporal", 0.5)]);
        assert_eq!(synthesize_demo(&cfg, &l, 9).unwrap(), synthesize_demo(&cfg, &l, 9).unwrap());
        assert_ne!(synthesize_demo(&cfg, &l, 9).unwrap(), synthesize_demo(&cfg, &l, 10).unwrap());
    }
}
