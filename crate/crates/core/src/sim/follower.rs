use super::{RobotState, Trace};

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("non-finite command at tick {tick}")]
pub struct RolloutError {
    pub tick: usize,
    /// Executed ticks `0..tick`.
    pub partial: Trace,
}

/// First-order lag follower: angles and torques move a fraction `lag` toward the
/// command each tick, and velocities are the backward difference of executed angles.
#[derive(Clone, Debug)]
pub struct Follower {
    lag: f64,
    dt: f64,
    current: Option<RobotState>,
}

impl Follower {
    /// `lag` must lie in `(0, 1]`; `1` tracks perfectly.
    pub fn new(lag: f64, dt: f64, initial: Option<RobotState>) -> Self {
        assert!(lag > 0.0 && lag <= 1.0, "lag must lie in (0, 1]");
        assert!(dt > 0.0, "dt must be positive");
        Self { lag, dt, current: initial }
    }

    pub fn state(&self) -> Option<&RobotState> {
        self.current.as_ref()
    }

    /// Advances one tick. Without an initial state the first command is adopted as is.
    pub fn step(&mut self, command: &RobotState) -> Option<RobotState> {
        if !command.is_finite() {
            return None;
        }
        let next = match &self.current {
            None => command.clone(),
            Some(prev) => {
                let track = |cmd: &[f64], cur: &[f64]| -> Vec<f64> {
                    cmd.iter().zip(cur).map(|(c, x)| (1.0 - self.lag) * x + self.lag * c).collect()
                };
                let q = track(&command.q, &prev.q);
                let tau = track(&command.tau, &prev.tau);
                let dq = q.iter().zip(&prev.q).map(|(a, b)| (a - b) / self.dt).collect();
                RobotState { q, dq, tau }
            }
        };
        if !next.is_finite() {
            return None;
        }
        self.current = Some(next.clone());
        Some(next)
    }
}

/// Executes a command sequence. Tick 0 is `initial` when given, else the first command.
pub fn rollout(
    commands: &[RobotState],
    lag: f64,
    dt: f64,
    initial: Option<RobotState>,
) -> Result<Trace, RolloutError> {
    let mut follower = Follower::new(lag, dt, None);
    let mut states = Vec::with_capacity(commands.len());
    for (tick, cmd) in commands.iter().enumerate() {
        let next = match (tick, &initial) {
            (0, Some(init)) if init.is_finite() && cmd.is_finite() => {
                follower.current = Some(init.clone());
                Some(init.clone())
            }
            _ => follower.step(cmd),
        };
        match next {
            Some(s) => states.push(s),
            None => {
                return Err(RolloutError {
                    tick,
                    partial: Trace { states, dt },
                })
            }
        }
    }
    Ok(Trace { states, dt })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(c: f64, n: usize) -> Vec<RobotState> {
        (0..n)
            .map(|_| RobotState {
                q: vec![c],
                dq: vec![0.0],
                tau: vec![c],
            })
            .collect()
    }

    #[test]
    fn lag_one_is_identity() {
        let cmds: Vec<RobotState> = (0..50)
            .map(|k| {
                let q = (k as f64 * 0.3).sin();
                RobotState { q: vec![q], dq: vec![0.0], tau: vec![2.0 * q] }
            })
            .collect();
        let trace = rollout(&cmds, 1.0, 0.002, None).unwrap();
        for (e, c) in trace.states.iter().zip(&cmds) {
            assert_eq!(e.q, c.q);
            assert_eq!(e.tau, c.tau);
        }
    }

    #[test]
    fn geometric_approach_to_constant_command() {
        let c = 1.7;
        let trace = rollout(&constant(c, 30), 0.5, 0.002, Some(RobotState::zeros(1))).unwrap();
        for (t, s) in trace.states.iter().enumerate() {
            let expect = c * (1.0 - 0.5f64.powi(t as i32));
            assert!((s.q[0] - expect).abs() < 1e-12);
            assert!((s.tau[0] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn nan_truncates_trace() {
        let mut cmds = constant(1.0, 20);
        cmds[7].q[0] = f64::NAN;
        let err = rollout(&cmds, 0.5, 0.002, None).unwrap_err();
        assert_eq!(err.tick, 7);
        assert_eq!(err.partial.len(), 7);
    }
}
