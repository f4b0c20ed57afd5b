use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ChunkBuffer, Event, EventKind, InferenceError, LatentMailbox, WeightScheme};
use crate::model::ModelCheckpoint;
use crate::sim::{home_state, Follower, RobotState, Trace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Control ticks between chunk regenerations.
    pub command_update_stride: usize,
    pub control_dt: f64,
    pub scheme: WeightScheme,
    /// Starting latent command; `None` means all zeros.
    pub initial_z: Option<Vec<f64>>,
    /// Follower lag coefficient in `(0, 1]`.
    pub lag: f64,
    pub duration_ticks: usize,
    /// Include full chunk rows in `chunk` events.
    pub log_chunks: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            command_update_stride: 20,
            control_dt: 0.002,
            scheme: WeightScheme::default(),
            initial_z: None,
            lag: 0.5,
            duration_ticks: 10_000,
            log_chunks: false,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.command_update_stride == 0 {
            return Err(InferenceError::Config("command_update_stride must be at least 1".into()));
        }
        if !(self.control_dt > 0.0) || !(self.lag > 0.0 && self.lag <= 1.0) {
            return Err(InferenceError::Config("control_dt must be positive and lag in (0, 1]".into()));
        }
        Ok(())
    }
}

/// A latent write scheduled at a control tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentWrite {
    All(Vec<f64>),
    Dim { dim: usize, value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduledCommand {
    pub tick: usize,
    pub write: LatentWrite,
}

/// Snapshot after one control tick.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub tick: usize,
    pub episode: u64,
    pub state: RobotState,
    pub z: Vec<f64>,
    pub regenerated: bool,
}

/// The online control loop: regenerate, blend, interpolate, follow.
pub struct Engine {
    model: Arc<ModelCheckpoint>,
    config: EngineConfig,
    mailbox: Arc<LatentMailbox>,
    buffer: ChunkBuffer,
    follower: Follower,
    tick: usize,
    episode: u64,
    step: usize,
    z: Vec<f64>,
    z_version: u64,
    from: Vec<f64>,
    target: Vec<f64>,
    targets_q: Vec<Vec<f64>>,
    events: Vec<Event>,
    failed: Option<String>,
}

impl Engine {
    pub fn new(model: Arc<ModelCheckpoint>, config: EngineConfig) -> Result<Self, InferenceError> {
        config.validate()?;
        let spec = model.model.latent().clone();
        let initial = config.initial_z.clone().unwrap_or_else(|| vec![0.0; spec.dim()]);
        if initial.len() != spec.dim() {
            return Err(InferenceError::LatentLength {
                expected: spec.dim(),
                found: initial.len(),
            });
        }
        if model.model.config.window < 2 {
            return Err(InferenceError::Config("model window must be at least 2".into()));
        }
        let mailbox = Arc::new(LatentMailbox::new(initial.clone()));
        let home = home_state(&model.scenario).map_err(|e| InferenceError::Config(e.to_string()))?;
        let width = model.model.config.window;
        let flat = home.to_vec();
        Ok(Self {
            follower: Follower::new(config.lag, config.control_dt, Some(home)),
            model,
            mailbox,
            buffer: ChunkBuffer::new(width),
            tick: 0,
            episode: 0,
            step: 0,
            z: initial,
            z_version: 0,
            from: flat.clone(),
            target: flat,
            targets_q: Vec::new(),
            events: Vec::new(),
            failed: None,
            config,
        })
    }

    pub fn mailbox(&self) -> Arc<LatentMailbox> {
        Arc::clone(&self.mailbox)
    }

    pub fn tick(&self) -> usize {
        self.tick
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn scheme(&self) -> WeightScheme {
        self.config.scheme
    }

    pub fn set_scheme(&mut self, scheme: WeightScheme) {
        self.config.scheme = scheme;
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn state(&self) -> &RobotState {
        self.follower.state().expect("follower always holds a state")
    }

    pub fn failed(&self) -> Option<&str> {
        self.failed.as_deref()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn take_events(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.events)
    }

    /// Commanded `q` at every model step so far.
    pub fn targets_q(&self) -> &[Vec<f64>] {
        &self.targets_q
    }

    /// Returns the arm to its home pose with tick 0 in a new episode. The latent
    /// command is kept.
    pub fn reset(&mut self) -> Result<(), InferenceError> {
        let home = home_state(&self.model.scenario).map_err(|e| InferenceError::Config(e.to_string()))?;
        self.from = home.to_vec();
        self.target = self.from.clone();
        self.follower = Follower::new(self.config.lag, self.config.control_dt, Some(home));
        self.buffer.clear();
        self.tick = 0;
        self.step = 0;
        self.episode += 1;
        self.targets_q.clear();
        self.failed = None;
        Ok(())
    }

    fn log(&mut self, kind: EventKind, payload: serde_json::Value) {
        self.events.push(Event {
            tick: self.tick,
            kind,
            payload,
        });
    }

    /// The `state` event payload for the current tick.
    pub fn state_payload(&self) -> serde_json::Value {
        let s = self.state();
        json!({
            "q": s.q, "dq": s.dq, "tau": s.tau,
            "z": self.z, "scheme": self.config.scheme.label(), "episode": self.episode,
        })
    }

    fn regenerate(&mut self) -> Result<(), InferenceError> {
        let (z, version) = self.mailbox.read();
        if version != self.z_version {
            self.z = z;
            self.z_version = version;
            let payload = json!({ "z": self.z, "version": version });
            self.log(EventKind::LatentUpdate, payload);
        }
        let payload = self.state_payload();
        self.log(EventKind::State, payload);
        let norm = &self.model.normalization;
        let cond = norm.normalize(&self.state().to_vec());
        let rows = self
            .model
            .model
            .decode_chunk(&self.z, &cond)
            .map_err(|e| InferenceError::Divergence(e.to_string()))?;
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| norm.denormalize(r)).collect();
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(InferenceError::Divergence("decoded chunk is not finite".into()));
        }
        let logged_rows = self.config.log_chunks.then(|| rows.clone());
        self.buffer.push(self.step, rows)?;
        let next = self.buffer.blend(self.step, &self.config.scheme)?;
        self.from = std::mem::replace(&mut self.target, next);
        if self.step == 0 {
            self.from = self.state().to_vec();
        }
        let j = self.state().joints();
        if self.targets_q.is_empty() {
            self.targets_q.push(self.from[..j].to_vec());
        }
        self.targets_q.push(self.target[..j].to_vec());
        let mut payload = json!({ "step": self.step, "target": self.target });
        if let Some(rows) = logged_rows {
            payload["rows"] = json!(rows);
        }
        self.log(EventKind::Chunk, payload);
        self.step += 1;
        Ok(())
    }

    /// Advances one control tick. After a failure the engine stays put until reset.
    pub fn step(&mut self) -> Result<StepInfo, InferenceError> {
        if let Some(reason) = &self.failed {
            return Err(InferenceError::Divergence(reason.clone()));
        }
        let stride = self.config.command_update_stride;
        let phase = self.tick % stride;
        let regenerated = phase == 0;
        if regenerated {
            if let Err(e) = self.regenerate() {
                self.failed = Some(e.to_string());
                return Err(e);
            }
        }
        let u = (phase + 1) as f64 / stride as f64;
        let cmd: Vec<f64> = self.from.iter().zip(&self.target).map(|(a, b)| a + (b - a) * u).collect();
        let cmd = RobotState::from_slice(&cmd);
        let Some(next) = self.follower.step(&cmd) else {
            let reason = format!("non-finite command at tick {}", self.tick + 1);
            self.failed = Some(reason.clone());
            return Err(InferenceError::Divergence(reason));
        };
        self.tick += 1;
        Ok(StepInfo {
            tick: self.tick,
            episode: self.episode,
            state: next,
            z: self.z.clone(),
            regenerated,
        })
    }
}

/// Everything one online run produced.
#[derive(Clone, Debug)]
pub struct OnlineOutcome {
    /// Executed states at control rate, starting with the home pose.
    pub trace: Trace,
    pub events: Vec<Event>,
    /// Commanded `q` at model resolution.
    pub targets_q: Vec<Vec<f64>>,
    pub failed: Option<String>,
}

/// Mean squared second difference of a sequence of vectors.
pub fn jerk(seq: &[Vec<f64>]) -> f64 {
    if seq.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut n = 0usize;
    for w in seq.windows(3) {
        for ((a, b), c) in w[0].iter().zip(&w[1]).zip(&w[2]) {
            let d2 = c - 2.0 * b + a;
            acc += d2 * d2;
            n += 1;
        }
    }
    acc / n as f64
}

impl OnlineOutcome {
    pub fn jerk(&self) -> f64 {
        jerk(&self.targets_q)
    }
}

/// Runs the loop for `config.duration_ticks`, applying scheduled writes as their ticks come up.
pub fn run_online(
    model: Arc<ModelCheckpoint>,
    config: &EngineConfig,
    commands: &[ScheduledCommand],
) -> Result<OnlineOutcome, InferenceError> {
    let mut engine = Engine::new(model, config.clone())?;
    let mailbox = engine.mailbox();
    let mut pending: Vec<&ScheduledCommand> = commands.iter().collect();
    pending.sort_by_key(|c| c.tick);
    let mut next_cmd = 0;
    let mut states = Vec::with_capacity(config.duration_ticks + 1);
    states.push(engine.state().clone());
    let mut failed = None;
    for _ in 0..config.duration_ticks {
        while next_cmd < pending.len() && pending[next_cmd].tick <= engine.tick() {
            match &pending[next_cmd].write {
                LatentWrite::All(v) => mailbox.set_all(v)?,
                LatentWrite::Dim { dim, value } => mailbox.set_dim(*dim, *value)?,
            };
            next_cmd += 1;
        }
        match engine.step() {
            Ok(info) => states.push(info.state),
            Err(InferenceError::Divergence(reason)) => {
                failed = Some(reason);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(OnlineOutcome {
        trace: Trace {
            states,
            dt: config.control_dt,
        },
        targets_q: engine.targets_q().to_vec(),
        events: engine.take_events(),
        failed,
    })
}
