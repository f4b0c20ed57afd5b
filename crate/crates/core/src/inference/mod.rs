//! Online chunk decoding: temporal blending of overlapping chunks, the latent mailbox
//! and the control loop that ties them to the follower.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

mod blend;
mod engine;
mod mailbox;

pub use blend::{weight, Chunk, ChunkBuffer, WeightScheme, DEFAULT_DECAY};
pub use engine::{jerk, run_online, Engine, EngineConfig, LatentWrite, OnlineOutcome, ScheduledCommand, StepInfo};
pub use mailbox::LatentMailbox;

#[derive(Debug, thiserror::Error)]
pub enum InferenceError {
    #[error("unknown weight scheme {0:?}")]
    Scheme(String),
    #[error("weights are defined for ages of at least 1")]
    ZeroAge,
    #[error("chunk has {found} rows, expected {expected}")]
    ChunkWidth { expected: usize, found: usize },
    #[error("chunk for step {pushed} arrived after step {last}")]
    OutOfOrder { last: usize, pushed: usize },
    #[error("no chunks buffered")]
    EmptyBuffer,
    #[error("no chunk generated at step {tick}")]
    MissingChunk { tick: usize },
    #[error("latent value {0} is not finite")]
    LatentValue(f64),
    #[error("latent command has {found} values, expected {expected}")]
    LatentLength { expected: usize, found: usize },
    #[error("latent dimension {dim} out of range for size {size}")]
    LatentDim { dim: usize, size: usize },
    #[error("invalid engine config: {0}")]
    Config(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("event log: {0}")]
    Log(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    State,
    LatentUpdate,
    Chunk,
}

/// One line of the JSONL event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: usize,
    pub kind: EventKind,
    pub payload: serde_json::Value,
}

pub fn write_events(mut out: impl Write, events: &[Event]) -> Result<(), InferenceError> {
    for e in events {
        let line = serde_json::to_string(e).map_err(|e| InferenceError::Log(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| InferenceError::Log(e.to_string()))?;
    }
    Ok(())
}

pub fn read_events(input: impl BufRead) -> Result<Vec<Event>, InferenceError> {
    let mut events = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| InferenceError::Log(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|e| InferenceError::Log(format!("line {}: {e}", n + 1)))?;
        events.push(event);
    }
    Ok(events)
}

/// Latent writes recovered from a log, keyed to the tick they took effect.
pub fn replay_commands(events: &[Event]) -> Result<Vec<ScheduledCommand>, InferenceError> {
    events
        .iter()
        .filter(|e| e.kind == EventKind::LatentUpdate)
        .map(|e| {
            let z: Vec<f64> = serde_json::from_value(e.payload["z"].clone())
                .map_err(|err| InferenceError::Log(format!("latent_update at tick {}: {err}", e.tick)))?;
            Ok(ScheduledCommand {
                tick: e.tick,
                write: LatentWrite::All(z),
            })
        })
        .collect()
}
