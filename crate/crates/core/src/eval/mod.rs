//! Evaluation: task success, directive features, line fits and the directive error
//! of latent sweeps, plus the blending-scheme comparison.

mod features;
mod metrics;
mod protocol;

pub use features::{FeatureExtractor, FeatureKind};
pub use metrics::{fit_line, latent_to_x, mde, tsr, Line, TsrReport, LATENT_RANGE};
pub use protocol::{
    ablation_csv, mde_csv, mde_from_sweep, probe_direction, run_mde_protocol, switch_plan, sweep, synthesize_reference,
    weight_ablation, AblationConfig, AblationRow, AblationTrial, MdeReport, Orientation, Reference, ReferenceEntry,
    ReferenceTable, Sweep, SweepRun, SwitchPlan, SWEEP_COMMANDS,
};

use crate::inference::{Event, EventKind, InferenceError};
use crate::model::ModelError;
use crate::sim::{RobotState, SimError, Trace};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("insufficient cycles")]
    InsufficientCycles,
    #[error("feature: {0}")]
    Feature(String),
    #[error("degenerate fit")]
    DegenerateFit,
    #[error("fit: {0}")]
    Fit(String),
    #[error("latent command {0} outside [-2, 2]")]
    LatentRange(f64),
    #[error("MDE undefined")]
    MdeUndefined,
    #[error("at least one trial is required")]
    NoTrials,
    #[error("{directive} on latent dim {latent_dim}: {found} successful points, need 2")]
    TooFewPoints {
        directive: String,
        latent_dim: usize,
        found: usize,
    },
    #[error("{0}")]
    Directive(String),
    #[error("reference lines: {0}")]
    Reference(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

/// Rebuilds the sampled trace recorded by `state` events. Ticks must be evenly spaced.
pub fn trace_from_events(events: &[Event], control_dt: f64) -> Result<Trace, EvalError> {
    let mut ticks = Vec::new();
    let mut states = Vec::new();
    for e in events.iter().filter(|e| e.kind == EventKind::State) {
        let field = |k: &str| -> Result<Vec<f64>, EvalError> {
            serde_json::from_value(e.payload[k].clone())
                .map_err(|err| EvalError::Feature(format!("state event at tick {}: {k}: {err}", e.tick)))
        };
        states.push(RobotState {
            q: field("q")?,
            dq: field("dq")?,
            tau: field("tau")?,
        });
        ticks.push(e.tick);
    }
    let spacing = match ticks.as_slice() {
        [a, b, ..] => b - a,
        _ => 1,
    };
    if spacing == 0 || ticks.windows(2).any(|w| w[1] - w[0] != spacing) {
        return Err(EvalError::Feature("state events are not evenly spaced".into()));
    }
    Ok(Trace {
        states,
        dt: spacing as f64 * control_dt,
    })
}
