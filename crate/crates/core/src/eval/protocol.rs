use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{fit_line, latent_to_x, mde, tsr, EvalError, FeatureExtractor, Line, TsrReport};
use crate::inference::{run_online, EngineConfig, LatentWrite, OnlineOutcome, ScheduledCommand, WeightScheme};
use crate::model::ModelCheckpoint;
use crate::par::{map_ordered, Parallelism};
use crate::sim::{success_predicate, synthesize_demo, Outcome, ScenarioConfig, Task, Trace, LABEL_LEVELS};
use crate::util::{derive_seed, rng};

/// Latent values swept along one dimension.
pub const SWEEP_COMMANDS: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub task: Task,
    pub directive: String,
    pub slope: f64,
    pub intercept: f64,
}

/// Reference lines per (task, directive), stored as TOML `[[line]]` tables.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTable {
    #[serde(default)]
    pub line: Vec<ReferenceEntry>,
}

impl ReferenceTable {
    pub fn from_toml_str(text: &str) -> Result<Self, EvalError> {
        toml::from_str(text).map_err(|e| EvalError::Reference(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::Reference(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn get(&self, task: Task, directive: &str) -> Option<Line> {
        self.line.iter().find(|e| e.task == task && e.directive == directive).map(|e| Line {
            slope: e.slope,
            intercept: e.intercept,
        })
    }
}

/// A reference line with the `(x, y)` points it was fitted to, if any.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub line: Line,
    pub points: Vec<(f64, f64)>,
}

impl From<Line> for Reference {
    fn from(line: Line) -> Self {
        Self { line, points: Vec::new() }
    }
}

/// Fits a reference line from scripted demos: `trials` per label level, other
/// directives held at 0.5, features averaged per level.
pub fn synthesize_reference(
    config: &ScenarioConfig,
    directive: &str,
    trials: usize,
    noise_free: bool,
    seed: u64,
) -> Result<Reference, EvalError> {
    if trials == 0 {
        return Err(EvalError::NoTrials);
    }
    let mut cfg = config.clone();
    if noise_free {
        cfg.noise_scale = 0.0;
    }
    let extractor = FeatureExtractor::for_directive(&cfg, directive)?;
    let mut points = Vec::with_capacity(LABEL_LEVELS.len());
    for (li, &level) in LABEL_LEVELS.iter().enumerate() {
        let labels: BTreeMap<String, f64> = cfg
            .directives()
            .iter()
            .map(|d| (d.to_string(), if *d == directive { level } else { 0.5 }))
            .collect();
        let mut sum = 0.0;
        for t in 0..trials {
            let demo = synthesize_demo(&cfg, &labels, derive_seed(seed, (li * trials + t) as u64))?;
            sum += extractor.extract(&Trace::from(&demo), &cfg)?;
        }
        points.push((level, sum / trials as f64));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    Ok(Reference {
        line: fit_line(&xs, &ys)?,
        points,
    })
}

/// One online generation under a fixed latent command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub z: Vec<f64>,
    pub outcome: Outcome,
    pub jerk: f64,
    pub features: BTreeMap<String, f64>,
    pub feature_errors: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub latent_dim: usize,
    pub commands: Vec<f64>,
    pub runs: Vec<SweepRun>,
}

fn judge(outcome: &OnlineOutcome, config: &ScenarioConfig) -> Outcome {
    match &outcome.failed {
        Some(_) => Outcome::fail(crate::sim::predicate::DIVERGENCE),
        None => success_predicate(&outcome.trace, config),
    }
}

/// Runs one generation per command along `latent_dim` with the other coordinates at 0,
/// and measures every directive of the task on the successful ones.
pub fn sweep(
    model: &Arc<ModelCheckpoint>,
    engine: &EngineConfig,
    latent_dim: usize,
    commands: &[f64],
    parallelism: Parallelism,
) -> Result<Sweep, EvalError> {
    let spec = model.model.latent();
    if latent_dim >= spec.dim() {
        return Err(EvalError::Directive(format!("latent dim {latent_dim} out of range for size {}", spec.dim())));
    }
    let scenario = &model.scenario;
    let extractors: Vec<(String, FeatureExtractor)> = scenario
        .directives()
        .iter()
        .map(|d| Ok((d.to_string(), FeatureExtractor::for_directive(scenario, d)?)))
        .collect::<Result<_, EvalError>>()?;
    let runs = map_ordered(parallelism, commands, |&value| -> Result<SweepRun, EvalError> {
        let mut z = vec![0.0; spec.dim()];
        z[latent_dim] = value;
        let cfg = EngineConfig {
            initial_z: Some(z.clone()),
            ..engine.clone()
        };
        let out = run_online(Arc::clone(model), &cfg, &[])?;
        let outcome = judge(&out, scenario);
        let mut features = BTreeMap::new();
        let mut feature_errors = BTreeMap::new();
        if outcome.success {
            for (name, x) in &extractors {
                match x.extract(&out.trace, scenario) {
                    Ok(v) => {
                        features.insert(name.clone(), v);
                    }
                    Err(e) => {
                        feature_errors.insert(name.clone(), e.to_string());
                    }
                }
            }
        }
        Ok(SweepRun {
            z,
            outcome,
            jerk: out.jerk(),
            features,
            feature_errors,
        })
    });
    Ok(Sweep {
        latent_dim,
        commands: commands.to_vec(),
        runs: runs.into_iter().collect::<Result<_, _>>()?,
    })
}

/// How the sign of a latent dimension was tied to the directive axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// From the trained predictor head's monotone trend.
    Predictor,
    /// No trained head for the dimension; the sign with the lower MDE is kept.
    BestFit,
}

/// Whether the head for `latent_dim` predicts a decreasing label across `commands`.
/// `None` when the dimension has no trained head.
pub fn probe_direction(model: &ModelCheckpoint, latent_dim: usize, commands: &[f64]) -> Result<Option<bool>, EvalError> {
    let constrained = latent_dim < model.model.latent().directive_names.len();
    let baseline = model.training.get("baseline").and_then(|b| b.as_bool()).unwrap_or(false);
    if !constrained || baseline || commands.len() < 2 {
        return Ok(None);
    }
    let lo = model.model.label_probability(latent_dim, commands[0])?;
    let hi = model.model.label_probability(latent_dim, commands[commands.len() - 1])?;
    Ok(Some(hi < lo))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdeReport {
    pub directive: String,
    pub latent_dim: usize,
    pub reference: Line,
    pub generated: Line,
    pub mde: f64,
    pub flipped: bool,
    pub orientation: Orientation,
    pub tsr: TsrReport,
    pub reference_points: Vec<(f64, f64)>,
    pub generated_points: Vec<(f64, f64)>,
    /// `(command, reason)` of runs left out of the fit.
    pub excluded: Vec<(f64, String)>,
}

/// Fits the generated line for `directive` from a sweep and scores it against `reference`.
/// With `flip = None` both signs are tried and the lower MDE is kept.
pub fn mde_from_sweep(
    sweep: &Sweep,
    directive: &str,
    reference: &Reference,
    flip: Option<bool>,
) -> Result<MdeReport, EvalError> {
    let mut samples = Vec::new();
    let mut excluded = Vec::new();
    for (&c, run) in sweep.commands.iter().zip(&sweep.runs) {
        match (run.features.get(directive), &run.outcome.reason) {
            (Some(&y), _) => samples.push((c, y)),
            (None, Some(reason)) => excluded.push((c, reason.clone())),
            (None, None) => {
                let why = run.feature_errors.get(directive).cloned().unwrap_or_else(|| "feature missing".into());
                excluded.push((c, why));
            }
        }
    }
    if samples.len() < 2 {
        return Err(EvalError::TooFewPoints {
            directive: directive.to_string(),
            latent_dim: sweep.latent_dim,
            found: samples.len(),
        });
    }
    let outcomes: Vec<Outcome> = sweep.runs.iter().map(|r| r.outcome.clone()).collect();
    type Scored = (Line, f64, Vec<(f64, f64)>);
    let score = |flipped: bool| -> Result<Scored, EvalError> {
        let points = samples
            .iter()
            .map(|&(c, y)| {
                let x = latent_to_x(c)?;
                Ok((if flipped { 1.0 - x } else { x }, y))
            })
            .collect::<Result<Vec<_>, EvalError>>()?;
        let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
        let line = fit_line(&xs, &ys)?;
        Ok((line, mde(&reference.line, &line)?, points))
    };
    let (flipped, orientation) = match flip {
        Some(f) => (f, Orientation::Predictor),
        None => {
            let keep = score(false)?.1;
            let swap = score(true)?.1;
            (swap < keep, Orientation::BestFit)
        }
    };
    let (generated, value, generated_points) = score(flipped)?;
    Ok(MdeReport {
        directive: directive.to_string(),
        latent_dim: sweep.latent_dim,
        reference: reference.line,
        generated,
        mde: value,
        flipped,
        orientation,
        tsr: tsr(&outcomes)?,
        reference_points: reference.points.clone(),
        generated_points,
        excluded,
    })
}

/// Sweep, orientation probe and score for one (directive, latent dim) pair.
pub fn run_mde_protocol(
    model: &Arc<ModelCheckpoint>,
    engine: &EngineConfig,
    directive: &str,
    latent_dim: usize,
    reference: &Reference,
    parallelism: Parallelism,
) -> Result<MdeReport, EvalError> {
    let s = sweep(model, engine, latent_dim, &SWEEP_COMMANDS, parallelism)?;
    let flip = probe_direction(model, latent_dim, &SWEEP_COMMANDS)?;
    mde_from_sweep(&s, directive, reference, flip)
}

pub fn mde_csv(reports: &[MdeReport]) -> String {
    let mut out = String::from("directive,latent_dim,a,b,c,d,mde,flipped,orientation,tsr\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{:?},{}\n",
            r.directive,
            r.latent_dim,
            r.reference.slope,
            r.reference.intercept,
            r.generated.slope,
            r.generated.intercept,
            r.mde,
            r.flipped,
            r.orientation,
            r.tsr
        ));
    }
    out
}

/// Settings for the blending-scheme comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub schemes: Vec<WeightScheme>,
    /// One paired trial per seed; every scheme sees the same switch plan.
    pub seeds: Vec<u64>,
    pub engine: EngineConfig,
    /// Magnitude range of the constrained commands before and after the switch.
    pub magnitude: (f64, f64),
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            schemes: vec![
                WeightScheme::None,
                WeightScheme::Inverse,
                WeightScheme::Exponential { m: crate::inference::DEFAULT_DECAY },
                WeightScheme::default(),
            ],
            seeds: (0..5).collect(),
            engine: EngineConfig::default(),
            magnitude: (0.5, 1.5),
        }
    }
}

/// Starting command, switched command and the tick of the switch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchPlan {
    pub z_from: Vec<f64>,
    pub z_to: Vec<f64>,
    pub tick: usize,
}

/// Constrained coordinates flip sign across the switch, which lands somewhere in the
/// middle fifth of the run; unconstrained coordinates stay at 0.
pub fn switch_plan(dim: usize, constrained: usize, duration: usize, magnitude: (f64, f64), seed: u64) -> SwitchPlan {
    let mut r = rng(seed);
    let (lo, hi) = magnitude;
    let mut z_from = vec![0.0; dim];
    let mut z_to = vec![0.0; dim];
    for s in 0..constrained.min(dim) {
        let sign = if r.gen_bool(0.5) { 1.0 } else { -1.0 };
        z_from[s] = sign * r.gen_range(lo..=hi);
        z_to[s] = -sign * r.gen_range(lo..=hi);
    }
    let tick = duration * 2 / 5 + r.gen_range(0..=duration / 5);
    SwitchPlan { z_from, z_to, tick }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTrial {
    pub seed: u64,
    pub plan: SwitchPlan,
    pub outcome: Outcome,
    pub jerk: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub scheme: String,
    pub tsr: TsrReport,
    pub mean_jerk: f64,
    pub trials: Vec<AblationTrial>,
}

/// Runs every scheme on the same seeded switch plans; returns one row per scheme.
pub fn weight_ablation(
    model: &Arc<ModelCheckpoint>,
    cfg: &AblationConfig,
    parallelism: Parallelism,
) -> Result<Vec<AblationRow>, EvalError> {
    if cfg.seeds.is_empty() {
        return Err(EvalError::NoTrials);
    }
    let spec = model.model.latent();
    let plans: Vec<(u64, SwitchPlan)> = cfg
        .seeds
        .iter()
        .map(|&s| {
            let plan = switch_plan(spec.dim(), spec.directive_names.len(), cfg.engine.duration_ticks, cfg.magnitude, s);
            (s, plan)
        })
        .collect();
    let mut rows = Vec::with_capacity(cfg.schemes.len());
    for scheme in &cfg.schemes {
        let engine = EngineConfig {
            scheme: *scheme,
            ..cfg.engine.clone()
        };
        let trials = map_ordered(parallelism, &plans, |(seed, plan)| -> Result<AblationTrial, EvalError> {
            let run_cfg = EngineConfig {
                initial_z: Some(plan.z_from.clone()),
                ..engine.clone()
            };
            let command = ScheduledCommand {
                tick: plan.tick,
                write: LatentWrite::All(plan.z_to.clone()),
            };
            let out = run_online(Arc::clone(model), &run_cfg, &[command])?;
            Ok(AblationTrial {
                seed: *seed,
                plan: plan.clone(),
                outcome: judge(&out, &model.scenario),
                jerk: out.jerk(),
            })
        });
        let trials: Vec<AblationTrial> = trials.into_iter().collect::<Result<_, _>>()?;
        let outcomes: Vec<Outcome> = trials.iter().map(|t| t.outcome.clone()).collect();
        rows.push(AblationRow {
            scheme: scheme.label(),
            tsr: tsr(&outcomes)?,
            mean_jerk: trials.iter().map(|t| t.jerk).sum::<f64>() / trials.len() as f64,
            trials,
        });
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("scheme,successes,trials,tsr,mean_jerk\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.scheme, r.tsr.successes, r.tsr.total, r.tsr, r.mean_jerk));
    }
    out
}
