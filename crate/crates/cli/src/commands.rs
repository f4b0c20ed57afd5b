use std::collections::BTreeMap;
use std::io::BufReader;
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use modir_core::dataset::{synthesize_grid, DatasetBundle};
use modir_core::eval::{
    ablation_csv, mde_csv, mde_from_sweep, probe_direction, sweep, synthesize_reference, weight_ablation,
    AblationConfig, AblationRow, MdeReport, Reference, ReferenceTable, Sweep, SWEEP_COMMANDS,
};
use modir_core::inference::read_events;
use modir_core::model::ModelCheckpoint;
use modir_core::par::Parallelism;
use modir_core::train::{history_csv, train};
use serde_json::json;

use crate::config::RunConfig;
use crate::serve::{self, ServeOptions, Service};

pub struct Common {
    pub config: RunConfig,
    pub seed: Option<u64>,
}

impl Common {
    pub fn load(config: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        Ok(Self {
            config: RunConfig::load(config)?,
            seed,
        })
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

pub fn synth(c: &Common, out: &Path) -> Result<DatasetBundle> {
    let scenario = c.config.scenario(c.seed)?;
    let preset = c.config.preset(None)?;
    let demos = synthesize_grid(&scenario, c.config.dataset.repeats)?;
    let bundle = DatasetBundle::build(&scenario, &demos, &c.config.build_config(&preset, c.seed))?;
    bundle.save(out)?;
    println!("{} demonstrations, {} windows -> {}", bundle.num_demos(), bundle.windows.len(), out.display());
    for (directive, counts) in bundle.label_histogram() {
        let cells: Vec<String> = counts.iter().map(|(level, n)| format!("{level}: {n}")).collect();
        println!("  {directive}: {}", cells.join(", "));
    }
    Ok(bundle)
}

pub fn train_cmd(c: &Common, dataset: &Path, out: &Path) -> Result<ModelCheckpoint> {
    let bundle = DatasetBundle::load(dataset)?;
    let preset = c.config.preset(c.seed)?;
    let model_config = preset.model_config(&bundle);
    let mut report = |epoch: usize, rows: &[modir_core::train::HistoryRow], _: &ModelCheckpoint| {
        if let Some(r) = rows.last() {
            println!("epoch {epoch:4}  rec {:.4}  kl {:.4}  modi {:.4}  total {:.4}", r.rec, r.kl, r.modi, r.total);
        }
    };
    let outcome = train(&bundle, &model_config, &preset.train, Some(&mut report))?;
    outcome.checkpoint.save(out, Some(&outcome.optimizer))?;
    let history = out.with_extension("history.csv");
    write(&history, &history_csv(&outcome.history))?;
    println!("checkpoint -> {}, history -> {}", out.display(), history.display());
    Ok(outcome.checkpoint)
}

fn load_model(path: &Path) -> Result<Arc<ModelCheckpoint>> {
    Ok(Arc::new(
        ModelCheckpoint::load(path).with_context(|| format!("cannot load checkpoint {}", path.display()))?,
    ))
}

fn references(c: &Common, model: &ModelCheckpoint) -> Result<BTreeMap<String, Reference>> {
    let e = &c.config.eval;
    let scenario = &model.scenario;
    let mut out = BTreeMap::new();
    let table = match e.reference.as_str() {
        "synthesized" => None,
        "table" => {
            let Some(path) = &e.reference_file else {
                bail!("eval.reference = \"table\" needs eval.reference_file");
            };
            Some(ReferenceTable::load(path)?)
        }
        other => bail!("unknown eval.reference {other:?}; expected synthesized or table"),
    };
    for d in scenario.directives() {
        let r = match &table {
            None => synthesize_reference(scenario, d, e.trials, e.noise_free, c.seed.unwrap_or(0))?,
            Some(t) => t
                .get(scenario.task, d)
                .with_context(|| format!("reference table has no line for {} {d}", scenario.task.name()))?
                .into(),
        };
        out.insert(d.to_string(), r);
    }
    Ok(out)
}

/// Sweeps every latent dim and scores every directive against it.
pub fn eval_cmd(c: &Common, checkpoint: &Path, out: &Path, ablation: bool) -> Result<Vec<MdeReport>> {
    let model = load_model(checkpoint)?;
    let refs = references(c, &model)?;
    let mut reports = Vec::new();
    let mut sweeps: Vec<Sweep> = Vec::new();
    for dim in 0..model.model.latent().dim() {
        let s = sweep(&model, &c.config.engine, dim, &SWEEP_COMMANDS, Parallelism::default())?;
        let flip = probe_direction(&model, dim, &SWEEP_COMMANDS)?;
        for (directive, reference) in &refs {
            match mde_from_sweep(&s, directive, reference, flip) {
                Ok(r) => {
                    println!("{directive:>9}  dim {dim}  MDE {:.3}  TSR {}", r.mde, r.tsr);
                    reports.push(r);
                }
                Err(e) => println!("{directive:>9}  dim {dim}  {e}"),
            }
        }
        sweeps.push(s);
    }
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let body = json!({ "references": refs, "reports": reports, "sweeps": sweeps });
    write(&out.join("mde.json"), &serde_json::to_string_pretty(&body)?)?;
    write(&out.join("mde.csv"), &mde_csv(&reports))?;
    if ablation {
        ablate_with(c, &model, out)?;
    }
    Ok(reports)
}

fn ablate_with(c: &Common, model: &Arc<ModelCheckpoint>, out: &Path) -> Result<Vec<AblationRow>> {
    let a = &c.config.ablation;
    let base = c.seed.unwrap_or(0);
    let cfg = AblationConfig {
        schemes: c.config.schemes()?,
        seeds: (base..base + a.trials as u64).collect(),
        engine: c.config.engine.clone(),
        magnitude: a.magnitude,
    };
    let rows = weight_ablation(model, &cfg, Parallelism::default())?;
    for r in &rows {
        println!("{:>18}  TSR {}  jerk {:.4e}", r.scheme, r.tsr, r.mean_jerk);
    }
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write(&out.join("ablation.json"), &serde_json::to_string_pretty(&rows)?)?;
    write(&out.join("ablation.csv"), &ablation_csv(&rows))?;
    Ok(rows)
}

pub fn ablate_cmd(c: &Common, checkpoint: &Path, out: &Path) -> Result<Vec<AblationRow>> {
    ablate_with(c, &load_model(checkpoint)?, out)
}

fn serve_options(c: &Common, port: Option<u16>, log: Option<PathBuf>) -> Result<ServeOptions> {
    let s = &c.config.serve;
    let port = port.unwrap_or(s.port);
    let addr: SocketAddr = (s.host.as_str(), port)
        .to_socket_addrs()?
        .next()
        .with_context(|| format!("cannot resolve {}", s.host))?;
    Ok(ServeOptions {
        addr,
        rate_hz: s.rate_hz,
        pace: s.pace,
        log,
    })
}

pub fn serve_cmd(c: &Common, checkpoint: &Path, port: Option<u16>, log: Option<PathBuf>) -> Result<Service> {
    let model = load_model(checkpoint)?;
    let service = serve::serve(model, c.config.engine.clone(), serve_options(c, port, log)?)?;
    println!("serving on {}", service.url());
    Ok(service)
}

pub fn replay_cmd(c: &Common, log: &Path, port: Option<u16>) -> Result<Service> {
    let file = std::fs::File::open(log).with_context(|| format!("cannot open event log {}", log.display()))?;
    let events = read_events(BufReader::new(file))?;
    let service = serve::replay(events, c.config.engine.control_dt, serve_options(c, port, None)?)?;
    println!("replaying {} on {}", log.display(), service.url());
    Ok(service)
}
