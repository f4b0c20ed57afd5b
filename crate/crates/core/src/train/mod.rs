//! Composite-loss optimization loop with history and snapshots.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Graph, Tensor, TensorError, Var};
use crate::dataset::{ActionWindow, DatasetBundle, Split};
use crate::model::{Cvae, ModelCheckpoint, ModelConfig, ModelError};
use crate::par::{map_ordered, Parallelism};
use crate::util::{derive_seed, rng};

pub mod losses;

pub use losses::{LossWeights, RecMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Validation and snapshot cadence in epochs.
    pub eval_every: usize,
    pub weights: LossWeights,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub rec_mode: RecMode,
    /// Epochs over which β ramps linearly from 0; 0 disables warm-up.
    #[serde(default)]
    pub kl_warmup_epochs: usize,
    /// Each batch is split into this many shards whose gradients are summed in order.
    #[serde(default = "one")]
    pub shards: usize,
    #[serde(default)]
    pub parallelism: Parallelism,
}

fn one() -> usize {
    1
}

/// Named starting points for model and training settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub hidden_dim: usize,
    pub window: usize,
    pub unconstrained: usize,
    pub hop: usize,
    /// Initial bias of the label heads' hidden layers; fan-in uniform when unset.
    #[serde(default)]
    pub predictor_hidden_bias: Option<f64>,
    pub train: TrainConfig,
}

pub const PROPOSED_WEIGHTS: LossWeights = LossWeights { alpha: 1.0, beta: 0.3, gamma: 2.5 };
pub const BASELINE_WEIGHTS: LossWeights = LossWeights { alpha: 1.0, beta: 4.0, gamma: 0.0 };

impl Preset {
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "smoke" => Some(Self::smoke()),
            "full-wiping" => Some(Self::full_wiping()),
            _ => None,
        }
    }

    /// Desk preset that trains in minutes on one CPU core.
    pub fn smoke() -> Self {
        Self {
            name: "smoke".into(),
            encoder_layers: 1,
            decoder_layers: 1,
            hidden_dim: 64,
            window: 50,
            unconstrained: 1,
            hop: 8,
            predictor_hidden_bias: Some(0.1),
            train: TrainConfig {
                epochs: 150,
                batch_size: 32,
                seed: 0,
                eval_every: 10,
                weights: PROPOSED_WEIGHTS,
                adam: AdamConfig::default(),
                rec_mode: RecMode::ElementMean,
                kl_warmup_epochs: 0,
                shards: 1,
                parallelism: Parallelism::Rayon,
            },
        }
    }

    /// Full-size settings: 3 + 3 layers of width 256, batch 256, 1000 epochs.
    pub fn full_wiping() -> Self {
        Self {
            name: "full-wiping".into(),
            encoder_layers: 3,
            decoder_layers: 3,
            hidden_dim: 256,
            window: 50,
            unconstrained: 1,
            hop: 1,
            predictor_hidden_bias: None,
            train: TrainConfig {
                epochs: 1000,
                batch_size: 256,
                seed: 0,
                eval_every: 50,
                weights: PROPOSED_WEIGHTS,
                adam: AdamConfig::default(),
                rec_mode: RecMode::ElementMean,
                kl_warmup_epochs: 0,
                shards: 8,
                parallelism: Parallelism::Rayon,
            },
        }
    }

    /// Same backbone without the label heads' loss, with the baseline KL weight.
    pub fn baseline(mut self) -> Self {
        self.train.weights = BASELINE_WEIGHTS;
        self
    }

    pub fn model_config(&self, bundle: &DatasetBundle) -> ModelConfig {
        let spec = crate::model::LatentSpec::new(bundle.directive_names.clone(), self.unconstrained);
        let mut cfg = ModelConfig::desk(bundle.state_dim(), self.window, spec);
        cfg.encoder_layers = self.encoder_layers;
        cfg.decoder_layers = self.decoder_layers;
        cfg.hidden_dim = self.hidden_dim;
        cfg.predictor.hidden_bias = self.predictor_hidden_bias;
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub rec: f64,
    pub kl: f64,
    pub modi: f64,
    pub total: f64,
    pub split: Split,
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from("epoch,rec,kl,modi,total,split\n");
    for r in rows {
        let split = match r.split {
            Split::Train => "train",
            Split::Validation => "validation",
        };
        writeln!(out, "{},{:e},{:e},{:e},{:e},{}", r.epoch, r.rec, r.kl, r.modi, r.total, split).expect("write to string");
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training setup: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        detail: String,
        /// Parameters as they were before the failing batch.
        snapshot: Box<ModelCheckpoint>,
    },
}

pub struct TrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub history: Vec<HistoryRow>,
    pub optimizer: Adam,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Terms {
    pub rec: f64,
    pub kl: f64,
    pub modi: f64,
    pub total: f64,
}

impl Terms {
    fn add_scaled(&mut self, o: &Terms, f: f64) {
        self.rec += f * o.rec;
        self.kl += f * o.kl;
        self.modi += f * o.modi;
        self.total += f * o.total;
    }
}

/// A batch with rows already normalized: per step a `B × D` block, plus labels and noise.
struct Batch {
    steps: Vec<Tensor>,
    labels: Vec<Tensor>,
    noise: Tensor,
}

fn make_batch(bundle: &DatasetBundle, windows: &[&ActionWindow], noise: Vec<f64>) -> Batch {
    let (w, d) = (bundle.width(), bundle.state_dim());
    let b = windows.len();
    let normalized: Vec<Vec<f64>> = windows.iter().map(|win| bundle.normalized(win)).collect();
    let steps = (0..w)
        .map(|k| {
            let mut data = Vec::with_capacity(b * d);
            for seq in &normalized {
                data.extend_from_slice(&seq[k * d..(k + 1) * d]);
            }
            Tensor::matrix(b, d, data)
        })
        .collect();
    let labels = (0..bundle.directive_names.len())
        .map(|s| Tensor::matrix(b, 1, windows.iter().map(|win| win.labels[s]).collect()))
        .collect();
    let l = noise.len() / b.max(1);
    Batch {
        steps,
        labels,
        noise: Tensor::matrix(b, l, noise),
    }
}

fn loss_terms(
    model: &Cvae,
    g: &mut Graph,
    batch: &Batch,
    cfg: &TrainConfig,
    weights: &LossWeights,
) -> Result<(Var, Terms), ModelError> {
    let steps: Vec<Var> = batch.steps.iter().map(|t| g.constant(t.clone())).collect();
    let noise = g.constant(batch.noise.clone());
    let fwd = model.forward(g, &steps, noise)?;
    let rec = losses::reconstruction_loss(g, &steps, &fwd.reconstruction, cfg.rec_mode)?;
    let kl = losses::kl_loss(g, fwd.mu, fwd.logvar)?;
    let targets: Vec<Var> = batch.labels.iter().map(|t| g.constant(t.clone())).collect();
    let modi = losses::modifier_loss(g, &targets, &fwd.logits)?;
    let total = losses::total_loss(g, rec, kl, modi, weights)?;
    let terms = Terms {
        rec: g.value(rec).item(),
        kl: g.value(kl).item(),
        modi: g.value(modi).item(),
        total: g.value(total).item(),
    };
    Ok((total, terms))
}

/// Loss terms and parameter gradients of one shard, pre-scaled by its share of the batch.
fn shard_gradients(
    model: &Cvae,
    batch: &Batch,
    cfg: &TrainConfig,
    weights: &LossWeights,
    share: f64,
) -> Result<(Terms, Vec<Tensor>), ModelError> {
    let mut g = Graph::new();
    let (total, terms) = loss_terms(model, &mut g, batch, cfg, weights)?;
    let scaled = g.scale(total, share)?;
    let grads = g.backward(scaled)?;
    Ok((terms, g.param_gradients(&grads, &model.store)))
}

/// Evaluates the loss terms with `z = mu`, weighted by window count.
pub fn evaluate(model: &Cvae, bundle: &DatasetBundle, windows: &[&ActionWindow], cfg: &TrainConfig) -> Result<Terms, ModelError> {
    let mut acc = Terms::default();
    if windows.is_empty() {
        return Ok(acc);
    }
    let l = model.latent().dim();
    for chunk in windows.chunks(cfg.batch_size.max(1)) {
        let batch = make_batch(bundle, chunk, vec![0.0; chunk.len() * l]);
        let mut g = Graph::new();
        let (_, terms) = loss_terms(model, &mut g, &batch, cfg, &cfg.weights)?;
        acc.add_scaled(&terms, chunk.len() as f64 / windows.len() as f64);
    }
    Ok(acc)
}

fn snapshot(model: &Cvae, bundle: &DatasetBundle, cfg: &TrainConfig, epochs_done: usize) -> ModelCheckpoint {
    ModelCheckpoint {
        model: model.clone(),
        normalization: bundle.normalization.clone(),
        scenario: bundle.scenario.clone(),
        training: serde_json::json!({
            "train_config": cfg,
            "epochs_completed": epochs_done,
            "baseline": cfg.weights.is_baseline(),
        }),
    }
}

pub type EpochCallback<'a> = &'a mut dyn FnMut(usize, &[HistoryRow], &ModelCheckpoint);

/// Trains a fresh model; deterministic in `cfg.seed` for any parallelism mode.
pub fn train(
    bundle: &DatasetBundle,
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    mut on_eval: Option<EpochCallback<'_>>,
) -> Result<TrainOutcome, TrainError> {
    cfg.weights.validate().map_err(TrainError::Config)?;
    if cfg.epochs == 0 || cfg.batch_size == 0 || cfg.eval_every == 0 || cfg.shards == 0 {
        return Err(TrainError::Config("epochs, batch_size, eval_every and shards must be positive".into()));
    }
    if model_config.window != bundle.width() || model_config.state_dim != bundle.state_dim() {
        return Err(TrainError::Config(format!(
            "model expects {}x{} windows, dataset has {}x{}",
            model_config.window,
            model_config.state_dim,
            bundle.width(),
            bundle.state_dim()
        )));
    }
    if model_config.latent.directive_names != bundle.directive_names {
        return Err(TrainError::Config("latent directive names differ from the dataset's".into()));
    }
    let train_windows = bundle.windows_in(Split::Train);
    if train_windows.is_empty() {
        return Err(TrainError::Config("training split is empty".into()));
    }
    let val_windows = bundle.windows_in(Split::Validation);
    let mut model = Cvae::new(model_config.clone(), derive_seed(cfg.seed, 0))?;
    let mut adam = Adam::new(cfg.adam.clone(), &model.store);
    let l = model.latent().dim();
    let mut history = Vec::new();

    for epoch in 1..=cfg.epochs {
        let mut r = rng(derive_seed(cfg.seed, epoch as u64));
        let mut order: Vec<&ActionWindow> = train_windows.clone();
        order.shuffle(&mut r);
        let mut weights = cfg.weights;
        if cfg.kl_warmup_epochs > 0 {
            weights.beta *= (epoch as f64 / cfg.kl_warmup_epochs as f64).min(1.0);
        }
        let mut epoch_terms = Terms::default();
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let noise: Vec<f64> = (0..chunk.len() * l).map(|_| r.sample(StandardNormal)).collect();
            let shard_len = chunk.len().div_ceil(cfg.shards);
            let shards: Vec<(Batch, f64)> = chunk
                .chunks(shard_len)
                .zip(noise.chunks(shard_len * l))
                .map(|(ws, n)| (make_batch(bundle, ws, n.to_vec()), ws.len() as f64 / chunk.len() as f64))
                .collect();
            let results = map_ordered(cfg.parallelism, &shards, |(b, share)| shard_gradients(&model, b, cfg, &weights, *share));
            let mut grads: Option<Vec<Tensor>> = None;
            let mut terms = Terms::default();
            for (res, (_, share)) in results.into_iter().zip(&shards) {
                let (t, gs) = res.map_err(|e| non_finite(e, epoch, bi, &model, bundle, cfg))?;
                terms.add_scaled(&t, *share);
                match &mut grads {
                    None => grads = Some(gs),
                    Some(acc) => acc.iter_mut().zip(&gs).for_each(|(a, g)| a.add_assign(g)),
                }
            }
            let mut grads = grads.expect("at least one shard");
            if !terms.total.is_finite() || !grads.iter().all(Tensor::is_finite) {
                return Err(non_finite(
                    ModelError::Tensor(TensorError::NonFinite { op: "backward" }),
                    epoch,
                    bi,
                    &model,
                    bundle,
                    cfg,
                ));
            }
            adam.step(&mut model.store, &mut grads);
            epoch_terms.add_scaled(&terms, chunk.len() as f64 / order.len() as f64);
        }
        history.push(row(epoch, &epoch_terms, Split::Train));
        if epoch % cfg.eval_every == 0 || epoch == 1 || epoch == cfg.epochs {
            if !val_windows.is_empty() {
                let v = evaluate(&model, bundle, &val_windows, cfg)?;
                history.push(row(epoch, &v, Split::Validation));
            }
            if let Some(cb) = on_eval.as_mut() {
                cb(epoch, &history, &snapshot(&model, bundle, cfg, epoch));
            }
        }
    }
    Ok(TrainOutcome {
        checkpoint: snapshot(&model, bundle, cfg, cfg.epochs),
        history,
        optimizer: adam,
    })
}

fn row(epoch: usize, t: &Terms, split: Split) -> HistoryRow {
    HistoryRow {
        epoch,
        rec: t.rec,
        kl: t.kl,
        modi: t.modi,
        total: t.total,
        split,
    }
}

fn non_finite(err: ModelError, epoch: usize, batch: usize, model: &Cvae, bundle: &DatasetBundle, cfg: &TrainConfig) -> TrainError {
    match err {
        ModelError::Tensor(TensorError::NonFinite { op }) => TrainError::NonFinite {
            epoch,
            batch,
            detail: format!("{op} produced a non-finite value"),
            snapshot: Box::new(snapshot(model, bundle, cfg, epoch - 1)),
        },
        other => TrainError::Model(other),
    }
}
