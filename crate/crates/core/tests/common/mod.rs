//! Full-model gradient check shared by the gradcheck and acceptance targets.
#![allow(dead_code)]

use modir_core::autodiff::{Graph, Tensor, Var};
use modir_core::model::{Cvae, LatentSpec, ModelConfig};
use modir_core::train::losses;
use modir_core::train::{LossWeights, RecMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Below this magnitude the error is measured against the floor instead.
pub const FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

pub fn random(r: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| r.gen_range(lo..hi)).collect())
}

#[derive(Debug, Default)]
pub struct FullCheck {
    pub checked: usize,
    pub skipped: usize,
    pub worst: f64,
    pub failures: Vec<String>,
}

pub fn tiny_model(seed: u64) -> Cvae {
    let latent = LatentSpec::new(vec!["temporal".into(), "physical".into()], 1);
    let mut config = ModelConfig::desk(3, 5, latent);
    config.encoder_layers = 2;
    config.decoder_layers = 2;
    config.hidden_dim = 8;
    config.output_fc_layers = 2;
    Cvae::new(config, seed).unwrap()
}

fn full_loss(model: &Cvae, g: &mut Graph, steps: &[Tensor], noise: &Tensor, labels: &[Tensor]) -> Var {
    let weights = LossWeights {
        alpha: 1.0,
        beta: 0.5,
        gamma: 1.0,
    };
    let steps: Vec<Var> = steps.iter().map(|t| g.constant(t.clone())).collect();
    let noise = g.constant(noise.clone());
    let fwd = model.forward(g, &steps, noise).unwrap();
    let rec = losses::reconstruction_loss(g, &steps, &fwd.reconstruction, RecMode::ElementMean).unwrap();
    let kl = losses::kl_loss(g, fwd.mu, fwd.logvar).unwrap();
    let targets: Vec<Var> = labels.iter().map(|t| g.constant(t.clone())).collect();
    let modi = losses::modifier_loss(g, &targets, &fwd.logits).unwrap();
    losses::total_loss(g, rec, kl, modi, &weights).unwrap()
}

/// Compares every parameter gradient of the total loss on `seeds` tiny models.
pub fn full_model(seeds: std::ops::Range<u64>) -> FullCheck {
    let mut out = FullCheck::default();
    for seed in seeds {
        let model = tiny_model(seed);
        let mut r = ChaCha8Rng::seed_from_u64(3000 + seed);
        let batch = 2;
        let steps: Vec<Tensor> = (0..5).map(|_| random(&mut r, batch, 3, -1.0, 1.0)).collect();
        let noise = random(&mut r, batch, 3, -1.0, 1.0);
        let labels: Vec<Tensor> = (0..2)
            .map(|_| Tensor::matrix(batch, 1, (0..batch).map(|_| [0.0, 0.5, 1.0][r.gen_range(0..3)]).collect()))
            .collect();
        let mut g = Graph::new();
        let l = full_loss(&model, &mut g, &steps, &noise, &labels);
        let grads = g.param_gradients(&g.backward(l).unwrap(), &model.store);
        let ids: Vec<_> = model.store.iter().map(|(id, _, _)| id).collect();
        let mut probe = model.clone();
        for (p, id) in ids.iter().enumerate() {
            for k in 0..model.store.get(*id).len() {
                let mut eval = |delta: f64| {
                    let original = model.store.get(*id).data()[k];
                    probe.store.get_mut(*id).data_mut()[k] = original + delta;
                    let mut g = Graph::new();
                    let l = full_loss(&probe, &mut g, &steps, &noise, &labels);
                    probe.store.get_mut(*id).data_mut()[k] = original;
                    g.value(l).item()
                };
                let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
                let analytic = grads[p].data()[k];
                let e = rel_err(analytic, numeric);
                if e >= TOLERANCE && crosses_kink(&mut eval, analytic) {
                    out.skipped += 1;
                    continue;
                }
                if e >= TOLERANCE {
                    out.failures.push(format!("seed {seed} {} [{k}]: analytic {analytic} numeric {numeric}", model.store.name(*id)));
                }
                out.worst = out.worst.max(e);
                out.checked += 1;
            }
        }
    }
    out
}

/// One-sided quotients disagree when a ReLU switches inside the step.
fn crosses_kink(eval: &mut impl FnMut(f64) -> f64, analytic: f64) -> bool {
    let base = eval(0.0);
    let right = (eval(STEP) - base) / STEP;
    let left = (base - eval(-STEP)) / STEP;
    (right - left).abs() > 1e-3 * analytic.abs().max(1.0) && (rel_err(analytic, right) < 1e-3 || rel_err(analytic, left) < 1e-3)
}
