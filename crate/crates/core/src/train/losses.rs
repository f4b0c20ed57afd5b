//! Loss terms, as graph builders for training and as plain functions for reporting.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LossWeights {
    pub fn is_baseline(&self) -> bool {
        self.gamma == 0.0
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha > 0.0) || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(format!("loss weights need alpha > 0 and beta, gamma >= 0, got {self:?}"));
        }
        Ok(())
    }
}

/// Reduction of the squared reconstruction error over one window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecMode {
    /// Mean over all `W · D` elements.
    #[default]
    ElementMean,
    /// Sum over the `D` state channels, mean over the `W` steps.
    Strict,
}

pub fn reconstruction_value(target: &[f64], predicted: &[f64], dim: usize, mode: RecMode) -> f64 {
    assert_eq!(target.len(), predicted.len(), "reconstruction operands differ in length");
    let sq: f64 = target.iter().zip(predicted).map(|(a, b)| (a - b) * (a - b)).sum();
    match mode {
        RecMode::ElementMean => sq / target.len() as f64,
        RecMode::Strict => sq / (target.len() / dim) as f64,
    }
}

/// `0.5 · Σ (mu² + exp(logvar) − 1 − logvar)`.
pub fn kl_value(mu: &[f64], logvar: &[f64]) -> f64 {
    assert_eq!(mu.len(), logvar.len(), "kl operands differ in length");
    0.5 * mu.iter().zip(logvar).map(|(m, lv)| m * m + lv.exp() - 1.0 - lv).sum::<f64>()
}

/// Binary cross-entropy of `σ(logit)` against `y` in the overflow-free logit form.
pub fn bce_value(y: f64, logit: f64) -> f64 {
    // softplus(ℓ) − y·ℓ, rearranged so no large terms cancel
    if logit >= 0.0 {
        (1.0 - y) * logit + (-logit).exp().ln_1p()
    } else {
        -y * logit + logit.exp().ln_1p()
    }
}

pub fn modifier_value(labels: &[f64], logits: &[f64]) -> Result<f64, String> {
    if labels.len() != logits.len() {
        return Err(format!("{} labels for {} logits", labels.len(), logits.len()));
    }
    Ok(labels.iter().zip(logits).map(|(&y, &l)| bce_value(y, l)).sum())
}

pub fn total_value(rec: f64, kl: f64, modi: f64, w: &LossWeights) -> f64 {
    w.alpha * rec + w.beta * kl + w.gamma * modi
}

/// Batch-mean reconstruction loss over matching step lists of `B × D` tensors.
pub fn reconstruction_loss(g: &mut Graph, target: &[Var], predicted: &[Var], mode: RecMode) -> Result<Var, TensorError> {
    if target.len() != predicted.len() || target.is_empty() {
        return Err(TensorError::ShapeMismatch {
            op: "reconstruction_loss",
            lhs: vec![target.len()],
            rhs: vec![predicted.len()],
        });
    }
    let mut sums = Vec::with_capacity(target.len());
    for (&a, &b) in target.iter().zip(predicted) {
        let diff = g.sub(b, a)?;
        let sq = g.mul(diff, diff)?;
        sums.push(g.sum(sq)?);
    }
    let (batch, dim) = g.value(target[0]).dims();
    let total = sums.into_iter().try_fold(None, |acc: Option<Var>, s| -> Result<Option<Var>, TensorError> {
        Ok(Some(match acc {
            None => s,
            Some(a) => g.add(a, s)?,
        }))
    })?;
    let steps = target.len() as f64;
    let denom = match mode {
        RecMode::ElementMean => batch as f64 * steps * dim as f64,
        RecMode::Strict => batch as f64 * steps,
    };
    g.scale(total.expect("non-empty"), 1.0 / denom)
}

/// Batch mean of the per-sample KL divergence to `N(0, I)`.
pub fn kl_loss(g: &mut Graph, mu: Var, logvar: Var) -> Result<Var, TensorError> {
    let batch = g.value(mu).dims().0 as f64;
    let mu2 = g.mul(mu, mu)?;
    let var = g.exp(logvar)?;
    let a = g.add(mu2, var)?;
    let b = g.sub(a, logvar)?;
    let c = g.offset(b, -1.0)?;
    let s = g.sum(c)?;
    g.scale(s, 0.5 / batch)
}

/// Batch-mean BCE for one head: `softplus(ℓ) − y·ℓ`.
pub fn bce_loss(g: &mut Graph, targets: Var, logits: Var) -> Result<Var, TensorError> {
    let sp = g.softplus(logits)?;
    let yl = g.mul(targets, logits)?;
    let per = g.sub(sp, yl)?;
    g.mean(per)
}

/// Sum of the per-head BCE terms; an exact 0 when there are no heads.
pub fn modifier_loss(g: &mut Graph, targets: &[Var], logits: &[Var]) -> Result<Var, TensorError> {
    if targets.len() != logits.len() {
        return Err(TensorError::ShapeMismatch {
            op: "modifier_loss",
            lhs: vec![targets.len()],
            rhs: vec![logits.len()],
        });
    }
    let mut acc = g.constant(Tensor::scalar(0.0));
    for (&y, &l) in targets.iter().zip(logits) {
        let term = bce_loss(g, y, l)?;
        acc = g.add(acc, term)?;
    }
    Ok(acc)
}

pub fn total_loss(g: &mut Graph, rec: Var, kl: Var, modi: Var, w: &LossWeights) -> Result<Var, TensorError> {
    let a = g.scale(rec, w.alpha)?;
    let b = g.scale(kl, w.beta)?;
    let c = g.scale(modi, w.gamma)?;
    let ab = g.add(a, b)?;
    g.add(ab, c)
}
