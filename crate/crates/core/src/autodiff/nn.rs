//! Layers built from graph primitives.

use rand::Rng;

use super::params::{uniform_fan_in, ParamId, ParamStore};
use super::{Graph, TensorError, Var};

/// Fused-gate LSTM weights: `w` is `(input + hidden) x 4·hidden` with gate
/// blocks ordered input, forget, candidate, output; `b` is `1 x 4·hidden`.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub w: Var,
    pub b: Var,
}

#[derive(Clone, Debug)]
pub struct LstmLayer {
    pub input_dim: usize,
    pub hidden: usize,
    pub w: ParamId,
    pub b: ParamId,
}

impl LstmLayer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, prefix: &str, input_dim: usize, hidden: usize) -> Self {
        let fan_in = input_dim + hidden;
        let w = store.add(format!("{prefix}.w"), uniform_fan_in(rng, &[fan_in, 4 * hidden], fan_in));
        let b = store.add(format!("{prefix}.b"), uniform_fan_in(rng, &[1, 4 * hidden], fan_in));
        Self { input_dim, hidden, w, b }
    }

    pub fn bind(&self, g: &mut Graph, store: &ParamStore) -> LstmWeights {
        LstmWeights {
            w: g.param(store, self.w),
            b: g.param(store, self.b),
        }
    }
}

/// One LSTM step on a batch of rows: returns `(h, c)`.
pub fn lstm_cell(g: &mut Graph, x: Var, h_prev: Var, c_prev: Var, weights: &LstmWeights) -> Result<(Var, Var), TensorError> {
    let hidden = g.value(h_prev).dims().1;
    let w_shape = g.shape(weights.w).to_vec();
    let in_dim = g.value(x).dims().1;
    if w_shape.len() != 2 || w_shape[0] != in_dim + hidden || w_shape[1] != 4 * hidden {
        return Err(TensorError::ShapeMismatch {
            op: "lstm_cell",
            lhs: vec![in_dim + hidden, 4 * hidden],
            rhs: w_shape,
        });
    }
    if g.shape(c_prev) != g.shape(h_prev) {
        return Err(TensorError::ShapeMismatch {
            op: "lstm_cell",
            lhs: g.shape(h_prev).to_vec(),
            rhs: g.shape(c_prev).to_vec(),
        });
    }
    let xh = g.concat(&[x, h_prev])?;
    let pre = g.matmul(xh, weights.w)?;
    let gates = g.add_row(pre, weights.b)?;
    let i_pre = g.slice(gates, 0, hidden)?;
    let f_pre = g.slice(gates, hidden, 2 * hidden)?;
    let g_pre = g.slice(gates, 2 * hidden, 3 * hidden)?;
    let o_pre = g.slice(gates, 3 * hidden, 4 * hidden)?;
    let i = g.sigmoid(i_pre)?;
    let f = g.sigmoid(f_pre)?;
    let cand = g.tanh(g_pre)?;
    let o = g.sigmoid(o_pre)?;
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let c_act = g.tanh(c)?;
    let h = g.mul(o, c_act)?;
    Ok((h, c))
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, prefix: &str, input_dim: usize, output_dim: usize) -> Self {
        let w = store.add(format!("{prefix}.w"), uniform_fan_in(rng, &[input_dim, output_dim], input_dim));
        let b = store.add(format!("{prefix}.b"), uniform_fan_in(rng, &[1, output_dim], input_dim));
        Self { w, b }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, TensorError> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

/// Fully connected network with ReLU between layers and a linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, prefix: &str, widths: &[usize]) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, rng, &format!("{prefix}.l{i}"), w[0], w[1]))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, TensorError> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, h)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }
}
