//! Sequence CVAE with a partitioned latent space and one label head per constrained latent.

use serde::{Deserialize, Serialize};

use crate::autodiff::nn::{lstm_cell, LstmLayer, Linear, Mlp};
use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, TensorError, Var};
use crate::util::rng;

mod store;

pub use store::{ModelCheckpoint, ModelError};

/// Latent layout: dims `0..S` are constrained (dim `s` encodes `directive_names[s]`),
/// dims `S..S+N` are unconstrained.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentSpec {
    pub constrained: usize,
    pub unconstrained: usize,
    pub directive_names: Vec<String>,
}

impl LatentSpec {
    pub fn new(directive_names: Vec<String>, unconstrained: usize) -> Self {
        Self {
            constrained: directive_names.len(),
            unconstrained,
            directive_names,
        }
    }

    pub fn dim(&self) -> usize {
        self.constrained + self.unconstrained
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.dim() == 0 {
            return Err(ModelError::Config("latent dimension must be at least 1".into()));
        }
        if self.directive_names.len() != self.constrained {
            return Err(ModelError::Config("one directive name per constrained latent".into()));
        }
        Ok(())
    }

    pub fn index_of(&self, directive: &str) -> Option<usize> {
        self.directive_names.iter().position(|d| d == directive)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Sampled,
    Commanded,
}

/// A full latent vector as used at inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentCommand {
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

impl LatentCommand {
    /// All-zero command; unconstrained entries stay 0 at inference.
    pub fn zeros(spec: &LatentSpec) -> Self {
        Self {
            values: vec![0.0; spec.dim()],
            provenance: Provenance::Commanded,
        }
    }

    /// Zero everywhere except `dim`.
    pub fn axis(spec: &LatentSpec, dim: usize, value: f64) -> Self {
        let mut c = Self::zeros(spec);
        c.values[dim] = value;
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    /// Constant initial bias of the hidden layers; fan-in uniform when unset.
    #[serde(default)]
    pub hidden_bias: Option<f64>,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            input_dim: 1,
            hidden_widths: vec![3, 3],
            output_dim: 1,
            hidden_bias: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorInput {
    /// The reparameterized sample of the constrained coordinate.
    Sampled,
    /// The posterior mean of the constrained coordinate.
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub hidden_dim: usize,
    pub output_fc_layers: usize,
    pub window: usize,
    pub state_dim: usize,
    pub latent: LatentSpec,
    pub predictor: PredictorConfig,
    /// Feed the true previous state to the decoder instead of its own prediction.
    #[serde(default)]
    pub teacher_forcing: bool,
    #[serde(default = "default_predictor_input")]
    pub predictor_input: PredictorInput,
    /// Conditioning: `s_t` joins every encoder step, and `(s_t, z)` every decoder step.
    #[serde(default = "default_conditioning")]
    pub conditioning: String,
    #[serde(default = "default_init")]
    pub init: String,
}

fn default_predictor_input() -> PredictorInput {
    PredictorInput::Sampled
}

fn default_conditioning() -> String {
    "concat_every_step".into()
}

fn default_init() -> String {
    "uniform_fan_in".into()
}

impl ModelConfig {
    /// Desk defaults: 3 + 3 LSTM layers of width 64, one output layer.
    pub fn desk(state_dim: usize, window: usize, latent: LatentSpec) -> Self {
        Self {
            encoder_layers: 3,
            decoder_layers: 3,
            hidden_dim: 64,
            output_fc_layers: 1,
            window,
            state_dim,
            latent,
            predictor: PredictorConfig::default(),
            teacher_forcing: false,
            predictor_input: PredictorInput::Sampled,
            conditioning: default_conditioning(),
            init: default_init(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.latent.validate()?;
        let dims = [
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("hidden_dim", self.hidden_dim),
            ("output_fc_layers", self.output_fc_layers),
            ("window", self.window),
            ("state_dim", self.state_dim),
            ("predictor.input_dim", self.predictor.input_dim),
            ("predictor.output_dim", self.predictor.output_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if self.predictor.hidden_widths.contains(&0) {
            return Err(ModelError::Config("predictor widths must be positive".into()));
        }
        if self.predictor.input_dim != 1 || self.predictor.output_dim != 1 {
            return Err(ModelError::Config("predictor heads map one latent to one logit".into()));
        }
        if self.conditioning != default_conditioning() {
            return Err(ModelError::Config(format!("unknown conditioning {:?}", self.conditioning)));
        }
        if self.init != default_init() {
            return Err(ModelError::Config(format!("unknown init {:?}", self.init)));
        }
        Ok(())
    }
}

/// Graph handles for one batched forward pass.
pub struct Forward {
    pub mu: Var,
    pub logvar: Var,
    pub z: Var,
    /// `W` decoder outputs, each `B × D`.
    pub reconstruction: Vec<Var>,
    /// One `B × 1` logit per constrained latent.
    pub logits: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Cvae {
    pub config: ModelConfig,
    pub store: ParamStore,
    encoder: Vec<LstmLayer>,
    encoder_head: Linear,
    decoder: Vec<LstmLayer>,
    output: Vec<Linear>,
    heads: Vec<Mlp>,
}

fn stack(store: &mut ParamStore, r: &mut impl rand::Rng, prefix: &str, input: usize, hidden: usize, layers: usize) -> Vec<LstmLayer> {
    (0..layers)
        .map(|l| LstmLayer::new(store, r, &format!("{prefix}.lstm{l}"), if l == 0 { input } else { hidden }, hidden))
        .collect()
}

impl Cvae {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut r = rng(seed);
        let mut store = ParamStore::new();
        let (d, h, l) = (config.state_dim, config.hidden_dim, config.latent.dim());
        let encoder = stack(&mut store, &mut r, "encoder", 2 * d, h, config.encoder_layers);
        let encoder_head = Linear::new(&mut store, &mut r, "encoder.head", h, 2 * l);
        let decoder = stack(&mut store, &mut r, "decoder", 2 * d + l, h, config.decoder_layers);
        let output = (0..config.output_fc_layers)
            .map(|i| {
                let out = if i + 1 == config.output_fc_layers { d } else { h };
                Linear::new(&mut store, &mut r, &format!("decoder.fc{i}"), h, out)
            })
            .collect();
        let mut widths = vec![config.predictor.input_dim];
        widths.extend(&config.predictor.hidden_widths);
        widths.push(config.predictor.output_dim);
        let heads: Vec<Mlp> = (0..config.latent.constrained)
            .map(|s| Mlp::new(&mut store, &mut r, &format!("predictor{s}"), &widths))
            .collect();
        if let Some(bias) = config.predictor.hidden_bias {
            for head in &heads {
                for layer in &head.layers[..head.layers.len() - 1] {
                    store.get_mut(layer.b).data_mut().fill(bias);
                }
            }
        }
        Ok(Self {
            config,
            store,
            encoder,
            encoder_head,
            decoder,
            output,
            heads,
        })
    }

    pub fn latent(&self) -> &LatentSpec {
        &self.config.latent
    }

    /// Parameter ids of predictor head `s`, for tests and diagnostics.
    pub fn head_params(&self, s: usize) -> Vec<ParamId> {
        self.heads[s].layers.iter().flat_map(|l| [l.w, l.b]).collect()
    }

    fn run_stack(
        &self,
        g: &mut Graph,
        layers: &[LstmLayer],
        state: &mut [(Var, Var)],
        input: Var,
    ) -> Result<Var, TensorError> {
        let mut x = input;
        for (layer, hc) in layers.iter().zip(state.iter_mut()) {
            let weights = layer.bind(g, &self.store);
            let (h, c) = lstm_cell(g, x, hc.0, hc.1, &weights)?;
            *hc = (h, c);
            x = h;
        }
        Ok(x)
    }

    fn zero_state(&self, g: &mut Graph, batch: usize, layers: usize) -> Vec<(Var, Var)> {
        let h = self.config.hidden_dim;
        (0..layers)
            .map(|_| {
                let z = g.constant(Tensor::zeros(&[batch, h]));
                (z, z)
            })
            .collect()
    }

    fn check_steps(&self, g: &Graph, steps: &[Var]) -> Result<usize, TensorError> {
        let (w, d) = (self.config.window, self.config.state_dim);
        let batch = steps.first().map(|&v| g.value(v).dims().0).unwrap_or(0);
        if steps.len() != w {
            return Err(TensorError::ShapeMismatch {
                op: "encode",
                lhs: vec![w, d],
                rhs: vec![steps.len(), d],
            });
        }
        for &s in steps {
            if g.shape(s) != [batch, d] {
                return Err(TensorError::ShapeMismatch {
                    op: "encode",
                    lhs: vec![batch, d],
                    rhs: g.shape(s).to_vec(),
                });
            }
        }
        Ok(batch)
    }

    /// Posterior `(mu, logvar)`, each `B × (S+N)`, from `W` steps of `B × D` rows.
    pub fn encode(&self, g: &mut Graph, steps: &[Var]) -> Result<(Var, Var), TensorError> {
        let batch = self.check_steps(g, steps)?;
        let cond = steps[0];
        let mut state = self.zero_state(g, batch, self.config.encoder_layers);
        let mut top = state[0].0;
        for &row in steps {
            let x = g.concat(&[row, cond])?;
            top = self.run_stack(g, &self.encoder, &mut state, x)?;
        }
        let head = self.encoder_head.forward(g, &self.store, top)?;
        let l = self.config.latent.dim();
        let mu = g.slice(head, 0, l)?;
        let logvar = g.slice(head, l, 2 * l)?;
        Ok((mu, logvar))
    }

    /// `z = mu + exp(logvar / 2) ⊙ noise`.
    pub fn reparameterize(g: &mut Graph, mu: Var, logvar: Var, noise: Var) -> Result<Var, TensorError> {
        let half = g.scale(logvar, 0.5)?;
        let sd = g.exp(half)?;
        let spread = g.mul(sd, noise)?;
        g.add(mu, spread)
    }

    /// `W` predicted rows from `z` (`B × (S+N)`) and the condition `s_t` (`B × D`).
    /// `teacher` supplies true rows for teacher forcing.
    pub fn decode(&self, g: &mut Graph, z: Var, cond: Var, teacher: Option<&[Var]>) -> Result<Vec<Var>, TensorError> {
        let (batch, l) = g.value(z).dims();
        if l != self.config.latent.dim() {
            return Err(TensorError::ShapeMismatch {
                op: "decode",
                lhs: vec![batch, self.config.latent.dim()],
                rhs: g.shape(z).to_vec(),
            });
        }
        if g.shape(cond) != [batch, self.config.state_dim] {
            return Err(TensorError::ShapeMismatch {
                op: "decode",
                lhs: vec![batch, self.config.state_dim],
                rhs: g.shape(cond).to_vec(),
            });
        }
        let mut state = self.zero_state(g, batch, self.config.decoder_layers);
        let mut prev = cond;
        let mut out = Vec::with_capacity(self.config.window);
        for k in 0..self.config.window {
            let x = g.concat(&[prev, cond, z])?;
            let mut y = self.run_stack(g, &self.decoder, &mut state, x)?;
            for (i, fc) in self.output.iter().enumerate() {
                if i > 0 {
                    y = g.relu(y)?;
                }
                y = fc.forward(g, &self.store, y)?;
            }
            out.push(y);
            prev = match teacher {
                Some(rows) => rows[k],
                None => y,
            };
        }
        Ok(out)
    }

    /// Logit of head `s` for a `B × 1` input.
    pub fn predict_label(&self, g: &mut Graph, s: usize, input: Var) -> Result<Var, ModelError> {
        let head = self.heads.get(s).ok_or(ModelError::HeadIndex {
            index: s,
            constrained: self.heads.len(),
        })?;
        Ok(head.forward(g, &self.store, input)?)
    }

    /// Encode, sample with `noise`, decode and score every head.
    pub fn forward(&self, g: &mut Graph, steps: &[Var], noise: Var) -> Result<Forward, ModelError> {
        let (mu, logvar) = self.encode(g, steps)?;
        let z = Self::reparameterize(g, mu, logvar, noise)?;
        let teacher = self.config.teacher_forcing.then_some(steps);
        let reconstruction = self.decode(g, z, steps[0], teacher)?;
        let source = match self.config.predictor_input {
            PredictorInput::Sampled => z,
            PredictorInput::Mean => mu,
        };
        let mut logits = Vec::with_capacity(self.heads.len());
        for s in 0..self.heads.len() {
            let input = g.slice(source, s, s + 1)?;
            logits.push(self.predict_label(g, s, input)?);
        }
        Ok(Forward {
            mu,
            logvar,
            z,
            reconstruction,
            logits,
        })
    }

    /// Decodes one chunk for a single condition row; returns `W` rows of length `D`.
    pub fn decode_chunk(&self, z: &[f64], cond: &[f64]) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut g = Graph::new();
        let zv = g.constant(Tensor::row(z.to_vec()));
        let cv = g.constant(Tensor::row(cond.to_vec()));
        let rows = self.decode(&mut g, zv, cv, None)?;
        Ok(rows.iter().map(|&r| g.value(r).data().to_vec()).collect())
    }

    /// Posterior mean and log-variance for one `W × D` row-major window.
    pub fn encode_window(&self, window: &[f64]) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        let d = self.config.state_dim;
        let mut g = Graph::new();
        let steps: Vec<Var> = window.chunks(d).map(|r| g.constant(Tensor::row(r.to_vec()))).collect();
        let (mu, logvar) = self.encode(&mut g, &steps)?;
        Ok((g.value(mu).data().to_vec(), g.value(logvar).data().to_vec()))
    }

    /// `σ(ŷ_s)` for a scalar latent value.
    pub fn label_probability(&self, s: usize, z_value: f64) -> Result<f64, ModelError> {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(1, 1, vec![z_value]));
        let logit = self.predict_label(&mut g, s, x)?;
        let p = g.sigmoid(logit)?;
        Ok(g.value(p).item())
    }
}
