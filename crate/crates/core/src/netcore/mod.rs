//! Small trainable networks with hand-written backpropagation.
//!
//! Layers are dense or stride-1 unpadded 2-D convolutions with optional ReLU;
//! the last layer produces logits for a softmax cross-entropy loss. The task
//! loss and its gradient come from [`Network::loss_and_grads`]; L2 penalties
//! are applied per weight group inside [`sgd_step`].

mod checkpoint;
mod layer;
mod optim;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use layer::{Activation, Layer, LayerKind, LayerSpec, Shape3};
pub use optim::{sgd_step, Granularity, OptimState, PenaltyMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    #[error("penalty map does not cover layer {layer}: expected {expected} groups, got {got}")]
    MissingGroup { layer: usize, expected: usize, got: usize },
    #[error("optimizer state does not match network: {0}")]
    OptimMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NetError>;

/// Ordered stack of layers with its input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input: Shape3,
    layers: Vec<Layer>,
}

/// Per-layer inputs and pre-activations recorded by the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Vec<f64>>,
    pres: Vec<Vec<f64>>,
    batch: usize,
}

/// Gradients mirroring the network's parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    pub layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl GradBuffer {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

impl Network {
    /// Builds a network with He-normal weights (`σ = √(2/fan_in)`) and zero
    /// biases drawn from a seeded ChaCha stream.
    pub fn new(input: Shape3, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(input, specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut net.layers {
            let std = (2.0 / layer.fan_in() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            for w in &mut layer.weights {
                *w = normal.sample(&mut rng);
            }
        }
        Ok(net)
    }

    /// Same topology with every parameter zero.
    pub fn zeros(input: Shape3, specs: &[LayerSpec]) -> Result<Self> {
        if specs.is_empty() {
            return Err(NetError::InvalidTopology("no layers".into()));
        }
        if input.is_empty() {
            return Err(NetError::InvalidTopology("empty input shape".into()));
        }
        if specs.last().unwrap().activation != Activation::None {
            return Err(NetError::InvalidTopology("final layer must emit raw logits".into()));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input;
        for (i, spec) in specs.iter().enumerate() {
            if spec.out == 0 {
                return Err(NetError::InvalidTopology(format!("layer {i} has no outputs")));
            }
            let out_shape = Layer::output_shape(spec, shape).ok_or_else(|| {
                NetError::InvalidTopology(format!("layer {i} kernel does not fit input {shape:?}"))
            })?;
            let mut layer = Layer {
                spec: *spec,
                in_shape: shape,
                out_shape,
                weights: Vec::new(),
                bias: vec![0.0; spec.out],
                frozen: None,
            };
            layer.weights = vec![0.0; spec.out * layer.fan_in()];
            layers.push(layer);
            shape = out_shape;
        }
        Ok(Self { input, layers })
    }

    /// Assembles a network from explicit layers, checking shape chaining.
    pub fn from_layers(input: Shape3, layers: Vec<Layer>) -> Result<Self> {
        let net = Self { input, layers };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        let mut shape = self.input;
        for (i, l) in self.layers.iter().enumerate() {
            if l.in_shape != shape {
                return Err(NetError::InvalidTopology(format!(
                    "layer {i} expects {:?} but receives {shape:?}",
                    l.in_shape
                )));
            }
            if Layer::output_shape(&l.spec, shape) != Some(l.out_shape) {
                return Err(NetError::InvalidTopology(format!("layer {i} output shape inconsistent")));
            }
            if l.weights.len() != l.spec.out * l.fan_in() || l.bias.len() != l.spec.out {
                return Err(NetError::InvalidTopology(format!("layer {i} parameter sizes")));
            }
            if let Some(f) = &l.frozen {
                if f.len() != l.weights.len() {
                    return Err(NetError::InvalidTopology(format!("layer {i} mask size")));
                }
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(NetError::NumericFailure(format!("layer {i} has non-finite parameters")));
            }
            shape = l.out_shape;
        }
        match self.layers.last() {
            Some(l) if l.spec.activation == Activation::None => Ok(()),
            Some(_) => Err(NetError::InvalidTopology("final layer must emit raw logits".into())),
            None => Err(NetError::InvalidTopology("no layers".into())),
        }
    }

    pub fn input_shape(&self) -> Shape3 {
        self.input
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_shape.len())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn num_weights(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Count of weights held at zero by unstructured masks.
    pub fn num_frozen(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.frozen.as_ref())
            .map(|m| m.iter().filter(|&&f| f).count())
            .sum()
    }

    fn check_batch(&self, x: &[f64]) -> Result<usize> {
        let n = self.input.len();
        if x.len() % n != 0 {
            return Err(NetError::ShapeMismatch { expected: n, got: x.len() % n });
        }
        Ok(x.len() / n)
    }

    /// Logits (`batch × classes`, row-major) plus the activation cache.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let batch = self.check_batch(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut act = x.to_vec();
        for layer in &self.layers {
            let pre = layer.forward_pre(&act, batch);
            let post = match layer.spec.activation {
                Activation::Relu => pre.iter().map(|&v| relu(v)).collect(),
                Activation::None => pre.clone(),
            };
            inputs.push(std::mem::replace(&mut act, post));
            pres.push(pre);
        }
        Ok((act, ForwardCache { inputs, pres, batch }))
    }

    /// Logits only, without retaining the cache.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let batch = self.check_batch(x)?;
        let mut act = x.to_vec();
        for layer in &self.layers {
            let mut pre = layer.forward_pre(&act, batch);
            if layer.spec.activation == Activation::Relu {
                pre.iter_mut().for_each(|v| *v = relu(*v));
            }
            act = pre;
        }
        Ok(act)
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn loss(&self, x: &[f64], labels: &[usize]) -> Result<f64> {
        let logits = self.predict(x)?;
        let (loss, _) = softmax_xent(&logits, labels, self.classes())?;
        Ok(loss)
    }

    /// Task loss `L` (mean softmax cross-entropy) and `∂L/∂θ` for every
    /// weight and bias. No penalty term is included.
    pub fn loss_and_grads(&self, x: &[f64], labels: &[usize]) -> Result<(f64, GradBuffer)> {
        let (logits, cache) = self.forward(x)?;
        let (loss, d_logits) = softmax_xent(&logits, labels, self.classes())?;
        let grads = self.backward(&cache, d_logits)?;
        Ok((loss, grads))
    }

    fn backward(&self, cache: &ForwardCache, d_out: Vec<f64>) -> Result<GradBuffer> {
        let mut grads = GradBuffer::zeros_like(self);
        let mut d_post = d_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let mut d_pre = d_post;
            if layer.spec.activation == Activation::Relu {
                for (d, &p) in d_pre.iter_mut().zip(&cache.pres[i]) {
                    if p <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let g = &mut grads.layers[i];
            let dx = layer.backward(
                &cache.inputs[i],
                &d_pre,
                cache.batch,
                &mut g.weights,
                &mut g.bias,
                i > 0,
            );
            if let Some(frozen) = &layer.frozen {
                for (gw, &f) in g.weights.iter_mut().zip(frozen) {
                    if f {
                        *gw = 0.0;
                    }
                }
            }
            d_post = dx.unwrap_or_default();
        }
        if !grads.is_finite() {
            return Err(NetError::NumericFailure("non-finite gradient".into()));
        }
        Ok(grads)
    }

    /// Fraction of rows whose argmax logit equals the label.
    pub fn accuracy(&self, x: &[f64], labels: &[usize]) -> Result<f64> {
        let logits = self.predict(x)?;
        let c = self.classes();
        if labels.is_empty() {
            return Ok(0.0);
        }
        if logits.len() != labels.len() * c {
            return Err(NetError::ShapeMismatch { expected: labels.len() * c, got: logits.len() });
        }
        let correct = logits
            .chunks(c)
            .zip(labels)
            .filter(|(row, &y)| argmax(row) == y)
            .count();
        Ok(correct as f64 / labels.len() as f64)
    }
}

/// Propagates NaN, unlike `f64::max`.
#[inline]
fn relu(v: f64) -> f64 {
    if v < 0.0 {
        0.0
    } else {
        v
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy of softmax(logits) and its gradient w.r.t. the logits.
fn softmax_xent(logits: &[f64], labels: &[usize], classes: usize) -> Result<(f64, Vec<f64>)> {
    let batch = labels.len();
    if logits.len() != batch * classes {
        return Err(NetError::ShapeMismatch { expected: batch * classes, got: logits.len() });
    }
    if batch == 0 {
        return Err(NetError::ShapeMismatch { expected: 1, got: 0 });
    }
    let mut grad = vec![0.0; logits.len()];
    let mut total = 0.0;
    let inv = 1.0 / batch as f64;
    for (b, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(NetError::LabelOutOfRange { label: y, classes });
        }
        let row = &logits[b * classes..(b + 1) * classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[y];
        let g = &mut grad[b * classes..(b + 1) * classes];
        for (gi, &v) in g.iter_mut().zip(row) {
            *gi = (v - log_z).exp() * inv;
        }
        g[y] -= inv;
    }
    let loss = total * inv;
    if !loss.is_finite() {
        return Err(NetError::NumericFailure(format!("loss is {loss}")));
    }
    Ok((loss.max(0.0), grad))
}
