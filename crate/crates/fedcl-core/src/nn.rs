//! Minimal dense-network substrate: an MLP classifier split into a feature
//! extractor and a predictor head, a conditional latent-feature generator,
//! softmax cross-entropy with optional curriculum weighting, manual
//! backpropagation, and SGD/Adam updates.
//!
//! Hidden layers use tanh; the classifier's final layer is linear (logits).
//! The generator's output layer is also tanh so generated latents live in the
//! same bounded range as the classifier's real latent activations.
//!
//! Everything is f64 and purely functional over explicit parameter structs:
//! forward passes never mutate state, and optimizer state is owned by the
//! caller.

use crate::curriculum::{self, CurriculumConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math;
use crate::rng;

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

/// One dense layer: `out = weights * x + bias`, weights row-major
/// (`out_dim x in_dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Result<Layer> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidConfig("zero-dimension layer".into()));
        }
        Ok(Layer {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        })
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for r in 0..self.out_dim {
            let row = &self.weights[r * self.in_dim..(r + 1) * self.in_dim];
            let mut acc = 0.0;
            for (w, xv) in row.iter().zip(x.iter()) {
                acc += w * xv;
            }
            out[r] += acc;
        }
        out
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Classifier parameters. Layers before `split_index` form the feature
/// extractor; layers at and after it form the predictor head. The latent
/// feature is the (tanh) activation entering layer `split_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<Layer>,
    pub split_index: usize,
}

/// Conditional generator parameters. Input is the concatenation of a one-hot
/// label, one difficulty-conditioner scalar, and a noise vector; output is a
/// latent feature of the classifier's head input dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub layers: Vec<Layer>,
    pub num_classes: usize,
    pub noise_dim: usize,
}

fn validate_chain(layers: &[Layer], context: &'static str) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::Empty(context));
    }
    for w in layers.windows(2) {
        if w[0].out_dim != w[1].in_dim {
            return Err(Error::Shape {
                context: "layer dimension chain",
                expected: w[0].out_dim,
                actual: w[1].in_dim,
            });
        }
    }
    for l in layers {
        if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
            return Err(Error::Shape {
                context: "layer storage",
                expected: l.in_dim * l.out_dim,
                actual: l.weights.len(),
            });
        }
        if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "layer parameters",
                sample: None,
            });
        }
    }
    Ok(())
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        validate_chain(&self.layers, "classifier layers")?;
        if self.split_index == 0 || self.split_index >= self.layers.len() {
            return Err(Error::InvalidConfig(
                "split_index must satisfy 0 < split_index < layer count".into(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    /// Dimension of the latent feature handed to the head.
    pub fn latent_dim(&self) -> usize {
        self.layers[self.split_index].in_dim
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn head_layers(&self) -> &[Layer] {
        &self.layers[self.split_index..]
    }

    pub fn flat_len(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn assign_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        assign_flat(&mut self.layers, flat)
    }

    /// Bit-level fingerprint of shape and parameter values.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&(self.split_index as u64).to_le_bytes());
        for l in &self.layers {
            bytes.extend_from_slice(&(l.in_dim as u64).to_le_bytes());
            bytes.extend_from_slice(&(l.out_dim as u64).to_le_bytes());
            for v in l.weights.iter().chain(l.bias.iter()) {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        rng::fnv1a64(&bytes)
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        validate_chain(&self.layers, "generator layers")?;
        let expected = self.num_classes + 1 + self.noise_dim;
        if self.layers[0].in_dim != expected {
            return Err(Error::Shape {
                context: "generator input",
                expected,
                actual: self.layers[0].in_dim,
            });
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn flat_len(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }
}

fn flatten(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::with_capacity(layers.iter().map(Layer::param_count).sum());
    for l in layers {
        out.extend_from_slice(&l.weights);
        out.extend_from_slice(&l.bias);
    }
    out
}

fn assign_flat(layers: &mut [Layer], flat: &[f64]) -> Result<()> {
    let expected: usize = layers.iter().map(Layer::param_count).sum();
    if flat.len() != expected {
        return Err(Error::Shape {
            context: "flat parameter vector",
            expected,
            actual: flat.len(),
        });
    }
    let mut off = 0;
    for l in layers {
        let wn = l.weights.len();
        l.weights.copy_from_slice(&flat[off..off + wn]);
        off += wn;
        let bn = l.bias.len();
        l.bias.copy_from_slice(&flat[off..off + bn]);
        off += bn;
    }
    Ok(())
}

/// Per-layer gradient, shape-congruent with its [`Layer`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub d_weights: Vec<f64>,
    pub d_bias: Vec<f64>,
}

/// Gradient of a scalar loss with respect to a layer stack, plus the loss
/// value itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    pub loss: f64,
}

impl Gradients {
    pub fn zeros(layers: &[Layer]) -> Gradients {
        Gradients {
            layers: layers
                .iter()
                .map(|l| LayerGrad {
                    d_weights: vec![0.0; l.weights.len()],
                    d_bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            loss: 0.0,
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Shape {
                context: "gradient accumulate",
                expected: self.layers.len(),
                actual: other.layers.len(),
            });
        }
        for (a, b) in self.layers.iter_mut().zip(other.layers.iter()) {
            if a.d_weights.len() != b.d_weights.len() || a.d_bias.len() != b.d_bias.len() {
                return Err(Error::Shape {
                    context: "gradient accumulate",
                    expected: a.d_weights.len(),
                    actual: b.d_weights.len(),
                });
            }
            for (x, y) in a.d_weights.iter_mut().zip(b.d_weights.iter()) {
                *x += scale * y;
            }
            for (x, y) in a.d_bias.iter_mut().zip(b.d_bias.iter()) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.d_weights);
            out.extend_from_slice(&l.d_bias);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.loss.is_finite()
            && self
                .layers
                .iter()
                .all(|l| l.d_weights.iter().chain(l.d_bias.iter()).all(|v| v.is_finite()))
    }
}

/// Optimizer state. Adam moments are stored flat in layer order (weights then
/// bias per layer), congruent with the owning parameter stack by length.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Sgd {
        learning_rate: f64,
    },
    Adam {
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        m: Vec<f64>,
        v: Vec<f64>,
        step: u64,
    },
}

impl OptimizerState {
    pub fn sgd(learning_rate: f64) -> Result<OptimizerState> {
        if !(learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be > 0".into()));
        }
        Ok(OptimizerState::Sgd { learning_rate })
    }

    pub fn adam(learning_rate: f64, flat_len: usize) -> Result<OptimizerState> {
        if !(learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be > 0".into()));
        }
        Ok(OptimizerState::Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; flat_len],
            v: vec![0.0; flat_len],
            step: 0,
        })
    }
}

/// Applies one optimizer update in place.
pub fn step(layers: &mut [Layer], grads: &Gradients, opt: &mut OptimizerState) -> Result<()> {
    if layers.len() != grads.layers.len() {
        return Err(Error::Shape {
            context: "optimizer step",
            expected: layers.len(),
            actual: grads.layers.len(),
        });
    }
    for (l, g) in layers.iter().zip(grads.layers.iter()) {
        if l.weights.len() != g.d_weights.len() || l.bias.len() != g.d_bias.len() {
            return Err(Error::Shape {
                context: "optimizer step",
                expected: l.weights.len(),
                actual: g.d_weights.len(),
            });
        }
    }
    match opt {
        OptimizerState::Sgd { learning_rate } => {
            let lr = *learning_rate;
            for (l, g) in layers.iter_mut().zip(grads.layers.iter()) {
                for (p, d) in l.weights.iter_mut().zip(g.d_weights.iter()) {
                    *p -= lr * d;
                }
                for (p, d) in l.bias.iter_mut().zip(g.d_bias.iter()) {
                    *p -= lr * d;
                }
            }
        }
        OptimizerState::Adam {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            m,
            v,
            step,
        } => {
            let flat_len: usize = layers.iter().map(Layer::param_count).sum();
            if m.len() != flat_len {
                return Err(Error::Shape {
                    context: "adam moments",
                    expected: flat_len,
                    actual: m.len(),
                });
            }
            *step += 1;
            let t = *step as f64;
            let bc1 = 1.0 - libm::pow(*beta1, t);
            let bc2 = 1.0 - libm::pow(*beta2, t);
            let lr = *learning_rate;
            let mut idx = 0usize;
            for (l, g) in layers.iter_mut().zip(grads.layers.iter()) {
                for (p, d) in l
                    .weights
                    .iter_mut()
                    .chain(l.bias.iter_mut())
                    .zip(g.d_weights.iter().chain(g.d_bias.iter()))
                {
                    m[idx] = *beta1 * m[idx] + (1.0 - *beta1) * d;
                    v[idx] = *beta2 * v[idx] + (1.0 - *beta2) * d * d;
                    let m_hat = m[idx] / bc1;
                    let v_hat = v[idx] / bc2;
                    *p -= lr * m_hat / (math::sqrt(v_hat) + *epsilon);
                    idx += 1;
                }
            }
        }
    }
    Ok(())
}

fn glorot_layer(in_dim: usize, out_dim: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Result<Layer> {
    let mut layer = Layer::zeros(in_dim, out_dim)?;
    let bound = math::sqrt(6.0 / (in_dim + out_dim) as f64);
    for w in &mut layer.weights {
        *w = rng.random::<f64>() * 2.0 * bound - bound;
    }
    Ok(layer)
}

/// Seeded classifier init: weights uniform in `±sqrt(6/(fan_in+fan_out))`,
/// biases zero. `dims` lists layer widths input-first; `split_index` marks
/// the feature/head boundary in layer units.
pub fn init_classifier(dims: &[usize], split_index: usize, seed: u64) -> Result<ModelParams> {
    if dims.len() < 2 {
        return Err(Error::InvalidConfig("classifier needs at least one layer".into()));
    }
    let mut rng = rng::stream(seed, "init-classifier", 0, 0);
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        layers.push(glorot_layer(w[0], w[1], &mut rng)?);
    }
    let params = ModelParams {
        layers,
        split_index,
    };
    params.validate()?;
    Ok(params)
}

/// Seeded generator init. Input width is `num_classes + 1 + noise_dim`.
pub fn init_generator(
    num_classes: usize,
    noise_dim: usize,
    hidden: &[usize],
    latent_dim: usize,
    seed: u64,
) -> Result<GeneratorParams> {
    if num_classes == 0 {
        return Err(Error::InvalidConfig("generator needs classes".into()));
    }
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(num_classes + 1 + noise_dim);
    dims.extend_from_slice(hidden);
    dims.push(latent_dim);
    let mut rng = rng::stream(seed, "init-generator", 0, 0);
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        layers.push(glorot_layer(w[0], w[1], &mut rng)?);
    }
    let gen = GeneratorParams {
        layers,
        num_classes,
        noise_dim,
    };
    gen.validate()?;
    Ok(gen)
}

/// Numerically stable softmax (max subtraction). Strictly positive, sums to 1.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| math::exp(l - m)).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Cross-entropy of `label` under `softmax(logits)`, fused with the softmax
/// through a log-sum-exp so `log(0)` never occurs. Returns `(ce, probs)`.
pub fn cross_entropy_from_logits(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            num_classes: logits.len(),
        });
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|&l| math::exp(l - m)).sum();
    let lse = m + math::ln(total);
    let probs = logits.iter().map(|&l| math::exp(l - lse)).collect();
    Ok((lse - logits[label], probs))
}

/// Post-activation outputs of every layer. The final layer is linear unless
/// `output_tanh`; all earlier layers are tanh.
pub(crate) fn forward_layers(layers: &[Layer], input: &[f64], output_tanh: bool) -> Vec<Vec<f64>> {
    let mut acts = Vec::with_capacity(layers.len());
    let mut cur = input;
    for (i, layer) in layers.iter().enumerate() {
        let mut out = layer.affine(cur);
        if i + 1 < layers.len() || output_tanh {
            for v in &mut out {
                *v = math::tanh(*v);
            }
        }
        acts.push(out);
        cur = acts.last().unwrap();
    }
    acts
}

/// Backpropagates `dout` (gradient w.r.t. the final post-activation) through
/// `layers`, optionally accumulating parameter gradients, and returns the
/// gradient w.r.t. the input.
pub(crate) fn backward_layers(
    layers: &[Layer],
    input: &[f64],
    acts: &[Vec<f64>],
    dout: Vec<f64>,
    output_tanh: bool,
    mut grads: Option<&mut [LayerGrad]>,
) -> Vec<f64> {
    let mut dcur = dout;
    for i in (0..layers.len()).rev() {
        let layer = &layers[i];
        let is_tanh = i + 1 < layers.len() || output_tanh;
        let dpre: Vec<f64> = if is_tanh {
            dcur.iter()
                .zip(acts[i].iter())
                .map(|(d, a)| d * (1.0 - a * a))
                .collect()
        } else {
            dcur
        };
        let prev: &[f64] = if i == 0 { input } else { &acts[i - 1] };
        if let Some(g) = grads.as_deref_mut() {
            let lg = &mut g[i];
            for r in 0..layer.out_dim {
                let row = &mut lg.d_weights[r * layer.in_dim..(r + 1) * layer.in_dim];
                for (c, dst) in row.iter_mut().enumerate() {
                    *dst += dpre[r] * prev[c];
                }
                lg.d_bias[r] += dpre[r];
            }
        }
        let mut dprev = vec![0.0; layer.in_dim];
        for r in 0..layer.out_dim {
            let row = &layer.weights[r * layer.in_dim..(r + 1) * layer.in_dim];
            for (c, w) in row.iter().enumerate() {
                dprev[c] += w * dpre[r];
            }
        }
        dcur = dprev;
    }
    dcur
}

/// Full classifier pass. Returns the latent feature at the split, the logits,
/// and the softmax probabilities.
pub fn forward_classifier(
    params: &ModelParams,
    x: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if x.len() != params.input_dim() {
        return Err(Error::Shape {
            context: "classifier input",
            expected: params.input_dim(),
            actual: x.len(),
        });
    }
    let acts = forward_layers(&params.layers, x, false);
    let z = acts[params.split_index - 1].clone();
    let logits = acts.last().unwrap().clone();
    let probs = softmax(&logits);
    Ok((z, logits, probs))
}

/// Head-only pass on a latent feature `z`.
pub fn forward_head(params: &ModelParams, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let head = params.head_layers();
    if z.len() != head[0].in_dim {
        return Err(Error::Shape {
            context: "head input",
            expected: head[0].in_dim,
            actual: z.len(),
        });
    }
    let acts = forward_layers(head, z, false);
    let logits = acts.last().unwrap().clone();
    let probs = softmax(&logits);
    Ok((logits, probs))
}

/// Assembles the generator input vector: one-hot label, conditioner scalar,
/// noise.
pub(crate) fn generator_input(
    gen: &GeneratorParams,
    label: usize,
    beta_cond: f64,
    epsilon: &[f64],
) -> Result<Vec<f64>> {
    if label >= gen.num_classes {
        return Err(Error::LabelOutOfRange {
            label,
            num_classes: gen.num_classes,
        });
    }
    if epsilon.len() != gen.noise_dim {
        return Err(Error::Shape {
            context: "generator noise",
            expected: gen.noise_dim,
            actual: epsilon.len(),
        });
    }
    let mut input = vec![0.0; gen.input_dim()];
    input[label] = 1.0;
    input[gen.num_classes] = beta_cond;
    input[gen.num_classes + 1..].copy_from_slice(epsilon);
    Ok(input)
}

/// Deterministic generator pass: `(label, conditioner, noise) -> latent`.
pub fn forward_generator(
    gen: &GeneratorParams,
    label: usize,
    beta_cond: f64,
    epsilon: &[f64],
) -> Result<Vec<f64>> {
    let input = generator_input(gen, label, beta_cond, epsilon)?;
    let acts = forward_layers(&gen.layers, &input, true);
    Ok(acts.last().unwrap().clone())
}

/// Base per-sample loss for classifier training.
#[derive(Debug, Clone, Copy)]
pub enum BaseLoss<'a> {
    /// Plain softmax cross-entropy.
    PlainCe,
    /// Curriculum loss of the cross-entropy at the closed-form confidence.
    Curriculum(&'a CurriculumConfig),
}

/// Proximal penalty `mu/2 * ||params - anchor||^2` added to the batch loss.
#[derive(Debug, Clone, Copy)]
pub struct ProxTerm<'a> {
    pub mu: f64,
    pub anchor: &'a ModelParams,
}

/// Composite loss selector for [`backward`] / [`batch_loss`].
#[derive(Debug, Clone, Copy)]
pub struct LossSpec<'a> {
    pub base: BaseLoss<'a>,
    pub prox: Option<ProxTerm<'a>>,
}

impl<'a> LossSpec<'a> {
    pub fn plain() -> LossSpec<'a> {
        LossSpec {
            base: BaseLoss::PlainCe,
            prox: None,
        }
    }

    pub fn curriculum(cfg: &'a CurriculumConfig) -> LossSpec<'a> {
        LossSpec {
            base: BaseLoss::Curriculum(cfg),
            prox: None,
        }
    }
}

fn sample_loss_and_scale(ce: f64, base: &BaseLoss<'_>) -> (f64, f64) {
    match base {
        BaseLoss::PlainCe => (ce, 1.0),
        BaseLoss::Curriculum(cfg) => {
            // The confidence is a stationary minimizer, so d(loss)/d(ce) at
            // fixed confidence is the exact total derivative.
            let (loss, sigma) = curriculum::cl_loss(ce, cfg);
            (loss, sigma)
        }
    }
}

/// Mean-batch loss and its gradient over every parameter entry.
pub fn backward(
    params: &ModelParams,
    data: &Dataset,
    indices: &[usize],
    spec: &LossSpec<'_>,
) -> Result<(f64, Gradients)> {
    if indices.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let b = indices.len() as f64;
    let mut grads = Gradients::zeros(&params.layers);
    let mut total = 0.0;
    for &idx in indices {
        let x = data.feature(idx);
        let y = data.label(idx);
        let acts = forward_layers(&params.layers, x, false);
        let logits = acts.last().unwrap();
        let (ce, probs) = cross_entropy_from_logits(logits, y)?;
        if !ce.is_finite() {
            return Err(Error::NonFinite {
                context: "batch loss",
                sample: Some(idx),
            });
        }
        let (loss, scale) = sample_loss_and_scale(ce, &spec.base);
        total += loss;
        let mut dlogits = probs;
        dlogits[y] -= 1.0;
        for d in &mut dlogits {
            *d *= scale / b;
        }
        backward_layers(
            &params.layers,
            x,
            &acts,
            dlogits,
            false,
            Some(&mut grads.layers),
        );
    }
    let mut loss = total / b;
    if let Some(prox) = &spec.prox {
        if prox.mu != 0.0 {
            loss += 0.5 * prox.mu * param_sq_distance(params, prox.anchor)?;
            for (i, (l, a)) in params
                .layers
                .iter()
                .zip(prox.anchor.layers.iter())
                .enumerate()
            {
                let g = &mut grads.layers[i];
                for ((dst, p), q) in g.d_weights.iter_mut().zip(l.weights.iter()).zip(a.weights.iter()) {
                    *dst += prox.mu * (p - q);
                }
                for ((dst, p), q) in g.d_bias.iter_mut().zip(l.bias.iter()).zip(a.bias.iter()) {
                    *dst += prox.mu * (p - q);
                }
            }
        }
    }
    grads.loss = loss;
    Ok((loss, grads))
}

/// Forward-only evaluation of the same composite loss as [`backward`].
pub fn batch_loss(
    params: &ModelParams,
    data: &Dataset,
    indices: &[usize],
    spec: &LossSpec<'_>,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let mut total = 0.0;
    for &idx in indices {
        let acts = forward_layers(&params.layers, data.feature(idx), false);
        let (ce, _) = cross_entropy_from_logits(acts.last().unwrap(), data.label(idx))?;
        let (loss, _) = sample_loss_and_scale(ce, &spec.base);
        total += loss;
    }
    let mut loss = total / indices.len() as f64;
    if let Some(prox) = &spec.prox {
        if prox.mu != 0.0 {
            loss += 0.5 * prox.mu * param_sq_distance(params, prox.anchor)?;
        }
    }
    Ok(loss)
}

/// Per-sample cross-entropy of `params` over all of `data`.
pub fn per_sample_ce(params: &ModelParams, data: &Dataset) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let acts = forward_layers(&params.layers, data.feature(i), false);
        let (ce, _) = cross_entropy_from_logits(acts.last().unwrap(), data.label(i))?;
        if !ce.is_finite() {
            return Err(Error::NonFinite {
                context: "per-sample loss",
                sample: Some(i),
            });
        }
        out.push(ce);
    }
    Ok(out)
}

/// Squared L2 distance between two congruent parameter stacks.
pub fn param_sq_distance(a: &ModelParams, b: &ModelParams) -> Result<f64> {
    if a.layers.len() != b.layers.len() {
        return Err(Error::Shape {
            context: "param distance",
            expected: a.layers.len(),
            actual: b.layers.len(),
        });
    }
    let mut acc = 0.0;
    for (la, lb) in a.layers.iter().zip(b.layers.iter()) {
        if la.weights.len() != lb.weights.len() || la.bias.len() != lb.bias.len() {
            return Err(Error::Shape {
                context: "param distance",
                expected: la.weights.len(),
                actual: lb.weights.len(),
            });
        }
        for (x, y) in la
            .weights
            .iter()
            .chain(la.bias.iter())
            .zip(lb.weights.iter().chain(lb.bias.iter()))
        {
            acc += math::sq(x - y);
        }
    }
    Ok(acc)
}
