//! Small feed-forward network engine: exact analytic gradients and Adam.
//!
//! Networks are dense, with ReLU on hidden layers and a single sigmoid
//! output unit. Everything is `f64` and deterministic given a seeded RNG;
//! there is no global state. Gradients are computed by hand-rolled
//! backpropagation and checked against central finite differences in the
//! test suite.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sigmoid outputs are clamped to `[EPS_PROB, 1 - EPS_PROB]` so that
/// downstream log terms stay finite.
pub const EPS_PROB: f64 = 1e-7;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(EPS_PROB, 1.0 - EPS_PROB)
}

/// Dense feed-forward network.
///
/// `layer_sizes = [in, h1, ..., 1]`; weight matrices are row-major with
/// shape `(out, in)`. The `trainable` flag is a hard gate: optimizer steps
/// on a frozen network are an error, never a silent no-op.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    #[serde(default = "default_trainable")]
    trainable: bool,
}

fn default_trainable() -> bool {
    true
}

/// Per-parameter gradients with the same shapes as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// `self += factor * other`. Shapes must agree.
    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) -> Result<()> {
        if self.weights.len() != other.weights.len() {
            return Err(Error::ShapeMismatch("gradient layer counts differ".into()));
        }
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            if a.len() != b.len() {
                return Err(Error::ShapeMismatch("gradient weight shapes differ".into()));
            }
            for (x, y) in a.iter_mut().zip(b) {
                *x += factor * y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            if a.len() != b.len() {
                return Err(Error::ShapeMismatch("gradient bias shapes differ".into()));
            }
            for (x, y) in a.iter_mut().zip(b) {
                *x += factor * y;
            }
        }
        Ok(())
    }

    fn matches(&self, net: &Mlp) -> bool {
        self.weights.len() == net.weights.len()
            && self
                .weights
                .iter()
                .zip(&net.weights)
                .all(|(a, b)| a.len() == b.len())
            && self
                .biases
                .iter()
                .zip(&net.biases)
                .all(|(a, b)| a.len() == b.len())
    }
}

fn validate_layer_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least input and output layer sizes, got {:?}",
            layer_sizes
        )));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(Error::InvalidConfig(format!(
            "layer sizes must be positive, got {:?}",
            layer_sizes
        )));
    }
    if *layer_sizes.last().unwrap() != 1 {
        return Err(Error::InvalidConfig(format!(
            "output layer size must be 1, got {:?}",
            layer_sizes
        )));
    }
    Ok(())
}

impl Mlp {
    /// He initialization: weights uniform in `[-sqrt(6/fan_in), +sqrt(6/fan_in)]`,
    /// biases zero. Sampling order is layer by layer, row-major, so a given
    /// seed always produces bit-identical parameters.
    pub fn he_init<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        validate_layer_sizes(layer_sizes)?;
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for l in 1..layer_sizes.len() {
            let fan_in = layer_sizes[l - 1];
            let out = layer_sizes[l];
            let bound = (6.0 / fan_in as f64).sqrt();
            let mut w = Vec::with_capacity(out * fan_in);
            for _ in 0..out * fan_in {
                w.push(rng.random_range(-bound..bound));
            }
            weights.push(w);
            biases.push(vec![0.0; out]);
        }
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            trainable: true,
        })
    }

    /// All-zero parameters; useful for contract tests (output is exactly 0.5).
    pub fn zeroed(layer_sizes: &[usize]) -> Result<Self> {
        validate_layer_sizes(layer_sizes)?;
        let weights = (1..layer_sizes.len())
            .map(|l| vec![0.0; layer_sizes[l] * layer_sizes[l - 1]])
            .collect();
        let biases = (1..layer_sizes.len())
            .map(|l| vec![0.0; layer_sizes[l]])
            .collect();
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            trainable: true,
        })
    }

    /// Rebuilds a network from raw parameters, validating every shape.
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        validate_layer_sizes(&layer_sizes)?;
        if weights.len() != layer_sizes.len() - 1 || biases.len() != layer_sizes.len() - 1 {
            return Err(Error::ShapeMismatch(format!(
                "expected {} layers of parameters, got {} weight and {} bias layers",
                layer_sizes.len() - 1,
                weights.len(),
                biases.len()
            )));
        }
        for l in 1..layer_sizes.len() {
            let expect_w = layer_sizes[l] * layer_sizes[l - 1];
            if weights[l - 1].len() != expect_w {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l}: expected {expect_w} weights, got {}",
                    weights[l - 1].len()
                )));
            }
            if biases[l - 1].len() != layer_sizes[l] {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l}: expected {} biases, got {}",
                    layer_sizes[l],
                    biases[l - 1].len()
                )));
            }
        }
        Ok(Mlp {
            layer_sizes,
            weights,
            biases,
            trainable: true,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    #[cfg(test)]
    pub(crate) fn weights_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.weights
    }

    #[cfg(test)]
    pub(crate) fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    /// Flat view of all parameters, layer by layer (weights then biases).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in 0..self.weights.len() {
            out.extend_from_slice(&self.weights[l]);
            out.extend_from_slice(&self.biases[l]);
        }
        out
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input length {} does not match network input dim {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Forward pass to a probability in `(0, 1)`, clamped by [`EPS_PROB`].
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        let last = self.weights.len() - 1;
        for l in 0..self.weights.len() {
            let inp = self.layer_sizes[l];
            let out = self.layer_sizes[l + 1];
            let mut z = vec![0.0; out];
            for o in 0..out {
                let row = &self.weights[l][o * inp..(o + 1) * inp];
                let mut s = self.biases[l][o];
                for (w, v) in row.iter().zip(&a) {
                    s += w * v;
                }
                z[o] = s;
            }
            if l == last {
                return Ok(clamp_prob(sigmoid(z[0])));
            }
            for v in &mut z {
                *v = v.max(0.0);
            }
            a = z;
        }
        unreachable!("network has at least one layer")
    }

    pub fn forward_batch(&self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        inputs.iter().map(|x| self.forward(x)).collect()
    }

    /// Backpropagation for a batch.
    ///
    /// `output_grads[i]` is the derivative of example `i`'s loss with respect
    /// to the network output. The returned gradients are exact derivatives of
    /// the batch-mean loss with respect to every parameter.
    pub fn backward(&self, inputs: &[&[f64]], output_grads: &[f64]) -> Result<Gradients> {
        if inputs.is_empty() {
            return Err(Error::EmptyBatch("backward over zero examples".into()));
        }
        if inputs.len() != output_grads.len() {
            return Err(Error::ShapeMismatch(format!(
                "batch has {} inputs but {} output gradients",
                inputs.len(),
                output_grads.len()
            )));
        }
        let layers = self.weights.len();
        let mut grads = Gradients::zeros_like(self);
        // Scratch reused across examples: pre-activations and activations per layer.
        let mut zs: Vec<Vec<f64>> = (1..=layers).map(|l| vec![0.0; self.layer_sizes[l]]).collect();
        let mut acts: Vec<Vec<f64>> = (1..=layers).map(|l| vec![0.0; self.layer_sizes[l]]).collect();
        let mut deltas: Vec<Vec<f64>> = (1..=layers).map(|l| vec![0.0; self.layer_sizes[l]]).collect();

        for (x, &g_out) in inputs.iter().zip(output_grads) {
            self.check_input(x)?;
            // Forward, keeping the trace.
            for l in 0..layers {
                let inp = self.layer_sizes[l];
                let out = self.layer_sizes[l + 1];
                for o in 0..out {
                    let row = &self.weights[l][o * inp..(o + 1) * inp];
                    let mut s = self.biases[l][o];
                    if l == 0 {
                        for (w, v) in row.iter().zip(x.iter()) {
                            s += w * v;
                        }
                    } else {
                        for (w, v) in row.iter().zip(acts[l - 1].iter()) {
                            s += w * v;
                        }
                    }
                    zs[l][o] = s;
                    acts[l][o] = if l == layers - 1 { sigmoid(s) } else { s.max(0.0) };
                }
            }
            // Output delta through the sigmoid. Where the output clamp is
            // active the forward value is locally constant, so its exact
            // derivative is zero.
            let s = acts[layers - 1][0];
            deltas[layers - 1][0] = if s <= EPS_PROB || s >= 1.0 - EPS_PROB {
                0.0
            } else {
                g_out * s * (1.0 - s)
            };
            // Hidden deltas.
            for l in (0..layers - 1).rev() {
                let out = self.layer_sizes[l + 1];
                let next_out = self.layer_sizes[l + 2];
                for o in 0..out {
                    let mut s = 0.0;
                    for n in 0..next_out {
                        s += self.weights[l + 1][n * out + o] * deltas[l + 1][n];
                    }
                    deltas[l][o] = if zs[l][o] > 0.0 { s } else { 0.0 };
                }
            }
            // Accumulate parameter gradients.
            for l in 0..layers {
                let inp = self.layer_sizes[l];
                let out = self.layer_sizes[l + 1];
                for o in 0..out {
                    let d = deltas[l][o];
                    grads.biases[l][o] += d;
                    let row = &mut grads.weights[l][o * inp..(o + 1) * inp];
                    if l == 0 {
                        for (gw, v) in row.iter_mut().zip(x.iter()) {
                            *gw += d * v;
                        }
                    } else {
                        for (gw, v) in row.iter_mut().zip(acts[l - 1].iter()) {
                            *gw += d * v;
                        }
                    }
                }
            }
        }
        let scale = 1.0 / inputs.len() as f64;
        for w in &mut grads.weights {
            for v in w {
                *v *= scale;
            }
        }
        for b in &mut grads.biases {
            for v in b {
                *v *= scale;
            }
        }
        Ok(grads)
    }
}

/// Adam optimizer state bound to one network's shapes.
///
/// The L2 constant is applied as an additive gradient penalty
/// (`g + l2 * w`, weights only) before the moment updates.
#[derive(Debug, Clone)]
pub struct AdamState {
    m_w: Vec<Vec<f64>>,
    v_w: Vec<Vec<f64>>,
    m_b: Vec<Vec<f64>>,
    v_b: Vec<Vec<f64>>,
    step: u64,
    learning_rate: f64,
    l2: f64,
}

impl AdamState {
    pub fn new(net: &Mlp, learning_rate: f64, l2: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if !(l2 >= 0.0 && l2.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "l2 must be non-negative, got {l2}"
            )));
        }
        Ok(AdamState {
            m_w: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            v_w: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            m_b: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            v_b: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            step: 0,
            learning_rate,
            l2,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update with bias correction. Fails on a frozen network or on
    /// any shape disagreement.
    pub fn apply(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        if !net.trainable {
            return Err(Error::Frozen(
                "optimizer step attempted while the network is frozen".into(),
            ));
        }
        if !grads.matches(net) {
            return Err(Error::ShapeMismatch(
                "gradient shapes do not match the network".into(),
            ));
        }
        if self.m_w.len() != net.weights.len() {
            return Err(Error::ShapeMismatch(
                "optimizer state does not match the network".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for l in 0..net.weights.len() {
            for i in 0..net.weights[l].len() {
                let g = grads.weights[l][i] + self.l2 * net.weights[l][i];
                let m = &mut self.m_w[l][i];
                let v = &mut self.v_w[l][i];
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                net.weights[l][i] -= self.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
            for i in 0..net.biases[l].len() {
                let g = grads.biases[l][i];
                let m = &mut self.m_b[l][i];
                let v = &mut self.v_b[l][i];
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                net.biases[l][i] -= self.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// Relative error with a unit floor, so tiny gradients are compared
/// absolutely: `|a - b| / max(|a|, |b|, 1)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

#[cfg(test)]
pub(crate) mod grad_check {
    use super::*;

    /// Binary cross entropy of one prediction, used as the scalar loss for
    /// finite-difference checks.
    pub fn ce(p: f64, y: u8) -> f64 {
        if y == 1 {
            -p.ln()
        } else {
            -(1.0 - p).ln()
        }
    }

    pub fn ce_grad(p: f64, y: u8) -> f64 {
        if y == 1 {
            -1.0 / p
        } else {
            1.0 / (1.0 - p)
        }
    }

    /// Small random biases keep pre-activations generically away from the
    /// ReLU kink, where central differences are one-sided. He-initialized
    /// nets have zero biases, so a fully dead layer would otherwise park the
    /// next layer's pre-activations exactly on the kink.
    pub fn randomize_biases<R: rand::Rng + ?Sized>(net: &mut Mlp, rng: &mut R) {
        for layer in net.biases_mut() {
            for b in layer {
                *b = rng.random_range(-0.3..0.3);
            }
        }
    }

    /// Mean CE loss of a batch under the current parameters.
    pub fn batch_loss(net: &Mlp, inputs: &[&[f64]], labels: &[u8]) -> f64 {
        let mut total = 0.0;
        for (x, &y) in inputs.iter().zip(labels) {
            total += ce(net.forward(x).unwrap(), y);
        }
        total / inputs.len() as f64
    }

    /// Max relative error between analytic and central-difference gradients.
    pub fn max_gradient_error(net: &mut Mlp, inputs: &[&[f64]], labels: &[u8], h: f64) -> f64 {
        let probs: Vec<f64> = inputs.iter().map(|x| net.forward(x).unwrap()).collect();
        let output_grads: Vec<f64> = probs
            .iter()
            .zip(labels)
            .map(|(&p, &y)| ce_grad(p, y))
            .collect();
        let analytic = net.backward(inputs, &output_grads).unwrap();

        let mut max_err: f64 = 0.0;
        for l in 0..net.weights.len() {
            for i in 0..net.weights[l].len() {
                let orig = net.weights[l][i];
                net.weights_mut()[l][i] = orig + h;
                let plus = batch_loss(net, inputs, labels);
                net.weights_mut()[l][i] = orig - h;
                let minus = batch_loss(net, inputs, labels);
                net.weights_mut()[l][i] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                max_err = max_err.max(relative_error(analytic.weights[l][i], numeric));
            }
            for i in 0..net.biases[l].len() {
                let orig = net.biases[l][i];
                net.biases_mut()[l][i] = orig + h;
                let plus = batch_loss(net, inputs, labels);
                net.biases_mut()[l][i] = orig - h;
                let minus = batch_loss(net, inputs, labels);
                net.biases_mut()[l][i] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                max_err = max_err.max(relative_error(analytic.biases[l][i], numeric));
            }
        }
        max_err
    }
}
