//! Small dense networks with exact reverse-mode gradients.
//!
//! Parameters of every layer live in one flat vector (weights row-major,
//! then biases, layer by layer) so the optimizer, gradient checker and
//! checkpoint code can treat a network as a single parameter block. Hidden
//! layers use `tanh`; the output layer is linear and the head (masked
//! softmax, sigmoid, softmax) is applied by the caller.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;

use crate::env::{AugmentedState, Observation};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Lower clamp for every logarithm taken inside a loss.
pub const LOG_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    MaskedSoftmax,
    Sigmoid,
    Softmax,
}

impl Head {
    fn name(self) -> &'static str {
        match self {
            Head::MaskedSoftmax => "masked_softmax",
            Head::Sigmoid => "sigmoid",
            Head::Softmax => "softmax",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "masked_softmax" => Some(Head::MaskedSoftmax),
            "sigmoid" => Some(Head::Sigmoid),
            "softmax" => Some(Head::Softmax),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    head: Head,
    params: Vec<f64>,
}

/// Layer activations from a forward pass, needed for backprop.
#[derive(Debug, Clone)]
pub struct Activations {
    layers: Vec<Vec<f64>>,
}

impl Activations {
    /// Raw (pre-head) network output.
    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("at least the input layer")
    }
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(dims: &[usize], head: Head) -> Self {
        assert!(dims.len() >= 2, "an Mlp needs input and output widths");
        Self {
            dims: dims.to_vec(),
            head,
            params: vec![0.0; param_count(dims)],
        }
    }

    /// Weights uniform in `[-r, r]` with `r = sqrt(6 / (fan_in + fan_out))`,
    /// biases zero.
    pub fn new<R: Rng>(dims: &[usize], head: Head, rng: &mut R) -> Self {
        let mut net = Self::zeros(dims, head);
        let mut offset = 0;
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng.gen_range(-r..r);
            }
            offset += fan_in * fan_out + fan_out;
        }
        net
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn zero_grads(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Activations> {
        if input.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let last = self.dims.len() - 2;
        let mut layers = Vec::with_capacity(self.dims.len());
        layers.push(input.to_vec());
        let mut offset = 0;
        for (l, w) in self.dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let bias = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let x = layers.last().unwrap();
            let mut out = bias.to_vec();
            for (o, row) in out.iter_mut().zip(weights.chunks_exact(fan_in)) {
                *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
            if l != last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            layers.push(out);
            offset += fan_in * fan_out + fan_out;
        }
        Ok(Activations { layers })
    }

    /// Accumulates `d(loss)/d(params)` into `grads`, given the gradient of
    /// the loss with respect to the raw output.
    pub fn backward(&self, acts: &Activations, d_output: &[f64], grads: &mut [f64]) {
        assert_eq!(d_output.len(), self.output_dim());
        assert_eq!(grads.len(), self.params.len());
        let mut offsets = Vec::with_capacity(self.dims.len() - 1);
        let mut offset = 0;
        for w in self.dims.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        let mut delta = d_output.to_vec();
        for l in (0..self.dims.len() - 1).rev() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let off = offsets[l];
            let x = &acts.layers[l];
            for (j, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut grads[off + j * fan_in..off + (j + 1) * fan_in];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
                grads[off + fan_in * fan_out + j] += d;
            }
            if l == 0 {
                break;
            }
            // Through the weights, then through tanh of layer l's output.
            let weights = &self.params[off..off + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for (j, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (p, w) in prev.iter_mut().zip(&weights[j * fan_in..(j + 1) * fan_in]) {
                    *p += d * w;
                }
            }
            for (p, a) in prev.iter_mut().zip(x) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
    }

    /// Named parameter tensors in storage order: `(name, shape, values)`.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        let mut offset = 0;
        for (l, w) in self.dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            out.push((
                format!("layer{l}.weight"),
                vec![fan_out, fan_in],
                &self.params[offset..offset + fan_in * fan_out],
            ));
            offset += fan_in * fan_out;
            out.push((format!("layer{l}.bias"), vec![fan_out], &self.params[offset..offset + fan_out]));
            offset += fan_out;
        }
        out
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax over unmasked entries; masked entries are exactly zero.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(Error::ShapeMismatch {
            expected: logits.len(),
            got: mask.len(),
        });
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&z, _)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Contract("every action is masked".into()));
    }
    let exps: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&z, &m)| if m { (z - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// `ln(x)` with `x` clamped to `[LOG_FLOOR, 1]`, and its derivative.
pub fn clamped_log(x: f64) -> (f64, f64) {
    if x < LOG_FLOOR {
        (LOG_FLOOR.ln(), 0.0)
    } else if x > 1.0 {
        (0.0, 0.0)
    } else {
        (x.ln(), 1.0 / x)
    }
}

/// Network input for `(s, s')`: counts are compressed with `ln(1 + x)`.
pub fn state_input(s: &Observation, s_prime: &AugmentedState) -> Vec<f64> {
    s.as_slice()
        .iter()
        .chain(s_prime.as_slice())
        .map(|x| x.ln_1p())
        .collect()
}

/// Network input for `(s, s', a)`: the state part plus a one-hot action.
pub fn state_action_input(s: &Observation, s_prime: &AugmentedState, action: usize) -> Vec<f64> {
    let n = s.n();
    let mut x = state_input(s, s_prime);
    let base = x.len();
    x.resize(base + n, 0.0);
    x[base + action] = 1.0;
    x
}

pub fn policy_forward(
    theta: &Mlp,
    s: &Observation,
    s_prime: &AugmentedState,
    mask: &[bool],
) -> Result<Vec<f64>> {
    let acts = theta.forward(&state_input(s, s_prime))?;
    masked_softmax(acts.output(), mask)
}

pub fn discriminator_forward(
    phi: &Mlp,
    s: &Observation,
    s_prime: &AugmentedState,
    action: usize,
) -> Result<f64> {
    let acts = phi.forward(&state_action_input(s, s_prime, action))?;
    Ok(sigmoid(acts.output()[0]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascend,
    Descend,
}

/// Adam moments for one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], direction: Direction) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                expected: self.m.len(),
                got: params.len(),
            });
        }
        if grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                expected: self.m.len(),
                got: grads.len(),
            });
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let sign = match direction {
            Direction::Ascend => 1.0,
            Direction::Descend => -1.0,
        };
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let update = (*m / c1) / ((*v / c2).sqrt() + self.eps);
            *p += sign * self.lr * update;
        }
        Ok(())
    }
}

/// A network paired with its optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainable {
    pub net: Mlp,
    pub opt: Adam,
}

impl Trainable {
    pub fn new(net: Mlp, lr: f64) -> Self {
        let opt = Adam::new(net.num_params(), lr);
        Self { net, opt }
    }

    pub fn apply(&mut self, grads: &[f64], direction: Direction) -> Result<()> {
        self.opt.step(&mut self.net.params, grads, direction)?;
        if !self.net.is_finite() {
            return Err(Error::Contract("non-finite parameter after update".into()));
        }
        Ok(())
    }
}

/// Largest relative error between `analytic` gradients and central
/// differences of `loss`.
///
/// Entries are compared as `|a - f| / max(|a|, |f|, 1e-6)`; the floor keeps
/// near-zero gradients from amplifying rounding noise in the difference
/// quotient. With more than 10^4 parameters a seeded random subset of 10^4
/// coordinates is checked.
pub fn gradient_check<F>(net: &Mlp, analytic: &[f64], loss: F, epsilon: f64, seed: u64) -> f64
where
    F: Fn(&Mlp) -> f64,
{
    assert!(epsilon > 0.0);
    assert_eq!(analytic.len(), net.num_params());
    const LIMIT: usize = 10_000;
    let indices: Vec<usize> = if net.num_params() > LIMIT {
        let mut rng = stream_rng(seed, 0);
        let mut idx = sample(&mut rng, net.num_params(), LIMIT).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..net.num_params()).collect()
    };
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in indices {
        let original = probe.params[i];
        probe.params[i] = original + epsilon;
        let up = loss(&probe);
        probe.params[i] = original - epsilon;
        let down = loss(&probe);
        probe.params[i] = original;
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

const CHECKPOINT_HEADER: &str = "debunkd-params v1";

/// Text checkpoint:
///
/// ```text
/// debunkd-params v1
/// head <masked_softmax|sigmoid|softmax>
/// dims <d0> <d1> ... <dL>
/// <name> <shape...>
/// <row-major values, space separated>
/// ...
/// ```
pub fn write_checkpoint(net: &Mlp, path: &Path) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_HEADER}");
    let _ = writeln!(out, "head {}", net.head.name());
    let dims: Vec<String> = net.dims.iter().map(ToString::to_string).collect();
    let _ = writeln!(out, "dims {}", dims.join(" "));
    for (name, shape, values) in net.tensors() {
        let shape: Vec<String> = shape.iter().map(ToString::to_string).collect();
        let _ = writeln!(out, "{name} {}", shape.join(" "));
        let vals: Vec<String> = values.iter().map(ToString::to_string).collect();
        let _ = writeln!(out, "{}", vals.join(" "));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Mlp> {
    let text = fs::read_to_string(path)?;
    let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    let mut lines = text.lines();
    if lines.next() != Some(CHECKPOINT_HEADER) {
        return Err(bad("missing or unsupported header"));
    }
    let head = lines
        .next()
        .and_then(|l| l.strip_prefix("head "))
        .and_then(Head::parse)
        .ok_or_else(|| bad("bad head line"))?;
    let dims: Vec<usize> = lines
        .next()
        .and_then(|l| l.strip_prefix("dims "))
        .ok_or_else(|| bad("bad dims line"))?
        .split_whitespace()
        .map(|d| d.parse().map_err(|_| bad("bad dimension")))
        .collect::<Result<_>>()?;
    if dims.len() < 2 {
        return Err(bad("need at least two dims"));
    }
    let mut net = Mlp::zeros(&dims, head);
    let expected: Vec<(String, Vec<usize>, usize)> = net
        .tensors()
        .into_iter()
        .map(|(name, shape, v)| (name, shape, v.len()))
        .collect();
    let mut params = Vec::with_capacity(net.num_params());
    for (name, shape, len) in expected {
        let header = lines.next().ok_or_else(|| bad("truncated"))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some(name.as_str()) {
            return Err(bad(&format!("expected tensor {name}")));
        }
        let got: Vec<usize> = fields.map(|f| f.parse().unwrap_or(0)).collect();
        if got != shape {
            return Err(bad(&format!("shape mismatch for {name}")));
        }
        let values: Vec<f64> = lines
            .next()
            .unwrap_or("")
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| bad("bad value")))
            .collect::<Result<_>>()?;
        if values.len() != len {
            return Err(bad(&format!("{name}: expected {len} values, got {}", values.len())));
        }
        params.extend(values);
    }
    net.params = params;
    Ok(net)
}
