//! Set-regression network over a frame's lanes and its image embedding.
//!
//! ```text
//! lane feature ─▶ affine ─▶ ReLU ─▶ affine ─▶ ReLU ─┐
//!                                                    ├─ mean ─┐
//! lane feature ─▶ ...                               ─┘        ├─ concat ─▶ affine ─▶ ReLU ─▶ affine ─▶ sigmoid
//! image embedding ───────────────────────────────────────────┘
//! ```
//!
//! A frame without predicted lanes is encoded as the singleton set holding
//! the learnable default lane token.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::embed::ImageEmbedder;
use crate::data::Sample;
use crate::error::{Error, Result};

/// Affine layer `y = W x + b`, `W` stored row-major as `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Accumulates `dL/dW`, `dL/db` into `grad` given the input `x` and the
    /// upstream gradient `dz`; returns `dL/dx`.
    fn backward(&self, x: &[f64], dz: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; self.inputs];
        for (o, &d) in dz.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad.bias[o] += d;
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut grad.weights[o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                grow[i] += d * x[i];
                dx[i] += d * row[i];
            }
        }
        dx
    }

    fn check_shape(&self, name: &str) -> Result<()> {
        if self.weights.len() != self.inputs * self.outputs || self.bias.len() != self.outputs {
            return Err(Error::Consistency(format!(
                "layer `{name}` declares {}x{} but holds {} weights and {} biases",
                self.outputs,
                self.inputs,
                self.weights.len(),
                self.bias.len()
            )));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::Consistency(format!("layer `{name}` has non-finite parameters")));
        }
        Ok(())
    }
}

/// Layer widths of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub d_lane: usize,
    pub d_img: usize,
    pub h1: usize,
    pub h2: usize,
    pub h3: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkWeights {
    pub lane_in: Dense,
    pub lane_out: Dense,
    pub head_hidden: Dense,
    pub head_out: Dense,
    pub default_lane_token: Vec<f64>,
}

pub const BLOCK_NAMES: [&str; 9] = [
    "lane_in.weights",
    "lane_in.bias",
    "lane_out.weights",
    "lane_out.bias",
    "head_hidden.weights",
    "head_hidden.bias",
    "head_out.weights",
    "head_out.bias",
    "default_lane_token",
];

impl NetworkWeights {
    pub fn zeros(arch: Architecture) -> Self {
        NetworkWeights {
            lane_in: Dense::zeros(arch.d_lane, arch.h1),
            lane_out: Dense::zeros(arch.h1, arch.h2),
            head_hidden: Dense::zeros(arch.h2 + arch.d_img, arch.h3),
            head_out: Dense::zeros(arch.h3, 1),
            default_lane_token: vec![0.0; arch.d_lane],
        }
    }

    /// Fan-in scaled uniform weights in `±sqrt(6 / fan_in)`, hidden biases
    /// at 0.01 so the zero default token starts in the active ReLU region,
    /// output bias 0 and a zero default token.
    pub fn init(arch: Architecture, rng: &mut impl Rng) -> Self {
        let mut w = Self::zeros(arch);
        for layer in [&mut w.lane_in, &mut w.lane_out, &mut w.head_hidden, &mut w.head_out] {
            let bound = (6.0 / layer.inputs as f64).sqrt();
            layer.weights.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
        }
        for layer in [&mut w.lane_in, &mut w.lane_out, &mut w.head_hidden] {
            layer.bias.iter_mut().for_each(|b| *b = 0.01);
        }
        w
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.architecture())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            d_lane: self.lane_in.inputs,
            d_img: self.head_hidden.inputs - self.lane_out.outputs,
            h1: self.lane_in.outputs,
            h2: self.lane_out.outputs,
            h3: self.head_hidden.outputs,
        }
    }

    /// Checks internal shape consistency and finiteness.
    pub fn validate(&self) -> Result<()> {
        self.lane_in.check_shape("lane_in")?;
        self.lane_out.check_shape("lane_out")?;
        self.head_hidden.check_shape("head_hidden")?;
        self.head_out.check_shape("head_out")?;
        let links = [
            ("lane_out.inputs", self.lane_out.inputs, self.lane_in.outputs),
            ("head_out.inputs", self.head_out.inputs, self.head_hidden.outputs),
            ("head_out.outputs", self.head_out.outputs, 1),
            ("default_lane_token", self.default_lane_token.len(), self.lane_in.inputs),
        ];
        for (what, actual, expected) in links {
            if actual != expected {
                return Err(Error::dimension(what, expected, actual));
            }
        }
        if self.head_hidden.inputs < self.lane_out.outputs {
            return Err(Error::Consistency("head input narrower than the lane encoding".into()));
        }
        if self.default_lane_token.iter().any(|v| !v.is_finite()) {
            return Err(Error::Consistency("default lane token has non-finite values".into()));
        }
        Ok(())
    }

    /// Parameter blocks in [`BLOCK_NAMES`] order.
    pub fn blocks(&self) -> [&[f64]; 9] {
        [
            &self.lane_in.weights,
            &self.lane_in.bias,
            &self.lane_out.weights,
            &self.lane_out.bias,
            &self.head_hidden.weights,
            &self.head_hidden.bias,
            &self.head_out.weights,
            &self.head_out.bias,
            &self.default_lane_token,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 9] {
        [
            &mut self.lane_in.weights,
            &mut self.lane_in.bias,
            &mut self.lane_out.weights,
            &mut self.lane_out.bias,
            &mut self.head_hidden.weights,
            &mut self.head_hidden.bias,
            &mut self.head_out.weights,
            &mut self.head_out.bias,
            &mut self.default_lane_token,
        ]
    }

    /// Squared norm of the weight matrices (biases and token excluded).
    pub fn weight_norm2(&self) -> f64 {
        [&self.lane_in, &self.lane_out, &self.head_hidden, &self.head_out]
            .iter()
            .flat_map(|l| l.weights.iter())
            .map(|w| w * w)
            .sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }
}

/// Network input for one frame: lane features in canonical order plus the
/// image embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    lanes: Vec<Vec<f64>>,
    embedding: Vec<f64>,
}

impl PreparedSample {
    /// Lanes are sorted lexicographically so that pooling sums in the same
    /// order whatever order the detector emitted them in.
    pub fn new(mut lanes: Vec<Vec<f64>>, embedding: Vec<f64>) -> Self {
        lanes.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or_else(|| a.len().cmp(&b.len()))
        });
        PreparedSample { lanes, embedding }
    }

    pub fn from_sample(sample: &Sample, embedder: &dyn ImageEmbedder, arch: &Architecture) -> Result<Self> {
        let mut lanes = Vec::with_capacity(sample.pred_lanes.len());
        for lane in &sample.pred_lanes {
            let f = lane.feature()?;
            if f.len() != arch.d_lane {
                return Err(Error::dimension("lane feature", arch.d_lane, f.len()));
            }
            lanes.push(f.to_vec());
        }
        let embedding = embedder.embed(sample)?;
        if embedding.len() != arch.d_img {
            return Err(Error::dimension("image embedding", arch.d_img, embedding.len()));
        }
        Ok(Self::new(lanes, embedding))
    }

    pub fn lane_count(&self) -> usize {
        self.lanes.len()
    }
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&z| z.max(0.0)).collect()
}

fn relu_backward(upstream: &[f64], pre: &[f64]) -> Vec<f64> {
    upstream
        .iter()
        .zip(pre)
        .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
        .collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

struct LaneTrace {
    input: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
pub(crate) struct Trace {
    lanes: Vec<LaneTrace>,
    used_token: bool,
    head_input: Vec<f64>,
    z3: Vec<f64>,
    a3: Vec<f64>,
    pub(crate) output: f64,
}

impl Trace {
    /// Smallest |pre-activation| over every ReLU unit.
    pub(crate) fn min_abs_preactivation(&self) -> f64 {
        self.lanes
            .iter()
            .flat_map(|l| l.z1.iter().chain(&l.z2))
            .chain(&self.z3)
            .fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }
}

pub(crate) fn forward_trace(w: &NetworkWeights, sample: &PreparedSample) -> Trace {
    let used_token = sample.lanes.is_empty();
    let inputs: Vec<&[f64]> = if used_token {
        vec![&w.default_lane_token]
    } else {
        sample.lanes.iter().map(Vec::as_slice).collect()
    };
    let h2 = w.lane_out.outputs;
    let mut pooled = vec![0.0; h2];
    let mut lanes = Vec::with_capacity(inputs.len());
    for x in inputs {
        let z1 = w.lane_in.forward(x);
        let a1 = relu(&z1);
        let z2 = w.lane_out.forward(&a1);
        for (p, z) in pooled.iter_mut().zip(&z2) {
            *p += z.max(0.0);
        }
        lanes.push(LaneTrace {
            input: x.to_vec(),
            z1,
            a1,
            z2,
        });
    }
    let n = lanes.len() as f64;
    let mut head_input: Vec<f64> = pooled.into_iter().map(|p| p / n).collect();
    head_input.extend_from_slice(&sample.embedding);
    let z3 = w.head_hidden.forward(&head_input);
    let a3 = relu(&z3);
    let z4 = w.head_out.forward(&a3)[0];
    Trace {
        lanes,
        used_token,
        head_input,
        z3,
        a3,
        output: sigmoid(z4),
    }
}

/// Backpropagates `d_output = dL/dy` through one trace, accumulating into `grad`.
pub(crate) fn backward(w: &NetworkWeights, trace: &Trace, d_output: f64, grad: &mut NetworkWeights) {
    let y = trace.output;
    let dz4 = d_output * y * (1.0 - y);
    let da3 = w.head_out.backward(&trace.a3, &[dz4], &mut grad.head_out);
    let dz3 = relu_backward(&da3, &trace.z3);
    let du = w.head_hidden.backward(&trace.head_input, &dz3, &mut grad.head_hidden);
    let h2 = w.lane_out.outputs;
    let n = trace.lanes.len() as f64;
    let da2: Vec<f64> = du[..h2].iter().map(|g| g / n).collect();
    for lane in &trace.lanes {
        let dz2 = relu_backward(&da2, &lane.z2);
        let da1 = w.lane_out.backward(&lane.a1, &dz2, &mut grad.lane_out);
        let dz1 = relu_backward(&da1, &lane.z1);
        let dx = w.lane_in.backward(&lane.input, &dz1, &mut grad.lane_in);
        if trace.used_token {
            for (g, d) in grad.default_lane_token.iter_mut().zip(dx) {
                *g += d;
            }
        }
    }
}

pub fn forward_prepared(w: &NetworkWeights, sample: &PreparedSample) -> f64 {
    forward_trace(w, sample).output
}

/// Predicted F1 of one frame, strictly inside (0, 1).
pub fn forward_sample(w: &NetworkWeights, sample: &Sample, embedder: &dyn ImageEmbedder) -> Result<f64> {
    let prepared = PreparedSample::from_sample(sample, embedder, &w.architecture())?;
    Ok(forward_prepared(w, &prepared))
}

/// A set of frames whose mean prediction is regressed onto `target`.
/// Per-frame supervision uses singleton groups.
pub struct Group<'a> {
    pub samples: Vec<&'a PreparedSample>,
    pub target: f64,
}

/// Mean squared error over groups plus `weight_decay / 2 · ‖W‖²`, with the
/// gradient of every parameter block.
pub fn grouped_loss_and_gradients(
    w: &NetworkWeights,
    groups: &[Group<'_>],
    weight_decay: f64,
) -> Result<(f64, NetworkWeights)> {
    if groups.is_empty() || groups.iter().any(|g| g.samples.is_empty()) {
        return Err(Error::Empty("training batch"));
    }
    if let Some(g) = groups.iter().find(|g| !(0.0..=1.0).contains(&g.target)) {
        return Err(Error::Consistency(format!("target {} outside [0, 1]", g.target)));
    }
    let mut grad = w.zeros_like();
    let count = groups.len() as f64;
    let mut data_loss = 0.0;
    for group in groups {
        let traces: Vec<Trace> = group.samples.iter().map(|s| forward_trace(w, s)).collect();
        let size = traces.len() as f64;
        let prediction = traces.iter().map(|t| t.output).sum::<f64>() / size;
        let residual = prediction - group.target;
        data_loss += residual * residual;
        let d_output = 2.0 * residual / (count * size);
        for t in &traces {
            backward(w, t, d_output, &mut grad);
        }
    }
    if weight_decay != 0.0 {
        for (g, p) in [
            (&mut grad.lane_in, &w.lane_in),
            (&mut grad.lane_out, &w.lane_out),
            (&mut grad.head_hidden, &w.head_hidden),
            (&mut grad.head_out, &w.head_out),
        ] {
            for (gw, pw) in g.weights.iter_mut().zip(&p.weights) {
                *gw += weight_decay * pw;
            }
        }
    }
    let loss = data_loss / count + 0.5 * weight_decay * w.weight_norm2();
    Ok((loss, grad))
}

/// Per-frame MSE loss and gradients for `(sample, target F1)` pairs.
pub fn loss_and_gradients(
    w: &NetworkWeights,
    batch: &[(&Sample, f64)],
    embedder: &dyn ImageEmbedder,
    weight_decay: f64,
) -> Result<(f64, NetworkWeights)> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let arch = w.architecture();
    let prepared = batch
        .iter()
        .map(|(s, _)| PreparedSample::from_sample(s, embedder, &arch))
        .collect::<Result<Vec<_>>>()?;
    let groups: Vec<Group<'_>> = prepared
        .iter()
        .zip(batch)
        .map(|(p, (_, t))| Group {
            samples: vec![p],
            target: *t,
        })
        .collect();
    grouped_loss_and_gradients(w, &groups, weight_decay)
}
