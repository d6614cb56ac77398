//! Embedding + two-hidden-layer MLP with hand-written reverse mode.
//!
//! The state and the task identifier are embedded separately, concatenated,
//! passed through two ReLU layers, and mapped to next-state logits. All
//! parameters live in one flat `f64` buffer so optimizers and penalties can
//! treat them as a single vector; [`ParamGroup`] names the slices.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::Distribution;
use crate::rng;

pub const MODEL_DIM: usize = 64;
pub const HIDDEN1: usize = 64;
pub const HIDDEN2: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MlpShape {
    pub n_states: usize,
    pub n_tasks: usize,
    /// Width of each embedding; the concatenated input is twice this.
    pub embed: usize,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl MlpShape {
    pub fn new(n_states: usize, n_tasks: usize) -> Self {
        MlpShape {
            n_states,
            n_tasks,
            embed: MODEL_DIM / 2,
            hidden1: HIDDEN1,
            hidden2: HIDDEN2,
        }
    }

    fn input(&self) -> usize {
        2 * self.embed
    }

    /// `(rows, cols)` of each group in layout order.
    fn dims(&self, group: ParamGroup) -> (usize, usize) {
        match group {
            ParamGroup::StateEmbedding => (self.n_states, self.embed),
            ParamGroup::TaskEmbedding => (self.n_tasks, self.embed),
            ParamGroup::Hidden1Weight => (self.input(), self.hidden1),
            ParamGroup::Hidden1Bias => (1, self.hidden1),
            ParamGroup::Hidden2Weight => (self.hidden1, self.hidden2),
            ParamGroup::Hidden2Bias => (1, self.hidden2),
            ParamGroup::OutputWeight => (self.hidden2, self.n_states),
            ParamGroup::OutputBias => (1, self.n_states),
        }
    }

    pub fn range(&self, group: ParamGroup) -> Range<usize> {
        let mut start = 0;
        for g in ParamGroup::ALL {
            let (r, c) = self.dims(g);
            if g == group {
                return start..start + r * c;
            }
            start += r * c;
        }
        unreachable!("every group is in ParamGroup::ALL")
    }

    pub fn len(&self) -> usize {
        ParamGroup::ALL
            .iter()
            .map(|&g| {
                let (r, c) = self.dims(g);
                r * c
            })
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    StateEmbedding,
    TaskEmbedding,
    Hidden1Weight,
    Hidden1Bias,
    Hidden2Weight,
    Hidden2Bias,
    OutputWeight,
    OutputBias,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 8] = [
        ParamGroup::StateEmbedding,
        ParamGroup::TaskEmbedding,
        ParamGroup::Hidden1Weight,
        ParamGroup::Hidden1Bias,
        ParamGroup::Hidden2Weight,
        ParamGroup::Hidden2Bias,
        ParamGroup::OutputWeight,
        ParamGroup::OutputBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::StateEmbedding => "state_embedding",
            ParamGroup::TaskEmbedding => "task_embedding",
            ParamGroup::Hidden1Weight => "hidden1.weight",
            ParamGroup::Hidden1Bias => "hidden1.bias",
            ParamGroup::Hidden2Weight => "hidden2.weight",
            ParamGroup::Hidden2Bias => "hidden2.bias",
            ParamGroup::OutputWeight => "output.weight",
            ParamGroup::OutputBias => "output.bias",
        }
    }

    pub fn is_bias(self) -> bool {
        matches!(
            self,
            ParamGroup::Hidden1Bias | ParamGroup::Hidden2Bias | ParamGroup::OutputBias
        )
    }
}

/// Parameters (or a gradient of the same shape).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub shape: MlpShape,
    pub data: Vec<f64>,
}

/// One training example: state, fed task identifier, next state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sample {
    pub x: usize,
    pub task: usize,
    pub y: usize,
}

impl Sample {
    pub fn new(x: usize, task: usize, y: usize) -> Self {
        Sample { x, task, y }
    }
}

/// Xavier-uniform weights and embeddings, zero biases.
pub fn init_params(n_states: usize, n_tasks: usize, seed: u64) -> Result<MlpParams> {
    if n_states < 2 {
        return Err(Error::invalid("n_states must be >= 2"));
    }
    if n_tasks < 1 {
        return Err(Error::invalid("n_tasks must be >= 1"));
    }
    let shape = MlpShape::new(n_states, n_tasks);
    let mut params = MlpParams::zeros(shape);
    let mut rng = rng::stream(seed);
    for g in ParamGroup::ALL {
        if g.is_bias() {
            continue;
        }
        // embeddings act as linear maps from one-hot inputs
        let (r, c) = shape.dims(g);
        let bound = (6.0 / (r + c) as f64).sqrt();
        for v in params.group_mut(g) {
            *v = rng.random_range(-bound..bound);
        }
    }
    Ok(params)
}

pub(crate) struct Activations {
    input: Vec<f64>,
    hidden1: Vec<f64>,
    hidden2: Vec<f64>,
    probs: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(shape: MlpShape) -> Self {
        MlpParams {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn group(&self, g: ParamGroup) -> &[f64] {
        &self.data[self.shape.range(g)]
    }

    pub fn group_mut(&mut self, g: ParamGroup) -> &mut [f64] {
        let r = self.shape.range(g);
        &mut self.data[r]
    }

    pub fn dims(&self, g: ParamGroup) -> (usize, usize) {
        self.shape.dims(g)
    }

    pub fn n_params(&self) -> usize {
        self.data.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &MlpParams) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &MlpParams) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    fn check(&self, x: usize, task: usize) -> Result<()> {
        if x >= self.shape.n_states {
            return Err(Error::invalid(format!("state {x} out of range")));
        }
        if task >= self.shape.n_tasks {
            return Err(Error::invalid(format!("task {task} out of range")));
        }
        Ok(())
    }

    pub(crate) fn activations(&self, x: usize, task: usize) -> Activations {
        let s = &self.shape;
        let mut input = Vec::with_capacity(s.input());
        input.extend_from_slice(&self.group(ParamGroup::StateEmbedding)[x * s.embed..(x + 1) * s.embed]);
        input.extend_from_slice(
            &self.group(ParamGroup::TaskEmbedding)[task * s.embed..(task + 1) * s.embed],
        );
        let hidden1 = dense(
            &input,
            self.group(ParamGroup::Hidden1Weight),
            self.group(ParamGroup::Hidden1Bias),
            true,
        );
        let hidden2 = dense(
            &hidden1,
            self.group(ParamGroup::Hidden2Weight),
            self.group(ParamGroup::Hidden2Bias),
            true,
        );
        let logits = dense(
            &hidden2,
            self.group(ParamGroup::OutputWeight),
            self.group(ParamGroup::OutputBias),
            false,
        );
        Activations {
            input,
            hidden1,
            hidden2,
            probs: softmax(&logits),
        }
    }

    /// Next-state distribution for `(x, task)`.
    pub fn forward(&self, x: usize, task: usize) -> Result<Distribution> {
        self.check(x, task)?;
        Distribution::new(self.activations(x, task).probs)
    }

    /// Cross-entropy `-ln p(y | x, task)`.
    pub fn loss(&self, s: &Sample) -> Result<f64> {
        self.check(s.x, s.task)?;
        if s.y >= self.shape.n_states {
            return Err(Error::invalid(format!("target {} out of range", s.y)));
        }
        Ok(-self.activations(s.x, s.task).probs[s.y].ln())
    }

    /// Weighted mean cross-entropy over a batch.
    pub fn mean_loss(&self, batch: &[Sample], weights: &[f64]) -> Result<f64> {
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        for (s, w) in batch.iter().zip(weights) {
            acc += w * self.loss(s)?;
        }
        Ok(acc / total)
    }

    /// Accumulate `scale * d(-ln p(y|x,task))/d(theta)` into `grad`.
    pub(crate) fn accumulate_grad(&self, s: &Sample, scale: f64, grad: &mut MlpParams) {
        let sh = self.shape;
        let act = self.activations(s.x, s.task);

        let mut d_logits = act.probs.clone();
        d_logits[s.y] -= 1.0;
        d_logits.iter_mut().for_each(|v| *v *= scale);

        let d_hidden2 = dense_backward(
            &act.hidden2,
            &d_logits,
            self.group(ParamGroup::OutputWeight),
            grad,
            ParamGroup::OutputWeight,
            ParamGroup::OutputBias,
        );
        let d_hidden2 = relu_mask(d_hidden2, &act.hidden2);
        let d_hidden1 = dense_backward(
            &act.hidden1,
            &d_hidden2,
            self.group(ParamGroup::Hidden2Weight),
            grad,
            ParamGroup::Hidden2Weight,
            ParamGroup::Hidden2Bias,
        );
        let d_hidden1 = relu_mask(d_hidden1, &act.hidden1);
        let d_input = dense_backward(
            &act.input,
            &d_hidden1,
            self.group(ParamGroup::Hidden1Weight),
            grad,
            ParamGroup::Hidden1Weight,
            ParamGroup::Hidden1Bias,
        );

        let e = sh.embed;
        let state_rows = grad.group_mut(ParamGroup::StateEmbedding);
        for (g, d) in state_rows[s.x * e..(s.x + 1) * e].iter_mut().zip(&d_input[..e]) {
            *g += d;
        }
        let task_rows = grad.group_mut(ParamGroup::TaskEmbedding);
        for (g, d) in task_rows[s.task * e..(s.task + 1) * e].iter_mut().zip(&d_input[e..]) {
            *g += d;
        }
    }

    /// Named tensors for checkpointing.
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            shape: self.shape,
            tensors: ParamGroup::ALL
                .iter()
                .map(|&g| {
                    let (r, c) = self.dims(g);
                    NamedTensor {
                        name: g.name().to_string(),
                        shape: if g.is_bias() { vec![c] } else { vec![r, c] },
                        values: self.group(g).to_vec(),
                    }
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut params = MlpParams::zeros(ck.shape);
        for g in ParamGroup::ALL {
            let t = ck
                .tensors
                .iter()
                .find(|t| t.name == g.name())
                .ok_or_else(|| Error::Schema(format!("checkpoint lacks tensor {}", g.name())))?;
            let dst = params.group_mut(g);
            if t.values.len() != dst.len() {
                return Err(Error::Schema(format!("tensor {} has wrong size", g.name())));
            }
            dst.copy_from_slice(&t.values);
        }
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub shape: MlpShape,
    pub tensors: Vec<NamedTensor>,
}

/// `out_j = sum_i in_i * w[i][j] + b_j`, optionally rectified.
fn dense(input: &[f64], weight: &[f64], bias: &[f64], relu: bool) -> Vec<f64> {
    let n_out = bias.len();
    let mut out = bias.to_vec();
    for (i, &v) in input.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let row = &weight[i * n_out..(i + 1) * n_out];
        for (o, w) in out.iter_mut().zip(row) {
            *o += v * w;
        }
    }
    if relu {
        out.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    out
}

/// Accumulates weight and bias gradients; returns the gradient w.r.t. `input`.
fn dense_backward(
    input: &[f64],
    d_out: &[f64],
    weight: &[f64],
    grad: &mut MlpParams,
    w_group: ParamGroup,
    b_group: ParamGroup,
) -> Vec<f64> {
    let n_out = d_out.len();
    for (g, d) in grad.group_mut(b_group).iter_mut().zip(d_out) {
        *g += d;
    }
    let gw = grad.group_mut(w_group);
    let mut d_in = vec![0.0; input.len()];
    for (i, &v) in input.iter().enumerate() {
        let row = &weight[i * n_out..(i + 1) * n_out];
        let grow = &mut gw[i * n_out..(i + 1) * n_out];
        let mut acc = 0.0;
        for k in 0..n_out {
            grow[k] += v * d_out[k];
            acc += row[k] * d_out[k];
        }
        d_in[i] = acc;
    }
    d_in
}

fn relu_mask(mut d: Vec<f64>, activated: &[f64]) -> Vec<f64> {
    for (g, &a) in d.iter_mut().zip(activated) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
    d
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Exact gradient of the weighted mean cross-entropy.
pub fn grad_cross_entropy(params: &MlpParams, batch: &[Sample], weights: &[f64]) -> Result<MlpParams> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if weights.len() != batch.len() {
        return Err(Error::invalid("one weight per sample is required"));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("sample weights must sum to a positive value"));
    }
    let mut grad = MlpParams::zeros(params.shape);
    for (s, w) in batch.iter().zip(weights) {
        params.check(s.x, s.task)?;
        if s.y >= params.shape.n_states {
            return Err(Error::invalid(format!("target {} out of range", s.y)));
        }
        params.accumulate_grad(s, w / total, &mut grad);
    }
    Ok(grad)
}
