//! Online SGD, experience replay and EWC trainers.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{grad_cross_entropy, init_params, MlpParams, Sample};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::schedule::HistoricalSequence;

pub const DEFAULT_LR: f64 = 0.001;
pub const DEFAULT_REPLAY_CAPACITY: usize = 8000;
pub const DEFAULT_REPLAY_RATIO: f64 = 0.5;
pub const DEFAULT_REPLAY_BATCH: usize = 32;
pub const DEFAULT_EWC_LAMBDA: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainerKind {
    Sgd,
    Er,
    Ewc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Eviction {
    #[default]
    Fifo,
    Reservoir,
}

/// How the EWC penalty enters an update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyStep {
    /// `theta -= lr * (grad CE + lambda * F * (theta - anchor))`.
    #[default]
    Explicit,
    /// Penalty solved exactly per coordinate:
    /// `theta = (theta - lr * grad CE + lr * lambda * F * anchor) / (1 + lr * lambda * F)`.
    /// Agrees with the explicit step to first order in `lr` and stays stable
    /// for any `lambda`.
    Proximal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub lr: f64,
    pub replay_capacity: usize,
    pub replay_ratio: f64,
    pub replay_batch: usize,
    pub eviction: Eviction,
    pub ewc_lambda: f64,
    #[serde(default)]
    pub penalty_step: PenaltyStep,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            lr: DEFAULT_LR,
            replay_capacity: DEFAULT_REPLAY_CAPACITY,
            replay_ratio: DEFAULT_REPLAY_RATIO,
            replay_batch: DEFAULT_REPLAY_BATCH,
            eviction: Eviction::Fifo,
            ewc_lambda: DEFAULT_EWC_LAMBDA,
            penalty_step: PenaltyStep::Explicit,
        }
    }
}

/// Bounded store of past samples.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    eviction: Eviction,
    items: VecDeque<Sample>,
    seen: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, eviction: Eviction) -> Self {
        ReplayBuffer {
            capacity,
            eviction,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            seen: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&Sample> {
        self.items.get(i)
    }

    pub fn push(&mut self, s: Sample, rng: &mut StreamRng) {
        self.seen += 1;
        if self.capacity == 0 {
            return;
        }
        if self.items.len() < self.capacity {
            self.items.push_back(s);
            return;
        }
        match self.eviction {
            Eviction::Fifo => {
                self.items.pop_front();
                self.items.push_back(s);
            }
            Eviction::Reservoir => {
                let j = rng.random_range(0..self.seen);
                if (j as usize) < self.capacity {
                    self.items[j as usize] = s;
                }
            }
        }
    }

    /// `n` samples drawn uniformly with replacement.
    pub fn sample(&self, n: usize, rng: &mut StreamRng) -> Vec<Sample> {
        (0..n)
            .map(|_| self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}

/// Running diagonal-Fisher penalty.
#[derive(Debug, Clone)]
pub struct EwcState {
    pub anchors: MlpParams,
    pub fisher: MlpParams,
    pub lambda: f64,
    pub consolidations: usize,
}

impl EwcState {
    pub fn new(params: &MlpParams, lambda: f64) -> Self {
        EwcState {
            anchors: params.clone(),
            fisher: MlpParams::zeros(params.shape),
            lambda,
            consolidations: 0,
        }
    }

    /// `(lambda / 2) * sum_i F_i (theta_i - anchor_i)^2`
    pub fn penalty(&self, params: &MlpParams) -> f64 {
        let s: f64 = params
            .data
            .iter()
            .zip(&self.anchors.data)
            .zip(&self.fisher.data)
            .map(|((t, a), f)| f * (t - a).powi(2))
            .sum();
        0.5 * self.lambda * s
    }

    /// Adds `lambda * F * (theta - anchor)` to `grad`.
    pub fn add_penalty_grad(&self, params: &MlpParams, grad: &mut MlpParams) {
        if self.consolidations == 0 {
            return;
        }
        for (((g, t), a), f) in grad
            .data
            .iter_mut()
            .zip(&params.data)
            .zip(&self.anchors.data)
            .zip(&self.fisher.data)
        {
            *g += self.lambda * f * (t - a);
        }
    }

    /// Fold the empirical Fisher of `samples` into the running estimate and
    /// re-anchor at `params`.
    pub fn consolidate(&mut self, params: &MlpParams, samples: &[Sample]) -> Result<()> {
        let fresh = empirical_fisher(params, samples)?;
        for (f, n) in self.fisher.data.iter_mut().zip(&fresh.data) {
            *f += n;
        }
        self.anchors = params.clone();
        self.consolidations += 1;
        Ok(())
    }
}

/// Mean over samples of the element-wise squared log-likelihood gradient.
pub fn empirical_fisher(params: &MlpParams, samples: &[Sample]) -> Result<MlpParams> {
    if samples.is_empty() {
        return Err(Error::invalid("consolidation needs at least one sample"));
    }
    let mut fisher = MlpParams::zeros(params.shape);
    let scale = 1.0 / samples.len() as f64;
    for s in samples {
        let g = grad_cross_entropy(params, std::slice::from_ref(s), &[1.0])?;
        for (f, v) in fisher.data.iter_mut().zip(&g.data) {
            *f += scale * v * v;
        }
    }
    Ok(fisher)
}

/// A single-threaded continual learner over one model.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub kind: TrainerKind,
    pub config: TrainerConfig,
    pub params: MlpParams,
    pub buffer: ReplayBuffer,
    pub ewc: EwcState,
    seed: u64,
    rng: StreamRng,
    segment: Vec<Sample>,
    segment_task: Option<usize>,
    steps: usize,
    loss_log: Option<Vec<(usize, f64)>>,
}

impl Trainer {
    pub fn new(
        kind: TrainerKind,
        config: TrainerConfig,
        n_states: usize,
        n_tasks: usize,
        seed: u64,
    ) -> Result<Self> {
        let params = init_params(n_states, n_tasks, rng::derive_seed(seed, &[rng::tag("init")]))?;
        Ok(Trainer {
            kind,
            config,
            buffer: ReplayBuffer::new(config.replay_capacity, config.eviction),
            ewc: EwcState::new(&params, config.ewc_lambda),
            params,
            seed,
            rng: rng::stream(rng::derive_seed(seed, &[rng::tag("replay")])),
            segment: Vec::new(),
            segment_task: None,
            steps: 0,
            loss_log: None,
        })
    }

    /// Back to freshly initialized parameters and empty state.
    pub fn reset(&mut self) -> Result<()> {
        let log = self.loss_log.is_some();
        *self = Trainer::new(
            self.kind,
            self.config,
            self.params.shape.n_states,
            self.params.shape.n_tasks,
            self.seed,
        )?;
        if log {
            self.enable_loss_log();
        }
        Ok(())
    }

    pub fn enable_loss_log(&mut self) {
        self.loss_log = Some(Vec::new());
    }

    /// `(step, loss)` pairs recorded before each update, if enabled.
    pub fn loss_log(&self) -> Option<&[(usize, f64)]> {
        self.loss_log.as_deref()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn consolidations(&self) -> usize {
        self.ewc.consolidations
    }

    fn apply(&mut self, grad: &MlpParams) {
        self.params.axpy(-self.config.lr, grad);
    }

    fn log_loss(&mut self, s: &Sample) -> Result<()> {
        if self.loss_log.is_some() {
            let loss = self.params.loss(s)?;
            let step = self.steps;
            if let Some(log) = self.loss_log.as_mut() {
                log.push((step, loss));
            }
        }
        Ok(())
    }

    /// Plain online update on the current sample.
    pub fn step_sgd(&mut self, s: Sample) -> Result<()> {
        self.log_loss(&s)?;
        let g = grad_cross_entropy(&self.params, &[s], &[1.0])?;
        self.apply(&g);
        self.steps += 1;
        Ok(())
    }

    /// Mixed update: `(1 - ratio)` on the current sample plus `ratio` on the
    /// mean loss of a replay batch. The replay term is skipped while the buffer
    /// holds fewer than one batch, and the ratio-zero case never touches the
    /// sampler.
    pub fn step_er(&mut self, s: Sample) -> Result<()> {
        let ratio = self.config.replay_ratio;
        let batch = self.config.replay_batch;
        self.log_loss(&s)?;
        let g = if ratio > 0.0 && batch > 0 && self.buffer.len() >= batch {
            let replay = self.buffer.sample(batch, &mut self.rng);
            let mut g = grad_cross_entropy(&self.params, &[s], &[1.0])?;
            g.data.iter_mut().for_each(|v| *v *= 1.0 - ratio);
            let rg = grad_cross_entropy(&self.params, &replay, &vec![1.0; batch])?;
            g.axpy(ratio, &rg);
            g
        } else {
            grad_cross_entropy(&self.params, &[s], &[1.0])?
        };
        self.apply(&g);
        self.buffer.push(s, &mut self.rng);
        self.steps += 1;
        Ok(())
    }

    /// Online update on cross-entropy plus the consolidation penalty.
    pub fn step_ewc(&mut self, s: Sample) -> Result<()> {
        self.log_loss(&s)?;
        let mut g = grad_cross_entropy(&self.params, &[s], &[1.0])?;
        match self.config.penalty_step {
            PenaltyStep::Explicit => {
                self.ewc.add_penalty_grad(&self.params, &mut g);
                self.apply(&g);
            }
            PenaltyStep::Proximal => self.proximal_step(&g),
        }
        self.steps += 1;
        Ok(())
    }

    fn proximal_step(&mut self, ce_grad: &MlpParams) {
        let lr = self.config.lr;
        let active = self.ewc.consolidations > 0;
        for (i, t) in self.params.data.iter_mut().enumerate() {
            let k = if active { lr * self.ewc.lambda * self.ewc.fisher.data[i] } else { 0.0 };
            *t = (*t - lr * ce_grad.data[i] + k * self.ewc.anchors.data[i]) / (1.0 + k);
        }
    }

    pub fn consolidate(&mut self, samples: &[Sample]) -> Result<()> {
        self.ewc.consolidate(&self.params, samples)
    }

    /// Feed one transition. A change of task identifier closes the running
    /// segment, which triggers consolidation for EWC.
    pub fn observe(&mut self, s: Sample) -> Result<()> {
        if self.segment_task.is_some_and(|t| t != s.task) {
            self.close_segment()?;
        }
        self.segment_task = Some(s.task);
        if self.kind == TrainerKind::Ewc {
            self.segment.push(s);
        }
        match self.kind {
            TrainerKind::Sgd => self.step_sgd(s),
            TrainerKind::Er => self.step_er(s),
            TrainerKind::Ewc => self.step_ewc(s),
        }
    }

    fn close_segment(&mut self) -> Result<()> {
        if self.kind == TrainerKind::Ewc && !self.segment.is_empty() {
            let samples = std::mem::take(&mut self.segment);
            self.consolidate(&samples)?;
        }
        self.segment.clear();
        Ok(())
    }

    /// Reset, then train on every transition of `seq` in order.
    ///
    /// The task input is the segment's task id when the sequence carries
    /// identifiers and a constant 0 otherwise.
    pub fn train_on_sequence(&mut self, seq: &HistoricalSequence) -> Result<()> {
        self.reset()?;
        if seq.segments.is_empty() {
            return Err(Error::invalid("cannot train on an empty sequence"));
        }
        for obs in seq.observations() {
            let task = if obs.label.is_some() { obs.task_id } else { 0 };
            self.observe(Sample::new(obs.x, task, obs.y))?;
        }
        Ok(())
    }
}

pub fn train_on_sequence(
    kind: TrainerKind,
    config: TrainerConfig,
    seq: &HistoricalSequence,
    n_tasks: usize,
    seed: u64,
) -> Result<Trainer> {
    let mut t = Trainer::new(kind, config, seq.n_states, n_tasks, seed)?;
    t.train_on_sequence(seq)?;
    Ok(t)
}
