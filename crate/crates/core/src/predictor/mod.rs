//! Sequential predictors evaluated by the harness.
//!
//! Stateful predictors consume a historical sequence transition by transition
//! and are then queried once per state. The LLM client instead renders one
//! prompt per query.

mod llm;
pub mod mock;

pub use llm::{parse_state, LlmClient, LlmClientConfig, LlmMode, LOGPROB_FLOOR};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbcl::{Trainer, TrainerConfig, TrainerKind};
use crate::metric::{self, one_hot, Distribution};
use crate::schedule::{HistoricalSequence, Observation};
use crate::task_gen::{ground_truth_row, TaskSpec, TARGET_LABEL};

/// Whether `predict` returns the full distribution or its one-hot argmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputMode {
    Greedy,
    #[default]
    Distribution,
}

pub trait Predictor {
    fn reset(&mut self) -> Result<()>;

    fn observe(&mut self, obs: &Observation<'_>) -> Result<()>;

    /// Next-state distribution for `x`. Must not change observed state.
    fn predict(&self, x: usize, target_label: Option<&str>) -> Result<Distribution>;

    /// Reset, feed the whole sequence, then query every state.
    fn predictions(
        &mut self,
        seq: &HistoricalSequence,
        target: &TaskSpec,
    ) -> Result<Vec<(usize, Distribution)>> {
        self.reset()?;
        for obs in seq.observations() {
            self.observe(&obs)?;
        }
        let label = seq.with_identifiers.then_some(seq.target_label.as_str());
        (0..target.n_states)
            .map(|x| Ok((x, self.predict(x, label)?)))
            .collect()
    }
}

/// Retention of `predictor` after consuming `seq`.
pub fn evaluate_predictor(
    predictor: &mut dyn Predictor,
    seq: &HistoricalSequence,
    target: &TaskSpec,
) -> Result<f64> {
    if seq.n_states != target.n_states {
        return Err(Error::invalid("sequence and target disagree on the state count"));
    }
    let preds = predictor.predictions(seq, target)?;
    metric::retention(&preds, target)
}

fn apply_mode(p: Distribution, mode: OutputMode) -> Result<Distribution> {
    match mode {
        OutputMode::Distribution => Ok(p),
        OutputMode::Greedy => one_hot(p.argmax(), p.len()),
    }
}

/// Laplace-smoothed transition counts with optional exponential decay.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramCounter {
    n_states: usize,
    counts: Vec<f64>,
    pub alpha: f64,
    pub decay: f64,
    pub identifier_aware: bool,
    pub mode: OutputMode,
    /// Label whose transitions an aware counter keeps.
    pub target_label: String,
}

impl BigramCounter {
    pub fn new(n_states: usize) -> Result<Self> {
        if n_states < 2 {
            return Err(Error::invalid("need at least two states"));
        }
        Ok(BigramCounter {
            n_states,
            counts: vec![0.0; n_states * n_states],
            alpha: 1.0,
            decay: 1.0,
            identifier_aware: false,
            mode: OutputMode::Distribution,
            target_label: TARGET_LABEL.to_string(),
        })
    }

    pub fn with_decay(mut self, decay: f64) -> Result<Self> {
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(Error::invalid(format!("decay {decay} outside (0, 1]")));
        }
        self.decay = decay;
        Ok(self)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::invalid("alpha must be positive"));
        }
        self.alpha = alpha;
        Ok(self)
    }

    pub fn aware(mut self, on: bool) -> Self {
        self.identifier_aware = on;
        self
    }

    pub fn with_mode(mut self, mode: OutputMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn count(&self, x: usize, y: usize) -> f64 {
        self.counts[x * self.n_states + y]
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    /// Decay every count, then add one for `x -> y` unless an aware counter
    /// sees a label other than its target.
    pub fn observe_transition(&mut self, x: usize, y: usize, label: Option<&str>) -> Result<()> {
        let n = self.n_states;
        if x >= n || y >= n {
            return Err(Error::invalid(format!("transition {x}->{y} out of range")));
        }
        if self.decay != 1.0 {
            self.counts.iter_mut().for_each(|c| *c *= self.decay);
        }
        let keep = match (self.identifier_aware, label) {
            (true, Some(l)) => l == self.target_label,
            _ => true,
        };
        if keep {
            self.counts[x * n + y] += 1.0;
        }
        Ok(())
    }

    /// Smoothed row `(c[x][y] + alpha) / (sum_y c[x][y] + alpha N)`.
    pub fn row(&self, x: usize) -> Result<Distribution> {
        let n = self.n_states;
        if x >= n {
            return Err(Error::invalid(format!("state {x} out of range")));
        }
        let row = &self.counts[x * n..(x + 1) * n];
        let total: f64 = row.iter().sum::<f64>() + self.alpha * n as f64;
        Distribution::new(row.iter().map(|c| (c + self.alpha) / total).collect())
    }
}

impl Predictor for BigramCounter {
    fn reset(&mut self) -> Result<()> {
        self.counts.iter_mut().for_each(|c| *c = 0.0);
        Ok(())
    }

    fn observe(&mut self, obs: &Observation<'_>) -> Result<()> {
        self.observe_transition(obs.x, obs.y, obs.label)
    }

    fn predict(&self, x: usize, _target_label: Option<&str>) -> Result<Distribution> {
        apply_mode(self.row(x)?, self.mode)
    }

    fn predictions(
        &mut self,
        seq: &HistoricalSequence,
        target: &TaskSpec,
    ) -> Result<Vec<(usize, Distribution)>> {
        if seq.n_states != self.n_states {
            return Err(Error::invalid("sequence state count differs from the counter's"));
        }
        self.target_label = seq.target_label.clone();
        self.reset()?;
        for obs in seq.observations() {
            self.observe(&obs)?;
        }
        (0..target.n_states).map(|x| Ok((x, self.predict(x, None)?))).collect()
    }
}

/// Returns the target's true rows; an upper bound for every other predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct OraclePredictor {
    target: TaskSpec,
}

impl OraclePredictor {
    pub fn new(target: TaskSpec) -> Self {
        OraclePredictor { target }
    }
}

impl Predictor for OraclePredictor {
    fn reset(&mut self) -> Result<()> {
        Ok(())
    }

    fn observe(&mut self, _obs: &Observation<'_>) -> Result<()> {
        Ok(())
    }

    fn predict(&self, x: usize, _target_label: Option<&str>) -> Result<Distribution> {
        Distribution::new(ground_truth_row(&self.target, x)?)
    }

    fn predictions(
        &mut self,
        _seq: &HistoricalSequence,
        target: &TaskSpec,
    ) -> Result<Vec<(usize, Distribution)>> {
        self.target = target.clone();
        (0..target.n_states).map(|x| Ok((x, self.predict(x, None)?))).collect()
    }
}

/// A gradient-based learner behind the predictor interface.
///
/// Queries use the target's task id when the sequence carries identifiers and
/// the shared id 0 otherwise, matching how training inputs were built.
#[derive(Debug, Clone)]
pub struct GbclPredictor {
    trainer: Trainer,
    query_task: usize,
    pub mode: OutputMode,
}

impl GbclPredictor {
    pub fn new(
        kind: TrainerKind,
        config: TrainerConfig,
        n_states: usize,
        n_tasks: usize,
        seed: u64,
    ) -> Result<Self> {
        Ok(GbclPredictor {
            trainer: Trainer::new(kind, config, n_states, n_tasks, seed)?,
            query_task: 0,
            mode: OutputMode::Distribution,
        })
    }

    pub fn trainer(&self) -> &Trainer {
        &self.trainer
    }
}

impl Predictor for GbclPredictor {
    fn reset(&mut self) -> Result<()> {
        self.trainer.reset()
    }

    fn observe(&mut self, obs: &Observation<'_>) -> Result<()> {
        let task = if obs.label.is_some() { obs.task_id } else { 0 };
        self.trainer.observe(crate::gbcl::Sample::new(obs.x, task, obs.y))
    }

    fn predict(&self, x: usize, _target_label: Option<&str>) -> Result<Distribution> {
        apply_mode(self.trainer.params.forward(x, self.query_task)?, self.mode)
    }

    fn predictions(
        &mut self,
        seq: &HistoricalSequence,
        target: &TaskSpec,
    ) -> Result<Vec<(usize, Distribution)>> {
        self.trainer.train_on_sequence(seq)?;
        self.query_task = if seq.with_identifiers { seq.target_task_id } else { 0 };
        (0..target.n_states).map(|x| Ok((x, self.predict(x, None)?))).collect()
    }
}
