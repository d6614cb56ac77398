//! Random discrete Markov-chain tasks.
//!
//! Each row of a transition matrix is an independent draw from the flat
//! Dirichlet distribution, generated from the task's own seed.

use rand::Rng;
use rand_distr::{Distribution as _, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const TARGET_LABEL: &str = "TARGET_TASK";
pub const INTERFERENCE_LABEL: &str = "INTERFERENCE_TASK";

const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: usize,
    pub label: String,
    pub n_states: usize,
    pub seed: u64,
    pub transition: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: usize,
    pub states: Vec<usize>,
}

impl Trajectory {
    /// Number of transitions, one less than the number of visited states.
    pub fn len(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Consecutive `(x, y)` pairs.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.states.windows(2).map(|w| (w[0], w[1]))
    }
}

/// Generation knobs beyond the seed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GenOptions {
    /// Mixing weight with the uniform row, in `[0, 1)`. Zero keeps the raw
    /// Dirichlet draw.
    pub min_entry_floor: f64,
}

pub fn generate_task(n_states: usize, task_id: usize, label: &str, seed: u64) -> Result<TaskSpec> {
    generate_task_with(n_states, task_id, label, seed, GenOptions::default())
}

pub fn generate_task_with(
    n_states: usize,
    task_id: usize,
    label: &str,
    seed: u64,
    opts: GenOptions,
) -> Result<TaskSpec> {
    if n_states < 2 {
        return Err(Error::invalid(format!("n_states must be >= 2, got {n_states}")));
    }
    if !(0.0..1.0).contains(&opts.min_entry_floor) {
        return Err(Error::invalid("min_entry_floor must lie in [0, 1)"));
    }
    let mut rng = rng::stream(seed);
    let uniform = 1.0 / n_states as f64;
    let transition = (0..n_states)
        .map(|_| {
            let draws: Vec<f64> = (0..n_states).map(|_| Exp1.sample(&mut rng)).collect();
            let total: f64 = draws.iter().sum();
            let mut row: Vec<f64> = draws.iter().map(|g| g / total).collect();
            if opts.min_entry_floor > 0.0 {
                let w = opts.min_entry_floor;
                row.iter_mut().for_each(|p| *p = (1.0 - w) * *p + w * uniform);
            }
            renormalize(&mut row);
            row
        })
        .collect();
    Ok(TaskSpec {
        task_id,
        label: label.to_string(),
        n_states,
        seed,
        transition,
    })
}

fn renormalize(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= total);
}

impl TaskSpec {
    /// Checks shape and row-stochasticity.
    pub fn validate(&self) -> Result<()> {
        if self.n_states < 2 {
            return Err(Error::invalid("n_states must be >= 2"));
        }
        if self.transition.len() != self.n_states {
            return Err(Error::invalid("transition matrix has wrong number of rows"));
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.len() != self.n_states {
                return Err(Error::invalid(format!("row {i} has wrong length")));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::invalid(format!("row {i} has an entry outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::invalid(format!("row {i} sums to {sum}")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let task: TaskSpec = serde_json::from_str(s)?;
        task.validate()?;
        Ok(task)
    }

    /// Identity transition matrix; every state is absorbing.
    pub fn identity(n_states: usize, task_id: usize, label: &str) -> Self {
        let transition = (0..n_states)
            .map(|i| (0..n_states).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        TaskSpec {
            task_id,
            label: label.to_string(),
            n_states,
            seed: 0,
            transition,
        }
    }

    pub fn from_matrix(task_id: usize, label: &str, transition: Vec<Vec<f64>>) -> Result<Self> {
        let task = TaskSpec {
            task_id,
            label: label.to_string(),
            n_states: transition.len(),
            seed: 0,
            transition,
        };
        task.validate()?;
        Ok(task)
    }

    /// Draw the successor of `x`.
    pub fn step<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> usize {
        sample_categorical(&self.transition[x], rng)
    }
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap above the cumulative sum; take the last
    // state with positive mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Sample `length` transitions starting from a uniformly drawn state.
pub fn sample_segment(task: &TaskSpec, length: usize, rng_seed: u64) -> Result<Trajectory> {
    sample_segment_from(task, length, None, rng_seed)
}

/// Like [`sample_segment`], optionally pinning the initial state.
pub fn sample_segment_from(
    task: &TaskSpec,
    length: usize,
    start: Option<usize>,
    rng_seed: u64,
) -> Result<Trajectory> {
    if length == 0 {
        return Err(Error::invalid("segment length must be >= 1"));
    }
    let mut rng = rng::stream(rng_seed);
    let first = match start {
        Some(s) if s >= task.n_states => {
            return Err(Error::invalid(format!("start state {s} out of range")))
        }
        Some(s) => s,
        None => rng.random_range(0..task.n_states),
    };
    let mut states = Vec::with_capacity(length + 1);
    states.push(first);
    let mut x = first;
    for _ in 0..length {
        x = task.step(x, &mut rng);
        states.push(x);
    }
    Ok(Trajectory {
        task_id: task.task_id,
        states,
    })
}

pub fn ground_truth_row(task: &TaskSpec, x: usize) -> Result<Vec<f64>> {
    task.transition
        .get(x)
        .cloned()
        .ok_or_else(|| Error::invalid(format!("state {x} out of range for {} states", task.n_states)))
}
