use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gbcl::{Eviction, PenaltyStep, TrainerConfig, TrainerKind, DEFAULT_EWC_LAMBDA, DEFAULT_LR};
use crate::predictor::{LlmClientConfig, OutputMode};
use crate::schedule::{ScheduleKind, ScheduleSpec};

pub const DEFAULT_PHI: usize = 100;
pub const DEFAULT_K: usize = 5;
pub const DEFAULT_PHI_I_GRID: [usize; 6] = [10, 50, 100, 200, 400, 600];
pub const DEFAULT_PHI_D_GRID: [usize; 8] = [0, 100, 200, 300, 400, 500, 600, 700];
/// Distractor lengths tabulated for the gradient-based baselines.
pub const TABULATED_PHI_D: [usize; 5] = [0, 100, 200, 400, 600];
pub const MAX_PHI_D: usize = 700;
pub const DEFAULT_REPEATS: usize = 16;
pub const DEFAULT_DECAY: f64 = 0.995;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Sgd,
    Er,
    Ewc,
    Bigram,
    BigramAware,
    BigramDecay,
    Llm,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Sgd,
        Method::Er,
        Method::Ewc,
        Method::Bigram,
        Method::BigramAware,
        Method::BigramDecay,
        Method::Llm,
        Method::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sgd => "sgd",
            Method::Er => "er",
            Method::Ewc => "ewc",
            Method::Bigram => "bigram",
            Method::BigramAware => "bigram-aware",
            Method::BigramDecay => "bigram-decay",
            Method::Llm => "llm",
            Method::Oracle => "oracle",
        }
    }

    pub fn trainer_kind(self) -> Option<TrainerKind> {
        match self {
            Method::Sgd => Some(TrainerKind::Sgd),
            Method::Er => Some(TrainerKind::Er),
            Method::Ewc => Some(TrainerKind::Ewc),
            _ => None,
        }
    }

    /// Everything except the remote client runs locally and deterministically.
    pub fn is_local(self) -> bool {
        self != Method::Llm
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Whether interference tasks are drawn afresh for every repeat or shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterferencePolicy {
    #[default]
    PerSeed,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub n_states: usize,
    pub schedule: ScheduleKind,
    pub phi: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub phi_i_grid: Vec<usize>,
    pub phi_d_grid: Vec<usize>,
    pub with_identifiers: bool,
    pub trailing_interference: bool,
    pub literal_practice_times: bool,
    pub interference: InterferencePolicy,
    pub n_interference_tasks: usize,
    pub repeats: usize,
    pub seed: u64,
    pub out_dir: String,
    /// GBCL learning rate.
    pub lr: f64,
    pub ewc_lambda: f64,
    pub replay_capacity: usize,
    pub replay_ratio: f64,
    pub replay_batch: usize,
    pub eviction: Eviction,
    pub penalty_step: PenaltyStep,
    /// Bigram decay factor; `None` means 1 for the plain counters and
    /// `DEFAULT_DECAY` for `bigram-decay`.
    pub rho_decay: Option<f64>,
    pub alpha: f64,
    pub output_mode: OutputMode,
    pub llm: LlmClientConfig,
    pub jobs: usize,
    pub allow_partial: bool,
    /// Clamp summary means to `[0, 1]`; raw rows are never clamped.
    pub clamp_summary: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let trainer = TrainerConfig::default();
        ExperimentConfig {
            method: Method::BigramAware,
            n_states: 4,
            schedule: ScheduleKind::Dp,
            phi: DEFAULT_PHI,
            k: DEFAULT_K,
            phi_i_grid: DEFAULT_PHI_I_GRID.to_vec(),
            phi_d_grid: DEFAULT_PHI_D_GRID.to_vec(),
            with_identifiers: true,
            trailing_interference: false,
            literal_practice_times: false,
            interference: InterferencePolicy::PerSeed,
            n_interference_tasks: 1,
            repeats: DEFAULT_REPEATS,
            seed: 0,
            out_dir: "results".into(),
            lr: DEFAULT_LR,
            ewc_lambda: DEFAULT_EWC_LAMBDA,
            replay_capacity: trainer.replay_capacity,
            replay_ratio: trainer.replay_ratio,
            replay_batch: trainer.replay_batch,
            eviction: trainer.eviction,
            penalty_step: trainer.penalty_step,
            rho_decay: None,
            alpha: 1.0,
            output_mode: OutputMode::Distribution,
            llm: LlmClientConfig::default(),
            jobs: 1,
            allow_partial: false,
            clamp_summary: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be >= 1".into()));
        }
        if self.n_states < 2 {
            return Err(Error::Config("n_states must be >= 2".into()));
        }
        if self.phi_i_grid.is_empty() || self.phi_d_grid.is_empty() {
            return Err(Error::Config("grids must be non-empty".into()));
        }
        if let Some(v) = self.phi_d_grid.iter().find(|v| **v > MAX_PHI_D) {
            return Err(Error::Config(format!(
                "phi_d {v} outside the supported range [0, {MAX_PHI_D}]"
            )));
        }
        if self.n_interference_tasks == 0 {
            return Err(Error::Config("at least one interference task is required".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        if let Some(r) = self.rho_decay {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::Config(format!("rho_decay {r} outside (0, 1]")));
            }
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config("alpha must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.ewc_lambda >= 0.0) {
            return Err(Error::Config("lr must be positive and ewc_lambda non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.replay_ratio) {
            return Err(Error::Config("replay_ratio outside [0, 1]".into()));
        }
        for phi_i in self.effective_phi_i_grid() {
            self.schedule_spec(phi_i).validate()?;
        }
        Ok(())
    }

    /// `phi_i` values that actually change the schedule: the configured grid
    /// for DP, a single 0 otherwise.
    pub fn effective_phi_i_grid(&self) -> Vec<usize> {
        match self.schedule {
            ScheduleKind::Dp => self.phi_i_grid.clone(),
            _ => vec![0],
        }
    }

    pub fn schedule_spec(&self, phi_i: usize) -> ScheduleSpec {
        let mut s = ScheduleSpec::new(self.schedule, self.phi, self.k, phi_i)
            .with_identifiers(self.with_identifiers)
            .with_trailing_interference(self.trailing_interference);
        s.literal_practice_times = self.literal_practice_times;
        s
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        TrainerConfig {
            lr: self.lr,
            replay_capacity: self.replay_capacity,
            replay_ratio: self.replay_ratio,
            replay_batch: self.replay_batch,
            eviction: self.eviction,
            ewc_lambda: self.ewc_lambda,
            penalty_step: self.penalty_step,
        }
    }

    pub fn decay(&self) -> f64 {
        match (self.rho_decay, self.method) {
            (Some(r), _) => r,
            (None, Method::BigramDecay) => DEFAULT_DECAY,
            (None, _) => 1.0,
        }
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let canonical = serde_json::to_vec(&serde_json::to_value(self)?)?;
        Ok(hex::encode(Sha256::digest(&canonical)))
    }
}
