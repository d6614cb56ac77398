//! Historical sequences under single, massed and distributed practice.
//!
//! A sequence is an ordered list of segments, each one trajectory from one
//! task. Practice times index the transition slots (1-based) occupied by the
//! target task, which is what the ACT-R activation consumes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::task_gen::{sample_segment, TaskSpec, Trajectory};

/// Version tag of the prompt layout produced by [`render_prompt`].
pub const PROMPT_TEMPLATE_VERSION: u32 = 1;
pub const QUERY_ARROW: &str = "→";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Sp,
    Mp,
    Dp,
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::Sp => "sp",
            ScheduleKind::Mp => "mp",
            ScheduleKind::Dp => "dp",
        })
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sp" => Ok(ScheduleKind::Sp),
            "mp" => Ok(ScheduleKind::Mp),
            "dp" => Ok(ScheduleKind::Dp),
            other => Err(Error::invalid(format!("unknown schedule kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub phi: usize,
    pub k: usize,
    /// Interference interval; only read for DP.
    #[serde(default)]
    pub phi_i: usize,
    #[serde(default = "default_true")]
    pub with_identifiers: bool,
    /// End every DP repetition with an interference block, including the last.
    #[serde(default)]
    pub trailing_interference: bool,
    /// Use `t_i = i + floor(i / phi) * phi_i` for DP practice times instead of
    /// the block-aligned `floor((i - 1) / phi)`.
    #[serde(default)]
    pub literal_practice_times: bool,
}

fn default_true() -> bool {
    true
}

impl ScheduleSpec {
    pub fn sp(phi: usize) -> Self {
        Self::new(ScheduleKind::Sp, phi, 1, 0)
    }

    pub fn mp(phi: usize, k: usize) -> Self {
        Self::new(ScheduleKind::Mp, phi, k, 0)
    }

    pub fn dp(phi: usize, k: usize, phi_i: usize) -> Self {
        Self::new(ScheduleKind::Dp, phi, k, phi_i)
    }

    pub fn new(kind: ScheduleKind, phi: usize, k: usize, phi_i: usize) -> Self {
        ScheduleSpec {
            kind,
            phi,
            k,
            phi_i,
            with_identifiers: true,
            trailing_interference: false,
            literal_practice_times: false,
        }
    }

    pub fn with_identifiers(mut self, on: bool) -> Self {
        self.with_identifiers = on;
        self
    }

    pub fn with_trailing_interference(mut self, on: bool) -> Self {
        self.trailing_interference = on;
        self
    }

    /// Number of target transitions the schedule presents.
    pub fn target_exposure(&self) -> usize {
        match self.kind {
            ScheduleKind::Sp => self.phi,
            ScheduleKind::Mp | ScheduleKind::Dp => self.k * self.phi,
        }
    }

    /// Interference interval as seen by the schedule (zero unless DP).
    pub fn effective_phi_i(&self) -> usize {
        match self.kind {
            ScheduleKind::Dp => self.phi_i,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.phi == 0 {
            return Err(Error::Config("phi must be >= 1".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("K must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Target,
    Interference,
    Distractor,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Target => "target",
            Role::Interference => "interference",
            Role::Distractor => "distractor",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub role: Role,
    pub task_id: usize,
    pub label: String,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalSequence {
    pub segments: Vec<Segment>,
    pub with_identifiers: bool,
    pub target_task_id: usize,
    pub target_label: String,
    pub n_states: usize,
}

/// One observed transition together with the segment it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation<'a> {
    pub segment: usize,
    pub role: Role,
    pub task_id: usize,
    /// Segment label as visible to the learner; `None` without identifiers.
    pub label: Option<&'a str>,
    pub x: usize,
    pub y: usize,
}

/// A contiguous run of transition slots, 1-based and inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub role: Role,
    pub start: usize,
    pub end: usize,
}

impl HistoricalSequence {
    pub fn empty(target: &TaskSpec, with_identifiers: bool) -> Self {
        HistoricalSequence {
            segments: Vec::new(),
            with_identifiers,
            target_task_id: target.task_id,
            target_label: target.label.clone(),
            n_states: target.n_states,
        }
    }

    pub fn observations(&self) -> impl Iterator<Item = Observation<'_>> + '_ {
        self.segments.iter().enumerate().flat_map(move |(i, seg)| {
            let label = self.with_identifiers.then_some(seg.label.as_str());
            seg.trajectory.transitions().map(move |(x, y)| Observation {
                segment: i,
                role: seg.role,
                task_id: seg.task_id,
                label,
                x,
                y,
            })
        })
    }

    pub fn blocks(&self) -> Vec<Block> {
        let mut start = 1;
        self.segments
            .iter()
            .map(|seg| {
                let len = seg.trajectory.len();
                let b = Block {
                    role: seg.role,
                    start,
                    end: start + len - 1,
                };
                start += len;
                b
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Assemble the sequence for `spec`, followed by a distractor block of
/// `phi_d` transitions drawn from the first interference task.
///
/// Every segment draws from its own sub-stream of `rng_seed`, keyed by role
/// and position, so the target blocks do not change with `phi_i` or `phi_d`.
pub fn build_sequence(
    spec: &ScheduleSpec,
    target: &TaskSpec,
    interference: &[TaskSpec],
    phi_d: usize,
    rng_seed: u64,
) -> Result<HistoricalSequence> {
    spec.validate()?;
    let needs_interference =
        (spec.kind == ScheduleKind::Dp && spec.phi_i > 0) || phi_d > 0;
    if needs_interference && interference.is_empty() {
        return Err(Error::Config(
            "an interference task is required for DP or a non-zero distractor".into(),
        ));
    }
    if let Some(t) = interference.iter().find(|t| t.task_id == target.task_id) {
        return Err(Error::Config(format!(
            "interference task id {} collides with the target",
            t.task_id
        )));
    }
    if let Some(t) = interference.iter().find(|t| t.n_states != target.n_states) {
        return Err(Error::Config(format!(
            "interference task {} has {} states, target has {}",
            t.task_id, t.n_states, target.n_states
        )));
    }

    let mut seq = HistoricalSequence::empty(target, spec.with_identifiers);
    let mut push = |role: Role, task: &TaskSpec, len: usize, index: usize| -> Result<()> {
        if len == 0 {
            return Ok(());
        }
        let seed = rng::derive_seed(rng_seed, &[rng::tag("segment"), role as u64, index as u64]);
        seq.segments.push(Segment {
            role,
            task_id: task.task_id,
            label: task.label.clone(),
            trajectory: sample_segment(task, len, seed)?,
        });
        Ok(())
    };

    match spec.kind {
        ScheduleKind::Sp => push(Role::Target, target, spec.phi, 0)?,
        ScheduleKind::Mp => push(Role::Target, target, spec.k * spec.phi, 0)?,
        ScheduleKind::Dp => {
            for rep in 0..spec.k {
                push(Role::Target, target, spec.phi, rep)?;
                let last = rep + 1 == spec.k;
                if !last || spec.trailing_interference {
                    let task = &interference[rep % interference.len()];
                    push(Role::Interference, task, spec.phi_i, rep)?;
                }
            }
        }
    }
    if phi_d > 0 {
        push(Role::Distractor, &interference[0], phi_d, 0)?;
    }
    Ok(seq)
}

/// Strictly increasing 1-based slots at which the target was practiced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PracticeSchedule {
    pub times: Vec<u64>,
}

impl PracticeSchedule {
    pub fn new(times: Vec<u64>) -> Result<Self> {
        if times.first() == Some(&0) {
            return Err(Error::invalid("practice times are 1-based"));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("practice times must be strictly increasing"));
        }
        Ok(PracticeSchedule { times })
    }

    pub fn last(&self) -> Option<u64> {
        self.times.last().copied()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

pub fn practice_times(spec: &ScheduleSpec) -> PracticeSchedule {
    let n = spec.target_exposure() as u64;
    let phi = spec.phi.max(1) as u64;
    let phi_i = spec.effective_phi_i() as u64;
    let times = (1..=n)
        .map(|i| match spec.kind {
            ScheduleKind::Dp if spec.literal_practice_times => i + (i / phi) * phi_i,
            ScheduleKind::Dp => i + ((i - 1) / phi) * phi_i,
            _ => i,
        })
        .collect();
    PracticeSchedule { times }
}

pub fn context_length(seq: &HistoricalSequence) -> usize {
    seq.segments.iter().map(|s| s.trajectory.len()).sum()
}

fn join_states(states: &[usize]) -> String {
    states
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Render the prompt text for one query.
///
/// With identifiers each segment is a `[LABEL]` line followed by its states;
/// the final line is `[TARGET_LABEL] <query> →`. Without identifiers the label
/// lines and the query prefix are dropped.
pub fn render_prompt(seq: &HistoricalSequence, query_state: usize) -> Result<String> {
    if query_state >= seq.n_states {
        return Err(Error::invalid(format!(
            "query state {query_state} out of range for {} states",
            seq.n_states
        )));
    }
    let mut lines = Vec::with_capacity(2 * seq.segments.len() + 1);
    for seg in &seq.segments {
        if seq.with_identifiers {
            lines.push(format!("[{}]", seg.label));
        }
        lines.push(join_states(&seg.trajectory.states));
    }
    if seq.with_identifiers {
        lines.push(format!("[{}] {query_state} {QUERY_ARROW}", seq.target_label));
    } else {
        lines.push(format!("{query_state} {QUERY_ARROW}"));
    }
    Ok(lines.join("\n"))
}

/// Structure recovered from a rendered prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrompt {
    pub segments: Vec<(Option<String>, Vec<usize>)>,
    pub query_label: Option<String>,
    pub query: usize,
}

fn parse_states(line: &str) -> Result<Vec<usize>> {
    line.split(' ')
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::Parse { raw: line.to_string() })
        })
        .collect()
}

fn strip_label(line: &str) -> Option<(&str, &str)> {
    let rest = line.strip_prefix('[')?;
    let close = rest.find(']')?;
    Some((&rest[..close], &rest[close + 1..]))
}

/// Inverse of [`render_prompt`].
pub fn parse_prompt(text: &str) -> Result<ParsedPrompt> {
    let mut lines: Vec<&str> = text.split('\n').collect();
    let query_line = lines
        .pop()
        .ok_or_else(|| Error::Parse { raw: text.to_string() })?;
    let body = query_line
        .strip_suffix(QUERY_ARROW)
        .and_then(|l| l.strip_suffix(' '))
        .ok_or_else(|| Error::Parse { raw: query_line.to_string() })?;
    let (query_label, query_str) = match strip_label(body) {
        Some((label, rest)) => (
            Some(label.to_string()),
            rest.strip_prefix(' ')
                .ok_or_else(|| Error::Parse { raw: query_line.to_string() })?,
        ),
        None => (None, body),
    };
    let query = query_str
        .parse::<usize>()
        .map_err(|_| Error::Parse { raw: query_line.to_string() })?;

    let mut segments = Vec::new();
    let mut pending: Option<String> = None;
    for line in lines {
        match strip_label(line) {
            Some((label, "")) => {
                if pending.is_some() {
                    return Err(Error::Parse { raw: line.to_string() });
                }
                pending = Some(label.to_string());
            }
            _ => segments.push((pending.take(), parse_states(line)?)),
        }
    }
    if pending.is_some() {
        return Err(Error::Parse { raw: text.to_string() });
    }
    Ok(ParsedPrompt {
        segments,
        query_label,
        query,
    })
}
