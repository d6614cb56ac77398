//! Retention benchmark for sequential learners on random Markov-chain tasks.
//!
//! The crate generates tasks ([`task_gen`]), arranges them into practice
//! schedules ([`schedule`]), scores learners with a normalized
//! Bhattacharyya retention metric ([`metric`]), trains small gradient-based
//! continual learners ([`gbcl`]), wraps in-context predictors including a
//! remote chat-completions client ([`predictor`]), fits ACT-R retention
//! curves and human-similarity scores ([`actr`]), and orchestrates whole
//! experiments ([`runner`]).

// negated comparisons deliberately reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actr;
pub mod error;
pub mod gbcl;
pub mod metric;
pub mod predictor;
pub mod rng;
pub mod runner;
pub mod schedule;
pub mod task_gen;

pub use error::{Error, Result};
