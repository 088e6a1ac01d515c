//! Group-relative policy optimization with self-verification.
//!
//! A small autoregressive policy learns modular arithmetic from verifiable
//! rewards. The same parameters are trained to answer queries and to judge
//! candidate answers, under several schedules that mix the two tasks.

pub mod acceptance;
pub mod cli;
pub mod config;
pub mod error;
pub mod evaluator;
pub mod grpo;
pub mod pipeline;
pub mod policy;
pub mod rng;
pub mod scheduler;
pub mod task_env;
pub mod warmstart;

pub use config::{Regime, TrainConfig};
pub use error::{Error, Result};
pub use policy::{DecodeConfig, PolicyParams, PolicyShape};
pub use scheduler::{Checkpoint, Phase, StepRecord, TrainReport, Trainer};
pub use task_env::{Query, Task, Token, Vocabulary};
