//! Automatic auxiliary-task selection and mixing-ratio learning for
//! multi-task training.
//!
//! Stage 1 ([`bandit`]) runs a non-stationary Beta-Bernoulli bandit with
//! Thompson sampling over candidate tasks, rewarding a task whenever a round
//! of its mini-batches improves or maintains the primary validation metric.
//! Stage 2 ([`mixing`]) searches the integer mixing ratio of the selected
//! tasks with a Matérn-kernel GP ([`gp`]) and a GP-Hedge portfolio of
//! acquisition functions ([`acquisition`]). [`pipeline`] wires both stages
//! to a [`env::TaskEnvironment`].

pub mod acquisition;
pub mod bandit;
pub mod env;
pub mod error;
pub mod gp;
pub mod log;
pub mod mixing;
pub mod pipeline;
pub mod seed;

pub use acquisition::{Acquisition, HedgeState};
pub use bandit::{BanditConfig, BetaArm, RewardObservation, TaskSelection};
pub use env::{EnvSpec, PlantedBanditEnv, SharedParamMtlEnv, TaskEnvironment};
pub use error::{Error, Result};
pub use gp::{GpModel, KernelParams, Posterior, Smoothness};
pub use log::{RunLog, Stage1Record, Stage2Record};
pub use mixing::{EvaluationRecord, MixingRatio, Stage2Config, Stage2Outcome};
pub use pipeline::{Mode, PipelineConfig, PipelineReport};
