//! Toolkit for finding and manipulating temporal-difference learning signals in
//! high-dimensional activation data.
//!
//! The crate is organised along the pipeline it supports:
//!
//! - [`envs`]: deterministic task environments (two-step task, grid world,
//!   community graph) that emit trajectories.
//! - [`agents`]: reference learners producing ground-truth signal traces (TD
//!   errors, Q-values, successor representation, transition model, surprise).
//! - [`behavior_fit`]: maximum-likelihood fitting of behavioral models to
//!   action sequences.
//! - [`sae`]: sparse autoencoders with input scaling and an Adam trainer.
//! - [`analysis`]: correlation protocols, smoothing, CKA, SMACOF MDS and
//!   linear decoding.
//! - [`interventions`]: lesion/clamp edits in latent space and propagation
//!   through representation sources.
//! - [`synth`]: planted-feature activation generator and synthetic block stack.
//! - [`store`]: binary activation containers, JSON-lines trajectory logs and
//!   CSV reports.

pub mod agents;
pub mod analysis;
pub mod behavior_fit;
pub mod envs;
pub mod interventions;
pub mod rng;
pub mod sae;
pub mod store;
pub mod synth;

pub use agents::{QTable, SignalTrace, SrMatrix, TransitionModel, Window};
pub use analysis::{CorrelationReport, EmbeddingResult};
pub use behavior_fit::{FitResult, ModelKind};
pub use envs::{CommunityGraph, Environment, GridWorldEnv, TwoStepEnv};
pub use interventions::{InterventionPlan, RepresentationSource};
pub use sae::{SaeModel, SaeTrainConfig, ScalingTransform};
pub use store::{ActivationHeader, ActivationMatrix, ReportTable, StepRecord, TaskKind, TrajectoryLog};
pub use synth::{PlantSpec, SyntheticStack};
