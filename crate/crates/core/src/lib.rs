//! Differentially private SGD and Group DRO on small differentiable models,
//! with per-group evaluation and a sweep runner for measuring how privacy
//! budgets change between-group disparity.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accountant;
pub mod data;
pub mod dp;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod rng;

pub use accountant::{calibrate_sigma, epsilon_for, rdp_of_step, AccountantState};
pub use dp::{clip, dp_sgd_step, private_batch_gradient, NoisyGradient, PrivacySpec};
pub use metrics::{evaluate_groups, group_disparity, DisparityReport, GroupScores, MetricKind};
pub use model::{Dataset, Example, GroupId, Model, ModelFamily, ModelParams, TaskKind};
pub use objectives::{train, train_dro, train_erm, GroupWeights, Objective, TrainConfig, TrainTrace};
pub use rng::RngStream;
