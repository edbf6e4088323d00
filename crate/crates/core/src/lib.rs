//! Simulation laboratory for federated asynchronous knowledge distillation.
//!
//! The crate is organised bottom-up:
//!
//! * [`data_gen`] builds datasets and non-IID federated partitions, including
//!   the Gaussian importance-sampling covariate-shift generator.
//! * [`shift_theory`] holds the second-order KL approximations for perturbed
//!   distributions and the exact Gaussian KL they are checked against.
//! * [`models`] provides small softmax classifiers with hand-written
//!   gradients for cross-entropy and soft-label distillation losses.
//! * [`fl_engine`] runs the federation rounds, the baselines and the ablations.
//! * [`metrics`] and [`analysis`] turn round histories and trained models into
//!   fairness numbers and right/wrong divergence diagnostics.

pub mod analysis;
pub mod data_gen;
pub mod error;
pub mod fl_engine;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod shift_theory;

pub use nalgebra;

pub use data_gen::{Dataset, GaussianParams, ShiftSpec};
pub use error::{Error, Result};
pub use fl_engine::{AggWeighting, Algorithm, ClientState, FedConfig, RoundHistory};
pub use metrics::{AccuracyProfile, Summary};
pub use models::{Classifier, Gradient, ModelKind};
