//! Active-learning training pipeline for structure-finding models on
//! simulated neutron time-of-flight diffraction profiles.
//!
//! The crate is organised bottom-up:
//!
//! * [`lattice`]: symmetry classes, parameter spaces, d-spacings and sampling.
//! * [`simulator`]: the synthetic forward model from cell parameters to Bragg
//!   profiles, plus batch simulation over a worker pool.
//! * [`nnet`]: the multitask network (classifier, regressor, log-variance head),
//!   its heteroscedastic loss, analytic gradients and the training loop.
//! * [`alpolicy`]: the uncertainty-weighted Gaussian-mixture sampling density
//!   and its exact sampler.
//! * [`orchestrator`]: baseline, serial and streaming workflows with an event
//!   log and run reports.
//! * [`config`]: the run configuration file, presets and overrides.

pub mod alpolicy;
pub mod cancel;
pub mod config;
pub mod dataset;
pub mod error;
pub mod lattice;
pub mod nnet;
pub mod orchestrator;
pub mod simulator;

mod seed;

pub use cancel::CancelToken;
pub use alpolicy::{AlDensity, Prior, StudySet};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use lattice::{CellParams, ParamBatch, ParamSpace, SymmetryClass};
pub use nnet::{LabeledSample, ModelState, TrainConfig};
pub use orchestrator::{RunReport, WorkflowMode};
pub use simulator::{BraggProfile, SimConfig, TofGrid};
pub use seed::derive_seed;
