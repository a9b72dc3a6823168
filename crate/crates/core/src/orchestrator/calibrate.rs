use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cancel::CancelToken;
use crate::config::RunConfig;
use crate::error::Result;
use crate::lattice;
use crate::nnet::{self, Batch, ModelState};
use crate::seed;

/// Target ratio of one simulation shard to the first AL training phase,
/// from the measured serial timings of the full-scale experiment
/// (99 090 ms against 119 806 ms).
pub const SIM_TO_TRAIN_RATIO: f64 = 99_090.0 / 119_806.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Measured wall time of one training epoch on 2·|D_T0| samples.
    pub epoch_ms: f64,
    /// Predicted duration of T1 in the serial workflow.
    pub train_ms: f64,
    /// Measured simulation time per sample without artificial cost.
    pub sim_ms_per_sample: f64,
    /// Per-sample cost giving `ratio · train_ms` for one |D_T0| shard.
    pub artificial_cost_ms: f64,
}

/// Chooses `sim.artificial_cost_ms` so that simulating one |D_T0| shard on
/// the simulation pool takes `ratio` times as long as the serial T1 phase.
pub fn calibrate_artificial_cost(cfg: &RunConfig, ratio: f64) -> Result<Calibration> {
    cfg.validate()?;
    let w = &cfg.workflow;
    let n0 = w.initial_train_size();
    let space = cfg.space();
    let dims = cfg.train.dims(cfg.sim.grid.n_bins);

    let probe = lattice::sample_uniform(&space, [8, 8, 8], 0)?;
    let mut sim = cfg.sim.clone();
    sim.artificial_cost_ms = 0.0;
    sim.pool_size = 1;
    let start = Instant::now();
    let labeled = super::simulate_labeled(&probe, &space, &sim, dims.input, 0, &CancelToken::new())?;
    let sim_ms_per_sample = start.elapsed().as_secs_f64() * 1000.0 / probe.len() as f64;

    // training cost does not depend on the input values, so resampled rows
    // of the probe stand in for the phase-1 training set
    let mut rng = seed::rng(1);
    let idx: Vec<usize> = (0..2 * n0).map(|_| rng.random_range(0..labeled.len())).collect();
    let train_set: Batch = labeled.select(&idx);
    let val_idx: Vec<usize> = (0..w.val_size()).map(|_| rng.random_range(0..labeled.len())).collect();
    let val_set = labeled.select(&val_idx);
    let model = ModelState::new(dims, 0)?;
    let epochs = 2;
    let start = Instant::now();
    nnet::train(&model, &train_set, &val_set, &cfg.train, epochs)?;
    let epoch_ms = start.elapsed().as_secs_f64() * 1000.0 / epochs as f64;

    let train_ms = epoch_ms * cfg.train.epochs_for(1, 2 * n0, n0) as f64;
    let pool = cfg.sim.pool_size as f64;
    let per_sample = ratio * train_ms * pool / n0 as f64;
    Ok(Calibration {
        epoch_ms,
        train_ms,
        sim_ms_per_sample,
        artificial_cost_ms: (per_sample - sim_ms_per_sample).max(0.0),
    })
}
