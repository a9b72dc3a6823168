//! Shared fixtures for the benchmarks.

use alstream_core::lattice::{sample_uniform, GridCounts};
use alstream_core::nnet::{Batch, Dims, LabeledSample};
use alstream_core::{ParamBatch, ParamSpace, Result, SimConfig};

pub fn noiseless() -> SimConfig {
    SimConfig {
        noise_std: 0.0,
        pool_size: 1,
        ..SimConfig::default()
    }
}

pub fn params(per_class: usize) -> ParamBatch {
    sample_uniform(&ParamSpace::e1(), [per_class; 3], 7).expect("valid space")
}

/// A labelled batch of `n` random inputs of width `dims.input`.
pub fn random_batch(dims: Dims, n: usize) -> Result<Batch> {
    let space = ParamSpace::e1();
    let cells = sample_uniform(&space, [n.div_ceil(3); 3], 11)?;
    let samples: Vec<LabeledSample> = cells
        .iter()
        .take(n)
        .enumerate()
        .map(|(i, c)| {
            let input = (0..dims.input).map(|j| ((i * 31 + j * 17) % 97) as f64 / 97.0).collect();
            LabeledSample::new(c, &space, input)
        })
        .collect();
    Batch::from_samples(&samples)
}

pub fn study_counts() -> GridCounts {
    GridCounts::for_total(1350)
}
