//! Synthetic forward model from cell parameters to time-of-flight Bragg
//! profiles.
//!
//! Peaks sit at `t = difc · d(hkl)` for every reflection whose position falls
//! on the grid. Each is a Gaussian of width `w0 + w1·t` and amplitude `d²`;
//! coincident reflections accumulate. Profiles are max-normalised, then
//! optionally perturbed by clamped Gaussian noise.

use std::time::{Duration, Instant};

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cancel::CancelToken;
use crate::error::{Error, Result};
use crate::lattice::{self, CellParams, ParamSpace};
use crate::seed;

/// Logarithmic time-of-flight grid: bin `i` is centred at `t0 · exp(i · delta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TofGrid {
    /// First bin centre (µs).
    pub t0: f64,
    /// Logarithmic step.
    pub delta: f64,
    pub n_bins: usize,
}

impl Default for TofGrid {
    fn default() -> Self {
        TofGrid {
            t0: 1360.0,
            delta: 0.0009381,
            n_bins: 2807,
        }
    }
}

impl TofGrid {
    pub fn center(&self, i: usize) -> f64 {
        self.t0 * (i as f64 * self.delta).exp()
    }

    pub fn t_last(&self) -> f64 {
        self.center(self.n_bins - 1)
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_bins).map(|i| self.center(i)).collect()
    }

    /// Fractional bin coordinate of `t`.
    pub fn position(&self, t: f64) -> f64 {
        (t / self.t0).ln() / self.delta
    }

    /// Nearest bin index of `t`, if it lies on the grid.
    pub fn bin_of(&self, t: f64) -> Option<usize> {
        let p = self.position(t).round();
        (p >= 0.0 && p < self.n_bins as f64).then_some(p as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t0 > 0.0 && self.delta > 0.0 && self.n_bins >= 2) || !self.t0.is_finite() {
            return Err(Error::Config(format!("invalid time-of-flight grid {self:?}")));
        }
        Ok(())
    }
}

/// Forward-model and batch-execution settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// ToF per Å of d-spacing (µs/Å).
    pub difc: f64,
    /// Constant part of the peak width (µs).
    pub w0: f64,
    /// Width growth per µs of time of flight.
    pub w1: f64,
    /// Miller indices are enumerated over `[-hkl_bound, hkl_bound]³`.
    pub hkl_bound: u32,
    /// Standard deviation of additive noise, relative to the profile maximum.
    pub noise_std: f64,
    /// Extra blocking time per sample inside batch simulation (ms). Models an
    /// external simulator's latency; it does not occupy a CPU.
    pub artificial_cost_ms: f64,
    /// Concurrent workers used by batch simulation.
    #[serde(rename = "sim_pool_size")]
    pub pool_size: usize,
    pub grid: TofGrid,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            difc: 5000.0,
            w0: 2.0,
            w1: 0.003,
            hkl_bound: 5,
            noise_std: 0.01,
            artificial_cost_ms: 0.0,
            pool_size: 4,
            grid: TofGrid::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let bad = |m: &str| Err(Error::Config(format!("sim: {m}")));
        if !(self.difc > 0.0 && self.difc.is_finite()) {
            return bad("difc must be positive");
        }
        if !(self.w0 >= 0.0 && self.w1 >= 0.0) || (self.w0 == 0.0 && self.w1 == 0.0) {
            return bad("peak widths need w0 >= 0, w1 >= 0, not both zero");
        }
        if self.hkl_bound == 0 {
            return bad("hkl_bound must be at least 1");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be >= 0");
        }
        if !(self.artificial_cost_ms >= 0.0 && self.artificial_cost_ms.is_finite()) {
            return bad("artificial_cost_ms must be >= 0");
        }
        if self.pool_size == 0 {
            return bad("sim_pool_size must be at least 1");
        }
        Ok(())
    }

    fn peak_sigma(&self, t: f64) -> f64 {
        self.w0 + self.w1 * t
    }
}

/// A simulated diffraction pattern on a [`TofGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct BraggProfile {
    pub grid: TofGrid,
    pub intensity: Vec<f64>,
}

impl BraggProfile {
    /// Mean-pools the intensity into `out_len` contiguous chunks; chunk `i`
    /// covers bins `[⌊i·n/out_len⌋, ⌊(i+1)·n/out_len⌋)`.
    pub fn pooled(&self, out_len: usize) -> Vec<f64> {
        mean_pool(&self.intensity, out_len)
    }
}

pub fn mean_pool(values: &[f64], out_len: usize) -> Vec<f64> {
    let n = values.len();
    if out_len == 0 || out_len >= n {
        return values.to_vec();
    }
    (0..out_len)
        .map(|i| {
            let lo = i * n / out_len;
            let hi = (i + 1) * n / out_len;
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// A reflection after merging symmetry-equivalent indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub t: f64,
    pub d: f64,
    pub amplitude: f64,
}

/// Reflections of `cell` that land on the grid, sorted by time of flight,
/// with coincident positions (within 1e-9 µs) merged.
pub fn peak_list(cell: &CellParams, cfg: &SimConfig) -> Result<Vec<Peak>> {
    cell.validate()?;
    let gstar = cell.reciprocal_metric_tensor();
    let b = cfg.hkl_bound as i32;
    let (t_min, t_max) = (cfg.grid.t0, cfg.grid.t_last());
    let mut raw = Vec::new();
    for h in -b..=b {
        for k in -b..=b {
            for l in -b..=b {
                if h == 0 && k == 0 && l == 0 {
                    continue;
                }
                let d = lattice::d_spacing_with(&gstar, [h, k, l]);
                let t = cfg.difc * d;
                if t >= t_min && t <= t_max {
                    raw.push(Peak { t, d, amplitude: d * d });
                }
            }
        }
    }
    raw.sort_by(|x, y| x.t.total_cmp(&y.t));
    let mut merged: Vec<Peak> = Vec::with_capacity(raw.len() / 4);
    for p in raw {
        match merged.last_mut() {
            Some(last) if (p.t - last.t).abs() <= 1e-9 => last.amplitude += p.amplitude,
            _ => merged.push(p),
        }
    }
    Ok(merged)
}

/// Simulates one profile. Deterministic for a given `seed`; the seed only
/// matters when `noise_std > 0`.
pub fn simulate_profile(
    cell: &CellParams,
    space: &ParamSpace,
    cfg: &SimConfig,
    seed: u64,
) -> Result<BraggProfile> {
    if !space.contains(cell) {
        return Err(Error::Domain(format!("{cell:?}")));
    }
    let peaks = peak_list(cell, cfg)?;
    if peaks.is_empty() {
        return Err(Error::NoPeaks);
    }
    let grid = cfg.grid;
    let centers = grid.centers();
    let mut intensity = vec![0.0; grid.n_bins];
    for p in &peaks {
        let sigma = cfg.peak_sigma(p.t);
        let lo = grid.position((p.t - 6.0 * sigma).max(grid.t0)).floor().max(0.0) as usize;
        let hi = (grid.position(p.t + 6.0 * sigma).ceil() as usize).min(grid.n_bins - 1);
        for i in lo..=hi {
            let z = (centers[i] - p.t) / sigma;
            intensity[i] += p.amplitude * (-0.5 * z * z).exp();
        }
    }
    let max = intensity.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::NoPeaks);
    }
    intensity.iter_mut().for_each(|v| *v /= max);

    if cfg.noise_std > 0.0 {
        let mut rng = seed::rng(seed);
        let noise = Normal::new(0.0, cfg.noise_std).expect("validated noise_std");
        for v in &mut intensity {
            *v = (*v + noise.sample(&mut rng)).max(0.0);
        }
    }
    Ok(BraggProfile { grid, intensity })
}

/// Noise seed for one sample of a batch. Derived from the cell itself so that
/// a permuted batch yields the permuted results.
pub fn sample_seed(batch_seed: u64, cell: &CellParams) -> u64 {
    seed::derive_seed(
        batch_seed,
        &[
            cell.class.index() as u64,
            cell.a.to_bits(),
            cell.c.to_bits(),
            cell.alpha.to_bits(),
        ],
    )
}

#[derive(Debug, Clone)]
pub struct BatchOutput<T> {
    pub samples: Vec<T>,
    pub wall: Duration,
}

/// Simulates a batch over a pool of `cfg.pool_size` workers.
pub fn simulate_batch(
    batch: &[CellParams],
    space: &ParamSpace,
    cfg: &SimConfig,
    seed: u64,
) -> Result<BatchOutput<(BraggProfile, CellParams)>> {
    simulate_batch_map(batch, space, cfg, seed, |profile, cell| (profile, *cell))
}

/// Like [`simulate_batch`] but maps each profile on the worker that produced
/// it (e.g. pooling), so full-resolution profiles need not be kept.
///
/// Output order equals input order for any pool size. On failure the error of
/// the lowest-index failing sample is returned.
pub fn simulate_batch_map<T, F>(
    batch: &[CellParams],
    space: &ParamSpace,
    cfg: &SimConfig,
    seed: u64,
    map: F,
) -> Result<BatchOutput<T>>
where
    T: Send,
    F: Fn(BraggProfile, &CellParams) -> T + Sync,
{
    simulate_batch_cancellable(batch, space, cfg, seed, &CancelToken::new(), map)
}

/// [`simulate_batch_map`] that stops with [`Error::Cancelled`] once `cancel`
/// is set.
pub fn simulate_batch_cancellable<T, F>(
    batch: &[CellParams],
    space: &ParamSpace,
    cfg: &SimConfig,
    seed: u64,
    cancel: &CancelToken,
    map: F,
) -> Result<BatchOutput<T>>
where
    T: Send,
    F: Fn(BraggProfile, &CellParams) -> T + Sync,
{
    if batch.is_empty() {
        return Err(Error::InvalidArgument("cannot simulate an empty batch".into()));
    }
    cfg.validate()?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.pool_size)
        .thread_name(|i| format!("sim-{i}"))
        .build()
        .map_err(|e| Error::Config(format!("cannot build simulation pool: {e}")))?;
    let cost = Duration::from_secs_f64(cfg.artificial_cost_ms / 1000.0);
    let results: Vec<Result<T>> = pool.install(|| {
        batch
            .par_iter()
            .with_max_len(1)
            .map(|cell| {
                if cancel.is_cancelled() {
                    return Err(Error::Cancelled);
                }
                let profile = simulate_profile(cell, space, cfg, sample_seed(seed, cell))?;
                if !cost.is_zero() {
                    std::thread::sleep(cost);
                }
                Ok(map(profile, cell))
            })
            .collect()
    });
    if cancel.is_cancelled() {
        return Err(Error::Cancelled);
    }
    let samples = results.into_iter().collect::<Result<Vec<T>>>()?;
    Ok(BatchOutput {
        samples,
        wall: start.elapsed(),
    })
}
