//! Baseline, serial and streaming training workflows.
//!
//! A run simulates the initial training, validation and test sets, trains,
//! and then alternates AL sampling, simulation and warm-started training for
//! the configured number of phases. The streaming workflow splits each
//! intermediate AL batch in two halves and simulates the second half while
//! the model trains on everything simulated before it.

mod calibrate;
mod events;
mod report;

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use ndarray::Axis;

pub use calibrate::{calibrate_artificial_cost, Calibration, SIM_TO_TRAIN_RATIO};
pub use events::{EventLog, GroupRecord, PoolKind, TaskKind, TaskRecord};
pub use report::{aggregate, compare_runs, label, Aggregate, ComparisonReport, MeanStd, PhaseAggregate, PhaseComparison, PhaseReport, RunReport, Sizes, TaskRow};

pub use crate::config::WorkflowMode;

use crate::alpolicy::{self, StudySet};
use crate::cancel::CancelToken;
use crate::config::RunConfig;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::lattice::{self, GridCounts, ParamBatch, ParamSpace};
use crate::nnet::{self, Batch, Dims, LabeledSample, ModelState, TrainConfig};
use crate::seed::derive_seed;
use crate::simulator::{self, SimConfig};

// Seed streams of a run.
const STREAM_INITIAL: u64 = 1;
const STREAM_VAL: u64 = 2;
const STREAM_TEST: u64 = 3;
const STREAM_STUDY: u64 = 4;
const STREAM_AL: u64 = 5;
const STREAM_SHARD: u64 = 6;
const STREAM_FIT: u64 = 7;
const STREAM_INIT: u64 = 8;

/// Runs the workflow selected by `cfg.workflow.mode` with seed `seed`.
/// With `out` set, reports, training histories, checkpoints and AL
/// diagnostics are written there.
pub fn run(cfg: &RunConfig, seed: u64, out: Option<&Path>) -> Result<RunReport> {
    cfg.validate()?;
    let mut wf = Workflow::new(cfg, seed, out)?;
    let phases = match cfg.workflow.mode {
        WorkflowMode::Baseline => wf.baseline()?,
        WorkflowMode::Serial => wf.serial()?,
        WorkflowMode::Streaming => wf.streaming()?,
    };
    let total_ms = wf.log.now_ms();
    let sizes = wf.sizes();
    let Workflow { log, out, .. } = wf;
    let (tasks, groups) = log.into_parts();
    let report = RunReport {
        mode: cfg.workflow.mode,
        seed,
        preset: cfg.space.preset.clone(),
        sizes,
        phases,
        tasks,
        groups,
        total_ms,
    };
    if let Some(dir) = out {
        report.write(&dir)?;
    }
    Ok(report)
}

/// Runs `seeds` one after another. Each seed writes into `out/seed-<n>`.
pub fn run_seeds(cfg: &RunConfig, seeds: &[u64], out: Option<&Path>) -> Vec<(u64, Result<RunReport>)> {
    seeds
        .iter()
        .map(|&s| {
            let dir = out.map(|d| d.join(format!("seed-{s}")));
            (s, run(cfg, s, dir.as_deref()))
        })
        .collect()
}

/// Profiles of `params` pooled for the network, with labels.
pub fn simulate_labeled(
    params: &[lattice::CellParams],
    space: &ParamSpace,
    sim: &SimConfig,
    input_dim: usize,
    seed: u64,
    cancel: &CancelToken,
) -> Result<Batch> {
    let out = simulator::simulate_batch_cancellable(params, space, sim, seed, cancel, |p, cell| {
        LabeledSample::new(cell, space, p.pooled(input_dim))
    })?;
    Batch::from_samples(&out.samples)
}

struct Frozen {
    val: Batch,
    test: Batch,
    study: Option<StudySet>,
}

impl Frozen {
    fn fingerprint(&self) -> String {
        let mut h = DefaultHasher::new();
        let mut feed = |xs: &mut dyn Iterator<Item = f64>| xs.for_each(|v| h.write_u64(v.to_bits()));
        for b in [&self.val, &self.test] {
            feed(&mut b.x.iter().copied());
            feed(&mut b.targets.iter().copied());
        }
        if let Some(s) = &self.study {
            feed(&mut s.inputs.iter().copied());
        }
        format!("{:016x}", h.finish())
    }
}

struct Workflow<'a> {
    cfg: &'a RunConfig,
    seed: u64,
    space: ParamSpace,
    dims: Dims,
    log: EventLog,
    out: Option<PathBuf>,
    train_pool: rayon::ThreadPool,
    frozen: Option<Frozen>,
    shards: Vec<Batch>,
}

impl<'a> Workflow<'a> {
    fn new(cfg: &'a RunConfig, seed: u64, out: Option<&Path>) -> Result<Self> {
        if let Some(dir) = out {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let train_pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workflow.train_pool_size)
            .thread_name(|i| format!("train-{i}"))
            .build()
            .map_err(|e| Error::Config(format!("cannot build training pool: {e}")))?;
        Ok(Workflow {
            cfg,
            seed,
            space: cfg.space(),
            dims: cfg.train.dims(cfg.sim.grid.n_bins),
            log: EventLog::new(),
            out: out.map(Path::to_path_buf),
            train_pool,
            frozen: None,
            shards: Vec::new(),
        })
    }

    fn sizes(&self) -> Sizes {
        let w = &self.cfg.workflow;
        Sizes {
            initial_train: w.initial_train_size(),
            val: w.val_size(),
            test: w.test_size(),
            study: self.frozen.as_ref().and_then(|f| f.study.as_ref()).map_or(0, StudySet::len),
        }
    }

    fn simulate(&self, params: &[lattice::CellParams], seed: u64, cancel: &CancelToken) -> Result<Batch> {
        simulate_labeled(params, &self.space, &self.cfg.sim, self.dims.input, seed, cancel)
    }

    fn uniform(&self, n: usize, stream: u64) -> Result<ParamBatch> {
        lattice::sample_uniform(&self.space, split3(n), derive_seed(self.seed, &[stream]))
    }

    /// S0: initial training set plus the frozen validation and test sets, and
    /// the study sweep when `with_study` is set.
    fn initial_sets(&mut self, train_size: usize, with_study: bool) -> Result<()> {
        let w = &self.cfg.workflow;
        let (val_n, test_n) = (w.val_size(), w.test_size());
        let cancel = CancelToken::new();
        let (train, val, test, study) = self.log.run(TaskKind::Simulate, 0, PoolKind::Sim, || {
            let train = self.uniform(train_size, STREAM_INITIAL)?;
            let val = self.uniform(val_n, STREAM_VAL)?;
            let test = self.uniform(test_n, STREAM_TEST)?;
            Ok((
                self.simulate(&train, derive_seed(self.seed, &[STREAM_INITIAL, 1]), &cancel)?,
                self.simulate(&val, derive_seed(self.seed, &[STREAM_VAL, 1]), &cancel)?,
                self.simulate(&test, derive_seed(self.seed, &[STREAM_TEST, 1]), &cancel)?,
                if with_study { Some(self.simulate_study(&cancel)?) } else { None },
            ))
        })?;
        self.shards.push(train);
        self.frozen = Some(Frozen { val, test, study });
        Ok(())
    }

    fn simulate_study(&self, cancel: &CancelToken) -> Result<StudySet> {
        let counts = GridCounts::for_total(self.cfg.workflow.study_size());
        let sweep = lattice::sweep_grid(&self.space, &counts)?;
        let seed = derive_seed(self.seed, &[STREAM_STUDY]);
        let input = self.dims.input;
        let out = simulator::simulate_batch_cancellable(&sweep.params, &self.space, &self.cfg.sim, seed, cancel, |p, _| {
            p.pooled(input)
        })?;
        let rows: Vec<f64> = out.samples.concat();
        let inputs = ndarray::Array2::from_shape_vec((sweep.params.len(), input), rows)
            .map_err(|e| Error::InvalidArgument(format!("study inputs: {e}")))?;
        StudySet::new(sweep, inputs)
    }

    fn frozen(&self) -> &Frozen {
        self.frozen.as_ref().expect("initial sets simulated")
    }

    fn training_set(&self, upto: usize) -> Result<Batch> {
        let parts: Vec<&Batch> = self.shards[..upto].iter().collect();
        Batch::concat(&parts)
    }

    fn fit_config(&self, phase: usize) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, &[STREAM_FIT, phase as u64]),
            ..self.cfg.train.clone()
        }
    }

    /// Trains `model` on `data` in the training pool and evaluates it.
    fn fit(&self, phase: usize, model: &ModelState, data: &Batch, epochs: usize, cancel: &CancelToken) -> Result<(ModelState, PhaseReport)> {
        let frozen = self.frozen();
        let cfg = self.fit_config(phase);
        self.train_pool.install(|| {
            let outcome = nnet::train_cancellable(model, data, &frozen.val, &cfg, epochs, cancel)?;
            let test = nnet::evaluate(&outcome.best, &frozen.test)?;
            let accuracy = accuracy(&outcome.best, &frozen.test)?;
            if let Some(dir) = &self.out {
                let hist = dir.join(format!("history_phase{phase}.csv"));
                std::fs::write(&hist, outcome.history_csv()).map_err(|e| Error::io(&hist, e))?;
                nnet::write_checkpoint(&outcome.best, &dir.join(format!("model_phase{phase}.bin")))?;
            }
            let mut class_counts = [0; 3];
            data.classes.iter().for_each(|&c| class_counts[c] += 1);
            let report = PhaseReport {
                phase,
                train_size: data.len(),
                class_counts,
                epochs,
                best_epoch: outcome.best_epoch,
                val_total: outcome.history[outcome.best_epoch].val_total,
                test,
                test_accuracy: accuracy,
                frozen_hash: String::new(),
            };
            Ok((outcome.best, report))
        })
    }

    fn init_model(&self) -> Result<ModelState> {
        ModelState::new(self.dims, derive_seed(self.seed, &[STREAM_INIT]))
    }

    fn stamp(&self, mut r: PhaseReport) -> PhaseReport {
        r.frozen_hash = self.frozen().fingerprint();
        r
    }

    /// AL_k: draws `n` parameters from the density built on `model`.
    fn al_step(&self, phase: usize, model: &ModelState, n: usize) -> Result<ParamBatch> {
        let study = self.frozen().study.as_ref().expect("study set simulated");
        self.log.run(TaskKind::Sample, phase, PoolKind::Main, || {
            let (density, batch) = alpolicy::next_batch(
                model,
                study,
                self.cfg.al.prior,
                &self.space,
                self.cfg.al.tau_multiplier,
                n,
                derive_seed(self.seed, &[STREAM_AL, phase as u64]),
            )?;
            if let Some(dir) = &self.out {
                let path = dir.join(format!("al_phase{phase}.csv"));
                std::fs::write(&path, density.diagnostics_csv()).map_err(|e| Error::io(&path, e))?;
                Dataset::from_params(self.cfg.sim.grid, &batch).write(&dir.join(format!("al_phase{phase}.bin")))?;
            }
            Ok(batch)
        })
    }

    fn first_epochs(&self) -> usize {
        self.cfg.train.epochs_for(0, self.cfg.workflow.initial_train_size(), self.cfg.workflow.initial_train_size())
    }

    fn baseline(&mut self) -> Result<Vec<PhaseReport>> {
        let w = &self.cfg.workflow;
        let n = 3 * w.baseline_per_class();
        let n0 = w.initial_train_size();
        self.initial_sets(n, false)?;
        let epochs = self.cfg.train.bulk_epochs(n, n0);
        let model = self.init_model()?;
        let data = self.training_set(1)?;
        let cancel = CancelToken::new();
        let (_, report) = self.log.run(TaskKind::Train, 0, PoolKind::Train, || self.fit(0, &model, &data, epochs, &cancel))?;
        Ok(vec![self.stamp(report)])
    }

    fn serial(&mut self) -> Result<Vec<PhaseReport>> {
        let w = self.cfg.workflow.clone();
        let n0 = w.initial_train_size();
        self.initial_sets(n0, true)?;
        let cancel = CancelToken::new();
        let mut model = self.init_model()?;
        let data = self.training_set(1)?;
        let epochs = self.first_epochs();
        let (m, r) = self.log.run(TaskKind::Train, 0, PoolKind::Train, || self.fit(0, &model, &data, epochs, &cancel))?;
        model = m;
        let mut reports = vec![self.stamp(r)];
        for k in 1..w.phases {
            let params = self.al_step(k, &model, n0)?;
            let shard = self.log.run(TaskKind::Simulate, k, PoolKind::Sim, || {
                self.simulate(&params, derive_seed(self.seed, &[STREAM_SHARD, k as u64]), &cancel)
            })?;
            self.shards.push(shard);
            let data = self.training_set(self.shards.len())?;
            let epochs = self.cfg.train.epochs_for(k, data.len(), n0);
            let (m, r) = self.log.run(TaskKind::Train, k, PoolKind::Train, || self.fit(k, &model, &data, epochs, &cancel))?;
            model = m;
            reports.push(self.stamp(r));
        }
        Ok(reports)
    }

    fn streaming(&mut self) -> Result<Vec<PhaseReport>> {
        let w = self.cfg.workflow.clone();
        let n0 = w.initial_train_size();
        let half = w.stream_shard_size();
        self.initial_sets(n0, false)?;
        let model = self.init_model()?;
        let data = self.training_set(1)?;
        let epochs = self.first_epochs();

        // PG0: T0 alongside the study sweep S0'
        let ((mut model, r), study) = self.parallel_group(
            0,
            |this, cancel| this.fit(0, &model, &data, epochs, cancel),
            |this, cancel| this.simulate_study(cancel),
        )?;
        self.frozen.as_mut().expect("initial sets").study = Some(study);
        let mut reports = vec![self.stamp(r)];

        for k in 1..w.phases {
            let last = k + 1 == w.phases;
            let n = if last { n0 } else { 2 * half };
            let params = self.al_step(k, &model, n)?;
            let split = if last { n } else { half };
            let cancel = CancelToken::new();
            let first = self.log.run(TaskKind::Simulate, k, PoolKind::Sim, || {
                self.simulate(&params[..split], derive_seed(self.seed, &[STREAM_SHARD, k as u64]), &cancel)
            })?;
            self.shards.push(first);
            let data = self.training_set(self.shards.len())?;
            let epochs = self.cfg.train.epochs_for(k, data.len(), n0);
            if last {
                let (m, r) = self.log.run(TaskKind::Train, k, PoolKind::Train, || self.fit(k, &model, &data, epochs, &cancel))?;
                model = m;
                reports.push(self.stamp(r));
            } else {
                let rest = &params[split..];
                let ((m, r), second) = self.parallel_group(
                    k,
                    |this, cancel| this.fit(k, &model, &data, epochs, cancel),
                    |this, cancel| this.simulate(rest, derive_seed(self.seed, &[STREAM_SHARD, k as u64, 1]), cancel),
                )?;
                model = m;
                self.shards.push(second);
                reports.push(self.stamp(r));
            }
        }
        Ok(reports)
    }

    /// PG_k: training in a separate thread on the training pool while the
    /// deferred simulation runs on the simulation pool. A failure on either
    /// side cancels the other.
    fn parallel_group<A, B, FT, FS>(&self, phase: usize, train: FT, sim: FS) -> Result<(A, B)>
    where
        A: Send,
        FT: FnOnce(&Self, &CancelToken) -> Result<A> + Send,
        FS: FnOnce(&Self, &CancelToken) -> Result<B>,
        Self: Sync,
    {
        let cancel = CancelToken::new();
        let start = self.log.now_ms();
        let (t, s) = std::thread::scope(|scope| {
            let handle = std::thread::Builder::new()
                .name(format!("train-phase{phase}"))
                .spawn_scoped(scope, || {
                    let r = self.log.run(TaskKind::Train, phase, PoolKind::Train, || train(self, &cancel));
                    if r.is_err() {
                        cancel.cancel();
                    }
                    r
                })
                .map_err(|e| Error::Config(format!("cannot spawn training thread: {e}")));
            let s = self.log.run(TaskKind::SimulateDeferred, phase, PoolKind::Sim, || sim(self, &cancel));
            if s.is_err() {
                cancel.cancel();
            }
            let t = handle.and_then(|h| h.join().map_err(|_| Error::Config(format!("training thread of phase {phase} panicked")))?);
            (t, s)
        });
        let end = self.log.now_ms();
        match (t, s) {
            (Ok(a), Ok(b)) => {
                self.log.record_group(phase, vec![TaskKind::Train.label(phase), TaskKind::SimulateDeferred.label(phase)], start, end);
                Ok((a, b))
            }
            (Err(e), Ok(_)) | (Ok(_), Err(e)) => Err(e),
            (Err(a), Err(b)) => Err(if is_cancelled(&a) { b } else { a }),
        }
    }
}

fn is_cancelled(e: &Error) -> bool {
    match e {
        Error::Cancelled => true,
        Error::Task { source, .. } => is_cancelled(source),
        _ => false,
    }
}

/// Splits `n` into three near-equal class counts.
fn split3(n: usize) -> [usize; 3] {
    let q = n / 3;
    let r = n % 3;
    [q + usize::from(r > 0), q + usize::from(r > 1), q]
}

/// Fraction of `data` whose predicted class is the true one.
pub fn accuracy(model: &ModelState, data: &Batch) -> Result<f64> {
    let out = model.forward_batch(data.x.view())?;
    let hits = out
        .logits
        .axis_iter(Axis(0))
        .zip(&data.classes)
        .filter(|(row, &c)| {
            let best = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            best == c
        })
        .count();
    Ok(hits as f64 / data.len() as f64)
}
