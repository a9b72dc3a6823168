use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::events::{GroupRecord, TaskRecord};
use crate::config::WorkflowMode;
use crate::error::{Error, Result};
use crate::nnet::Metrics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sizes {
    pub initial_train: usize,
    pub val: usize,
    pub test: usize,
    pub study: usize,
}

/// Outcome of one training phase, evaluated on the test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub phase: usize,
    pub train_size: usize,
    /// Training samples per class (cubic, trigonal, tetragonal).
    pub class_counts: [usize; 3],
    pub epochs: usize,
    pub best_epoch: usize,
    pub val_total: f64,
    pub test: Metrics,
    pub test_accuracy: f64,
    /// Fingerprint of D_V, D_T and D_S after this phase.
    pub frozen_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: WorkflowMode,
    pub seed: u64,
    pub preset: Option<String>,
    pub sizes: Sizes,
    pub phases: Vec<PhaseReport>,
    pub tasks: Vec<TaskRecord>,
    pub groups: Vec<GroupRecord>,
    pub total_ms: f64,
}

#[derive(Serialize)]
struct MetricsView<'a> {
    mode: WorkflowMode,
    seed: u64,
    preset: &'a Option<String>,
    sizes: &'a Sizes,
    phases: &'a [PhaseReport],
}

impl RunReport {
    pub fn final_phase(&self) -> &PhaseReport {
        self.phases.last().expect("a run has at least one phase")
    }

    /// The report without any timing information.
    pub fn metrics_json(&self) -> String {
        serde_json::to_string_pretty(&MetricsView {
            mode: self.mode,
            seed: self.seed,
            preset: &self.preset,
            sizes: &self.sizes,
            phases: &self.phases,
        })
        .expect("metrics serialise")
    }

    pub fn task(&self, name: &str) -> Option<&TaskRecord> {
        self.tasks.iter().find(|t| t.name == name)
    }

    pub fn tasks_csv(&self) -> String {
        let mut out = String::from("name,kind,phase,pool,start_ms,end_ms,duration_ms\n");
        for t in &self.tasks {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.3},{:.3},{:.3}",
                t.name,
                serde_json::to_value(t.kind).expect("kind").as_str().unwrap_or(""),
                t.phase,
                serde_json::to_value(t.pool).expect("pool").as_str().unwrap_or(""),
                t.start_ms,
                t.end_ms,
                t.duration_ms()
            );
        }
        for g in &self.groups {
            let _ = writeln!(
                out,
                "{},group,{},{},{:.3},{:.3},{:.3}",
                g.name,
                g.phase,
                g.members.join("+"),
                g.start_ms,
                g.end_ms,
                g.duration_ms()
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }

    /// Writes `report.json` and `tasks.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        std::fs::write(&json, self.to_json()).map_err(|e| Error::io(&json, e))?;
        let csv = dir.join("tasks.csv");
        std::fs::write(&csv, self.tasks_csv()).map_err(|e| Error::io(&csv, e))?;
        Ok(())
    }

    /// Dependency violations in the task timeline; empty when the run obeyed
    /// the ordering of its workflow.
    pub fn ordering_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.phases.len();
        let end = |name: &str| self.task(name).map(|t| t.end_ms);
        let mut need = |task: String, after: Vec<String>| match self.task(&task) {
            None => out.push(format!("missing task {task}")),
            Some(t) => {
                for dep in after {
                    match end(&dep).or_else(|| self.groups.iter().find(|g| g.name == dep).map(|g| g.end_ms)) {
                        None => out.push(format!("{task} depends on missing {dep}")),
                        Some(e) if e > t.start_ms => {
                            out.push(format!("{task} started at {:.3} ms before {dep} ended at {e:.3} ms", t.start_ms))
                        }
                        Some(_) => {}
                    }
                }
            }
        };
        match self.mode {
            WorkflowMode::Baseline | WorkflowMode::Serial => {
                let mut seq = vec!["S0".to_string(), "T0".to_string()];
                for k in 1..n {
                    seq.extend([format!("AL{k}"), format!("S{k}"), format!("T{k}")]);
                }
                for w in seq.windows(2) {
                    need(w[1].clone(), vec![w[0].clone()]);
                }
                if self.tasks.len() != seq.len() {
                    out.push(format!("expected {} tasks, found {}", seq.len(), self.tasks.len()));
                }
            }
            WorkflowMode::Streaming => {
                need("T0".into(), vec!["S0".into()]);
                need("S0'".into(), vec!["S0".into()]);
                for k in 1..n {
                    let prev = format!("PG{}", k - 1);
                    need(format!("AL{k}"), vec![prev.clone(), format!("T{}", k - 1), format!("S{}'", k - 1)]);
                    need(format!("S{k}"), vec![format!("AL{k}")]);
                    need(format!("T{k}"), vec![format!("S{k}"), prev]);
                    if k + 1 < n {
                        need(format!("S{k}'"), vec![format!("S{k}")]);
                    }
                }
                for k in 0..n.saturating_sub(1) {
                    if !self.groups.iter().any(|g| g.name == format!("PG{k}")) {
                        out.push(format!("missing group PG{k}"));
                    }
                }
            }
        }
        out
    }
}

/// Task durations of several runs side by side, rows in table order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub name: String,
    pub durations_ms: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseComparison {
    pub phase: usize,
    pub train_size: Vec<usize>,
    pub class_loss: Vec<f64>,
    pub mse: Vec<f64>,
    /// Differences to the first run.
    pub class_loss_delta: Vec<f64>,
    pub mse_delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub labels: Vec<String>,
    /// Total wall time of the reference run over that of the other run
    /// (serial over streaming when both are present, else first over second).
    pub speedup: f64,
    pub phases: Vec<PhaseComparison>,
    pub tasks: Vec<TaskRow>,
    pub totals_ms: Vec<f64>,
}

pub fn label(r: &RunReport) -> String {
    format!("{}#{}", r.mode.name(), r.seed)
}

/// Compares runs with the same phase count and evaluation-set sizes.
pub fn compare_runs(reports: &[RunReport]) -> Result<ComparisonReport> {
    if reports.len() < 2 {
        return Err(Error::ShapeMismatch("need at least two reports to compare".into()));
    }
    let first = &reports[0];
    for r in &reports[1..] {
        if r.phases.len() != first.phases.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} has {} phases, {} has {}",
                label(first),
                first.phases.len(),
                label(r),
                r.phases.len()
            )));
        }
        if (r.sizes.val, r.sizes.test) != (first.sizes.val, first.sizes.test) {
            return Err(Error::ShapeMismatch(format!(
                "evaluation sets differ: {:?} vs {:?}",
                first.sizes, r.sizes
            )));
        }
    }
    let serial = reports.iter().position(|r| r.mode == WorkflowMode::Serial);
    let streaming = reports.iter().position(|r| r.mode == WorkflowMode::Streaming);
    let (num, den) = match (serial, streaming) {
        (Some(s), Some(t)) => (s, t),
        _ => (0, 1),
    };
    let speedup = reports[num].total_ms / reports[den].total_ms;

    let phases = (0..first.phases.len())
        .map(|k| {
            let col = |f: fn(&PhaseReport) -> f64| reports.iter().map(|r| f(&r.phases[k])).collect::<Vec<_>>();
            let class_loss = col(|p| p.test.class_loss);
            let mse = col(|p| p.test.mse);
            PhaseComparison {
                phase: k,
                train_size: reports.iter().map(|r| r.phases[k].train_size).collect(),
                class_loss_delta: class_loss.iter().map(|v| v - class_loss[0]).collect(),
                mse_delta: mse.iter().map(|v| v - mse[0]).collect(),
                class_loss,
                mse,
            }
        })
        .collect();

    let mut keys: BTreeMap<(usize, u8, String), ()> = BTreeMap::new();
    for r in reports {
        for t in &r.tasks {
            let (p, rank) = t.table_key();
            keys.insert((p, rank, t.name.clone()), ());
        }
        for g in &r.groups {
            keys.insert((g.phase, u8::MAX, g.name.clone()), ());
        }
    }
    let tasks = keys
        .into_keys()
        .map(|(_, _, name)| TaskRow {
            durations_ms: reports
                .iter()
                .map(|r| {
                    r.task(&name)
                        .map(TaskRecord::duration_ms)
                        .or_else(|| r.groups.iter().find(|g| g.name == name).map(GroupRecord::duration_ms))
                })
                .collect(),
            name,
        })
        .collect();

    Ok(ComparisonReport {
        labels: reports.iter().map(label).collect(),
        speedup,
        phases,
        tasks,
        totals_ms: reports.iter().map(|r| r.total_ms).collect(),
    })
}

impl ComparisonReport {
    /// Plain-text table of task durations (ms) and per-phase test metrics.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<8}", "task");
        for l in &self.labels {
            let _ = write!(out, " {l:>16}");
        }
        out.push('\n');
        for row in &self.tasks {
            let _ = write!(out, "{:<8}", row.name);
            for d in &row.durations_ms {
                match d {
                    Some(ms) => {
                        let _ = write!(out, " {ms:>16.1}");
                    }
                    None => {
                        let _ = write!(out, " {:>16}", "-");
                    }
                }
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<8}", "Total");
        for t in &self.totals_ms {
            let _ = write!(out, " {t:>16.1}");
        }
        let _ = writeln!(out, "\nspeedup {:.3}\n", self.speedup);
        let _ = writeln!(out, "{:<6} {:<16} {:>8} {:>12} {:>12}", "phase", "run", "train", "class_loss", "mse");
        for p in &self.phases {
            for (i, l) in self.labels.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{:<6} {:<16} {:>8} {:>12.5} {:>12.6}",
                    p.phase, l, p.train_size[i], p.class_loss[i], p.mse[i]
                );
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseAggregate {
    pub phase: usize,
    pub train_size: MeanStd,
    pub class_loss: MeanStd,
    pub mse: MeanStd,
    pub accuracy: MeanStd,
}

/// Summary over seeds of one workflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mode: WorkflowMode,
    pub seeds: Vec<u64>,
    pub failed_seeds: Vec<u64>,
    pub phases: Vec<PhaseAggregate>,
    pub tasks: Vec<(String, MeanStd)>,
    pub total_ms: MeanStd,
}

pub fn aggregate(reports: &[RunReport], failed_seeds: Vec<u64>) -> Result<Aggregate> {
    let Some(first) = reports.first() else {
        return Err(Error::ShapeMismatch("no successful runs to aggregate".into()));
    };
    if let Some(r) = reports.iter().find(|r| r.mode != first.mode || r.phases.len() != first.phases.len()) {
        return Err(Error::ShapeMismatch(format!("{} does not match {}", label(r), label(first))));
    }
    let phases = (0..first.phases.len())
        .map(|k| {
            let col = |f: fn(&PhaseReport) -> f64| MeanStd::of(&reports.iter().map(|r| f(&r.phases[k])).collect::<Vec<_>>());
            PhaseAggregate {
                phase: k,
                train_size: col(|p| p.train_size as f64),
                class_loss: col(|p| p.test.class_loss),
                mse: col(|p| p.test.mse),
                accuracy: col(|p| p.test_accuracy),
            }
        })
        .collect();
    let mut names: Vec<(usize, u8, String)> = first.tasks.iter().map(|t| {
        let (p, r) = t.table_key();
        (p, r, t.name.clone())
    }).collect();
    names.extend(first.groups.iter().map(|g| (g.phase, u8::MAX, g.name.clone())));
    names.sort();
    let tasks = names
        .into_iter()
        .map(|(_, _, name)| {
            let d: Vec<f64> = reports
                .iter()
                .filter_map(|r| {
                    r.task(&name)
                        .map(TaskRecord::duration_ms)
                        .or_else(|| r.groups.iter().find(|g| g.name == name).map(GroupRecord::duration_ms))
                })
                .collect();
            (name, MeanStd::of(&d))
        })
        .collect();
    Ok(Aggregate {
        mode: first.mode,
        seeds: reports.iter().map(|r| r.seed).collect(),
        failed_seeds,
        phases,
        tasks,
        total_ms: MeanStd::of(&reports.iter().map(|r| r.total_ms).collect::<Vec<_>>()),
    })
}

impl Aggregate {
    pub fn render(&self) -> String {
        let mut out = format!("{} over seeds {:?}", self.mode.name(), self.seeds);
        if !self.failed_seeds.is_empty() {
            let _ = write!(out, " (failed: {:?})", self.failed_seeds);
        }
        out.push('\n');
        for (name, d) in &self.tasks {
            let _ = writeln!(out, "{name:<8} {:>12.1} ± {:<10.1}", d.mean, d.std);
        }
        let _ = writeln!(out, "{:<8} {:>12.1} ± {:<10.1}", "Total", self.total_ms.mean, self.total_ms.std);
        for p in &self.phases {
            let _ = writeln!(
                out,
                "phase {} train {:.0}  class_loss {:.5} ± {:.5}  mse {:.6} ± {:.6}  acc {:.4}",
                p.phase, p.train_size.mean, p.class_loss.mean, p.class_loss.std, p.mse.mean, p.mse.std, p.accuracy.mean
            );
        }
        out
    }
}
