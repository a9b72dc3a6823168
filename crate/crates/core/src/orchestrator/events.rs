use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// AL sampling of the next parameter batch.
    Sample,
    /// Simulation that precedes training in its phase (S_k).
    Simulate,
    Train,
    /// Simulation run alongside training (S_k′).
    SimulateDeferred,
}

impl TaskKind {
    fn rank(self) -> u8 {
        match self {
            TaskKind::Sample => 0,
            TaskKind::Simulate => 1,
            TaskKind::Train => 2,
            TaskKind::SimulateDeferred => 3,
        }
    }

    /// Conventional task name for phase `k`, e.g. `S1'`.
    pub fn label(self, k: usize) -> String {
        match self {
            TaskKind::Sample => format!("AL{k}"),
            TaskKind::Simulate => format!("S{k}"),
            TaskKind::Train => format!("T{k}"),
            TaskKind::SimulateDeferred => format!("S{k}'"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Sim,
    Train,
    Main,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub name: String,
    pub kind: TaskKind,
    pub phase: usize,
    pub pool: PoolKind,
    /// Milliseconds since the start of the run.
    pub start_ms: f64,
    pub end_ms: f64,
}

impl TaskRecord {
    pub fn duration_ms(&self) -> f64 {
        self.end_ms - self.start_ms
    }

    /// Sort key placing tasks in table order: AL_k, S_k, T_k, S_k′, PG_k.
    pub fn table_key(&self) -> (usize, u8) {
        (self.phase, self.kind.rank())
    }
}

/// A set of tasks allowed to run concurrently (PG_k).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub name: String,
    pub phase: usize,
    pub members: Vec<String>,
    pub start_ms: f64,
    pub end_ms: f64,
}

impl GroupRecord {
    pub fn duration_ms(&self) -> f64 {
        self.end_ms - self.start_ms
    }
}

/// Thread-safe task timeline of one run.
#[derive(Debug)]
pub struct EventLog {
    origin: Instant,
    tasks: Mutex<Vec<TaskRecord>>,
    groups: Mutex<Vec<GroupRecord>>,
}

impl Default for EventLog {
    fn default() -> Self {
        Self::new()
    }
}

impl EventLog {
    pub fn new() -> Self {
        EventLog {
            origin: Instant::now(),
            tasks: Mutex::new(Vec::new()),
            groups: Mutex::new(Vec::new()),
        }
    }

    pub fn now_ms(&self) -> f64 {
        self.origin.elapsed().as_secs_f64() * 1000.0
    }

    /// Runs `f` as task `kind`/`phase`, recording its interval on success.
    /// Errors come back wrapped with the task name.
    pub fn run<T>(&self, kind: TaskKind, phase: usize, pool: PoolKind, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let name = kind.label(phase);
        let start_ms = self.now_ms();
        let out = f().map_err(|e| Error::task(name.clone(), e))?;
        let end_ms = self.now_ms();
        self.tasks.lock().expect("event log poisoned").push(TaskRecord {
            name,
            kind,
            phase,
            pool,
            start_ms,
            end_ms,
        });
        Ok(out)
    }

    pub fn record_group(&self, phase: usize, members: Vec<String>, start_ms: f64, end_ms: f64) {
        self.groups.lock().expect("event log poisoned").push(GroupRecord {
            name: format!("PG{phase}"),
            phase,
            members,
            start_ms,
            end_ms,
        });
    }

    /// Tasks sorted by start time, and groups.
    pub fn into_parts(self) -> (Vec<TaskRecord>, Vec<GroupRecord>) {
        let mut tasks = self.tasks.into_inner().expect("event log poisoned");
        tasks.sort_by(|a, b| a.start_ms.total_cmp(&b.start_ms));
        (tasks, self.groups.into_inner().expect("event log poisoned"))
    }
}
