//! Run configuration: a TOML document with `[space]`, `[sim]`, `[train]`,
//! `[al]`, `[workflow]` and `[output]` sections.
//!
//! Values are layered: preset (named by `space.preset`), then the file, then
//! environment variables `ALSTREAM_<SECTION>__<KEY>`, then explicit
//! overrides. Unknown keys are rejected at every layer.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::alpolicy::Prior;
use crate::error::{Error, Result};
use crate::lattice::{ParamSpace, Range};
use crate::nnet::TrainConfig;
use crate::simulator::SimConfig;

pub const ENV_PREFIX: &str = "ALSTREAM_";

pub const PRESETS: [&str; 4] = ["E1", "E2", "E1-desk", "E2-desk"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkflowMode {
    Baseline,
    Serial,
    Streaming,
}

impl WorkflowMode {
    pub fn name(self) -> &'static str {
        match self {
            WorkflowMode::Baseline => "baseline",
            WorkflowMode::Serial => "serial",
            WorkflowMode::Streaming => "streaming",
        }
    }
}

impl std::str::FromStr for WorkflowMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(WorkflowMode::Baseline),
            "serial" => Ok(WorkflowMode::Serial),
            "streaming" => Ok(WorkflowMode::Streaming),
            other => Err(Error::Config(format!("unknown workflow mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub cubic_a: Range,
    pub trigonal_a: Range,
    pub trigonal_alpha: Range,
    pub tetragonal_a: Range,
    pub tetragonal_c: Range,
}

impl SpaceSection {
    pub fn space(&self) -> ParamSpace {
        ParamSpace {
            cubic_a: self.cubic_a,
            trigonal_a: self.trigonal_a,
            trigonal_alpha: self.trigonal_alpha,
            tetragonal_a: self.tetragonal_a,
            tetragonal_c: self.tetragonal_c,
        }
    }

    fn from_space(preset: Option<String>, s: ParamSpace) -> Self {
        SpaceSection {
            preset,
            cubic_a: s.cubic_a,
            trigonal_a: s.trigonal_a,
            trigonal_alpha: s.trigonal_alpha,
            tetragonal_a: s.tetragonal_a,
            tetragonal_c: s.tetragonal_c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlConfig {
    /// τ as a multiple of the study-grid spacing.
    pub tau_multiplier: f64,
    pub prior: Prior,
}

impl Default for AlConfig {
    fn default() -> Self {
        AlConfig {
            tau_multiplier: 1.0,
            prior: Prior::Uniform,
        }
    }
}

/// Dataset sizes, schedule and pools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkflowConfig {
    pub mode: WorkflowMode,
    pub phases: usize,
    /// Phase-0 training samples per symmetry class; |D_T0| is three times this.
    pub train_per_class: usize,
    /// Training samples per class for the baseline workflow; 0 means
    /// `train_per_class`.
    pub baseline_train_per_class: usize,
    /// |D_V| / |D_T0|.
    pub val_ratio: f64,
    /// |D_T| / |D_T0|.
    pub test_ratio: f64,
    /// |D_S| / |D_T0|.
    pub study_ratio: f64,
    /// Size of each intermediate streaming shard relative to |D_T0|.
    pub stream_ratio: f64,
    pub train_pool_size: usize,
    pub seed: u64,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        WorkflowConfig {
            mode: WorkflowMode::Serial,
            phases: 4,
            train_per_class: 4500,
            baseline_train_per_class: 0,
            val_ratio: 0.5,
            test_ratio: 0.5,
            study_ratio: 1.0,
            stream_ratio: 0.6,
            train_pool_size: 1,
            seed: 0,
        }
    }
}

impl WorkflowConfig {
    /// |D_T0|.
    pub fn initial_train_size(&self) -> usize {
        3 * self.train_per_class
    }

    pub fn val_size(&self) -> usize {
        scaled(self.initial_train_size(), self.val_ratio)
    }

    pub fn test_size(&self) -> usize {
        scaled(self.initial_train_size(), self.test_ratio)
    }

    pub fn study_size(&self) -> usize {
        scaled(self.initial_train_size(), self.study_ratio)
    }

    /// Size of each half-shard (S_k and S_k′) in intermediate streaming phases.
    pub fn stream_shard_size(&self) -> usize {
        scaled(self.initial_train_size(), self.stream_ratio)
    }

    pub fn baseline_per_class(&self) -> usize {
        if self.baseline_train_per_class == 0 {
            self.train_per_class
        } else {
            self.baseline_train_per_class
        }
    }
}

fn scaled(n: usize, ratio: f64) -> usize {
    (n as f64 * ratio).round() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub space: SpaceSection,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub al: AlConfig,
    #[serde(default)]
    pub workflow: WorkflowConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    /// Named presets. `E1`/`E2` use the full experiment sizes; the desk
    /// variants divide sample counts by 10 and 45, pool profiles to 512
    /// inputs and scale epochs and batch size down for single-host runs.
    pub fn preset(name: &str) -> Result<Self> {
        let key = name.to_ascii_uppercase();
        let space = ParamSpace::preset(&key).ok_or_else(|| {
            Error::Config(format!("unknown preset {name:?}; expected one of {}", PRESETS.join(", ")))
        })?;
        let canonical = PRESETS
            .iter()
            .find(|p| p.eq_ignore_ascii_case(name))
            .expect("preset exists")
            .to_string();
        let mut cfg = RunConfig {
            space: SpaceSection::from_space(Some(canonical), space),
            sim: SimConfig::default(),
            train: TrainConfig::default(),
            al: AlConfig::default(),
            workflow: WorkflowConfig::default(),
            output: OutputConfig::default(),
        };
        match key.as_str() {
            "E1" => {}
            "E2" => {
                cfg.workflow.train_per_class = 72000;
                cfg.train.batch_size = 1024;
            }
            "E1-DESK" => {
                cfg.workflow.train_per_class = 450;
                cfg.train.batch_size = 64;
                cfg.train.epochs = vec![40, 30, 25, 20];
                cfg.train.input_dim = 512;
            }
            "E2-DESK" => {
                cfg.workflow.train_per_class = 1600;
                cfg.train.batch_size = 128;
                cfg.train.epochs = vec![40, 30, 25, 20];
                cfg.train.input_dim = 512;
            }
            _ => unreachable!(),
        }
        Ok(cfg)
    }

    /// Parses a config document. A `space.preset` entry (or `preset_override`)
    /// supplies defaults for every section; without one the document must
    /// spell out the `[space]` ranges.
    pub fn from_toml_str(text: &str, preset_override: Option<&str>) -> Result<Self> {
        let doc: Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let file_preset = doc
            .get("space")
            .and_then(|s| s.get("preset"))
            .and_then(Value::as_str)
            .map(str::to_owned);
        let preset = preset_override.map(str::to_owned).or(file_preset);
        let mut merged = match &preset {
            Some(p) => Value::try_from(Self::preset(p)?).map_err(|e| Error::Config(e.to_string()))?,
            None => Value::Table(Default::default()),
        };
        merge(&mut merged, doc);
        if let (Some(p), Some(space)) = (&preset, merged.get_mut("space").and_then(Value::as_table_mut)) {
            space.insert("preset".into(), Value::String(p.clone()));
        }
        let cfg: RunConfig = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path, preset_override: Option<&str>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, preset_override)
    }

    /// Applies `ALSTREAM_<SECTION>__<KEY>=<value>` pairs. Values are parsed as
    /// TOML literals, falling back to plain strings.
    pub fn apply_env<I>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        for (name, raw) in vars {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let Some((section, key)) = rest.split_once("__") else {
                return Err(Error::Config(format!("environment override {name} must look like {ENV_PREFIX}SECTION__KEY")));
            };
            self.set(&section.to_ascii_lowercase(), &key.to_ascii_lowercase(), &raw)?;
        }
        Ok(())
    }

    /// Sets one `section.key` from its textual value.
    pub fn set(&mut self, section: &str, key: &str, raw: &str) -> Result<()> {
        let value = parse_literal(raw);
        let mut doc = Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let table = doc
            .get_mut(section)
            .and_then(Value::as_table_mut)
            .ok_or_else(|| Error::Config(format!("unknown config section [{section}]")))?;
        table.insert(key.to_owned(), value);
        *self = doc
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{section}.{key}: {e}")))?;
        Ok(())
    }

    pub fn space(&self) -> ParamSpace {
        self.space.space()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.space().validate()?;
        self.sim.validate()?;
        self.train.validate()?;
        self.al.prior.validate()?;
        if !(self.al.tau_multiplier > 0.0 && self.al.tau_multiplier.is_finite()) {
            return Err(Error::Config("al.tau_multiplier must be positive".into()));
        }
        let w = &self.workflow;
        if w.phases == 0 {
            return Err(Error::Config("workflow.phases must be at least 1".into()));
        }
        if w.mode == WorkflowMode::Streaming && w.phases < 2 {
            return Err(Error::Config("the streaming workflow needs at least 2 phases".into()));
        }
        if w.train_per_class == 0 {
            return Err(Error::Config("workflow.train_per_class must be at least 1".into()));
        }
        for (name, r) in [
            ("val_ratio", w.val_ratio),
            ("test_ratio", w.test_ratio),
            ("study_ratio", w.study_ratio),
            ("stream_ratio", w.stream_ratio),
        ] {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("workflow.{name} must be positive")));
            }
        }
        if w.val_size() == 0 || w.test_size() == 0 || w.study_size() < 3 || w.stream_shard_size() == 0 {
            return Err(Error::Config("workflow sizes round to empty datasets".into()));
        }
        if w.train_pool_size == 0 {
            return Err(Error::Config("workflow.train_pool_size must be at least 1".into()));
        }
        Ok(())
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn parse_literal(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn e1_sizes_follow_the_experiment_table() {
        let cfg = RunConfig::preset("E1").unwrap();
        let w = &cfg.workflow;
        assert_eq!(w.initial_train_size(), 13500);
        assert_eq!(w.val_size(), 6750);
        assert_eq!(w.test_size(), 6750);
        assert_eq!(w.study_size(), 13500);
        assert_eq!(w.stream_shard_size(), 8100);
        assert_eq!(cfg.train.batch_size, 512);
        assert_eq!(cfg.train.epochs, vec![400, 300, 250, 200]);
        assert_eq!(cfg.space(), ParamSpace::e1());
        cfg.validate().unwrap();
    }

    #[test]
    fn e2_sizes() {
        let w = RunConfig::preset("e2").unwrap().workflow;
        assert_eq!(w.initial_train_size(), 216000);
        assert_eq!(w.val_size(), 108000);
        assert_eq!(w.stream_shard_size(), 129600);
    }

    #[test]
    fn desk_presets_scale_counts() {
        let e1 = RunConfig::preset("E1-desk").unwrap();
        assert_eq!(e1.workflow.initial_train_size(), 1350);
        assert_eq!(e1.train.input_dim, 512);
        let e2 = RunConfig::preset("E2-desk").unwrap();
        assert_eq!(e2.workflow.initial_train_size() * 45, 216000);
    }

    #[test]
    fn file_layers_over_preset() {
        let text = r#"
            [space]
            preset = "E1-desk"
            cubic_a = { lo = 3.6, hi = 4.4 }

            [sim]
            noise_std = 0.0

            [workflow]
            mode = "streaming"
            phases = 3
        "#;
        let cfg = RunConfig::from_toml_str(text, None).unwrap();
        assert_eq!(cfg.space.cubic_a, Range::new(3.6, 4.4));
        assert_eq!(cfg.space.trigonal_alpha, Range::new(60.0, 120.0));
        assert_eq!(cfg.sim.noise_std, 0.0);
        assert_eq!(cfg.sim.difc, 5000.0);
        assert_eq!(cfg.workflow.mode, WorkflowMode::Streaming);
        assert_eq!(cfg.workflow.train_per_class, 450);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml_str("[sim]\nbogus = 1\n", Some("E1")).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        assert!(RunConfig::from_toml_str("[nosuch]\nx = 1\n", Some("E1")).is_err());
    }

    #[test]
    fn env_overrides() {
        let mut cfg = RunConfig::preset("E1-desk").unwrap();
        cfg.apply_env([
            ("ALSTREAM_SIM__NOISE_STD".to_string(), "0.05".to_string()),
            ("ALSTREAM_WORKFLOW__MODE".to_string(), "baseline".to_string()),
            ("ALSTREAM_TRAIN__EPOCHS".to_string(), "[3, 2]".to_string()),
            ("UNRELATED".to_string(), "x".to_string()),
        ])
        .unwrap();
        assert_eq!(cfg.sim.noise_std, 0.05);
        assert_eq!(cfg.workflow.mode, WorkflowMode::Baseline);
        assert_eq!(cfg.train.epochs, vec![3, 2]);
        assert!(cfg
            .apply_env([("ALSTREAM_SIM__NOPE".to_string(), "1".to_string())])
            .is_err());
    }

    #[test]
    fn validation_rejects_bad_workflows() {
        let mut cfg = RunConfig::preset("E1-desk").unwrap();
        cfg.workflow.mode = WorkflowMode::Streaming;
        cfg.workflow.phases = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::preset("E1-desk").unwrap();
        cfg.al.tau_multiplier = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn preset_roundtrips_through_toml() {
        let cfg = RunConfig::preset("E2-desk").unwrap();
        let back = RunConfig::from_toml_str(&cfg.to_toml(), None).unwrap();
        assert_eq!(back, cfg);
    }
}
