use std::path::{Path, PathBuf};
use std::process::ExitCode;

use alstream_core::alpolicy::{self, StudySet};
use alstream_core::dataset::{Dataset, Record};
use alstream_core::lattice::{sample_uniform, sweep_grid, GridCounts};
use alstream_core::nnet::read_checkpoint;
use alstream_core::orchestrator::{self, aggregate, calibrate_artificial_cost, compare_runs, RunReport, SIM_TO_TRAIN_RATIO};
use alstream_core::simulator::simulate_batch;
use alstream_core::{RunConfig, WorkflowMode};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Active-learning workflows for diffraction structure-finding models.
#[derive(Parser)]
#[command(name = "alstream", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true, env = "ALSTREAM_CONFIG")]
    config: Option<PathBuf>,
    /// Named preset: E1, E2, E1-desk or E2-desk.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Override a single value, e.g. `--set sim.noise_std=0`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate profiles for a parameter batch and write a dataset file.
    Simulate {
        /// Parameter batch file; without it parameters are generated.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Kind::Uniform)]
        kind: Kind,
        /// Uniform samples per class as `cubic,trigonal,tetragonal` (or one
        /// number for all three); for a study sweep, the total point count.
        /// Defaults to the configured training or study size.
        #[arg(long, value_delimiter = ',')]
        counts: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Simulation workers.
        #[arg(long)]
        pool: Option<usize>,
        /// Store profiles pooled to this many values (0 keeps every bin).
        #[arg(long, default_value_t = 0)]
        pooled: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a workflow for one or more seeds.
    Run {
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        phases: Option<usize>,
        /// Either a seed count N (runs seeds 0..N) or a comma-separated list.
        #[arg(long, default_value = "1")]
        seeds: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Set the artificial simulation cost from a short timing run first.
        #[arg(long)]
        calibrate: bool,
    },
    /// Compare run reports (serial against streaming gives the speedup).
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Draw parameters from the AL density of a saved model.
    AlSample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-component weights as CSV.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Print the resolved configuration.
    Config,
    /// Measure training speed and suggest an artificial simulation cost.
    Calibrate {
        #[arg(long, default_value_t = SIM_TO_TRAIN_RATIO)]
        ratio: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Uniform,
    /// Equally spaced study sweep.
    #[value(alias = "sweep")]
    Study,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Baseline,
    Serial,
    Streaming,
}

impl From<Mode> for WorkflowMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Baseline => WorkflowMode::Baseline,
            Mode::Serial => WorkflowMode::Serial,
            Mode::Streaming => WorkflowMode::Streaming,
        }
    }
}

/// Exit status when some seeds of a multi-seed run failed.
const PARTIAL_FAILURE: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path, common.preset.as_deref())?,
        None => RunConfig::preset(common.preset.as_deref().unwrap_or("E1-desk"))?,
    };
    cfg.apply_env(std::env::vars().filter(|(k, _)| k != "ALSTREAM_CONFIG"))?;
    for o in &common.overrides {
        let Some((path, value)) = o.split_once('=') else {
            bail!("--set expects SECTION.KEY=VALUE, got {o:?}");
        };
        let Some((section, key)) = path.split_once('.') else {
            bail!("--set expects SECTION.KEY=VALUE, got {o:?}");
        };
        cfg.set(section, key, value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let mut cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Simulate {
            params,
            kind,
            counts,
            seed,
            pool,
            pooled,
            out,
        } => {
            if let Some(p) = pool {
                cfg.sim.pool_size = p;
            }
            cfg.validate()?;
            let space = cfg.space();
            let batch = match params {
                Some(path) => Dataset::read(&path)?.params(),
                None => match kind {
                    Kind::Uniform => {
                        let mix = match counts.as_slice() {
                            [] => [cfg.workflow.train_per_class; 3],
                            &[n] => [n; 3],
                            &[a, b, c] => [a, b, c],
                            other => bail!("--counts takes one or three values, got {}", other.len()),
                        };
                        if mix.iter().sum::<usize>() == 0 {
                            bail!("--counts selects no samples");
                        }
                        sample_uniform(&space, mix, seed)?
                    }
                    Kind::Study => {
                        let total = match counts.as_slice() {
                            [] => cfg.workflow.study_size(),
                            &[n] => n,
                            _ => bail!("--counts for a study sweep takes one total"),
                        };
                        if total == 0 {
                            bail!("--counts selects no samples");
                        }
                        sweep_grid(&space, &GridCounts::for_total(total))?.params
                    }
                },
            };
            let sim = simulate_batch(&batch, &space, &cfg.sim, seed)?;
            let width = if pooled == 0 { cfg.sim.grid.n_bins } else { pooled.min(cfg.sim.grid.n_bins) };
            let ds = Dataset {
                grid: cfg.sim.grid,
                width,
                records: sim
                    .samples
                    .into_iter()
                    .map(|(profile, cell)| Record {
                        cell,
                        intensity: profile.pooled(width),
                    })
                    .collect(),
            };
            ds.write(&out)?;
            println!("wrote {} profiles to {} in {:.1} ms", ds.records.len(), out.display(), sim.wall.as_secs_f64() * 1000.0);
        }
        Command::Run {
            mode,
            phases,
            seeds,
            out,
            calibrate,
        } => {
            if let Some(m) = mode {
                cfg.workflow.mode = m.into();
            }
            if let Some(p) = phases {
                cfg.workflow.phases = p;
            }
            cfg.validate()?;
            let seeds = parse_seeds(&seeds)?;
            if calibrate {
                let c = calibrate_artificial_cost(&cfg, SIM_TO_TRAIN_RATIO)?;
                eprintln!("calibrated artificial cost {:.3} ms per sample", c.artificial_cost_ms);
                cfg.sim.artificial_cost_ms = c.artificial_cost_ms;
            }
            let out = out.unwrap_or_else(|| cfg.output.directory.clone());
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            std::fs::write(out.join("config.toml"), cfg.to_toml()).context("writing config.toml")?;
            let results = orchestrator::run_seeds(&cfg, &seeds, Some(&out));
            let mut ok = Vec::new();
            let mut failed = Vec::new();
            for (seed, r) in results {
                match r {
                    Ok(report) => {
                        let f = report.final_phase();
                        println!(
                            "seed {seed}: {} phases, {:.1} ms, class_loss {:.5}, mse {:.6}",
                            report.phases.len(),
                            report.total_ms,
                            f.test.class_loss,
                            f.test.mse
                        );
                        ok.push(report);
                    }
                    Err(e) => {
                        eprintln!("seed {seed} failed: {e}");
                        failed.push(seed);
                    }
                }
            }
            if ok.is_empty() {
                bail!("all seeds failed");
            }
            let agg = aggregate(&ok, failed.clone())?;
            std::fs::write(out.join("aggregate.json"), serde_json::to_string_pretty(&agg)?).context("writing aggregate.json")?;
            print!("{}", agg.render());
            if !failed.is_empty() {
                return Ok(ExitCode::from(PARTIAL_FAILURE));
            }
        }
        Command::Report { reports, json } => {
            let loaded = reports.iter().map(|p| read_report(p)).collect::<Result<Vec<_>>>()?;
            if loaded.len() == 1 {
                let r = &loaded[0];
                if json {
                    println!("{}", r.to_json());
                } else {
                    print!("{}", r.tasks_csv());
                    print!("{}", aggregate(&loaded, vec![])?.render());
                }
            } else {
                let cmp = compare_runs(&loaded)?;
                if json {
                    println!("{}", serde_json::to_string_pretty(&cmp)?);
                } else {
                    print!("{}", cmp.render());
                }
            }
        }
        Command::AlSample {
            model,
            n,
            seed,
            out,
            diagnostics,
        } => {
            let model = read_checkpoint(&model)?;
            let dims = cfg.train.dims(cfg.sim.grid.n_bins);
            if model.dims().input != dims.input {
                bail!("model expects {} inputs but the configuration produces {}", model.dims().input, dims.input);
            }
            let space = cfg.space();
            let counts = GridCounts::for_total(cfg.workflow.study_size());
            let study = StudySet::simulate(&space, &counts, &cfg.sim, dims.input, seed)?;
            let (density, batch) = alpolicy::next_batch(&model, &study, cfg.al.prior, &space, cfg.al.tau_multiplier, n, seed)?;
            Dataset::from_params(cfg.sim.grid, &batch).write(&out)?;
            if let Some(path) = diagnostics {
                std::fs::write(&path, density.diagnostics_csv()).with_context(|| format!("writing {}", path.display()))?;
            }
            let mass = density.class_mass();
            println!(
                "wrote {} parameters to {} (class mass {:.3}/{:.3}/{:.3})",
                batch.len(),
                out.display(),
                mass[0],
                mass[1],
                mass[2]
            );
        }
        Command::Config => print!("{}", cfg.to_toml()),
        Command::Calibrate { ratio } => {
            let c = calibrate_artificial_cost(&cfg, ratio)?;
            println!("{}", serde_json::to_string_pretty(&c)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn read_report(path: &Path) -> Result<RunReport> {
    let path = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
    Ok(RunReport::read(&path)?)
}

fn parse_seeds(arg: &str) -> Result<Vec<u64>> {
    let parts = arg
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<u64>().with_context(|| format!("bad seed {p:?} in --seeds")))
        .collect::<Result<Vec<_>>>()?;
    let seeds = match parts.as_slice() {
        &[n] if !arg.contains(',') => (0..n).collect(),
        _ => parts,
    };
    if seeds.is_empty() {
        bail!("--seeds selects no runs");
    }
    Ok(seeds)
}
