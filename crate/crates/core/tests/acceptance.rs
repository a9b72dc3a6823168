mod common;

use std::time::{Duration, Instant};

use alstream_core::config::WorkflowMode;
use alstream_core::lattice::{d_spacing, sweep_grid, GridCounts};
use alstream_core::nnet::{Batch, Dims, LabeledSample};
use alstream_core::orchestrator::{calibrate_artificial_cost, run, RunReport, SIM_TO_TRAIN_RATIO};
use alstream_core::{CellParams, ModelState, ParamSpace, RunConfig, TofGrid};
use common::{cubic_mixture, gradcheck, ks_distance, median, quadrature_cdf, random_batch, random_model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    if took > limit {
        o.pass = false;
    }
    o.detail = format!("{} ({:.2} s, limit {} s)", o.detail, took.as_secs_f64(), limit.as_secs());
    o
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let a = rng.random_range(2.5..5.5);
        let hkl = loop {
            let v = [rng.random_range(-6..=6), rng.random_range(-6..=6), rng.random_range(-6..=6)];
            if v != [0, 0, 0] {
                break v;
            }
        };
        let cubic = d_spacing(&CellParams::cubic(a), hkl).unwrap();
        for other in [CellParams::trigonal(a, 90.0), CellParams::tetragonal(a, a)] {
            let d = d_spacing(&other, hkl).unwrap();
            worst = worst.max((d - cubic).abs() / cubic);
        }
    }
    outcome(worst < 1e-12, format!("max rel err {worst:.2e}"))
}

fn criterion_2() -> Outcome {
    let g = TofGrid::default();
    let steps = (g.t_last() / g.t0).ln() / 0.0009381;
    let pass = g.n_bins == 2807 && g.t0 == 1360.0 && (steps - 2806.0).abs() <= 1.0;
    outcome(pass, format!("{} bins, t0 {} us, {steps:.3} log steps", g.n_bins, g.t0))
}

fn criterion_3() -> Outcome {
    let dims = Dims { input: 12, h1: 8, h2: 6 };
    let space = ParamSpace::e1();
    // every target slot of cubic a = 3.5 normalises to 0, the zero model's output
    let samples: Vec<_> = (0..6)
        .map(|i| LabeledSample::new(&CellParams::cubic(3.5), &space, vec![0.1 * i as f64; dims.input]))
        .collect();
    let batch = Batch::from_samples(&samples).unwrap();
    let zero = ModelState::zeros(dims).unwrap().loss(&batch).unwrap();
    let class_err = (zero.class - 3f64.ln()).abs();
    let mut worst = 0.0f64;
    for seed in 0..3 {
        let model = random_model(dims, seed, 0.5);
        let b = random_batch(dims, 3, 100 + seed);
        worst = worst.max(gradcheck(&model, &b, 1e-5, 1e-4));
    }
    let pass = zero.reg == 0.0 && class_err < 1e-12 && worst < 1e-4;
    outcome(
        pass,
        format!("reg at zero residual {}, |class - ln 3| {class_err:.1e}, grad rel err {worst:.2e}", zero.reg),
    )
}

fn criterion_4() -> Outcome {
    let sweep = sweep_grid(&ParamSpace::e1(), &GridCounts::cubic_only(20)).unwrap();
    let centers: Vec<f64> = sweep.params.iter().map(|c| c.a).collect();
    let step = sweep.spacing[0][0];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let raw: Vec<f64> = (0..20).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();

    let density = cubic_mixture(&centers, &weights, step);
    let mut a: Vec<f64> = density.sample(100_000, 2).unwrap().iter().map(|c| c.a).collect();
    let ks = ks_distance(&mut a, &quadrature_cdf(&centers, &weights, step, 3.5, 4.5, 20_000));

    let mut one_hot = vec![0.0; 20];
    one_hot[9] = 1.0;
    let a: Vec<f64> = cubic_mixture(&centers, &one_hot, step)
        .sample(100_000, 3)
        .unwrap()
        .iter()
        .map(|c| c.a)
        .collect();
    let near = a.iter().filter(|&&x| (x - centers[9]).abs() <= 3.0 * step).count() as f64 / a.len() as f64;

    let trace = cubic_mixture(&centers, &[0.05; 20], 0.1 * step).sample_traced(100_000, 4).unwrap();
    let mut counts = [0f64; 20];
    trace.components.iter().for_each(|&k| counts[k] += 1.0);
    let expected = trace.components.len() as f64 / 20.0;
    let stat: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    let p = ChiSquared::new(19.0).unwrap().sf(stat);

    outcome(
        ks < 0.01 && near >= 0.99 && p > 0.01,
        format!("KS {ks:.4}, within 3 tau {:.2}%, chi2 p {p:.3}", 100.0 * near),
    )
}

fn desk(mode: WorkflowMode) -> RunConfig {
    let mut cfg = RunConfig::preset("E1-desk").unwrap();
    cfg.workflow.mode = mode;
    cfg.sim.artificial_cost_ms = 0.0;
    cfg
}

fn final_mse(r: &RunReport) -> f64 {
    r.final_phase().test.mse
}

fn main_runs() -> (Vec<RunReport>, Vec<RunReport>, Vec<RunReport>, Duration) {
    let start = Instant::now();
    let serial: Vec<_> = SEEDS.iter().map(|&s| run(&desk(WorkflowMode::Serial), s, None).unwrap()).collect();
    let al_total = serial[0].final_phase().train_size;
    let mut base_cfg = desk(WorkflowMode::Baseline);
    base_cfg.workflow.baseline_train_per_class = 2 * al_total / 3;
    let baseline: Vec<_> = SEEDS.iter().map(|&s| run(&base_cfg, s, None).unwrap()).collect();
    assert_eq!(baseline[0].final_phase().train_size, 2 * al_total);
    let c6 = start.elapsed();
    let streaming: Vec<_> = SEEDS.iter().map(|&s| run(&desk(WorkflowMode::Streaming), s, None).unwrap()).collect();
    (serial, baseline, streaming, c6)
}

fn criterion_6(serial: &[RunReport], baseline: &[RunReport], took: Duration) -> Outcome {
    let al = median(serial.iter().map(final_mse).collect());
    let bulk = median(baseline.iter().map(final_mse).collect());
    let pass = al <= bulk && took < Duration::from_secs(30 * 60);
    outcome(
        pass,
        format!(
            "AL median MSE {al:.6} on {} samples, baseline {bulk:.6} on {} ({:.0} s)",
            serial[0].final_phase().train_size,
            baseline[0].final_phase().train_size,
            took.as_secs_f64()
        ),
    )
}

fn criterion_8(serial: &[RunReport], streaming: &[RunReport]) -> Outcome {
    let s = median(serial.iter().map(final_mse).collect());
    let t = median(streaming.iter().map(final_mse).collect());
    outcome(t <= 1.5 * s, format!("streaming median MSE {t:.6}, serial {s:.6}, ratio {:.3}", t / s))
}

fn timed_pair() -> (RunReport, RunReport, f64, Duration) {
    let start = Instant::now();
    let mut cfg = desk(WorkflowMode::Serial);
    let cal = calibrate_artificial_cost(&cfg, SIM_TO_TRAIN_RATIO).unwrap();
    cfg.sim.artificial_cost_ms = cal.artificial_cost_ms;
    let serial = run(&cfg, 0, None).unwrap();
    cfg.workflow.mode = WorkflowMode::Streaming;
    let streaming = run(&cfg, 0, None).unwrap();
    (serial, streaming, cal.artificial_cost_ms, start.elapsed())
}

fn criterion_5(serial: &RunReport, streaming: &RunReport) -> Outcome {
    let mut problems = serial.ordering_violations();
    problems.extend(streaming.ordering_violations());
    for g in &streaming.groups {
        let (t, s) = (
            streaming.task(&format!("T{}", g.phase)),
            streaming.task(&format!("S{}'", g.phase)),
        );
        match (t, s) {
            (Some(t), Some(s)) if t.start_ms < s.end_ms && s.start_ms < t.end_ms => {}
            _ => problems.push(format!("{} members do not overlap", g.name)),
        }
    }
    let detail = if problems.is_empty() {
        format!("{} serial and {} streaming tasks in order", serial.tasks.len(), streaming.tasks.len())
    } else {
        problems.join("; ")
    };
    outcome(problems.is_empty(), detail)
}

fn criterion_7(serial: &RunReport, streaming: &RunReport, cost: f64, took: Duration) -> Outcome {
    let speedup = serial.total_ms / streaming.total_ms;
    outcome(
        speedup >= 1.10 && took < Duration::from_secs(20 * 60),
        format!(
            "serial {:.1} s, streaming {:.1} s, speedup {speedup:.3} at {cost:.2} ms/sample ({:.0} s)",
            serial.total_ms / 1000.0,
            streaming.total_ms / 1000.0,
            took.as_secs_f64()
        ),
    )
}

fn criterion_9(first: &RunReport, calibrated: &RunReport) -> Outcome {
    let again = run(&desk(WorkflowMode::Serial), first.seed, None).unwrap();
    let a = first.metrics_json();
    let same = a == again.metrics_json();
    let cost_free = a == calibrated.metrics_json();
    outcome(
        same && cost_free,
        format!("rerun identical: {same}, identical under artificial cost: {cost_free}"),
    )
}

#[test]
fn acceptance() {
    let mut results: Vec<(u32, Outcome)> = vec![
        (1, timed(Duration::from_secs(1), criterion_1)),
        (2, timed(Duration::from_secs(1), criterion_2)),
        (3, timed(Duration::from_secs(10), criterion_3)),
        (4, timed(Duration::from_secs(30), criterion_4)),
    ];

    let (serial, baseline, streaming, c6) = main_runs();
    let (t_serial, t_streaming, cost, c7) = timed_pair();
    results.push((5, criterion_5(&t_serial, &t_streaming)));
    results.push((6, criterion_6(&serial, &baseline, c6)));
    results.push((7, criterion_7(&t_serial, &t_streaming, cost, c7)));
    results.push((8, criterion_8(&serial, &streaming)));
    results.push((9, criterion_9(&serial[0], &t_serial)));

    for (n, o) in &results {
        println!("criterion {n}: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed: Vec<u32> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria {failed:?}");
}
