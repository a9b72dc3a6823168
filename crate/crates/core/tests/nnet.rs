mod common;

use alstream_core::lattice::{sample_uniform, GridCounts, Range};
use alstream_core::nnet::{evaluate, read_checkpoint, train, write_checkpoint, Batch, Dims, LabeledSample};
use alstream_core::orchestrator::simulate_labeled;
use alstream_core::{CancelToken, CellParams, ModelState, ParamSpace, SimConfig, TrainConfig};
use common::{gradcheck, median, random_batch, random_model};
use proptest::prelude::*;

const SMALL: Dims = Dims { input: 12, h1: 8, h2: 6 };

#[test]
fn gradients_match_central_differences() {
    for seed in 0..3 {
        let model = random_model(SMALL, seed, 0.5);
        let batch = random_batch(SMALL, 3, 100 + seed);
        let err = gradcheck(&model, &batch, 1e-5, 1e-4);
        assert!(err < 1e-4, "instance {seed}: max rel err {err:e}");
    }
}

#[test]
fn gradient_of_log_var_bias_is_one_at_zero_residual() {
    let dims = SMALL;
    let mut model = ModelState::zeros(dims).unwrap();
    // cubic a = 4.0 in E1 normalises to 0.5 in every slot
    let space = ParamSpace::e1();
    let samples: Vec<_> = (0..4)
        .map(|i| LabeledSample::new(&CellParams::cubic(4.0), &space, vec![i as f64 * 0.1; dims.input]))
        .collect();
    let batch = Batch::from_samples(&samples).unwrap();
    let n = dims.n_params();
    let br = n - 1 - dims.h2 - 3;
    for j in 0..3 {
        model.params_mut()[br + j] = 0.5;
    }
    let parts = model.loss(&batch).unwrap();
    assert_eq!(parts.reg, 0.0);
    let (_, grad) = model.grad(&batch).unwrap();
    assert!((grad[n - 1] - 1.0).abs() < 1e-15);
}

#[test]
fn mse_of_a_biased_predictor() {
    let dims = SMALL;
    let space = ParamSpace::e1();
    let samples: Vec<_> = (0..5)
        .map(|_| LabeledSample::new(&CellParams::cubic(4.0), &space, vec![0.3; dims.input]))
        .collect();
    let batch = Batch::from_samples(&samples).unwrap();
    let br = dims.n_params() - 1 - dims.h2 - 3;
    let mut perfect = ModelState::zeros(dims).unwrap();
    perfect.params_mut()[br..br + 3].copy_from_slice(&[0.5, 0.5, 0.5]);
    assert_eq!(evaluate(&perfect, &batch).unwrap().mse, 0.0);
    let mut biased = perfect.clone();
    biased.params_mut()[br] = 0.6;
    assert!((evaluate(&biased, &batch).unwrap().mse - 0.01).abs() < 1e-12);
    // the off-mask slots do not count
    let mut off_mask = perfect;
    off_mask.params_mut()[br + 1] = 0.9;
    assert_eq!(evaluate(&off_mask, &batch).unwrap().mse, 0.0);
}

#[test]
fn evaluate_equals_per_sample_loop() {
    let dims = SMALL;
    let model = random_model(dims, 3, 0.4);
    let batch = random_batch(dims, 400, 8);
    let m = evaluate(&model, &batch).unwrap();
    let (mut class, mut reg, mut sq) = (0.0, 0.0, 0.0);
    for i in 0..batch.len() {
        let row: Vec<f64> = batch.x.row(i).to_vec();
        let out = model.forward(&row).unwrap();
        let max = out.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + out.logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        class += lse - out.logits[batch.classes[i]];
        let r: f64 = (0..3)
            .map(|j| batch.masks[[i, j]] * (batch.targets[[i, j]] - out.y_hat[j]).powi(2))
            .sum();
        reg += r * (-out.log_var).exp() + out.log_var;
        sq += r;
    }
    let n = batch.len() as f64;
    assert!((m.class_loss - class / n).abs() < 1e-12);
    assert!((m.reg_loss - reg / n).abs() < 1e-12);
    assert!((m.mse - sq / n).abs() < 1e-12);
    assert_eq!(m.total, m.class_loss + m.reg_loss);
}

#[test]
fn zero_epochs_return_the_input_model() {
    let model = random_model(SMALL, 1, 0.3);
    let batch = random_batch(SMALL, 4, 2);
    let out = train(&model, &batch, &batch, &TrainConfig::default(), 0).unwrap();
    assert_eq!(out.best, model);
    assert_eq!(out.history.len(), 1);
}

#[test]
fn zero_batch_size_rejected() {
    let model = random_model(SMALL, 1, 0.3);
    let batch = random_batch(SMALL, 4, 2);
    let cfg = TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    };
    assert!(train(&model, &batch, &batch, &cfg, 1).is_err());
}

#[test]
fn cancelled_training_stops() {
    let model = random_model(SMALL, 1, 0.3);
    let batch = random_batch(SMALL, 4, 2);
    let cancel = CancelToken::new();
    cancel.cancel();
    let r = alstream_core::nnet::train_cancellable(&model, &batch, &batch, &TrainConfig::default(), 3, &cancel);
    assert!(matches!(r, Err(alstream_core::Error::Cancelled)));
}

#[test]
fn training_is_deterministic() {
    let dims = SMALL;
    let model = ModelState::new(dims, 4).unwrap();
    let batch = random_batch(dims, 30, 5);
    let val = random_batch(dims, 10, 6);
    let cfg = TrainConfig {
        batch_size: 16,
        seed: 9,
        ..TrainConfig::default()
    };
    let a = train(&model, &batch, &val, &cfg, 5).unwrap();
    let b = train(&model, &batch, &val, &cfg, 5).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.best, b.best);
}

fn desk_set(space: &ParamSpace, counts: [usize; 3], seed: u64) -> Batch {
    let params = sample_uniform(space, counts, seed).unwrap();
    simulate_labeled(&params, space, &SimConfig::default(), 512, seed, &CancelToken::new()).unwrap()
}

#[test]
fn smoke_training_halves_the_loss() {
    let space = ParamSpace::e1();
    let train_set = desk_set(&space, [100; 3], 1);
    let val_set = desk_set(&space, [30; 3], 2);
    let dims = Dims { input: 512, h1: 256, h2: 64 };
    let model = ModelState::new(dims, 3).unwrap();
    let cfg = TrainConfig {
        batch_size: 64,
        seed: 4,
        ..TrainConfig::default()
    };
    let out = train(&model, &train_set, &val_set, &cfg, 200).unwrap();
    let first = out.history[0].train_total;
    let last = out.history.last().unwrap().train_total;
    // the heteroscedastic term can go negative, so halving is measured on |L0|
    assert!(last <= first - 0.5 * first.abs(), "epoch 0 {first}, epoch 200 {last}");
}

#[test]
fn uncertainty_is_higher_away_from_the_training_data() {
    // train on cubic a in [3.5, 4.0) only and compare the predicted variance
    // there with the held-out upper half of the range
    let space = ParamSpace::e1();
    let seen = ParamSpace {
        cubic_a: Range::new(3.5, 4.0),
        ..space
    };
    let dims = Dims { input: 512, h1: 64, h2: 32 };
    let probe = |lo: f64, hi: f64| -> Vec<CellParams> {
        let sub = ParamSpace {
            cubic_a: Range::new(lo, hi),
            ..space
        };
        alstream_core::lattice::sweep_grid(&sub, &GridCounts::cubic_only(50)).unwrap().params
    };
    let inside = probe(3.5, 4.0);
    let outside = probe(4.0, 4.5);
    let mut ratios = Vec::new();
    for seed in 0..5 {
        let params = sample_uniform(&seen, [300, 0, 0], seed).unwrap();
        let sim = SimConfig::default();
        let train_set = simulate_labeled(&params, &space, &sim, 512, seed, &CancelToken::new()).unwrap();
        let val_params = sample_uniform(&seen, [60, 0, 0], seed + 100).unwrap();
        let val_set = simulate_labeled(&val_params, &space, &sim, 512, seed + 100, &CancelToken::new()).unwrap();
        let cfg = TrainConfig {
            batch_size: 32,
            seed,
            ..TrainConfig::default()
        };
        let model = ModelState::new(dims, seed).unwrap();
        let fitted = train(&model, &train_set, &val_set, &cfg, 60).unwrap().best;
        let mean_var = |cells: &[CellParams]| {
            let b = simulate_labeled(cells, &space, &sim, 512, 7, &CancelToken::new()).unwrap();
            let out = fitted.forward_batch(b.x.view()).unwrap();
            out.log_var.mapv(f64::exp).mean().unwrap()
        };
        ratios.push(mean_var(&outside) / mean_var(&inside));
    }
    let med = median(ratios.clone());
    assert!(med >= 1.0, "variance ratios held-out/seen {ratios:?}");
}

#[test]
fn checkpoint_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    let model = random_model(SMALL, 11, 1.0);
    write_checkpoint(&model, &path).unwrap();
    assert_eq!(read_checkpoint(&path).unwrap(), model);
    std::fs::write(&path, b"nope").unwrap();
    assert!(read_checkpoint(&path).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn batched_forward_equals_single(seed in any::<u64>()) {
        let model = random_model(SMALL, seed, 0.5);
        let batch = random_batch(SMALL, 2, seed);
        let out = model.forward_batch(batch.x.view()).unwrap();
        for i in 0..batch.len() {
            let single = model.forward(batch.x.row(i).as_slice().unwrap()).unwrap();
            for j in 0..3 {
                prop_assert!((single.logits[j] - out.logits[[i, j]]).abs() < 1e-12);
                prop_assert!((single.y_hat[j] - out.y_hat[[i, j]]).abs() < 1e-12);
            }
            prop_assert!((single.log_var - out.log_var[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn total_is_class_plus_reg(seed in any::<u64>()) {
        let model = random_model(SMALL, seed, 0.5);
        let batch = random_batch(SMALL, 2, seed.wrapping_add(1));
        let p = model.loss(&batch).unwrap();
        prop_assert_eq!(p.total, p.class + p.reg);
    }

    #[test]
    fn log_var_bias_shifts_every_output(seed in any::<u64>(), shift in -3.0f64..3.0) {
        let model = random_model(SMALL, seed, 0.5);
        let mut shifted = model.clone();
        *shifted.log_var_bias_mut() += shift;
        let batch = random_batch(SMALL, 2, seed);
        let a = model.forward_batch(batch.x.view()).unwrap();
        let b = shifted.forward_batch(batch.x.view()).unwrap();
        for i in 0..batch.len() {
            prop_assert!((b.log_var[i] - a.log_var[i] - shift).abs() < 1e-12);
        }
    }
}
