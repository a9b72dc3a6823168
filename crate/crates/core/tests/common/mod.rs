#![allow(dead_code)]

use alstream_core::alpolicy::{AlDensity, Component};
use alstream_core::lattice::sample_uniform;
use alstream_core::nnet::{Batch, Dims, LabeledSample};
use alstream_core::{ModelState, ParamSpace, Prior, SymmetryClass};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_model(dims: Dims, seed: u64, scale: f64) -> ModelState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = (0..dims.n_params()).map(|_| rng.random_range(-scale..scale)).collect();
    ModelState::from_params(dims, params).unwrap()
}

/// Random inputs in [0, 1) with labels of uniformly drawn cells.
pub fn random_batch(dims: Dims, per_class: usize, seed: u64) -> Batch {
    let space = ParamSpace::e1();
    let cells = sample_uniform(&space, [per_class; 3], seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let samples: Vec<LabeledSample> = cells
        .iter()
        .map(|c| LabeledSample::new(c, &space, (0..dims.input).map(|_| rng.random::<f64>()).collect()))
        .collect();
    Batch::from_samples(&samples).unwrap()
}

/// Largest relative disagreement between the analytic gradient and central
/// differences with step `h`. Entries where both are below `floor` in
/// magnitude are compared against `floor`.
pub fn gradcheck(model: &ModelState, batch: &Batch, h: f64, floor: f64) -> f64 {
    let (_, grad) = model.grad(batch).unwrap();
    let mut worst: f64 = 0.0;
    for (i, &g) in grad.iter().enumerate() {
        let mut plus = model.clone();
        plus.params_mut()[i] += h;
        let mut minus = model.clone();
        minus.params_mut()[i] -= h;
        let num = (plus.loss(batch).unwrap().total - minus.loss(batch).unwrap().total) / (2.0 * h);
        let err = (g - num).abs() / g.abs().max(num.abs()).max(floor);
        worst = worst.max(err);
    }
    worst
}

/// 1-D cubic mixture with `centers` and `weights` at spread `tau`.
pub fn cubic_mixture(centers: &[f64], weights: &[f64], tau: f64) -> AlDensity {
    let components = centers
        .iter()
        .zip(weights)
        .map(|(&c, &w)| Component {
            class: SymmetryClass::Cubic,
            center: vec![c],
            weight: w,
        })
        .collect();
    AlDensity::from_components(components, [vec![tau], vec![0.0, 0.0], vec![0.0, 0.0]], Prior::Uniform, ParamSpace::e1())
        .unwrap()
}

/// CDF of the truncated mixture on [lo, hi) by trapezoidal quadrature of
/// the unnormalised density on `n` intervals. Returns (x, F(x)) pairs.
pub fn quadrature_cdf(centers: &[f64], weights: &[f64], tau: f64, lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    let f = |x: f64| -> f64 {
        centers
            .iter()
            .zip(weights)
            .map(|(c, w)| w * (-0.5 * ((x - c) / tau).powi(2)).exp())
            .sum()
    };
    let dx = (hi - lo) / n as f64;
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    let mut prev = f(lo);
    out.push((lo, 0.0));
    for i in 1..=n {
        let x = lo + i as f64 * dx;
        let cur = f(x);
        acc += 0.5 * (prev + cur) * dx;
        out.push((x, acc));
        prev = cur;
    }
    let total = acc;
    out.iter_mut().for_each(|p| p.1 /= total);
    out
}

/// Kolmogorov–Smirnov distance between `samples` and a tabulated CDF,
/// interpolated linearly.
pub fn ks_distance(samples: &mut [f64], cdf: &[(f64, f64)]) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let eval = |x: f64| -> f64 {
        let i = cdf.partition_point(|p| p.0 <= x);
        if i == 0 {
            return 0.0;
        }
        if i >= cdf.len() {
            return 1.0;
        }
        let (x0, f0) = cdf[i - 1];
        let (x1, f1) = cdf[i];
        f0 + (f1 - f0) * (x - x0) / (x1 - x0)
    };
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = eval(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
