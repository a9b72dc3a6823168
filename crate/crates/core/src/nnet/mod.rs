//! Multitask network: a shared two-layer tanh trunk feeding a 3-way
//! classifier, a 3-output regressor and a scalar log-variance head.
//!
//! Training minimises cross-entropy plus the heteroscedastic regression loss
//! `mean(‖m⊙(y − ŷ)‖² · e^{−v} + v)`, where `v` is the predicted log variance
//! and `m` masks out parameters fixed by the sample's symmetry class.

mod checkpoint;
mod optim;
mod train;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{CellParams, Dim, ParamSpace, SymmetryClass};
use crate::seed;

pub use optim::Adam;
pub use train::{evaluate, train, train_cancellable, EpochRecord, EpochSchedule, Metrics, TrainConfig, TrainOutcome};

pub const N_CLASSES: usize = 3;
pub const N_TARGETS: usize = 3;

/// Layer widths of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input: usize,
    pub h1: usize,
    pub h2: usize,
}

/// Offsets of each parameter block inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wc: usize,
    bc: usize,
    wr: usize,
    br: usize,
    wv: usize,
    bv: usize,
    len: usize,
}

impl Dims {
    fn layout(&self) -> Layout {
        let Dims { input, h1, h2 } = *self;
        let w1 = 0;
        let b1 = w1 + input * h1;
        let w2 = b1 + h1;
        let b2 = w2 + h1 * h2;
        let wc = b2 + h2;
        let bc = wc + h2 * N_CLASSES;
        let wr = bc + N_CLASSES;
        let br = wr + h2 * N_TARGETS;
        let wv = br + N_TARGETS;
        let bv = wv + h2;
        Layout {
            w1,
            b1,
            w2,
            b2,
            wc,
            bc,
            wr,
            br,
            wv,
            bv,
            len: bv + 1,
        }
    }

    pub fn n_params(&self) -> usize {
        self.layout().len
    }
}

/// Weights of the multitask network, stored as one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    dims: Dims,
    params: Vec<f64>,
}

/// Outputs for a single input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Output {
    pub logits: [f64; N_CLASSES],
    pub y_hat: [f64; N_TARGETS],
    pub log_var: f64,
}

/// Outputs for a batch, one row per input.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub logits: Array2<f64>,
    pub y_hat: Array2<f64>,
    pub log_var: Array1<f64>,
}

/// Activations kept for the backward pass.
struct Trace {
    a1: Array2<f64>,
    a2: Array2<f64>,
    out: BatchOutput,
}

/// The three parts of the training objective, averaged over a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub class: f64,
    pub reg: f64,
}

impl ModelState {
    /// Glorot-uniform weights, zero biases.
    pub fn new(dims: Dims, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(dims)?;
        let lay = dims.layout();
        let mut rng = seed::rng(seed);
        let blocks = [
            (lay.w1, dims.input, dims.h1),
            (lay.w2, dims.h1, dims.h2),
            (lay.wc, dims.h2, N_CLASSES),
            (lay.wr, dims.h2, N_TARGETS),
            (lay.wv, dims.h2, 1),
        ];
        for (off, fan_in, fan_out) in blocks {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut model.params[off..off + fan_in * fan_out] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(model)
    }

    pub fn zeros(dims: Dims) -> Result<Self> {
        if dims.input == 0 || dims.h1 == 0 || dims.h2 == 0 {
            return Err(Error::InvalidArgument(format!("layer widths must be positive: {dims:?}")));
        }
        Ok(ModelState {
            dims,
            params: vec![0.0; dims.n_params()],
        })
    }

    pub fn from_params(dims: Dims, params: Vec<f64>) -> Result<Self> {
        let model = Self::zeros(dims)?;
        if params.len() != model.params.len() {
            return Err(Error::DimensionMismatch {
                expected: model.params.len(),
                got: params.len(),
            });
        }
        Ok(ModelState { dims, params })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Mutable bias of the log-variance head.
    pub fn log_var_bias_mut(&mut self) -> &mut f64 {
        let i = self.dims.layout().bv;
        &mut self.params[i]
    }

    fn mat(&self, off: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((rows, cols), &self.params[off..off + rows * cols]).expect("layout")
    }

    fn vec(&self, off: usize, len: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[off..off + len])
    }

    pub fn forward(&self, x: &[f64]) -> Result<Output> {
        let xb = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        let out = self.forward_batch(xb)?;
        let row = |m: &Array2<f64>| [m[[0, 0]], m[[0, 1]], m[[0, 2]]];
        Ok(Output {
            logits: row(&out.logits),
            y_hat: row(&out.y_hat),
            log_var: out.log_var[0],
        })
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<BatchOutput> {
        Ok(self.trace(x)?.out)
    }

    fn trace(&self, x: ArrayView2<'_, f64>) -> Result<Trace> {
        let Dims { input, h1, h2 } = self.dims;
        if x.ncols() != input {
            return Err(Error::DimensionMismatch {
                expected: input,
                got: x.ncols(),
            });
        }
        let lay = self.dims.layout();
        let mut a1 = x.dot(&self.mat(lay.w1, input, h1)) + self.vec(lay.b1, h1);
        a1.mapv_inplace(f64::tanh);
        let mut a2 = a1.dot(&self.mat(lay.w2, h1, h2)) + self.vec(lay.b2, h2);
        a2.mapv_inplace(f64::tanh);
        let logits = a2.dot(&self.mat(lay.wc, h2, N_CLASSES)) + self.vec(lay.bc, N_CLASSES);
        let y_hat = a2.dot(&self.mat(lay.wr, h2, N_TARGETS)) + self.vec(lay.br, N_TARGETS);
        let log_var = a2.dot(&self.vec(lay.wv, h2)) + self.params[lay.bv];
        Ok(Trace {
            a1,
            a2,
            out: BatchOutput { logits, y_hat, log_var },
        })
    }

    /// Objective on a batch.
    pub fn loss(&self, batch: &Batch) -> Result<LossParts> {
        let trace = self.trace(batch.x.view())?;
        Ok(loss_terms(&trace.out, batch)?.0)
    }

    /// Objective and its exact gradient with respect to every parameter, in
    /// the layout of [`ModelState::params`].
    pub fn grad(&self, batch: &Batch) -> Result<(LossParts, Vec<f64>)> {
        let Dims { input, h1, h2 } = self.dims;
        let lay = self.dims.layout();
        let trace = self.trace(batch.x.view())?;
        let (parts, d_logits, d_yhat, d_logvar) = loss_terms(&trace.out, batch)?;

        let mut g = vec![0.0; lay.len];
        let (a1, a2) = (&trace.a1, &trace.a2);

        // heads
        write_mat(&mut g, lay.wc, h2, N_CLASSES).assign(&a2.t().dot(&d_logits));
        write_vec(&mut g, lay.bc, N_CLASSES).assign(&d_logits.sum_axis(Axis(0)));
        write_mat(&mut g, lay.wr, h2, N_TARGETS).assign(&a2.t().dot(&d_yhat));
        write_vec(&mut g, lay.br, N_TARGETS).assign(&d_yhat.sum_axis(Axis(0)));
        write_vec(&mut g, lay.wv, h2).assign(&a2.t().dot(&d_logvar));
        g[lay.bv] = d_logvar.sum();

        // back into the trunk
        let mut d_a2 = d_logits.dot(&self.mat(lay.wc, h2, N_CLASSES).t());
        d_a2 += &d_yhat.dot(&self.mat(lay.wr, h2, N_TARGETS).t());
        let wv = self.vec(lay.wv, h2);
        for (mut row, &dv) in d_a2.rows_mut().into_iter().zip(d_logvar.iter()) {
            row.scaled_add(dv, &wv);
        }
        let d_z2 = d_a2 * &a2.mapv(|a| 1.0 - a * a);
        write_mat(&mut g, lay.w2, h1, h2).assign(&a1.t().dot(&d_z2));
        write_vec(&mut g, lay.b2, h2).assign(&d_z2.sum_axis(Axis(0)));

        let d_a1 = d_z2.dot(&self.mat(lay.w2, h1, h2).t());
        let d_z1 = d_a1 * &a1.mapv(|a| 1.0 - a * a);
        write_mat(&mut g, lay.w1, input, h1).assign(&batch.x.t().dot(&d_z1));
        write_vec(&mut g, lay.b1, h1).assign(&d_z1.sum_axis(Axis(0)));

        Ok((parts, g))
    }
}

fn write_mat(g: &mut [f64], off: usize, rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), &mut g[off..off + rows * cols]).expect("layout")
}

fn write_vec(g: &mut [f64], off: usize, len: usize) -> ArrayViewMut1<'_, f64> {
    ArrayViewMut1::from(&mut g[off..off + len])
}

type HeadGrads = (LossParts, Array2<f64>, Array2<f64>, Array1<f64>);

/// Losses and their derivatives with respect to the three head outputs.
fn loss_terms(out: &BatchOutput, batch: &Batch) -> Result<HeadGrads> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::InvalidArgument("loss needs a nonempty batch".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mut d_logits = Array2::zeros((n, N_CLASSES));
    let mut d_yhat = Array2::zeros((n, N_TARGETS));
    let mut d_logvar = Array1::zeros(n);
    let (mut class_sum, mut reg_sum) = (0.0, 0.0);
    for i in 0..n {
        let logits = out.logits.row(i);
        let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let exps = logits.mapv(|v| (v - max).exp());
        let z = exps.sum();
        let label = batch.classes[i];
        class_sum += z.ln() + max - logits[label];
        for k in 0..N_CLASSES {
            let p = exps[k] / z;
            d_logits[[i, k]] = (p - if k == label { 1.0 } else { 0.0 }) * inv_n;
        }

        let v = out.log_var[i];
        let inv_var = (-v).exp();
        let mut r = 0.0;
        for d in 0..N_TARGETS {
            let m = batch.masks[[i, d]];
            let e = batch.targets[[i, d]] - out.y_hat[[i, d]];
            r += m * e * e;
            d_yhat[[i, d]] = -2.0 * m * e * inv_var * inv_n;
        }
        reg_sum += r * inv_var + v;
        d_logvar[i] = (1.0 - r * inv_var) * inv_n;
    }
    let class = class_sum * inv_n;
    let reg = reg_sum * inv_n;
    Ok((
        LossParts {
            total: class + reg,
            class,
            reg,
        },
        d_logits,
        d_yhat,
        d_logvar,
    ))
}

/// One training example: network input, class label, normalised regression
/// target and the mask of the class's free parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub input: Vec<f64>,
    pub class: usize,
    pub target: [f64; N_TARGETS],
    pub mask: [f64; N_TARGETS],
}

impl LabeledSample {
    pub fn new(cell: &CellParams, space: &ParamSpace, input: Vec<f64>) -> Self {
        let (target, mask) = encode_target(cell, space);
        LabeledSample {
            input,
            class: cell.class.index(),
            target,
            mask,
        }
    }
}

/// Regression target `(a, c, alpha)` min-max normalised by the ranges of the
/// cell's own class, and the mask selecting its free parameters.
///
/// Fixed entries hold the class-implied value: c ≡ a is encoded as the
/// normalised a, α = 90° is normalised by the trigonal angle range.
pub fn encode_target(cell: &CellParams, space: &ParamSpace) -> ([f64; N_TARGETS], [f64; N_TARGETS]) {
    let class = cell.class;
    let a_norm = space.range(class, Dim::A).expect("a is always free").normalize(cell.a);
    let c_norm = match space.range(class, Dim::C) {
        Some(r) => r.normalize(cell.c),
        None => a_norm,
    };
    let alpha_norm = space
        .range(class, Dim::Alpha)
        .unwrap_or(space.trigonal_alpha)
        .normalize(cell.alpha);
    let mut mask = [0.0; N_TARGETS];
    for d in class.free_dims() {
        mask[d.slot()] = 1.0;
    }
    ([a_norm, c_norm, alpha_norm], mask)
}

/// Inverse of [`encode_target`] for the free parameters of `class`.
pub fn decode_target(class: SymmetryClass, y_hat: &[f64; N_TARGETS], space: &ParamSpace) -> CellParams {
    let free: Vec<f64> = class
        .free_dims()
        .iter()
        .map(|&d| space.range(class, d).expect("free dim").denormalize(y_hat[d.slot()]))
        .collect();
    CellParams::from_free(class, &free)
}

/// Row-major matrices of inputs, labels, targets and masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Array2<f64>,
    pub classes: Vec<usize>,
    pub targets: Array2<f64>,
    pub masks: Array2<f64>,
}

impl Batch {
    pub fn empty(input_dim: usize) -> Self {
        Batch {
            x: Array2::zeros((0, input_dim)),
            classes: Vec::new(),
            targets: Array2::zeros((0, N_TARGETS)),
            masks: Array2::zeros((0, N_TARGETS)),
        }
    }

    pub fn from_samples(samples: &[LabeledSample]) -> Result<Self> {
        let dim = samples.first().map_or(0, |s| s.input.len());
        let mut x = Array2::zeros((samples.len(), dim));
        let mut targets = Array2::zeros((samples.len(), N_TARGETS));
        let mut masks = Array2::zeros((samples.len(), N_TARGETS));
        for (i, s) in samples.iter().enumerate() {
            if s.input.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.input.len(),
                });
            }
            if s.class >= N_CLASSES {
                return Err(Error::InvalidArgument(format!("class label {} out of range", s.class)));
            }
            x.row_mut(i).assign(&ArrayView1::from(&s.input));
            targets.row_mut(i).assign(&ArrayView1::from(&s.target));
            masks.row_mut(i).assign(&ArrayView1::from(&s.mask));
        }
        Ok(Batch {
            x,
            classes: samples.iter().map(|s| s.class).collect(),
            targets,
            masks,
        })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    /// Rows `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Batch {
        Batch {
            x: self.x.select(Axis(0), idx),
            classes: idx.iter().map(|&i| self.classes[i]).collect(),
            targets: self.targets.select(Axis(0), idx),
            masks: self.masks.select(Axis(0), idx),
        }
    }

    /// Contiguous rows `[lo, hi)`.
    pub fn slice(&self, lo: usize, hi: usize) -> Batch {
        Batch {
            x: self.x.slice(s![lo..hi, ..]).to_owned(),
            classes: self.classes[lo..hi].to_vec(),
            targets: self.targets.slice(s![lo..hi, ..]).to_owned(),
            masks: self.masks.slice(s![lo..hi, ..]).to_owned(),
        }
    }

    /// Row-wise concatenation.
    pub fn concat(parts: &[&Batch]) -> Result<Batch> {
        let Some(first) = parts.first() else {
            return Err(Error::InvalidArgument("nothing to concatenate".into()));
        };
        let dim = first.input_dim();
        if let Some(bad) = parts.iter().find(|p| p.input_dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.input_dim(),
            });
        }
        let views = |f: fn(&Batch) -> ArrayView2<'_, f64>| parts.iter().map(|p| f(p)).collect::<Vec<_>>();
        let cat = |v: Vec<ArrayView2<'_, f64>>| ndarray::concatenate(Axis(0), &v).expect("same widths");
        Ok(Batch {
            x: cat(views(|b| b.x.view())),
            classes: parts.iter().flat_map(|p| p.classes.iter().copied()).collect(),
            targets: cat(views(|b| b.targets.view())),
            masks: cat(views(|b| b.masks.view())),
        })
    }
}

pub use checkpoint::{read_checkpoint, write_checkpoint};
