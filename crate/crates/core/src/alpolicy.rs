//! Batch-mode uncertainty sampling.
//!
//! The model's predicted variance on a fixed, equally spaced study set is
//! turned into mixture weights; new parameters are drawn from
//!
//! ```text
//! p(y) ∝ prior(y) · Σₙ wₙ · exp(−½ Σ_d ((y_d − ȳₙ,d) / τ_d)²)
//! ```
//!
//! where the sum runs over study points of y's symmetry class.

use ndarray::{s, Array2};
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{self, CellParams, GridCounts, ParamBatch, ParamSpace, SymmetryClass};
use crate::nnet::ModelState;
use crate::seed;
use crate::simulator::{self, SimConfig};

/// The fixed sweep on which model uncertainty is probed.
#[derive(Debug, Clone)]
pub struct StudySet {
    pub params: ParamBatch,
    /// Model inputs for each point, one row per entry of `params`.
    pub inputs: Array2<f64>,
    /// Grid step per class and free dimension (see [`lattice::Sweep`]).
    pub spacing: [Vec<f64>; 3],
}

impl StudySet {
    pub fn new(sweep: lattice::Sweep, inputs: Array2<f64>) -> Result<Self> {
        if sweep.params.len() != inputs.nrows() {
            return Err(Error::DimensionMismatch {
                expected: sweep.params.len(),
                got: inputs.nrows(),
            });
        }
        Ok(StudySet {
            params: sweep.params,
            inputs,
            spacing: sweep.spacing,
        })
    }

    /// Sweeps `counts` and simulates every point, pooling profiles to
    /// `input_dim` values.
    pub fn simulate(
        space: &ParamSpace,
        counts: &GridCounts,
        sim: &SimConfig,
        input_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let sweep = lattice::sweep_grid(space, counts)?;
        let out = simulator::simulate_batch_map(&sweep.params, space, sim, seed, |p, _| p.pooled(input_dim))?;
        Self::new(sweep, rows_to_matrix(&out.samples)?)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let width = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), width), flat).map_err(|_| Error::DimensionMismatch {
        expected: width,
        got: rows.iter().map(Vec::len).find(|&l| l != width).unwrap_or(0),
    })
}

const WEIGHT_CHUNK: usize = 1024;

/// Normalised predicted variances `σ̂²(S(ȳₙ)) / Σₘ σ̂²(S(ȳₘ))` over the study set.
pub fn compute_weights(model: &ModelState, study: &StudySet) -> Result<Vec<f64>> {
    if study.is_empty() {
        return Err(Error::InvalidArgument("study set is empty".into()));
    }
    let mut log_var = Vec::with_capacity(study.len());
    let mut lo = 0;
    while lo < study.len() {
        let hi = (lo + WEIGHT_CHUNK).min(study.len());
        let out = model.forward_batch(study.inputs.slice(s![lo..hi, ..]))?;
        log_var.extend(out.log_var.iter().copied());
        lo = hi;
    }
    weights_from_log_var(&log_var)
}

/// Softmax of the log variances; the common factor `exp(max)` cancels.
pub fn weights_from_log_var(log_var: &[f64]) -> Result<Vec<f64>> {
    if let Some((i, v)) = log_var.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite(format!("log variance {v} at study point {i}")));
    }
    let max = log_var.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = log_var.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    Ok(w)
}

/// Prior over the parameter space; both variants vanish outside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Prior {
    /// Constant on the support.
    Uniform,
    /// Isotropic Gaussian in normalised coordinates (each free parameter
    /// mapped to [0, 1) by its class range), truncated to the support.
    /// `center` is indexed (a, c, alpha).
    TruncGaussian { center: [f64; 3], scale: f64 },
}

impl Prior {
    /// Unnormalised density, bounded above by [`Prior::max_density`].
    pub fn density(&self, cell: &CellParams, space: &ParamSpace) -> f64 {
        if !space.contains(cell) {
            return 0.0;
        }
        match *self {
            Prior::Uniform => 1.0,
            Prior::TruncGaussian { center, scale } => {
                let q: f64 = cell
                    .class
                    .free_dims()
                    .iter()
                    .map(|&d| {
                        let u = space.range(cell.class, d).expect("free").normalize(cell.get(d));
                        ((u - center[d.slot()]) / scale).powi(2)
                    })
                    .sum();
                (-0.5 * q).exp()
            }
        }
    }

    pub fn max_density(&self) -> f64 {
        1.0
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Prior::Uniform => Ok(()),
            Prior::TruncGaussian { center, scale } => {
                if !(scale > 0.0 && scale.is_finite()) || center.iter().any(|c| !c.is_finite()) {
                    Err(Error::Config(format!("invalid truncated Gaussian prior {self:?}")))
                } else {
                    Ok(())
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub class: SymmetryClass,
    /// Free-parameter values of the study point.
    pub center: Vec<f64>,
    pub weight: f64,
}

/// The uncertainty-weighted mixture density; immutable once built.
#[derive(Debug, Clone)]
pub struct AlDensity {
    components: Vec<Component>,
    /// Spread per class and free dimension, same units as the parameter.
    tau: [Vec<f64>; 3],
    prior: Prior,
    space: ParamSpace,
    chooser: WeightedIndex<f64>,
}

/// Sampler gives up when fewer than this fraction of proposals are accepted
/// within one budget window.
pub const MIN_ACCEPTANCE: f64 = 1e-4;
pub const TRIAL_WINDOW: u64 = 1_000_000;

/// Samples together with how they were produced.
#[derive(Debug, Clone)]
pub struct SampleTrace {
    pub params: ParamBatch,
    /// Mixture component of each accepted sample.
    pub components: Vec<usize>,
    /// Component drawn for every proposal, accepted or not.
    pub proposals: Vec<usize>,
}

impl AlDensity {
    /// `tau_multiplier` scales the study grid spacing into the spread τ.
    pub fn new(study: &StudySet, weights: Vec<f64>, tau_multiplier: f64, prior: Prior, space: ParamSpace) -> Result<Self> {
        if weights.len() != study.len() {
            return Err(Error::DimensionMismatch {
                expected: study.len(),
                got: weights.len(),
            });
        }
        if !(tau_multiplier > 0.0 && tau_multiplier.is_finite()) {
            return Err(Error::InvalidArgument(format!("tau multiplier must be positive, got {tau_multiplier}")));
        }
        let tau = study.spacing.clone().map(|s| s.into_iter().map(|h| h * tau_multiplier).collect());
        let components = study
            .params
            .iter()
            .zip(&weights)
            .map(|(cell, &weight)| Component {
                class: cell.class,
                center: cell.free_values(),
                weight,
            })
            .collect();
        Self::from_components(components, tau, prior, space)
    }

    pub fn from_components(components: Vec<Component>, tau: [Vec<f64>; 3], prior: Prior, space: ParamSpace) -> Result<Self> {
        prior.validate()?;
        space.validate()?;
        if components.is_empty() {
            return Err(Error::InvalidArgument("mixture needs at least one component".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if components.iter().any(|c| c.weight.is_nan() || c.weight < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("weights must be nonnegative and sum to 1, sum = {total}")));
        }
        for c in &components {
            let t = &tau[c.class.index()];
            if t.len() != c.class.free_dims().len() || t.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidArgument(format!(
                    "tau for {} must be positive per free dimension, got {t:?}",
                    c.class.name()
                )));
            }
        }
        let chooser = WeightedIndex::new(components.iter().map(|c| c.weight))
            .map_err(|e| Error::InvalidArgument(format!("bad mixture weights: {e}")))?;
        Ok(AlDensity {
            components,
            tau,
            prior,
            space,
            chooser,
        })
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn tau(&self, class: SymmetryClass) -> &[f64] {
        &self.tau[class.index()]
    }

    /// Total weight of the components of each class.
    pub fn class_mass(&self) -> [f64; 3] {
        let mut mass = [0.0; 3];
        for c in &self.components {
            mass[c.class.index()] += c.weight;
        }
        mass
    }

    /// Unnormalised density at `cell`.
    pub fn density(&self, cell: &CellParams) -> f64 {
        let prior = self.prior.density(cell, &self.space);
        if prior == 0.0 {
            return 0.0;
        }
        let y = cell.free_values();
        let tau = &self.tau[cell.class.index()];
        let mix: f64 = self
            .components
            .iter()
            .filter(|c| c.class == cell.class)
            .map(|c| {
                let q: f64 = y
                    .iter()
                    .zip(&c.center)
                    .zip(tau)
                    .map(|((yv, cv), t)| ((yv - cv) / t).powi(2))
                    .sum();
                c.weight * (-0.5 * q).exp()
            })
            .sum();
        prior * mix
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<ParamBatch> {
        Ok(self.sample_traced(n, seed)?.params)
    }

    /// Draws `n` parameters: a component by weight, then a Gaussian offset
    /// over its class's free dimensions. Proposals leaving the support are
    /// redrawn from scratch, so accepted samples follow the mixture restricted
    /// to the support exactly. Non-uniform priors add an acceptance step with
    /// probability `prior(y) / max prior`.
    pub fn sample_traced(&self, n: usize, seed: u64) -> Result<SampleTrace> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        let mut rng = seed::rng(seed);
        let uniform_prior = matches!(self.prior, Prior::Uniform);
        let mut trace = SampleTrace {
            params: Vec::with_capacity(n),
            components: Vec::with_capacity(n),
            proposals: Vec::with_capacity(n),
        };
        let (mut trials, mut window_accepted) = (0u64, 0u64);
        let mut free = Vec::with_capacity(2);
        while trace.params.len() < n {
            trials += 1;
            let k = self.chooser.sample(&mut rng);
            trace.proposals.push(k);
            let comp = &self.components[k];
            let tau = &self.tau[comp.class.index()];
            free.clear();
            free.extend(comp.center.iter().zip(tau).map(|(c, t)| {
                let z: f64 = StandardNormal.sample(&mut rng);
                c + t * z
            }));
            let cell = CellParams::from_free(comp.class, &free);
            let accepted = self.space.contains(&cell)
                && (uniform_prior
                    || rng.random::<f64>() * self.prior.max_density() < self.prior.density(&cell, &self.space));
            if accepted {
                trace.params.push(cell);
                trace.components.push(k);
                window_accepted += 1;
            }
            if trials % TRIAL_WINDOW == 0 {
                let rate = window_accepted as f64 / TRIAL_WINDOW as f64;
                if rate < MIN_ACCEPTANCE {
                    return Err(Error::SamplingStalled { trials, rate });
                }
                window_accepted = 0;
            }
        }
        Ok(trace)
    }

    /// Per-component weights with the mass of the component's class:
    /// `component,class,weight,class_mass`.
    pub fn diagnostics_csv(&self) -> String {
        let mass = self.class_mass();
        let mut out = String::from("component,class,weight,class_mass\n");
        for (i, c) in self.components.iter().enumerate() {
            out.push_str(&format!("{i},{},{},{}\n", c.class.name(), c.weight, mass[c.class.index()]));
        }
        out
    }
}

/// One AL step: weights from the model on the study set, the mixture with
/// τ = `tau_multiplier` × grid spacing, then `n` samples.
pub fn next_batch(
    model: &ModelState,
    study: &StudySet,
    prior: Prior,
    space: &ParamSpace,
    tau_multiplier: f64,
    n: usize,
    seed: u64,
) -> Result<(AlDensity, ParamBatch)> {
    let weights = compute_weights(model, study)?;
    let density = AlDensity::new(study, weights, tau_multiplier, prior, *space)?;
    let batch = density.sample(n, seed)?;
    Ok((density, batch))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cubic_study(n: usize) -> StudySet {
        let sweep = lattice::sweep_grid(&ParamSpace::e1(), &GridCounts::cubic_only(n)).unwrap();
        let inputs = Array2::zeros((n, 4));
        StudySet::new(sweep, inputs).unwrap()
    }

    #[test]
    fn two_point_weights() {
        let w = weights_from_log_var(&[1f64.ln(), 3f64.ln()]).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-15 && (w[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn constant_log_var_gives_uniform_weights() {
        let w = weights_from_log_var(&[0.3; 8]).unwrap();
        assert!(w.iter().all(|&x| (x - 0.125).abs() < 1e-15));
    }

    #[test]
    fn non_finite_log_var_is_an_error() {
        assert!(matches!(weights_from_log_var(&[0.0, f64::NAN]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn single_component_density_is_a_gaussian() {
        let study = cubic_study(1);
        let d = AlDensity::new(&study, vec![1.0], 0.1, Prior::Uniform, ParamSpace::e1()).unwrap();
        let tau = d.tau(SymmetryClass::Cubic)[0];
        assert!((tau - 0.1).abs() < 1e-12);
        for a in [3.6, 3.9, 4.0, 4.05, 4.4] {
            let want = (-0.5 * ((a - 4.0) / tau).powi(2)).exp();
            assert!((d.density(&CellParams::cubic(a)) - want).abs() < 1e-14);
        }
        assert_eq!(d.density(&CellParams::cubic(4.6)), 0.0);
        assert_eq!(d.density(&CellParams::tetragonal(4.0, 4.0)), 0.0);
    }

    #[test]
    fn bad_weights_rejected() {
        let study = cubic_study(2);
        assert!(AlDensity::new(&study, vec![0.5, 0.6], 1.0, Prior::Uniform, ParamSpace::e1()).is_err());
        assert!(AlDensity::new(&study, vec![1.0], 1.0, Prior::Uniform, ParamSpace::e1()).is_err());
        assert!(AlDensity::new(&study, vec![0.5, 0.5], 0.0, Prior::Uniform, ParamSpace::e1()).is_err());
    }

    #[test]
    fn zero_samples_rejected() {
        let study = cubic_study(2);
        let d = AlDensity::new(&study, vec![0.5, 0.5], 1.0, Prior::Uniform, ParamSpace::e1()).unwrap();
        assert!(d.sample(0, 1).is_err());
    }

    #[test]
    fn unreachable_prior_stalls() {
        let study = cubic_study(1);
        let prior = Prior::TruncGaussian {
            center: [50.0, 0.5, 0.5],
            scale: 0.01,
        };
        let d = AlDensity::new(&study, vec![1.0], 1.0, prior, ParamSpace::e1()).unwrap();
        assert!(matches!(d.sample(10, 1), Err(Error::SamplingStalled { .. })));
    }

    #[test]
    fn truncated_gaussian_prior_shifts_samples() {
        let study = cubic_study(10);
        let w = vec![0.1; 10];
        let prior = Prior::TruncGaussian {
            center: [0.9, 0.5, 0.5],
            scale: 0.1,
        };
        let d = AlDensity::new(&study, w, 1.0, prior, ParamSpace::e1()).unwrap();
        let s = d.sample(4000, 3).unwrap();
        let mean = s.iter().map(|c| c.a).sum::<f64>() / s.len() as f64;
        assert!(mean > 4.2, "{mean}");
        assert!(s.iter().all(|c| ParamSpace::e1().contains(c)));
    }

    #[test]
    fn diagnostics_list_every_component() {
        let study = cubic_study(3);
        let d = AlDensity::new(&study, vec![0.2, 0.3, 0.5], 1.0, Prior::Uniform, ParamSpace::e1()).unwrap();
        let csv = d.diagnostics_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.contains("2,cubic,0.5,1"));
    }
}
