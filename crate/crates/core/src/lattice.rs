//! Symmetry classes, their constrained parameter spaces, d-spacing geometry
//! and parameter sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Crystallographic symmetry classes handled by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymmetryClass {
    /// a = b = c, α = β = γ = 90°.
    Cubic,
    /// a = b = c, α = β = γ ≠ 90°.
    Trigonal,
    /// a = b ≠ c, α = β = γ = 90°.
    Tetragonal,
}

/// A lattice parameter that can be free for some class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dim {
    A,
    C,
    Alpha,
}

impl Dim {
    /// Position of this parameter in the 3-vector `(a, c, alpha)`.
    pub fn slot(self) -> usize {
        match self {
            Dim::A => 0,
            Dim::C => 1,
            Dim::Alpha => 2,
        }
    }
}

impl SymmetryClass {
    pub const ALL: [SymmetryClass; 3] = [
        SymmetryClass::Cubic,
        SymmetryClass::Trigonal,
        SymmetryClass::Tetragonal,
    ];

    /// Label used by the classifier head.
    pub fn index(self) -> usize {
        match self {
            SymmetryClass::Cubic => 0,
            SymmetryClass::Trigonal => 1,
            SymmetryClass::Tetragonal => 2,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("class index {i} out of range")))
    }

    pub fn free_dims(self) -> &'static [Dim] {
        match self {
            SymmetryClass::Cubic => &[Dim::A],
            SymmetryClass::Trigonal => &[Dim::A, Dim::Alpha],
            SymmetryClass::Tetragonal => &[Dim::A, Dim::C],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SymmetryClass::Cubic => "cubic",
            SymmetryClass::Trigonal => "trigonal",
            SymmetryClass::Tetragonal => "tetragonal",
        }
    }
}

/// One point of the parameter space: a class plus its lattice lengths and angle.
///
/// `c` equals `a` for cubic and trigonal cells, `alpha` is 90° for cubic and
/// tetragonal cells. Use the class constructors to keep those fields consistent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub class: SymmetryClass,
    pub a: f64,
    pub c: f64,
    pub alpha: f64,
}

impl CellParams {
    pub fn cubic(a: f64) -> Self {
        CellParams {
            class: SymmetryClass::Cubic,
            a,
            c: a,
            alpha: 90.0,
        }
    }

    pub fn trigonal(a: f64, alpha: f64) -> Self {
        CellParams {
            class: SymmetryClass::Trigonal,
            a,
            c: a,
            alpha,
        }
    }

    pub fn tetragonal(a: f64, c: f64) -> Self {
        CellParams {
            class: SymmetryClass::Tetragonal,
            a,
            c,
            alpha: 90.0,
        }
    }

    /// Builds a cell from the values of its class's free parameters, in
    /// [`SymmetryClass::free_dims`] order.
    pub fn from_free(class: SymmetryClass, free: &[f64]) -> Self {
        debug_assert_eq!(free.len(), class.free_dims().len());
        match class {
            SymmetryClass::Cubic => Self::cubic(free[0]),
            SymmetryClass::Trigonal => Self::trigonal(free[0], free[1]),
            SymmetryClass::Tetragonal => Self::tetragonal(free[0], free[1]),
        }
    }

    pub fn get(&self, dim: Dim) -> f64 {
        match dim {
            Dim::A => self.a,
            Dim::C => self.c,
            Dim::Alpha => self.alpha,
        }
    }

    /// Free-parameter values in [`SymmetryClass::free_dims`] order.
    pub fn free_values(&self) -> Vec<f64> {
        self.class.free_dims().iter().map(|&d| self.get(d)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.a.is_finite() && self.c.is_finite() && self.alpha.is_finite();
        if !finite || self.a <= 0.0 || self.c <= 0.0 {
            return Err(Error::InvalidArgument(format!("invalid cell lengths in {self:?}")));
        }
        if !(self.alpha > 0.0 && self.alpha < 180.0) {
            return Err(Error::InvalidArgument(format!("invalid cell angle in {self:?}")));
        }
        let consistent = match self.class {
            SymmetryClass::Cubic => self.c == self.a && self.alpha == 90.0,
            SymmetryClass::Trigonal => self.c == self.a,
            SymmetryClass::Tetragonal => self.alpha == 90.0,
        };
        if !consistent {
            return Err(Error::InvalidArgument(format!(
                "constrained fields do not match the {} class in {self:?}",
                self.class.name()
            )));
        }
        // a rhombohedral cell needs a positive volume
        if self.class == SymmetryClass::Trigonal {
            let ca = self.alpha.to_radians().cos();
            if 1.0 - 3.0 * ca * ca + 2.0 * ca * ca * ca <= 0.0 {
                return Err(Error::InvalidArgument(format!("degenerate trigonal cell {self:?}")));
            }
        }
        Ok(())
    }

    /// Direct metric tensor G with G_ij = a_i · a_j, for lengths (a, a, c)
    /// and all three angles equal to `alpha`.
    pub fn metric_tensor(&self) -> [[f64; 3]; 3] {
        let lengths = [self.a, self.a, self.c];
        let cos = self.alpha.to_radians().cos();
        let mut g = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let cij = if i == j { 1.0 } else { cos };
                g[i][j] = lengths[i] * lengths[j] * cij;
            }
        }
        g
    }

    pub fn reciprocal_metric_tensor(&self) -> [[f64; 3]; 3] {
        invert3(&self.metric_tensor())
    }
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let adj = [
        [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
        [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
        [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
    ];
    let det = m[0][0] * adj[0][0] + m[0][1] * adj[1][0] + m[0][2] * adj[2][0];
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            inv[i][j] = adj[i][j] / det;
        }
    }
    inv
}

/// Interplanar spacing for Miller indices `hkl`, from 1/d² = hᵀ G* h.
pub fn d_spacing(cell: &CellParams, hkl: [i32; 3]) -> Result<f64> {
    if hkl == [0, 0, 0] {
        return Err(Error::InvalidArgument("hkl = (0,0,0) has no d-spacing".into()));
    }
    cell.validate()?;
    Ok(d_spacing_with(&cell.reciprocal_metric_tensor(), hkl))
}

/// Same as [`d_spacing`] with a precomputed reciprocal metric tensor.
pub(crate) fn d_spacing_with(gstar: &[[f64; 3]; 3], hkl: [i32; 3]) -> f64 {
    let h = [hkl[0] as f64, hkl[1] as f64, hkl[2] as f64];
    let mut q = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            q += h[i] * gstar[i][j] * h[j];
        }
    }
    1.0 / q.sqrt()
}

/// Half-open interval `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x < self.hi
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.lo) / self.width()
    }

    pub fn denormalize(&self, u: f64) -> f64 {
        self.lo + u * self.width()
    }
}

/// Per-class ranges of the free parameters.
///
/// Trigonal and tetragonal share one length range in the presets; trigonal
/// cells have c ≡ a so only tetragonal uses `tetragonal_c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpace {
    pub cubic_a: Range,
    pub trigonal_a: Range,
    pub trigonal_alpha: Range,
    pub tetragonal_a: Range,
    pub tetragonal_c: Range,
}

impl ParamSpace {
    /// Ranges of the smaller experiment.
    pub fn e1() -> Self {
        ParamSpace {
            cubic_a: Range::new(3.5, 4.5),
            trigonal_a: Range::new(3.8, 4.2),
            trigonal_alpha: Range::new(60.0, 120.0),
            tetragonal_a: Range::new(3.8, 4.2),
            tetragonal_c: Range::new(3.8, 4.2),
        }
    }

    /// Ranges of the larger experiment.
    pub fn e2() -> Self {
        ParamSpace {
            cubic_a: Range::new(2.5, 5.5),
            trigonal_a: Range::new(3.5, 4.5),
            trigonal_alpha: Range::new(30.0, 120.0),
            tetragonal_a: Range::new(3.5, 4.5),
            tetragonal_c: Range::new(3.5, 4.5),
        }
    }

    /// Looks up a preset by name; the desk presets share the full-size ranges.
    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_uppercase().as_str() {
            "E1" | "E1-DESK" => Some(Self::e1()),
            "E2" | "E2-DESK" => Some(Self::e2()),
            _ => None,
        }
    }

    /// Range of `dim` for `class`, or `None` when the parameter is fixed.
    pub fn range(&self, class: SymmetryClass, dim: Dim) -> Option<Range> {
        match (class, dim) {
            (SymmetryClass::Cubic, Dim::A) => Some(self.cubic_a),
            (SymmetryClass::Trigonal, Dim::A) => Some(self.trigonal_a),
            (SymmetryClass::Trigonal, Dim::Alpha) => Some(self.trigonal_alpha),
            (SymmetryClass::Tetragonal, Dim::A) => Some(self.tetragonal_a),
            (SymmetryClass::Tetragonal, Dim::C) => Some(self.tetragonal_c),
            _ => None,
        }
    }

    /// Free-parameter ranges for `class` in [`SymmetryClass::free_dims`] order.
    pub fn free_ranges(&self, class: SymmetryClass) -> Vec<Range> {
        class
            .free_dims()
            .iter()
            .map(|&d| self.range(class, d).expect("free dims have ranges"))
            .collect()
    }

    pub fn contains(&self, cell: &CellParams) -> bool {
        cell.validate().is_ok()
            && cell
                .class
                .free_dims()
                .iter()
                .all(|&d| self.range(cell.class, d).is_some_and(|r| r.contains(cell.get(d))))
    }

    pub fn validate(&self) -> Result<()> {
        for class in SymmetryClass::ALL {
            for (dim, r) in class.free_dims().iter().zip(self.free_ranges(class)) {
                if !(r.lo.is_finite() && r.hi.is_finite() && r.lo < r.hi) {
                    return Err(Error::Config(format!(
                        "{} range for {:?} must satisfy lo < hi, got [{}, {})",
                        class.name(),
                        dim,
                        r.lo,
                        r.hi
                    )));
                }
                let positive = match dim {
                    Dim::Alpha => r.lo > 0.0 && r.hi <= 180.0,
                    _ => r.lo > 0.0,
                };
                if !positive {
                    return Err(Error::Config(format!(
                        "{} range for {:?} is not physical: [{}, {})",
                        class.name(),
                        dim,
                        r.lo,
                        r.hi
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Ordered list of parameter points.
pub type ParamBatch = Vec<CellParams>;

/// Samples `counts[class.index()]` cells per class, each uniform over its
/// class's free-parameter box. Classes are emitted in index order.
pub fn sample_uniform(space: &ParamSpace, counts: [usize; 3], seed: u64) -> Result<ParamBatch> {
    space.validate()?;
    let mut rng = seed::rng(seed);
    let mut out = Vec::with_capacity(counts.iter().sum());
    for class in SymmetryClass::ALL {
        let ranges = space.free_ranges(class);
        for _ in 0..counts[class.index()] {
            let free: Vec<f64> = ranges.iter().map(|r| rng.random_range(r.lo..r.hi)).collect();
            out.push(CellParams::from_free(class, &free));
        }
    }
    Ok(out)
}

/// Points per free dimension for each class of an equally spaced sweep.
/// A class whose counts are all zero is left out of the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridCounts {
    pub cubic: usize,
    /// (a, alpha)
    pub trigonal: [usize; 2],
    /// (a, c)
    pub tetragonal: [usize; 2],
}

impl GridCounts {
    /// Splits `total` evenly over the three classes. Two-dimensional classes
    /// use the most balanced exact factorisation of their share when one
    /// exists (aspect ratio ≤ 2), otherwise a rounded square grid.
    pub fn for_total(total: usize) -> Self {
        let share = total / 3;
        let rem = total - 3 * share;
        let pair = balanced_pair(share);
        GridCounts {
            cubic: share + rem,
            trigonal: pair,
            tetragonal: pair,
        }
    }

    pub fn cubic_only(n: usize) -> Self {
        GridCounts {
            cubic: n,
            trigonal: [0, 0],
            tetragonal: [0, 0],
        }
    }

    pub fn per_class(&self, class: SymmetryClass) -> Vec<usize> {
        match class {
            SymmetryClass::Cubic => vec![self.cubic],
            SymmetryClass::Trigonal => self.trigonal.to_vec(),
            SymmetryClass::Tetragonal => self.tetragonal.to_vec(),
        }
    }

    pub fn total(&self) -> usize {
        SymmetryClass::ALL
            .iter()
            .map(|&c| self.per_class(c).iter().product::<usize>())
            .sum()
    }
}

fn balanced_pair(n: usize) -> [usize; 2] {
    if n == 0 {
        return [0, 0];
    }
    let root = (n as f64).sqrt();
    let mut d = root.floor() as usize;
    while d > 1 && !n.is_multiple_of(d) {
        d -= 1;
    }
    if d >= 1 && n.is_multiple_of(d) && (n / d) as f64 / d as f64 <= 2.0 {
        [d, n / d]
    } else {
        let r = root.round().max(1.0) as usize;
        [r, r]
    }
}

/// An equally spaced sweep together with its per-class grid steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub params: ParamBatch,
    /// Grid step per free dimension, indexed by class index, in
    /// [`SymmetryClass::free_dims`] order. Empty for classes not swept.
    pub spacing: [Vec<f64>; 3],
}

/// Cell-centred Cartesian grids per class, concatenated in class order.
/// Point `i` along a dimension sits at `lo + (i + ½)·step`.
pub fn sweep_grid(space: &ParamSpace, counts: &GridCounts) -> Result<Sweep> {
    space.validate()?;
    let mut params = Vec::with_capacity(counts.total());
    let mut spacing: [Vec<f64>; 3] = Default::default();
    for class in SymmetryClass::ALL {
        let n = counts.per_class(class);
        if n.iter().all(|&k| k == 0) {
            continue;
        }
        if n.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "sweep for {} needs at least one point per free dimension, got {:?}",
                class.name(),
                n
            )));
        }
        let ranges = space.free_ranges(class);
        let steps: Vec<f64> = ranges.iter().zip(&n).map(|(r, &k)| r.width() / k as f64).collect();
        let axis = |d: usize, i: usize| ranges[d].lo + (i as f64 + 0.5) * steps[d];
        match n.as_slice() {
            [n0] => params.extend((0..*n0).map(|i| CellParams::from_free(class, &[axis(0, i)]))),
            [n0, n1] => {
                for i in 0..*n0 {
                    for j in 0..*n1 {
                        params.push(CellParams::from_free(class, &[axis(0, i), axis(1, j)]));
                    }
                }
            }
            _ => unreachable!("classes have one or two free parameters"),
        }
        spacing[class.index()] = steps;
    }
    Ok(Sweep { params, spacing })
}
