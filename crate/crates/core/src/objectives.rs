//! Sum-structured objectives `f = (1/N) Σ f_i` and their gradient estimators.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};

/// An objective of the form `f(w) = (1/N) Σ_i f_i(w)` over `R^d`.
///
/// Implementors provide the components; the averaged value, the exact
/// gradient and the stochastic estimators are derived from them.
pub trait ObjectiveFamily: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn n_components(&self) -> usize;
    fn component_value(&self, i: usize, w: &[f64]) -> f64;
    /// Writes `∇f_i(w)` into `out` (overwriting it).
    fn component_gradient(&self, i: usize, w: &[f64], out: &mut [f64]);
    fn label(&self) -> String;

    fn value(&self, w: &[f64]) -> f64 {
        let n = self.n_components();
        (0..n).map(|i| self.component_value(i, w)).sum::<f64>() / n as f64
    }

    /// Exact gradient into `out`; `scratch` must have length `dim`.
    fn gradient_into(&self, w: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        let n = self.n_components();
        out.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            self.component_gradient(i, w, scratch);
            out.iter_mut()
                .zip(scratch.iter())
                .for_each(|(g, s)| *g += s);
        }
        let inv = 1.0 / n as f64;
        out.iter_mut().for_each(|g| *g *= inv);
    }
}

pub type SharedObjective = Arc<dyn ObjectiveFamily>;

/// Which stochastic gradient estimator to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Average of `batch_size` component gradients, indices drawn uniformly
    /// without replacement.
    Minibatch { batch_size: usize },
    /// `d · ∂_j f(w) e_j` for a uniformly drawn coordinate `j`.
    Coordinate,
    /// `d · ∂_j f_i(w) e_j` for a uniformly drawn component `i` and coordinate `j`.
    Combined,
}

impl EstimatorKind {
    pub const SINGLE_SAMPLE: EstimatorKind = EstimatorKind::Minibatch { batch_size: 1 };

    pub fn validate(&self, obj: &dyn ObjectiveFamily) -> Result<()> {
        if let EstimatorKind::Minibatch { batch_size } = *self {
            if batch_size == 0 || batch_size > obj.n_components() {
                return Err(invalid(format!(
                    "batch size {batch_size} outside 1..={}",
                    obj.n_components()
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorKind::Minibatch { batch_size } => write!(f, "minibatch:{batch_size}"),
            EstimatorKind::Coordinate => write!(f, "coordinate"),
            EstimatorKind::Combined => write!(f, "combined"),
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(EstimatorKind::SINGLE_SAMPLE),
            "coordinate" | "cd" => Ok(EstimatorKind::Coordinate),
            "combined" => Ok(EstimatorKind::Combined),
            _ => {
                let b = s
                    .strip_prefix("minibatch:")
                    .ok_or_else(|| crate::Error::Parse(format!("unknown estimator '{s}'")))?;
                let batch_size = b
                    .parse()
                    .map_err(|_| crate::Error::Parse(format!("bad batch size in '{s}'")))?;
                Ok(EstimatorKind::Minibatch { batch_size })
            }
        }
    }
}

/// Reusable buffers for estimator draws inside hot loops.
#[derive(Debug, Clone)]
pub struct GradientWorkspace {
    scratch: Vec<f64>,
    full: Vec<f64>,
    indices: Vec<usize>,
}

impl GradientWorkspace {
    pub fn new(dim: usize) -> Self {
        Self {
            scratch: vec![0.0; dim],
            full: vec![0.0; dim],
            indices: Vec::new(),
        }
    }

    /// Exact gradient into `out`.
    pub fn exact(&mut self, obj: &dyn ObjectiveFamily, w: &[f64], out: &mut [f64]) {
        obj.gradient_into(w, out, &mut self.scratch);
    }

    /// One estimator draw into `out`. The kind must already be validated.
    pub fn draw<R: Rng + ?Sized>(
        &mut self,
        obj: &dyn ObjectiveFamily,
        w: &[f64],
        kind: EstimatorKind,
        rng: &mut R,
        out: &mut [f64],
    ) {
        let d = obj.dim();
        let n = obj.n_components();
        match kind {
            EstimatorKind::Minibatch { batch_size: 1 } => {
                let i = rng.gen_range(0..n);
                obj.component_gradient(i, w, out);
            }
            EstimatorKind::Minibatch { batch_size } => {
                sample_without_replacement(rng, n, batch_size, &mut self.indices);
                out.iter_mut().for_each(|g| *g = 0.0);
                for &i in &self.indices {
                    obj.component_gradient(i, w, &mut self.scratch);
                    out.iter_mut().zip(&self.scratch).for_each(|(g, s)| *g += s);
                }
                let inv = 1.0 / batch_size as f64;
                out.iter_mut().for_each(|g| *g *= inv);
            }
            EstimatorKind::Coordinate => {
                let j = rng.gen_range(0..d);
                obj.gradient_into(w, &mut self.full, &mut self.scratch);
                out.iter_mut().for_each(|g| *g = 0.0);
                out[j] = d as f64 * self.full[j];
            }
            EstimatorKind::Combined => {
                let i = rng.gen_range(0..n);
                let j = rng.gen_range(0..d);
                obj.component_gradient(i, w, &mut self.scratch);
                out.iter_mut().for_each(|g| *g = 0.0);
                out[j] = d as f64 * self.scratch[j];
            }
        }
    }
}

/// Partial Fisher–Yates over `0..n`, leaving `b` distinct indices in `out`.
fn sample_without_replacement<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    b: usize,
    out: &mut Vec<usize>,
) {
    out.clear();
    out.extend(0..n);
    for k in 0..b {
        let j = rng.gen_range(k..n);
        out.swap(k, j);
    }
    out.truncate(b);
}

/// `∇f(w) = (1/N) Σ_i ∇f_i(w)`.
pub fn full_gradient(obj: &dyn ObjectiveFamily, w: &[f64]) -> Result<Vec<f64>> {
    check_dim(obj.dim(), w.len())?;
    let mut out = vec![0.0; w.len()];
    obj.gradient_into(w, &mut out, &mut vec![0.0; w.len()]);
    Ok(out)
}

/// One draw of the stochastic gradient estimator `∇̃f(w)`.
pub fn estimate_gradient<R: Rng + ?Sized>(
    obj: &dyn ObjectiveFamily,
    w: &[f64],
    kind: EstimatorKind,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_dim(obj.dim(), w.len())?;
    kind.validate(obj)?;
    let mut out = vec![0.0; w.len()];
    GradientWorkspace::new(w.len()).draw(obj, w, kind, rng, &mut out);
    Ok(out)
}

/// Exact `E|∇̃f(w)|² − |∇f(w)|²` (trace of the estimator covariance), from the
/// component structure.
pub fn estimator_variance(
    obj: &dyn ObjectiveFamily,
    kind: EstimatorKind,
    w: &[f64],
) -> Result<f64> {
    check_dim(obj.dim(), w.len())?;
    kind.validate(obj)?;
    let d = obj.dim();
    let n = obj.n_components();
    let full = full_gradient(obj, w)?;
    let full_sq: f64 = full.iter().map(|g| g * g).sum();
    let mut g = vec![0.0; d];
    let var = match kind {
        EstimatorKind::Minibatch { batch_size } => {
            if n == 1 {
                0.0
            } else {
                let spread: f64 = (0..n)
                    .map(|i| {
                        obj.component_gradient(i, w, &mut g);
                        g.iter()
                            .zip(&full)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                    })
                    .sum::<f64>()
                    / n as f64;
                let b = batch_size as f64;
                (n as f64 - b) / (b * (n as f64 - 1.0)) * spread
            }
        }
        EstimatorKind::Coordinate => (d as f64 - 1.0) * full_sq,
        EstimatorKind::Combined => {
            let mean_sq: f64 = (0..n)
                .map(|i| {
                    obj.component_gradient(i, w, &mut g);
                    g.iter().map(|x| x * x).sum::<f64>()
                })
                .sum::<f64>()
                / n as f64;
            d as f64 * mean_sq - full_sq
        }
    };
    Ok(var.max(0.0))
}

/// The convex pair `f_1 = (x−1)²`, `f_2 = (x+1)²`, so `f(x) = x² + 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Convex1d;

pub fn make_convex_1d() -> Convex1d {
    Convex1d
}

impl ObjectiveFamily for Convex1d {
    fn dim(&self) -> usize {
        1
    }
    fn n_components(&self) -> usize {
        2
    }
    fn component_value(&self, i: usize, w: &[f64]) -> f64 {
        let shift = if i == 0 { -1.0 } else { 1.0 };
        (w[0] + shift).powi(2)
    }
    fn component_gradient(&self, i: usize, w: &[f64], out: &mut [f64]) {
        let shift = if i == 0 { -1.0 } else { 1.0 };
        out[0] = 2.0 * (w[0] + shift);
    }
    fn label(&self) -> String {
        "convex1d".into()
    }
}

/// The double-well `f(x) = x⁴ + 3x³ − 4x + 2` split as `f ∓ σx`.
#[derive(Debug, Clone, Copy)]
pub struct Nonconvex1d {
    sigma: f64,
}

pub fn make_nonconvex_1d(sigma: f64) -> Result<Nonconvex1d> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("sigma must be positive, got {sigma}")));
    }
    Ok(Nonconvex1d { sigma })
}

impl Nonconvex1d {
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn base_value(x: f64) -> f64 {
        ((x + 3.0) * x * x - 4.0) * x + 2.0
    }

    pub fn base_derivative(x: f64) -> f64 {
        (4.0 * x + 9.0) * x * x - 4.0
    }
}

impl ObjectiveFamily for Nonconvex1d {
    fn dim(&self) -> usize {
        1
    }
    fn n_components(&self) -> usize {
        2
    }
    fn component_value(&self, i: usize, w: &[f64]) -> f64 {
        let sign = if i == 0 { -1.0 } else { 1.0 };
        Self::base_value(w[0]) + sign * self.sigma * w[0]
    }
    fn component_gradient(&self, i: usize, w: &[f64], out: &mut [f64]) {
        let sign = if i == 0 { -1.0 } else { 1.0 };
        out[0] = Self::base_derivative(w[0]) + sign * self.sigma;
    }
    fn label(&self) -> String {
        format!("nonconvex1d:{}", self.sigma)
    }
}

/// One linear perturbation `g_i(x) = c_i·x + d_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearOffset {
    pub c: Vec<f64>,
    pub d: f64,
}

/// Quadratic `f(x) = ½ xᵀQx` with components `f_i = f − c_i·x − d_i`.
#[derive(Debug, Clone)]
pub struct QuadraticLinearNoise {
    quadratic: DMatrix<f64>,
    offsets: Vec<LinearOffset>,
}

/// JSON description of a quadratic family, `quadratic` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticLinearSpec {
    pub dim: usize,
    pub quadratic: Vec<f64>,
    pub offsets: Vec<LinearOffset>,
}

pub fn make_quadratic_linear_noise(
    dim: usize,
    quadratic: &[f64],
    offsets: Vec<LinearOffset>,
) -> Result<QuadraticLinearNoise> {
    if dim == 0 {
        return Err(invalid("dimension must be positive"));
    }
    check_dim(dim * dim, quadratic.len())?;
    if offsets.is_empty() {
        return Err(invalid("at least one component is required"));
    }
    for o in &offsets {
        check_dim(dim, o.c.len())?;
    }
    let q = DMatrix::from_row_slice(dim, dim, quadratic);
    if (&q - q.transpose()).amax() > 1e-12 {
        return Err(invalid("quadratic form is not symmetric"));
    }
    let min_eig = SymmetricEigen::new(q.clone()).eigenvalues.min();
    if min_eig < -1e-12 {
        return Err(invalid(format!(
            "quadratic form not PSD (eigenvalue {min_eig})"
        )));
    }
    let sum_d: f64 = offsets.iter().map(|o| o.d).sum();
    let c_sum_max = (0..dim)
        .map(|k| offsets.iter().map(|o| o.c[k]).sum::<f64>().abs())
        .fold(0.0, f64::max);
    if sum_d.abs() > 1e-12 || c_sum_max > 1e-12 {
        return Err(invalid("offsets must sum to zero"));
    }
    Ok(QuadraticLinearNoise {
        quadratic: q,
        offsets,
    })
}

impl QuadraticLinearSpec {
    pub fn build(&self) -> Result<QuadraticLinearNoise> {
        make_quadratic_linear_noise(self.dim, &self.quadratic, self.offsets.clone())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| crate::Error::Parse(e.to_string()))
    }
}

impl ObjectiveFamily for QuadraticLinearNoise {
    fn dim(&self) -> usize {
        self.quadratic.nrows()
    }
    fn n_components(&self) -> usize {
        self.offsets.len()
    }
    fn component_value(&self, i: usize, w: &[f64]) -> f64 {
        let d = self.dim();
        let mut quad = 0.0;
        for r in 0..d {
            for c in 0..d {
                quad += w[r] * self.quadratic[(r, c)] * w[c];
            }
        }
        let o = &self.offsets[i];
        0.5 * quad - o.c.iter().zip(w).map(|(c, x)| c * x).sum::<f64>() - o.d
    }
    fn component_gradient(&self, i: usize, w: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let o = &self.offsets[i];
        for r in 0..d {
            out[r] = (0..d).map(|c| self.quadratic[(r, c)] * w[c]).sum::<f64>() - o.c[r];
        }
    }
    fn label(&self) -> String {
        format!(
            "quadratic-linear(d={}, N={})",
            self.dim(),
            self.offsets.len()
        )
    }
}

/// Empirical regularity constants over a ball of radius `region_radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimate {
    pub hessian_bound: f64,
    pub estimator_variance: f64,
    pub region_radius: f64,
}

/// Central finite-difference Hessian of `f`, built from exact gradients with
/// step `1e-4 · max(1, |w|)` and symmetrized.
pub fn finite_difference_hessian(obj: &dyn ObjectiveFamily, w: &[f64]) -> DMatrix<f64> {
    let d = obj.dim();
    let h = 1e-4 * norm(w).max(1.0);
    let mut hess = DMatrix::zeros(d, d);
    let mut scratch = vec![0.0; d];
    let mut gp = vec![0.0; d];
    let mut gm = vec![0.0; d];
    let mut x = w.to_vec();
    for k in 0..d {
        x[k] = w[k] + h;
        obj.gradient_into(&x, &mut gp, &mut scratch);
        x[k] = w[k] - h;
        obj.gradient_into(&x, &mut gm, &mut scratch);
        x[k] = w[k];
        for j in 0..d {
            hess[(j, k)] = (gp[j] - gm[j]) / (2.0 * h);
        }
    }
    0.5 * (&hess + hess.transpose())
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.amax()
}

/// Bounds evaluated on the subset of `points` inside the ball of radius `radius`.
/// Shrinking the radius on a fixed point set can only drop points, so both
/// bounds are nondecreasing in the radius.
pub fn estimate_bounds_on(
    obj: &dyn ObjectiveFamily,
    kind: EstimatorKind,
    points: &[Vec<f64>],
    radius: f64,
) -> Result<BoundEstimate> {
    if !(radius > 0.0) {
        return Err(invalid("radius must be positive"));
    }
    let mut est = BoundEstimate {
        hessian_bound: 0.0,
        estimator_variance: 0.0,
        region_radius: radius,
    };
    for p in points.iter().filter(|p| norm(p) <= radius) {
        check_dim(obj.dim(), p.len())?;
        est.hessian_bound = est
            .hessian_bound
            .max(spectral_norm(&finite_difference_hessian(obj, p)));
        est.estimator_variance = est
            .estimator_variance
            .max(estimator_variance(obj, kind, p)?);
    }
    Ok(est)
}

/// Samples `n_samples` points uniformly in the ball `|w| ≤ radius` and bounds
/// the Hessian norm and the estimator variance over them.
pub fn estimate_bounds<R: Rng + ?Sized>(
    obj: &dyn ObjectiveFamily,
    kind: EstimatorKind,
    radius: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<BoundEstimate> {
    if n_samples == 0 {
        return Err(invalid("n_samples must be at least 1"));
    }
    let points: Vec<Vec<f64>> = (0..n_samples)
        .map(|_| sample_ball(rng, obj.dim(), radius))
        .collect();
    estimate_bounds_on(obj, kind, &points, radius)
}

/// Uniform point in the `dim`-ball of the given radius.
pub fn sample_ball<R: Rng + ?Sized>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let len = norm(&v).max(f64::MIN_POSITIVE);
    let r = radius * rng.gen::<f64>().powf(1.0 / dim as f64);
    v.iter_mut().for_each(|x| *x *= r / len);
    v
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}
