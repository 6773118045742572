//! One-dimensional Fokker–Planck evolution `ρ_t = −(vρ)_x + (Dρ)_xx` for the
//! continuum analog of SGD, with time measured in iterations.
//!
//! Finite volumes on cell centers. The face flux is
//! `F_{i+½} = v⁺ρ_i + v⁻ρ_{i+1} − (D_{i+1}ρ_{i+1} − D_iρ_i)/dx`,
//! upwinded by the sign of the face drift, zero at both walls, and advanced
//! with Crank–Nicolson using coefficients frozen at `t + dt/2`.
//!
//! The default [`FluxScheme::ExponentialFitting`] keeps the upwind direction
//! but weights the two neighbours by the local Péclet number, which removes
//! the first-order numerical diffusion of the plain upwind flux.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::csv::row;
use crate::error::{invalid, Error, Result};
use crate::objectives::{estimator_variance, EstimatorKind, ObjectiveFamily};
use crate::schedules::Schedule;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub n_cells: usize,
}

impl Grid1D {
    pub fn new(x_min: f64, x_max: f64, n_cells: usize) -> Result<Self> {
        if !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(invalid(format!("bad grid range [{x_min}, {x_max}]")));
        }
        if n_cells < 16 {
            return Err(invalid(format!("need at least 16 cells, got {n_cells}")));
        }
        Ok(Grid1D {
            x_min,
            x_max,
            n_cells,
        })
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_cells as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|i| self.center(i)).collect()
    }

    /// Position of the face between cells `i − 1` and `i`.
    pub fn face(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }
}

/// Step size as a function of iteration time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rate {
    /// A fixed `α`, zero allowed.
    Fixed { alpha: f64 },
    /// `α(t)` interpolating the schedule, `t = 0` at the first iteration.
    Schedule { schedule: Schedule },
}

impl Rate {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Rate::Fixed { alpha } => *alpha,
            Rate::Schedule { schedule } => schedule.rate_at(t),
        }
    }
}

impl From<Schedule> for Rate {
    fn from(schedule: Schedule) -> Self {
        Rate::Schedule { schedule }
    }
}

type CoefFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Face flux discretization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxScheme {
    /// Convection taken entirely from the upwind cell.
    Upwind,
    /// Scharfetter–Gummel weights `B(∓Pe)`, `B(z) = z/(eᶻ − 1)`, `Pe = v·dx/D`.
    /// Tends to [`FluxScheme::Upwind`] as `|Pe| → ∞` and to centered
    /// differences as `Pe → 0`.
    #[default]
    ExponentialFitting,
}

/// Drift `v(x, t)` and diffusion `D(x, t) ≥ 0`.
#[derive(Clone)]
pub struct DriftDiffusionProblem {
    pub drift: CoefFn,
    pub diffusion: CoefFn,
    pub label: String,
    pub scheme: FluxScheme,
}

impl fmt::Debug for DriftDiffusionProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriftDiffusionProblem")
            .field("label", &self.label)
            .finish()
    }
}

impl DriftDiffusionProblem {
    pub fn new(
        label: impl Into<String>,
        drift: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        diffusion: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        DriftDiffusionProblem {
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            label: label.into(),
            scheme: FluxScheme::default(),
        }
    }

    pub fn with_scheme(mut self, scheme: FluxScheme) -> Self {
        self.scheme = scheme;
        self
    }

    /// The same problem with the drift negated.
    pub fn reversed(&self) -> Self {
        let d = self.drift.clone();
        DriftDiffusionProblem {
            drift: Arc::new(move |x, t| -d(x, t)),
            diffusion: self.diffusion.clone(),
            label: format!("reversed {}", self.label),
            scheme: self.scheme,
        }
    }
}

/// SGD on `(x∓1)²`: drift `−2α(t)x`, diffusion `2α(t)²`.
pub fn build_problem_convex(rate: Rate) -> DriftDiffusionProblem {
    DriftDiffusionProblem::new(
        "convex1d",
        move |x, t| -2.0 * rate.at(t) * x,
        move |_, t| 2.0 * rate.at(t).powi(2),
    )
}

/// Drift `−α(t) f′(x)` and diffusion `½ α(t)² Var[∇̃f(x)]`, the variance
/// taken exactly from the component structure.
pub fn build_problem_from_objective(
    obj: Arc<dyn ObjectiveFamily>,
    kind: EstimatorKind,
    rate: Rate,
) -> Result<DriftDiffusionProblem> {
    if obj.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: obj.dim(),
        });
    }
    kind.validate(obj.as_ref())?;
    let label = obj.label();
    let o1 = obj.clone();
    Ok(DriftDiffusionProblem::new(
        label,
        move |x, t| {
            let mut g = [0.0];
            o1.gradient_into(&[x], &mut g, &mut [0.0]);
            -rate.at(t) * g[0]
        },
        move |x, t| {
            let var = estimator_variance(obj.as_ref(), kind, &[x]).unwrap_or(0.0);
            0.5 * rate.at(t).powi(2) * var
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityState {
    pub grid: Grid1D,
    /// Cell averages of `ρ`.
    pub values: Vec<f64>,
    pub time: f64,
}

impl DensityState {
    /// Normalizes `values` to unit mass.
    pub fn from_values(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells {
            return Err(Error::DimensionMismatch {
                expected: grid.n_cells,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(invalid("density values must be nonnegative"));
        }
        let mass: f64 = values.iter().sum::<f64>() * grid.dx();
        if !(mass > 0.0) {
            return Err(invalid("density has zero mass"));
        }
        Ok(DensityState {
            grid,
            values: values.into_iter().map(|v| v / mass).collect(),
            time: 0.0,
        })
    }

    /// Cell averages of a normal density, renormalized on the grid.
    pub fn gaussian(grid: Grid1D, mean: f64, variance: f64) -> Result<Self> {
        let n = Normal::new(mean, variance.sqrt()).map_err(|e| invalid(e.to_string()))?;
        let values = (0..grid.n_cells)
            .map(|i| (n.cdf(grid.face(i + 1)) - n.cdf(grid.face(i))) / grid.dx())
            .collect();
        Self::from_values(grid, values)
    }

    pub fn to_csv_rows(&self, out: &mut String) {
        for (x, r) in self.grid.centers().iter().zip(&self.values) {
            out.push_str(&format!("{}\n", row(&[self.time, *x, *r])));
        }
    }
}

/// `(mass, mean, second moment)` by cell-average quadrature.
pub fn density_moments(state: &DensityState) -> (f64, f64, f64) {
    let dx = state.grid.dx();
    let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (i, &r) in state.values.iter().enumerate() {
        let x = state.grid.center(i);
        m0 += r * dx;
        m1 += r * x * dx;
        m2 += r * x * x * dx;
    }
    (m0, m1 / m0, m2 / m0)
}

/// Solves a tridiagonal system in place; `sub[0]` and `sup[n−1]` are ignored.
pub fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64]) -> Result<()> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    if beta == 0.0 {
        return Err(Error::SingularSystem(0));
    }
    rhs[0] /= beta;
    for i in 1..n {
        c[i - 1] = sup[i - 1] / beta;
        beta = diag[i] - sub[i] * c[i - 1];
        if beta == 0.0 || !beta.is_finite() {
            return Err(Error::SingularSystem(i));
        }
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
    Ok(())
}

/// Tridiagonal operator `A` with `dρ/dt = Aρ` at time `t`.
fn assemble(
    grid: &Grid1D,
    problem: &DriftDiffusionProblem,
    t: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>, f64) {
    let n = grid.n_cells;
    let dx = grid.dx();
    let d: Vec<f64> = (0..n)
        .map(|i| (problem.diffusion)(grid.center(i), t))
        .collect();
    // v[i] lives on the face between cells i and i + 1
    let v: Vec<f64> = (1..n).map(|i| (problem.drift)(grid.face(i), t)).collect();
    let max_drift = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let (mut lo, mut di, mut up) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for (f, &vf) in v.iter().enumerate() {
        // flux through face f moves mass from cell f into f + 1
        let (l, r) = (f, f + 1);
        // F = c_l ρ_l + c_r ρ_r
        let d_face = 0.5 * (d[l] + d[r]);
        let (c_l, c_r) = match problem.scheme {
            FluxScheme::ExponentialFitting if d_face > 0.0 => {
                let pe = vf * dx / d_face;
                (bernoulli(-pe) * d[l] / dx, -bernoulli(pe) * d[r] / dx)
            }
            _ => (vf.max(0.0) + d[l] / dx, vf.min(0.0) - d[r] / dx),
        };
        let (a_l, a_r) = (c_l / dx, c_r / dx);
        di[l] -= a_l;
        up[l] -= a_r;
        lo[r] += a_l;
        di[r] += a_r;
    }
    (lo, di, up, max_drift)
}

/// `B(z) = z / (eᶻ − 1)`.
fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-10 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

/// One Crank–Nicolson step of length `dt`.
pub fn cn_step(
    state: &DensityState,
    problem: &DriftDiffusionProblem,
    dt: f64,
) -> Result<DensityState> {
    if !(dt > 0.0) {
        return Err(invalid("dt must be positive"));
    }
    let grid = state.grid;
    let n = grid.n_cells;
    let (lo, di, up, max_drift) = assemble(&grid, problem, state.time + 0.5 * dt);
    if dt * max_drift > grid.dx() * (1.0 + 1e-12) {
        return Err(invalid(format!(
            "dt = {dt} exceeds dx / max|drift| = {}",
            grid.dx() / max_drift
        )));
    }
    let h = 0.5 * dt;
    let r = &state.values;
    let mut rhs: Vec<f64> = (0..n)
        .map(|i| {
            let mut s = r[i] + h * di[i] * r[i];
            if i > 0 {
                s += h * lo[i] * r[i - 1];
            }
            if i + 1 < n {
                s += h * up[i] * r[i + 1];
            }
            s
        })
        .collect();
    let sub: Vec<f64> = lo.iter().map(|a| -h * a).collect();
    let diag: Vec<f64> = di.iter().map(|a| 1.0 - h * a).collect();
    let sup: Vec<f64> = up.iter().map(|a| -h * a).collect();
    solve_tridiagonal(&sub, &diag, &sup, &mut rhs)?;
    Ok(DensityState {
        grid,
        values: rhs,
        time: state.time + dt,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evolution {
    pub final_state: DensityState,
    /// States at the requested record times (snapped to the step grid).
    pub trail: Vec<DensityState>,
    /// Largest relative mass change over the run.
    pub max_mass_drift: f64,
    pub min_value: f64,
    pub warnings: Vec<String>,
}

impl Evolution {
    pub fn trail_csv(&self) -> String {
        let mut out = String::from("t,x,rho\n");
        for s in &self.trail {
            s.to_csv_rows(&mut out);
        }
        out
    }
}

/// Advances `initial` by `duration` with steps no longer than `dt`, keeping
/// snapshots at `record_times` (absolute times).
pub fn evolve(
    initial: &DensityState,
    problem: &DriftDiffusionProblem,
    duration: f64,
    dt: f64,
    record_times: &[f64],
) -> Result<Evolution> {
    if !(duration >= 0.0) || !(dt > 0.0) {
        return Err(invalid("need duration ≥ 0 and dt > 0"));
    }
    let n_steps = (duration / dt).ceil() as usize;
    let step = if n_steps > 0 {
        duration / n_steps as f64
    } else {
        0.0
    };
    let m0: f64 = initial.values.iter().sum::<f64>() * initial.grid.dx();
    let mut state = initial.clone();
    let mut trail = Vec::new();
    let mut pending: Vec<f64> = record_times.to_vec();
    pending.sort_by(f64::total_cmp);
    let mut next = 0;
    let mut max_mass_drift: f64 = 0.0;
    let mut min_value = state.values.iter().copied().fold(f64::INFINITY, f64::min);
    let t0 = initial.time;
    for k in 0..=n_steps {
        while next < pending.len() && pending[next] <= state.time + 0.5 * step {
            trail.push(state.clone());
            next += 1;
        }
        if k == n_steps {
            break;
        }
        state = cn_step(&state, problem, step)?;
        state.time = t0 + (k + 1) as f64 * step;
        let mass: f64 = state.values.iter().sum::<f64>() * state.grid.dx();
        max_mass_drift = max_mass_drift.max((mass - m0).abs() / m0);
        min_value = state.values.iter().copied().fold(min_value, f64::min);
    }
    let mut warnings = Vec::new();
    if min_value < -1e-12 {
        warnings.push(format!(
            "density undershoot {min_value:e}; consider a smaller dt"
        ));
    }
    Ok(Evolution {
        final_state: state,
        trail,
        max_mass_drift,
        min_value,
        warnings,
    })
}

/// RK4 integration of `F′ = −4α(t)F + 4α(t)²` from `F(0) = f0` to `t_end`.
pub fn second_moment_ode(rate: Rate, f0: f64, t_end: f64, dt: f64) -> Result<f64> {
    Ok(*second_moment_ode_path(rate, f0, t_end, dt)?.last().unwrap())
}

/// The same integration, returning `F` at every step `t = k·h`.
pub fn second_moment_ode_path(rate: Rate, f0: f64, t_end: f64, dt: f64) -> Result<Vec<f64>> {
    if !(f0 >= 0.0) {
        return Err(invalid("initial second moment must be nonnegative"));
    }
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(invalid("need dt > 0 and t_end ≥ 0"));
    }
    let n = (t_end / dt).ceil() as usize;
    let h = if n > 0 { t_end / n as f64 } else { 0.0 };
    let rhs = |t: f64, f: f64| {
        let a = rate.at(t);
        -4.0 * a * f + 4.0 * a * a
    };
    let mut f = f0;
    let mut path = Vec::with_capacity(n + 1);
    path.push(f);
    for k in 0..n {
        let t = k as f64 * h;
        let k1 = rhs(t, f);
        let k2 = rhs(t + 0.5 * h, f + 0.5 * h * k1);
        let k3 = rhs(t + 0.5 * h, f + 0.5 * h * k2);
        let k4 = rhs(t + h, f + h * k3);
        f += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        path.push(f);
    }
    Ok(path)
}

/// `Σ |p_i − q_i| dx` between densities on the same cells.
pub fn l1_distance(p: &[f64], q: &[f64], dx: f64) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>() * dx
}
