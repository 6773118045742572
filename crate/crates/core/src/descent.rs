//! GD, SGD and SCD iteration `w_{m+1} = w_m − α_m ∇̃f(w_m)`, with an optional
//! box penalty, trajectory recording and time-averaged sampling.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::csv::{num, row};
use crate::error::{check_dim, invalid, Error, Result};
use crate::objectives::{
    norm_sq, EstimatorKind, GradientWorkspace, ObjectiveFamily, SharedObjective,
};
use crate::rng::trial_rng;
use crate::schedules::Schedule;

/// How the search direction is obtained at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    Exact,
    Stochastic(EstimatorKind),
}

impl std::fmt::Display for StepRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StepRule::Exact => write!(f, "gd"),
            StepRule::Stochastic(k) => write!(f, "{k}"),
        }
    }
}

impl std::str::FromStr for StepRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gd" | "exact" => Ok(StepRule::Exact),
            _ => Ok(StepRule::Stochastic(s.parse()?)),
        }
    }
}

/// `ψ(w) = K Σ_k ((l_k − w_k)⁺)^d + K Σ_k ((w_k − u_k)⁺)^d + K Σ_g ((Σ_{k∈g} w_k − 1)⁺)^d`.
///
/// The last sum runs over `simplex_groups`, coordinate sets whose total must
/// not exceed one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub strength: f64,
    pub exponent: u32,
    #[serde(default)]
    pub scaled_by_alpha: bool,
    #[serde(default)]
    pub simplex_groups: Vec<Vec<usize>>,
}

impl PenaltySpec {
    pub fn new_box(lower: Vec<f64>, upper: Vec<f64>, strength: f64, exponent: u32) -> Result<Self> {
        let p = PenaltySpec {
            lower,
            upper,
            strength,
            exponent,
            scaled_by_alpha: false,
            simplex_groups: Vec::new(),
        };
        p.validate(p.lower.len())?;
        Ok(p)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        check_dim(dim, self.lower.len())?;
        check_dim(dim, self.upper.len())?;
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l < u)) {
            return Err(invalid("penalty box needs lower < upper"));
        }
        if !(self.strength > 0.0) || self.exponent == 0 {
            return Err(invalid("penalty strength and exponent must be positive"));
        }
        if self.simplex_groups.iter().flatten().any(|&k| k >= dim) {
            return Err(invalid("simplex group index out of range"));
        }
        Ok(())
    }

    fn term(&self, violation: f64) -> f64 {
        if violation > 0.0 {
            self.strength * violation.powi(self.exponent as i32)
        } else {
            0.0
        }
    }

    /// Derivative of `K (v⁺)^d` with respect to `v`.
    fn slope(&self, violation: f64) -> f64 {
        if violation > 0.0 {
            self.strength * self.exponent as f64 * violation.powi(self.exponent as i32 - 1)
        } else {
            0.0
        }
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        let mut v = 0.0;
        for k in 0..w.len() {
            v += self.term(self.lower[k] - w[k]) + self.term(w[k] - self.upper[k]);
        }
        for g in &self.simplex_groups {
            v += self.term(g.iter().map(|&k| w[k]).sum::<f64>() - 1.0);
        }
        v
    }

    /// Writes `∇ψ(w)` into `out`.
    pub fn gradient_into(&self, w: &[f64], out: &mut [f64]) {
        for k in 0..w.len() {
            out[k] = self.slope(w[k] - self.upper[k]) - self.slope(self.lower[k] - w[k]);
        }
        for g in &self.simplex_groups {
            let s = self.slope(g.iter().map(|&k| w[k]).sum::<f64>() - 1.0);
            for &k in g {
                out[k] += s;
            }
        }
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; w.len()];
        self.gradient_into(w, &mut out);
        out
    }

    pub fn contains(&self, w: &[f64]) -> bool {
        self.value(w) == 0.0
    }
}

fn finite_or_overflow(iteration: usize, w: &[f64], candidate: Vec<f64>) -> Result<Vec<f64>> {
    if candidate.iter().all(|x| x.is_finite()) {
        Ok(candidate)
    } else {
        Err(Error::NumericOverflow {
            iteration,
            iterate: w.to_vec(),
        })
    }
}

/// `w − α ∇f(w)`.
pub fn gd_step(obj: &dyn ObjectiveFamily, w: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_dim(obj.dim(), w.len())?;
    let g = crate::objectives::full_gradient(obj, w)?;
    finite_or_overflow(0, w, w.iter().zip(&g).map(|(x, g)| x - alpha * g).collect())
}

/// `w − α ∇̃f(w)` for one estimator draw.
pub fn sgd_step<R: Rng + ?Sized>(
    obj: &dyn ObjectiveFamily,
    w: &[f64],
    alpha: f64,
    kind: EstimatorKind,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let g = crate::objectives::estimate_gradient(obj, w, kind, rng)?;
    finite_or_overflow(0, w, w.iter().zip(&g).map(|(x, g)| x - alpha * g).collect())
}

/// [`sgd_step`] followed by subtraction of `∇ψ(w)` (or `α∇ψ(w)` when scaled).
pub fn penalized_step<R: Rng + ?Sized>(
    obj: &dyn ObjectiveFamily,
    w: &[f64],
    alpha: f64,
    kind: EstimatorKind,
    rng: &mut R,
    pen: &PenaltySpec,
) -> Result<Vec<f64>> {
    pen.validate(obj.dim())?;
    let next = sgd_step(obj, w, alpha, kind, rng)?;
    let scale = if pen.scaled_by_alpha { alpha } else { 1.0 };
    let pg = pen.gradient(w);
    finite_or_overflow(
        0,
        w,
        next.iter().zip(&pg).map(|(x, p)| x - scale * p).collect(),
    )
}

#[derive(Debug, Clone)]
pub struct DescentConfig {
    pub objective: SharedObjective,
    pub rule: StepRule,
    pub schedule: Schedule,
    pub initial_point: Vec<f64>,
    pub n_iterations: usize,
    pub penalty: Option<PenaltySpec>,
    pub seed: u64,
    pub record_every: usize,
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        let d = self.objective.dim();
        check_dim(d, self.initial_point.len())?;
        if self.n_iterations == 0 {
            return Err(invalid("n_iterations must be at least 1"));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every must be at least 1"));
        }
        if let StepRule::Stochastic(kind) = self.rule {
            kind.validate(self.objective.as_ref())?;
        }
        self.schedule.validate()?;
        if let Some(p) = &self.penalty {
            p.validate(d)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub m: usize,
    pub w: Vec<f64>,
    pub f: f64,
    pub grad_sq: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortInfo {
    /// Index `m` of the step that produced a non-finite value.
    pub iteration: usize,
    pub last_finite: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub iterations: Vec<TrajectoryPoint>,
    pub final_point: Vec<f64>,
    pub seed: u64,
    pub trial: u64,
    pub record_every: usize,
    /// Componentwise minimum over every iterate visited, recorded or not.
    pub envelope_min: Vec<f64>,
    pub envelope_max: Vec<f64>,
    pub abort: Option<AbortInfo>,
}

/// Compact JSON summary of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub seed: u64,
    pub trial: u64,
    pub n_records: usize,
    pub final_point: Vec<f64>,
    pub final_f: f64,
    pub final_grad_sq: f64,
    pub aborted_at: Option<usize>,
}

impl TrajectoryRecord {
    pub fn is_aborted(&self) -> bool {
        self.abort.is_some()
    }

    pub fn last(&self) -> &TrajectoryPoint {
        self.iterations
            .last()
            .expect("a trajectory records at least its start")
    }

    /// Recorded state at iteration `m`, if any.
    pub fn at(&self, m: usize) -> Option<&TrajectoryPoint> {
        self.iterations
            .binary_search_by_key(&m, |p| p.m)
            .ok()
            .map(|k| &self.iterations[k])
    }

    pub fn summary(&self) -> TrajectorySummary {
        let last = self.last();
        TrajectorySummary {
            seed: self.seed,
            trial: self.trial,
            n_records: self.iterations.len(),
            final_point: self.final_point.clone(),
            final_f: last.f,
            final_grad_sq: last.grad_sq,
            aborted_at: self.abort.as_ref().map(|a| a.iteration),
        }
    }

    pub fn to_csv(&self) -> String {
        let d = self.final_point.len();
        let mut out = String::from("m");
        for k in 0..d {
            out.push_str(&format!(",w_{}", k + 1));
        }
        out.push_str(",f,grad_sq,alpha\n");
        for p in &self.iterations {
            out.push_str(&p.m.to_string());
            for x in &p.w {
                out.push_str(&format!(",{}", num(*x)));
            }
            out.push_str(&format!(",{}\n", row(&[p.f, p.grad_sq, p.alpha])));
        }
        out
    }
}

/// Runs trial 0 of `config` from its initial point.
pub fn run(config: &DescentConfig) -> Result<TrajectoryRecord> {
    config.validate()?;
    Ok(run_trial(config, 0, &config.initial_point))
}

/// Runs one trial from `start`, drawing estimator randomness from the
/// `(seed, trial)` stream. Assumes a validated config. A non-finite iterate
/// stops the run; the record then carries [`AbortInfo`].
pub fn run_trial(config: &DescentConfig, trial: u64, start: &[f64]) -> TrajectoryRecord {
    let obj = config.objective.as_ref();
    let d = obj.dim();
    let mut ws = GradientWorkspace::new(d);
    let mut exact = vec![0.0; d];
    let mut iterations = Vec::with_capacity(config.n_iterations / config.record_every + 2);
    let mut envelope_min = start.to_vec();
    let mut envelope_max = start.to_vec();

    let mut record = |iterations: &mut Vec<TrajectoryPoint>, m: usize, w: &[f64]| {
        ws.exact(obj, w, &mut exact);
        iterations.push(TrajectoryPoint {
            m,
            w: w.to_vec(),
            f: obj.value(w),
            grad_sq: norm_sq(&exact),
            alpha: config.schedule.eval(m as f64),
        });
    };

    let (w, abort) = drive(config, trial, start, |m, w| {
        if (m - 1) % config.record_every == 0 {
            record(&mut iterations, m, w);
        }
        for k in 0..d {
            envelope_min[k] = envelope_min[k].min(w[k]);
            envelope_max[k] = envelope_max[k].max(w[k]);
        }
    });
    let last_m = match &abort {
        Some(a) => a.iteration,
        None => config.n_iterations + 1,
    };
    if iterations.last().map(|p| p.m) != Some(last_m) {
        record(&mut iterations, last_m, &w);
    }
    TrajectoryRecord {
        iterations,
        final_point: w,
        seed: config.seed,
        trial,
        record_every: config.record_every,
        envelope_min,
        envelope_max,
        abort,
    }
}

/// The bare iteration loop. Calls `visit(m, w_m)` for every iterate, from
/// `m = 1` up to `M + 1` or up to the last finite iterate on abort, and
/// returns that last iterate.
pub fn drive<F: FnMut(usize, &[f64])>(
    config: &DescentConfig,
    trial: u64,
    start: &[f64],
    mut visit: F,
) -> (Vec<f64>, Option<AbortInfo>) {
    let obj = config.objective.as_ref();
    let d = obj.dim();
    let mut rng = trial_rng(config.seed, trial);
    let mut ws = GradientWorkspace::new(d);
    let mut w = start.to_vec();
    let mut g = vec![0.0; d];
    let mut pg = vec![0.0; d];
    for m in 1..=config.n_iterations {
        visit(m, &w);
        let alpha = config.schedule.eval(m as f64);
        match config.rule {
            StepRule::Exact => ws.exact(obj, &w, &mut g),
            StepRule::Stochastic(kind) => ws.draw(obj, &w, kind, &mut rng, &mut g),
        }
        let pen_scale = match &config.penalty {
            Some(p) => {
                p.gradient_into(&w, &mut pg);
                if p.scaled_by_alpha {
                    alpha
                } else {
                    1.0
                }
            }
            None => 0.0,
        };
        let mut finite = true;
        for k in 0..d {
            let mut next = w[k] - alpha * g[k];
            if pen_scale != 0.0 {
                next -= pen_scale * pg[k];
            }
            finite &= next.is_finite();
            g[k] = next;
        }
        if !finite {
            let info = AbortInfo {
                iteration: m,
                last_finite: w.clone(),
            };
            return (w, Some(info));
        }
        std::mem::swap(&mut w, &mut g);
    }
    visit(config.n_iterations + 1, &w);
    (w, None)
}

/// Weights `α_j / Σ_{i≤m} α_i` for `j = 1..m`.
pub fn time_average_weights(schedule: &Schedule, m: usize) -> Vec<f64> {
    let a: Vec<f64> = (1..=m).map(|j| schedule.eval(j as f64)).collect();
    let total: f64 = a.iter().sum();
    a.into_iter().map(|x| x / total).collect()
}

/// Draws `z_m`: the recorded iterate `w_j`, `j ≤ m`, chosen with probability
/// proportional to `α_j`. `m` defaults to the last recorded index.
pub fn time_average_sample<R: Rng + ?Sized>(
    traj: &TrajectoryRecord,
    schedule: &Schedule,
    m: Option<usize>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let contiguous = traj.record_every == 1
        && traj
            .iterations
            .iter()
            .enumerate()
            .all(|(k, p)| p.m == k + 1);
    if !contiguous {
        return Err(invalid("time averaging needs every iterate recorded"));
    }
    let m = m.unwrap_or(traj.iterations.len());
    if m == 0 || m > traj.iterations.len() {
        return Err(invalid(format!("m = {m} outside the recorded range")));
    }
    let weights: Vec<f64> = (1..=m).map(|j| schedule.eval(j as f64)).collect();
    let dist = WeightedIndex::new(&weights).map_err(|e| invalid(e.to_string()))?;
    Ok(traj.iterations[dist.sample(rng)].w.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{make_convex_1d, make_quadratic_linear_noise, LinearOffset};
    use std::sync::Arc;

    fn convex_config(rule: StepRule, schedule: Schedule, w1: f64, m: usize) -> DescentConfig {
        DescentConfig {
            objective: Arc::new(make_convex_1d()),
            rule,
            schedule,
            initial_point: vec![w1],
            n_iterations: m,
            penalty: None,
            seed: 42,
            record_every: 1,
        }
    }

    #[test]
    fn gd_step_examples() {
        let f = make_convex_1d();
        let w = gd_step(&f, &[2.0], 0.25).unwrap();
        assert_eq!(w, vec![1.0]);
        assert_eq!(gd_step(&f, &w, 0.25).unwrap(), vec![0.5]);
        assert_eq!(gd_step(&f, &[0.0], 0.3).unwrap(), vec![0.0]);
    }

    #[test]
    fn gd_step_overflow_carries_iterate() {
        let f = make_convex_1d();
        match gd_step(&f, &[1e308], 1e10) {
            Err(Error::NumericOverflow { iterate, .. }) => assert_eq!(iterate, vec![1e308]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sgd_step_matches_closed_update() {
        let f = make_convex_1d();
        let mut rng = trial_rng(3, 0);
        let (mut lo, mut hi) = (0, 0);
        for _ in 0..2000 {
            let x = sgd_step(&f, &[0.0], 0.1, EstimatorKind::SINGLE_SAMPLE, &mut rng).unwrap()[0];
            if (x + 0.2).abs() < 1e-15 {
                lo += 1;
            } else if (x - 0.2).abs() < 1e-15 {
                hi += 1;
            } else {
                panic!("{x}");
            }
        }
        assert!(lo > 900 && hi > 900);
        // (1−2α)x − 2αθ at x = 0.7
        for _ in 0..50 {
            let x = sgd_step(&f, &[0.7], 0.1, EstimatorKind::SINGLE_SAMPLE, &mut rng).unwrap()[0];
            let theta = ((0.8 * 0.7 - x) / 0.2).round();
            assert!(theta.abs() == 1.0 && (x - (0.8 * 0.7 - 0.2 * theta)).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_noise_sgd_equals_gd() {
        let q = make_quadratic_linear_noise(
            2,
            &[1.0, 0.2, 0.2, 2.0],
            vec![LinearOffset {
                c: vec![0.0, 0.0],
                d: 0.0,
            }],
        )
        .unwrap();
        let mut rng = trial_rng(1, 1);
        let w = [0.3, -0.8];
        assert_eq!(
            sgd_step(&q, &w, 0.1, EstimatorKind::SINGLE_SAMPLE, &mut rng).unwrap(),
            gd_step(&q, &w, 0.1).unwrap()
        );
    }

    #[test]
    fn penalty_examples() {
        let pen = PenaltySpec::new_box(vec![0.0, 0.0], vec![1.0, 1.0], 1.0, 1).unwrap();
        assert_eq!(pen.gradient(&[-0.1, 0.5]), vec![-1.0, 0.0]);
        assert!((pen.value(&[-0.1, 0.5]) - 0.1).abs() < 1e-15);
        assert_eq!(pen.value(&[0.4, 0.5]), 0.0);
        assert_eq!(pen.gradient(&[1.2, 0.5]), vec![1.0, 0.0]);
        let mut grouped = pen.clone();
        grouped.simplex_groups = vec![vec![0, 1]];
        assert!((grouped.value(&[0.7, 0.5]) - 0.2).abs() < 1e-15);
        assert_eq!(grouped.gradient(&[0.7, 0.5]), vec![1.0, 1.0]);
        assert!(PenaltySpec::new_box(vec![1.0], vec![0.0], 1.0, 1).is_err());
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let mut pen = PenaltySpec::new_box(vec![0.0; 3], vec![1.0; 3], 2.5, 3).unwrap();
        pen.simplex_groups = vec![vec![1, 2]];
        let w = [-0.3, 0.8, 0.6];
        let g = pen.gradient(&w);
        for k in 0..3 {
            let mut p = w;
            let mut q = w;
            p[k] += 1e-6;
            q[k] -= 1e-6;
            let fd = (pen.value(&p) - pen.value(&q)) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-6, "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn penalized_step_inside_box_is_plain_step() {
        let q = make_quadratic_linear_noise(
            2,
            &[1.0, 0.0, 0.0, 1.0],
            vec![LinearOffset {
                c: vec![0.0, 0.0],
                d: 0.0,
            }],
        )
        .unwrap();
        let pen = PenaltySpec::new_box(vec![0.0, 0.0], vec![1.0, 1.0], 1.0, 1).unwrap();
        let mut r1 = trial_rng(2, 0);
        let mut r2 = trial_rng(2, 0);
        let k = EstimatorKind::SINGLE_SAMPLE;
        assert_eq!(
            penalized_step(&q, &[0.5, 0.5], 0.1, k, &mut r1, &pen).unwrap(),
            sgd_step(&q, &[0.5, 0.5], 0.1, k, &mut r2).unwrap()
        );
        // outside: step is (w − α w) + (1, 0)
        let out = penalized_step(&q, &[-0.1, 0.5], 0.1, k, &mut r1, &pen).unwrap();
        assert!((out[0] - (-0.09 + 1.0)).abs() < 1e-15 && (out[1] - 0.45).abs() < 1e-15);
    }

    #[test]
    fn constant_gd_is_monotone_and_obeys_telescoping_bound() {
        let alpha = 0.25;
        let cfg = convex_config(StepRule::Exact, Schedule::constant(alpha).unwrap(), 2.0, 30);
        let tr = run(&cfg).unwrap();
        assert_eq!(tr.iterations.len(), 31);
        for p in tr.iterations.windows(2) {
            assert!(p[1].f <= p[0].f);
            assert!(p[1].m > p[0].m);
        }
        let l = 2.0;
        let sum: f64 = tr.iterations[..30].iter().map(|p| p.grad_sq).sum();
        assert!(sum <= tr.iterations[0].f / (alpha * (1.0 - l * alpha / 2.0)));
    }

    #[test]
    fn seeded_runs_are_identical() {
        let cfg = convex_config(
            StepRule::Stochastic(EstimatorKind::SINGLE_SAMPLE),
            Schedule::log(0.1).unwrap(),
            1.0,
            200,
        );
        assert_eq!(run(&cfg).unwrap(), run(&cfg).unwrap());
        let mut other = cfg.clone();
        other.seed += 1;
        assert_ne!(
            run(&cfg).unwrap().final_point,
            run(&other).unwrap().final_point
        );
    }

    #[test]
    fn summable_schedule_keeps_gradient_away_from_zero() {
        let s = Schedule::power(0.1, 2.0).unwrap();
        let cfg = convex_config(StepRule::Exact, s, 2.0, 5000);
        let tr = run(&cfg).unwrap();
        let g1 = tr.iterations[0].grad_sq.sqrt();
        let mut prod = 1.0;
        for p in &tr.iterations {
            assert!(p.grad_sq.sqrt() >= g1 * prod * (1.0 - 1e-12));
            prod *= 1.0 - 2.0 * s.eval(p.m as f64);
        }
        assert!(tr.last().grad_sq.sqrt() > 0.6 * g1);
    }

    #[test]
    fn record_every_and_final_point() {
        let mut cfg = convex_config(StepRule::Exact, Schedule::constant(0.1).unwrap(), 1.0, 10);
        cfg.record_every = 4;
        let tr = run(&cfg).unwrap();
        let ms: Vec<usize> = tr.iterations.iter().map(|p| p.m).collect();
        assert_eq!(ms, vec![1, 5, 9, 11]);
        assert_eq!(tr.last().w, tr.final_point);
        assert!((tr.final_point[0] - 0.8f64.powi(10)).abs() < 1e-15);
        assert!(tr.at(5).is_some() && tr.at(6).is_none());
    }

    #[test]
    fn overflow_aborts_with_partial_record() {
        let cfg = convex_config(
            StepRule::Exact,
            Schedule::constant(10.0).unwrap(),
            1.0,
            10_000,
        );
        let tr = run(&cfg).unwrap();
        let a = tr.abort.as_ref().expect("should overflow");
        assert!(a.last_finite.iter().all(|x| x.is_finite()));
        assert_eq!(tr.final_point, a.last_finite);
        assert!(tr.iterations.len() >= a.iteration - 1);
    }

    #[test]
    fn descent_in_expectation_bracket() {
        // exact one-step expectation from x: −4αx² + 4α²x² + 4α² lies in the bracket
        let (l, sigma2) = (2.0, 4.0);
        for &x in &[-2.0f64, -0.5, 0.0, 0.3, 1.7] {
            for &a in &[0.01, 0.1, 0.25] {
                let delta = -4.0 * a * x * x + 4.0 * a * a * x * x + 4.0 * a * a;
                let g2 = 4.0 * x * x;
                assert!(delta >= -2.0 * a * g2 - sigma2 * l / 2.0 * a * a - 1e-15);
                assert!(delta <= -a / 2.0 * g2 + sigma2 * l / 2.0 * a * a + 1e-15);
            }
        }
    }

    #[test]
    fn time_average_weights_and_sampling() {
        let s = Schedule::power(0.2, 1.0).unwrap();
        let w = time_average_weights(&s, 2);
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
        let cfg = convex_config(StepRule::Exact, s, 2.0, 1);
        let tr = run(&cfg).unwrap();
        let mut rng = trial_rng(8, 0);
        let n = 30_000;
        let first = (0..n)
            .filter(|_| {
                time_average_sample(&tr, &s, Some(2), &mut rng).unwrap() == tr.iterations[0].w
            })
            .count();
        let p = first as f64 / n as f64;
        assert!(
            (p - 2.0 / 3.0).abs() < 4.0 * (2.0 / 9.0 / n as f64).sqrt(),
            "{p}"
        );
        let mut sparse = cfg.clone();
        sparse.n_iterations = 10;
        sparse.record_every = 3;
        assert!(time_average_sample(&run(&sparse).unwrap(), &s, None, &mut rng).is_err());
    }

    #[test]
    fn csv_columns() {
        let cfg = convex_config(StepRule::Exact, Schedule::constant(0.25).unwrap(), 2.0, 2);
        let csv = run(&cfg).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "m,w_1,f,grad_sq,alpha");
        assert_eq!(lines[1], "1,2,5,16,0.25");
        assert_eq!(lines[2], "2,1,2,4,0.25");
    }

    #[test]
    fn step_rule_parsing() {
        assert_eq!("gd".parse::<StepRule>().unwrap(), StepRule::Exact);
        assert_eq!(
            "sgd".parse::<StepRule>().unwrap(),
            StepRule::Stochastic(EstimatorKind::SINGLE_SAMPLE)
        );
        assert_eq!(
            "minibatch:3".parse::<StepRule>().unwrap(),
            StepRule::Stochastic(EstimatorKind::Minibatch { batch_size: 3 })
        );
        assert!("nope".parse::<StepRule>().is_err());
    }
}
