//! Parallel ensembles of descent runs and histogram summaries.

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csv::row;
use crate::descent::{drive, run_trial, DescentConfig, TrajectoryRecord};
use crate::error::{check_dim, invalid, Error, Result};
use crate::objectives::{norm_sq, GradientWorkspace};
use crate::rng::start_rng;

/// How each trial picks its starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StartRule {
    /// The config's `initial_point`.
    Fixed,
    UniformBox {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    /// Consecutive coordinate blocks of the given sizes, each uniform on the
    /// corner simplex `{x ≥ 0, Σx ≤ 1}`.
    UniformSimplexBlocks {
        blocks: Vec<usize>,
    },
}

impl StartRule {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            StartRule::Fixed => Ok(()),
            StartRule::UniformBox { lower, upper } => {
                check_dim(dim, lower.len())?;
                check_dim(dim, upper.len())?;
                if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
                    return Err(invalid("start box needs lower ≤ upper"));
                }
                Ok(())
            }
            StartRule::UniformSimplexBlocks { blocks } => check_dim(dim, blocks.iter().sum()),
        }
    }

    /// Start of `trial`, drawn from a stream independent of the estimator draws.
    pub fn start(&self, config: &DescentConfig, trial: u64) -> Vec<f64> {
        let mut rng = start_rng(config.seed, trial);
        match self {
            StartRule::Fixed => config.initial_point.clone(),
            StartRule::UniformBox { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| l + (u - l) * rng.gen::<f64>())
                .collect(),
            StartRule::UniformSimplexBlocks { blocks } => {
                let mut out = Vec::new();
                for &k in blocks {
                    let e: Vec<f64> = (0..=k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
                    let total: f64 = e.iter().sum();
                    out.extend(e[..k].iter().map(|x| x / total));
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub n_trials: usize,
    /// Final iterate per trial, `None` where the trial aborted.
    pub final_points: Vec<Option<Vec<f64>>>,
    pub mean: Vec<f64>,
    /// Componentwise sample variance (zero for a single trial).
    pub variance: Vec<f64>,
    pub mean_grad_sq: f64,
    pub aborted: usize,
}

impl EnsembleStats {
    pub fn successful(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.final_points.iter().flatten()
    }

    /// Coordinate `k` of every successful final point.
    pub fn coordinate(&self, k: usize) -> Vec<f64> {
        self.successful().map(|p| p[k]).collect()
    }
}

/// Runs `n_trials` full trajectories in parallel, in trial order.
pub fn run_trajectories(
    base: &DescentConfig,
    n_trials: usize,
    start: &StartRule,
) -> Result<Vec<TrajectoryRecord>> {
    base.validate()?;
    start.validate(base.objective.dim())?;
    if n_trials == 0 {
        return Err(invalid("n_trials must be at least 1"));
    }
    Ok((0..n_trials as u64)
        .into_par_iter()
        .map(|t| run_trial(base, t, &start.start(base, t)))
        .collect())
}

/// Final iterate of each trial (or `None` on abort), without recording.
pub fn run_final_points(
    base: &DescentConfig,
    n_trials: usize,
    start: &StartRule,
) -> Result<Vec<Option<Vec<f64>>>> {
    base.validate()?;
    start.validate(base.objective.dim())?;
    if n_trials == 0 {
        return Err(invalid("n_trials must be at least 1"));
    }
    Ok((0..n_trials as u64)
        .into_par_iter()
        .map(|t| {
            let (w, abort) = drive(base, t, &start.start(base, t), |_, _| {});
            abort.is_none().then_some(w)
        })
        .collect())
}

pub fn run_ensemble(base: &DescentConfig, n_trials: usize) -> Result<EnsembleStats> {
    run_ensemble_with(base, n_trials, &StartRule::Fixed)
}

pub fn run_ensemble_with(
    base: &DescentConfig,
    n_trials: usize,
    start: &StartRule,
) -> Result<EnsembleStats> {
    let finals = run_final_points(base, n_trials, start)?;
    summarize(base, finals)
}

/// Aggregates final points sequentially in trial order, so the result does
/// not depend on how trials were scheduled.
pub fn summarize(
    base: &DescentConfig,
    final_points: Vec<Option<Vec<f64>>>,
) -> Result<EnsembleStats> {
    let obj = base.objective.as_ref();
    let d = obj.dim();
    let n_trials = final_points.len();
    let ok: Vec<&Vec<f64>> = final_points.iter().flatten().collect();
    if ok.is_empty() {
        return Err(Error::AllTrialsAborted(n_trials));
    }
    let n = ok.len() as f64;
    let mut mean = vec![0.0; d];
    for p in &ok {
        for k in 0..d {
            mean[k] += p[k] / n;
        }
    }
    let mut variance = vec![0.0; d];
    if ok.len() > 1 {
        for p in &ok {
            for k in 0..d {
                variance[k] += (p[k] - mean[k]).powi(2) / (n - 1.0);
            }
        }
    }
    let mut ws = GradientWorkspace::new(d);
    let mut g = vec![0.0; d];
    let mut mean_grad_sq = 0.0;
    for p in &ok {
        ws.exact(obj, p, &mut g);
        mean_grad_sq += norm_sq(&g) / n;
    }
    Ok(EnsembleStats {
        n_trials,
        aborted: n_trials - ok.len(),
        final_points,
        mean,
        variance,
        mean_grad_sq,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub m: usize,
    pub mean_grad_sq: f64,
    pub std_error: f64,
}

/// Ensemble mean of `|∇f(w_m)|²` at each checkpoint `m`, over trials that did
/// not abort.
pub fn empirical_grad_sq_curve(
    base: &DescentConfig,
    n_trials: usize,
    checkpoints: &[usize],
) -> Result<Vec<CurvePoint>> {
    base.validate()?;
    if n_trials == 0 {
        return Err(invalid("n_trials must be at least 1"));
    }
    if let Some(&bad) = checkpoints
        .iter()
        .find(|&&m| m == 0 || m > base.n_iterations + 1)
    {
        return Err(invalid(format!(
            "checkpoint {bad} outside 1..={}",
            base.n_iterations + 1
        )));
    }
    let d = base.objective.dim();
    let per_trial: Vec<Option<Vec<f64>>> = (0..n_trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut ws = GradientWorkspace::new(d);
            let mut g = vec![0.0; d];
            let mut vals = vec![f64::NAN; checkpoints.len()];
            let (_, abort) = drive(base, t, &base.initial_point, |m, w| {
                for (slot, &c) in vals.iter_mut().zip(checkpoints) {
                    if c == m {
                        ws.exact(base.objective.as_ref(), w, &mut g);
                        *slot = norm_sq(&g);
                    }
                }
            });
            abort.is_none().then_some(vals)
        })
        .collect();
    let ok: Vec<&Vec<f64>> = per_trial.iter().flatten().collect();
    if ok.is_empty() {
        return Err(Error::AllTrialsAborted(n_trials));
    }
    let n = ok.len() as f64;
    Ok(checkpoints
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let mean = ok.iter().map(|v| v[k]).sum::<f64>() / n;
            let var = if ok.len() > 1 {
                ok.iter().map(|v| (v[k] - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            CurvePoint {
                m,
                mean_grad_sq: mean,
                std_error: (var / n).sqrt(),
            }
        })
        .collect())
}

/// Binning rule for one histogram axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bins {
    /// Equal-width bins spanning the data range.
    Count(usize),
    Edges(Vec<f64>),
    FreedmanDiaconis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub dims: usize,
    pub bin_edges: Vec<Vec<f64>>,
    /// Row-major over the axes (last axis fastest).
    pub counts: Vec<u64>,
    pub total: u64,
    /// Points that fell outside the edges and were clamped into an end bin.
    pub outliers: u64,
}

const MAX_FD_BINS: usize = 10_000;

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn resolve_edges(values: &[f64], bins: &Bins) -> Result<Vec<f64>> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    };
    let count = match bins {
        Bins::Edges(e) => {
            if e.len() < 2 {
                return Err(invalid("need at least one bin"));
            }
            if e.windows(2).any(|p| !(p[0] < p[1])) {
                return Err(invalid("bin edges must be strictly increasing"));
            }
            return Ok(e.clone());
        }
        Bins::Count(0) => return Err(invalid("need at least one bin")),
        Bins::Count(n) => *n,
        Bins::FreedmanDiaconis => {
            let mut sorted = values.to_vec();
            sorted.sort_by(f64::total_cmp);
            let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
            let h = 2.0 * iqr / (values.len() as f64).cbrt();
            if h > 0.0 {
                (((hi - lo) / h).ceil() as usize).clamp(1, MAX_FD_BINS)
            } else {
                1
            }
        }
    };
    let width = (hi - lo) / count as f64;
    Ok((0..=count)
        .map(|k| {
            if k == count {
                hi
            } else {
                lo + k as f64 * width
            }
        })
        .collect())
}

/// Bin index for `x`, clamping out-of-range values; the flag marks clamping.
fn locate(edges: &[f64], x: f64) -> (usize, bool) {
    let nb = edges.len() - 1;
    if x < edges[0] {
        return (0, true);
    }
    if x > edges[nb] {
        return (nb - 1, true);
    }
    let k = edges.partition_point(|&e| e <= x);
    (k.saturating_sub(1).min(nb - 1), false)
}

/// Histogram of 1-d or 2-d points; `bins` has one entry per axis.
pub fn make_histogram(points: &[Vec<f64>], bins: &[Bins]) -> Result<Histogram> {
    let dims = bins.len();
    if !(dims == 1 || dims == 2) {
        return Err(invalid("histograms are 1-d or 2-d"));
    }
    if points.is_empty() {
        return Err(invalid("no points to bin"));
    }
    for p in points {
        check_dim(dims, p.len())?;
    }
    let bin_edges = (0..dims)
        .map(|k| resolve_edges(&points.iter().map(|p| p[k]).collect::<Vec<_>>(), &bins[k]))
        .collect::<Result<Vec<_>>>()?;
    let shape: Vec<usize> = bin_edges.iter().map(|e| e.len() - 1).collect();
    let mut counts = vec![0u64; shape.iter().product()];
    let mut outliers = 0;
    for p in points {
        let mut flat = 0;
        let mut clamped = false;
        for k in 0..dims {
            let (idx, c) = locate(&bin_edges[k], p[k]);
            clamped |= c;
            flat = flat * shape[k] + idx;
        }
        counts[flat] += 1;
        outliers += clamped as u64;
    }
    Ok(Histogram {
        dims,
        bin_edges,
        counts,
        total: points.len() as u64,
        outliers,
    })
}

/// 1-d convenience wrapper.
pub fn histogram_1d(values: &[f64], bins: Bins) -> Result<Histogram> {
    let pts: Vec<Vec<f64>> = values.iter().map(|&x| vec![x]).collect();
    make_histogram(&pts, &[bins])
}

impl Histogram {
    pub fn shape(&self) -> Vec<usize> {
        self.bin_edges.iter().map(|e| e.len() - 1).collect()
    }

    pub fn centers(&self, axis: usize) -> Vec<f64> {
        self.bin_edges[axis]
            .windows(2)
            .map(|p| 0.5 * (p[0] + p[1]))
            .collect()
    }

    /// Probability density per bin of a 1-d histogram.
    pub fn density(&self) -> Vec<f64> {
        let e = &self.bin_edges[0];
        self.counts
            .iter()
            .enumerate()
            .map(|(k, &c)| c as f64 / (self.total as f64 * (e[k + 1] - e[k])))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if self.dims == 1 {
            out.push_str("bin_left,bin_right,count\n");
            let e = &self.bin_edges[0];
            for (k, c) in self.counts.iter().enumerate() {
                out.push_str(&format!("{},{}\n", row(&[e[k], e[k + 1]]), c));
            }
        } else {
            out.push_str("x_left,x_right,y_left,y_right,count\n");
            let (ex, ey) = (&self.bin_edges[0], &self.bin_edges[1]);
            let ny = ey.len() - 1;
            for (k, c) in self.counts.iter().enumerate() {
                let (i, j) = (k / ny, k % ny);
                out.push_str(&format!(
                    "{},{}\n",
                    row(&[ex[i], ex[i + 1], ey[j], ey[j + 1]]),
                    c
                ));
            }
        }
        out
    }
}

/// The two dominant modes of a 1-d histogram, as bin centers in increasing
/// order: the tallest local peak, and the tallest other local peak separated
/// from it by a valley lower than half of the smaller peak. Peaks below 5% of
/// the tallest are treated as tail noise.
pub fn two_modes(hist: &Histogram) -> Option<(f64, f64)> {
    if hist.dims != 1 {
        return None;
    }
    let c = &hist.counts;
    let n = c.len();
    let is_peak =
        |k: usize| (k == 0 || c[k] >= c[k - 1]) && (k + 1 == n || c[k] >= c[k + 1]) && c[k] > 0;
    let mut peaks: Vec<usize> = (0..n).filter(|&k| is_peak(k)).collect();
    peaks.sort_by(|&a, &b| c[b].cmp(&c[a]).then(a.cmp(&b)));
    let top = *peaks.first()?;
    let centers = hist.centers(0);
    for &other in peaks[1..]
        .iter()
        .filter(|&&k| c[k] as f64 >= 0.05 * c[top] as f64)
    {
        let (lo, hi) = if other < top {
            (other, top)
        } else {
            (top, other)
        };
        let valley = c[lo..=hi].iter().copied().min().unwrap_or(0);
        if (valley as f64) < 0.5 * c[other].min(c[top]) as f64 {
            return Some((centers[lo], centers[hi]));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descent::StepRule;
    use crate::objectives::{
        make_convex_1d, make_quadratic_linear_noise, EstimatorKind, LinearOffset,
    };
    use crate::rng::trial_rng;
    use crate::schedules::Schedule;
    use std::sync::Arc;

    fn convex(schedule: Schedule, m: usize, seed: u64) -> DescentConfig {
        DescentConfig {
            objective: Arc::new(make_convex_1d()),
            rule: StepRule::Stochastic(EstimatorKind::SINGLE_SAMPLE),
            schedule,
            initial_point: vec![1.0],
            n_iterations: m,
            penalty: None,
            seed,
            record_every: m,
        }
    }

    #[test]
    fn single_trial_matches_trajectory() {
        let cfg = convex(Schedule::log(0.1).unwrap(), 100, 5);
        let stats = run_ensemble(&cfg, 1).unwrap();
        let tr = crate::descent::run(&cfg).unwrap();
        assert_eq!(stats.mean, tr.final_point);
        assert_eq!(stats.variance, vec![0.0]);
        assert_eq!(stats.mean_grad_sq, tr.last().grad_sq);
    }

    #[test]
    fn ensembles_are_reproducible_across_thread_counts() {
        let cfg = convex(Schedule::log(0.1).unwrap(), 200, 9);
        let a = run_ensemble(&cfg, 500).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| run_ensemble(&cfg, 500).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn ensemble_matches_moment_oracle() {
        let s = Schedule::log(0.1).unwrap();
        let cfg = convex(s, 100, 3);
        let stats = run_ensemble(&cfg, 20_000).unwrap();
        let oracle = crate::moments::exact_moments(&s, 1.0, 1.0, 101).unwrap();
        let (e, _, v) = oracle.at(101).unwrap();
        let se = (v / 20_000.0).sqrt();
        assert!(
            (stats.mean[0] - e).abs() < 4.0 * se,
            "{} vs {e}",
            stats.mean[0]
        );
        assert!((stats.variance[0] / v - 1.0).abs() < 0.05);
    }

    #[test]
    fn aborted_trials_are_counted() {
        let cfg = convex(Schedule::constant(10.0).unwrap(), 2000, 1);
        assert!(matches!(
            run_ensemble(&cfg, 4),
            Err(Error::AllTrialsAborted(4))
        ));
    }

    #[test]
    fn grad_sq_curve_zero_noise_is_deterministic() {
        let q = make_quadratic_linear_noise(
            1,
            &[2.0],
            vec![LinearOffset {
                c: vec![0.0],
                d: 0.0,
            }],
        )
        .unwrap();
        let mut cfg = convex(Schedule::constant(0.25).unwrap(), 20, 0);
        cfg.objective = Arc::new(q);
        cfg.initial_point = vec![2.0];
        let curve = empirical_grad_sq_curve(&cfg, 8, &[1, 2, 5]).unwrap();
        // x_m = 2·(1/2)^(m−1), gradient 2x
        for p in &curve {
            let x = 2.0 * 0.5f64.powi(p.m as i32 - 1);
            assert!((p.mean_grad_sq - 4.0 * x * x).abs() < 1e-14);
            assert_eq!(p.std_error, 0.0);
        }
        assert!(empirical_grad_sq_curve(&cfg, 8, &[50]).is_err());
    }

    #[test]
    fn grad_sq_plateau_under_constant_step() {
        let cfg = convex(Schedule::constant(0.1).unwrap(), 300, 4);
        let curve = empirical_grad_sq_curve(&cfg, 20_000, &[200, 300]).unwrap();
        let plateau = 4.0 * crate::moments::fixed_point_variance(0.1).unwrap();
        for p in curve {
            assert!(
                (p.mean_grad_sq - plateau).abs() < 5.0 * p.std_error,
                "{p:?}"
            );
        }
    }

    #[test]
    fn start_rules() {
        let mut cfg = convex(Schedule::constant(0.1).unwrap(), 10, 4);
        cfg.objective = Arc::new(
            make_quadratic_linear_noise(
                3,
                &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
                vec![LinearOffset {
                    c: vec![0.0; 3],
                    d: 0.0,
                }],
            )
            .unwrap(),
        );
        cfg.initial_point = vec![0.0; 3];
        let rule = StartRule::UniformSimplexBlocks { blocks: vec![2, 1] };
        rule.validate(3).unwrap();
        for t in 0..200 {
            let s = rule.start(&cfg, t);
            assert!(s.iter().all(|&x| (0.0..=1.0).contains(&x)));
            assert!(s[0] + s[1] <= 1.0);
        }
        assert_eq!(rule.start(&cfg, 7), rule.start(&cfg, 7));
        assert!(StartRule::UniformSimplexBlocks { blocks: vec![2] }
            .validate(3)
            .is_err());
        let boxed = StartRule::UniformBox {
            lower: vec![0.0; 3],
            upper: vec![2.0; 3],
        };
        assert!(boxed
            .start(&cfg, 0)
            .iter()
            .all(|&x| (0.0..2.0).contains(&x)));
    }

    #[test]
    fn histogram_single_point() {
        let h = histogram_1d(&[0.5], Bins::Edges(vec![0.0, 1.0])).unwrap();
        assert_eq!(h.counts, vec![1]);
        assert!(histogram_1d(&[0.5], Bins::Count(0)).is_err());
        assert!(histogram_1d(&[0.5], Bins::Edges(vec![0.0])).is_err());
    }

    #[test]
    fn histogram_uniform_counts() {
        let mut rng = trial_rng(2, 0);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>()).collect();
        let edges: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let h = histogram_1d(&xs, Bins::Edges(edges)).unwrap();
        let sd = (10_000.0f64 * 0.1 * 0.9).sqrt();
        for &c in &h.counts {
            assert!((c as f64 - 1000.0).abs() < 5.0 * sd);
        }
        assert_eq!(h.counts.iter().sum::<u64>(), h.total);
    }

    #[test]
    fn histogram_2d_diagonal() {
        let pts: Vec<Vec<f64>> = (0..100)
            .map(|k| vec![k as f64 / 100.0 + 0.001; 2])
            .collect();
        let e = vec![0.0, 0.5, 1.0];
        let h = make_histogram(&pts, &[Bins::Edges(e.clone()), Bins::Edges(e)]).unwrap();
        assert_eq!(h.counts[1], 0);
        assert_eq!(h.counts[2], 0);
        assert_eq!(h.counts[0] + h.counts[3], 100);
        assert!(h
            .to_csv()
            .starts_with("x_left,x_right,y_left,y_right,count\n0,0.5,0,0.5,"));
    }

    #[test]
    fn outliers_are_clamped_and_flagged() {
        let h = histogram_1d(&[-1.0, 0.5, 3.0], Bins::Edges(vec![0.0, 1.0, 2.0])).unwrap();
        assert_eq!(h.counts, vec![2, 1]);
        assert_eq!(h.outliers, 2);
    }

    #[test]
    fn freedman_diaconis_and_modes() {
        let mut rng = trial_rng(3, 0);
        let xs: Vec<f64> = (0..20_000)
            .map(|k| {
                let centre = if k % 3 == 0 { -2.0 } else { 0.6 };
                centre + 0.05 * rng.sample::<f64, _>(rand_distr::StandardNormal)
            })
            .collect();
        let h = histogram_1d(&xs, Bins::FreedmanDiaconis).unwrap();
        let width = h.bin_edges[0][1] - h.bin_edges[0][0];
        assert!(h.counts.len() > 10);
        let (a, b) = two_modes(&h).unwrap();
        assert!(
            (a + 2.0).abs() <= width && (b - 0.6).abs() <= width,
            "{a} {b}"
        );
        let unimodal: Vec<f64> = xs.iter().filter(|&&x| x > 0.0).copied().collect();
        assert!(two_modes(&histogram_1d(&unimodal, Bins::Count(20)).unwrap()).is_none());
    }
}
