//! Exact first and second moments of SGD on the convex pair `(x∓1)²`.
//!
//! With one sample per step the iteration is `x_{m+1} = (1−2α_m)x_m − 2α_m θ`,
//! `θ = ±1`, so mean and variance obey closed linear recursions.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::csv::row;
use crate::error::{invalid, Result};
use crate::schedules::Schedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSeries {
    pub schedule: Schedule,
    pub initial_mean: f64,
    pub initial_second_moment: f64,
    /// Entry `k` holds the moment at iteration `m = k + 1`.
    pub expectations: Vec<f64>,
    pub second_moments: Vec<f64>,
    pub variances: Vec<f64>,
}

impl MomentSeries {
    pub fn len(&self) -> usize {
        self.expectations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.expectations.is_empty()
    }

    /// `(E_m, F_m, V_m)` for 1-based `m`.
    pub fn at(&self, m: usize) -> Option<(f64, f64, f64)> {
        let k = m.checked_sub(1)?;
        Some((
            *self.expectations.get(k)?,
            self.second_moments[k],
            self.variances[k],
        ))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("m,E,F,V\n");
        for k in 0..self.len() {
            let vals = [
                self.expectations[k],
                self.second_moments[k],
                self.variances[k],
            ];
            out.push_str(&format!("{},{}\n", k + 1, row(&vals)));
        }
        out
    }
}

fn check_initial(e1: f64, f1: f64, m: usize) -> Result<()> {
    if m == 0 {
        return Err(invalid("need at least one iteration"));
    }
    if !(f1 >= e1 * e1) {
        return Err(invalid(format!(
            "second moment {f1} below squared mean {}",
            e1 * e1
        )));
    }
    Ok(())
}

fn steps(schedule: &Schedule, m: usize) -> Vec<f64> {
    (1..m as u64).map(|k| schedule.eval(k as f64)).collect()
}

/// Iterates the mean/second-moment/variance recursions for `m = 1..M`.
pub fn exact_moments(schedule: &Schedule, e1: f64, f1: f64, m: usize) -> Result<MomentSeries> {
    check_initial(e1, f1, m)?;
    Ok(recursion_from_steps(*schedule, &steps(schedule, m), e1, f1))
}

/// Same recursions with an explicit step sequence `α_1..α_{M−1}`.
pub fn recursion_from_steps(schedule: Schedule, alphas: &[f64], e1: f64, f1: f64) -> MomentSeries {
    let n = alphas.len() + 1;
    let (mut e, mut f, mut v) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    e.push(e1);
    f.push(f1);
    v.push(f1 - e1 * e1);
    for &a in alphas {
        let g = 1.0 - 2.0 * a;
        let (el, fl, vl) = (*e.last().unwrap(), *f.last().unwrap(), *v.last().unwrap());
        e.push(g * el);
        f.push(g * g * fl + 4.0 * a * a);
        v.push(g * g * vl + 4.0 * a * a);
    }
    MomentSeries {
        schedule,
        initial_mean: e1,
        initial_second_moment: f1,
        expectations: e,
        second_moments: f,
        variances: v,
    }
}

/// Evaluates the product/sum solution of the recursions directly:
///
/// `E_m = Π_{i<m} g_i · E_1`,
/// `V_m = Π_{i<m} g_i² · V_1 + Σ_{j<m} 4α_j² Π_{j<i<m} g_i²`, with `g_i = 1 − 2α_i`.
pub fn closed_form_moments(
    schedule: &Schedule,
    e1: f64,
    v1: f64,
    m: usize,
) -> Result<MomentSeries> {
    if !(v1 >= 0.0) {
        return Err(invalid(format!("initial variance {v1} is negative")));
    }
    check_initial(e1, v1 + e1 * e1, m)?;
    let alphas = steps(schedule, m);
    let g: Vec<f64> = alphas.iter().map(|a| 1.0 - 2.0 * a).collect();

    let mut e = Vec::with_capacity(m);
    let mut v = Vec::with_capacity(m);
    if g.iter().all(|&x| x > 0.0) {
        // prefix[k] = Σ_{i<k} ln g_i², so Π_{j≤i<k} g_i² = exp(prefix[k] − prefix[j])
        let mut prefix = vec![0.0; m];
        for k in 1..m {
            prefix[k] = prefix[k - 1] + 2.0 * g[k - 1].ln();
        }
        for k in 0..m {
            e.push(e1 * (0.5 * prefix[k]).exp());
            let noise: f64 = (0..k)
                .map(|j| 4.0 * alphas[j] * alphas[j] * (prefix[k] - prefix[j + 1]).exp())
                .sum();
            v.push(prefix[k].exp() * v1 + noise);
        }
    } else {
        for k in 0..m {
            let mut prod = 1.0;
            let mut noise = 0.0;
            for j in (0..k).rev() {
                noise += 4.0 * alphas[j] * alphas[j] * prod;
                prod *= g[j] * g[j];
            }
            let mean_factor: f64 = g[..k].iter().product();
            e.push(e1 * mean_factor);
            v.push(prod * v1 + noise);
        }
    }
    let f = e.iter().zip(&v).map(|(e, v)| v + e * e).collect();
    Ok(MomentSeries {
        schedule: *schedule,
        initial_mean: e1,
        initial_second_moment: v1 + e1 * e1,
        expectations: e,
        second_moments: f,
        variances: v,
    })
}

/// Limiting variance under a constant step `α ∈ (0, 1/2)`: the fixed point
/// `V = α/(1−α)` of `V ↦ (1−2α)²V + 4α²`.
pub fn fixed_point_variance(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(invalid(format!("step {alpha} outside (0, 1/2)")));
    }
    Ok(alpha / (1.0 - alpha))
}

/// Kolmogorov–Smirnov distance between the empirical CDF of `samples` and
/// the normal CDF with the given mean and variance.
pub fn normality_statistic(samples: &[f64], mean: f64, variance: f64) -> Result<f64> {
    if !(variance > 0.0) {
        return Err(invalid(format!(
            "variance must be positive, got {variance}"
        )));
    }
    if samples.len() < 100 {
        return Err(invalid(format!(
            "need at least 100 samples, got {}",
            samples.len()
        )));
    }
    let normal = Normal::new(mean, variance.sqrt()).map_err(|e| invalid(e.to_string()))?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(ks_against(&sorted, |x| normal.cdf(x)))
}

/// KS distance of sorted data against a continuous CDF.
pub fn ks_against(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        // ties jump the empirical CDF in one step
        let x = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == x {
            j += 1;
        }
        let fx = cdf(x);
        d = d.max(fx - i as f64 / n).max(j as f64 / n - fx);
        i = j;
    }
    d
}
