//! Matrix games and asynchronous coalition games as ℓ^p-smoothed sum objectives.
//!
//! A game supplies max-terms `φ_j` over full mixed strategies. Each player's
//! last strategy is eliminated (`y_n = 1 − Σ_{k<n} y_k`), so every `φ_j`
//! becomes a polynomial of degree at most two on an unconstrained ambient
//! space, and the smoothed objective is `Φ_p = (1/N) Σ_j φ_j^p`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::descent::PenaltySpec;
use crate::error::{check_dim, invalid, Error, Result};
use crate::objectives::ObjectiveFamily;

/// `Ψ(x, y) = xᵀAy` with `A_ij ≥ η > 0`; the minimizing player picks `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixGame {
    pub payoff: Vec<Vec<f64>>,
    pub eta: f64,
}

impl MatrixGame {
    pub fn new(payoff: Vec<Vec<f64>>, eta: f64) -> Result<Self> {
        let g = MatrixGame { payoff, eta };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let cols = rect_cols(&self.payoff)?;
        if cols < 1 {
            return Err(invalid("payoff needs at least one column"));
        }
        if !(self.eta > 0.0) {
            return Err(invalid("eta must be positive"));
        }
        let min = self
            .payoff
            .iter()
            .flatten()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        if min < self.eta {
            return Err(invalid(format!(
                "payoff entry {min} below the floor {}",
                self.eta
            )));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.payoff.len()
    }

    pub fn cols(&self) -> usize {
        self.payoff[0].len()
    }
}

/// `φ_j(y₁, y₂) = y₁ᵀ B_j y₂ + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsyncCoalitionGame {
    pub slices: Vec<Vec<Vec<f64>>>,
    pub offset: f64,
    /// `(player, strategy)` pairs pinned to zero and removed from the ambient space.
    #[serde(default)]
    pub restrict_zero: Vec<(usize, usize)>,
}

impl AsyncCoalitionGame {
    pub fn new(slices: Vec<Vec<Vec<f64>>>, offset: f64) -> Result<Self> {
        let g = AsyncCoalitionGame {
            slices,
            offset,
            restrict_zero: Vec::new(),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn restricted(mut self, player: usize, strategy: usize) -> Result<Self> {
        self.restrict_zero.push((player, strategy));
        self.validate()?;
        Ok(self)
    }

    pub fn sizes(&self) -> (usize, usize) {
        (self.slices[0].len(), self.slices[0][0].len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.slices.is_empty() {
            return Err(invalid("coalition game needs at least one slice"));
        }
        let (n1, n2) = (self.slices[0].len(), rect_cols(&self.slices[0])?);
        for b in &self.slices {
            check_dim(n1, b.len())?;
            check_dim(n2, rect_cols(b)?)?;
        }
        for &(pl, s) in &self.restrict_zero {
            let n = [n1, n2]
                .get(pl)
                .copied()
                .ok_or_else(|| invalid("player index must be 0 or 1"))?;
            if s + 1 >= n {
                return Err(invalid("only non-final strategies can be pinned to zero"));
            }
        }
        // A bilinear form attains its minimum over a product of simplices at a
        // pair of vertices, i.e. at a matrix entry.
        let min = self
            .slices
            .iter()
            .flatten()
            .flatten()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        if !(min + self.offset > 0.0) {
            return Err(invalid(
                "max-terms are not positive on the strategy simplices",
            ));
        }
        Ok(())
    }
}

fn rect_cols(m: &[Vec<f64>]) -> Result<usize> {
    let cols = m.first().ok_or_else(|| invalid("empty matrix"))?.len();
    if m.iter().any(|r| r.len() != cols) {
        return Err(invalid("ragged matrix"));
    }
    if m.iter().flatten().any(|x| !x.is_finite()) {
        return Err(invalid("non-finite payoff entry"));
    }
    Ok(cols)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Game {
    Matrix(MatrixGame),
    Coalition(AsyncCoalitionGame),
}

impl Game {
    pub fn validate(&self) -> Result<()> {
        match self {
            Game::Matrix(g) => g.validate(),
            Game::Coalition(g) => g.validate(),
        }
    }

    pub fn n_terms(&self) -> usize {
        match self {
            Game::Matrix(g) => g.rows(),
            Game::Coalition(g) => g.slices.len(),
        }
    }

    /// Largest payoff entry, offset included.
    pub fn max_entry(&self) -> f64 {
        let (it, off): (Box<dyn Iterator<Item = &f64>>, f64) = match self {
            Game::Matrix(g) => (Box::new(g.payoff.iter().flatten()), 0.0),
            Game::Coalition(g) => (Box::new(g.slices.iter().flatten().flatten()), g.offset),
        };
        it.fold(f64::NEG_INFINITY, |a, &b| a.max(b)) + off
    }

    pub fn embedding(&self) -> SimplexEmbedding {
        match self {
            Game::Matrix(g) => SimplexEmbedding::build(&[g.cols()], &[]),
            Game::Coalition(g) => {
                let (n1, n2) = g.sizes();
                SimplexEmbedding::build(&[n1, n2], &g.restrict_zero)
            }
        }
    }

    /// Parses a game file: `{"type": "matrix", "payoff": [[..]], "eta": ..}`
    /// or `{"type": "coalition", "slices": [[[..]]], "offset": ..}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let g: Game = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("games serialize")
    }
}

/// Affine map from the ambient space to one player's full strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct PlayerMap {
    pub size: usize,
    /// `(strategy, ambient coordinate)` for every free strategy.
    pub free: Vec<(usize, usize)>,
}

impl PlayerMap {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.size];
        let mut rest = 1.0;
        for &(s, a) in &self.free {
            y[s] = x[a];
            rest -= x[a];
        }
        y[self.size - 1] = rest;
        y
    }

    /// Dense `y = M x + u`.
    fn affine(&self, dim: usize) -> (DMatrix<f64>, Vec<f64>) {
        let mut m = DMatrix::zeros(self.size, dim);
        let mut u = vec![0.0; self.size];
        u[self.size - 1] = 1.0;
        for &(s, a) in &self.free {
            m[(s, a)] = 1.0;
            m[(self.size - 1, a)] = -1.0;
        }
        (m, u)
    }
}

/// Eliminates each player's last strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexEmbedding {
    pub players: Vec<PlayerMap>,
    pub dim: usize,
}

impl SimplexEmbedding {
    fn build(sizes: &[usize], pinned: &[(usize, usize)]) -> Self {
        let mut players = Vec::new();
        let mut next = 0;
        for (pl, &n) in sizes.iter().enumerate() {
            let mut free = Vec::new();
            for s in 0..n.saturating_sub(1) {
                if !pinned.contains(&(pl, s)) {
                    free.push((s, next));
                    next += 1;
                }
            }
            players.push(PlayerMap { size: n, free });
        }
        SimplexEmbedding { players, dim: next }
    }

    /// Full strategies of every player at ambient point `x`.
    pub fn strategies(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_dim(self.dim, x.len())?;
        Ok(self.players.iter().map(|p| p.apply(x)).collect())
    }

    /// Groups of ambient coordinates whose sum must stay at most one. Players
    /// with a single free coordinate are covered by the box.
    pub fn simplex_groups(&self) -> Vec<Vec<usize>> {
        self.players
            .iter()
            .filter(|p| p.free.len() > 1)
            .map(|p| p.free.iter().map(|&(_, a)| a).collect())
            .collect()
    }

    pub fn is_feasible(&self, x: &[f64], tol: f64) -> bool {
        x.iter().all(|&v| v >= -tol && v <= 1.0 + tol)
            && self
                .simplex_groups()
                .iter()
                .all(|g| g.iter().map(|&k| x[k]).sum::<f64>() <= 1.0 + tol)
    }
}

/// `φ(x) = c + lᵀx + xᵀQx` with `Q` symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTerm {
    pub constant: f64,
    pub linear: Vec<f64>,
    pub quad: DMatrix<f64>,
}

impl QuadraticTerm {
    pub fn value(&self, x: &[f64]) -> f64 {
        let d = x.len();
        let mut v = self.constant;
        for a in 0..d {
            let mut qa = 0.0;
            for b in 0..d {
                qa += self.quad[(a, b)] * x[b];
            }
            v += x[a] * (self.linear[a] + qa);
        }
        v
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        for a in 0..d {
            let mut qa = 0.0;
            for b in 0..d {
                qa += self.quad[(a, b)] * x[b];
            }
            out[a] = self.linear[a] + 2.0 * qa;
        }
    }

    fn scaled(&self, s: f64) -> Self {
        QuadraticTerm {
            constant: self.constant * s,
            linear: self.linear.iter().map(|v| v * s).collect(),
            quad: &self.quad * s,
        }
    }
}

fn terms_of(game: &Game, emb: &SimplexEmbedding) -> Vec<QuadraticTerm> {
    let d = emb.dim;
    match game {
        Game::Matrix(g) => {
            let (m, u) = emb.players[0].affine(d);
            g.payoff
                .iter()
                .map(|row| {
                    let a = nalgebra::DVector::from_column_slice(row);
                    let l = m.transpose() * &a;
                    QuadraticTerm {
                        constant: row.iter().zip(&u).map(|(a, u)| a * u).sum(),
                        linear: l.iter().copied().collect(),
                        quad: DMatrix::zeros(d, d),
                    }
                })
                .collect()
        }
        Game::Coalition(g) => {
            let (m1, u1) = emb.players[0].affine(d);
            let (m2, u2) = emb.players[1].affine(d);
            let (u1, u2) = (
                nalgebra::DVector::from_vec(u1),
                nalgebra::DVector::from_vec(u2),
            );
            g.slices
                .iter()
                .map(|rows| {
                    let b = DMatrix::from_fn(rows.len(), rows[0].len(), |r, c| rows[r][c]);
                    let constant = (u1.transpose() * &b * &u2)[(0, 0)] + g.offset;
                    let linear =
                        m1.transpose() * (&b * &u2) + m2.transpose() * (b.transpose() * &u1);
                    let q = m1.transpose() * &b * &m2;
                    QuadraticTerm {
                        constant,
                        linear: linear.iter().copied().collect(),
                        quad: 0.5 * (&q + q.transpose()),
                    }
                })
                .collect()
        }
    }
}

/// `φ^k`, through `exp(k ln φ)` when `φ > 0`.
pub fn pow_term(phi: f64, k: u32) -> f64 {
    if k == 0 {
        1.0
    } else if phi > 0.0 {
        (k as f64 * phi.ln()).exp()
    } else {
        phi.powi(k as i32)
    }
}

/// `Φ_p(x) = (1/N) Σ_j (φ_j(x) / s)^p` for a payoff scale `s`.
#[derive(Debug, Clone)]
pub struct SmoothedGame {
    pub base: Game,
    pub name: String,
    pub p: u32,
    pub rescale_factor: f64,
    pub embedding: SimplexEmbedding,
    /// Scaled max-terms.
    pub terms: Vec<QuadraticTerm>,
    pub warnings: Vec<String>,
}

/// Rescaling is on by default from `p = 10` upwards.
pub fn default_rescale(p: u32) -> bool {
    p >= 10
}

/// Smooths `game`; with `rescale` every payoff is first divided by the largest entry.
pub fn smooth(game: &Game, p: u32, rescale: bool) -> Result<SmoothedGame> {
    let factor = if rescale { game.max_entry() } else { 1.0 };
    smooth_with_factor(game, p, factor)
}

/// Smooths `game` with payoffs divided by an explicit positive `factor`.
pub fn smooth_with_factor(game: &Game, p: u32, factor: f64) -> Result<SmoothedGame> {
    if p < 1 {
        return Err(invalid("smoothing exponent p must be at least 1"));
    }
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(invalid("rescale factor must be positive"));
    }
    game.validate()?;
    let embedding = game.embedding();
    let terms: Vec<QuadraticTerm> = terms_of(game, &embedding)
        .iter()
        .map(|t| t.scaled(1.0 / factor))
        .collect();
    let mut warnings = Vec::new();
    if p % 2 == 1 {
        let d = embedding.dim;
        let corner_neg = (0..1usize << d).any(|mask| {
            let x: Vec<f64> = (0..d).map(|k| ((mask >> k) & 1) as f64).collect();
            terms.iter().any(|t| t.value(&x) <= 0.0)
        });
        if corner_neg {
            warnings.push(format!("odd p = {p}: some max-term is nonpositive on the unit box, convexity not guaranteed there"));
        }
    }
    Ok(SmoothedGame {
        base: game.clone(),
        name: "game".into(),
        p,
        rescale_factor: factor,
        embedding,
        terms,
        warnings,
    })
}

impl SmoothedGame {
    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn shared(&self) -> Arc<dyn ObjectiveFamily> {
        Arc::new(self.clone())
    }

    /// `(N Φ_p)^{1/p}` in the original payoff units.
    pub fn smoothed_max(&self, x: &[f64]) -> f64 {
        let n = self.terms.len() as f64;
        (n * self.value(x)).powf(1.0 / self.p as f64) * self.rescale_factor
    }

    /// Exact Hessian of component `i`:
    /// `p(p−1)φ^{p−2}∇φ∇φᵀ + pφ^{p−1}∇²φ`.
    pub fn component_hessian(&self, i: usize, x: &[f64]) -> DMatrix<f64> {
        let t = &self.terms[i];
        let d = x.len();
        let mut g = vec![0.0; d];
        t.gradient_into(x, &mut g);
        chain_hessian(self.p, t.value(x), &g, &(2.0 * &t.quad))
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = x.len();
        let mut h = DMatrix::zeros(d, d);
        for i in 0..self.terms.len() {
            h += self.component_hessian(i, x);
        }
        h / self.terms.len() as f64
    }

    /// Box penalty over `[0, 1]` per ambient coordinate plus one sum
    /// constraint per player with several free strategies.
    pub fn make_penalty(&self, strength: f64, exponent: u32) -> Result<PenaltySpec> {
        let d = self.embedding.dim;
        let mut pen = PenaltySpec::new_box(vec![0.0; d], vec![1.0; d], strength, exponent)?;
        pen.simplex_groups = self.embedding.simplex_groups();
        Ok(pen)
    }
}

fn chain_hessian(p: u32, phi: f64, g: &[f64], hphi: &DMatrix<f64>) -> DMatrix<f64> {
    let d = g.len();
    let pf = p as f64;
    let s = if p >= 2 {
        pf * (pf - 1.0) * pow_term(phi, p - 2)
    } else {
        0.0
    };
    let t = pf * pow_term(phi, p - 1);
    DMatrix::from_fn(d, d, |a, b| s * g[a] * g[b] + t * hphi[(a, b)])
}

impl ObjectiveFamily for SmoothedGame {
    fn dim(&self) -> usize {
        self.embedding.dim
    }

    fn n_components(&self) -> usize {
        self.terms.len()
    }

    fn component_value(&self, i: usize, w: &[f64]) -> f64 {
        pow_term(self.terms[i].value(w), self.p)
    }

    fn component_gradient(&self, i: usize, w: &[f64], out: &mut [f64]) {
        let t = &self.terms[i];
        t.gradient_into(w, out);
        let s = self.p as f64 * pow_term(t.value(w), self.p - 1);
        out.iter_mut().for_each(|g| *g *= s);
    }

    fn label(&self) -> String {
        format!(
            "{} (p={}, scale 1/{})",
            self.name, self.p, self.rescale_factor
        )
    }
}

/// The `N` unscaled max-terms `φ_j` at ambient point `x`.
pub fn phi_values(smoothed: &SmoothedGame, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(smoothed.embedding.dim, x.len())?;
    Ok(smoothed
        .terms
        .iter()
        .map(|t| t.value(x) * smoothed.rescale_factor)
        .collect())
}

/// `e^{ln(n)/p}`, the worst-case ratio of the ℓ^p norm to the max norm in `ℝⁿ`.
pub fn lp_gap_bound(p: u32, n_terms: usize) -> f64 {
    ((n_terms.max(1) as f64).ln() / p.max(1) as f64).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub min_eigenvalue: f64,
    pub worst_point: Vec<f64>,
    pub worst_component: usize,
    pub n_points: usize,
    pub pass: bool,
}

pub const CONVEXITY_TOLERANCE: f64 = 1e-8;

/// Smallest Hessian eigenvalue of any `φ_j^p` over the sample points.
///
/// `∇²φ_j` comes from central differences of `∇φ_j` and is combined with
/// `φ_j` and `∇φ_j` through the chain rule. Differencing `φ_j^p` itself
/// leaves rounding noise of order `ε p φ^{p−1} / h`, far above the tolerance.
pub fn convexity_witness(smoothed: &SmoothedGame, samples: &[Vec<f64>]) -> Result<ConvexityReport> {
    let d = smoothed.embedding.dim;
    let mut report = ConvexityReport {
        min_eigenvalue: f64::INFINITY,
        worst_point: Vec::new(),
        worst_component: 0,
        n_points: samples.len(),
        pass: true,
    };
    let mut gp = vec![0.0; d];
    let mut gm = vec![0.0; d];
    let mut g = vec![0.0; d];
    for x in samples {
        check_dim(d, x.len())?;
        let h = 1e-4 * x.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        for (j, t) in smoothed.terms.iter().enumerate() {
            let mut hphi = DMatrix::zeros(d, d);
            let mut xs = x.clone();
            for k in 0..d {
                xs[k] = x[k] + h;
                t.gradient_into(&xs, &mut gp);
                xs[k] = x[k] - h;
                t.gradient_into(&xs, &mut gm);
                xs[k] = x[k];
                for a in 0..d {
                    hphi[(a, k)] = (gp[a] - gm[a]) / (2.0 * h);
                }
            }
            let hphi = 0.5 * (&hphi + hphi.transpose());
            t.gradient_into(x, &mut g);
            let hess = chain_hessian(smoothed.p, t.value(x), &g, &hphi);
            let lam = SymmetricEigen::new(hess).eigenvalues.min();
            if lam < report.min_eigenvalue {
                report.min_eigenvalue = lam;
                report.worst_point = x.clone();
                report.worst_component = j;
            }
        }
    }
    report.pass = report.min_eigenvalue >= -CONVEXITY_TOLERANCE;
    Ok(report)
}

/// Analytic minimizers of the exact (unsmoothed) minimax problem, in ambient coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub global: Vec<Vec<f64>>,
    pub local: Vec<Vec<f64>>,
    /// `max_j φ_j` at the global minimizers.
    pub value: f64,
}

impl ReferenceSolution {
    pub fn all_minimizers(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.global.iter().chain(&self.local)
    }
}

fn max_term(game: &Game, x: &[f64]) -> f64 {
    let emb = game.embedding();
    terms_of(game, &emb)
        .iter()
        .map(|t| t.value(x))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Minimax point of a 2×2 matrix game, `y` being the weight on the first column.
pub fn solve_2x2(game: &MatrixGame) -> Result<ReferenceSolution> {
    game.validate()?;
    if game.rows() != 2 || game.cols() != 2 {
        return Err(Error::NotAvailable("closed form needs a 2×2 game".into()));
    }
    let a = &game.payoff;
    // φ_j(y) = a_j1 y + a_j2 (1 − y); max of two lines is minimized at an
    // endpoint or at their crossing.
    let phi = |y: f64| (a[0][0] * y + a[0][1] * (1.0 - y)).max(a[1][0] * y + a[1][1] * (1.0 - y));
    let mut cands = vec![0.0, 1.0];
    let denom = (a[0][0] - a[0][1]) - (a[1][0] - a[1][1]);
    if denom != 0.0 {
        let y = (a[1][1] - a[0][1]) / denom;
        if (0.0..=1.0).contains(&y) {
            cands.push(y);
        }
    }
    let best = cands
        .into_iter()
        .min_by(|x, y| phi(*x).total_cmp(&phi(*y)))
        .unwrap();
    Ok(ReferenceSolution {
        global: vec![vec![best]],
        local: Vec::new(),
        value: phi(best),
    })
}

/// Reference minimizers for a catalog game, or a 2×2 matrix game.
pub fn exact_solution(name: &str) -> Result<ReferenceSolution> {
    let game = catalog_game(name)?;
    let (global, local) = match name {
        "ex62" => {
            return solve_2x2(match &game {
                Game::Matrix(g) => g,
                _ => unreachable!(),
            })
        }
        "ex63" => (vec![vec![1.0 / 3.0, 1.0 / 3.0]], vec![]),
        "ex64" => (vec![vec![0.0, 0.0], vec![1.0, 1.0]], vec![]),
        "ex66" => {
            let w = 4.0 - 12f64.sqrt();
            (vec![vec![w, 3.0 * w / (4.0 - w)]], vec![])
        }
        "ex67" => {
            let t = 1.0 / 3.0;
            let h = 0.5;
            // (y₁, y₂, z₁, z₂) from y = (y₁, y₂, ·), z = (z₁, z₂, ·)
            (
                vec![
                    vec![1.0, 0.0, 0.0, h],
                    vec![0.0, 1.0, h, 0.0],
                    vec![0.0, 0.0, h, h],
                ],
                vec![
                    vec![0.0, t, 2.0 * t, t],
                    vec![2.0 * t, t, 0.0, t],
                    vec![t, 0.0, t, 2.0 * t],
                    vec![t, 2.0 * t, t, 0.0],
                    vec![0.0, 2.0 * t, 2.0 * t, 0.0],
                    vec![2.0 * t, 0.0, 0.0, 2.0 * t],
                ],
            )
        }
        "ex67-reduced" => {
            let t = 1.0 / 3.0;
            (
                vec![vec![1.0, 0.5, 0.0], vec![0.0, 0.5, 0.5]],
                vec![vec![t, 2.0 * t, t], vec![2.0 * t, 2.0 * t, 0.0]],
            )
        }
        _ => unreachable!(),
    };
    let value = max_term(&game, &global[0]);
    Ok(ReferenceSolution {
        global,
        local,
        value,
    })
}

/// The two zeros of `φ₁ = φ₂ = 0` for the 2×2 coalition example with
/// `B₂ = [[2, 5], [1, 2]]`, as `(w, z)` with `w = z + 2`.
pub fn ex64_exterior_zeros() -> [[f64; 2]; 2] {
    let r = 17f64.sqrt();
    let z1 = (-1.0 + r) / 2.0;
    let z2 = (-1.0 - r) / 2.0;
    [[z1 + 2.0, z1], [z2 + 2.0, z2]]
}

pub struct CatalogEntry {
    pub name: &'static str,
    pub description: &'static str,
}

pub const CATALOG: &[CatalogEntry] = &[
    CatalogEntry {
        name: "ex62",
        description: "2x2 matrix game A = [[1,3],[2,1]]",
    },
    CatalogEntry {
        name: "ex63",
        description: "rock-paper-scissors plus 2, 3x3 matrix game",
    },
    CatalogEntry {
        name: "ex64",
        description: "2x2x2 coalition game, B2 = [[2,5],[1,2]], boundary minima",
    },
    CatalogEntry {
        name: "ex66",
        description: "2x2x2 coalition game, B2 = [[2,2.5],[1,2]], interior minimum",
    },
    CatalogEntry {
        name: "ex67",
        description: "three-player odd-man-in rock-paper-scissors plus 2",
    },
    CatalogEntry {
        name: "ex67-reduced",
        description: "ex67 with the first strategy of y pinned to zero",
    },
];

pub fn catalog() -> &'static [CatalogEntry] {
    CATALOG
}

/// `B_j = I − e_j 1ᵀ − 1 e_jᵀ`, so `yᵀB_j z = y·z − y_j − z_j` on the simplices.
fn odd_man_in_slices() -> Vec<Vec<Vec<f64>>> {
    (0..3)
        .map(|j| {
            (0..3)
                .map(|a| {
                    (0..3)
                        .map(|b| {
                            (a == b) as u8 as f64 - (a == j) as u8 as f64 - (b == j) as u8 as f64
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn catalog_game(name: &str) -> Result<Game> {
    let two_by_two = |b2: [[f64; 2]; 2]| -> Result<Game> {
        let b1 = vec![vec![2.0, 1.0], vec![3.0, 2.0]];
        let b2 = b2.iter().map(|r| r.to_vec()).collect();
        Ok(Game::Coalition(AsyncCoalitionGame::new(vec![b1, b2], 0.0)?))
    };
    match name {
        "ex62" => Ok(Game::Matrix(MatrixGame::new(
            vec![vec![1.0, 3.0], vec![2.0, 1.0]],
            1.0,
        )?)),
        "ex63" => {
            let rps = [[0.0, -1.0, 1.0], [1.0, 0.0, -1.0], [-1.0, 1.0, 0.0]];
            let payoff = rps
                .iter()
                .map(|r| r.iter().map(|v| v + 2.0).collect())
                .collect();
            Ok(Game::Matrix(MatrixGame::new(payoff, 1.0)?))
        }
        "ex64" => two_by_two([[2.0, 5.0], [1.0, 2.0]]),
        "ex66" => two_by_two([[2.0, 2.5], [1.0, 2.0]]),
        "ex67" => Ok(Game::Coalition(AsyncCoalitionGame::new(
            odd_man_in_slices(),
            2.0,
        )?)),
        "ex67-reduced" => Ok(Game::Coalition(
            AsyncCoalitionGame::new(odd_man_in_slices(), 2.0)?.restricted(0, 0)?,
        )),
        _ => Err(Error::NotAvailable(format!("unknown game '{name}'"))),
    }
}

/// Catalog game smoothed with exponent `p` and payoff divisor `factor`.
pub fn catalog_smoothed(name: &str, p: u32, factor: f64) -> Result<SmoothedGame> {
    Ok(smooth_with_factor(&catalog_game(name)?, p, factor)?.named(name))
}

/// Cells of a uniform grid over the feasible set with `n` points per axis
/// (`[0, 1]` endpoints included); returns the grid point minimizing `Φ_p`.
/// Values within a relative `1e-12` of the running best count as ties and
/// keep the earlier point, so symmetric games give a stable answer.
pub fn grid_argmin(smoothed: &SmoothedGame, n: usize) -> Result<Vec<f64>> {
    let d = smoothed.embedding.dim;
    if n < 2 {
        return Err(invalid("grid needs at least two points per axis"));
    }
    if d > 3 {
        return Err(Error::NotAvailable(
            "grid search is limited to three dimensions".into(),
        ));
    }
    let total = n.pow(d as u32);
    let mut best = (f64::INFINITY, Vec::new());
    let mut x = vec![0.0; d];
    for idx in 0..total {
        let mut r = idx;
        for v in x.iter_mut() {
            *v = (r % n) as f64 / (n - 1) as f64;
            r /= n;
        }
        if !smoothed.embedding.is_feasible(&x, 1e-12) {
            continue;
        }
        let v = smoothed.value(&x);
        if best.1.is_empty() || v < best.0 - 1e-12 * best.0.abs() {
            best = (v, x.clone());
        }
    }
    Ok(best.1)
}

/// Damped Newton iteration for `Φ_p` from `start`, using exact Hessians.
pub fn newton_argmin(
    smoothed: &SmoothedGame,
    start: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let d = smoothed.embedding.dim;
    check_dim(d, start.len())?;
    let mut x = start.to_vec();
    let mut g = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    for _ in 0..max_iter {
        smoothed.gradient_into(&x, &mut g, &mut scratch);
        let h = smoothed.hessian(&x);
        let gv = nalgebra::DVector::from_column_slice(&g);
        let step = match h.clone().cholesky() {
            Some(c) => c.solve(&gv),
            None => gv.clone(),
        };
        let f0 = smoothed.value(&x);
        let mut t = 1.0;
        let mut next: Vec<f64>;
        loop {
            next = x.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
            if smoothed.value(&next) <= f0 || t < 1e-12 {
                break;
            }
            t *= 0.5;
        }
        let moved = next
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = next;
        if moved < tol {
            return Ok(x);
        }
    }
    Ok(x)
}

impl fmt::Display for ReferenceSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "value {:.6}; global {:?}; local {:?}",
            self.value, self.global, self.local
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::trial_rng;
    use rand::Rng;

    fn random_points(d: usize, n: usize, lo: f64, hi: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = trial_rng(seed, 0);
        (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(lo..hi)).collect())
            .collect()
    }

    fn feasible_points(emb: &SimplexEmbedding, n: usize, seed: u64) -> Vec<Vec<f64>> {
        random_points(emb.dim, 20 * n, 0.0, 1.0, seed)
            .into_iter()
            .filter(|x| emb.is_feasible(x, 0.0))
            .take(n)
            .collect()
    }

    #[test]
    fn ex62_quadratic_form() {
        let s = catalog_smoothed("ex62", 2, 1.0).unwrap();
        for y in [-1.0, 0.0, 0.3, 2.0 / 3.0, 1.0, 4.0] {
            let expect = 0.5 * (5.0 * y * y - 10.0 * y + 10.0);
            assert!((s.value(&[y]) - expect).abs() < 1e-12);
        }
        let phi = phi_values(&s, &[0.25]).unwrap();
        assert!((phi[0] - 2.5).abs() < 1e-15 && (phi[1] - 1.25).abs() < 1e-15);
    }

    #[test]
    fn p_one_is_plain_average() {
        let s = catalog_smoothed("ex63", 1, 1.0).unwrap();
        let x = [0.2, 0.7];
        let phi = phi_values(&s, &x).unwrap();
        assert!((s.value(&x) - phi.iter().sum::<f64>() / 3.0).abs() < 1e-14);
    }

    #[test]
    fn p_zero_and_bad_factor_rejected() {
        let g = catalog_game("ex62").unwrap();
        assert!(smooth(&g, 0, false).is_err());
        assert!(smooth_with_factor(&g, 2, 0.0).is_err());
        assert!(matches!(catalog_game("ex99"), Err(Error::NotAvailable(_))));
    }

    #[test]
    fn positivity_floor_enforced() {
        assert!(MatrixGame::new(vec![vec![1.0, 0.5]], 1.0).is_err());
        assert!(AsyncCoalitionGame::new(vec![vec![vec![-1.0]]], 0.5).is_err());
    }

    #[test]
    fn phi_values_at_reference_points() {
        let s = catalog_smoothed("ex64", 2, 1.0).unwrap();
        assert_eq!(phi_values(&s, &[0.0, 0.0]).unwrap(), vec![2.0, 2.0]);
        let s = catalog_smoothed("ex66", 10, 3.0).unwrap();
        let phi = phi_values(&s, &[0.536, 0.464]).unwrap();
        assert!(
            (phi[0] - 1.928).abs() < 1e-9 && (phi[1] - 1.928).abs() < 2e-3,
            "{phi:?}"
        );
        let s = catalog_smoothed("ex63", 10, 1.0).unwrap();
        for v in phi_values(&s, &[1.0 / 3.0, 1.0 / 3.0]).unwrap() {
            assert!((v - 2.0).abs() < 1e-14);
        }
        assert!(phi_values(&s, &[0.5]).is_err());
    }

    #[test]
    fn ex63_first_term_and_ex67_formula() {
        let s = catalog_smoothed("ex63", 2, 1.0).unwrap();
        for x in random_points(2, 20, -2.0, 2.0, 3) {
            assert!((phi_values(&s, &x).unwrap()[0] - (3.0 - x[0] - 2.0 * x[1])).abs() < 1e-13);
        }
        let s = catalog_smoothed("ex67", 2, 1.0).unwrap();
        for x in random_points(4, 20, -1.0, 2.0, 4) {
            let y = [x[0], x[1], 1.0 - x[0] - x[1]];
            let z = [x[2], x[3], 1.0 - x[2] - x[3]];
            let dot: f64 = y.iter().zip(&z).map(|(a, b)| a * b).sum();
            let phi = phi_values(&s, &x).unwrap();
            for j in 0..3 {
                assert!((phi[j] - (2.0 + dot - y[j] - z[j])).abs() < 1e-12);
            }
        }
        let r = catalog_smoothed("ex67-reduced", 2, 1.0).unwrap();
        assert_eq!(r.dim(), 3);
        let full = phi_values(&s, &[0.0, 0.3, 0.2, 0.5]).unwrap();
        let red = phi_values(&r, &[0.3, 0.2, 0.5]).unwrap();
        assert!(full.iter().zip(&red).all(|(a, b)| (a - b).abs() < 1e-14));
        assert_eq!(r.embedding.simplex_groups(), vec![vec![1, 2]]);
    }

    #[test]
    fn ex64_gradient_directions() {
        let p = 4;
        let s = catalog_smoothed("ex64", p, 1.0).unwrap();
        let mut g = vec![0.0; 2];
        for x in random_points(2, 10, 0.0, 1.0, 5) {
            let (w, z) = (x[0], x[1]);
            let phi1 = 2.0 + z - w;
            let phi2 = 2.0 - 2.0 * w * z + 3.0 * w - z;
            s.component_gradient(0, &x, &mut g);
            let k = p as f64 * phi1.powi(p as i32 - 1);
            assert!((g[0] + k).abs() < 1e-10 * k && (g[1] - k).abs() < 1e-10 * k);
            s.component_gradient(1, &x, &mut g);
            let k = p as f64 * phi2.powi(p as i32 - 1);
            assert!((g[0] - k * (3.0 - 2.0 * z)).abs() < 1e-10 * k);
            assert!((g[1] - k * (-2.0 * w - 1.0)).abs() < 1e-10 * k);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for name in ["ex62", "ex63", "ex64", "ex66", "ex67", "ex67-reduced"] {
            for p in [2, 10] {
                let s = catalog_smoothed(name, p, catalog_game(name).unwrap().max_entry()).unwrap();
                let d = s.dim();
                let mut g = vec![0.0; d];
                for x in feasible_points(&s.embedding, 50, 6) {
                    for i in 0..s.n_components() {
                        s.component_gradient(i, &x, &mut g);
                        let h = 1e-6;
                        for k in 0..d {
                            let mut xp = x.clone();
                            let mut xm = x.clone();
                            xp[k] += h;
                            xm[k] -= h;
                            let fd =
                                (s.component_value(i, &xp) - s.component_value(i, &xm)) / (2.0 * h);
                            let scale = g.iter().fold(1e-8f64, |a, v| a.max(v.abs()));
                            assert!(
                                (fd - g[k]).abs() <= 1e-6 * scale,
                                "{name} p={p} {fd} {}",
                                g[k]
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn value_sandwich() {
        for name in ["ex62", "ex63", "ex64", "ex66", "ex67"] {
            for p in [2, 4, 10] {
                let s = catalog_smoothed(name, p, 1.0).unwrap();
                let gap = lp_gap_bound(p, s.n_components());
                for x in feasible_points(&s.embedding, 50, 7) {
                    let mx = phi_values(&s, &x)
                        .unwrap()
                        .into_iter()
                        .fold(f64::NEG_INFINITY, f64::max);
                    let sm = s.smoothed_max(&x);
                    assert!(mx <= sm * (1.0 + 1e-12) && sm <= mx * gap * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn gap_bound_values() {
        assert!((lp_gap_bound(10, 2) - 1.071773462536293).abs() < 1e-12);
        assert_eq!(lp_gap_bound(7, 1), 1.0);
        // attained by constant vectors
        let c = [3.0f64; 5];
        let lp = c.iter().map(|v| v.powi(4)).sum::<f64>().powf(0.25);
        assert!((lp / 3.0 - lp_gap_bound(4, 5)).abs() < 1e-12);
    }

    #[test]
    fn rescale_preserves_grid_argmin() {
        for name in ["ex62", "ex63", "ex64", "ex66"] {
            for p in [2, 10] {
                let g = catalog_game(name).unwrap();
                let n = if g.embedding().dim == 1 { 10_001 } else { 200 };
                let a = grid_argmin(&smooth(&g, p, false).unwrap(), n).unwrap();
                let b = grid_argmin(&smooth(&g, p, true).unwrap(), n).unwrap();
                assert_eq!(a, b, "{name} p={p}");
            }
        }
        let s = smooth(&catalog_game("ex62").unwrap(), 10, true).unwrap();
        assert_eq!(s.rescale_factor, 3.0);
        assert!(default_rescale(10) && !default_rescale(2));
    }

    #[test]
    fn convexity_of_matrix_games() {
        let s = catalog_smoothed("ex62", 2, 1.0).unwrap();
        let pts = random_points(1, 100, -5.0, 5.0, 8);
        let r = convexity_witness(&s, &pts).unwrap();
        // (3 − 2y)² and (y + 1)² have second derivatives 8 and 2
        assert!(r.pass && (r.min_eigenvalue - 2.0).abs() < 1e-6, "{r:?}");
        for p in [2, 4, 10] {
            let s = catalog_smoothed("ex63", p, 3.0).unwrap();
            let r = convexity_witness(&s, &random_points(2, 200, -1.0, 2.0, 9)).unwrap();
            assert!(r.pass, "p={p} {r:?}");
        }
    }

    #[test]
    fn witness_matches_exact_hessian() {
        let s = catalog_smoothed("ex64", 4, 5.0).unwrap();
        let x = vec![0.3, 0.8];
        let r = convexity_witness(&s, &[x.clone()]).unwrap();
        let exact = (0..2)
            .map(|i| {
                SymmetricEigen::new(s.component_hessian(i, &x))
                    .eigenvalues
                    .min()
            })
            .fold(f64::INFINITY, f64::min);
        assert!((r.min_eigenvalue - exact).abs() < 1e-6 * exact.abs().max(1.0));
    }

    #[test]
    fn odd_p_warning() {
        let s = catalog_smoothed("ex62", 3, 1.0).unwrap();
        assert!(s.warnings.is_empty());
        let s = catalog_smoothed("ex64", 3, 1.0).unwrap();
        assert!(s.warnings.is_empty());
        let g = Game::Matrix(MatrixGame::new(vec![vec![1.0, 1.0, 5.0]], 1.0).unwrap());
        // y = (1, 1, −1) at the far corner of the unit box
        assert_eq!(smooth(&g, 3, false).unwrap().warnings.len(), 1);
    }

    #[test]
    fn exact_solutions() {
        let r = exact_solution("ex62").unwrap();
        assert!((r.global[0][0] - 2.0 / 3.0).abs() < 1e-15 && (r.value - 5.0 / 3.0).abs() < 1e-14);
        let r = exact_solution("ex66").unwrap();
        assert!((r.global[0][0] - 0.536).abs() < 1e-3 && (r.global[0][1] - 0.464).abs() < 1e-3);
        assert!(
            (r.value - (5.0 - 12f64.sqrt() * 2.0 + 1.0)).abs() < 1e-12
                || (r.value - 1.928).abs() < 1e-3
        );
        let r = exact_solution("ex64").unwrap();
        assert_eq!(r.value, 2.0);
        let r = exact_solution("ex67-reduced").unwrap();
        assert_eq!(r.global.len(), 2);
        assert_eq!(r.local.len(), 2);
        assert!(exact_solution("nope").is_err());
    }

    #[test]
    fn generic_2x2_solutions() {
        let g = MatrixGame::new(vec![vec![1.0, 3.0], vec![2.0, 1.0]], 1.0).unwrap();
        assert!((solve_2x2(&g).unwrap().global[0][0] - 2.0 / 3.0).abs() < 1e-15);
        // dominated: first row always larger, minimized at the cheaper column
        let g = MatrixGame::new(vec![vec![5.0, 4.0], vec![1.0, 1.0]], 1.0).unwrap();
        let r = solve_2x2(&g).unwrap();
        assert_eq!(r.global[0][0], 0.0);
        assert_eq!(r.value, 4.0);
    }

    #[test]
    fn ex64_zeros_of_both_terms() {
        for p in [2, 10] {
            let s = catalog_smoothed("ex64", p, 1.0).unwrap();
            for z in ex64_exterior_zeros() {
                assert!(s.value(&z) <= 1e-9);
                for phi in phi_values(&s, &z).unwrap() {
                    assert!(phi.abs() < 1e-12);
                }
            }
        }
        let [a, b] = ex64_exterior_zeros();
        assert!((a[0] - 3.5615528).abs() < 1e-6 && (b[1] + 2.5615528).abs() < 1e-6);
    }

    #[test]
    fn penalty_from_embedding() {
        let s = catalog_smoothed("ex64", 2, 1.0).unwrap();
        let pen = s.make_penalty(1.0, 1).unwrap();
        assert_eq!(pen.value(&[0.4, 0.6]), 0.0);
        assert!((pen.value(&[-0.1, 0.5]) - 0.1).abs() < 1e-15);
        let s = catalog_smoothed("ex67", 2, 1.0).unwrap();
        let pen = s.make_penalty(2.0, 2).unwrap();
        assert_eq!(pen.simplex_groups, vec![vec![0, 1], vec![2, 3]]);
        assert!((pen.value(&[0.6, 0.6, 0.0, 0.0]) - 2.0 * 0.04).abs() < 1e-12);
    }

    #[test]
    fn newton_finds_smoothed_minimizer() {
        let s = catalog_smoothed("ex62", 10, 3.0).unwrap();
        let x = newton_argmin(&s, &[0.5], 1e-14, 100).unwrap();
        let grid = grid_argmin(&s, 10_001).unwrap();
        assert!((x[0] - grid[0]).abs() <= 1e-4);
        assert!((x[0] - 0.71).abs() < 0.01);
        let mut g = [0.0];
        let mut sc = [0.0];
        s.gradient_into(&x, &mut g, &mut sc);
        assert!(g[0].abs() < 1e-10);
    }

    #[test]
    fn game_files_round_trip() {
        for e in catalog() {
            let g = catalog_game(e.name).unwrap();
            let text = g.to_json();
            assert_eq!(Game::from_json(&text).unwrap(), g);
        }
        let g = Game::from_json(r#"{"type":"matrix","payoff":[[1,2],[2,1]],"eta":0.5}"#).unwrap();
        assert_eq!(g.n_terms(), 2);
        let g =
            Game::from_json(r#"{"type":"coalition","slices":[[[1,2],[3,4]]],"offset":0}"#).unwrap();
        assert_eq!(g.embedding().dim, 2);
        assert!(matches!(Game::from_json("{"), Err(Error::Parse(_))));
    }
}
