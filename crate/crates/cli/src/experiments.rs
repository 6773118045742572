use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use serde_json::{json, Value};

use sgdlab::checks::DEFAULT_SEED;
use sgdlab::csv::{num, row};
use sgdlab::descent::{self, DescentConfig, PenaltySpec, StepRule};
use sgdlab::fokker_planck::{
    build_problem_convex, build_problem_from_objective, density_moments, evolve, second_moment_ode,
    DensityState, DriftDiffusionProblem, FluxScheme, Grid1D, Rate,
};
use sgdlab::games::{self, Game, SmoothedGame};
use sgdlab::moments::{exact_moments, fixed_point_variance, normality_statistic};
use sgdlab::montecarlo::{
    histogram_1d, make_histogram, run_final_points, summarize, Bins, StartRule,
};
use sgdlab::objectives::{make_convex_1d, make_nonconvex_1d, QuadraticLinearSpec, SharedObjective};
use sgdlab::{EstimatorKind, Schedule};

use crate::config::{ExperimentConfig, Kind};
use crate::failure::{config_error, NumericAbort};
use crate::output::OutputDir;

pub fn resolve_objective(sel: &str) -> Result<SharedObjective> {
    if sel == "convex1d" {
        return Ok(Arc::new(make_convex_1d()));
    }
    if let Some(s) = sel.strip_prefix("nonconvex1d:") {
        let sigma: f64 = s
            .parse()
            .map_err(|_| config_error(format!("bad sigma in '{sel}'")))?;
        return Ok(Arc::new(make_nonconvex_1d(sigma)?));
    }
    if let Some(path) = sel.strip_prefix("quadratic:") {
        let text = fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
        return Ok(Arc::new(QuadraticLinearSpec::from_json(&text)?.build()?));
    }
    Err(config_error(format!("unknown objective '{sel}'")))
}

fn schedule(cfg: &ExperimentConfig) -> Result<Schedule> {
    let s = cfg
        .schedule
        .as_deref()
        .ok_or_else(|| config_error("--schedule is required"))?;
    Ok(s.parse()?)
}

fn bins(cfg: &ExperimentConfig) -> Bins {
    cfg.bins.map(Bins::Count).unwrap_or(Bins::FreedmanDiaconis)
}

fn start_rule(cfg: &ExperimentConfig, d: usize) -> Result<Option<StartRule>> {
    match (&cfg.start, &cfg.start_box) {
        (Some(_), Some(_)) => Err(config_error("give --start or --start-box, not both")),
        (_, Some(b)) if b.len() == 2 => Ok(Some(StartRule::UniformBox {
            lower: vec![b[0]; d],
            upper: vec![b[1]; d],
        })),
        (_, Some(_)) => Err(config_error("--start-box takes LO,HI")),
        (Some(_), None) => Ok(Some(StartRule::Fixed)),
        (None, None) => Ok(None),
    }
}

fn manifest(cfg: &ExperimentConfig, out: &OutputDir, status: &str, summary: Value) -> Value {
    json!({
        "kind": cfg.kind.map(|k| k.to_string()),
        "status": status,
        "seed": cfg.seed,
        "version": { "sgdlab": sgdlab::VERSION, "sgdlab-cli": env!("CARGO_PKG_VERSION") },
        "config": serde_json::to_value(cfg).expect("config serializes"),
        "summary": summary,
        "artifacts": out.artifacts(),
    })
}

/// `trial,x_1..x_d,status`, trials numbered from one; aborted rows leave the
/// coordinates empty.
fn final_points_csv(points: &[Option<Vec<f64>>], d: usize) -> String {
    let mut out = String::from("trial");
    for k in 1..=d {
        out.push_str(&format!(",x_{k}"));
    }
    out.push_str(",status\n");
    for (t, p) in points.iter().enumerate() {
        match p {
            Some(x) => out.push_str(&format!("{},{},ok\n", t + 1, row(x))),
            None => out.push_str(&format!("{}{},aborted\n", t + 1, ",".repeat(d))),
        }
    }
    out
}

fn histogram_artifacts(out: &mut OutputDir, ok: &[Vec<f64>], d: usize, bins: &Bins) -> Result<()> {
    match d {
        1 | 2 => out.write(
            "histogram.csv",
            &make_histogram(ok, &vec![bins.clone(); d])?.to_csv(),
        ),
        _ => {
            for k in 0..d {
                let v: Vec<f64> = ok.iter().map(|p| p[k]).collect();
                out.write(
                    &format!("histogram_x{}.csv", k + 1),
                    &histogram_1d(&v, bins.clone())?.to_csv(),
                )?;
            }
            Ok(())
        }
    }
}

pub fn run(mut cfg: ExperimentConfig) -> Result<()> {
    let kind = cfg
        .kind
        .ok_or_else(|| config_error("config needs a kind"))?;
    cfg.seed.get_or_insert(DEFAULT_SEED);
    let path = cfg
        .output
        .get_or_insert_with(|| PathBuf::from("sgdlab-runs").join(kind.to_string()))
        .clone();
    // Resolve everything that can fail on bad input before touching the disk.
    let plan = match kind {
        Kind::Gd | Kind::Sgd | Kind::Ensemble => Plan::Descent(descent_config(&mut cfg, kind)?),
        Kind::Game => Plan::Game(game_setup(&mut cfg)?),
        Kind::Moments => Plan::Finished(moments(&mut cfg)?),
        Kind::FokkerPlanck => Plan::Finished(fokker_planck(&mut cfg)?),
    };
    let mut out = OutputDir::prepare(&path, cfg.force)?;
    match (kind, plan) {
        (Kind::Gd | Kind::Sgd, Plan::Descent(d)) => trajectory(&cfg, d, &mut out),
        (Kind::Ensemble, Plan::Descent(d)) => ensemble(&cfg, d, &mut out),
        (Kind::Game, Plan::Game(g)) => game(&cfg, g, &mut out),
        (_, Plan::Finished(f)) => {
            for (name, text) in &f.files {
                out.write(name, text)?;
            }
            let m = manifest(&cfg, &out, "ok", f.summary);
            out.write_manifest(&m)
        }
        _ => unreachable!(),
    }
}

enum Plan {
    Descent(Descent),
    Game(GameSetup),
    Finished(Finished),
}

struct Descent {
    config: DescentConfig,
    start: StartRule,
    objective: String,
}

fn descent_config(cfg: &mut ExperimentConfig, kind: Kind) -> Result<Descent> {
    let objective = cfg
        .objective
        .get_or_insert_with(|| "convex1d".into())
        .clone();
    let obj = resolve_objective(&objective)?;
    let d = obj.dim();
    let rule: StepRule = match kind {
        Kind::Gd => {
            if cfg.estimator.as_deref().is_some_and(|e| e != "gd") {
                return Err(config_error("gd runs take no estimator"));
            }
            StepRule::Exact
        }
        _ => cfg.estimator.get_or_insert_with(|| "sgd".into()).parse()?,
    };
    let sched = schedule(cfg)?;
    let start = match start_rule(cfg, d)? {
        Some(StartRule::UniformBox { .. }) if kind != Kind::Ensemble => {
            return Err(config_error("--start-box needs an ensemble"));
        }
        Some(r) => r,
        None => StartRule::Fixed,
    };
    let initial_point = match (&mut cfg.start, &cfg.start_box) {
        (None, Some(_)) => vec![1.0; d],
        (start, _) => start.get_or_insert_with(|| vec![1.0; d]).clone(),
    };
    let record_every = match kind {
        Kind::Ensemble => 1,
        _ => *cfg.record_every.get_or_insert(1),
    };
    let config = DescentConfig {
        objective: obj,
        rule,
        schedule: sched,
        initial_point,
        n_iterations: *cfg.iters.get_or_insert(1000),
        penalty: None,
        seed: cfg.seed.unwrap(),
        record_every,
    };
    config.validate()?;
    start.validate(d)?;
    if kind == Kind::Ensemble {
        cfg.trials.get_or_insert(1000);
    }
    Ok(Descent {
        config,
        start,
        objective,
    })
}

fn trajectory(cfg: &ExperimentConfig, d: Descent, out: &mut OutputDir) -> Result<()> {
    let rec = descent::run(&d.config)?;
    out.write("trajectory.csv", &rec.to_csv())?;
    let status = if rec.is_aborted() { "aborted" } else { "ok" };
    let m = manifest(cfg, out, status, serde_json::to_value(rec.summary())?);
    out.write_manifest(&m)?;
    match rec.abort {
        Some(a) => Err(NumericAbort(format!("non-finite iterate at step {}", a.iteration)).into()),
        None => Ok(()),
    }
}

fn ensemble(cfg: &ExperimentConfig, d: Descent, out: &mut OutputDir) -> Result<()> {
    let n_trials = cfg.trials.unwrap();
    let dim = d.config.objective.dim();
    let finals = run_final_points(&d.config, n_trials, &d.start)?;
    out.write("final_points.csv", &final_points_csv(&finals, dim))?;
    let stats = match summarize(&d.config, finals) {
        Ok(s) => s,
        Err(e) => {
            let m = manifest(cfg, out, "aborted", json!({ "error": e.to_string() }));
            out.write_manifest(&m)?;
            return Err(e.into());
        }
    };
    let ok: Vec<Vec<f64>> = stats.successful().cloned().collect();
    let bins = bins(cfg);
    histogram_artifacts(out, &ok, dim, &bins)?;
    let mut summary = json!({
        "trials": stats.n_trials,
        "aborted": stats.aborted,
        "mean": stats.mean,
        "variance": stats.variance,
        "mean_grad_sq": stats.mean_grad_sq,
    });

    // Exact moments are an oracle only for single-sample SGD on the convex
    // family from a fixed start.
    let exact_case = d.objective == "convex1d"
        && d.config.rule == StepRule::Stochastic(EstimatorKind::SINGLE_SAMPLE)
        && d.start == StartRule::Fixed;
    if exact_case {
        let x1 = d.config.initial_point[0];
        let m = d.config.n_iterations + 1;
        let series = exact_moments(&d.config.schedule, x1, x1 * x1, m)?;
        let (e, _, v) = series.at(m).expect("series covers m");
        let xs = stats.coordinate(0);
        let hist = histogram_1d(&xs, bins)?;
        let mut csv = String::from("x,empirical_density,oracle_density\n");
        for (x, rho) in hist.centers(0).iter().zip(hist.density()) {
            let oracle = if v > 0.0 {
                (-(x - e).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
            } else {
                f64::NAN
            };
            csv.push_str(&format!("{}\n", row(&[*x, rho, oracle])));
        }
        out.write("oracle.csv", &csv)?;
        summary["oracle"] = json!({ "mean": e, "variance": v, "m": m });
        if let Ok(ks) = normality_statistic(&xs, e, v) {
            summary["oracle"]["ks"] = json!(ks);
        }
    }
    let m = manifest(cfg, out, "ok", summary);
    out.write_manifest(&m)
}

struct GameSetup {
    smoothed: SmoothedGame,
    config: DescentConfig,
    start: StartRule,
}

fn load_game(cfg: &ExperimentConfig) -> Result<(Game, String)> {
    match (&cfg.name, &cfg.game_file) {
        (Some(n), None) => Ok((
            games::catalog_game(n).map_err(|e| config_error(e.to_string()))?,
            n.clone(),
        )),
        (None, Some(f)) => {
            let text = fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
            let stem = f
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "game".into());
            Ok((Game::from_json(&text)?, stem))
        }
        _ => Err(config_error("give exactly one of --name or --game-file")),
    }
}

/// `K:D`, or `K:D:scaled` to multiply the penalty gradient by the step size.
fn parse_penalty(spec: &str) -> Result<(f64, u32, bool)> {
    let bad = || config_error(format!("penalty '{spec}' is not K:D or K:D:scaled"));
    let parts: Vec<&str> = spec.split(':').collect();
    let scaled = match parts.get(2) {
        None => false,
        Some(&"scaled") if parts.len() == 3 => true,
        _ => return Err(bad()),
    };
    if parts.len() < 2 {
        return Err(bad());
    }
    Ok((
        parts[0].parse().map_err(|_| bad())?,
        parts[1].parse().map_err(|_| bad())?,
        scaled,
    ))
}

fn game_setup(cfg: &mut ExperimentConfig) -> Result<GameSetup> {
    let (game, name) = load_game(cfg)?;
    let p = *cfg.p.get_or_insert(10);
    let factor = *cfg.rescale.get_or_insert(if games::default_rescale(p) {
        game.max_entry()
    } else {
        1.0
    });
    let smoothed = games::smooth_with_factor(&game, p, factor)?.named(name);
    let d = smoothed.embedding.dim;
    let penalty: Option<PenaltySpec> = match &cfg.penalty {
        Some(s) => {
            let (k, e, scaled) = parse_penalty(s)?;
            let mut pen = smoothed.make_penalty(k, e)?;
            pen.scaled_by_alpha = scaled;
            Some(pen)
        }
        None => None,
    };
    let start = match start_rule(cfg, d)? {
        Some(r) => r,
        None => StartRule::UniformSimplexBlocks {
            blocks: smoothed
                .embedding
                .players
                .iter()
                .map(|p| p.free.len())
                .filter(|&k| k > 0)
                .collect(),
        },
    };
    let rule: StepRule = cfg.estimator.get_or_insert_with(|| "sgd".into()).parse()?;
    let config = DescentConfig {
        objective: smoothed.shared(),
        rule,
        schedule: schedule(cfg)?,
        initial_point: cfg.start.clone().unwrap_or_else(|| vec![0.5; d]),
        n_iterations: *cfg.iters.get_or_insert(1000),
        penalty,
        seed: cfg.seed.unwrap(),
        record_every: 1,
    };
    config.validate()?;
    start.validate(d)?;
    cfg.trials.get_or_insert(1000);
    Ok(GameSetup {
        smoothed,
        config,
        start,
    })
}

fn game(cfg: &ExperimentConfig, g: GameSetup, out: &mut OutputDir) -> Result<()> {
    let s = &g.smoothed;
    let d = s.embedding.dim;
    let finals = run_final_points(&g.config, cfg.trials.unwrap(), &g.start)?;
    out.write("final_points.csv", &final_points_csv(&finals, d))?;
    let stats = match summarize(&g.config, finals) {
        Ok(st) => st,
        Err(e) => {
            let m = manifest(cfg, out, "aborted", json!({ "error": e.to_string() }));
            out.write_manifest(&m)?;
            return Err(e.into());
        }
    };
    let ok: Vec<Vec<f64>> = stats.successful().cloned().collect();
    histogram_artifacts(out, &ok, d, &bins(cfg))?;

    let feasible = ok
        .iter()
        .filter(|x| s.embedding.is_feasible(x, 1e-9))
        .count();
    let mut summary = json!({
        "trials": stats.n_trials,
        "aborted": stats.aborted,
        "mean": stats.mean,
        "variance": stats.variance,
        "mean_grad_sq": stats.mean_grad_sq,
        "feasible": feasible,
        "rescale_factor": s.rescale_factor,
        "n_terms": s.terms.len(),
        "lp_gap_bound": games::lp_gap_bound(s.p, s.terms.len()),
        "mean_strategies": s.embedding.strategies(&stats.mean)?,
        "smoothed_max_at_mean": s.smoothed_max(&stats.mean),
        "warnings": s.warnings,
    });
    if d <= 2 {
        summary["grid_argmin"] = json!(games::grid_argmin(s, 201)?);
    }
    if let (Some(name), None) = (&cfg.name, &cfg.game_file) {
        if let Ok(reference) = games::exact_solution(name) {
            let near = ok
                .iter()
                .filter(|x| {
                    reference.all_minimizers().any(|r| {
                        r.iter()
                            .zip(x.iter())
                            .map(|(a, b)| (a - b).powi(2))
                            .sum::<f64>()
                            .sqrt()
                            <= 0.05
                    })
                })
                .count();
            summary["reference"] = serde_json::to_value(&reference)?;
            summary["within_0.05_of_reference"] = json!(near);
        }
    }
    let m = manifest(cfg, out, "ok", summary);
    out.write_manifest(&m)
}

/// Files and summary of a run that writes nothing until it has finished.
struct Finished {
    files: Vec<(&'static str, String)>,
    summary: Value,
}

fn moments(cfg: &mut ExperimentConfig) -> Result<Finished> {
    let sched = schedule(cfg)?;
    let iters = *cfg.iters.get_or_insert(1000);
    let e1 = cfg.start.get_or_insert_with(|| vec![1.0])[0];
    let v1 = *cfg.init_var.get_or_insert(0.0);
    let series = exact_moments(&sched, e1, e1 * e1 + v1, iters + 1)?;
    let (e, f, v) = series.at(iters + 1).expect("series covers the last step");
    let mut summary = json!({ "m": iters + 1, "mean": e, "second_moment": f, "variance": v });
    if let Schedule::Constant { c } = sched {
        if let Ok(fp) = fixed_point_variance(c) {
            summary["fixed_point_variance"] = json!(fp);
        }
    }
    Ok(Finished {
        files: vec![("moments.csv", series.to_csv())],
        summary,
    })
}

/// Half the largest step the drift allows at `t = 0`, capped at 0.01.
fn default_dt(problem: &DriftDiffusionProblem, grid: &Grid1D) -> f64 {
    let vmax = (0..=grid.n_cells)
        .map(|i| (problem.drift)(grid.face(i), 0.0).abs())
        .fold(0.0, f64::max);
    if vmax > 0.0 {
        (0.5 * grid.dx() / vmax).min(0.01)
    } else {
        0.01
    }
}

fn fokker_planck(cfg: &mut ExperimentConfig) -> Result<Finished> {
    let objective = cfg
        .objective
        .get_or_insert_with(|| "convex1d".into())
        .clone();
    let kind: EstimatorKind = cfg.estimator.get_or_insert_with(|| "sgd".into()).parse()?;
    let rate = Rate::from(schedule(cfg)?);
    let grid = Grid1D::new(
        *cfg.x_min.get_or_insert(-4.0),
        *cfg.x_max.get_or_insert(4.0),
        *cfg.cells.get_or_insert(512),
    )?;
    let scheme: FluxScheme = match cfg
        .flux
        .get_or_insert_with(|| "exponential_fitting".into())
        .as_str()
    {
        "upwind" => FluxScheme::Upwind,
        "exponential_fitting" => FluxScheme::ExponentialFitting,
        other => return Err(config_error(format!("unknown flux scheme '{other}'"))),
    };
    let exact_ode = objective == "convex1d" && kind == EstimatorKind::SINGLE_SAMPLE;
    let problem = if exact_ode {
        build_problem_convex(rate)
    } else {
        build_problem_from_objective(resolve_objective(&objective)?, kind, rate)?
    }
    .with_scheme(scheme);
    let mean = *cfg.init_mean.get_or_insert(1.0);
    let var = *cfg.init_var.get_or_insert(0.01);
    let initial = DensityState::gaussian(grid, mean, var)?;
    let iters = *cfg.iters.get_or_insert(1000);
    let duration = *cfg.time.get_or_insert(iters as f64);
    let dt = *cfg.dt.get_or_insert_with(|| default_dt(&problem, &grid));
    let snaps = cfg
        .snapshots
        .get_or_insert_with(|| (0..=4).map(|k| duration * k as f64 / 4.0).collect())
        .clone();
    let evo = evolve(&initial, &problem, duration, dt, &snaps)?;

    let mut csv = String::from(if exact_ode {
        "t,mass,mean,second_moment,ode_second_moment\n"
    } else {
        "t,mass,mean,second_moment\n"
    });
    for s in &evo.trail {
        let (m0, m1, m2) = density_moments(s);
        csv.push_str(&row(&[s.time, m0, m1, m2]));
        if exact_ode {
            csv.push_str(&format!(
                ",{}",
                num(second_moment_ode(rate, mean * mean + var, s.time, dt)?)
            ));
        }
        csv.push('\n');
    }
    let (m0, m1, m2) = density_moments(&evo.final_state);
    let summary = json!({
        "final_time": evo.final_state.time,
        "mass": m0,
        "mean": m1,
        "second_moment": m2,
        "max_mass_drift": evo.max_mass_drift,
        "min_value": evo.min_value,
        "warnings": evo.warnings,
    });
    Ok(Finished {
        files: vec![("density.csv", evo.trail_csv()), ("moments.csv", csv)],
        summary,
    })
}
