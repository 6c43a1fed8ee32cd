//! The five batch commands.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use anyhow::{anyhow, bail, Context, Result};
use evalexpr::{ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Value};
use mmcf::barriers::{cap_field, comparison_check, BarrierKind, BarrierSpec, ComparisonReport};
use mmcf::estimates::{
    check_identity, check_inequality, verify_curvature_bounds, verify_gradient_bound, BoundReport, CheckOptions,
    CutoffParams, MarginReport, ResidualReport, IDENTITIES, INEQUALITIES,
};
use mmcf::flow::{
    evolve, evolve_lockstep, exhaustion_run, mollify, schedule, BoundaryPolicy, ExhaustionReport, FlowConfig, Trajectory,
};
use mmcf::grid::{build_grid, Grid, GridMode, GridSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{BoundaryChoice, Command, Initial, RunConfig};
use crate::output::Writer;

/// Setup problems that are the caller's fault (exit 1), as opposed to failed checks.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub struct Run<'a> {
    pub cfg: &'a RunConfig,
    pub refine: u32,
    pub threads: usize,
    pub out: Writer,
}

/// Returns whether every check passed.
pub fn execute(cmd: Command, run: &mut Run) -> Result<bool> {
    match cmd {
        Command::Simulate => simulate(run),
        Command::Verify => verify(run),
        Command::Exhaust => exhaust(run),
        Command::Barriers => barriers(run),
        Command::Convergence => convergence(run),
    }
}

fn grid_at(cfg: &RunConfig, refine: u32) -> Result<Grid> {
    build_grid(&cfg.grid_spec(refine)).map_err(|e| usage(e.to_string()))
}

fn barrier_field(spec: &BarrierSpec, grid: &Grid) -> Result<Vec<f64>> {
    if spec.kind == BarrierKind::Cap {
        let (v, mask) = cap_field(spec, grid)?;
        if mask.count() != grid.len() {
            return Err(usage(format!(
                "the cap of radius {} is a radial graph over only {} of {} nodes",
                spec.param,
                mask.count(),
                grid.len()
            )));
        }
        return Ok(v);
    }
    Ok(spec.field(grid, 0.0)?)
}

fn expression_field(expr: &str, grid: &Grid) -> Result<Vec<f64>> {
    let tree = evalexpr::build_operator_tree::<DefaultNumericTypes>(expr).map_err(|e| usage(e.to_string()))?;
    let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
    let mut out = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let z = grid.z(k);
        let vars = [("theta", grid.theta(k)), ("phi", grid.phi(k)), ("y", grid.y(k)), ("x1", z[0]), ("x2", z[1]), ("x3", z[2])];
        for (name, x) in vars {
            ctx.set_value(name.into(), Value::from_float(x)).expect("float variables");
        }
        let v = tree
            .eval_number_with_context(&ctx)
            .map_err(|e| usage(format!("initial expression at node {k}: {e}")))?;
        if !v.is_finite() {
            return Err(usage(format!("initial expression is not finite at node {k} (θ = {})", grid.theta(k))));
        }
        out.push(v);
    }
    Ok(out)
}

fn file_field(path: &std::path::Path, grid: &Grid) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read initial data {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()) {
            let x: f64 = tok.parse().map_err(|_| usage(format!("{}:{}: cannot parse `{tok}`", path.display(), i + 1)))?;
            out.push(x);
        }
    }
    if out.len() != grid.len() {
        return Err(usage(format!("{} holds {} values but the grid has {} nodes", path.display(), out.len(), grid.len())));
    }
    Ok(out)
}

/// Seeded smooth perturbation vanishing to fourth order at the rim, so frozen
/// boundary data stays compatible with the flow.
fn perturbation(cfg: &RunConfig, grid: &Grid) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let a: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm: f64 = a.iter().chain(&b).map(|c| c.abs()).sum::<f64>().max(1e-12);
    let full2 = grid.dim() == 2 && grid.spec().mode == GridMode::Full;
    let tm = grid.spec().theta_max;
    (0..grid.len())
        .map(|k| {
            let s = grid.theta(k) / tm;
            let pi = std::f64::consts::PI;
            let mut p: f64 = a.iter().enumerate().map(|(j, c)| c * (j as f64 * pi * s).cos()).sum();
            if grid.dim() == 1 {
                p += b.iter().enumerate().map(|(j, c)| c * ((j + 1) as f64 * pi * s).sin()).sum::<f64>();
            } else if full2 {
                let phi = grid.phi(k);
                p += b.iter().enumerate().map(|(j, c)| c * s.powi(j as i32 + 1) * ((j + 1) as f64 * phi).cos()).sum::<f64>();
            }
            cfg.perturbation * p / norm * (0.5 * pi * s).cos().powi(4)
        })
        .collect()
}

fn initial_field(cfg: &RunConfig, grid: &Grid) -> Result<Vec<f64>> {
    let mut v = match &cfg.initial {
        Initial::Barrier { barrier, param } => {
            barrier_field(&crate::config::barrier_spec(*barrier, *param, cfg.sigma, cfg.n), grid)?
        }
        Initial::Expression { expr } => expression_field(expr, grid)?,
        Initial::File { path } => file_field(path, grid)?,
    };
    if cfg.perturbation > 0.0 {
        for (x, p) in v.iter_mut().zip(perturbation(cfg, grid)) {
            *x += p;
        }
    }
    if let Some(scale) = cfg.mollify {
        v = mollify(&v, grid, scale).map_err(|e| usage(e.to_string()))?;
    }
    Ok(v)
}

fn flow_config(cfg: &RunConfig, snapshot_every: f64) -> FlowConfig {
    let mut f = FlowConfig::new(cfg.n, cfg.sigma, cfg.t_end).with_cfl(cfg.cfl).with_snapshots(snapshot_every);
    f.rhs_mode = cfg.rhs_mode;
    f.normalization = cfg.normalization;
    f.epsilon = cfg.epsilon;
    if cfg.boundary_policy == BoundaryChoice::Exact {
        let spec = cfg.exact().expect("exact boundary implies a known evolution");
        f.boundary = BoundaryPolicy::Prescribed(Arc::new(move |g: &Grid, k, t| {
            spec.height_at(g.y(k), t).unwrap_or(f64::NAN)
        }));
    }
    f
}

fn exact_error(spec: &BarrierSpec, grid: &Grid, v: &[f64], t: f64) -> f64 {
    (0..grid.len())
        .map(|k| (v[k] - spec.height_at(grid.y(k), t).unwrap_or(f64::NAN)).abs())
        .fold(0.0, f64::max)
}

fn snapshot_columns(grid: &Grid) -> Vec<&'static str> {
    let mut c = vec!["t", "node_id", "coord1"];
    if grid.dim() == 2 && grid.spec().mode == GridMode::Full {
        c.push("coord2");
    }
    c.extend(["v", "w", "H", "A2", "coshr", "support"]);
    c
}

fn snapshot_rows(traj: &Trajectory) -> Vec<Vec<f64>> {
    let g = &traj.grid;
    let two = g.dim() == 2 && g.spec().mode == GridMode::Full;
    let mut rows = Vec::new();
    for s in &traj.snapshots {
        let st = &s.state;
        for k in 0..g.len() {
            let mut r = vec![s.t, g.root_index(k) as f64, g.theta(k)];
            if two {
                r.push(g.phi(k));
            }
            r.extend([s.v[k], st.w[k], st.mean[k], st.norm_a2[k], st.cosh_r[k], st.support_e[k]]);
            rows.push(r);
        }
    }
    rows
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    config: &'a RunConfig,
    grid: GridSpec,
    nodes: usize,
    boundary_nodes: usize,
    steps: usize,
    dt_min: f64,
    dt_max: f64,
    final_time: f64,
    terminated: bool,
    events: Vec<String>,
    error: Option<String>,
    final_exact_error: Option<f64>,
    exact_tolerance: f64,
    passed: bool,
}

fn simulate(run: &mut Run) -> Result<bool> {
    let cfg = run.cfg;
    let grid = grid_at(cfg, run.refine)?;
    let v0 = initial_field(cfg, &grid)?;
    let every = cfg.snapshot_every.unwrap_or(cfg.t_end / 10.0);
    let exact = cfg.exact();
    let mut rep = SimulateReport {
        config: cfg,
        grid: grid.spec().clone(),
        nodes: grid.len(),
        boundary_nodes: grid.boundary_nodes().len(),
        steps: 0,
        dt_min: 0.0,
        dt_max: 0.0,
        final_time: 0.0,
        terminated: false,
        events: Vec::new(),
        error: None,
        final_exact_error: None,
        exact_tolerance: cfg.exact_tolerance,
        passed: false,
    };
    let traj = match evolve(&v0, &flow_config(cfg, every), &grid) {
        Ok(t) => t,
        Err(e) => {
            rep.error = Some(e.to_string());
            run.out.json("summary.json", &rep)?;
            return Ok(false);
        }
    };
    let g = &traj.grid;
    let mut columns = vec!["t", "v_min", "v_max", "w_max", "H_absmax", "A2_max"];
    if exact.is_some() {
        columns.push("linf_error");
    }
    let series: Vec<Vec<f64>> = traj
        .snapshots
        .iter()
        .map(|s| {
            let st = &s.state;
            let mut r = vec![
                s.t,
                s.v.iter().copied().fold(f64::INFINITY, f64::min),
                s.v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                st.w.iter().copied().fold(0.0, f64::max),
                st.mean.iter().map(|x| x.abs()).fold(0.0, f64::max),
                st.norm_a2.iter().copied().fold(0.0, f64::max),
            ];
            if let Some(spec) = &exact {
                r.push(exact_error(spec, g, &s.v, s.t));
            }
            r
        })
        .collect();
    run.out.csv("snapshots.csv", &snapshot_columns(g), &snapshot_rows(&traj))?;
    run.out.csv("series.csv", &columns, &series)?;

    let last = traj.last();
    rep.nodes = g.len();
    rep.boundary_nodes = g.boundary_nodes().len();
    rep.steps = traj.steps();
    rep.dt_min = traj.dt_history.iter().copied().fold(f64::INFINITY, f64::min);
    rep.dt_max = traj.dt_history.iter().copied().fold(0.0, f64::max);
    rep.final_time = last.t;
    rep.terminated = traj.terminated;
    rep.events = traj.events.clone();
    rep.final_exact_error = exact.as_ref().map(|s| exact_error(s, g, &last.v, last.t));
    rep.passed = !traj.terminated && rep.final_exact_error.is_none_or(|e| e <= cfg.exact_tolerance);
    run.out.json("summary.json", &rep)?;
    Ok(rep.passed)
}

#[derive(Serialize)]
struct IdentityResult {
    report: ResidualReport,
    tolerance: f64,
    passed: bool,
}

#[derive(Serialize)]
struct BoundResult {
    name: String,
    report: Option<BoundReport>,
    error: Option<String>,
    passed: bool,
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    config: &'a RunConfig,
    grid: GridSpec,
    nodes: usize,
    snapshots: usize,
    steps: usize,
    cutoff: Option<CutoffParams>,
    identities: Vec<IdentityResult>,
    inequalities: Vec<MarginReport>,
    skipped: Vec<String>,
    bounds: Vec<BoundResult>,
    passed: bool,
}

fn verify(run: &mut Run) -> Result<bool> {
    let cfg = run.cfg;
    let grid = grid_at(cfg, run.refine)?;
    let v0 = initial_field(cfg, &grid)?;
    let h = grid.spacing();
    let every = cfg.snapshot_every.unwrap_or(2.0 * h * h);
    if cfg.t_end / every < 2.0 {
        return Err(usage(format!("verify needs at least three snapshots; T / snapshot_every = {:.3}", cfg.t_end / every)));
    }
    let traj = evolve(&v0, &flow_config(cfg, every), &grid)?;
    let names: Vec<String> = if cfg.checks.is_empty() {
        IDENTITIES.iter().chain(&INEQUALITIES).map(|s| s.to_string()).collect()
    } else {
        cfg.checks.clone()
    };
    let opts = CheckOptions { margin: cfg.margin, tolerance: None, pole_exclusion: cfg.pole_exclusion };
    let cutoff = (cfg.sigma >= 0.0).then(|| {
        let mut p = CutoffParams::new(cfg.n, cfg.sigma, cfg.cosh_r_max, cfg.cutoff_theta, cfg.t_end);
        p.calibrate(&traj);
        p
    });
    let mut rep = VerifyReport {
        config: cfg,
        grid: grid.spec().clone(),
        nodes: traj.grid.len(),
        snapshots: traj.snapshots.len(),
        steps: traj.steps(),
        cutoff: cutoff.clone(),
        identities: Vec::new(),
        inequalities: Vec::new(),
        skipped: Vec::new(),
        bounds: Vec::new(),
        passed: !traj.terminated,
    };
    for name in &names {
        if IDENTITIES.contains(&name.as_str()) {
            let r = check_identity(name, &traj, &opts)?;
            let passed = r.scaled_residual <= cfg.identity_tolerance;
            rep.passed &= passed;
            rep.identities.push(IdentityResult { report: r, tolerance: cfg.identity_tolerance, passed });
            continue;
        }
        let Some(params) = &cutoff else {
            rep.skipped.push(format!("{name}: needs σ ≥ 0; reflect the initial surface first"));
            continue;
        };
        if INEQUALITIES.contains(&name.as_str()) {
            let r = check_inequality(name, &traj, params, &opts)?;
            rep.passed &= r.passed;
            rep.inequalities.push(r);
            continue;
        }
        let result = if name == "gradient_bound" {
            verify_gradient_bound(&traj, params)
        } else {
            let m: usize = name.trim_start_matches("curvature_bound_").parse().expect("validated at parse time");
            verify_curvature_bounds(&traj, params, m)
        };
        let b = match result {
            Ok(r) => BoundResult { name: name.clone(), passed: r.passed, report: Some(r), error: None },
            Err(e) => BoundResult { name: name.clone(), report: None, error: Some(e.to_string()), passed: false },
        };
        rep.passed &= b.passed;
        rep.bounds.push(b);
    }
    run.out.json("verify.json", &rep)?;
    Ok(rep.passed)
}

#[derive(Serialize)]
struct ExhaustReport<'a> {
    config: &'a RunConfig,
    grid: GridSpec,
    run: ExhaustionReport,
    passed: bool,
}

fn exhaust(run: &mut Run) -> Result<bool> {
    let cfg = run.cfg;
    if cfg.schedule.is_empty() {
        return Err(usage("exhaust needs a `schedule` of decreasing δ values"));
    }
    if cfg.epsilon.is_some() {
        return Err(usage("exhaust derives the truncations from `schedule`; remove `epsilon`"));
    }
    let grid = grid_at(cfg, run.refine)?;
    let v0 = initial_field(cfg, &grid)?;
    let sched = schedule(&cfg.schedule, cfg.n, cfg.sigma)?;
    let mut flow = flow_config(cfg, cfg.t_end);
    flow.boundary = BoundaryPolicy::Frozen;
    let r = exhaustion_run(&v0, &sched, &flow, &grid, cfg.cutoff_theta)?;
    let rows: Vec<Vec<f64>> = (0..sched.deltas.len())
        .map(|k| {
            let c = k.checked_sub(1).map(|i| &r.comparisons[i]);
            vec![
                k as f64,
                sched.deltas[k],
                sched.epsilons[k],
                sched.horizons[k],
                r.domain_sizes[k] as f64,
                r.steps[k] as f64,
                c.map_or(f64::NAN, |c| c.common_sup),
                c.map_or(f64::NAN, |c| c.inner_sup),
            ]
        })
        .collect();
    run.out.csv(
        "exhaust.csv",
        &["level", "delta", "epsilon", "horizon", "nodes", "steps", "common_sup", "inner_sup"],
        &rows,
    )?;
    let passed = r.inner_strictly_decreasing();
    run.out.json("exhaust.json", &ExhaustReport { config: cfg, grid: grid.spec().clone(), run: r, passed })?;
    Ok(passed)
}

#[derive(Serialize)]
struct BarriersReport<'a> {
    config: &'a RunConfig,
    barrier: BarrierSpec,
    barrier_role: &'static str,
    initial_gap: f64,
    boundary: &'static str,
    comparison: ComparisonReport,
}

fn barriers(run: &mut Run) -> Result<bool> {
    let cfg = run.cfg;
    let spec = cfg.barrier.ok_or_else(|| usage("barriers needs a `barrier` key"))?;
    let grid = grid_at(cfg, run.refine)?;
    let v0 = initial_field(cfg, &grid)?;
    let b = barrier_field(&spec, &grid)?;
    let lo = (0..grid.len()).map(|k| b[k] - v0[k]).fold(f64::INFINITY, f64::min);
    let hi = (0..grid.len()).map(|k| b[k] - v0[k]).fold(f64::NEG_INFINITY, f64::max);
    let (role, gap, pair) = if lo >= 0.0 {
        ("upper", lo, [v0, b])
    } else if hi <= 0.0 {
        ("lower", -hi, [b, v0])
    } else {
        return Err(usage(format!("barrier and initial surface cross: b − v₀ ranges over [{lo:.3e}, {hi:.3e}]")));
    };
    let mut flow = flow_config(cfg, cfg.snapshot_every.unwrap_or(cfg.t_end / 10.0));
    flow.boundary = BoundaryPolicy::Frozen;
    let t = evolve_lockstep(&pair, &flow, &grid)?;
    let rep = comparison_check(&t[0], &t[1])?;
    let rows: Vec<Vec<f64>> = t[0]
        .snapshots
        .iter()
        .zip(&t[1].snapshots)
        .map(|(l, u)| {
            let d = l.v.iter().zip(&u.v).map(|(a, b)| b - a);
            vec![l.t, d.clone().fold(f64::INFINITY, f64::min), d.fold(f64::NEG_INFINITY, f64::max)]
        })
        .collect();
    run.out.csv("barriers.csv", &["t", "min_margin", "max_margin"], &rows)?;
    let passed = rep.passed;
    run.out.json(
        "barriers.json",
        &BarriersReport {
            config: cfg,
            barrier: spec,
            barrier_role: role,
            initial_gap: gap,
            boundary: "frozen at the initial values of each surface",
            comparison: rep,
        },
    )?;
    Ok(passed)
}

#[derive(Clone, Debug, Serialize)]
struct Level {
    refine: u32,
    nodes: usize,
    spacing: f64,
    steps: usize,
    error: f64,
}

/// Errors below this are treated as round-off and carry no order information.
const ERROR_FLOOR: f64 = 1e-11;

#[derive(Serialize)]
struct ConvergenceReport<'a> {
    config: &'a RunConfig,
    levels: Vec<Level>,
    orders: Vec<Option<f64>>,
    min_order: f64,
    passed: bool,
}

fn convergence(run: &mut Run) -> Result<bool> {
    let cfg = run.cfg;
    let exact = cfg.exact().ok_or_else(|| usage("convergence needs an unperturbed barrier initial surface with a known evolution"))?;
    let refines: Vec<u32> = (0..=cfg.levels).map(|l| run.refine + l).collect();
    let results: Mutex<Vec<Option<Result<Level>>>> = Mutex::new((0..refines.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let solve = |refine: u32| -> Result<Level> {
        let grid = grid_at(cfg, refine)?;
        let v0 = initial_field(cfg, &grid)?;
        let traj = evolve(&v0, &flow_config(cfg, cfg.t_end), &grid)?;
        let last = traj.last();
        Ok(Level {
            refine,
            nodes: traj.grid.len(),
            spacing: grid.spacing(),
            steps: traj.steps(),
            error: exact_error(&exact, &traj.grid, &last.v, last.t),
        })
    };
    // Each level is independent, so the worker count cannot change the results.
    std::thread::scope(|s| {
        for _ in 0..run.threads.min(refines.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= refines.len() {
                    break;
                }
                let r = solve(refines[i]);
                results.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    let levels: Vec<Level> = results
        .into_inner()
        .map_err(|_| anyhow!("worker panicked"))?
        .into_iter()
        .map(|r| r.expect("every level solved"))
        .collect::<Result<_>>()?;
    let orders: Vec<Option<f64>> = levels
        .windows(2)
        .map(|p| (p[1].error > ERROR_FLOOR).then(|| (p[0].error / p[1].error).log2()))
        .collect();
    let passed = orders.iter().all(|o| o.is_none_or(|o| o >= cfg.min_order));
    let rows: Vec<Vec<f64>> = levels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let order = i.checked_sub(1).and_then(|j| orders[j]).unwrap_or(f64::NAN);
            vec![l.refine as f64, l.nodes as f64, l.spacing, l.steps as f64, l.error, order]
        })
        .collect();
    run.out.csv("convergence.csv", &["refine", "nodes", "h", "steps", "linf_error", "order"], &rows)?;
    run.out.json("convergence.json", &ConvergenceReport { config: cfg, levels, orders, min_order: cfg.min_order, passed })?;
    Ok(passed)
}

/// Worker cap from `MMCF_THREADS`, defaulting to the available cores.
pub fn thread_count(var: Option<&str>) -> Result<usize> {
    match var {
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
        Some(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => bail!(UsageError(format!("MMCF_THREADS must be a positive integer, got `{s}`"))),
        },
    }
}
