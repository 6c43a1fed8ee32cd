//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the verdict lines are always
//! printed. The process fails when a criterion's outcome differs from the
//! expected one; criteria with a documented, unavoidable deviation are listed
//! in `KNOWN_DEVIATIONS` and still print FAIL.

use std::sync::Arc;
use std::time::{Duration, Instant};

use mmcf::barriers::{cap_field, comparison_check, hemisphere_field, horosphere_field, BarrierSpec};
use mmcf::estimates::{
    check_inequality, identity_refinement, verify_curvature_bounds, verify_gradient_bound, CheckOptions,
    CutoffParams, IDENTITIES,
};
use mmcf::flow::{
    compare_rhs, evolve, evolve_lockstep, exhaustion_run, mollify, schedule, stable_dt, BoundaryData,
    BoundaryPolicy, FlowConfig, Normalization, Trajectory,
};
use mmcf::geometry::curvature;
use mmcf::grid::{build_grid, Grid, GridSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria whose FAIL is expected, with the reason.
const KNOWN_DEVIATIONS: &[(u32, &str)] = &[(
    10,
    "for n ≥ 2 the normalization-1 form differs from the parametric law by (n−1) y e·∇v, \
     which does not vanish as h → 0",
)];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn horosphere_boundary(c0: f64, n: usize, sigma: f64) -> BoundaryData {
    Arc::new(move |g: &Grid, k, t| c0.ln() - g.y(k).ln() + (n as f64 - sigma) * t)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn horosphere_error(grid: &Grid, sigma: f64, t_end: f64, fixed_dt: Option<f64>) -> (Vec<f64>, f64) {
    let c0 = 0.8;
    let v0 = horosphere_field(c0, 0.0, sigma, grid).unwrap();
    let mut cfg = FlowConfig::new(grid.dim(), sigma, t_end)
        .with_boundary(BoundaryPolicy::Prescribed(horosphere_boundary(c0, grid.dim(), sigma)));
    cfg.fixed_dt = fixed_dt;
    let tr = evolve(&v0, &cfg, grid).unwrap();
    let exact = horosphere_field(c0, t_end, sigma, grid).unwrap();
    let v = tr.last().v.clone();
    let e = max_diff(&v, &exact);
    (v, e)
}

fn c1_hemisphere() -> Outcome {
    let g = build_grid(&GridSpec::arc(513, 1.2)).unwrap();
    let v0 = hemisphere_field(1.0, &g).unwrap();
    let st = curvature(&v0, &g).unwrap();
    let h_max = (0..g.len()).filter(|&k| !g.is_boundary(k)).map(|k| st.mean[k].abs()).fold(0.0, f64::max);
    // Any stable step leaves a stationary field in place; cfl near the Heun
    // limit keeps the 513-node run within budget.
    let cfg = FlowConfig::new(1, 0.0, 1.0).with_cfl(0.9).with_snapshots(0.25);
    let tr = evolve(&v0, &cfg, &g).unwrap();
    let drift = tr.snapshots.iter().map(|s| max_diff(&s.v, &v0)).fold(0.0, f64::max);
    outcome(
        h_max <= 1e-6 && drift <= 1e-10,
        format!("max|H| = {h_max:.2e}, drift over T=1 = {drift:.2e}, {} steps", tr.steps()),
    )
}

fn c2_horosphere() -> Outcome {
    let sigma = 0.3;
    let errs: Vec<f64> = [65, 129, 257]
        .iter()
        .map(|&n| horosphere_error(&build_grid(&GridSpec::arc(n, 1.2)).unwrap(), sigma, 0.5, None).1)
        .collect();
    let space: Vec<f64> = errs.windows(2).map(|p| (p[0] / p[1]).log2()).collect();

    // Temporal order on a fixed grid: successive differences under dt halving.
    let g = build_grid(&GridSpec::arc(65, 1.2)).unwrap();
    let t_end = 0.5;
    let st = curvature(&horosphere_field(0.8, 0.0, sigma, &g).unwrap(), &g).unwrap();
    let dt0 = stable_dt(&st, &g, &FlowConfig::new(1, sigma, t_end));
    let m = (t_end / dt0).ceil();
    let sols: Vec<Vec<f64>> =
        (0..4).map(|l| horosphere_error(&g, sigma, t_end, Some(t_end / (m * 2f64.powi(l)))).0).collect();
    let diffs: Vec<f64> = sols.windows(2).map(|p| max_diff(&p[0], &p[1])).collect();
    let time: Vec<f64> = diffs.windows(2).map(|p| (p[0] / p[1]).log2()).collect();
    let passed = errs[2] <= 1e-3 && space.iter().all(|&p| p >= 1.8) && time.iter().all(|&p| p >= 1.9);
    outcome(
        passed,
        format!(
            "L∞ errors {:.2e}/{:.2e}/{:.2e}, spatial orders {:.2}/{:.2}, temporal orders {:.2}/{:.2}",
            errs[0], errs[1], errs[2], space[0], space[1], time[0], time[1]
        ),
    )
}

fn c3_caps() -> Outcome {
    let g = build_grid(&GridSpec::axisymmetric(257, 1.0)).unwrap();
    let mut parts = Vec::new();
    let mut passed = true;
    for sigma in [0.5, 1.5] {
        let (v0, mask) = cap_field(&BarrierSpec::cap(1.0, sigma, 2), &g).unwrap();
        assert!(!mask.is_proper());
        let cfg = FlowConfig::new(2, sigma, 1.0).with_snapshots(0.05);
        let tr = evolve(&v0, &cfg, &g).unwrap();
        let drift = tr.snapshots.iter().map(|s| max_diff(&s.v, &v0)).fold(0.0, f64::max);
        passed &= drift <= 1e-4;
        parts.push(format!("σ={sigma}: sup|v−v₀| = {drift:.2e}"));
    }
    outcome(passed, parts.join(", "))
}

fn c4_comparison() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_607);
    let mut worst = f64::INFINITY;
    let mut passed = true;
    for pair in 0..20 {
        let spec = if pair % 2 == 0 { GridSpec::arc(65, 1.2) } else { GridSpec::axisymmetric(33, 1.2) };
        let g = build_grid(&spec).unwrap();
        let sigma = rng.gen_range(0.0..0.8);
        let (a0, a1, a2): (f64, f64, f64) = (rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.2..0.2));
        // Every other pair is nearly touching away from the bump.
        let b0 = if pair % 4 < 2 { rng.gen_range(0.0..0.05) } else { 0.0 };
        let (b1, b2): (f64, f64) = (rng.gen_range(0.0..0.2), rng.gen_range(0.5..3.0));
        let lower: Vec<f64> = (0..g.len())
            .map(|k| {
                let s = g.theta(k);
                a0 + a1 * s * s + a2 * (2.0 * s).sin()
            })
            .collect();
        let upper: Vec<f64> = (0..g.len())
            .map(|k| {
                let s = g.theta(k);
                lower[k] + b0 + b1 * (-b2 * (s - 0.3).powi(2)).exp()
            })
            .collect();
        let cfg = FlowConfig::new(g.dim(), sigma, 0.5).with_snapshots(0.05);
        let trajs: Vec<Trajectory> = evolve_lockstep(&[lower, upper], &cfg, &g).unwrap();
        let rep = comparison_check(&trajs[0], &trajs[1]).unwrap();
        worst = worst.min(rep.min_margin);
        passed &= rep.passed;
    }
    outcome(passed, format!("20 pairs, min margin {worst:.3e}"))
}

fn perturbed_cap(spec: &GridSpec, sigma: f64, t_end: f64, every: f64) -> Trajectory {
    let g = build_grid(spec).unwrap();
    let (mut v0, _) = cap_field(&BarrierSpec::cap(1.0, sigma, g.dim()), &g).unwrap();
    // The perturbation vanishes to fourth order at the rim, so the frozen
    // boundary values are compatible with the initial data.
    let rim = g.spec().theta_max;
    for (k, v) in v0.iter_mut().enumerate() {
        let th = g.theta(k);
        *v += 0.05 * (2.0 * th).cos() * (std::f64::consts::FRAC_PI_2 * th / rim).cos().powi(4);
    }
    evolve(&v0, &FlowConfig::new(g.dim(), sigma, t_end).with_snapshots(every), &g).unwrap()
}

fn horosphere_run(spec: &GridSpec, sigma: f64, t_end: f64, every: f64) -> Trajectory {
    let g = build_grid(spec).unwrap();
    let v0 = horosphere_field(0.8, 0.0, sigma, &g).unwrap();
    let cfg = FlowConfig::new(g.dim(), sigma, t_end)
        .with_boundary(BoundaryPolicy::Prescribed(horosphere_boundary(0.8, g.dim(), sigma)))
        .with_snapshots(every);
    evolve(&v0, &cfg, &g).unwrap()
}

fn hemisphere_run(spec: &GridSpec, t_end: f64, every: f64) -> Trajectory {
    let g = build_grid(spec).unwrap();
    let v0 = hemisphere_field(1.0, &g).unwrap();
    evolve(&v0, &FlowConfig::new(g.dim(), 0.0, t_end).with_snapshots(every), &g).unwrap()
}

fn cone_run(n_nodes: usize, sigma: f64, t_end: f64, log_times: bool) -> Trajectory {
    let g = build_grid(&GridSpec::arc(n_nodes, 1.2)).unwrap();
    let cone: Vec<f64> = (0..g.len()).map(|k| g.theta(k).abs()).collect();
    let v0 = mollify(&cone, &g, 0.08).unwrap();
    let h = g.spacing();
    let mut cfg = FlowConfig::new(1, sigma, t_end);
    if log_times {
        let st = curvature(&v0, &g).unwrap();
        let mut t = stable_dt(&st, &g, &cfg);
        while t < t_end {
            cfg.extra_times.push(t);
            t *= 1.25;
        }
    } else {
        cfg = cfg.with_snapshots(2.0 * h * h);
    }
    evolve(&v0, &cfg, &g).unwrap()
}

/// Snapshot cadence proportional to `h²`, so `(h, dt) → (h/2, dt/4)`.
fn cadence(spec: &GridSpec) -> f64 {
    let h = build_grid(spec).unwrap().spacing();
    2.0 * h * h
}

fn c5_identities() -> Outcome {
    let t_end = 0.03;
    let mut passed = true;
    let mut worst_ratio = f64::INFINITY;
    let mut worst_fine: f64 = 0.0;
    let mut failures = Vec::new();
    for base in [GridSpec::arc(129, 1.2), GridSpec::axisymmetric(129, 1.2)] {
        let fine_spec = base.refined(1);
        for fixture in ["horosphere", "perturbed cap"] {
            let run = |s: &GridSpec| match fixture {
                "horosphere" => horosphere_run(s, 0.3, t_end, cadence(s)),
                _ => perturbed_cap(s, 0.5, t_end, cadence(s)),
            };
            let (coarse, fine) = (run(&base), run(&fine_spec));
            for name in IDENTITIES {
                let r = identity_refinement(name, &coarse, &fine, &CheckOptions::default(), 2.5).unwrap();
                worst_ratio = worst_ratio.min(r.ratio);
                worst_fine = worst_fine.max(r.fine.scaled_residual);
                let ok = !r.systematic && r.fine.scaled_residual <= 1e-2;
                if !ok {
                    failures.push(format!("{fixture}/n={}/{name}: ratio {:.2}", base.dim, r.ratio));
                }
                passed &= ok;
            }
        }
    }
    outcome(
        passed,
        format!(
            "5 identities × 2 fixtures × n∈{{1,2}}: min ratio {worst_ratio:.2}, max fine residual {worst_fine:.2e}{}",
            if failures.is_empty() { String::new() } else { format!("; failing {}", failures.join(", ")) }
        ),
    )
}

fn c6_inequalities() -> Outcome {
    let t_end = 0.1;
    let mut passed = true;
    let mut lines = Vec::new();
    let mut worst_need: f64 = 0.0;
    let fixtures: Vec<(&str, Trajectory, f64)> = {
        let a = GridSpec::arc(129, 1.2);
        let x = GridSpec::axisymmetric(65, 1.2);
        vec![
            ("hemisphere n=1", hemisphere_run(&a, t_end, cadence(&a)), 0.0),
            ("hemisphere n=2", hemisphere_run(&x, t_end, cadence(&x)), 0.0),
            ("horosphere n=1", horosphere_run(&a, 0.3, t_end, cadence(&a)), 0.3),
            ("horosphere n=2", horosphere_run(&x, 0.3, t_end, cadence(&x)), 0.3),
            ("perturbed cap n=1", perturbed_cap(&a, 0.5, t_end, cadence(&a)), 0.5),
            ("perturbed cap n=2", perturbed_cap(&x, 0.5, t_end, cadence(&x)), 0.5),
            ("perturbed cap σ=0 n=2", perturbed_cap(&x, 0.0, t_end, cadence(&x)), 0.0),
            ("mollified cone n=1", cone_run(129, 0.5, t_end, false), 0.5),
        ]
    };
    for (label, tr, sigma) in &fixtures {
        let p = CutoffParams::new(tr.n, *sigma, 2.0, 0.8, t_end);
        for name in ["eta_spacetime", "xi"] {
            let r = check_inequality(name, tr, &p, &CheckOptions::default()).unwrap();
            // τ is 10× the identity residual, so the needed multiple is margin/(τ/10).
            let need = r.worst_margin.max(0.0) / (r.tolerance / 10.0).max(f64::MIN_POSITIVE);
            worst_need = worst_need.max(need);
            passed &= r.passed;
            if !r.passed {
                lines.push(format!("{label}/{name}: margin {:.2e} > τ {:.2e}", r.worst_margin, r.tolerance));
            }
        }
    }
    outcome(
        passed,
        format!(
            "{} fixtures, largest margin needs {worst_need:.2}× the identity residual (limit 10){}",
            fixtures.len(),
            if lines.is_empty() { String::new() } else { format!("; {}", lines.join(", ")) }
        ),
    )
}

fn c7_gradient_bound() -> Outcome {
    // (cosh R, θ) = (2.5, 0.8) with T = 1 for n = 1 and T = 0.5 for n = 2,
    // so that θ cosh R > σ e^{(n+σ)T}/(n+σ) for σ = 0.5.
    let a = GridSpec::arc(129, 1.2);
    let x = GridSpec::axisymmetric(65, 1.2);
    let fixtures: Vec<(&str, Trajectory, f64, f64)> = vec![
        ("hemisphere n=1", hemisphere_run(&a, 1.0, 0.05), 0.0, 1.0),
        ("hemisphere n=2", hemisphere_run(&x, 0.5, 0.05), 0.0, 0.5),
        ("horosphere n=1", horosphere_run(&a, 0.5, 1.0, 0.05), 0.5, 1.0),
        ("horosphere n=2", horosphere_run(&x, 0.5, 0.5, 0.05), 0.5, 0.5),
        ("cap n=1", perturbed_cap(&a, 0.5, 1.0, 0.05), 0.5, 1.0),
        ("cap n=2", perturbed_cap(&x, 0.5, 0.5, 0.05), 0.5, 0.5),
        ("mollified cone", cone_run(129, 0.5, 1.0, true), 0.5, 1.0),
    ];
    let mut passed = true;
    let mut worst: f64 = 0.0;
    for (label, tr, sigma, t_end) in &fixtures {
        let p = CutoffParams::new(tr.n, *sigma, 2.5, 0.8, *t_end);
        if let Err(e) = p.gradient_bound_admissible() {
            return outcome(false, format!("{label}: inadmissible parameters: {e}"));
        }
        let r = verify_gradient_bound(tr, &p).unwrap();
        passed &= r.passed && !r.series.is_empty();
        worst = worst.max(r.max_ratio);
    }
    outcome(passed, format!("{} fixtures, max sup w / bound = {worst:.3e}", fixtures.len()))
}

fn c8_smoothing() -> Outcome {
    let mut maxima = Vec::new();
    let mut bounded = true;
    for n_nodes in [129, 257] {
        let tr = cone_run(n_nodes, 0.5, 1.0, true);
        let p = CutoffParams::new(1, 0.5, 2.5, 0.8, 1.0);
        let r = verify_curvature_bounds(&tr, &p, 0).unwrap();
        let series: Vec<f64> = r.series.iter().map(|q| q.lhs * q.t / (1.0 + q.t)).collect();
        bounded &= !series.is_empty() && series.iter().all(|x| x.is_finite());
        maxima.push(series.iter().cloned().fold(0.0, f64::max));
    }
    let spread = maxima[0].max(maxima[1]) / maxima[0].min(maxima[1]);
    outcome(
        bounded && spread <= 2.0,
        format!("max sup|A|²·t/(1+t) = {:.4} / {:.4}, spread {spread:.3}", maxima[0], maxima[1]),
    )
}

fn c9_exhaustion() -> Outcome {
    let g = build_grid(&GridSpec::arc(257, 1.4)).unwrap();
    let sigma = 0.5;
    let sched = schedule(&[0.16, 0.09, 0.04], 1, sigma).unwrap();
    let cfg = FlowConfig::new(1, sigma, 1.0);
    let cap = cap_field(&BarrierSpec::cap(1.0, sigma, 1), &g).unwrap().0;
    let cap_rep = exhaustion_run(&cap, &sched, &cfg, &g, 0.5).unwrap();
    let horo = horosphere_field(0.8, 0.0, sigma, &g).unwrap();
    let horo_rep = exhaustion_run(&horo, &sched, &cfg, &g, 0.5).unwrap();
    let inner: Vec<String> = horo_rep.comparisons.iter().map(|c| format!("{:.3e}", c.inner_sup)).collect();
    outcome(
        cap_rep.max_common_difference() <= 1e-6 && horo_rep.inner_strictly_decreasing(),
        format!(
            "cap common sup {:.2e}, horosphere inner sups {}",
            cap_rep.max_common_difference(),
            inner.join(" > ")
        ),
    )
}

fn c10_rhs_forms() -> Outcome {
    let mut one_ok = true;
    let mut inv_ok = true;
    let mut report = Vec::new();
    for (layout, spec) in [
        ("arc", GridSpec::arc(65, 1.2)),
        ("axisymmetric", GridSpec::axisymmetric(33, 1.2)),
        ("full", GridSpec::full(33, 16, 1.2)),
    ] {
        let mut diffs = Vec::new();
        for level in 0..2 {
            let g = build_grid(&spec.refined(level)).unwrap();
            let n = g.dim();
            let fields = [
                ("horosphere", horosphere_field(0.8, 0.0, 0.3, &g).unwrap(), 0.3),
                ("cap", cap_field(&BarrierSpec::cap(1.0, 0.5, n), &g).unwrap().0, 0.5),
                (
                    "smooth",
                    (0..g.len()).map(|k| 0.2 * g.z(k)[0] + 0.1 * (g.theta(k) * 2.0).cos() + 0.05 * g.z(k)[1]).collect(),
                    0.4,
                ),
            ];
            let mut level_diff: f64 = 0.0;
            for (name, v, sigma) in &fields {
                let one = compare_rhs(v, &g, *sigma, Normalization::One).unwrap();
                let inv = compare_rhs(v, &g, *sigma, Normalization::InverseN).unwrap();
                let scale = one.max_parametric.max(1.0);
                level_diff = level_diff.max(one.max_difference / scale);
                inv_ok &= inv.max_unexplained <= 1e-10 * scale
                    && inv.second_order_ratio.is_none_or(|r| (r - 1.0 / n as f64).abs() < 1e-12);
                if level == 0 {
                    report.push(format!(
                        "{layout} {name}: |Δ|₁ = {:.2e}, |Δ|_(1/n) = {:.2e} (ratio {:.3})",
                        one.max_difference,
                        inv.max_difference,
                        inv.second_order_ratio.unwrap_or(f64::NAN)
                    ));
                }
            }
            diffs.push(level_diff);
        }
        // Agreement to O(h²): the relative difference must be tiny or shrink by ~4.
        let agrees = diffs[1] <= 1e-12 || diffs[0] / diffs[1] >= 3.5;
        if !agrees {
            report.push(format!(
                "{layout}: normalization-1 difference does not shrink ({:.3e} → {:.3e})",
                diffs[0], diffs[1]
            ));
        }
        one_ok &= agrees;
    }
    outcome(one_ok && inv_ok, report.join("; "))
}

fn main() {
    type Criterion = (u32, &'static str, u64, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        (1, "geodesic hemisphere is stationary", 5, c1_hemisphere),
        (2, "horosphere exact solution and convergence orders", 30, c2_horosphere),
        (3, "σ-caps are stationary", 60, c3_caps),
        (4, "discrete comparison principle", 60, c4_comparison),
        (5, "evolution identities converge", 300, c5_identities),
        (6, "cut-off inequalities hold", 120, c6_inequalities),
        (7, "interior gradient bound", 120, c7_gradient_bound),
        (8, "curvature smoothing from cone data", 120, c8_smoothing),
        (9, "exhaustion agreement", 180, c9_exhaustion),
        (10, "parametric vs expanded right-hand side", 60, c10_rhs_forms),
    ];
    let mut unexpected = Vec::new();
    for (id, title, limit, run) in criteria {
        let start = Instant::now();
        let out = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(limit);
        let passed = out.passed && in_time;
        let known = KNOWN_DEVIATIONS.iter().find(|(k, _)| *k == id);
        println!(
            "criterion {id:>2}: {} {title}: {} [{:.1} s of {limit} s{}]",
            if passed { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64(),
            if in_time { "" } else { ", over budget" }
        );
        if let Some((_, why)) = known {
            if !passed {
                println!("              known deviation: {why}");
            }
        }
        if passed == known.is_some() {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected outcome for criteria {unexpected:?}");
        std::process::exit(1);
    }
}
