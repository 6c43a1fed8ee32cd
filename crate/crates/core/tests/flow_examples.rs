use std::sync::Arc;

use mmcf::barriers::{cap_field, horosphere_field, BarrierSpec};
use mmcf::estimates::{check_identity, verify_gradient_bound, CheckOptions, CutoffParams};
use mmcf::flow::{
    evolve, exhaustion_run, mollify, rhs, schedule, BoundaryData, BoundaryPolicy, FlowConfig, RhsMode,
};
use mmcf::grid::{build_grid, Grid, GridSpec};
use mmcf::MmcfError;

fn interior_max(g: &Grid, f: impl Fn(usize) -> f64) -> f64 {
    (0..g.len()).filter(|&k| !g.is_boundary(k)).map(f).fold(0.0, f64::max)
}

#[test]
fn horosphere_rhs_is_the_translation_speed() {
    for spec in [GridSpec::arc(33, 1.2), GridSpec::axisymmetric(17, 1.2)] {
        let errs: Vec<f64> = (0..3)
            .map(|l| {
                let g = build_grid(&spec.refined(l)).unwrap();
                let n = g.dim() as f64;
                let v = horosphere_field(0.7, 0.0, 0.4, &g).unwrap();
                let f = rhs(&v, &g, &FlowConfig::new(g.dim(), 0.4, 1.0)).unwrap();
                interior_max(&g, |k| (f[k] - (n - 0.4)).abs())
            })
            .collect();
        assert!((errs[1] / errs[2]).log2() > 1.8, "{errs:?}");
    }
}

#[test]
fn cap_rhs_vanishes() {
    let errs: Vec<f64> = (0..3)
        .map(|l| {
            let g = build_grid(&GridSpec::axisymmetric(17, 1.0).refined(l)).unwrap();
            let (v, _) = cap_field(&BarrierSpec::cap(1.0, 1.2, 2), &g).unwrap();
            let f = rhs(&v, &g, &FlowConfig::new(2, 1.2, 1.0)).unwrap();
            interior_max(&g, |k| f[k].abs())
        })
        .collect();
    assert!((errs[1] / errs[2]).log2() > 1.8, "{errs:?}");
}

#[test]
fn evolution_is_autonomous() {
    let g = build_grid(&GridSpec::arc(33, 1.1)).unwrap();
    let v0: Vec<f64> = (0..g.len()).map(|k| 0.1 * (2.0 * g.theta(k)).cos()).collect();
    let mut cfg = FlowConfig::new(1, 0.3, 0.2);
    cfg.fixed_dt = Some(1e-4);
    let whole = evolve(&v0, &cfg, &g).unwrap();
    cfg.t_end = 0.1;
    let first = evolve(&v0, &cfg, &g).unwrap();
    let second = evolve(&first.last().v, &cfg, &g).unwrap();
    let d = whole.last().v.iter().zip(&second.last().v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(d < 1e-8, "{d}");
}

#[test]
fn expanded_form_with_unit_normalization_matches_at_n1() {
    let g = build_grid(&GridSpec::arc(33, 1.2)).unwrap();
    let v: Vec<f64> = (0..g.len()).map(|k| 0.2 * g.theta(k).sin() + 0.1 * g.theta(k).powi(2)).collect();
    let cfg = FlowConfig::new(1, 0.5, 1.0);
    let mut expanded = cfg.clone();
    expanded.rhs_mode = RhsMode::Expanded;
    let a = rhs(&v, &g, &cfg).unwrap();
    let b = rhs(&v, &g, &expanded).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-14));
}

#[test]
fn mollification_converges_to_smooth_and_lipschitz_data() {
    let g = build_grid(&GridSpec::arc(401, 1.2)).unwrap();
    let smooth: Vec<f64> = (0..g.len()).map(|k| (1.5 * g.theta(k)).cos()).collect();
    let cone: Vec<f64> = (0..g.len()).map(|k| g.theta(k).abs()).collect();
    let dev = |v: &[f64], s: f64| -> f64 {
        let m = mollify(v, &g, s).unwrap();
        // Ignore the rim, where the window is truncated.
        (0..g.len())
            .filter(|&k| g.theta(k).abs() < 0.8)
            .map(|k| (m[k] - v[k]).abs())
            .fold(0.0, f64::max)
    };
    let scales = [0.16, 0.08, 0.04];
    let smooth_dev: Vec<f64> = scales.iter().map(|&s| dev(&smooth, s)).collect();
    let cone_dev: Vec<f64> = scales.iter().map(|&s| dev(&cone, s)).collect();
    assert!(smooth_dev.windows(2).all(|p| p[1] < p[0]), "{smooth_dev:?}");
    assert!((smooth_dev[1] / smooth_dev[2]).log2() > 1.8, "{smooth_dev:?}");
    assert!(cone_dev.windows(2).all(|p| p[1] < p[0]), "{cone_dev:?}");
    assert!(matches!(mollify(&cone, &g, g.spacing()), Err(MmcfError::InvalidParameter(_))));
}

#[test]
fn single_level_schedule_has_no_comparisons() {
    let g = build_grid(&GridSpec::arc(65, 1.4)).unwrap();
    let sched = schedule(&[0.09], 1, 0.0).unwrap();
    let v0 = vec![0.0; g.len()];
    let rep = exhaustion_run(&v0, &sched, &FlowConfig::new(1, 0.0, 1.0), &g, 0.5).unwrap();
    assert!(rep.comparisons.is_empty());
    assert_eq!(rep.domain_sizes.len(), 1);
}

#[test]
fn truncated_horosphere_levels_approach_each_other() {
    let g = build_grid(&GridSpec::arc(129, 1.4)).unwrap();
    let sched = schedule(&[0.16, 0.09, 0.04], 1, 0.5).unwrap();
    let v0 = horosphere_field(0.8, 0.0, 0.5, &g).unwrap();
    let rep = exhaustion_run(&v0, &sched, &FlowConfig::new(1, 0.5, 1.0), &g, 0.5).unwrap();
    assert_eq!(rep.comparisons.len(), 2);
    assert!(rep.domain_sizes.windows(2).all(|p| p[1] > p[0]));
    assert!(rep.inner_strictly_decreasing(), "{:?}", rep.comparisons);
}

#[test]
fn estimates_on_an_exact_translator() {
    let g = build_grid(&GridSpec::axisymmetric(65, 1.2)).unwrap();
    let sigma = 0.5;
    let v0 = horosphere_field(0.8, 0.0, sigma, &g).unwrap();
    let bd: BoundaryData = Arc::new(move |g: &Grid, k, t| 0.8f64.ln() - g.y(k).ln() + (2.0 - sigma) * t);
    let h = g.spacing();
    let cfg = FlowConfig::new(2, sigma, 0.05)
        .with_boundary(BoundaryPolicy::Prescribed(bd))
        .with_snapshots(2.0 * h * h);
    let tr = evolve(&v0, &cfg, &g).unwrap();
    let r = check_identity("nu_h_support", &tr, &CheckOptions::default()).unwrap();
    // |A|² = n and ⟨ν_H, x⟩_H = 1/(yw) = 1 on horospheres, so the right side vanishes.
    assert!(r.max_rhs < 1e-2 && r.max_residual < 1e-2, "{r:?}");
    let p = CutoffParams::new(2, sigma, 2.5, 0.8, 0.05);
    let b = verify_gradient_bound(&tr, &p).unwrap();
    assert!(b.passed && !b.series.is_empty());
    // w ≡ 1/y on horospheres, so the ratio is explicit at t = 0.
    let first = &b.series[0];
    assert!(first.lhs <= first.rhs);
}

#[test]
fn gradient_bound_rejects_regions_touching_the_boundary() {
    let g = build_grid(&GridSpec::arc(33, 0.8)).unwrap();
    let v0 = vec![0.0; g.len()];
    let tr = evolve(&v0, &FlowConfig::new(1, 0.0, 0.1).with_snapshots(0.05), &g).unwrap();
    // cosh r = 1/cos θ ≤ 1.44 on this grid, so cosh R = 3 covers the rim.
    let p = CutoffParams::new(1, 0.0, 3.0, 0.5, 0.1);
    assert!(verify_gradient_bound(&tr, &p).is_err());
}
