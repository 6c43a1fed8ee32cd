//! Time stepping of the radial height `v` under the flow `∂F/∂t = (H − σ) ν_H`.
//!
//! Since `⟨x, ν_H⟩_H = 1/(yw)`, the normal law reduces at fixed `z` to
//! `∂v/∂t = y w (H − σ) = y² α^{ij} v_ij − n y e·∇v − σ y w`
//! with `α = γ⁻¹ − ∇v ⊗ ∇v / w²`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{MmcfError, Result};
use crate::geometry::{curvature, SurfaceState};
use crate::grid::{truncate_domain, Grid};
use crate::tensor::{Mat2, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhsMode {
    /// `y w (H − σ)`.
    Parametric,
    /// `c y² α^{ij} v_ij − y e·∇v − σ y w` with `c` from [`Normalization`].
    Expanded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    One,
    InverseN,
}

impl Normalization {
    pub fn factor(self, n: usize) -> f64 {
        match self {
            Normalization::One => 1.0,
            Normalization::InverseN => 1.0 / n as f64,
        }
    }
}

/// Boundary values as a function of `(grid, node, t)`.
pub type BoundaryData = Arc<dyn Fn(&Grid, usize, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum BoundaryPolicy {
    /// Boundary values stay at their initial values.
    Frozen,
    /// Boundary values follow the given data.
    Prescribed(BoundaryData),
}

impl fmt::Debug for BoundaryPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryPolicy::Frozen => f.write_str("Frozen"),
            BoundaryPolicy::Prescribed(_) => f.write_str("Prescribed(..)"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FlowConfig {
    pub n: usize,
    pub sigma: f64,
    pub rhs_mode: RhsMode,
    pub normalization: Normalization,
    pub cfl: f64,
    pub t_end: f64,
    pub snapshot_every: f64,
    /// Additional times that must be hit exactly and recorded.
    pub extra_times: Vec<f64>,
    /// Truncation `{cosh r ≤ 1/ε}` of the initial surface, if any.
    pub epsilon: Option<f64>,
    pub boundary: BoundaryPolicy,
    /// Largest admissible slope `w` before the graph condition is deemed lost.
    pub w_cap: f64,
    /// Abort when `max|v|` exceeds this multiple of its initial value (floored at 1).
    pub growth_limit: f64,
    pub max_steps: usize,
    /// Use this step instead of the adaptive one (for temporal-order studies).
    pub fixed_dt: Option<f64>,
}

impl FlowConfig {
    pub fn new(n: usize, sigma: f64, t_end: f64) -> Self {
        Self {
            n,
            sigma,
            rhs_mode: RhsMode::Parametric,
            normalization: Normalization::One,
            cfl: 0.4,
            t_end,
            snapshot_every: t_end,
            extra_times: Vec::new(),
            epsilon: None,
            boundary: BoundaryPolicy::Frozen,
            w_cap: 1e6,
            growth_limit: 1e3,
            max_steps: 50_000_000,
            fixed_dt: None,
        }
    }

    pub fn with_snapshots(mut self, every: f64) -> Self {
        self.snapshot_every = every;
        self
    }

    pub fn with_boundary(mut self, boundary: BoundaryPolicy) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn with_cfl(mut self, cfl: f64) -> Self {
        self.cfl = cfl;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = Some(epsilon);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MmcfError::InvalidParameter(m));
        if self.n != 1 && self.n != 2 {
            return bad(format!("n must be 1 or 2, got {}", self.n));
        }
        if !(self.sigma.abs() < self.n as f64) {
            return bad(format!("|σ| < n is required, got σ = {} with n = {}", self.sigma, self.n));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad(format!("T must be positive, got {}", self.t_end));
        }
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            return bad(format!("cfl must lie in (0, 1), got {}", self.cfl));
        }
        if !(self.snapshot_every > 0.0) {
            return bad(format!("snapshot cadence must be positive, got {}", self.snapshot_every));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e < 1.0) {
                return bad(format!("ε must lie in (0, 1), got {e}"));
            }
        }
        if let Some(dt) = self.fixed_dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return bad(format!("fixed time step must be positive, got {dt}"));
            }
        }
        if !(self.w_cap > 1.0) {
            return bad(format!("w cap must exceed 1, got {}", self.w_cap));
        }
        Ok(())
    }

    fn check_grid(&self, grid: &Grid) -> Result<()> {
        if grid.dim() != self.n {
            return Err(MmcfError::InvalidParameter(format!(
                "configuration has n = {} but the grid has n = {}",
                self.n,
                grid.dim()
            )));
        }
        Ok(())
    }
}

/// Pointwise pieces of the scalar law at one node.
#[derive(Clone, Copy, Debug)]
struct Local {
    y: f64,
    w: f64,
    e_grad: f64,
    alpha_hess: f64,
    lambda_max: f64,
}

#[inline]
fn local(grid: &Grid, v: &[f64], k: usize) -> Local {
    let (om, hv) = grid.jet(v, k);
    local_from_jet(grid, k, &om, &hv)
}

#[inline]
fn local_from_jet(grid: &Grid, k: usize, om: &Vec2, hv: &Mat2) -> Local {
    let w2 = 1.0 + om[0] * om[0] + om[1] * om[1];
    let dy = grid.grad_y(k);
    // α = δ − ωω/w² has eigenvalues 1 (n − 1 times) and 1/w².
    let (alpha_hess, lambda_max) = if grid.dim() == 1 {
        (hv[0][0] / w2, 1.0 / w2)
    } else {
        let trace = hv[0][0] + hv[1][1];
        let quad = om[0] * om[0] * hv[0][0] + 2.0 * om[0] * om[1] * hv[0][1] + om[1] * om[1] * hv[1][1];
        (trace - quad / w2, 1.0)
    };
    Local { y: grid.y(k), w: w2.sqrt(), e_grad: om[0] * dy[0] + om[1] * dy[1], alpha_hess, lambda_max }
}

fn parametric_value(l: &Local, n: f64, sigma: f64) -> f64 {
    l.y * l.y * l.alpha_hess - n * l.y * l.e_grad - sigma * l.y * l.w
}

fn expanded_value(l: &Local, c: f64, sigma: f64) -> f64 {
    c * l.y * l.y * l.alpha_hess - l.y * l.e_grad - sigma * l.y * l.w
}

fn value(l: &Local, cfg: &FlowConfig) -> f64 {
    match cfg.rhs_mode {
        RhsMode::Parametric => parametric_value(l, cfg.n as f64, cfg.sigma),
        RhsMode::Expanded => expanded_value(l, cfg.normalization.factor(cfg.n), cfg.sigma),
    }
}

/// `∂v/∂t` at every node; zero on boundary nodes.
pub fn rhs(v: &[f64], grid: &Grid, cfg: &FlowConfig) -> Result<Vec<f64>> {
    cfg.check_grid(grid)?;
    check_len(v, grid)?;
    Ok(rhs_and_dt(v, grid, cfg, false)?.0)
}

/// Right-hand side and the explicit stability limit of the time step.
fn rhs_and_dt(v: &[f64], grid: &Grid, cfg: &FlowConfig, want_dt: bool) -> Result<(Vec<f64>, f64)> {
    let mut out = vec![0.0; grid.len()];
    let mut dt = f64::INFINITY;
    let h2 = grid.spacing().powi(2);
    let dphi = grid.azimuthal_spacing();
    for k in 0..grid.len() {
        if !v[k].is_finite() {
            return Err(MmcfError::NonFinite { node: k });
        }
        let l = local(grid, v, k);
        if l.w > cfg.w_cap {
            return Err(MmcfError::GraphCondition {
                node: k,
                detail: format!("slope w = {:.3e} exceeds the cap {:.3e}", l.w, cfg.w_cap),
            });
        }
        if want_dt {
            dt = dt.min(node_dt(grid, k, &l, h2, dphi));
        }
        if !grid.is_boundary(k) {
            let f = value(&l, cfg);
            if !f.is_finite() {
                return Err(MmcfError::NonFinite { node: k });
            }
            out[k] = f;
        }
    }
    Ok((out, cfg.cfl * dt))
}

fn node_dt(grid: &Grid, k: usize, l: &Local, h2: f64, dphi: Option<f64>) -> f64 {
    let mut inv = 1.0 / h2;
    if let Some(dp) = dphi {
        inv += 1.0 / (grid.theta(k).sin() * dp).powi(2);
    }
    1.0 / (2.0 * l.y * l.y * l.lambda_max * inv)
}

/// Largest explicit step for the current state: `c_cfl` times the inverse of
/// twice the principal coefficient `y² λ_max(α)` over the squared spacings.
pub fn stable_dt(state: &SurfaceState, grid: &Grid, cfg: &FlowConfig) -> f64 {
    let h2 = grid.spacing().powi(2);
    let dphi = grid.azimuthal_spacing();
    let mut dt = f64::INFINITY;
    for k in 0..grid.len() {
        let w2 = state.w[k] * state.w[k];
        let l = Local {
            y: grid.y(k),
            w: state.w[k],
            e_grad: 0.0,
            alpha_hess: 0.0,
            lambda_max: if grid.dim() == 1 { 1.0 / w2 } else { 1.0 },
        };
        dt = dt.min(node_dt(grid, k, &l, h2, dphi));
    }
    (cfg.cfl * dt).min(cfg.snapshot_every)
}

/// Largest principal coefficient `y² λ_max(α)` over the grid.
pub fn principal_coefficient(state: &SurfaceState, grid: &Grid) -> f64 {
    (0..grid.len())
        .map(|k| {
            let lam = if grid.dim() == 1 { 1.0 / (state.w[k] * state.w[k]) } else { 1.0 };
            grid.y(k).powi(2) * lam
        })
        .fold(0.0, f64::max)
}

/// Pointwise comparison of the parametric law with the expanded law.
#[derive(Clone, Debug, Serialize)]
pub struct RhsComparison {
    pub n: usize,
    pub normalization: Normalization,
    pub nodes: usize,
    pub max_parametric: f64,
    pub max_expanded_form: f64,
    /// `max |expanded − parametric|` over interior nodes.
    pub max_difference: f64,
    /// `max |expanded − parametric − predicted|` where `predicted` is the exact
    /// algebraic difference of the two laws.
    pub max_unexplained: f64,
    /// Ratio of second-order terms, expanded over parametric (where the
    /// parametric term is not negligible).
    pub second_order_ratio: Option<f64>,
}

/// Compare the two scalar laws on the same field.
///
/// The laws differ by `(c − 1) y² α^{ij} v_ij + (n − 1) y e·∇v`, which is the
/// `predicted` difference removed before reporting `max_unexplained`.
pub fn compare_rhs(v: &[f64], grid: &Grid, sigma: f64, normalization: Normalization) -> Result<RhsComparison> {
    check_len(v, grid)?;
    let n = grid.dim();
    let c = normalization.factor(n);
    let mut out = RhsComparison {
        n,
        normalization,
        nodes: 0,
        max_parametric: 0.0,
        max_expanded_form: 0.0,
        max_difference: 0.0,
        max_unexplained: 0.0,
        second_order_ratio: None,
    };
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..grid.len() {
        if grid.is_boundary(k) {
            continue;
        }
        let l = local(grid, v, k);
        let p = parametric_value(&l, n as f64, sigma);
        let q = expanded_value(&l, c, sigma);
        let predicted = (c - 1.0) * l.y * l.y * l.alpha_hess + (n as f64 - 1.0) * l.y * l.e_grad;
        out.nodes += 1;
        out.max_parametric = out.max_parametric.max(p.abs());
        out.max_expanded_form = out.max_expanded_form.max(q.abs());
        out.max_difference = out.max_difference.max((q - p).abs());
        out.max_unexplained = out.max_unexplained.max((q - p - predicted).abs());
        let second = l.y * l.y * l.alpha_hess;
        num += (c * second).abs();
        den += second.abs();
    }
    if den > 1e-12 * out.nodes.max(1) as f64 {
        out.second_order_ratio = Some(num / den);
    }
    Ok(out)
}

/// Recorded state at one time.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub t: f64,
    pub v: Vec<f64>,
    pub state: SurfaceState,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub grid: Grid,
    pub n: usize,
    pub sigma: f64,
    pub snapshots: Vec<Snapshot>,
    pub dt_history: Vec<f64>,
    pub events: Vec<String>,
    pub terminated: bool,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectory has an initial snapshot")
    }

    pub fn steps(&self) -> usize {
        self.dt_history.len()
    }

    /// Index of the snapshot at time `t` (within `1e-12`).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.snapshots.iter().position(|s| (s.t - t).abs() <= 1e-12 * t.abs().max(1.0))
    }
}

fn boundary_values(grid: &Grid, cfg: &FlowConfig, v: &mut [f64], t: f64) {
    if let BoundaryPolicy::Prescribed(data) = &cfg.boundary {
        for k in 0..grid.len() {
            if grid.is_boundary(k) {
                v[k] = data(grid, k, t);
            }
        }
    }
}

/// One Heun (SSP-RK2) step of size `dt` from time `t`.
pub fn step(v: &[f64], t: f64, dt: f64, grid: &Grid, cfg: &FlowConfig) -> Result<Vec<f64>> {
    cfg.check_grid(grid)?;
    check_len(v, grid)?;
    let (f0, _) = rhs_and_dt(v, grid, cfg, false)?;
    heun(v, &f0, t, dt, grid, cfg)
}

fn heun(v: &[f64], f0: &[f64], t: f64, dt: f64, grid: &Grid, cfg: &FlowConfig) -> Result<Vec<f64>> {
    let mut v1: Vec<f64> = v.iter().zip(f0).map(|(a, f)| a + dt * f).collect();
    boundary_values(grid, cfg, &mut v1, t + dt);
    let (f1, _) = rhs_and_dt(&v1, grid, cfg, false)?;
    let mut v2: Vec<f64> = (0..v.len()).map(|k| 0.5 * v[k] + 0.5 * (v1[k] + dt * f1[k])).collect();
    boundary_values(grid, cfg, &mut v2, t + dt);
    Ok(v2)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Snapshot times in `(0, T]`.
fn targets(cfg: &FlowConfig) -> Vec<f64> {
    let mut ts = Vec::new();
    let mut k = 1u64;
    loop {
        let t = k as f64 * cfg.snapshot_every;
        if t >= cfg.t_end * (1.0 - 1e-12) {
            break;
        }
        ts.push(t);
        k += 1;
    }
    ts.extend(cfg.extra_times.iter().copied().filter(|&t| t > 0.0 && t < cfg.t_end));
    ts.push(cfg.t_end);
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    ts
}

/// Grid and initial field after optional truncation.
pub fn prepare_domain(v0: &[f64], grid: &Grid, cfg: &FlowConfig) -> Result<(Grid, Vec<f64>)> {
    check_len(v0, grid)?;
    match cfg.epsilon {
        None => Ok((grid.clone(), v0.to_vec())),
        Some(eps) => {
            let mask = truncate_domain(v0, grid, eps)?;
            let sub = grid.restrict(&mask)?;
            let v = grid.restrict_field(&sub, v0)?;
            Ok((sub, v))
        }
    }
}

/// Evolve `v₀` to time `T`, recording snapshots at multiples of the cadence.
pub fn evolve(v0: &[f64], cfg: &FlowConfig, grid: &Grid) -> Result<Trajectory> {
    Ok(evolve_lockstep(&[v0.to_vec()], cfg, grid)?.pop().expect("one trajectory"))
}

/// Evolve several fields with a common time-step sequence (the smallest
/// stable step of all fields), so that step-wise properties such as the
/// comparison principle can be checked between them.
pub fn evolve_lockstep(fields: &[Vec<f64>], cfg: &FlowConfig, grid: &Grid) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    cfg.check_grid(grid)?;
    if fields.is_empty() {
        return Ok(Vec::new());
    }
    let mut domain = None;
    let mut vs = Vec::with_capacity(fields.len());
    for f in fields {
        let (g, v) = prepare_domain(f, grid, cfg)?;
        if let Some(d) = &domain {
            if !Grid::same_nodes(d, &g) {
                return Err(MmcfError::GridMismatch("truncated domains differ between fields".into()));
            }
        } else {
            domain = Some(g);
        }
        vs.push(v);
    }
    let g = domain.expect("at least one field");
    for v in vs.iter_mut() {
        boundary_values(&g, cfg, v, 0.0);
    }

    let mut trajs: Vec<Trajectory> = Vec::with_capacity(vs.len());
    for v in &vs {
        let state = curvature(v, &g)?;
        let mut events = vec![format!("domain: {} nodes, {} on the boundary", g.len(), g.boundary_nodes().len())];
        if cfg.epsilon.is_some() {
            events.push(format!("truncated at cosh r ≤ {:.6}", 1.0 / cfg.epsilon.unwrap_or(1.0)));
        }
        trajs.push(Trajectory {
            grid: g.clone(),
            n: cfg.n,
            sigma: cfg.sigma,
            snapshots: vec![Snapshot { t: 0.0, v: v.clone(), state }],
            dt_history: Vec::new(),
            events,
            terminated: false,
        });
    }
    let limits: Vec<f64> = vs.iter().map(|v| cfg.growth_limit * max_abs(v).max(1.0)).collect();

    let mut t = 0.0;
    let mut steps = 0usize;
    for target in targets(cfg) {
        while t < target {
            let mut f0s = Vec::with_capacity(vs.len());
            let mut dt = f64::INFINITY;
            for v in &vs {
                let (f0, lim) = rhs_and_dt(v, &g, cfg, cfg.fixed_dt.is_none())?;
                dt = dt.min(lim);
                f0s.push(f0);
            }
            if let Some(fixed) = cfg.fixed_dt {
                dt = fixed;
            }
            let landing = target - t <= dt * (1.0 + 1e-9);
            if landing {
                dt = target - t;
            }
            for (i, v) in vs.iter_mut().enumerate() {
                let next = heun(v, &f0s[i], t, dt, &g, cfg)?;
                if let Some(k) = next.iter().position(|x| !x.is_finite()) {
                    return Err(MmcfError::NonFinite { node: k });
                }
                if max_abs(&next) > limits[i] {
                    return Err(MmcfError::Instability(format!(
                        "max|v| = {:.3e} exceeds {:.3e} at t = {t:.6}",
                        max_abs(&next),
                        limits[i]
                    )));
                }
                *v = next;
                trajs[i].dt_history.push(dt);
            }
            t = if landing { target } else { t + dt };
            steps += 1;
            if steps > cfg.max_steps {
                return Err(MmcfError::Instability(format!("step budget {} exhausted", cfg.max_steps)));
            }
        }
        for (i, v) in vs.iter().enumerate() {
            let state = curvature(v, &g)?;
            if state.min_support_e() <= 0.0 {
                trajs[i].events.push(format!("graph condition lost at t = {t}"));
                trajs[i].terminated = true;
            }
            trajs[i].snapshots.push(Snapshot { t, v: v.clone(), state });
        }
    }
    Ok(trajs)
}

/// Gaussian smoothing along coordinate lines with kernel width `scale`.
///
/// Windows are symmetric and shrink near the boundary, so affine functions of
/// the line coordinate are reproduced exactly; boundary values are unchanged.
pub fn mollify(v0: &[f64], grid: &Grid, scale: f64) -> Result<Vec<f64>> {
    check_len(v0, grid)?;
    let h = grid.spacing();
    if !(scale >= 2.0 * h * (1.0 - 1e-12)) {
        return Err(MmcfError::InvalidParameter(format!(
            "mollification scale {scale} is below twice the grid spacing {h}"
        )));
    }
    let reach = (3.0 * scale / h).ceil() as usize;
    let weights: Vec<f64> = (0..=reach)
        .map(|m| (-0.5 * (m as f64 * h / scale).powi(2)).exp())
        .collect();
    let n_phi = grid.azimuthal_count();
    let n_rad = grid.radial_count();
    let mut out = vec![0.0; v0.len()];
    let is_arc = grid.dim() == 1;
    for k in 0..grid.len() {
        let i = k / n_phi;
        let j = k % n_phi;
        // Radial line through the node; for n = 2 it continues across the pole
        // onto the antipodal meridian.
        let pos = |off: i64| -> Option<usize> {
            let t = i as i64 + off;
            if t >= n_rad as i64 {
                return None;
            }
            if t >= 0 {
                return Some(t as usize * n_phi + j);
            }
            if is_arc {
                return None;
            }
            let m = (-t - 1) as usize;
            (m < n_rad).then(|| m * n_phi + (j + n_phi / 2) % n_phi)
        };
        let mut half = reach;
        while half > 0 && (pos(half as i64).is_none() || pos(-(half as i64)).is_none()) {
            half -= 1;
        }
        let (mut s, mut wsum) = (0.0, 0.0);
        for m in -(half as i64)..=(half as i64) {
            let w = weights[m.unsigned_abs() as usize];
            s += w * v0[pos(m).expect("inside window")];
            wsum += w;
        }
        out[k] = s / wsum;
    }
    if n_phi > 1 {
        // Azimuthal pass at the physical scale of each ring.
        let radial = out.clone();
        let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
        for k in 0..grid.len() {
            let i = k / n_phi;
            let j = k % n_phi;
            let step = grid.theta(k).sin() * dphi;
            let half = ((3.0 * scale / step).ceil() as usize).min(n_phi / 2 - 1);
            let (mut s, mut wsum) = (0.0, 0.0);
            for m in -(half as i64)..=(half as i64) {
                let w = (-0.5 * (m as f64 * step / scale).powi(2)).exp();
                let jj = (j as i64 + m).rem_euclid(n_phi as i64) as usize;
                s += w * radial[i * n_phi + jj];
                wsum += w;
            }
            out[k] = s / wsum;
        }
    }
    Ok(out)
}

/// Nested truncations `ε_k` with horizons `T_k`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExhaustionSchedule {
    pub n: usize,
    pub sigma: f64,
    pub deltas: Vec<f64>,
    pub horizons: Vec<f64>,
    pub epsilons: Vec<f64>,
}

/// `T_k = −log δ_k / (2(n + σ))` and `1/ε_k = δ_k^{−1/2} − σ/(n + σ)`.
pub fn schedule(deltas: &[f64], n: usize, sigma: f64) -> Result<ExhaustionSchedule> {
    let bad = |m: String| Err(MmcfError::InvalidParameter(m));
    if deltas.is_empty() {
        return bad("schedule needs at least one δ".into());
    }
    if !(sigma.abs() < n as f64) {
        return bad(format!("|σ| < n is required, got σ = {sigma} with n = {n}"));
    }
    if let Some(d) = deltas.iter().find(|&&d| !(d > 0.0 && d < 1.0)) {
        return bad(format!("every δ must lie in (0, 1), got {d}"));
    }
    if deltas.windows(2).any(|p| p[1] >= p[0]) {
        return bad("δ values must be strictly decreasing".into());
    }
    let ns = n as f64 + sigma;
    let shift = sigma / ns;
    let inv_eps0 = deltas[0].powf(-0.5) - shift;
    if inv_eps0 < 2.0 {
        return bad(format!("δ₀ = {} is too large: 1/√δ₀ − σ/(n+σ) = {inv_eps0:.4} < 2", deltas[0]));
    }
    Ok(ExhaustionSchedule {
        n,
        sigma,
        deltas: deltas.to_vec(),
        horizons: deltas.iter().map(|d| -d.ln() / (2.0 * ns)).collect(),
        epsilons: deltas.iter().map(|d| 1.0 / (d.powf(-0.5) - shift)).collect(),
    })
}

/// Differences between consecutive truncated solutions.
#[derive(Clone, Debug, Serialize)]
pub struct NestedComparison {
    pub level: usize,
    /// `sup |v_k − v_{k−1}|` over `{cosh r ≤ θ/ε_{k−1}} × [0, T_{k−1}]`.
    pub common_sup: f64,
    pub common_nodes: usize,
    /// Same supremum over the innermost compact `{cosh r ≤ θ/ε_0} × [0, T_0]`.
    pub inner_sup: f64,
    pub inner_nodes: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExhaustionReport {
    pub schedule: ExhaustionSchedule,
    pub theta: f64,
    pub domain_sizes: Vec<usize>,
    pub steps: Vec<usize>,
    pub comparisons: Vec<NestedComparison>,
}

impl ExhaustionReport {
    pub fn max_common_difference(&self) -> f64 {
        self.comparisons.iter().map(|c| c.common_sup).fold(0.0, f64::max)
    }

    pub fn inner_strictly_decreasing(&self) -> bool {
        self.comparisons.windows(2).all(|p| p[1].inner_sup < p[0].inner_sup)
    }
}

/// Solve the truncated problems of the schedule with frozen boundary data
/// and compare consecutive solutions on common compact regions.
pub fn exhaustion_run(
    v0: &[f64],
    sched: &ExhaustionSchedule,
    cfg: &FlowConfig,
    grid: &Grid,
    theta: f64,
) -> Result<ExhaustionReport> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(MmcfError::InvalidParameter(format!("θ must lie in (0, 1), got {theta}")));
    }
    let all_t = sched.horizons.clone();
    let mut trajs = Vec::with_capacity(sched.deltas.len());
    for (k, (&eps, &t_end)) in sched.epsilons.iter().zip(&sched.horizons).enumerate() {
        let mut c = cfg.clone();
        c.epsilon = Some(eps);
        c.t_end = t_end;
        c.boundary = BoundaryPolicy::Frozen;
        c.extra_times = all_t[..k].to_vec();
        trajs.push(evolve(v0, &c, grid)?);
    }
    let mut comparisons = Vec::new();
    for k in 1..trajs.len() {
        let (prev, cur) = (&trajs[k - 1], &trajs[k]);
        let common = theta / sched.epsilons[k - 1];
        let inner = theta / sched.epsilons[0];
        let (mut common_sup, mut inner_sup) = (0.0f64, 0.0f64);
        let (mut common_nodes, mut inner_nodes) = (0, 0);
        for snap in &prev.snapshots {
            let Some(j) = cur.index_of(snap.t) else {
                return Err(MmcfError::InsufficientSnapshots(format!(
                    "level {k} has no snapshot at t = {}",
                    snap.t
                )));
            };
            let other = &cur.snapshots[j];
            let (mut cn, mut inn) = (0, 0);
            for a in 0..prev.grid.len() {
                let coshr = snap.state.cosh_r[a];
                if coshr > common {
                    continue;
                }
                let b = cur
                    .grid
                    .local_from_root(prev.grid.root_index(a))
                    .ok_or_else(|| MmcfError::GridMismatch("nested domains are not nested".into()))?;
                let d = (snap.v[a] - other.v[b]).abs();
                common_sup = common_sup.max(d);
                cn += 1;
                if coshr <= inner && snap.t <= sched.horizons[0] * (1.0 + 1e-12) {
                    inner_sup = inner_sup.max(d);
                    inn += 1;
                }
            }
            common_nodes = common_nodes.max(cn);
            inner_nodes = inner_nodes.max(inn);
        }
        comparisons.push(NestedComparison { level: k, common_sup, common_nodes, inner_sup, inner_nodes });
    }
    Ok(ExhaustionReport {
        schedule: sched.clone(),
        theta,
        domain_sizes: trajs.iter().map(|t| t.grid.len()).collect(),
        steps: trajs.iter().map(|t| t.steps()).collect(),
        comparisons,
    })
}

fn check_len(f: &[f64], grid: &Grid) -> Result<()> {
    if f.len() != grid.len() {
        return Err(MmcfError::SizeMismatch { expected: grid.len(), found: f.len() });
    }
    Ok(())
}
