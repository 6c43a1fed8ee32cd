//! Numerical verification of evolution identities, differential
//! inequalities and interior estimates along computed trajectories.
//!
//! Snapshots are indexed by the grid label `z`, so a centred difference in
//! time gives `∂_t` at fixed `z`. The flow moves points along `ν_H`, while
//! `z ↦ e^v z` moves them radially; the two time derivatives of a function
//! `f` on the surface differ by the tangential part of the radial velocity:
//! `∂_t^ν f = ∂_t|_z f − (v_t / w²) ⟨∇v, ∇f⟩_γ`.

use serde::Serialize;

use crate::error::{MmcfError, Result};
use crate::flow::Trajectory;
use crate::geometry::{SurfaceConnection, SurfaceState};
use crate::grid::Grid;
use crate::tensor::{matmul, TensorField};

/// Names accepted by [`check_identity`].
pub const IDENTITIES: [&str; 5] = ["coshr", "nu_h_support", "nu_e_support", "simons", "A_evolution"];
/// Names accepted by [`check_inequality`].
pub const INEQUALITIES: [&str; 3] = ["eta_spacetime", "xi", "A_phi"];

/// Minimum radial distance (in nodes) from the boundary for evaluation.
pub const DEFAULT_MARGIN: usize = 4;

/// Parameters of the cut-off functions.
#[derive(Clone, Debug, Serialize)]
pub struct CutoffParams {
    pub n: usize,
    pub sigma: f64,
    pub cosh_r_max: f64,
    pub theta: f64,
    pub t_end: f64,
    /// `k = (2 sup u²)^{-1}` over `{r ≤ R} × [0, T]`, filled in by [`CutoffParams::calibrate`].
    pub k: Option<f64>,
    /// Lower bound `c₀ ≤ |x|^{-2}` over the same region.
    pub c0: Option<f64>,
}

impl CutoffParams {
    pub fn new(n: usize, sigma: f64, cosh_r_max: f64, theta: f64, t_end: f64) -> Self {
        Self { n, sigma, cosh_r_max, theta, t_end, k: None, c0: None }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MmcfError::InvalidParameter(m));
        if !(self.cosh_r_max >= 1.0) {
            return bad(format!("cosh R must be at least 1, got {}", self.cosh_r_max));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return bad(format!("θ must lie in (0, 1), got {}", self.theta));
        }
        if !(self.t_end > 0.0) {
            return bad(format!("T must be positive, got {}", self.t_end));
        }
        if !(self.sigma >= 0.0 && self.sigma < self.n as f64) {
            return bad(format!("estimates need 0 ≤ σ < n, got σ = {}", self.sigma));
        }
        Ok(())
    }

    /// Conditions on `(R, θ)` under which the interior gradient bound applies.
    pub fn gradient_bound_admissible(&self) -> std::result::Result<(), String> {
        let ns = self.n as f64 + self.sigma;
        let growth = self.sigma / ns * (ns * self.t_end).exp();
        if self.cosh_r_max < growth {
            return Err(format!("cosh R = {} is below σ/(n+σ)·e^((n+σ)T) = {growth}", self.cosh_r_max));
        }
        if self.theta <= growth / self.cosh_r_max {
            return Err(format!(
                "θ = {} must exceed σ e^((n+σ)T)/((n+σ) cosh R) = {}",
                self.theta,
                growth / self.cosh_r_max
            ));
        }
        Ok(())
    }

    /// Fill in `k` and `c₀` from the trajectory itself.
    pub fn calibrate(&mut self, traj: &Trajectory) {
        let mut sup_u2: f64 = 0.0;
        let mut c0 = f64::INFINITY;
        for s in &traj.snapshots {
            for k in 0..s.state.len() {
                if s.state.cosh_r[k] <= self.cosh_r_max {
                    let u = 1.0 / s.state.support_e[k];
                    sup_u2 = sup_u2.max(u * u);
                    let x2: f64 = s.state.x[k].iter().map(|c| c * c).sum();
                    c0 = c0.min(1.0 / x2);
                }
            }
        }
        if sup_u2 > 0.0 {
            self.k = Some(0.5 / sup_u2);
            self.c0 = Some(c0);
        }
    }
}

/// Options shared by the checks.
#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub margin: usize,
    /// Absolute tolerance for inequality margins; `None` means calibrate from
    /// the identity residuals of the same trajectory.
    pub tolerance: Option<f64>,
    /// Polar angle below which tensor-valued identities are not evaluated on
    /// two-dimensional grids. Frame components of a discrete tensor carry an
    /// anisotropic `O(h²)` error at the pole which the `cot²θ` connection
    /// terms of the rough Laplacian amplify to `O(1)` on the first ring.
    pub pole_exclusion: f64,
}

/// Default for [`CheckOptions::pole_exclusion`].
pub const DEFAULT_POLE_EXCLUSION: f64 = 0.3;

impl Default for CheckOptions {
    fn default() -> Self {
        Self { margin: DEFAULT_MARGIN, tolerance: None, pole_exclusion: DEFAULT_POLE_EXCLUSION }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    pub name: String,
    pub nodes: usize,
    pub spacing: f64,
    pub snapshot_dt: f64,
    pub evaluated_times: usize,
    pub max_residual: f64,
    pub max_rhs: f64,
    /// `max_residual / max(1, max_rhs)`.
    pub scaled_residual: f64,
    pub worst_time: f64,
    pub worst_node: usize,
    pub series: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MarginReport {
    pub name: String,
    pub nodes: usize,
    pub spacing: f64,
    pub snapshot_dt: f64,
    /// Largest `lhs − rhs`; the inequality asks for it to be `≤ 0`.
    pub worst_margin: f64,
    pub worst_time: f64,
    pub worst_node: usize,
    pub evaluated_points: usize,
    pub max_rhs: f64,
    pub tolerance: f64,
    pub tolerance_source: String,
    pub passed: bool,
    pub skipped: Option<String>,
    pub series: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundPoint {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub region_nodes: usize,
    /// Individual factors of the bound (names in `BoundReport::factor_names`).
    pub factors: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub name: String,
    pub nodes: usize,
    pub spacing: f64,
    pub factor_names: Vec<String>,
    pub series: Vec<BoundPoint>,
    /// `max lhs / rhs` over the series.
    pub max_ratio: f64,
    pub passed: bool,
    pub notes: Vec<String>,
}

/// Centred first derivative in time at snapshot `idx` (non-uniform spacing).
fn time_derivative(series: &[&[f64]], times: &[f64], idx: usize) -> Vec<f64> {
    let (tm, t0, tp) = (times[idx - 1], times[idx], times[idx + 1]);
    let (hm, hp) = (t0 - tm, tp - t0);
    let (qm, q0, qp) = (series[idx - 1], series[idx], series[idx + 1]);
    (0..q0.len())
        .map(|k| (hm * hm * (qp[k] - q0[k]) + hp * hp * (q0[k] - qm[k])) / (hm * hp * (hm + hp)))
        .collect()
}

fn require_interior_index(traj: &Trajectory, idx: usize) -> Result<()> {
    if traj.snapshots.len() < 3 {
        return Err(MmcfError::InsufficientSnapshots(format!(
            "need at least 3 snapshots, trajectory has {}",
            traj.snapshots.len()
        )));
    }
    if idx == 0 || idx + 1 >= traj.snapshots.len() {
        return Err(MmcfError::InsufficientSnapshots(format!(
            "snapshot {idx} has no neighbour on both sides"
        )));
    }
    Ok(())
}

/// Normal-velocity time derivative of `q` at snapshot `idx`.
pub fn normal_time_derivative(q: &[Vec<f64>], traj: &Trajectory, idx: usize) -> Result<Vec<f64>> {
    require_interior_index(traj, idx)?;
    if q.len() != traj.snapshots.len() {
        return Err(MmcfError::InsufficientSnapshots(format!(
            "field series has {} entries for {} snapshots",
            q.len(),
            traj.snapshots.len()
        )));
    }
    let times = traj.times();
    let qs: Vec<&[f64]> = q.iter().map(|x| x.as_slice()).collect();
    let vs: Vec<&[f64]> = traj.snapshots.iter().map(|s| s.v.as_slice()).collect();
    let dq = time_derivative(&qs, &times, idx);
    let dv = time_derivative(&vs, &times, idx);
    let st = &traj.snapshots[idx].state;
    let g = &traj.grid;
    Ok((0..g.len())
        .map(|k| {
            let (dqk, _) = g.jet(&q[idx], k);
            let om = st.grad_v[k];
            let w2 = st.w[k] * st.w[k];
            dq[k] - dv[k] * (om[0] * dqk[0] + om[1] * dqk[1]) / w2
        })
        .collect())
}

/// `(∂_t − Δ) q` at snapshot `idx`, with `∂_t` along the normal velocity.
pub fn heat_operator_numeric(q: &[Vec<f64>], traj: &Trajectory, idx: usize) -> Result<Vec<f64>> {
    let dt = normal_time_derivative(q, traj, idx)?;
    let st = &traj.snapshots[idx].state;
    let lap = SurfaceConnection::new(st, &traj.grid).laplace_scalar(&q[idx], &traj.grid);
    Ok(dt.iter().zip(&lap).map(|(a, b)| a - b).collect())
}

fn evaluation_nodes(grid: &Grid, margin: usize) -> Vec<usize> {
    (0..grid.len()).filter(|&k| grid.boundary_distance(k) >= margin).collect()
}

fn snapshot_dt(traj: &Trajectory) -> f64 {
    let t = traj.times();
    t.windows(2).map(|p| p[1] - p[0]).fold(0.0, f64::max)
}

/// Hyperbolic inner product of the surface gradients of two scalars.
fn grad_dot(grid: &Grid, st: &SurfaceState, f: &[f64], g: &[f64], k: usize) -> f64 {
    let (df, _) = grid.jet(f, k);
    let (dg, _) = grid.jet(g, k);
    let gi = &st.metric_inv[k];
    let n = st.dim;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += gi[i][j] * df[i] * dg[j];
        }
    }
    s
}

/// `⟨∇f, x_{n+1} e⟩_H`: derivative of `f` along the tangential part of `x_{n+1} e`.
fn vertical_derivative(grid: &Grid, st: &SurfaceState, f: &[f64], k: usize) -> f64 {
    let n = st.dim;
    let (df, _) = grid.jet(f, k);
    let om = st.grad_v[k];
    let dy = grid.grad_y(k);
    let y = grid.y(k);
    let w2 = st.w[k] * st.w[k];
    let scale = (-st.v[k]).exp();
    let b = [y * om[0] + dy[0], y * om[1] + dy[1]];
    let ob = om[0] * b[0] + om[1] * b[1];
    let mut s = 0.0;
    for i in 0..n {
        let c = scale * (b[i] - om[i] * ob / w2);
        s += c * df[i];
    }
    st.height[k] * s
}

/// Scalar identities: per-snapshot `(lhs field, rhs field)`.
type ScalarIdentity = dyn Fn(&Trajectory, usize) -> Result<(Vec<f64>, Vec<f64>)>;

fn heat_identity(
    field: impl Fn(&SurfaceState) -> Vec<f64>,
    rhs: impl Fn(&Trajectory, usize, &[f64]) -> Vec<f64> + 'static,
) -> impl Fn(&Trajectory, usize) -> Result<(Vec<f64>, Vec<f64>)> {
    move |traj, idx| {
        let q: Vec<Vec<f64>> = traj.snapshots.iter().map(|s| field(&s.state)).collect();
        let lhs = heat_operator_numeric(&q, traj, idx)?;
        let r = rhs(traj, idx, &q[idx]);
        Ok((lhs, r))
    }
}

fn scalar_identity(name: &str) -> Option<Box<ScalarIdentity>> {
    Some(match name {
        "coshr" => Box::new(heat_identity(
            |s| s.cosh_r.clone(),
            |traj, idx, _| {
                let st = &traj.snapshots[idx].state;
                let (n, sigma) = (traj.n as f64, traj.sigma);
                (0..st.len())
                    .map(|k| {
                        let c = st.cosh_r[k];
                        let nz = 1.0 / st.w[k];
                        (1.0 - nz * nz) / c - (n - sigma * st.nu_vertical[k]) * c - sigma * nz
                    })
                    .collect()
            },
        )),
        "nu_h_support" => Box::new(heat_identity(
            |s| s.support_h.clone(),
            |traj, idx, _| {
                let st = &traj.snapshots[idx].state;
                let n = traj.n as f64;
                (0..st.len()).map(|k| (st.norm_a2[k] - n) * st.support_h[k]).collect()
            },
        )),
        "nu_e_support" => Box::new(heat_identity(
            |s| s.support_e.clone(),
            |traj, idx, q| {
                let st = &traj.snapshots[idx].state;
                let sigma = traj.sigma;
                (0..st.len())
                    .map(|k| {
                        (st.norm_a2[k] - sigma * st.nu_vertical[k]) * st.support_e[k]
                            - 2.0 * vertical_derivative(&traj.grid, st, q, k)
                    })
                    .collect()
            },
        )),
        "A_evolution" => Box::new(move |traj: &Trajectory, idx: usize| {
            let q: Vec<Vec<f64>> = traj.snapshots.iter().map(|s| s.state.norm_a2.clone()).collect();
            let lhs = heat_operator_numeric(&q, traj, idx)?;
            let st = &traj.snapshots[idx].state;
            let conn = SurfaceConnection::new(st, &traj.grid);
            let a = TensorField::from_matrices(st.dim, &st.second_form);
            let da = conn.covariant_derivative(&a, &traj.grid);
            let (n, sigma) = (traj.n as f64, traj.sigma);
            let rhs = (0..st.len())
                .map(|k| {
                    let a2 = st.norm_a2[k];
                    let h = st.mean[k];
                    let grad2 = da.norm_sq(k, &st.metric_inv[k]);
                    2.0 * a2 * a2 + 2.0 * n * a2 - 2.0 * grad2 - 4.0 * h * h
                        + 2.0 * sigma * (h - st.trace_a3(k))
                })
                .collect();
            Ok((lhs, rhs))
        }),
        _ => return None,
    })
}

/// Simons' identity residual tensor norm and right-hand side norm at one snapshot.
fn simons_at(traj: &Trajectory, idx: usize) -> (Vec<f64>, Vec<f64>) {
    let st = &traj.snapshots[idx].state;
    let g = &traj.grid;
    let n = st.dim;
    let conn = SurfaceConnection::new(st, g);
    let a = TensorField::from_matrices(n, &st.second_form);
    let lap_a = conn.laplacian(&a, g);
    let hess_h = conn.hessian(&st.mean, g);
    let nn = traj.n as f64;
    let mut res_norm = Vec::with_capacity(st.len());
    let mut rhs_norm = Vec::with_capacity(st.len());
    for k in 0..st.len() {
        let am = st.second_form[k];
        let aga = matmul(&matmul(&am, &st.metric_inv[k], n), &am, n);
        let (h, a2) = (st.mean[k], st.norm_a2[k]);
        let mut rhs = TensorField::zeros(n, 2, 1);
        let mut res = TensorField::zeros(n, 2, 1);
        for i in 0..n {
            for j in 0..n {
                let r = hess_h[k][i][j] + h * aga[i][j] - a2 * am[i][j] - nn * am[i][j]
                    + h * st.metric[k][i][j];
                rhs.set(0, &[i, j], r);
                res.set(0, &[i, j], lap_a.get(k, &[i, j]) - r);
            }
        }
        res_norm.push(res.norm_sq(0, &st.metric_inv[k]).sqrt());
        rhs_norm.push(rhs.norm_sq(0, &st.metric_inv[k]).sqrt());
    }
    (res_norm, rhs_norm)
}

/// Residual of a named evolution identity along `traj`.
pub fn check_identity(name: &str, traj: &Trajectory, opts: &CheckOptions) -> Result<ResidualReport> {
    if !IDENTITIES.contains(&name) {
        return Err(MmcfError::UnknownCheck(name.to_string()));
    }
    let mut nodes = evaluation_nodes(&traj.grid, opts.margin);
    if name == "simons" && traj.grid.dim() == 2 {
        nodes.retain(|&k| traj.grid.theta(k) >= opts.pole_exclusion);
    }
    if nodes.is_empty() {
        return Err(MmcfError::EmptyDomain("no node is far enough from the boundary".into()));
    }
    let mut rep = ResidualReport {
        name: name.to_string(),
        nodes: traj.grid.len(),
        spacing: traj.grid.spacing(),
        snapshot_dt: snapshot_dt(traj),
        evaluated_times: 0,
        max_residual: 0.0,
        max_rhs: 0.0,
        scaled_residual: 0.0,
        worst_time: 0.0,
        worst_node: 0,
        series: Vec::new(),
    };
    let indices: Vec<usize> = if name == "simons" {
        (0..traj.snapshots.len()).collect()
    } else {
        require_interior_index(traj, 1)?;
        (1..traj.snapshots.len() - 1).collect()
    };
    let scalar = scalar_identity(name);
    for idx in indices {
        let (res, rhs): (Vec<f64>, Vec<f64>) = match &scalar {
            Some(f) => {
                let (l, r) = f(traj, idx)?;
                (l.iter().zip(&r).map(|(a, b)| (a - b).abs()).collect(), r.iter().map(|x| x.abs()).collect())
            }
            None => simons_at(traj, idx),
        };
        let t = traj.snapshots[idx].t;
        let mut worst = 0.0f64;
        for &k in &nodes {
            if res[k] > rep.max_residual || !res[k].is_finite() {
                rep.max_residual = res[k];
                rep.worst_time = t;
                rep.worst_node = k;
            }
            worst = worst.max(res[k]);
            rep.max_rhs = rep.max_rhs.max(rhs[k]);
        }
        rep.series.push((t, worst));
        rep.evaluated_times += 1;
    }
    rep.scaled_residual = rep.max_residual / rep.max_rhs.max(1.0);
    Ok(rep)
}

/// Residual comparison between a trajectory and its refinement.
#[derive(Clone, Debug, Serialize)]
pub struct RefinementReport {
    pub name: String,
    pub coarse: ResidualReport,
    pub fine: ResidualReport,
    /// `coarse.scaled_residual / fine.scaled_residual`.
    pub ratio: f64,
    /// Set when the residual fails to shrink by the required factor.
    pub systematic: bool,
}

pub fn identity_refinement(
    name: &str,
    coarse: &Trajectory,
    fine: &Trajectory,
    opts: &CheckOptions,
    required_ratio: f64,
) -> Result<RefinementReport> {
    let c = check_identity(name, coarse, opts)?;
    let mut fine_opts = opts.clone();
    fine_opts.margin = opts.margin * 2;
    let f = check_identity(name, fine, &fine_opts)?;
    let ratio = c.scaled_residual / f.scaled_residual;
    Ok(RefinementReport {
        name: name.to_string(),
        systematic: !(ratio >= required_ratio),
        coarse: c,
        fine: f,
        ratio,
    })
}

fn eta_field(st: &SurfaceState, t: f64, p: &CutoffParams) -> Vec<f64> {
    let ns = p.n as f64 + p.sigma;
    let shift = p.sigma / ns;
    st.cosh_r.iter().map(|c| p.cosh_r_max - (ns * t).exp() * (c + shift)).collect()
}

/// Largest scaled residual among the given identities on `traj`.
fn identity_tolerance(traj: &Trajectory, names: &[&str], opts: &CheckOptions) -> Result<(f64, String)> {
    let mut worst = 0.0f64;
    let mut which = String::new();
    for name in names {
        let r = check_identity(name, traj, opts)?;
        if r.scaled_residual >= worst {
            worst = r.scaled_residual;
            which = name.to_string();
        }
    }
    Ok((10.0 * worst, format!("10 × scaled {which} residual")))
}

/// Margin of a named differential inequality along `traj`.
///
/// Margins are reported relative to `max(1, max |rhs|)`, matching the scaled
/// identity residuals from which the default tolerance is derived.
pub fn check_inequality(
    name: &str,
    traj: &Trajectory,
    params: &CutoffParams,
    opts: &CheckOptions,
) -> Result<MarginReport> {
    if !INEQUALITIES.contains(&name) {
        return Err(MmcfError::UnknownCheck(name.to_string()));
    }
    params.validate()?;
    if (traj.sigma - params.sigma).abs() > 1e-15 || traj.n != params.n {
        return Err(MmcfError::InvalidParameter("cut-off parameters do not match the trajectory".into()));
    }
    require_interior_index(traj, 1)?;
    let mut rep = MarginReport {
        name: name.to_string(),
        nodes: traj.grid.len(),
        spacing: traj.grid.spacing(),
        snapshot_dt: snapshot_dt(traj),
        worst_margin: f64::NEG_INFINITY,
        worst_time: 0.0,
        worst_node: 0,
        evaluated_points: 0,
        max_rhs: 0.0,
        tolerance: 0.0,
        tolerance_source: String::new(),
        passed: true,
        skipped: None,
        series: Vec::new(),
    };
    let tol_identities: &[&str] = match name {
        "A_phi" => &["A_evolution", "nu_e_support"],
        _ => &["coshr", "nu_e_support"],
    };
    let (tol, src) = match opts.tolerance {
        Some(t) => (t, "caller supplied".to_string()),
        None => identity_tolerance(traj, tol_identities, opts)?,
    };
    rep.tolerance = tol;
    rep.tolerance_source = src;

    if name == "A_phi" && params.sigma == 0.0 {
        rep.skipped = Some(
            "σ = 0: the constants c₁ = c₀k/σ and c₂ = 1/σ of the |A|²φ inequality degenerate".into(),
        );
        rep.worst_margin = 0.0;
        return Ok(rep);
    }
    let mut p = params.clone();
    if name == "A_phi" && (p.k.is_none() || p.c0.is_none()) {
        p.calibrate(traj);
    }
    let nodes = evaluation_nodes(&traj.grid, opts.margin);
    let g = &traj.grid;
    let n = traj.n as f64;
    let sigma = traj.sigma;

    let q: Vec<Vec<f64>> = traj
        .snapshots
        .iter()
        .map(|s| {
            let eta = eta_field(&s.state, s.t, &p);
            match name {
                "eta_spacetime" => eta,
                "xi" => eta.iter().zip(&s.state.support_e).map(|(e, se)| e.powi(3) / se).collect(),
                _ => {
                    let k = p.k.unwrap_or(0.0);
                    (0..s.state.len())
                        .map(|i| {
                            let u2 = s.state.support_e[i].powi(-2);
                            s.state.norm_a2[i] * u2 / (1.0 - k * u2)
                        })
                        .collect()
                }
            }
        })
        .collect();

    let mut lhs_all = Vec::new();
    for idx in 1..traj.snapshots.len() - 1 {
        let snap = &traj.snapshots[idx];
        let st = &snap.state;
        let lhs = heat_operator_numeric(&q, traj, idx)?;
        let eta = eta_field(st, snap.t, &p);
        let mut worst = f64::NEG_INFINITY;
        let mut entries = Vec::new();
        for &k in &nodes {
            let rhs = match name {
                "eta_spacetime" => Some(0.0),
                "xi" => (eta[k] > 0.0).then(|| (n + 2.0) * q[idx][k]),
                _ => {
                    let kk = p.k.unwrap_or(0.0);
                    let c0 = p.c0.unwrap_or(1.0);
                    let inside = st.cosh_r[k] <= p.cosh_r_max && st.norm_a2[k] >= 1.0;
                    inside.then(|| {
                        let u2 = st.support_e[k].powi(-2);
                        let phi = u2 / (1.0 - kk * u2);
                        let dphi = 1.0 / (1.0 - kk * u2).powi(2);
                        let a2 = st.norm_a2[k];
                        let grad_u2 = grad_dot_inverse_support(g, st, k);
                        let c_over_k = 6.0 * n + (sigma * sigma + 4.0) / (c0 * kk);
                        let cross = phi_cross_term(g, st, &q[idx], kk, k) / phi;
                        -kk * a2 * a2 * phi * phi + (c_over_k - kk * dphi * grad_u2) * a2 * phi - cross
                            + sigma * sigma * phi
                    })
                }
            };
            if let Some(r) = rhs {
                entries.push((k, lhs[k] - r, r));
            }
        }
        for (k, m, r) in entries {
            rep.evaluated_points += 1;
            rep.max_rhs = rep.max_rhs.max(r.abs());
            worst = worst.max(m);
            lhs_all.push((snap.t, k, m));
        }
        if worst > f64::NEG_INFINITY {
            rep.series.push((snap.t, worst));
        }
    }
    if rep.evaluated_points == 0 {
        rep.skipped = Some("evaluation region is empty on every snapshot".into());
        rep.worst_margin = 0.0;
        return Ok(rep);
    }
    let scale = rep.max_rhs.max(1.0);
    for (t, k, m) in lhs_all {
        let sm = m / scale;
        if sm > rep.worst_margin {
            rep.worst_margin = sm;
            rep.worst_time = t;
            rep.worst_node = k;
        }
    }
    for s in rep.series.iter_mut() {
        s.1 /= scale;
    }
    rep.passed = rep.worst_margin <= rep.tolerance;
    Ok(rep)
}

/// `|∇u|²_H` for `u = ⟨ν_E, x⟩^{-1}`.
fn grad_dot_inverse_support(grid: &Grid, st: &SurfaceState, k: usize) -> f64 {
    let u: Vec<f64> = neighbourhood_inverse(st);
    grad_dot(grid, st, &u, &u, k)
}

fn neighbourhood_inverse(st: &SurfaceState) -> Vec<f64> {
    st.support_e.iter().map(|s| 1.0 / s).collect()
}

/// `⟨∇φ, ∇(|A|²φ)⟩_H` with `φ = u²/(1 − k u²)`.
fn phi_cross_term(grid: &Grid, st: &SurfaceState, a2phi: &[f64], k: f64, node: usize) -> f64 {
    let phi: Vec<f64> = st
        .support_e
        .iter()
        .map(|s| {
            let u2 = s.powi(-2);
            u2 / (1.0 - k * u2)
        })
        .collect();
    grad_dot(grid, st, &phi, a2phi, node)
}

/// Interior gradient bound: `sup w` over the shrinking set against
/// `e^{(n+2)t + v_osc}(1−θ)^{-3} sup₀ w`.
pub fn verify_gradient_bound(traj: &Trajectory, params: &CutoffParams) -> Result<BoundReport> {
    params.validate()?;
    let mut notes = Vec::new();
    if let Err(e) = params.gradient_bound_admissible() {
        return Err(MmcfError::InvalidParameter(e));
    }
    let g = &traj.grid;
    let n = traj.n as f64;
    let sigma = traj.sigma;
    let ns = n + sigma;
    // {r ≤ R} must stay inside the computational domain.
    for s in &traj.snapshots {
        for k in g.boundary_nodes() {
            if s.state.cosh_r[k] <= params.cosh_r_max {
                return Err(MmcfError::InvalidParameter(format!(
                    "{{r ≤ R}} reaches the boundary at t = {}; choose a smaller R",
                    s.t
                )));
            }
        }
    }
    let in_ball = |st: &SurfaceState, k: usize| st.cosh_r[k] <= params.cosh_r_max;
    let first = &traj.snapshots[0].state;
    let sup0 = (0..g.len()).filter(|&k| in_ball(first, k)).map(|k| first.w[k]).fold(0.0, f64::max);
    let (mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in traj.snapshots.iter().filter(|s| s.t <= params.t_end * (1.0 + 1e-12)) {
        for k in (0..g.len()).filter(|&k| in_ball(&s.state, k)) {
            vmin = vmin.min(s.v[k]);
            vmax = vmax.max(s.v[k]);
        }
    }
    let v_osc = vmax - vmin;
    let theta_factor = (1.0 - params.theta).powi(-3);
    let mut series = Vec::new();
    let mut max_ratio = 0.0f64;
    let mut emptied = false;
    for s in traj.snapshots.iter().filter(|s| s.t <= params.t_end * (1.0 + 1e-12)) {
        let grow = (ns * s.t).exp();
        let region: Vec<usize> = (0..g.len())
            .filter(|&k| grow * (s.state.cosh_r[k] + sigma / ns) <= params.theta * params.cosh_r_max)
            .collect();
        if region.is_empty() {
            if !emptied {
                notes.push(format!("the set is empty from t = {}", s.t));
                emptied = true;
            }
            continue;
        }
        let lhs = region.iter().map(|&k| s.state.w[k]).fold(0.0, f64::max);
        let time_factor = ((n + 2.0) * s.t + v_osc).exp();
        let rhs = time_factor * theta_factor * sup0;
        max_ratio = max_ratio.max(lhs / rhs);
        series.push(BoundPoint { t: s.t, lhs, rhs, region_nodes: region.len(), factors: vec![time_factor, theta_factor, sup0] });
    }
    notes.push(format!("v_osc = {v_osc:.6e}"));
    Ok(BoundReport {
        name: "gradient".into(),
        nodes: g.len(),
        spacing: g.spacing(),
        factor_names: vec!["exp((n+2)t + v_osc)".into(), "(1-θ)^-3".into(), "sup_0 w".into()],
        passed: series.iter().all(|p| p.lhs <= p.rhs),
        max_ratio,
        series,
        notes,
    })
}

/// Empirical constants of the curvature estimates.
///
/// For `m = 0` the series is
/// `C(t) = sup |A|² / [(1 + 1/t)(1−θ)^{-2} sup_{s ≤ t} sup_{r ≤ R} u⁴]`;
/// for `m ≥ 1` it is `sup |∇^m A|² / [(1 + 1/t)(1−θ)^{-2}(1 + 1/t)^{m+1}]`.
/// The supremum of `|∇^m A|²` is taken over `{cosh r ≤ θ cosh R}`.
pub fn verify_curvature_bounds(traj: &Trajectory, params: &CutoffParams, m: usize) -> Result<BoundReport> {
    params.validate()?;
    if m > 2 {
        return Err(MmcfError::InvalidParameter(format!("m ≤ 2 is supported, got {m}")));
    }
    let g = &traj.grid;
    let margin = DEFAULT_MARGIN * (m + 1);
    let mut series = Vec::new();
    let mut sup_u4: f64 = 0.0;
    let theta_factor = (1.0 - params.theta).powi(-2);
    let mut notes = Vec::new();
    for s in traj.snapshots.iter().filter(|s| s.t <= params.t_end * (1.0 + 1e-12)) {
        let st = &s.state;
        for k in 0..g.len() {
            if st.cosh_r[k] <= params.cosh_r_max {
                sup_u4 = sup_u4.max(st.support_e[k].powi(-4));
            }
        }
        if s.t <= 0.0 {
            continue;
        }
        let region: Vec<usize> = (0..g.len())
            .filter(|&k| st.cosh_r[k] <= params.theta * params.cosh_r_max && g.boundary_distance(k) >= margin)
            .collect();
        if region.is_empty() {
            continue;
        }
        let norms: Vec<f64> = match m {
            0 => st.norm_a2.clone(),
            _ => {
                let conn = SurfaceConnection::new(st, g);
                let mut t = TensorField::from_matrices(st.dim, &st.second_form);
                for _ in 0..m {
                    t = conn.covariant_derivative(&t, g);
                }
                (0..g.len()).map(|k| t.norm_sq(k, &st.metric_inv[k])).collect()
            }
        };
        let lhs = region.iter().map(|&k| norms[k]).fold(0.0, f64::max);
        let a = 1.0 + 1.0 / s.t;
        let (factors, denom) = if m == 0 {
            (vec![a, theta_factor, sup_u4], a * theta_factor * sup_u4)
        } else {
            let b = a.powi(m as i32 + 1);
            (vec![a, theta_factor, b], a * theta_factor * b)
        };
        series.push(BoundPoint { t: s.t, lhs, rhs: denom, region_nodes: region.len(), factors });
    }
    if series.is_empty() {
        notes.push("no snapshot with a nonempty region".into());
    }
    let max_ratio = series.iter().map(|p| p.lhs / p.rhs).fold(0.0, f64::max);
    let factor_names = if m == 0 {
        vec!["1+1/t".into(), "(1-θ)^-2".into(), "sup u^4".into()]
    } else {
        vec!["1+1/t".into(), "(1-θ)^-2".into(), format!("(1+1/t)^{}", m + 1)]
    };
    Ok(BoundReport {
        name: format!("curvature_m{m}"),
        nodes: g.len(),
        spacing: g.spacing(),
        factor_names,
        passed: max_ratio.is_finite(),
        max_ratio,
        series,
        notes,
    })
}

/// Ratio of empirical constants between a trajectory and its refinement.
pub fn curvature_bound_stability(coarse: &BoundReport, fine: &BoundReport) -> f64 {
    let (a, b) = (coarse.max_ratio, fine.max_ratio);
    if a == 0.0 && b == 0.0 {
        1.0
    } else {
        a.max(b) / a.min(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barriers::{hemisphere_field, horosphere_field};
    use crate::flow::{evolve, BoundaryData, BoundaryPolicy, FlowConfig};
    use crate::grid::{build_grid, GridSpec};
    use std::sync::Arc;

    fn horosphere_run(spec: GridSpec, sigma: f64, t_end: f64) -> Trajectory {
        let g = build_grid(&spec).unwrap();
        let n = g.dim() as f64;
        let v0 = horosphere_field(0.8, 0.0, sigma, &g).unwrap();
        let bd: BoundaryData = Arc::new(move |g: &Grid, k, t| 0.8f64.ln() - g.y(k).ln() + (n - sigma) * t);
        let h = g.spacing();
        let cfg = FlowConfig::new(g.dim(), sigma, t_end)
            .with_boundary(BoundaryPolicy::Prescribed(bd))
            .with_snapshots(2.0 * h * h);
        evolve(&v0, &cfg, &g).unwrap()
    }

    #[test]
    fn centred_time_derivative_is_exact_on_quadratics() {
        let times = [0.0, 0.1, 0.35];
        let q: Vec<Vec<f64>> = times.iter().map(|&t| vec![1.0 + 2.0 * t - 3.0 * t * t]).collect();
        let qs: Vec<&[f64]> = q.iter().map(|x| x.as_slice()).collect();
        let d = time_derivative(&qs, &times, 1);
        assert!((d[0] - (2.0 - 6.0 * 0.1)).abs() < 1e-13);
    }

    #[test]
    fn hemisphere_identities_hold_in_space() {
        // Stationary: ∂_t vanishes, so the residual measures Δ cosh r = n cosh r.
        let g = build_grid(&GridSpec::arc(129, 1.2)).unwrap();
        let v = hemisphere_field(1.0, &g).unwrap();
        let cfg = FlowConfig::new(1, 0.0, 0.01).with_snapshots(0.005);
        let tr = evolve(&v, &cfg, &g).unwrap();
        for name in ["coshr", "nu_h_support", "nu_e_support", "A_evolution", "simons"] {
            let r = check_identity(name, &tr, &CheckOptions::default()).unwrap();
            assert!(r.scaled_residual < 4e-3, "{name}: {r:?}");
        }
    }

    #[test]
    fn identity_residuals_shrink_under_refinement() {
        let coarse = horosphere_run(GridSpec::arc(33, 1.2), 0.3, 0.02);
        let fine = horosphere_run(GridSpec::arc(65, 1.2), 0.3, 0.02);
        let r = identity_refinement("coshr", &coarse, &fine, &CheckOptions::default(), 2.5).unwrap();
        assert!(!r.systematic, "{r:?}");
    }

    #[test]
    fn unknown_names_and_short_trajectories_are_rejected() {
        let tr = horosphere_run(GridSpec::arc(33, 1.2), 0.3, 0.01);
        let opts = CheckOptions::default();
        assert!(matches!(check_identity("nope", &tr, &opts), Err(MmcfError::UnknownCheck(_))));
        let p = CutoffParams::new(1, 0.3, 2.0, 0.8, 0.01);
        assert!(matches!(check_inequality("nope", &tr, &p, &opts), Err(MmcfError::UnknownCheck(_))));
        let mut short = tr.clone();
        short.snapshots.truncate(2);
        assert!(matches!(check_identity("coshr", &short, &opts), Err(MmcfError::InsufficientSnapshots(_))));
    }

    #[test]
    fn cutoff_parameter_validation() {
        assert!(CutoffParams::new(1, 0.5, 0.5, 0.5, 1.0).validate().is_err());
        assert!(CutoffParams::new(1, 0.5, 2.0, 1.0, 1.0).validate().is_err());
        assert!(CutoffParams::new(1, -0.1, 2.0, 0.5, 1.0).validate().is_err());
        // σ/(n+σ) e^{(n+σ)T} = e^{1.5}/3 ≈ 1.494.
        let p = CutoffParams::new(1, 0.5, 1.4, 0.9, 1.0);
        assert!(p.gradient_bound_admissible().is_err());
        let p = CutoffParams::new(1, 0.5, 3.0, 0.4, 1.0);
        assert!(p.gradient_bound_admissible().is_err());
        let p = CutoffParams::new(1, 0.5, 3.0, 0.6, 1.0);
        assert!(p.gradient_bound_admissible().is_ok());
    }

    #[test]
    fn eta_decreases_on_the_horosphere() {
        let tr = horosphere_run(GridSpec::arc(65, 1.2), 0.3, 0.02);
        let p = CutoffParams::new(1, 0.3, 2.0, 0.8, 0.02);
        let r = check_inequality("eta_spacetime", &tr, &p, &CheckOptions::default()).unwrap();
        assert!(r.passed && r.worst_margin < 0.0, "{r:?}");
    }

    #[test]
    fn a_phi_is_skipped_without_volume_term() {
        let tr = horosphere_run(GridSpec::arc(33, 1.2), 0.0, 0.04);
        let p = CutoffParams::new(1, 0.0, 2.0, 0.8, 0.04);
        let r = check_inequality("A_phi", &tr, &p, &CheckOptions::default()).unwrap();
        assert!(r.skipped.is_some() && r.passed);
    }
}
