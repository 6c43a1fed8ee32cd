//! Exact solutions used as oracles and comparison fixtures.
//!
//! * hemisphere `|x| = ρ`: totally geodesic, `H = 0`;
//! * horosphere `x_{n+1} = c`: `H = n`, translates as `c e^{(n−σ)t}`;
//! * cap: Euclidean sphere of radius `r` centred at `−(σr/n) e`, `H = σ`.

use serde::{Deserialize, Serialize};

use crate::error::{MmcfError, Result};
use crate::flow::Trajectory;
use crate::grid::{DomainMask, Grid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BarrierKind {
    Hemisphere,
    Horosphere,
    Cap,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierSpec {
    pub kind: BarrierKind,
    /// Radius for hemispheres and caps, height `c₀` for horospheres.
    pub param: f64,
    pub sigma: f64,
    pub n: usize,
}

impl BarrierSpec {
    pub fn hemisphere(radius: f64, n: usize) -> Self {
        Self { kind: BarrierKind::Hemisphere, param: radius, sigma: 0.0, n }
    }

    pub fn horosphere(c0: f64, sigma: f64, n: usize) -> Self {
        Self { kind: BarrierKind::Horosphere, param: c0, sigma, n }
    }

    pub fn cap(radius: f64, sigma: f64, n: usize) -> Self {
        Self { kind: BarrierKind::Cap, param: radius, sigma, n }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.param > 0.0 && self.param.is_finite()) {
            return Err(MmcfError::InvalidParameter(format!(
                "barrier parameter must be positive, got {}",
                self.param
            )));
        }
        if self.n != 1 && self.n != 2 {
            return Err(MmcfError::InvalidParameter(format!("n must be 1 or 2, got {}", self.n)));
        }
        if !(self.sigma.abs() < self.n as f64) {
            return Err(MmcfError::InvalidParameter(format!(
                "|σ| < n is required, got σ = {} with n = {}",
                self.sigma, self.n
            )));
        }
        Ok(())
    }

    /// Exact height at a point with `y = e·z` at time `t` under the flow with
    /// the barrier's own `σ` (hemispheres and caps are stationary only for
    /// their own curvature value).
    pub fn height_at(&self, y: f64, t: f64) -> Option<f64> {
        match self.kind {
            BarrierKind::Hemisphere => Some(self.param.ln()),
            BarrierKind::Horosphere => {
                Some(self.param.ln() - y.ln() + (self.n as f64 - self.sigma) * t)
            }
            BarrierKind::Cap => cap_radius(self.param, self.sigma, self.n, y).map(f64::ln),
        }
    }

    /// Height field at time `t` on every node of `grid`.
    pub fn field(&self, grid: &Grid, t: f64) -> Result<Vec<f64>> {
        self.validate()?;
        check_dim(self.n, grid)?;
        match self.kind {
            BarrierKind::Cap => Ok(cap_field(self, grid)?.0),
            _ => Ok((0..grid.len()).map(|k| self.height_at(grid.y(k), t).expect("total")).collect()),
        }
    }
}

/// Positive root `ρ` of `ρ² + 2ρy(σr/n) − r²(1 − σ²/n²) = 0`.
fn cap_radius(r: f64, sigma: f64, n: usize, y: f64) -> Option<f64> {
    let b = y * sigma * r / n as f64;
    let c = r * r * (1.0 - (sigma / n as f64).powi(2));
    let disc = b * b + c;
    if disc < 0.0 {
        return None;
    }
    let rho = -b + disc.sqrt();
    (rho > 0.0).then_some(rho)
}

/// Height field of the cap over the grid and the nodes where it is defined.
pub fn cap_field(spec: &BarrierSpec, grid: &Grid) -> Result<(Vec<f64>, DomainMask)> {
    spec.validate()?;
    check_dim(spec.n, grid)?;
    if spec.kind != BarrierKind::Cap {
        return Err(MmcfError::InvalidParameter("cap_field needs a cap specification".into()));
    }
    let mut v = Vec::with_capacity(grid.len());
    let mut include = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        match cap_radius(spec.param, spec.sigma, spec.n, grid.y(k)) {
            Some(rho) => {
                v.push(rho.ln());
                include.push(true);
            }
            None => {
                v.push(f64::NAN);
                include.push(false);
            }
        }
    }
    let mask = DomainMask::new(include);
    if mask.count() == 0 {
        return Err(MmcfError::EmptyDomain("the cap does not meet the grid".into()));
    }
    Ok((v, mask))
}

/// `v(z, t) = log c₀ − log y + (n − σ)t`.
pub fn horosphere_field(c0: f64, t: f64, sigma: f64, grid: &Grid) -> Result<Vec<f64>> {
    BarrierSpec::horosphere(c0, sigma, grid.dim()).field(grid, t)
}

/// Constant height `log ρ`.
pub fn hemisphere_field(radius: f64, grid: &Grid) -> Result<Vec<f64>> {
    BarrierSpec::hemisphere(radius, grid.dim()).field(grid, 0.0)
}

/// Order preservation between two trajectories.
#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    /// `min_{t, z} (v_upper − v_lower)`.
    pub min_margin: f64,
    pub worst_time: f64,
    pub worst_node: usize,
    /// Largest margin, for spotting drift in exact-translation fixtures.
    pub max_margin: f64,
    pub snapshots: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Check `v_lower ≤ v_upper` at every common snapshot.
pub fn comparison_check(lower: &Trajectory, upper: &Trajectory) -> Result<ComparisonReport> {
    if !lower.grid.same_nodes(&upper.grid) {
        return Err(MmcfError::GridMismatch("trajectories live on different grids".into()));
    }
    let tolerance = 1e-8;
    let mut rep = ComparisonReport {
        min_margin: f64::INFINITY,
        worst_time: 0.0,
        worst_node: 0,
        max_margin: f64::NEG_INFINITY,
        snapshots: 0,
        tolerance,
        passed: false,
    };
    for a in &lower.snapshots {
        let Some(j) = upper.index_of(a.t) else { continue };
        let b = &upper.snapshots[j];
        rep.snapshots += 1;
        for k in 0..a.v.len() {
            let m = b.v[k] - a.v[k];
            if m < rep.min_margin {
                rep.min_margin = m;
                rep.worst_time = a.t;
                rep.worst_node = k;
            }
            rep.max_margin = rep.max_margin.max(m);
        }
    }
    if rep.snapshots == 0 {
        return Err(MmcfError::InsufficientSnapshots("no common snapshot times".into()));
    }
    rep.passed = rep.min_margin >= -tolerance;
    Ok(rep)
}

fn check_dim(n: usize, grid: &Grid) -> Result<()> {
    if grid.dim() != n {
        return Err(MmcfError::InvalidParameter(format!(
            "barrier has n = {n} but the grid has n = {}",
            grid.dim()
        )));
    }
    Ok(())
}
