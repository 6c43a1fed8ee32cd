//! Finite-difference grids on the upper hemisphere `S^n_+`, n ∈ {1, 2}.
//!
//! * n = 1: the half circle parameterized by the signed arc angle `s`,
//!   `z = (sin s, cos s)`, nodes uniformly spaced on `[-θ_max, θ_max]`.
//! * n = 2, axisymmetric: polar angle only, fields are functions of `θ`.
//! * n = 2, full: polar/azimuthal angles `(θ, φ)`.
//!
//! For n = 2 the polar nodes sit at half-integer multiples of the step
//! (`θ_i = (i + ½)h`), so no node lies on the pole. Polar-angle stencils that
//! would cross the pole continue along the same great circle onto the
//! antipodal meridian; both frame vectors reverse there, so a rank-r tensor
//! component picks up the factor `(-1)^r`.
//!
//! Ambient vectors are stored with three components and the vertical axis `e`
//! last. For n = 1 the middle component is always zero.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{MmcfError, Result};
use crate::tensor::{Mat2, Vec2, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridMode {
    Full,
    Axisymmetric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub mode: GridMode,
    /// Node counts: `[N]` along the arc / polar angle, plus `N_φ` in full n = 2 mode.
    pub resolution: Vec<usize>,
    pub theta_max: f64,
}

impl GridSpec {
    pub fn arc(nodes: usize, theta_max: f64) -> Self {
        Self { dim: 1, mode: GridMode::Full, resolution: vec![nodes], theta_max }
    }

    pub fn axisymmetric(nodes: usize, theta_max: f64) -> Self {
        Self { dim: 2, mode: GridMode::Axisymmetric, resolution: vec![nodes], theta_max }
    }

    pub fn full(n_theta: usize, n_phi: usize, theta_max: f64) -> Self {
        Self { dim: 2, mode: GridMode::Full, resolution: vec![n_theta, n_phi], theta_max }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(MmcfError::InvalidGrid(msg));
        if self.dim != 1 && self.dim != 2 {
            return bad(format!("dimension must be 1 or 2, got {}", self.dim));
        }
        if self.mode == GridMode::Axisymmetric && self.dim != 2 {
            return bad("axisymmetric mode requires n = 2".into());
        }
        let expected = if self.dim == 2 && self.mode == GridMode::Full { 2 } else { 1 };
        if self.resolution.len() != expected {
            return bad(format!(
                "expected {expected} resolution entries, got {}",
                self.resolution.len()
            ));
        }
        if let Some(&r) = self.resolution.iter().find(|&&r| r < 9) {
            return bad(format!("node counts must be at least 9, got {r}"));
        }
        if !(self.theta_max > 0.0 && self.theta_max < FRAC_PI_2) {
            return bad(format!(
                "theta_max must lie in (0, π/2) so that y = cos θ > 0, got {}",
                self.theta_max
            ));
        }
        if self.dim == 1 && self.resolution[0].is_multiple_of(2) {
            return bad("n = 1 grids need an odd node count so the pole is a node".into());
        }
        if self.resolution.len() == 2 && self.resolution[1] % 2 == 1 {
            return bad("azimuthal node count must be even".into());
        }
        Ok(())
    }

    /// Node counts refined `levels` times dyadically.
    pub fn refined(&self, levels: u32) -> Self {
        let f = 1usize << levels;
        let mut out = self.clone();
        if self.dim == 1 {
            out.resolution[0] = (self.resolution[0] - 1) * f + 1;
        } else {
            for r in out.resolution.iter_mut() {
                *r *= f;
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Layout {
    Arc,
    Axisym,
    Polar { n_phi: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Nb {
    idx: u32,
    flip: bool,
}

impl Nb {
    const NONE: Nb = Nb { idx: u32::MAX, flip: false };

    fn at(idx: usize, flip: bool) -> Nb {
        Nb { idx: idx as u32, flip }
    }

    fn is_some(self) -> bool {
        self.idx != u32::MAX
    }
}

/// Up to four neighbor taps of a difference formula with small integer
/// coefficients and a common scale, so constants are annihilated exactly.
#[derive(Clone, Copy, Debug)]
struct Stencil {
    taps: [(Nb, f64); 4],
    len: usize,
    scale: f64,
}

impl Stencil {
    fn new(scale: f64, taps: &[(Nb, f64)]) -> Self {
        let mut out = Stencil { taps: [(Nb::NONE, 0.0); 4], len: taps.len(), scale };
        out.taps[..taps.len()].copy_from_slice(taps);
        out
    }

    #[inline]
    fn apply(&self, f: &[f64], odd: bool) -> f64 {
        let mut s = 0.0;
        if odd {
            for &(nb, w) in &self.taps[..self.len] {
                let v = f[nb.idx as usize];
                s += if nb.flip { -w * v } else { w * v };
            }
        } else {
            for &(nb, w) in &self.taps[..self.len] {
                s += w * f[nb.idx as usize];
            }
        }
        s * self.scale
    }
}

/// Discretized upper hemisphere (or a polar cap of it).
#[derive(Clone, Debug)]
pub struct Grid {
    spec: GridSpec,
    layout: Layout,
    /// Step in the arc / polar coordinate.
    h: f64,
    dphi: f64,
    /// Range of arc / polar indices of the unrestricted grid present here.
    i_lo: usize,
    i_hi: usize,
    theta: Vec<f64>,
    phi: Vec<f64>,
    z: Vec<Vec3>,
    y: Vec<f64>,
    frame: Vec<[Vec3; 2]>,
    grad_y: Vec<Vec2>,
    cot: Vec<f64>,
    boundary: Vec<bool>,
    root: Vec<usize>,
    lines: Vec<[[Nb; 7]; 2]>,
    /// Cached first- and second-derivative stencils per node and direction.
    stencils: Vec<[[Stencil; 2]; 2]>,
}

impl Grid {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Coordinate step `h` along the arc / polar angle.
    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn azimuthal_spacing(&self) -> Option<f64> {
        matches!(self.layout, Layout::Polar { .. }).then_some(self.dphi)
    }

    /// Number of nodes along the arc / polar angle.
    pub fn radial_count(&self) -> usize {
        self.i_hi - self.i_lo + 1
    }

    pub fn azimuthal_count(&self) -> usize {
        match self.layout {
            Layout::Polar { n_phi } => n_phi,
            _ => 1,
        }
    }

    pub fn is_axisymmetric(&self) -> bool {
        self.layout == Layout::Axisym
    }

    /// Number of independently discretized coordinate directions.
    pub fn active_dirs(&self) -> usize {
        match self.layout {
            Layout::Polar { .. } => 2,
            _ => 1,
        }
    }

    /// Signed arc angle (n = 1) or polar angle (n = 2).
    pub fn theta(&self, node: usize) -> f64 {
        self.theta[node]
    }

    pub fn phi(&self, node: usize) -> f64 {
        self.phi[node]
    }

    pub fn z(&self, node: usize) -> &Vec3 {
        &self.z[node]
    }

    pub fn y(&self, node: usize) -> f64 {
        self.y[node]
    }

    pub fn ys(&self) -> &[f64] {
        &self.y
    }

    /// Orthonormal frame `(E_1, E_2)` of the round metric at `node`.
    pub fn frame(&self, node: usize) -> &[Vec3; 2] {
        &self.frame[node]
    }

    /// Frame components of the sphere gradient of `y = e·z`.
    pub fn grad_y(&self, node: usize) -> Vec2 {
        self.grad_y[node]
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.boundary[k]).collect()
    }

    /// Index of `node` in the unrestricted grid built from the same spec.
    pub fn root_index(&self, node: usize) -> usize {
        self.root[node]
    }

    /// Arc / polar index of `node` in the unrestricted grid.
    pub fn radial_index(&self, node: usize) -> usize {
        match self.layout {
            Layout::Polar { n_phi } => self.root[node] / n_phi,
            _ => self.root[node],
        }
    }

    /// Number of radial steps from `node` to the nearest boundary node.
    pub fn boundary_distance(&self, node: usize) -> usize {
        let i = self.radial_index(node);
        match self.layout {
            Layout::Arc => (i - self.i_lo).min(self.i_hi - i),
            _ => self.i_hi - i,
        }
    }

    /// Components `γ_ij` of the round metric in the grid coordinates.
    pub fn coordinate_metric(&self, node: usize) -> Mat2 {
        match self.layout {
            Layout::Arc => [[1.0, 0.0], [0.0, 0.0]],
            _ => {
                let s = self.theta[node].sin();
                [[1.0, 0.0], [0.0, s * s]]
            }
        }
    }

    pub fn coordinate_metric_inverse(&self, node: usize) -> Mat2 {
        crate::tensor::inverse(&self.coordinate_metric(node), self.dim())
            .expect("round metric is positive definite away from the pole")
    }

    /// Christoffel symbols `Γ^k_ij` of the round metric in grid coordinates,
    /// indexed `[k][i][j]`.
    pub fn coordinate_christoffel(&self, node: usize) -> [[[f64; 2]; 2]; 2] {
        let mut c = [[[0.0; 2]; 2]; 2];
        if self.layout != Layout::Arc {
            let t = self.theta[node];
            c[0][1][1] = -t.sin() * t.cos();
            c[1][0][1] = t.cos() / t.sin();
            c[1][1][0] = c[1][0][1];
        }
        c
    }

    /// Connection of the orthonormal frame: `∇_{E_k} E_i = Σ_m out[m] E_m`.
    #[inline]
    pub fn frame_connection(&self, node: usize, k: usize, i: usize) -> Vec2 {
        let c = self.cot[node];
        match (k, i) {
            (1, 0) => [0.0, c],
            (1, 1) => [-c, 0.0],
            _ => [0.0, 0.0],
        }
    }

    /// Step length along the unit frame direction `dir` at `node`.
    #[inline]
    fn step(&self, node: usize, dir: usize) -> f64 {
        if dir == 0 {
            self.h
        } else {
            self.dphi * self.theta[node].sin()
        }
    }

    #[inline]
    fn stencil1(&self, node: usize, dir: usize) -> &Stencil {
        &self.stencils[node][0][dir]
    }

    #[inline]
    fn stencil2(&self, node: usize, dir: usize) -> &Stencil {
        &self.stencils[node][1][dir]
    }

    fn build_stencil1(&self, node: usize, dir: usize) -> Stencil {
        let s = self.step(node, dir);
        let l = &self.lines[node][dir];
        let me = Nb::at(node, false);
        let (m2, m1, p1, p2) = (l[1], l[2], l[4], l[5]);
        match (m2.is_some(), m1.is_some(), p1.is_some(), p2.is_some()) {
            (_, true, true, _) => Stencil::new(0.5 / s, &[(p1, 1.0), (m1, -1.0)]),
            (true, true, false, _) => Stencil::new(0.5 / s, &[(me, 3.0), (m1, -4.0), (m2, 1.0)]),
            (_, false, true, true) => Stencil::new(0.5 / s, &[(me, -3.0), (p1, 4.0), (p2, -1.0)]),
            (_, true, false, _) => Stencil::new(1.0 / s, &[(me, 1.0), (m1, -1.0)]),
            (_, false, true, false) => Stencil::new(1.0 / s, &[(me, -1.0), (p1, 1.0)]),
            _ => Stencil::new(0.0, &[]),
        }
    }

    fn build_stencil2(&self, node: usize, dir: usize) -> Stencil {
        let s = self.step(node, dir);
        let q = 1.0 / (s * s);
        let l = &self.lines[node][dir];
        let me = Nb::at(node, false);
        let has = |k: usize| l[k].is_some();
        if has(2) && has(4) {
            Stencil::new(q, &[(l[4], 1.0), (me, -2.0), (l[2], 1.0)])
        } else if has(2) && has(1) && has(0) {
            Stencil::new(q, &[(me, 2.0), (l[2], -5.0), (l[1], 4.0), (l[0], -1.0)])
        } else if has(4) && has(5) && has(6) {
            Stencil::new(q, &[(me, 2.0), (l[4], -5.0), (l[5], 4.0), (l[6], -1.0)])
        } else if has(2) && has(1) {
            Stencil::new(q, &[(me, 1.0), (l[2], -2.0), (l[1], 1.0)])
        } else if has(4) && has(5) {
            Stencil::new(q, &[(me, 1.0), (l[4], -2.0), (l[5], 1.0)])
        } else {
            Stencil::new(0.0, &[])
        }
    }

    /// Derivative of a component field along the unit frame direction `dir`.
    /// `odd` marks components of odd-rank tensors, which change sign across
    /// the pole.
    #[inline]
    pub fn d1(&self, f: &[f64], node: usize, dir: usize, odd: bool) -> f64 {
        if dir >= self.active_dirs() {
            return 0.0;
        }
        self.stencil1(node, dir).apply(f, odd)
    }

    /// Pure second difference along `dir` (for `dir = 1` this is
    /// `∂²_φ f / sin²θ`, without connection terms).
    #[inline]
    pub fn d2(&self, f: &[f64], node: usize, dir: usize) -> f64 {
        if dir >= self.active_dirs() {
            return 0.0;
        }
        self.stencil2(node, dir).apply(f, false)
    }

    /// Frame components of the covariant gradient and Hessian of a scalar
    /// field at one node.
    #[inline]
    pub fn jet(&self, f: &[f64], node: usize) -> (Vec2, Mat2) {
        let g0 = self.d1(f, node, 0, false);
        let h00 = self.d2(f, node, 0);
        match self.layout {
            Layout::Arc => ([g0, 0.0], [[h00, 0.0], [0.0, 0.0]]),
            Layout::Axisym => ([g0, 0.0], [[h00, 0.0], [0.0, self.cot[node] * g0]]),
            Layout::Polar { .. } => {
                let g1 = self.d1(f, node, 1, false);
                let h11 = self.d2(f, node, 1) + self.cot[node] * g0;
                let st = self.stencil1(node, 0);
                let mut h01 = 0.0;
                for &(nb, w) in &st.taps[..st.len] {
                    let k = nb.idx as usize;
                    let e_phi = self.d1(f, k, 1, false);
                    h01 += if nb.flip { -w * e_phi } else { w * e_phi };
                }
                h01 *= st.scale;
                ([g0, g1], [[h00, h01], [h01, h11]])
            }
        }
    }

    fn check_len(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.len() {
            return Err(MmcfError::SizeMismatch { expected: self.len(), found: f.len() });
        }
        Ok(())
    }

    /// Covariant gradient in frame components (equal to `γ^{ij} f_j` since the
    /// frame is orthonormal).
    pub fn covariant_gradient(&self, f: &[f64]) -> Result<Vec<Vec2>> {
        self.check_len(f)?;
        Ok((0..self.len()).map(|k| self.jet(f, k).0).collect())
    }

    /// Covariant Hessian with respect to the round metric, in frame components.
    pub fn covariant_hessian(&self, f: &[f64]) -> Result<Vec<Mat2>> {
        self.check_len(f)?;
        Ok((0..self.len()).map(|k| self.jet(f, k).1).collect())
    }

    /// Intrinsic Laplacian `γ^{ij} f_ij` of the round sphere.
    pub fn sphere_laplacian(&self, f: &[f64]) -> Result<Vec<f64>> {
        let hess = self.covariant_hessian(f)?;
        let dim = self.dim();
        Ok(hess.iter().map(|m| crate::tensor::trace(m, dim)).collect())
    }

    /// Build a field by evaluating `f(z, node)` at every node.
    pub fn sample(&self, mut f: impl FnMut(&Vec3, usize) -> f64) -> Vec<f64> {
        (0..self.len()).map(|k| f(&self.z[k], k)).collect()
    }

    /// Sub-grid containing exactly the nodes selected by `mask`.
    ///
    /// The selected nodes must form a polar cap around the pole (for n = 1, a
    /// contiguous arc), which is the shape every truncation produces.
    pub fn restrict(&self, mask: &DomainMask) -> Result<Grid> {
        if mask.include.len() != self.len() {
            return Err(MmcfError::SizeMismatch { expected: self.len(), found: mask.include.len() });
        }
        let n_rad = self.radial_count();
        let per_ring = self.azimuthal_count();
        let mut ring_in = vec![false; n_rad];
        for (r, slot) in ring_in.iter_mut().enumerate() {
            let nodes = &mask.include[r * per_ring..(r + 1) * per_ring];
            let all = nodes.iter().all(|&b| b);
            if !all && nodes.iter().any(|&b| b) {
                return Err(MmcfError::EmptyDomain(
                    "mask splits an azimuthal ring; only polar caps are supported".into(),
                ));
            }
            *slot = all;
        }
        let first = ring_in.iter().position(|&b| b);
        let last = ring_in.iter().rposition(|&b| b);
        let (Some(first), Some(last)) = (first, last) else {
            return Err(MmcfError::EmptyDomain("mask selects no nodes".into()));
        };
        if ring_in[first..=last].iter().any(|&b| !b) {
            return Err(MmcfError::EmptyDomain("mask is not connected".into()));
        }
        if self.layout != Layout::Arc && first != 0 {
            return Err(MmcfError::EmptyDomain("mask does not contain the pole".into()));
        }
        if last - first + 1 < 5 {
            return Err(MmcfError::EmptyDomain(format!(
                "mask keeps only {} radial nodes",
                last - first + 1
            )));
        }
        Ok(assemble(&self.spec, self.layout, self.i_lo + first, self.i_lo + last))
    }

    /// Values of `f` (given on `self`) at the nodes of a sub-grid `child`
    /// produced by [`Grid::restrict`].
    pub fn restrict_field(&self, child: &Grid, f: &[f64]) -> Result<Vec<f64>> {
        self.check_len(f)?;
        child
            .root
            .iter()
            .map(|&r| {
                self.local_from_root(r)
                    .map(|k| f[k])
                    .ok_or_else(|| MmcfError::GridMismatch("child node outside parent".into()))
            })
            .collect()
    }

    /// Local node index of the unrestricted-grid node `root`, if present.
    pub fn local_from_root(&self, root: usize) -> Option<usize> {
        let per_ring = self.azimuthal_count();
        let i = root / per_ring;
        if i < self.i_lo || i > self.i_hi {
            return None;
        }
        Some(root - self.i_lo * per_ring)
    }

    /// Whether `other` was built from the same spec (possibly restricted).
    pub fn same_family(&self, other: &Grid) -> bool {
        self.spec == other.spec
    }

    /// Whether `other` has exactly the same nodes.
    pub fn same_nodes(&self, other: &Grid) -> bool {
        self.same_family(other) && self.i_lo == other.i_lo && self.i_hi == other.i_hi
    }
}

/// Build the grid described by `spec`.
pub fn build_grid(spec: &GridSpec) -> Result<Grid> {
    spec.validate()?;
    let layout = match (spec.dim, spec.mode) {
        (1, _) => Layout::Arc,
        (2, GridMode::Axisymmetric) => Layout::Axisym,
        _ => Layout::Polar { n_phi: spec.resolution[1] },
    };
    Ok(assemble(spec, layout, 0, spec.resolution[0] - 1))
}

fn assemble(spec: &GridSpec, layout: Layout, i_lo: usize, i_hi: usize) -> Grid {
    let n_full = spec.resolution[0];
    let (h, theta_of): (f64, Box<dyn Fn(usize) -> f64>) = match layout {
        Layout::Arc => {
            let h = 2.0 * spec.theta_max / (n_full - 1) as f64;
            let tm = spec.theta_max;
            (h, Box::new(move |i| -tm + i as f64 * h))
        }
        _ => {
            let h = spec.theta_max / (n_full as f64 - 0.5);
            (h, Box::new(move |i| (i as f64 + 0.5) * h))
        }
    };
    let n_phi = match layout {
        Layout::Polar { n_phi } => n_phi,
        _ => 1,
    };
    let dphi = 2.0 * PI / n_phi as f64;
    let n_rad = i_hi - i_lo + 1;
    let len = n_rad * n_phi;

    let mut g = Grid {
        spec: spec.clone(),
        layout,
        h,
        dphi,
        i_lo,
        i_hi,
        theta: Vec::with_capacity(len),
        phi: Vec::with_capacity(len),
        z: Vec::with_capacity(len),
        y: Vec::with_capacity(len),
        frame: Vec::with_capacity(len),
        grad_y: Vec::with_capacity(len),
        cot: Vec::with_capacity(len),
        boundary: Vec::with_capacity(len),
        root: Vec::with_capacity(len),
        lines: Vec::with_capacity(len),
        stencils: Vec::new(),
    };

    let local = |i: usize, j: usize| (i - i_lo) * n_phi + j;
    // Radial neighbor of (i, j) at signed offset k, following the great
    // circle across the pole where needed.
    let radial_nb = |i: usize, j: usize, k: i64| -> Nb {
        let t = i as i64 + k;
        match layout {
            Layout::Arc => {
                if t < i_lo as i64 || t > i_hi as i64 {
                    Nb::NONE
                } else {
                    Nb::at(local(t as usize, 0), false)
                }
            }
            _ => {
                if t > i_hi as i64 {
                    Nb::NONE
                } else if t >= 0 {
                    Nb::at(local(t as usize, j), false)
                } else {
                    let m = (-t - 1) as usize;
                    if m > i_hi {
                        Nb::NONE
                    } else {
                        Nb::at(local(m, (j + n_phi / 2) % n_phi), true)
                    }
                }
            }
        }
    };

    for i in i_lo..=i_hi {
        let th = theta_of(i);
        for j in 0..n_phi {
            let ph = j as f64 * dphi;
            let (st, ct) = th.sin_cos();
            let (sp, cp) = ph.sin_cos();
            let (z, e1, e2) = match layout {
                Layout::Arc => ([st, 0.0, ct], [ct, 0.0, -st], [0.0, 0.0, 0.0]),
                _ => (
                    [st * cp, st * sp, ct],
                    [ct * cp, ct * sp, -st],
                    [-sp, cp, 0.0],
                ),
            };
            g.theta.push(th);
            g.phi.push(ph);
            g.z.push(z);
            g.y.push(ct);
            g.frame.push([e1, e2]);
            g.grad_y.push([-st, 0.0]);
            g.cot.push(if layout == Layout::Arc { 0.0 } else { ct / st });
            g.boundary.push(match layout {
                Layout::Arc => i == i_lo || i == i_hi,
                _ => i == i_hi,
            });
            g.root.push(i * n_phi + j);

            let mut lines = [[Nb::NONE; 7]; 2];
            for (slot, k) in (-3i64..=3).enumerate() {
                lines[0][slot] = if k == 0 { Nb::at(local(i, j), false) } else { radial_nb(i, j, k) };
                if let Layout::Polar { .. } = layout {
                    let jj = (j as i64 + k).rem_euclid(n_phi as i64) as usize;
                    lines[1][slot] = Nb::at(local(i, jj), false);
                }
            }
            g.lines.push(lines);
        }
    }
    g.stencils = (0..g.len())
        .map(|k| {
            let d = |f: fn(&Grid, usize, usize) -> Stencil| [f(&g, k, 0), f(&g, k, 1)];
            [d(Grid::build_stencil1), d(Grid::build_stencil2)]
        })
        .collect();
    g
}

/// Node selection on a grid, e.g. the truncated computational domain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomainMask {
    include: Vec<bool>,
}

impl DomainMask {
    pub fn new(include: Vec<bool>) -> Self {
        Self { include }
    }

    pub fn full(grid: &Grid) -> Self {
        Self { include: vec![true; grid.len()] }
    }

    pub fn contains(&self, node: usize) -> bool {
        self.include[node]
    }

    pub fn included(&self) -> &[bool] {
        &self.include
    }

    pub fn count(&self) -> usize {
        self.include.iter().filter(|&&b| b).count()
    }

    pub fn is_proper(&self) -> bool {
        self.include.iter().any(|&b| !b)
    }

    /// Selected nodes with a radial neighbor that is missing or unselected;
    /// these carry the Dirichlet data.
    pub fn boundary(&self, grid: &Grid) -> Vec<usize> {
        (0..grid.len())
            .filter(|&k| self.include[k])
            .filter(|&k| {
                let l = &grid.lines[k][0];
                [l[2], l[4]].iter().any(|nb| !nb.is_some() || !self.include[nb.idx as usize])
            })
            .collect()
    }

    pub fn interior(&self, grid: &Grid) -> Vec<usize> {
        let b = self.boundary(grid);
        (0..grid.len()).filter(|&k| self.include[k] && !b.contains(&k)).collect()
    }
}

/// Nodes of the solid cylinder `{cosh r ≤ 1/ε}` for the surface `e^v z`.
pub fn truncate_domain(v: &[f64], grid: &Grid, epsilon: f64) -> Result<DomainMask> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(MmcfError::InvalidParameter(format!("ε must be positive, got {epsilon}")));
    }
    if epsilon >= 1.0 {
        return Err(MmcfError::EmptyDomain(format!(
            "cosh r ≥ 1 everywhere, so ε = {epsilon} leaves no open domain"
        )));
    }
    let points = crate::geometry::embed(v, grid)?;
    let limit = 1.0 / epsilon;
    let mut include = Vec::with_capacity(grid.len());
    for p in &points {
        include.push(crate::geometry::cosh_radial(p)? <= limit * (1.0 + 1e-12));
    }
    let mask = DomainMask::new(include);
    if mask.count() == 0 {
        return Err(MmcfError::EmptyDomain(format!("no node satisfies cosh r ≤ {limit}")));
    }
    // The pole neighborhood must be present.
    let pole_ok = match grid.layout {
        Layout::Arc => grid
            .root
            .iter()
            .position(|&r| r == (grid.spec.resolution[0] - 1) / 2)
            .is_some_and(|k| mask.include[k]),
        _ => grid.i_lo == 0 && mask.include[0],
    };
    if !pole_ok {
        return Err(MmcfError::EmptyDomain("truncation excludes the pole".into()));
    }
    Ok(mask)
}

/// A scalar sampled on every node of a grid: the radial height `v`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeightField {
    values: Vec<f64>,
}

impl HeightField {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Self { values: vec![c; grid.len()] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs_diff(&self, other: &HeightField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Deref for HeightField {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl From<Vec<f64>> for HeightField {
    fn from(values: Vec<f64>) -> Self {
        Self { values }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{dot3, norm3};
    use std::f64::consts::FRAC_PI_3;

    fn arc(n: usize) -> Grid {
        build_grid(&GridSpec::arc(n, 1.2)).unwrap()
    }

    #[test]
    fn arc_pole_and_sixty_degree_nodes() {
        let g = build_grid(&GridSpec::arc(25, 4.0 * FRAC_PI_3 / 3.0)).unwrap();
        let pole = 12;
        assert_eq!(g.z(pole), &[0.0, 0.0, 1.0]);
        assert_eq!(g.y(pole), 1.0);
        let k = 21;
        assert!((g.theta(k) - FRAC_PI_3).abs() < 1e-15);
        assert!((g.y(k) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn nodes_are_unit_vectors_and_frames_orthonormal() {
        for spec in [GridSpec::arc(33, 1.3), GridSpec::full(17, 16, 1.3)] {
            let g = build_grid(&spec).unwrap();
            for k in 0..g.len() {
                assert!((norm3(g.z(k)) - 1.0).abs() < 1e-12);
                assert!(g.y(k) > 0.0);
                let [e1, e2] = g.frame(k);
                assert!(dot3(e1, g.z(k)).abs() < 1e-14);
                if g.dim() == 2 {
                    assert!(dot3(e1, e2).abs() < 1e-14 && dot3(e2, g.z(k)).abs() < 1e-14);
                }
                let m = g.coordinate_metric(k);
                assert!(m[0][0] > 0.0 && (g.dim() == 1 || m[1][1] > 0.0));
            }
        }
    }

    #[test]
    fn spec_validation() {
        assert!(GridSpec::arc(33, FRAC_PI_2).validate().is_err());
        assert!(GridSpec::arc(7, 1.0).validate().is_err());
        assert!(GridSpec { dim: 1, mode: GridMode::Axisymmetric, resolution: vec![33], theta_max: 1.0 }
            .validate()
            .is_err());
        assert!(GridSpec { dim: 3, mode: GridMode::Full, resolution: vec![33], theta_max: 1.0 }
            .validate()
            .is_err());
        assert!(GridSpec::full(17, 15, 1.0).validate().is_err());
        assert!(GridSpec::axisymmetric(17, 1.0).validate().is_ok());
    }

    #[test]
    fn constants_have_zero_derivatives() {
        for spec in [GridSpec::arc(17, 1.2), GridSpec::axisymmetric(17, 1.2), GridSpec::full(17, 12, 1.2)] {
            let g = build_grid(&spec).unwrap();
            let f = vec![2.5; g.len()];
            for k in 0..g.len() {
                let (grad, hess) = g.jet(&f, k);
                assert_eq!(grad, [0.0, 0.0]);
                assert_eq!(hess, [[0.0; 2]; 2]);
            }
        }
    }

    #[test]
    fn horosphere_height_gradient() {
        // f = -log cos s has |∇f|² = tan² s; at s = π/3 this is 3.
        let errs: Vec<f64> = [49usize, 97, 193]
            .iter()
            .map(|&n| {
                let g = build_grid(&GridSpec::arc(n, 4.0 * FRAC_PI_3 / 3.0)).unwrap();
                let f = g.sample(|z, _| -z[2].ln());
                let k = (0..g.len()).find(|&k| (g.theta(k) - FRAC_PI_3).abs() < 1e-12).unwrap();
                let grad = g.covariant_gradient(&f).unwrap()[k];
                (grad[0] * grad[0] - 3.0).abs()
            })
            .collect();
        assert!(errs[2] < 5e-3, "{errs:?}");
        assert!(errs[0] / errs[1] > 3.5 && errs[1] / errs[2] > 3.5, "{errs:?}");
    }

    #[test]
    fn mask_restriction_keeps_root_indices() {
        let g = arc(33);
        let include: Vec<bool> = (0..g.len()).map(|k| g.y(k) >= 0.6).collect();
        let sub = g.restrict(&DomainMask::new(include.clone())).unwrap();
        assert_eq!(sub.len(), include.iter().filter(|&&b| b).count());
        assert!(sub.is_boundary(0) && sub.is_boundary(sub.len() - 1));
        for k in 0..sub.len() {
            let parent = g.local_from_root(sub.root_index(k)).unwrap();
            assert_eq!(sub.z(k), g.z(parent));
        }
        let bad: Vec<bool> = (0..g.len()).map(|k| k % 2 == 0).collect();
        assert!(g.restrict(&DomainMask::new(bad)).is_err());
    }

    #[test]
    fn mask_boundary_classification() {
        let g = arc(17);
        let include: Vec<bool> = (0..g.len()).map(|k| (4..=12).contains(&k)).collect();
        let mask = DomainMask::new(include);
        assert!(mask.is_proper());
        assert_eq!(mask.boundary(&g), vec![4, 12]);
        assert_eq!(mask.interior(&g).len(), 7);
    }

    #[test]
    fn first_harmonic_on_two_sphere() {
        // f = y: |∇f|² = 1 − y², ∇²f = −y γ, Δf = −2y.
        let errs: Vec<f64> = [17usize, 33, 65]
            .iter()
            .map(|&n| {
                let g = build_grid(&GridSpec::full(n, 2 * (n - 1), 1.2)).unwrap();
                let f = g.ys().to_vec();
                let lap = g.sphere_laplacian(&f).unwrap();
                let mut err: f64 = 0.0;
                for k in 0..g.len() {
                    let (grad, hess) = g.jet(&f, k);
                    let y = g.y(k);
                    err = err.max((grad[0] * grad[0] + grad[1] * grad[1] - (1.0 - y * y)).abs());
                    if g.boundary_distance(k) >= 1 {
                        err = err.max((hess[0][0] + y).abs()).max((hess[1][1] + y).abs());
                        err = err.max(hess[0][1].abs()).max((lap[k] + 2.0 * y).abs());
                    }
                    assert_eq!(hess[0][1], hess[1][0]);
                }
                err
            })
            .collect();
        assert!(errs[2] < 1e-3, "{errs:?}");
        assert!((errs[1] / errs[2]).log2() > 1.8, "{errs:?}");
    }

    #[test]
    fn axisymmetric_and_full_operators_agree() {
        let ax = build_grid(&GridSpec::axisymmetric(21, 1.1)).unwrap();
        let full = build_grid(&GridSpec::full(21, 16, 1.1)).unwrap();
        let prof = |z: &Vec3| (z[2] * 1.3).cos() + 0.2 * z[2].ln();
        let fa = ax.sample(|z, _| prof(z));
        let ff = full.sample(|z, _| prof(z));
        for k in 0..full.len() {
            let i = full.radial_index(k);
            let (ga, ha) = ax.jet(&fa, i);
            let (gf, hf) = full.jet(&ff, k);
            for a in 0..2 {
                assert!((ga[a] - gf[a]).abs() < 1e-10);
                for b in 0..2 {
                    assert!((ha[a][b] - hf[a][b]).abs() < 1e-10, "{k} {a}{b} {:?} {:?}", ha, hf);
                }
            }
        }
    }
}
