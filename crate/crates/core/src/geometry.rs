//! Geometry of radial graphs `x = e^v z` in the half-space model.
//!
//! Tangent quantities are stored in the orthonormal round-sphere frame of the
//! grid. With `ω = ∇v` in that frame and `w = √(1 + |ω|²)`:
//!
//! * `g^E = e^{2v}(δ + ωω)` and `g = g^E / x_{n+1}² = (δ + ωω)/y²`,
//! * `a^E = (e^v / w)(∇²v − δ − ωω)` (outward normal, unit sphere has `κ^E = −1`),
//! * `a = a^E / x_{n+1} + ν^{n+1} g^E / x_{n+1}²`, so `κ^H = x_{n+1} κ^E + ν^{n+1}`.

use crate::error::{MmcfError, Result};
use crate::grid::Grid;
use crate::tensor::{
    contract, dot3, inverse, matmul, norm3, real_eigenvalues, trace, Mat2, TensorField, Vec2,
    Vec3, ZERO2,
};

/// Points `e^v z` for every node.
pub fn embed(v: &[f64], grid: &Grid) -> Result<Vec<Vec3>> {
    check_len(v, grid)?;
    Ok((0..grid.len()).map(|k| {
        let s = v[k].exp();
        let z = grid.z(k);
        [s * z[0], s * z[1], s * z[2]]
    })
    .collect())
}

/// `cosh r = |x| / x_{n+1}` where `r` is the hyperbolic distance to the vertical axis.
/// The last coordinate of `x` is the height.
pub fn cosh_radial(x: &[f64]) -> Result<f64> {
    let height = *x
        .last()
        .ok_or_else(|| MmcfError::InvalidParameter("empty point".into()))?;
    if !(height > 0.0) {
        return Err(MmcfError::InvalidParameter(format!(
            "point height must be positive, got {height}"
        )));
    }
    let norm = x.iter().map(|c| c * c).sum::<f64>().sqrt();
    Ok(norm / height)
}

/// Difference `∇^H_X Y − ∇^E_X Y` of the hyperbolic and Euclidean connections
/// at the point `x`.
pub fn connection_correction(a: &Vec3, b: &Vec3, x: &Vec3) -> Result<Vec3> {
    let h = x[2];
    if !(h > 0.0) {
        return Err(MmcfError::InvalidParameter(format!("point height must be positive, got {h}")));
    }
    let ab = dot3(a, b);
    let (ae, be) = (a[2], b[2]);
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = (-ae * b[i] - be * a[i]) / h;
    }
    out[2] += ab / h;
    Ok(out)
}

/// Inversion in the unit sphere, `x ↦ x / |x|²`, a hyperbolic isometry.
pub fn reflect(x: &Vec3) -> Result<Vec3> {
    let r2 = dot3(x, x);
    if r2 == 0.0 {
        return Err(MmcfError::InvalidParameter("cannot reflect the origin".into()));
    }
    Ok([x[0] / r2, x[1] / r2, x[2] / r2])
}

/// Height field of the reflected graph: inversion maps `e^v z` to `e^{-v} z`.
pub fn reflect_height(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| -x).collect()
}

/// Slope `w` and Euclidean unit normal per node.
pub fn slope_and_normal(v: &[f64], grid: &Grid) -> Result<(Vec<f64>, Vec<Vec3>)> {
    check_len(v, grid)?;
    let mut ws = Vec::with_capacity(grid.len());
    let mut nus = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let (om, _) = grid.jet(v, k);
        let (w, nu) = normal_from_slope(grid, k, &om);
        ws.push(w);
        nus.push(nu);
    }
    Ok((ws, nus))
}

fn normal_from_slope(grid: &Grid, k: usize, om: &Vec2) -> (f64, Vec3) {
    let w = (1.0 + om[0] * om[0] + om[1] * om[1]).sqrt();
    let [e1, e2] = grid.frame(k);
    let z = grid.z(k);
    let mut nu = [0.0; 3];
    for i in 0..3 {
        nu[i] = (z[i] - om[0] * e1[i] - om[1] * e2[i]) / w;
    }
    (w, nu)
}

/// Pointwise geometry of the graph at one time.
#[derive(Clone, Debug)]
pub struct SurfaceState {
    pub dim: usize,
    pub v: Vec<f64>,
    /// Frame components of `∇v` and of the round-sphere Hessian of `v`.
    pub grad_v: Vec<Vec2>,
    pub hess_v: Vec<Mat2>,
    pub x: Vec<Vec3>,
    /// `x_{n+1} = y e^v`.
    pub height: Vec<f64>,
    pub w: Vec<f64>,
    pub nu_e: Vec<Vec3>,
    /// `ν^{n+1} = ⟨ν_E, e⟩`.
    pub nu_vertical: Vec<f64>,
    /// `e·∇v`, the vertical component of the ambient gradient of `v`.
    pub e_dot_grad_v: Vec<f64>,
    pub cosh_r: Vec<f64>,
    /// `⟨ν_E, x⟩_E = e^v / w`.
    pub support_e: Vec<f64>,
    /// `⟨ν_H, x⟩_H = 1 / (y w)`.
    pub support_h: Vec<f64>,
    pub metric_e: Vec<Mat2>,
    pub metric: Vec<Mat2>,
    pub metric_inv: Vec<Mat2>,
    pub second_form_e: Vec<Mat2>,
    pub second_form: Vec<Mat2>,
    pub kappa_e: Vec<Vec2>,
    pub kappa_h: Vec<Vec2>,
    pub mean_e: Vec<f64>,
    pub mean: Vec<f64>,
    pub norm_a2: Vec<f64>,
}

impl SurfaceState {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Smallest Euclidean support function; the graph condition needs it positive.
    pub fn min_support_e(&self) -> f64 {
        self.support_e.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_slope(&self) -> f64 {
        self.w.iter().copied().fold(0.0, f64::max)
    }

    /// Shape operator `g⁻¹a` at `node`.
    pub fn shape_operator(&self, node: usize) -> Mat2 {
        matmul(&self.metric_inv[node], &self.second_form[node], self.dim)
    }

    /// `Tr(A³)` with indices raised by the hyperbolic metric.
    pub fn trace_a3(&self, node: usize) -> f64 {
        let s = self.shape_operator(node);
        trace(&matmul(&matmul(&s, &s, self.dim), &s, self.dim), self.dim)
    }
}

/// All geometric observables of the graph `e^v z` over `grid`.
pub fn curvature(v: &[f64], grid: &Grid) -> Result<SurfaceState> {
    check_len(v, grid)?;
    let n = grid.dim();
    let len = grid.len();
    let mut st = SurfaceState {
        dim: n,
        v: v.to_vec(),
        grad_v: Vec::with_capacity(len),
        hess_v: Vec::with_capacity(len),
        x: Vec::with_capacity(len),
        height: Vec::with_capacity(len),
        w: Vec::with_capacity(len),
        nu_e: Vec::with_capacity(len),
        nu_vertical: Vec::with_capacity(len),
        e_dot_grad_v: Vec::with_capacity(len),
        cosh_r: Vec::with_capacity(len),
        support_e: Vec::with_capacity(len),
        support_h: Vec::with_capacity(len),
        metric_e: Vec::with_capacity(len),
        metric: Vec::with_capacity(len),
        metric_inv: Vec::with_capacity(len),
        second_form_e: Vec::with_capacity(len),
        second_form: Vec::with_capacity(len),
        kappa_e: Vec::with_capacity(len),
        kappa_h: Vec::with_capacity(len),
        mean_e: Vec::with_capacity(len),
        mean: Vec::with_capacity(len),
        norm_a2: Vec::with_capacity(len),
    };
    for k in 0..len {
        if !v[k].is_finite() {
            return Err(MmcfError::NonFinite { node: k });
        }
        let (om, hv) = grid.jet(v, k);
        let (w, nu) = normal_from_slope(grid, k, &om);
        let y = grid.y(k);
        let ev = v[k].exp();
        let dy = grid.grad_y(k);
        let ey = om[0] * dy[0] + om[1] * dy[1];
        let z = grid.z(k);
        let x = [ev * z[0], ev * z[1], ev * z[2]];
        let height = y * ev;
        let nu_v = (y - ey) / w;

        let mut base = ZERO2;
        for i in 0..n {
            for j in 0..n {
                base[i][j] = if i == j { 1.0 } else { 0.0 } + om[i] * om[j];
            }
        }
        let mut ge = ZERO2;
        let mut g = ZERO2;
        let mut ae = ZERO2;
        let mut a = ZERO2;
        for i in 0..n {
            for j in 0..n {
                ge[i][j] = ev * ev * base[i][j];
                g[i][j] = base[i][j] / (y * y);
                ae[i][j] = ev / w * (hv[i][j] - base[i][j]);
                a[i][j] = ae[i][j] / height + nu_v * ge[i][j] / (height * height);
            }
        }
        let ginv = inverse(&g, n).ok_or(MmcfError::DegenerateMetric { node: k })?;
        let geinv = inverse(&ge, n).ok_or(MmcfError::DegenerateMetric { node: k })?;
        if !ginv.iter().flatten().all(|c| c.is_finite()) {
            return Err(MmcfError::DegenerateMetric { node: k });
        }
        let shape_e = matmul(&geinv, &ae, n);
        let shape = matmul(&ginv, &a, n);
        let ke = real_eigenvalues(&shape_e, n);
        let mut kh = [0.0; 2];
        for i in 0..n {
            kh[i] = height * ke[i] + nu_v;
        }
        let mean = trace(&shape, n);
        let a2 = trace(&matmul(&shape, &shape, n), n);
        if !(mean.is_finite() && a2.is_finite()) {
            return Err(MmcfError::NonFinite { node: k });
        }

        st.grad_v.push(om);
        st.hess_v.push(hv);
        st.x.push(x);
        st.height.push(height);
        st.w.push(w);
        st.nu_e.push(nu);
        st.nu_vertical.push(nu_v);
        st.e_dot_grad_v.push(ey);
        st.cosh_r.push(norm3(&x) / height);
        st.support_e.push(ev / w);
        st.support_h.push(1.0 / (y * w));
        st.metric_e.push(ge);
        st.metric.push(g);
        st.metric_inv.push(ginv);
        st.second_form_e.push(ae);
        st.second_form.push(a);
        st.kappa_e.push(ke);
        st.kappa_h.push(kh);
        st.mean_e.push(trace(&shape_e, n));
        st.mean.push(mean);
        st.norm_a2.push(a2);
    }
    Ok(st)
}

/// Levi-Civita connection of the induced hyperbolic metric, stored as the
/// difference tensor `C^m_ij` against the round-sphere connection.
#[derive(Clone, Debug)]
pub struct SurfaceConnection {
    dim: usize,
    ginv: Vec<Mat2>,
    /// `diff[node][m][i][j] = C^m_ij`.
    diff: Vec<[[[f64; 2]; 2]; 2]>,
}

impl SurfaceConnection {
    pub fn new(state: &SurfaceState, grid: &Grid) -> Self {
        let n = state.dim;
        let mut diff = Vec::with_capacity(state.len());
        for k in 0..state.len() {
            let y = grid.y(k);
            let dy = grid.grad_y(k);
            let om = &state.grad_v[k];
            let hv = &state.hess_v[k];
            let g = &state.metric[k];
            // dg[l][i][j] = ∇_l g_ij
            let mut dg = [[[0.0; 2]; 2]; 2];
            for l in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        dg[l][i][j] = -2.0 * dy[l] / y * g[i][j]
                            + (hv[l][i] * om[j] + om[i] * hv[l][j]) / (y * y);
                    }
                }
            }
            let ginv = &state.metric_inv[k];
            let mut c = [[[0.0; 2]; 2]; 2];
            for m in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        c[m][i][j] = 0.5
                            * (0..n)
                                .map(|l| ginv[m][l] * (dg[i][j][l] + dg[j][i][l] - dg[l][i][j]))
                                .sum::<f64>();
                    }
                }
            }
            diff.push(c);
        }
        Self { dim: n, ginv: state.metric_inv.clone(), diff }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric_inverse(&self, node: usize) -> &Mat2 {
        &self.ginv[node]
    }

    pub fn difference_tensor(&self, node: usize) -> &[[[f64; 2]; 2]; 2] {
        &self.diff[node]
    }

    /// Hessian of a scalar with respect to the induced metric.
    pub fn hessian(&self, f: &[f64], grid: &Grid) -> Vec<Mat2> {
        let n = self.dim;
        (0..grid.len())
            .map(|k| {
                let (df, h) = grid.jet(f, k);
                let c = &self.diff[k];
                let mut out = ZERO2;
                for i in 0..n {
                    for j in 0..n {
                        out[i][j] = h[i][j] - (0..n).map(|m| c[m][i][j] * df[m]).sum::<f64>();
                    }
                }
                out
            })
            .collect()
    }

    /// Laplace–Beltrami operator of the induced metric on a scalar field.
    pub fn laplace_scalar(&self, f: &[f64], grid: &Grid) -> Vec<f64> {
        let n = self.dim;
        self.hessian(f, grid)
            .iter()
            .enumerate()
            .map(|(k, h)| contract(&self.ginv[k], h, n))
            .collect()
    }

    /// Covariant derivative of a covariant tensor field; the new index is
    /// placed first.
    pub fn covariant_derivative(&self, t: &TensorField, grid: &Grid) -> TensorField {
        let n = self.dim;
        let r = t.rank();
        let comps = t.components();
        let fields: Vec<Vec<f64>> = (0..comps).map(|c| t.component_field(c)).collect();
        let idx: Vec<Vec<usize>> = (0..comps).map(|c| t.multi_index(c)).collect();
        let odd = r % 2 == 1;
        let mut out = TensorField::zeros(n, r + 1, t.nodes());
        let mut j = vec![0usize; r];
        for node in 0..t.nodes() {
            let c_node = &self.diff[node];
            for k in 0..n {
                for c in 0..comps {
                    let mut val = grid.d1(&fields[c], node, k, odd);
                    for s in 0..r {
                        let i_s = idx[c][s];
                        let gam = grid.frame_connection(node, k, i_s);
                        for m in 0..n {
                            let coef = gam[m] + c_node[m][k][i_s];
                            if coef != 0.0 {
                                j.copy_from_slice(&idx[c]);
                                j[s] = m;
                                val -= coef * t.get(node, &j);
                            }
                        }
                    }
                    out.set_flat(node, k * comps + c, val);
                }
            }
        }
        out
    }

    /// Contraction of the first two indices with `g^{ij}`.
    pub fn trace_first_pair(&self, t: &TensorField) -> TensorField {
        assert!(t.rank() >= 2);
        let n = self.dim;
        let mut out = TensorField::zeros(n, t.rank() - 2, t.nodes());
        let rest = out.components();
        for node in 0..t.nodes() {
            let gi = &self.ginv[node];
            for c in 0..rest {
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        s += gi[i][j] * t.get_flat(node, (i * n + j) * rest + c);
                    }
                }
                out.set_flat(node, c, s);
            }
        }
        out
    }

    /// Rough Laplacian `g^{ij} ∇_i ∇_j T`.
    pub fn laplacian(&self, t: &TensorField, grid: &Grid) -> TensorField {
        let d = self.covariant_derivative(t, grid);
        let dd = self.covariant_derivative(&d, grid);
        self.trace_first_pair(&dd)
    }
}

/// Laplace–Beltrami operator of the induced hyperbolic metric.
pub fn surface_laplace_beltrami(f: &[f64], state: &SurfaceState, grid: &Grid) -> Result<Vec<f64>> {
    check_len(f, grid)?;
    if state.len() != grid.len() {
        return Err(MmcfError::SizeMismatch { expected: grid.len(), found: state.len() });
    }
    Ok(SurfaceConnection::new(state, grid).laplace_scalar(f, grid))
}

/// Value, Euclidean gradient and Euclidean Hessian of an ambient function.
pub type AmbientJet = (f64, Vec3, [[f64; 3]; 3]);

/// Laplace–Beltrami operator of the restriction of an ambient function,
/// written through Euclidean derivatives:
/// `x²(Δ_E f − ⟨D²f ν, ν⟩) − x((n−2)⟨Df, e⟩ + 2⟨Df, ν⟩⟨ν, e⟩) + H x ⟨Df, ν⟩`
/// with `x = x_{n+1}` and `ν = ν_E`.
pub fn ambient_laplacian(
    f: impl Fn(&Vec3) -> AmbientJet,
    state: &SurfaceState,
) -> Vec<f64> {
    let n = state.dim as f64;
    // Ambient axes: for n = 1 the middle axis is unused.
    let axes: &[usize] = if state.dim == 1 { &[0, 2] } else { &[0, 1, 2] };
    (0..state.len())
        .map(|k| {
            let (_, df, d2f) = f(&state.x[k]);
            let nu = &state.nu_e[k];
            let xh = state.height[k];
            let lap_e: f64 = axes.iter().map(|&i| d2f[i][i]).sum();
            let mut hnn = 0.0;
            for &i in axes {
                for &j in axes {
                    hnn += nu[i] * d2f[i][j] * nu[j];
                }
            }
            let df_nu = dot3(&df, nu);
            xh * xh * (lap_e - hnn) - xh * ((n - 2.0) * df[2] + 2.0 * df_nu * nu[2])
                + state.mean[k] * xh * df_nu
        })
        .collect()
}

fn check_len(f: &[f64], grid: &Grid) -> Result<()> {
    if f.len() != grid.len() {
        return Err(MmcfError::SizeMismatch { expected: grid.len(), found: f.len() });
    }
    Ok(())
}
