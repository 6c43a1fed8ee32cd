//! Small fixed-size linear algebra and tensor fields in orthonormal frames.
//!
//! Every node of a [`Grid`](crate::grid::Grid) carries an orthonormal frame of
//! the round sphere (`E_θ`, `E_φ` for n = 2, `E_s` for n = 1). Tangent vectors
//! and tensors are stored by their components in that frame; for n = 1 only the
//! first slot is meaningful and the remaining entries stay zero.

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];
pub type Vec3 = [f64; 3];

pub const ZERO2: Mat2 = [[0.0; 2]; 2];

#[inline]
pub fn dot3(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm3(a: &Vec3) -> f64 {
    dot3(a, a).sqrt()
}

#[inline]
pub fn axpy3(alpha: f64, x: &Vec3, y: &Vec3) -> Vec3 {
    [alpha * x[0] + y[0], alpha * x[1] + y[1], alpha * x[2] + y[2]]
}

#[inline]
pub fn scale3(alpha: f64, x: &Vec3) -> Vec3 {
    [alpha * x[0], alpha * x[1], alpha * x[2]]
}

/// Inverse of a symmetric matrix restricted to its leading `dim × dim` block.
pub fn inverse(m: &Mat2, dim: usize) -> Option<Mat2> {
    if dim == 1 {
        if m[0][0] == 0.0 {
            return None;
        }
        let mut out = ZERO2;
        out[0][0] = 1.0 / m[0][0];
        return Some(out);
    }
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some([
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ])
}

/// `a · b` on the leading block.
pub fn matmul(a: &Mat2, b: &Mat2, dim: usize) -> Mat2 {
    let mut out = ZERO2;
    for i in 0..dim {
        for j in 0..dim {
            out[i][j] = (0..dim).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn trace(a: &Mat2, dim: usize) -> f64 {
    (0..dim).map(|i| a[i][i]).sum()
}

/// Full contraction `Σ a_ij b_ij`.
pub fn contract(a: &Mat2, b: &Mat2, dim: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            s += a[i][j] * b[i][j];
        }
    }
    s
}

/// Eigenvalues (ascending) of a 2×2 matrix known to have a real spectrum,
/// such as `g⁻¹a` for symmetric `a` and positive definite `g`.
pub fn real_eigenvalues(m: &Mat2, dim: usize) -> Vec2 {
    if dim == 1 {
        return [m[0][0], 0.0];
    }
    let half_tr = 0.5 * (m[0][0] + m[1][1]);
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = (half_tr * half_tr - det).max(0.0).sqrt();
    [half_tr - disc, half_tr + disc]
}

/// A tensor field of covariant rank `rank` over the grid nodes, stored by
/// frame components in row-major multi-index order.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorField {
    dim: usize,
    rank: usize,
    data: Vec<f64>,
}

impl TensorField {
    pub fn zeros(dim: usize, rank: usize, nodes: usize) -> Self {
        let comps = dim.pow(rank as u32);
        Self { dim, rank, data: vec![0.0; comps * nodes] }
    }

    pub fn from_scalars(dim: usize, values: &[f64]) -> Self {
        Self { dim, rank: 0, data: values.to_vec() }
    }

    pub fn from_vectors(dim: usize, values: &[Vec2]) -> Self {
        let mut t = Self::zeros(dim, 1, values.len());
        for (node, v) in values.iter().enumerate() {
            for i in 0..dim {
                t.set(node, &[i], v[i]);
            }
        }
        t
    }

    pub fn from_matrices(dim: usize, values: &[Mat2]) -> Self {
        let mut t = Self::zeros(dim, 2, values.len());
        for (node, m) in values.iter().enumerate() {
            for i in 0..dim {
                for j in 0..dim {
                    t.set(node, &[i, j], m[i][j]);
                }
            }
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn components(&self) -> usize {
        self.dim.pow(self.rank as u32)
    }

    pub fn nodes(&self) -> usize {
        self.data.len() / self.components()
    }

    #[inline]
    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.dim + i)
    }

    /// Multi-index of flat component `c`.
    pub fn multi_index(&self, mut c: usize) -> Vec<usize> {
        let mut idx = vec![0; self.rank];
        for slot in (0..self.rank).rev() {
            idx[slot] = c % self.dim;
            c /= self.dim;
        }
        idx
    }

    #[inline]
    pub fn get(&self, node: usize, idx: &[usize]) -> f64 {
        self.data[node * self.components() + self.flat_index(idx)]
    }

    #[inline]
    pub fn get_flat(&self, node: usize, c: usize) -> f64 {
        self.data[node * self.components() + c]
    }

    #[inline]
    pub fn set(&mut self, node: usize, idx: &[usize], value: f64) {
        let k = node * self.components() + self.flat_index(idx);
        self.data[k] = value;
    }

    #[inline]
    pub fn set_flat(&mut self, node: usize, c: usize, value: f64) {
        let comps = self.components();
        self.data[node * comps + c] = value;
    }

    /// One component as a scalar field over all nodes.
    pub fn component_field(&self, c: usize) -> Vec<f64> {
        let comps = self.components();
        self.data.iter().skip(c).step_by(comps).copied().collect()
    }

    pub fn node_slice(&self, node: usize) -> &[f64] {
        let comps = self.components();
        &self.data[node * comps..(node + 1) * comps]
    }

    pub fn as_matrix(&self, node: usize) -> Mat2 {
        assert_eq!(self.rank, 2);
        let mut m = ZERO2;
        for i in 0..self.dim {
            for j in 0..self.dim {
                m[i][j] = self.get(node, &[i, j]);
            }
        }
        m
    }

    pub fn as_vector(&self, node: usize) -> Vec2 {
        assert_eq!(self.rank, 1);
        let mut v = [0.0; 2];
        for (i, slot) in v.iter_mut().enumerate().take(self.dim) {
            *slot = self.get(node, &[i]);
        }
        v
    }

    /// Squared norm at `node` with respect to the inverse metric `ginv`
    /// (all indices raised).
    pub fn norm_sq(&self, node: usize, ginv: &Mat2) -> f64 {
        let comps = self.components();
        let mut total = 0.0;
        for a in 0..comps {
            let ia = self.multi_index(a);
            let ta = self.get_flat(node, a);
            if ta == 0.0 {
                continue;
            }
            for b in 0..comps {
                let ib = self.multi_index(b);
                let w: f64 = ia.iter().zip(&ib).map(|(&i, &j)| ginv[i][j]).product();
                total += w * ta * self.get_flat(node, b);
            }
        }
        total
    }
}
