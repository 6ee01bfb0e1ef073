//! Dense and sparse kernels used by feature construction and PCA export.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Row-compressed sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Builds from `(row, col, value)` triplets; repeated coordinates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted = triplets.to_vec();
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut offsets = vec![0; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            indices.push(c);
            values.push(v);
            offsets[r + 1] += 1;
        }
        for r in 0..rows {
            offsets[r + 1] += offsets[r];
        }
        Csr {
            rows,
            cols,
            offsets,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for r in 0..self.rows {
            for k in self.offsets[r]..self.offsets[r + 1] {
                out[[r, self.indices[k]]] += self.values[k];
            }
        }
        out
    }

    /// `self · x`
    pub fn matmul(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.cols);
        let mut out = Array2::zeros((self.rows, x.ncols()));
        for r in 0..self.rows {
            let mut row = out.row_mut(r);
            for k in self.offsets[r]..self.offsets[r + 1] {
                row.scaled_add(self.values[k], &x.row(self.indices[k]));
            }
        }
        out
    }

    /// `selfᵀ · x`
    pub fn t_matmul(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.rows);
        let mut out = Array2::zeros((self.cols, x.ncols()));
        for r in 0..self.rows {
            let src = x.row(r);
            for k in self.offsets[r]..self.offsets[r + 1] {
                out.row_mut(self.indices[k])
                    .scaled_add(self.values[k], &src);
            }
        }
        out
    }
}

/// Orthonormalizes the columns of `m` in place (modified Gram-Schmidt, two
/// passes). Columns that vanish against the earlier ones are zeroed.
pub fn orthonormalize_columns(m: &mut Array2<f64>) {
    let cols = m.ncols();
    for j in 0..cols {
        let original = m.column(j).dot(&m.column(j)).sqrt();
        for _ in 0..2 {
            for i in 0..j {
                let proj = m.column(i).dot(&m.column(j));
                let qi = m.column(i).to_owned();
                m.column_mut(j).scaled_add(-proj, &qi);
            }
        }
        let norm = m.column(j).dot(&m.column(j)).sqrt();
        if norm <= 1e-13 * original.max(f64::MIN_POSITIVE) || norm == 0.0 {
            m.column_mut(j).fill(0.0);
        } else {
            m.column_mut(j).mapv_inplace(|x| x / norm);
        }
    }
}

/// Thin singular value decomposition `m = u · diag(sigma) · vᵀ`, singular
/// values descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Array2<f64>,
    pub sigma: Array1<f64>,
    pub v: Array2<f64>,
}

/// One-sided (Hestenes) Jacobi SVD of an `m × n` matrix with `m ≥ n`.
pub fn jacobi_svd(m: &ArrayView2<f64>) -> Svd {
    let (rows, n) = m.dim();
    assert!(rows >= n, "jacobi_svd expects a tall matrix");
    let mut work = m.to_owned();
    let mut v = Array2::<f64>::eye(n);
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let cp = work.column(p);
                    let cq = work.column(q);
                    (cp.dot(&cp), cq.dot(&cq), cp.dot(&cq))
                };
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = c * t;
                rotate_columns(&mut work, p, q, c, sn);
                rotate_columns(&mut v, p, q, c, sn);
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n)
        .map(|j| work.column(j).dot(&work.column(j)).sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let mut u = Array2::zeros((rows, n));
    let mut v_sorted = Array2::zeros((n, n));
    let mut sigma = Array1::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        sigma[dst] = norms[src];
        if norms[src] > 0.0 {
            u.column_mut(dst)
                .assign(&work.column(src).mapv(|x| x / norms[src]));
        }
        v_sorted.column_mut(dst).assign(&v.column(src));
    }
    Svd {
        u,
        sigma,
        v: v_sorted,
    }
}

fn rotate_columns(m: &mut Array2<f64>, p: usize, q: usize, c: f64, s: f64) {
    for r in 0..m.nrows() {
        let a = m[[r, p]];
        let b = m[[r, q]];
        m[[r, p]] = c * a - s * b;
        m[[r, q]] = s * a + c * b;
    }
}

/// Flips each column so its largest-magnitude entry is positive.
pub fn fix_column_signs(m: &mut Array2<f64>) {
    for mut col in m.axis_iter_mut(Axis(1)) {
        let mut best = 0.0f64;
        for &x in col.iter() {
            if x.abs() > best.abs() {
                best = x;
            }
        }
        if best < 0.0 {
            col.mapv_inplace(|x| -x);
        }
    }
}

/// Rank-`k` approximation of a square sparse matrix by randomized subspace
/// iteration with a Gaussian start block of `k + oversample` columns.
pub fn randomized_svd(a: &Csr, k: usize, oversample: usize, iters: usize, seed: u64) -> Svd {
    let n = a.rows();
    let block = (k + oversample).min(n).min(a.cols()).max(k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = Array2::from_shape_simple_fn((a.cols(), block), || StandardNormal.sample(&mut rng));
    let mut q = a.matmul(&omega.view());
    orthonormalize_columns(&mut q);
    for _ in 0..iters {
        let mut z = a.t_matmul(&q.view());
        orthonormalize_columns(&mut z);
        q = a.matmul(&z.view());
        orthonormalize_columns(&mut q);
    }
    // Bᵀ = Aᵀ Q; if Bᵀ = U' Σ Wᵀ then A ≈ (Q W) Σ U'ᵀ.
    let bt = a.t_matmul(&q.view());
    let inner = jacobi_svd(&bt.view());
    let u = q.dot(&inner.v);
    Svd {
        u: u.slice(s![.., ..k]).to_owned(),
        sigma: inner.sigma.slice(s![..k]).to_owned(),
        v: inner.u.slice(s![.., ..k]).to_owned(),
    }
}
