//! Small dense kernels shared by the coders and the dictionary updates.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// A column is treated as linearly dependent on the ones already accepted when
/// its orthogonal remainder is this small relative to its own norm.
pub const DEPENDENCE_TOL: f64 = 1e-10;

/// Least squares against a growing set of columns, one Gram-Schmidt step
/// (with re-orthogonalization) per added column.
///
/// Columns that are numerically dependent on the accepted set are dropped and
/// receive a zero coefficient.
#[derive(Debug, Clone)]
pub struct IncrementalQr {
    dim: usize,
    /// Orthonormal basis, column-major `dim × rank`.
    q: Vec<f64>,
    /// Upper-triangular factor, row-major `rank × rank` padded to `capacity`.
    r: Vec<f64>,
    capacity: usize,
    /// Positions (in insertion order) of accepted columns.
    accepted: Vec<usize>,
    inserted: usize,
    /// `Qᵀ y`
    qty: Vec<f64>,
    residual: Vec<f64>,
}

impl IncrementalQr {
    pub fn new(y: &[f64], capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self {
            dim: y.len(),
            q: Vec::with_capacity(y.len() * capacity),
            r: vec![0.0; capacity * capacity],
            capacity,
            accepted: Vec::with_capacity(capacity),
            inserted: 0,
            qty: Vec::with_capacity(capacity),
            residual: y.to_vec(),
        }
    }

    pub fn rank(&self) -> usize {
        self.accepted.len()
    }

    /// Adds a column; returns `false` if it was dropped as dependent.
    pub fn push(&mut self, col: &[f64]) -> bool {
        debug_assert_eq!(col.len(), self.dim);
        let position = self.inserted;
        self.inserted += 1;
        let k = self.rank();
        if k == self.capacity || k == self.dim {
            return false;
        }
        let norm0 = dot(col, col).sqrt();
        if norm0 == 0.0 {
            return false;
        }
        let mut v = col.to_vec();
        let mut coeffs = vec![0.0; k];
        for _ in 0..2 {
            for (j, c) in coeffs.iter_mut().enumerate() {
                let qj = &self.q[j * self.dim..(j + 1) * self.dim];
                let h = dot(qj, &v);
                axpy(-h, qj, &mut v);
                *c += h;
            }
        }
        let rem = dot(&v, &v).sqrt();
        if rem <= DEPENDENCE_TOL * norm0 {
            return false;
        }
        v.iter_mut().for_each(|x| *x /= rem);
        for (j, c) in coeffs.into_iter().enumerate() {
            self.r[j * self.capacity + k] = c;
        }
        self.r[k * self.capacity + k] = rem;
        let proj = dot(&v, &self.residual);
        axpy(-proj, &v, &mut self.residual);
        self.qty.push(proj);
        self.q.extend_from_slice(&v);
        self.accepted.push(position);
        true
    }

    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    /// Entry `(i, k)` of the triangular factor, `i <= k < rank`.
    pub fn r(&self, i: usize, k: usize) -> f64 {
        self.r[i * self.capacity + k]
    }

    /// `qᵢᵀ y` for every accepted basis vector.
    pub fn projections(&self) -> &[f64] {
        &self.qty
    }

    /// Coefficients for every inserted column, in insertion order.
    pub fn coefficients(&self) -> Vec<f64> {
        let k = self.rank();
        let mut x = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = self.qty[i];
            for j in i + 1..k {
                s -= self.r[i * self.capacity + j] * x[j];
            }
            x[i] = s / self.r[i * self.capacity + i];
        }
        let mut out = vec![0.0; self.inserted];
        for (pos, v) in self.accepted.iter().zip(x) {
            out[*pos] = v;
        }
        out
    }
}

/// Four independent partial sums so the compiler can vectorize.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Flips the sign of `v` so its largest-magnitude entry (first on ties) is positive.
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|x| *x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Top-`k` left singular vectors of `e` and the matching singular values.
///
/// Computed from the eigen-decomposition of `e eᵀ`, which is `m × m` and
/// therefore cheap for the tall-and-wide residual matrices that show up in
/// block updates. Each vector's sign is fixed by [`fix_sign`].
pub fn top_left_singular(e: &DMatrix<f64>, k: usize) -> (DMatrix<f64>, Vec<f64>) {
    let m = e.nrows();
    assert!(k <= m, "cannot take {k} singular vectors in dimension {m}");
    let gram = e * e.transpose();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..m).collect();
    // stable sort keeps index order among equal eigenvalues
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut u = DMatrix::zeros(m, k);
    let mut sigma = Vec::with_capacity(k);
    for (dst, &src) in order.iter().take(k).enumerate() {
        let mut col: Vec<f64> = eig.eigenvectors.column(src).iter().copied().collect();
        fix_sign(&mut col);
        u.set_column(dst, &DVector::from_vec(col));
        sigma.push(eig.eigenvalues[src].max(0.0).sqrt());
    }
    (u, sigma)
}

/// Orthonormalizes the columns of `vectors` in order, skipping dependent ones.
pub fn orthonormal_columns(vectors: &[Vec<f64>], want: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(want);
    for v in vectors {
        if basis.len() == want {
            break;
        }
        let norm0 = dot(v, v).sqrt();
        if norm0 == 0.0 {
            continue;
        }
        let mut w = v.clone();
        for _ in 0..2 {
            for b in &basis {
                let h = dot(b, &w);
                axpy(-h, b, &mut w);
            }
        }
        let rem = dot(&w, &w).sqrt();
        if rem > 1e-8 * norm0 {
            w.iter_mut().for_each(|x| *x /= rem);
            basis.push(w);
        }
    }
    basis
}
