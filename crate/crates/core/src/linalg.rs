//! Small dense and sparse linear algebra kernels.
//!
//! Everything here is generic over [`Real`] so the quadrature, flow and FEM
//! code can run in either precision.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "matrix data has {} entries, expected {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// `y = self * x`.
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.cols);
        self.iter_rows()
            .map(|r| r.iter().zip(x).fold(T::zero(), |acc, (&a, &b)| acc + a * b))
            .collect()
    }

    /// Select a subset of rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: idx.len(), cols: self.cols, data }
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Eigen-decomposition of a symmetric tridiagonal matrix by implicit QL.
///
/// `diag` has length n, `off` has length n-1 (`off[i]` couples rows i and i+1).
/// Returns eigenvalues and the matrix of eigenvectors stored column-wise.
pub fn symmetric_tridiagonal_eigen<T: Real>(diag: &[T], off: &[T]) -> Result<(Vec<T>, Matrix<T>)> {
    let n = diag.len();
    if n == 0 || off.len() + 1 != n {
        return Err(Error::InvalidArgument("tridiagonal shape mismatch".into()));
    }
    let mut d = diag.to_vec();
    let mut e = off.to_vec();
    e.push(T::zero());
    let mut z = Matrix::identity(n);
    let two = T::of(2.0);

    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= T::epsilon() * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 100 {
                return Err(Error::Internal("tridiagonal QL did not converge".into()));
            }
            let mut g = (d[l + 1] - d[l]) / (two * e[l]);
            let mut r = g.hypot(T::one());
            g = d[m] - d[l] + e[l] / (g + if g >= T::zero() { r.abs() } else { -r.abs() });
            let (mut s, mut c, mut p) = (T::one(), T::one(), T::zero());
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == T::zero() {
                    d[i + 1] -= p;
                    e[m] = T::zero();
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + two * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    let zf = z[(k, i + 1)];
                    z[(k, i + 1)] = s * z[(k, i)] + c * zf;
                    z[(k, i)] = c * z[(k, i)] - s * zf;
                }
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = T::zero();
        }
    }
    Ok((d, z))
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Build from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_by_key(|&(i, j, _)| (i, j));
        let mut indptr = vec![0; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            debug_assert!(i < rows && j < cols);
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(j);
                values.push(v);
                indptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        Self { rows, cols, indptr, indices, values }
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

    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.row_entries(i).find(|&(c, _)| c == j).map_or(T::zero(), |(_, v)| v)
    }

    /// `y = self * x`.
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        (0..self.rows).map(|i| self.row_entries(i).fold(T::zero(), |acc, (j, v)| acc + v * x[j])).collect()
    }

    /// `y = self^T * x`.
    pub fn matvec_transpose(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate().take(self.rows) {
            for (j, v) in self.row_entries(i) {
                y[j] += v * xi;
            }
        }
        y
    }

    /// Scale every stored value.
    pub fn scaled(&self, s: T) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }
}

/// Reverse Cuthill-McKee ordering of an undirected graph.
///
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let degree: Vec<usize> = adjacency.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let bfs_levels = |start: usize| -> (usize, usize) {
        // (eccentricity, a node in the last level with minimum degree)
        let mut dist = vec![usize::MAX; n];
        dist[start] = 0;
        let mut q = VecDeque::from([start]);
        let mut far = start;
        while let Some(u) = q.pop_front() {
            if dist[u] > dist[far] || (dist[u] == dist[far] && degree[u] < degree[far]) {
                far = u;
            }
            for &v in &adjacency[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                }
            }
        }
        (dist[far], far)
    };

    while order.len() < n {
        let seed = (0..n).filter(|&i| !visited[i]).min_by_key(|&i| degree[i]).unwrap();
        // pseudo-peripheral start node
        let mut start = seed;
        let (mut ecc, mut far) = bfs_levels(start);
        for _ in 0..8 {
            let (e2, f2) = bfs_levels(far);
            if e2 <= ecc {
                break;
            }
            start = far;
            ecc = e2;
            far = f2;
        }
        visited[start] = true;
        let mut q = VecDeque::from([start]);
        while let Some(u) = q.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = adjacency[u].iter().copied().filter(|&v| !visited[v]).collect();
            nbrs.sort_by_key(|&v| (degree[v], v));
            for v in nbrs {
                visited[v] = true;
                q.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

/// Symmetric positive-definite matrix in skyline (variable band) storage,
/// factorized in place by Cholesky.
#[derive(Debug, Clone)]
pub struct SkylineCholesky<T> {
    n: usize,
    first: Vec<usize>,
    offset: Vec<usize>,
    values: Vec<T>,
    /// `perm[new] = old`
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
}

impl<T: Real> SkylineCholesky<T> {
    /// Assemble from triplets listing the full symmetric matrix (both `(i, j)`
    /// and `(j, i)`; duplicates are summed) and factorize.
    pub fn factor(n: usize, triplets: &[(usize, usize, T)], perm: Vec<usize>) -> Result<Self> {
        if perm.len() != n {
            return Err(Error::InvalidArgument("permutation length mismatch".into()));
        }
        let mut inv_perm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv_perm[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for &(i, j, _) in triplets {
            let (a, b) = (inv_perm[i], inv_perm[j]);
            if a > b {
                first[a] = first[a].min(b);
            }
        }
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for i in 0..n {
            offset.push(offset[i] + (i - first[i] + 1));
        }
        let mut values = vec![T::zero(); offset[n]];
        for &(i, j, v) in triplets {
            let (a, b) = (inv_perm[i], inv_perm[j]);
            if a >= b {
                values[offset[a] + b - first[a]] += v;
            }
        }

        let mut f = Self { n, first, offset, values, perm, inv_perm };
        f.factor_in_place()?;
        Ok(f)
    }

    fn factor_in_place(&mut self) -> Result<()> {
        let n = self.n;
        for i in 0..n {
            let fi = self.first[i];
            let oi = self.offset[i];
            for j in fi..i {
                let fj = self.first[j];
                let oj = self.offset[j];
                let k0 = fi.max(fj);
                let mut s = self.values[oi + j - fi];
                let ri = &self.values[oi + k0 - fi..oi + j - fi];
                let rj = &self.values[oj + k0 - fj..oj + j - fj];
                for (&a, &b) in ri.iter().zip(rj) {
                    s -= a * b;
                }
                let djj = self.values[oj + j - fj];
                self.values[oi + j - fi] = s / djj;
            }
            let mut s = self.values[oi + i - fi];
            for &a in &self.values[oi..oi + i - fi] {
                s -= a * a;
            }
            if !(s > T::zero()) || !s.is_finite() {
                return Err(Error::Internal(format!("matrix not positive definite at pivot {i}")));
            }
            self.values[oi + i - fi] = s.sqrt();
        }
        Ok(())
    }

    /// Number of stored entries of the factor.
    pub fn profile(&self) -> usize {
        self.values.len()
    }

    pub fn solve(&self, rhs: &[T]) -> Vec<T> {
        let n = self.n;
        let mut y: Vec<T> = (0..n).map(|new| rhs[self.perm[new]]).collect();
        // L y = b
        for i in 0..n {
            let fi = self.first[i];
            let oi = self.offset[i];
            let mut s = y[i];
            for (k, &l) in (fi..i).zip(&self.values[oi..oi + i - fi]) {
                s -= l * y[k];
            }
            y[i] = s / self.values[oi + i - fi];
        }
        // L^T x = y
        for i in (0..n).rev() {
            let fi = self.first[i];
            let oi = self.offset[i];
            y[i] /= self.values[oi + i - fi];
            let xi = y[i];
            for (k, &l) in (fi..i).zip(&self.values[oi..oi + i - fi]) {
                y[k] -= l * xi;
            }
        }
        (0..n).map(|old| y[self.inv_perm[old]]).collect()
    }
}

/// Inverse of a symmetric positive-definite 3x3 matrix.
pub fn invert_3x3<T: Real>(a: &[[T; 3]; 3]) -> Result<[[T; 3]; 3]> {
    let c00 = a[1][1] * a[2][2] - a[1][2] * a[2][1];
    let c01 = a[1][2] * a[2][0] - a[1][0] * a[2][2];
    let c02 = a[1][0] * a[2][1] - a[1][1] * a[2][0];
    let det = a[0][0] * c00 + a[0][1] * c01 + a[0][2] * c02;
    if det == T::zero() || !det.is_finite() {
        return Err(Error::Internal("singular 3x3 element matrix".into()));
    }
    let inv = T::one() / det;
    Ok([
        [c00 * inv, (a[0][2] * a[2][1] - a[0][1] * a[2][2]) * inv, (a[0][1] * a[1][2] - a[0][2] * a[1][1]) * inv],
        [c01 * inv, (a[0][0] * a[2][2] - a[0][2] * a[2][0]) * inv, (a[0][2] * a[1][0] - a[0][0] * a[1][2]) * inv],
        [c02 * inv, (a[0][1] * a[2][0] - a[0][0] * a[2][1]) * inv, (a[0][0] * a[1][1] - a[0][1] * a[1][0]) * inv],
    ])
}

pub fn norm2<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}
