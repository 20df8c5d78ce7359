//! Sparse symmetric linear algebra for the finite-element systems.
//!
//! The default solver is an envelope (profile) Cholesky factorization on a
//! reverse Cuthill-McKee ordering; a Jacobi-preconditioned conjugate gradient
//! is used when the factorization breaks down or when requested.

use std::collections::VecDeque;

use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum SolveError {
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("conjugate gradient stalled after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Square sparse matrix in compressed sparse row form. Both triangles of a
/// symmetric matrix are stored.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Sums duplicate entries.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &(r, _, _) in triplets {
            counts[r + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut order: Vec<(usize, f64)> = vec![(0, 0.0); triplets.len()];
        let mut fill = counts.clone();
        for &(r, c, v) in triplets {
            order[fill[r]] = (c, v);
            fill[r] += 1;
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        for r in 0..n {
            let row = &mut order[counts[r]..counts[r + 1]];
            row.sort_by_key(|e| e.0);
            for &(c, v) in row.iter() {
                if cols.len() > row_ptr[r] && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[span.clone()].binary_search(&c) {
            Ok(k) => self.vals[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    pub fn scale(&mut self, s: f64) {
        self.vals.iter_mut().for_each(|v| *v *= s);
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                worst = worst.max((v - self.get(c, r)).abs());
            }
        }
        worst
    }

    /// Copy with row and column `p` replaced by the identity.
    pub fn pinned(&self, p: usize) -> CsrMatrix {
        let mut out = self.clone();
        for r in 0..self.n {
            for k in out.row_ptr[r]..out.row_ptr[r + 1] {
                let c = out.cols[k];
                if r == p || c == p {
                    out.vals[k] = if r == c { 1.0 } else { 0.0 };
                }
            }
        }
        out
    }
}

/// Reverse Cuthill-McKee ordering. `perm[new] = old`.
pub fn rcm_ordering(a: &CsrMatrix) -> Vec<usize> {
    let n = a.dim();
    let degree: Vec<usize> = (0..n).map(|r| a.row(r).count()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut nbrs = Vec::new();
    while order.len() < n {
        let seed = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| degree[i])
            .unwrap();
        let start = pseudo_peripheral(a, seed, &degree);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            nbrs.clear();
            nbrs.extend(a.row(v).map(|(c, _)| c).filter(|&c| !visited[c]));
            nbrs.sort_by_key(|&c| (degree[c], c));
            for &c in &nbrs {
                visited[c] = true;
                queue.push_back(c);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(a: &CsrMatrix, start: usize) -> Vec<usize> {
    let mut level = vec![usize::MAX; a.dim()];
    level[start] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        for (c, _) in a.row(v) {
            if level[c] == usize::MAX {
                level[c] = level[v] + 1;
                queue.push_back(c);
            }
        }
    }
    level
}

fn pseudo_peripheral(a: &CsrMatrix, seed: usize, degree: &[usize]) -> usize {
    let mut node = seed;
    let mut ecc = 0;
    for _ in 0..8 {
        let level = bfs_levels(a, node);
        let far = level.iter().filter(|&&l| l != usize::MAX).max().copied().unwrap_or(0);
        if far <= ecc {
            break;
        }
        ecc = far;
        node = (0..a.dim())
            .filter(|&i| level[i] == far)
            .min_by_key(|&i| degree[i])
            .unwrap();
    }
    node
}

/// Envelope Cholesky factor `P A Pᵀ = L Lᵀ`, stored row by row from the first
/// nonzero column to the diagonal.
#[derive(Clone, Debug)]
pub struct EnvelopeCholesky {
    perm: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self, SolveError> {
        let n = a.dim();
        let perm = rcm_ordering(a);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (new, &old) in perm.iter().enumerate() {
            for (c, _) in a.row(old) {
                let j = inv[c];
                if j < first[new] {
                    first[new] = j;
                }
            }
        }
        let mut start = Vec::with_capacity(n + 1);
        start.push(0);
        for i in 0..n {
            start.push(start[i] + (i - first[i] + 1));
        }
        let mut data = vec![0.0; start[n]];
        for (new, &old) in perm.iter().enumerate() {
            for (c, v) in a.row(old) {
                let j = inv[c];
                if j <= new {
                    data[start[new] + j - first[new]] = v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            let (done, rest) = data.split_at_mut(start[i]);
            let row_i = &mut rest[..i - fi + 1];
            for j in fi..i {
                let fj = first[j];
                let row_j = &done[start[j]..start[j] + (j - fj + 1)];
                let k0 = fi.max(fj);
                let dot: f64 = row_i[k0 - fi..j - fi]
                    .iter()
                    .zip(&row_j[k0 - fj..j - fj])
                    .map(|(x, y)| x * y)
                    .sum();
                row_i[j - fi] = (row_i[j - fi] - dot) / row_j[j - fj];
            }
            let sq: f64 = row_i[..i - fi].iter().map(|x| x * x).sum();
            let pivot = row_i[i - fi] - sq;
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(SolveError::NotPositiveDefinite { row: perm[i], pivot });
            }
            row_i[i - fi] = pivot.sqrt();
        }
        Ok(Self { perm, first, start, data })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Stored entries of the factor.
    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            let dot: f64 = row[..i - fi].iter().zip(&y[fi..i]).map(|(l, v)| l * v).sum();
            y[i] = (y[i] - dot) / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            y[i] /= row[i - fi];
            let xi = y[i];
            for (l, v) in row[..i - fi].iter().zip(&mut y[fi..i]) {
                *v -= l * xi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

/// Jacobi-preconditioned conjugate gradient for symmetric positive definite `a`.
pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, SolveError> {
    let n = a.dim();
    if b.len() != n {
        return Err(SolveError::Dimension { expected: n, got: b.len() });
    }
    let inv_diag: Vec<f64> = (0..n).map(|i| 1.0 / a.get(i, i)).collect();
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut res = 1.0;
    for it in 0..max_iter {
        let ap = a.mul_vec(&p);
        let alpha = rz / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = r.iter().map(|v| v * v).sum::<f64>().sqrt() / b_norm;
        if res <= rel_tol {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        if !res.is_finite() {
            return Err(SolveError::NoConvergence { iterations: it + 1, residual: res });
        }
    }
    Err(SolveError::NoConvergence { iterations: max_iter, residual: res })
}

/// Which backend a [`SpdSolver`] uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    #[default]
    Direct,
    Iterative,
}

/// Relative residual target of the iterative backend.
pub const CG_TOLERANCE: f64 = 1e-12;

/// A reusable solver for one symmetric positive definite matrix.
#[derive(Clone, Debug)]
pub enum SpdSolver {
    Direct(EnvelopeCholesky),
    Iterative(CsrMatrix),
}

impl SpdSolver {
    /// Factors `a` with the requested backend, falling back to conjugate
    /// gradients if the direct factorization fails.
    pub fn new(a: &CsrMatrix, kind: SolverKind) -> Self {
        match kind {
            SolverKind::Direct => match EnvelopeCholesky::factor(a) {
                Ok(f) => SpdSolver::Direct(f),
                Err(_) => SpdSolver::Iterative(a.clone()),
            },
            SolverKind::Iterative => SpdSolver::Iterative(a.clone()),
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, SolveError> {
        match self {
            SpdSolver::Direct(f) => Ok(f.solve(b)),
            SpdSolver::Iterative(a) => conjugate_gradient(a, b, CG_TOLERANCE, 10 * a.dim().max(100)),
        }
    }
}
