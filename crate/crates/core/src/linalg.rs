//! Sparse storage and the direct solver used by the time stepper.
//!
//! Every matrix assembled on a mesh shares the node-adjacency pattern of that
//! mesh, so the mass, stiffness and damping matrices are stored as CSR with a
//! common pattern and can be combined entry-wise. Systems are solved with a
//! profile (skyline) Cholesky factorization after reverse Cuthill-McKee
//! reordering.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Sparsity pattern shared by all matrices assembled on one mesh.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl Pattern {
    /// Builds a symmetric pattern from undirected edges; the diagonal is
    /// always present.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut rows: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for (i, j) in edges {
            if i != j {
                rows[i].push(j);
                rows[j].push(i);
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            col_idx.extend_from_slice(&r);
            row_ptr.push(col_idx.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Position of entry `(i, j)` in the value array.
    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.row(i).binary_search(&j).ok().map(|k| start + k)
    }
}

/// CSR matrix over a shared [`Pattern`].
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pattern: Arc<Pattern>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(pattern: Arc<Pattern>) -> Self {
        let nnz = pattern.nnz();
        Self {
            pattern,
            values: vec![0.0; nnz],
        }
    }

    pub fn pattern(&self) -> &Arc<Pattern> {
        &self.pattern
    }

    pub fn dim(&self) -> usize {
        self.pattern.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Adds `v` to entry `(i, j)`, which must be in the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self
            .pattern
            .slot(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) is not in the sparsity pattern"));
        self.values[s] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.slot(i, j).map_or(0.0, |s| self.values[s])
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let p = &*self.pattern;
        for (i, yi) in y.iter_mut().enumerate().take(p.n) {
            let (s, e) = (p.row_ptr[i], p.row_ptr[i + 1]);
            let mut acc = 0.0;
            for k in s..e {
                acc += self.values[k] * x[p.col_idx[k]];
            }
            *yi = acc;
        }
    }

    /// `y += alpha * A x`.
    pub fn matvec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        let p = &*self.pattern;
        for (i, yi) in y.iter_mut().enumerate().take(p.n) {
            let (s, e) = (p.row_ptr[i], p.row_ptr[i + 1]);
            let mut acc = 0.0;
            for k in s..e {
                acc += self.values[k] * x[p.col_idx[k]];
            }
            *yi += alpha * acc;
        }
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let p = &*self.pattern;
        let mut total = 0.0;
        for i in 0..p.n {
            let (s, e) = (p.row_ptr[i], p.row_ptr[i + 1]);
            let mut acc = 0.0;
            for k in s..e {
                acc += self.values[k] * y[p.col_idx[k]];
            }
            total += x[i] * acc;
        }
        total
    }

    /// `self + alpha * other`; both must share the same pattern.
    pub fn add_scaled(&self, alpha: f64, other: &CsrMatrix) -> CsrMatrix {
        assert!(
            Arc::ptr_eq(&self.pattern, &other.pattern) || self.pattern == other.pattern,
            "matrices must share a sparsity pattern"
        );
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + alpha * b)
            .collect();
        CsrMatrix {
            pattern: self.pattern.clone(),
            values,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let p = &*self.pattern;
        (0..p.n)
            .map(|i| self.values[p.row_ptr[i]..p.row_ptr[i + 1]].iter().sum())
            .collect()
    }

    pub fn total_sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Largest `|A_ij - A_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let p = &*self.pattern;
        let mut worst: f64 = 0.0;
        for i in 0..p.n {
            for (k, &j) in p.row(i).iter().enumerate() {
                let v = self.values[p.row_ptr[i] + k];
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Iterator over `(row, col, value)` for stored entries.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let p = &*self.pattern;
        (0..p.n).flat_map(move |i| {
            (p.row_ptr[i]..p.row_ptr[i + 1]).map(move |k| (i, p.col_idx[k], self.values[k]))
        })
    }

    pub(crate) fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1]
    }

    pub(crate) fn col_at(&self, k: usize) -> usize {
        self.pattern.col_idx[k]
    }
}

/// Reverse Cuthill-McKee ordering of the pattern graph. Returns `perm` with
/// `perm[new] = old`.
pub fn reverse_cuthill_mckee(pattern: &Pattern) -> Vec<usize> {
    let n = pattern.n;
    let degree: Vec<usize> = (0..n).map(|i| pattern.row(i).len() - 1).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));

    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let start = pseudo_peripheral(pattern, seed, &degree);
        let mut queue = VecDeque::new();
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = pattern
                .row(v)
                .iter()
                .copied()
                .filter(|&w| w != v && !visited[w])
                .collect();
            nbrs.sort_by_key(|&w| (degree[w], w));
            for w in nbrs {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(pattern: &Pattern, start: usize) -> (Vec<usize>, usize) {
    let mut level = vec![usize::MAX; pattern.n];
    let mut queue = VecDeque::new();
    level[start] = 0;
    queue.push_back(start);
    let mut last = start;
    while let Some(v) = queue.pop_front() {
        last = v;
        for &w in pattern.row(v) {
            if level[w] == usize::MAX {
                level[w] = level[v] + 1;
                queue.push_back(w);
            }
        }
    }
    let depth = level[last];
    (level, depth)
}

fn pseudo_peripheral(pattern: &Pattern, seed: usize, degree: &[usize]) -> usize {
    let mut current = seed;
    let (mut level, mut depth) = bfs_levels(pattern, current);
    for _ in 0..8 {
        let candidate = (0..pattern.n)
            .filter(|&i| level[i] == depth)
            .min_by_key(|&i| (degree[i], i))
            .unwrap_or(current);
        let (l2, d2) = bfs_levels(pattern, candidate);
        if d2 > depth {
            current = candidate;
            level = l2;
            depth = d2;
        } else {
            break;
        }
    }
    current
}

/// Symmetric positive-definite factorization `P A P^T = L L^T` in profile
/// storage.
#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    n: usize,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    /// First stored column of each (permuted) row.
    first: Vec<usize>,
    /// Offset of each row in `data`; row `i` stores columns `first[i]..=i`.
    offset: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let perm = reverse_cuthill_mckee(a.pattern());
        Self::factor_with_ordering(a, perm)
    }

    pub fn factor_with_ordering(a: &CsrMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = a.dim();
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for old_i in 0..n {
            let i = inv[old_i];
            for k in a.row_range(old_i) {
                let j = inv[a.col_at(k)];
                if j < first[i] {
                    first[i] = j;
                }
            }
        }
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for i in 0..n {
            let len = i - first[i] + 1;
            offset.push(offset[i] + len);
        }
        let mut data = vec![0.0; offset[n]];
        for old_i in 0..n {
            let i = inv[old_i];
            for k in a.row_range(old_i) {
                let j = inv[a.col_at(k)];
                if j <= i {
                    data[offset[i] + j - first[i]] += a.values()[k];
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            let row_i = offset[i];
            for j in fi..i {
                let fj = first[j];
                let start = fi.max(fj);
                let row_j = offset[j];
                let mut dot = 0.0;
                let li = &data[row_i + start - fi..row_i + j - fi];
                let lj = &data[row_j + start - fj..row_j + j - fj];
                for (x, y) in li.iter().zip(lj) {
                    dot += x * y;
                }
                let djj = data[row_j + j - fj];
                let idx = row_i + j - fi;
                data[idx] = (data[idx] - dot) / djj;
            }
            let diag_idx = row_i + i - fi;
            let sq: f64 = data[row_i..diag_idx].iter().map(|v| v * v).sum();
            let d = data[diag_idx] - sq;
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::LinearAlgebra(format!(
                    "matrix is not positive definite (pivot {d:e} at row {})",
                    perm[i]
                )));
            }
            data[diag_idx] = d.sqrt();
        }
        Ok(Self {
            n,
            perm,
            first,
            offset,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored factor entries.
    pub fn profile_size(&self) -> usize {
        self.data.len()
    }

    /// Solves `A x = b`. `work` must have length `n`.
    pub fn solve_into(&self, b: &[f64], x: &mut [f64], work: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            work[i] = b[self.perm[i]];
        }
        // Forward: L y = Pb.
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.data[self.offset[i]..self.offset[i + 1]];
            let mut acc = work[i];
            for (k, &l) in row[..i - fi].iter().enumerate() {
                acc -= l * work[fi + k];
            }
            work[i] = acc / row[i - fi];
        }
        // Backward: L^T z = y, column sweep.
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.offset[i]..self.offset[i + 1]];
            let zi = work[i] / row[i - fi];
            work[i] = zi;
            for (k, &l) in row[..i - fi].iter().enumerate() {
                work[fi + k] -= l * zi;
            }
        }
        for i in 0..n {
            x[self.perm[i]] = work[i];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        let mut work = vec![0.0; self.n];
        self.solve_into(b, &mut x, &mut work);
        x
    }
}
