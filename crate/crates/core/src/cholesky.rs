//! Sparse Cholesky factorization of symmetric positive definite matrices.
//!
//! Up-looking left factorization on an elimination tree, preceded by a
//! reverse Cuthill-McKee ordering. The ordering only depends on the sparsity
//! pattern and breaks ties by vertex index, so a fixed matrix always yields
//! the same factor.

use std::collections::VecDeque;

use crate::error::{check_len, Error, Result};
use crate::sparse::SparseMatrix;

/// Pivots at or below this fraction of the largest diagonal entry are
/// treated as zero.
pub const PIVOT_TOLERANCE: f64 = 1e-10;

const NONE: usize = usize::MAX;

/// `P A Pᵀ = L Lᵀ`, stored column-wise with the diagonal first in each column.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    n: usize,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CholeskyFactor {
    pub fn factorize(a: &SparseMatrix) -> Result<Self> {
        let perm = reverse_cuthill_mckee(a);
        Self::factorize_with_ordering(a, perm)
    }

    /// Factorizes `a` under an explicit ordering, `perm[new] = old`.
    pub fn factorize_with_ordering(a: &SparseMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = a.rows();
        check_len("cholesky: square matrix", n, a.cols())?;
        check_len("cholesky: ordering", n, perm.len())?;
        let mut inv_perm = vec![NONE; n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || inv_perm[old] != NONE {
                return Err(Error::Config("cholesky: ordering is not a permutation".into()));
            }
            inv_perm[old] = new;
        }

        // Upper triangle of C = P A Pᵀ, accessed by column: upper[k] = {i <= k}.
        let mut upper: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut max_diag = 0.0f64;
        for (r, c, v) in a.triplets() {
            let (i, k) = (inv_perm[r], inv_perm[c]);
            if i <= k {
                upper[k].push((i, v));
            }
            if r == c {
                max_diag = max_diag.max(v.abs());
            }
        }
        for col in &mut upper {
            col.sort_by_key(|e| e.0);
        }

        let parent = elimination_tree(&upper);

        let mut marks = vec![NONE; n];
        let mut stack = vec![0usize; n];
        let mut pattern = vec![0usize; n];

        // Symbolic pass: column counts of L.
        let mut counts = vec![1usize; n];
        for k in 0..n {
            let top = ereach(&upper[k], k, &parent, &mut marks, &mut stack, &mut pattern);
            for &j in &pattern[top..] {
                counts[j] += 1;
            }
        }
        let mut col_ptr = vec![0usize; n + 1];
        for j in 0..n {
            col_ptr[j + 1] = col_ptr[j] + counts[j];
        }
        let nnz = col_ptr[n];
        let mut row_idx = vec![0usize; nnz];
        let mut values = vec![0.0; nnz];
        let mut fill = col_ptr.clone();

        marks.fill(NONE);
        let mut x = vec![0.0; n];
        let threshold = PIVOT_TOLERANCE * max_diag;
        for k in 0..n {
            let top = ereach(&upper[k], k, &parent, &mut marks, &mut stack, &mut pattern);
            for &(i, v) in &upper[k] {
                x[i] = v;
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &i in &pattern[top..] {
                let lki = x[i] / values[col_ptr[i]];
                x[i] = 0.0;
                for p in col_ptr[i] + 1..fill[i] {
                    x[row_idx[p]] -= values[p] * lki;
                }
                d -= lki * lki;
                let p = fill[i];
                row_idx[p] = k;
                values[p] = lki;
                fill[i] += 1;
            }
            if !(d > threshold) {
                return Err(Error::RankDeficient {
                    column: perm[k],
                    pivot: d,
                });
            }
            let p = fill[k];
            row_idx[p] = k;
            values[p] = d.sqrt();
            fill[k] += 1;
        }

        Ok(Self {
            n,
            perm,
            inv_perm,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `perm[new] = old`.
    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// The upper-triangular factor `R = Lᵀ` in the permuted ordering, so that
    /// `P A Pᵀ = Rᵀ R`.
    pub fn upper_factor(&self) -> SparseMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                triplets.push((j, self.row_idx[p], self.values[p]));
            }
        }
        SparseMatrix::from_triplets(self.n, self.n, triplets).expect("factor indices in range")
    }

    pub fn min_diagonal(&self) -> f64 {
        (0..self.n)
            .map(|j| self.values[self.col_ptr[j]])
            .fold(f64::INFINITY, f64::min)
    }

    /// Solves `A x = b` with one forward and one backward substitution.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_len("cholesky solve", self.n, b.len())?;
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        self.solve_lower(&mut y);
        self.solve_upper(&mut y);
        Ok(self.inv_perm.iter().map(|&new| y[new]).collect())
    }

    /// `L y = b` in place.
    fn solve_lower(&self, x: &mut [f64]) {
        for j in 0..self.n {
            let start = self.col_ptr[j];
            x[j] /= self.values[start];
            let xj = x[j];
            for p in start + 1..self.col_ptr[j + 1] {
                x[self.row_idx[p]] -= self.values[p] * xj;
            }
        }
    }

    /// `Lᵀ y = b` in place.
    fn solve_upper(&self, x: &mut [f64]) {
        for j in (0..self.n).rev() {
            let start = self.col_ptr[j];
            let mut acc = x[j];
            for p in start + 1..self.col_ptr[j + 1] {
                acc -= self.values[p] * x[self.row_idx[p]];
            }
            x[j] = acc / self.values[start];
        }
    }

    pub(crate) fn from_parts(
        perm: Vec<usize>,
        col_ptr: Vec<usize>,
        row_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let n = perm.len();
        if col_ptr.len() != n + 1 || col_ptr[n] != row_idx.len() || row_idx.len() != values.len() {
            return Err(Error::Format("cholesky factor: inconsistent storage".into()));
        }
        let mut inv_perm = vec![NONE; n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || inv_perm[old] != NONE {
                return Err(Error::Format("cholesky factor: bad permutation".into()));
            }
            inv_perm[old] = new;
        }
        for j in 0..n {
            let (s, e) = (col_ptr[j], col_ptr[j + 1]);
            if s >= e || row_idx[s] != j || values[s] <= 0.0 || row_idx[s..e].iter().any(|&r| r < j || r >= n) {
                return Err(Error::Format(format!("cholesky factor: malformed column {j}")));
            }
        }
        Ok(Self {
            n,
            perm,
            inv_perm,
            col_ptr,
            row_idx,
            values,
        })
    }
}

fn elimination_tree(upper: &[Vec<(usize, f64)>]) -> Vec<usize> {
    let n = upper.len();
    let mut parent = vec![NONE; n];
    let mut ancestor = vec![NONE; n];
    for k in 0..n {
        for &(start, _) in &upper[k] {
            let mut i = start;
            while i != NONE && i < k {
                let next = ancestor[i];
                ancestor[i] = k;
                if next == NONE {
                    parent[i] = k;
                }
                i = next;
            }
        }
    }
    parent
}

/// Nonzero pattern of row `k` of L, returned as `pattern[top..]` in
/// topological order.
fn ereach(
    column: &[(usize, f64)],
    k: usize,
    parent: &[usize],
    marks: &mut [usize],
    stack: &mut [usize],
    pattern: &mut [usize],
) -> usize {
    let n = parent.len();
    let mut top = n;
    marks[k] = k;
    for &(start, _) in column {
        if start > k {
            continue;
        }
        let mut i = start;
        let mut len = 0;
        while marks[i] != k {
            stack[len] = i;
            len += 1;
            marks[i] = k;
            i = parent[i];
        }
        while len > 0 {
            len -= 1;
            top -= 1;
            pattern[top] = stack[len];
        }
    }
    top
}

/// Reverse Cuthill-McKee ordering of the symmetric pattern of `a`,
/// `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &SparseMatrix) -> Vec<usize> {
    let n = a.rows();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|r| a.row(r).0.iter().copied().filter(|&c| c != r).collect())
        .collect();
    let degree = |v: usize| neighbors[v].len();

    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    let mut queue = VecDeque::new();
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        let start = pseudo_peripheral(seed, &neighbors);
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = neighbors[v].iter().copied().filter(|&u| !visited[u]).collect();
            next.sort_by_key(|&u| (degree(u), u));
            for u in next {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

fn pseudo_peripheral(seed: usize, neighbors: &[Vec<usize>]) -> usize {
    let mut best = seed;
    let (mut ecc, mut last_level) = bfs_levels(best, neighbors);
    loop {
        let candidate = *last_level
            .iter()
            .min_by_key(|&&v| (neighbors[v].len(), v))
            .expect("bfs level is never empty");
        let (e, level) = bfs_levels(candidate, neighbors);
        if e <= ecc {
            return best;
        }
        best = candidate;
        ecc = e;
        last_level = level;
    }
}

fn bfs_levels(start: usize, neighbors: &[Vec<usize>]) -> (usize, Vec<usize>) {
    let mut depth = vec![NONE; neighbors.len()];
    depth[start] = 0;
    let mut frontier = vec![start];
    let mut ecc = 0;
    loop {
        let mut next = Vec::new();
        for &v in &frontier {
            for &u in &neighbors[v] {
                if depth[u] == NONE {
                    depth[u] = depth[v] + 1;
                    next.push(u);
                }
            }
        }
        if next.is_empty() {
            return (ecc, frontier);
        }
        ecc += 1;
        frontier = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};

    fn random_spd(n: usize, seed: u64) -> SparseMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut t = Vec::new();
        for i in 0..n {
            for _ in 0..3 {
                let j = rng.random_range(0..n);
                if j != i {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    t.push((i, j, v));
                    t.push((j, i, v));
                }
            }
        }
        let m = SparseMatrix::from_triplets(n, n, t).unwrap();
        // diagonally dominant
        let mut t: Vec<_> = m.triplets().collect();
        for i in 0..n {
            let s: f64 = m.row(i).1.iter().map(|v| v.abs()).sum();
            t.push((i, i, s + 1.0));
        }
        SparseMatrix::from_triplets(n, n, t).unwrap()
    }

    #[test]
    fn solve_matches_dense() {
        let a = random_spd(60, 7);
        let f = CholeskyFactor::factorize(&a).unwrap();
        let b: Vec<f64> = (0..60).map(|i| (i as f64).sin()).collect();
        let x = f.solve(&b).unwrap();
        let dense = a.to_dense().lu().solve(&nalgebra::DVector::from_vec(b)).unwrap();
        for i in 0..60 {
            assert!((x[i] - dense[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn factor_reproduces_permuted_matrix() {
        let a = random_spd(40, 3);
        let f = CholeskyFactor::factorize(&a).unwrap();
        let r = f.upper_factor().to_dense();
        let p = f.permutation();
        let ad = a.to_dense();
        let permuted = DMatrix::from_fn(40, 40, |i, j| ad[(p[i], p[j])]);
        let diff = (r.transpose() * &r - permuted).abs().max();
        assert!(diff < 1e-12);
        for i in 0..40 {
            for j in 0..i {
                assert_eq!(r[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn singular_matrix_reports_rank_deficiency() {
        // path-graph Laplacian has a constant null vector
        let t = vec![
            (0, 0, 1.0),
            (0, 1, -1.0),
            (1, 0, -1.0),
            (1, 1, 2.0),
            (1, 2, -1.0),
            (2, 1, -1.0),
            (2, 2, 1.0),
        ];
        let a = SparseMatrix::from_triplets(3, 3, t).unwrap();
        let err = CholeskyFactor::factorize(&a).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
    }

    #[test]
    fn ordering_is_a_permutation_and_deterministic() {
        let a = random_spd(80, 11);
        let p1 = reverse_cuthill_mckee(&a);
        let p2 = reverse_cuthill_mckee(&a);
        assert_eq!(p1, p2);
        let mut sorted = p1.clone();
        sorted.sort();
        assert_eq!(sorted, (0..80).collect::<Vec<_>>());
    }
}
