//! Row-indexed boolean sparse matrices used for all adjacency structures.

use rayon::prelude::*;

/// Boolean sparse matrix in CSR layout. Per-row column indices are sorted
/// and deduplicated, so a stored entry means "edge present" regardless of
/// how many path instances produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseAdj {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
}

impl SparseAdj {
    /// Build from (row, col) pairs. Duplicates are collapsed.
    pub fn from_pairs(n_rows: usize, n_cols: usize, pairs: &[(u32, u32)]) -> Self {
        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); n_rows];
        for &(r, c) in pairs {
            debug_assert!((r as usize) < n_rows && (c as usize) < n_cols);
            rows[r as usize].push(c);
        }
        Self::from_rows(n_cols, rows)
    }

    /// Build from per-row neighbor lists (sorted + deduped here).
    pub fn from_rows(n_cols: usize, mut rows: Vec<Vec<u32>>) -> Self {
        let n_rows = rows.len();
        let mut indptr = Vec::with_capacity(n_rows + 1);
        indptr.push(0usize);
        let mut indices = Vec::new();
        for row in rows.iter_mut() {
            row.sort_unstable();
            row.dedup();
            indices.extend_from_slice(row);
            indptr.push(indices.len());
        }
        Self {
            n_rows,
            n_cols,
            indptr,
            indices,
        }
    }

    /// Empty n_rows x n_cols matrix.
    pub fn empty(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            indptr: vec![0; n_rows + 1],
            indices: Vec::new(),
        }
    }

    /// Identity over n nodes.
    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n as u32).collect(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Sorted neighbor list of row `i`.
    pub fn row(&self, i: usize) -> &[u32] {
        &self.indices[self.indptr[i]..self.indptr[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.indptr[i + 1] - self.indptr[i]
    }

    pub fn contains(&self, i: usize, j: u32) -> bool {
        self.row(i).binary_search(&j).is_ok()
    }

    pub fn iter_edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.n_rows).flat_map(move |i| self.row(i).iter().map(move |&j| (i as u32, j)))
    }

    /// Boolean matrix product: entry (i, k) is set iff some j links i to k.
    /// Rows are computed independently, so the result does not depend on
    /// the rayon thread count.
    pub fn multiply(&self, rhs: &SparseAdj) -> SparseAdj {
        assert_eq!(
            self.n_cols, rhs.n_rows,
            "adjacency product dimension mismatch: {}x{} * {}x{}",
            self.n_rows, self.n_cols, rhs.n_rows, rhs.n_cols
        );
        let out_rows: Vec<Vec<u32>> = (0..self.n_rows)
            .into_par_iter()
            .map(|i| {
                let mut seen = vec![false; rhs.n_cols];
                let mut touched = Vec::new();
                for &j in self.row(i) {
                    for &k in rhs.row(j as usize) {
                        if !seen[k as usize] {
                            seen[k as usize] = true;
                            touched.push(k);
                        }
                    }
                }
                touched.sort_unstable();
                touched
            })
            .collect();
        SparseAdj::from_rows(rhs.n_cols, out_rows)
    }

    /// Returns a copy with (i, i) present in every row. Requires a square
    /// matrix.
    pub fn with_self_loops(&self) -> SparseAdj {
        assert_eq!(self.n_rows, self.n_cols, "self-loops need a square matrix");
        let rows: Vec<Vec<u32>> = (0..self.n_rows)
            .map(|i| {
                let mut row = self.row(i).to_vec();
                if !self.contains(i, i as u32) {
                    row.push(i as u32);
                }
                row
            })
            .collect();
        SparseAdj::from_rows(self.n_cols, rows)
    }

    pub fn transpose(&self) -> SparseAdj {
        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); self.n_cols];
        for (i, j) in self.iter_edges() {
            rows[j as usize].push(i);
        }
        SparseAdj::from_rows(self.n_rows, rows)
    }

    pub fn is_symmetric(&self) -> bool {
        self.n_rows == self.n_cols && self.iter_edges().all(|(i, j)| self.contains(j as usize, i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_matches_dense_boolean() {
        let a = SparseAdj::from_pairs(3, 4, &[(0, 1), (0, 3), (2, 0)]);
        let b = SparseAdj::from_pairs(4, 2, &[(1, 0), (3, 0), (3, 1), (0, 1)]);
        let c = a.multiply(&b);
        // dense oracle
        for i in 0..3 {
            for k in 0..2u32 {
                let expect = (0..4u32)
                    .any(|j| a.contains(i, j) && b.contains(j as usize, k));
                assert_eq!(c.contains(i, k), expect, "entry ({i},{k})");
            }
        }
    }

    #[test]
    fn duplicates_collapse() {
        let a = SparseAdj::from_pairs(2, 2, &[(0, 1), (0, 1), (1, 0)]);
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.row(0), &[1]);
    }

    #[test]
    fn self_loops_idempotent() {
        let a = SparseAdj::from_pairs(3, 3, &[(0, 0), (1, 2)]);
        let b = a.with_self_loops();
        assert_eq!(b.row(0), &[0]);
        assert_eq!(b.row(1), &[1, 2]);
        assert_eq!(b.row(2), &[2]);
        assert_eq!(b.with_self_loops(), b);
    }

    #[test]
    fn empty_product_is_empty() {
        let a = SparseAdj::empty(3, 5);
        let b = SparseAdj::from_pairs(5, 3, &[(0, 0)]);
        assert_eq!(a.multiply(&b).nnz(), 0);
    }

    #[test]
    fn transpose_roundtrip() {
        let a = SparseAdj::from_pairs(3, 4, &[(0, 1), (2, 3), (1, 0)]);
        assert_eq!(a.transpose().transpose(), a);
    }
}
