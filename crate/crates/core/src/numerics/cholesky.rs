//! Cholesky factorization of symmetric positive definite matrices, computed
//! once and reused for many right-hand sides.
//!
//! Small systems go through a dense `LLᵀ`; larger ones are reordered with
//! reverse Cuthill-McKee and factored in envelope (skyline) storage, where the
//! fill is confined to the profile of the permuted matrix.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::sparse::SparseMatrix;
use crate::error::{Error, Result};

/// Dimension below which the dense factorization is used.
pub const DENSE_CHOLESKY_LIMIT: usize = 200;

/// Reusable `A = LLᵀ` factorization. Immutable once built, so one handle can
/// serve concurrent solves.
#[derive(Debug, Clone)]
pub struct SpdFactorization {
    n: usize,
    kind: Kind,
}

#[derive(Debug, Clone)]
enum Kind {
    Dense(DMatrix<f64>),
    Envelope(Envelope),
}

#[derive(Debug, Clone)]
struct Envelope {
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// first column stored in each row of the permuted factor
    first: Vec<usize>,
    /// offset of row `i` inside `vals`
    start: Vec<usize>,
    vals: Vec<f64>,
}

/// Factorizes `a`, choosing dense or envelope storage by dimension.
pub fn factorize_spd(a: &SparseMatrix) -> Result<SpdFactorization> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "Cholesky needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.nrows() < DENSE_CHOLESKY_LIMIT {
        factorize_spd_dense(&a.to_dense())
    } else {
        factorize_spd_envelope(a)
    }
}

/// Dense `LLᵀ` of a symmetric matrix; only the lower triangle is read.
pub fn factorize_spd_dense(a: &DMatrix<f64>) -> Result<SpdFactorization> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "Cholesky needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for p in 0..j {
            d -= l[(j, p)] * l[(j, p)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { index: j, pivot: d });
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for p in 0..j {
                s -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(SpdFactorization {
        n,
        kind: Kind::Dense(l),
    })
}

/// Envelope Cholesky after reverse Cuthill-McKee reordering.
pub fn factorize_spd_envelope(a: &SparseMatrix) -> Result<SpdFactorization> {
    let n = a.nrows();
    let perm = reverse_cuthill_mckee(a);
    let mut inv = vec![0usize; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }

    // lower-triangular entries of the permuted matrix, row by row
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, j, v) in a.triplets() {
        let (pi, pj) = (inv[i], inv[j]);
        if pj <= pi {
            rows[pi].push((pj, v));
        }
    }
    let first: Vec<usize> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| r.iter().map(|&(j, _)| j).min().unwrap_or(i).min(i))
        .collect();
    let mut start = Vec::with_capacity(n + 1);
    let mut total = 0usize;
    for i in 0..n {
        start.push(total);
        total += i - first[i] + 1;
    }
    start.push(total);
    let mut vals = vec![0.0; total];
    for (i, r) in rows.iter().enumerate() {
        for &(j, v) in r {
            vals[start[i] + (j - first[i])] += v;
        }
    }

    for i in 0..n {
        let fi = first[i];
        for j in fi..i {
            let fj = first[j];
            let lo = fi.max(fj);
            let mut s = vals[start[i] + (j - fi)];
            for p in lo..j {
                s -= vals[start[i] + (p - fi)] * vals[start[j] + (p - fj)];
            }
            vals[start[i] + (j - fi)] = s / vals[start[j] + (j - fj)];
        }
        let mut d = vals[start[i] + (i - fi)];
        for p in fi..i {
            let l = vals[start[i] + (p - fi)];
            d -= l * l;
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite {
                index: perm[i],
                pivot: d,
            });
        }
        vals[start[i] + (i - fi)] = d.sqrt();
    }

    Ok(SpdFactorization {
        n,
        kind: Kind::Envelope(Envelope {
            perm,
            first,
            start,
            vals,
        }),
    })
}

impl SpdFactorization {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored factor entries.
    pub fn factor_nnz(&self) -> usize {
        match &self.kind {
            Kind::Dense(_) => self.n * (self.n + 1) / 2,
            Kind::Envelope(e) => e.vals.len(),
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.kind, Kind::Dense(_))
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        assert_eq!(b.len(), self.n, "right-hand side length mismatch");
        match &self.kind {
            Kind::Dense(l) => {
                let n = self.n;
                let mut y = b.clone();
                for i in 0..n {
                    let mut s = y[i];
                    for p in 0..i {
                        s -= l[(i, p)] * y[p];
                    }
                    y[i] = s / l[(i, i)];
                }
                for i in (0..n).rev() {
                    let mut s = y[i];
                    for p in (i + 1)..n {
                        s -= l[(p, i)] * y[p];
                    }
                    y[i] = s / l[(i, i)];
                }
                y
            }
            Kind::Envelope(e) => {
                let n = self.n;
                let mut y: Vec<f64> = e.perm.iter().map(|&old| b[old]).collect();
                for i in 0..n {
                    let fi = e.first[i];
                    let row = &e.vals[e.start[i]..e.start[i + 1]];
                    let mut s = y[i];
                    for p in fi..i {
                        s -= row[p - fi] * y[p];
                    }
                    y[i] = s / row[i - fi];
                }
                for i in (0..n).rev() {
                    let fi = e.first[i];
                    let row = &e.vals[e.start[i]..e.start[i + 1]];
                    let xi = y[i] / row[i - fi];
                    y[i] = xi;
                    for p in fi..i {
                        y[p] -= row[p - fi] * xi;
                    }
                }
                let mut x = DVector::zeros(n);
                for (new, &old) in e.perm.iter().enumerate() {
                    x[old] = y[new];
                }
                x
            }
        }
    }

    /// Solves for every column of `b`. Columns are independent, so they are
    /// dispatched in parallel; each column's arithmetic is unchanged.
    pub fn solve_many(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(b.nrows(), self.n, "right-hand side row count mismatch");
        let cols: Vec<DVector<f64>> = (0..b.ncols())
            .into_par_iter()
            .map(|c| self.solve(&b.column(c).into_owned()))
            .collect();
        if cols.is_empty() {
            return DMatrix::zeros(self.n, 0);
        }
        DMatrix::from_columns(&cols)
    }
}

/// Reverse Cuthill-McKee ordering of the symmetric sparsity pattern of `a`.
/// Returns `perm` with `perm[new] = old`; every connected component is
/// started from a pseudo-peripheral node.
pub fn reverse_cuthill_mckee(a: &SparseMatrix) -> Vec<usize> {
    let n = a.nrows();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, j, v) in a.triplets() {
        if i != j && v != 0.0 {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));

    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let root = pseudo_peripheral(seed, &adj, &degree);
        let mut queue = VecDeque::new();
        visited[root] = true;
        queue.push_back(root);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn pseudo_peripheral(start: usize, adj: &[Vec<usize>], degree: &[usize]) -> usize {
    let mut root = start;
    let mut ecc = 0usize;
    loop {
        let levels = bfs_levels(root, adj);
        let depth = *levels.iter().filter_map(|l| l.as_ref()).max().unwrap_or(&0);
        if depth <= ecc && ecc > 0 {
            return root;
        }
        ecc = depth;
        let candidate = levels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(depth))
            .map(|(i, _)| i)
            .min_by_key(|&i| (degree[i], i))
            .unwrap_or(root);
        if candidate == root {
            return root;
        }
        root = candidate;
    }
}

fn bfs_levels(root: usize, adj: &[Vec<usize>]) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    level[root] = Some(0);
    let mut queue = VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        let lv = level[v].unwrap();
        for &w in &adj[v] {
            if level[w].is_none() {
                level[w] = Some(lv + 1);
                queue.push_back(w);
            }
        }
    }
    level
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> SparseMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        SparseMatrix::from_triplets(n, n, &t).unwrap()
    }

    #[test]
    fn scaled_identity() {
        let a = SparseMatrix::from_diagonal(&[2.0; 4]);
        let f = factorize_spd(&a).unwrap();
        let x = f.solve(&DVector::from_element(4, 1.0));
        assert!((x - DVector::from_element(4, 0.5)).amax() < 1e-15);
    }

    #[test]
    fn zero_pivot_is_reported() {
        let a = SparseMatrix::from_diagonal(&[1.0, 0.0, 3.0]);
        match factorize_spd(&a) {
            Err(Error::NotPositiveDefinite { index, pivot }) => {
                assert_eq!(index, 1);
                assert_eq!(pivot, 0.0);
            }
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
        let big = SparseMatrix::from_diagonal(&vec![1.0; 250]).add_scaled(
            1.0,
            &SparseMatrix::from_triplets(250, 250, &[(17, 17, -1.0)]).unwrap(),
            1.0,
        );
        assert!(matches!(
            factorize_spd_envelope(&big.unwrap()),
            Err(Error::NotPositiveDefinite { index: 17, .. })
        ));
    }

    #[test]
    fn envelope_matches_dense() {
        let a = laplacian_1d(300);
        let fe = factorize_spd_envelope(&a).unwrap();
        let fd = factorize_spd_dense(&a.to_dense()).unwrap();
        assert!(!fe.is_dense());
        let b = DVector::from_fn(300, |i, _| ((i * 7) % 11) as f64 - 5.0);
        let xe = fe.solve(&b);
        let xd = fd.solve(&b);
        assert!((&xe - &xd).norm() <= 1e-10 * xd.norm());
        let r = a.mul_vec(&xe) - &b;
        assert!(r.norm() <= 1e-10 * b.norm());
        // tridiagonal: the profile never exceeds two entries per row
        assert!(fe.factor_nnz() <= 2 * 300);
    }

    #[test]
    fn rcm_is_a_permutation_and_handles_isolated_nodes() {
        let mut t: Vec<_> = laplacian_1d(6).triplets().collect();
        t.retain(|&(i, j, _)| i != 3 && j != 3);
        t.push((3, 3, 1.0));
        let a = SparseMatrix::from_triplets(6, 6, &t).unwrap();
        let mut p = reverse_cuthill_mckee(&a);
        p.sort_unstable();
        assert_eq!(p, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn solve_many_matches_columnwise() {
        let a = laplacian_1d(8);
        let f = factorize_spd(&a).unwrap();
        let b = DMatrix::from_fn(8, 3, |i, j| (i + 2 * j) as f64);
        let x = f.solve_many(&b);
        for c in 0..3 {
            assert_eq!(x.column(c).into_owned(), f.solve(&b.column(c).into_owned()));
        }
    }
}
