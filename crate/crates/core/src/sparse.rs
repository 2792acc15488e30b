//! Compressed-row storage and a pivot-free sparse LU for nonsingular
//! M-matrices of the form `sI - A` with `A` essentially nonnegative.
//!
//! Without pivoting the factors of an M-matrix keep their sign pattern
//! (`L` and `U` have nonpositive off-diagonals, `U` a positive diagonal), so
//! triangular solves with a nonnegative right-hand side involve no
//! cancellation and keep tiny components accurate to relative precision.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FactorError {
    #[error("nonpositive pivot {pivot} at row {row}: shift lies below the Perron root")]
    NonPositivePivot { row: usize, pivot: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(col, value)` lists; duplicate columns are summed
    /// and every row receives an explicit diagonal entry.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.push((i, 0.0));
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                assert!(c < n, "column {c} out of range");
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.get(i, i)
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                rows[j].push((i, v));
            }
        }
        CsrMatrix::from_rows(rows)
    }

    pub fn min_offdiag(&self) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                if j != i {
                    m = m.min(v);
                }
            }
        }
        m
    }

    /// Connected components of the undirected graph of positive
    /// off-diagonal entries, as a label per row.
    pub fn components(&self) -> (usize, Vec<usize>) {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                if j != i && v > 0.0 {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
        let mut label = vec![usize::MAX; self.n];
        let mut count = 0;
        let mut stack = Vec::new();
        for s in 0..self.n {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = count;
            stack.push(s);
            while let Some(i) = stack.pop() {
                for &j in &adj[i] {
                    if label[j] == usize::MAX {
                        label[j] = count;
                        stack.push(j);
                    }
                }
            }
            count += 1;
        }
        (count, label)
    }

    /// Principal submatrix on `keep` (in the given order).
    pub fn submatrix(&self, keep: &[usize]) -> CsrMatrix {
        let mut map = vec![usize::MAX; self.n];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let rows = keep
            .iter()
            .map(|&i| {
                self.row(i)
                    .filter(|&(j, _)| map[j] != usize::MAX)
                    .map(|(j, v)| (map[j], v))
                    .collect()
            })
            .collect();
        CsrMatrix::from_rows(rows)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }

    /// Matrix Market coordinate format (1-based, general real).
    pub fn to_matrix_market(&self) -> String {
        let mut s = String::new();
        s.push_str("%%MatrixMarket matrix coordinate real general\n");
        let _ = writeln!(s, "{} {} {}", self.n, self.n, self.nnz());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                let _ = writeln!(s, "{} {} {:.17e}", i + 1, j + 1, v);
            }
        }
        s
    }
}

/// LU factors of `P (sI - A) Pᵀ` with unit lower `L` stored by columns and
/// upper `U` stored by rows. The sparsity pattern of `A` is treated as
/// symmetric (its union with the transpose).
#[derive(Debug, Clone)]
pub struct MMatrixLu {
    n: usize,
    perm: Vec<usize>,
    l_ptr: Vec<usize>,
    l_idx: Vec<u32>,
    l_val: Vec<f64>,
    u_ptr: Vec<usize>,
    u_idx: Vec<u32>,
    u_val: Vec<f64>,
    u_diag: Vec<f64>,
}

/// Symbolic analysis that can be reused across shifts.
#[derive(Debug, Clone)]
pub struct Symbolic {
    n: usize,
    perm: Vec<usize>,
    inv: Vec<usize>,
    parent: Vec<usize>,
    // strictly-lower pattern of the permuted symmetric structure, by row
    lower_ptr: Vec<usize>,
    lower_idx: Vec<usize>,
    l_ptr: Vec<usize>,
}

impl Symbolic {
    pub fn analyze(a: &CsrMatrix, perm: Option<&[usize]>) -> Symbolic {
        let n = a.n;
        let perm: Vec<usize> = match perm {
            Some(p) => {
                assert_eq!(p.len(), n);
                p.to_vec()
            }
            None => (0..n).collect(),
        };
        let mut inv = vec![0; n];
        for (k, &i) in perm.iter().enumerate() {
            inv[i] = k;
        }
        let mut lower: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            for (j, _) in a.row(i) {
                let (pi, pj) = (inv[i], inv[j]);
                if pi > pj {
                    lower[pi].push(pj);
                } else if pj > pi {
                    lower[pj].push(pi);
                }
            }
        }
        let mut lower_ptr = vec![0];
        let mut lower_idx = Vec::new();
        for row in &mut lower {
            row.sort_unstable();
            row.dedup();
            lower_idx.extend_from_slice(row);
            lower_ptr.push(lower_idx.len());
        }
        let parent = etree(n, &lower_ptr, &lower_idx);

        let mut counts = vec![0usize; n];
        let mut mark = vec![usize::MAX; n];
        let mut stack = vec![0usize; n];
        for k in 0..n {
            let top = ereach(k, &lower_ptr, &lower_idx, &parent, &mut mark, &mut stack);
            for &j in &stack[top..n] {
                counts[j] += 1;
            }
        }
        let mut l_ptr = vec![0usize; n + 1];
        for j in 0..n {
            l_ptr[j + 1] = l_ptr[j] + counts[j];
        }
        Symbolic {
            n,
            perm,
            inv,
            parent,
            lower_ptr,
            lower_idx,
            l_ptr,
        }
    }

    pub fn fill_nnz(&self) -> usize {
        self.l_ptr[self.n]
    }

    /// Numeric factorization of `sI - A`.
    pub fn factor(&self, a: &CsrMatrix, shift: f64) -> Result<MMatrixLu, FactorError> {
        let n = self.n;
        let nnz = self.fill_nnz();
        let mut l_idx = vec![0u32; nnz];
        let mut l_val = vec![0.0; nnz];
        let mut u_idx = vec![0u32; nnz];
        let mut u_val = vec![0.0; nnz];
        let mut l_next = self.l_ptr[..n].to_vec();
        let mut u_next = self.l_ptr[..n].to_vec();
        let mut u_diag = vec![0.0; n];

        // dense work vectors: x holds column k of B above the diagonal,
        // y holds row k of B left of the diagonal.
        let mut x = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut mark = vec![usize::MAX; n];
        let mut stack = vec![0usize; n];
        let at = a.transpose();

        for k in 0..n {
            let orig = self.perm[k];
            let mut diag = shift;
            for (j, v) in a.row(orig) {
                let pj = self.inv[j];
                if pj < k {
                    y[pj] = -v;
                } else if pj == k {
                    diag -= v;
                }
            }
            for (j, v) in at.row(orig) {
                let pj = self.inv[j];
                if pj < k {
                    x[pj] = -v;
                }
            }
            let top = ereach(
                k,
                &self.lower_ptr,
                &self.lower_idx,
                &self.parent,
                &mut mark,
                &mut stack,
            );
            for &j in &stack[top..n] {
                // U(j,k) = x_j once all earlier columns have been applied
                let ujk = x[j];
                x[j] = 0.0;
                for p in self.l_ptr[j]..l_next[j] {
                    x[l_idx[p] as usize] -= l_val[p] * ujk;
                }
                let ljk = y[j] / u_diag[j];
                y[j] = 0.0;
                for p in self.l_ptr[j]..u_next[j] {
                    y[u_idx[p] as usize] -= u_val[p] * ljk;
                }
                diag -= ljk * ujk;
                let p = l_next[j];
                l_idx[p] = k as u32;
                l_val[p] = ljk;
                l_next[j] += 1;
                let p = u_next[j];
                u_idx[p] = k as u32;
                u_val[p] = ujk;
                u_next[j] += 1;
            }
            if !(diag > 0.0) {
                return Err(FactorError::NonPositivePivot { row: k, pivot: diag });
            }
            u_diag[k] = diag;
        }
        Ok(MMatrixLu {
            n,
            perm: self.perm.clone(),
            l_ptr: self.l_ptr.clone(),
            l_idx,
            l_val,
            u_ptr: self.l_ptr.clone(),
            u_idx,
            u_val,
            u_diag,
        })
    }
}

fn etree(n: usize, lower_ptr: &[usize], lower_idx: &[usize]) -> Vec<usize> {
    let mut parent = vec![usize::MAX; n];
    let mut ancestor = vec![usize::MAX; n];
    for k in 0..n {
        for &i0 in &lower_idx[lower_ptr[k]..lower_ptr[k + 1]] {
            let mut i = i0;
            while i != usize::MAX && i < k {
                let next = ancestor[i];
                ancestor[i] = k;
                if next == usize::MAX {
                    parent[i] = k;
                    break;
                }
                i = next;
            }
        }
    }
    parent
}

/// Nonzero pattern of row `k` of `L` in topological order, returned as
/// `stack[top..n]`.
fn ereach(
    k: usize,
    lower_ptr: &[usize],
    lower_idx: &[usize],
    parent: &[usize],
    mark: &mut [usize],
    stack: &mut [usize],
) -> usize {
    let n = mark.len();
    let mut top = n;
    mark[k] = k;
    let mut path = Vec::new();
    for &i0 in &lower_idx[lower_ptr[k]..lower_ptr[k + 1]] {
        let mut i = i0;
        path.clear();
        while mark[i] != k {
            path.push(i);
            mark[i] = k;
            i = parent[i];
        }
        while let Some(p) = path.pop() {
            top -= 1;
            stack[top] = p;
        }
    }
    top
}

impl MMatrixLu {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Solves `(sI - A) x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64], work: &mut Vec<f64>) {
        let n = self.n;
        work.clear();
        work.extend(self.perm.iter().map(|&i| b[i]));
        let y = work.as_mut_slice();
        for j in 0..n {
            let yj = y[j];
            if yj != 0.0 {
                for p in self.l_ptr[j]..self.l_ptr[j + 1] {
                    y[self.l_idx[p] as usize] -= self.l_val[p] * yj;
                }
            }
        }
        for j in (0..n).rev() {
            let mut s = y[j];
            for p in self.u_ptr[j]..self.u_ptr[j + 1] {
                s -= self.u_val[p] * y[self.u_idx[p] as usize];
            }
            y[j] = s / self.u_diag[j];
        }
        for (k, &i) in self.perm.iter().enumerate() {
            b[i] = y[k];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        let mut work = Vec::with_capacity(self.n);
        self.solve_in_place(&mut x, &mut work);
        x
    }

    pub fn min_pivot(&self) -> f64 {
        self.u_diag.iter().copied().fold(f64::INFINITY, f64::min)
    }
}
