//! Dense and sparse linear algebra used by the global and patch solves.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use crate::{Error, Result};

/// Compressed sparse row matrix.
///
/// Column indices are strictly increasing inside each row and duplicate
/// entries are merged at construction time.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a CSR matrix from `(row, col, value)` triplets, summing duplicates.
    ///
    /// Duplicates are summed in ascending value order, so the result does not
    /// depend on the order of the triplets (bitwise).
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        if let Some(&(row, col, _)) = triplets.iter().find(|(r, c, _)| *r >= n_rows || *c >= n_cols) {
            return Err(Error::IndexOutOfRange {
                row,
                col,
                n_rows,
                n_cols,
            });
        }
        let mut sorted = triplets.to_vec();
        sorted.sort_unstable_by(|a, b| {
            a.0.cmp(&b.0)
                .then(a.1.cmp(&b.1))
                .then(a.2.total_cmp(&b.2))
        });

        let mut row_offsets = vec![0usize; n_rows + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_indices.push(c);
                values.push(v);
                row_offsets[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n_rows {
            row_offsets[i + 1] += row_offsets[i];
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterates over the stored `(column, value)` pairs of a row.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        match self.col_indices[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            *yi = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.n_rows == self.n_cols
            && (0..self.n_rows).all(|i| self.row(i).all(|(j, v)| (v - self.get(j, i)).abs() <= tol))
    }
}

/// Free-function spelling of [`SparseMatrix::from_triplets`].
pub fn csr_from_triplets(
    n_rows: usize,
    n_cols: usize,
    triplets: &[(usize, usize, f64)],
) -> Result<SparseMatrix> {
    SparseMatrix::from_triplets(n_rows, n_cols, triplets)
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            values: vec![0.0; n_rows * n_cols],
        }
    }

    pub fn from_row_major(n_rows: usize, n_cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_rows * n_cols {
            return Err(Error::Dimension(format!(
                "{} values for a {}x{} matrix",
                values.len(),
                n_rows,
                n_cols
            )));
        }
        Ok(Self {
            n_rows,
            n_cols,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n_cols + j] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n_cols + j] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.values
            .chunks_exact(self.n_cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Solves `A x = b` by LU factorisation with partial pivoting.
///
/// A pivot smaller than `1e-12 * max|A|` is reported as [`Error::Singular`].
pub fn dense_lu_solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.n_rows;
    if a.n_cols != n {
        return Err(Error::Dimension(format!("matrix is {}x{}, not square", n, a.n_cols)));
    }
    if b.len() != n {
        return Err(Error::Dimension(format!("rhs has length {}, expected {}", b.len(), n)));
    }
    let scale = a.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let threshold = 1e-12 * scale;
    let mut lu = a.values.clone();
    let mut x = b.to_vec();

    for k in 0..n {
        let (piv, piv_abs) = (k..n)
            .map(|i| (i, lu[i * n + k].abs()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if piv_abs <= threshold || piv_abs == 0.0 {
            return Err(Error::Singular {
                column: k,
                pivot: piv_abs,
            });
        }
        if piv != k {
            for j in 0..n {
                lu.swap(k * n + j, piv * n + j);
            }
            x.swap(k, piv);
        }
        let pivot = lu[k * n + k];
        for i in (k + 1)..n {
            let factor = lu[i * n + k] / pivot;
            if factor == 0.0 {
                continue;
            }
            lu[i * n + k] = factor;
            for j in (k + 1)..n {
                lu[i * n + j] -= factor * lu[k * n + j];
            }
            x[i] -= factor * x[k];
        }
    }
    for k in (0..n).rev() {
        let mut acc = x[k];
        for j in (k + 1)..n {
            acc -= lu[k * n + j] * x[j];
        }
        x[k] = acc / lu[k * n + k];
    }
    Ok(x)
}

/// Incomplete Cholesky factor with the sparsity of the lower triangle of A.
struct IncompleteCholesky {
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
    /// Transposed pattern for the backward sweep.
    t_offsets: Vec<usize>,
    t_rows: Vec<usize>,
    t_pos: Vec<usize>,
}

impl IncompleteCholesky {
    fn new(a: &SparseMatrix) -> Option<Self> {
        let n = a.n_rows;
        let mut row_offsets = vec![0usize; n + 1];
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    col_indices.push(j);
                    values.push(v);
                }
            }
            row_offsets[i + 1] = col_indices.len();
        }
        for i in 0..n {
            let (start, end) = (row_offsets[i], row_offsets[i + 1]);
            if end == start || col_indices[end - 1] != i {
                return None;
            }
            for p in start..end {
                let k = col_indices[p];
                // sparse dot of rows i and k over columns < k
                let mut acc = 0.0;
                let (mut pi, mut pk) = (start, row_offsets[k]);
                let end_k = row_offsets[k + 1];
                while pi < p && pk < end_k {
                    let (ci, ck) = (col_indices[pi], col_indices[pk]);
                    if ck >= k {
                        break;
                    }
                    match ci.cmp(&ck) {
                        core::cmp::Ordering::Less => pi += 1,
                        core::cmp::Ordering::Greater => pk += 1,
                        core::cmp::Ordering::Equal => {
                            acc += values[pi] * values[pk];
                            pi += 1;
                            pk += 1;
                        }
                    }
                }
                if k == i {
                    let d = values[p] - acc;
                    if !(d > 0.0) {
                        return None;
                    }
                    values[p] = d.sqrt();
                } else {
                    values[p] = (values[p] - acc) / values[row_offsets[k + 1] - 1];
                }
            }
        }
        let mut t_offsets = vec![0usize; n + 1];
        for &j in &col_indices {
            t_offsets[j + 1] += 1;
        }
        for i in 0..n {
            t_offsets[i + 1] += t_offsets[i];
        }
        let mut fill = t_offsets.clone();
        let mut t_rows = vec![0; col_indices.len()];
        let mut t_pos = vec![0; col_indices.len()];
        for i in 0..n {
            for p in row_offsets[i]..row_offsets[i + 1] {
                let j = col_indices[p];
                t_rows[fill[j]] = i;
                t_pos[fill[j]] = p;
                fill[j] += 1;
            }
        }
        Some(Self {
            row_offsets,
            col_indices,
            values,
            t_offsets,
            t_rows,
            t_pos,
        })
    }

    /// z = (L L^T)^{-1} r
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = r.len();
        for i in 0..n {
            let (start, end) = (self.row_offsets[i], self.row_offsets[i + 1]);
            let mut acc = r[i];
            for p in start..end - 1 {
                acc -= self.values[p] * z[self.col_indices[p]];
            }
            z[i] = acc / self.values[end - 1];
        }
        for i in (0..n).rev() {
            let mut acc = z[i];
            let mut diag = 0.0;
            for q in self.t_offsets[i]..self.t_offsets[i + 1] {
                let row = self.t_rows[q];
                let v = self.values[self.t_pos[q]];
                if row == i {
                    diag = v;
                } else {
                    acc -= v * z[row];
                }
            }
            z[i] = acc / diag;
        }
    }
}

enum Preconditioner {
    Cholesky(IncompleteCholesky),
    Jacobi(Vec<f64>),
}

impl Preconditioner {
    fn new(a: &SparseMatrix) -> Self {
        match IncompleteCholesky::new(a) {
            Some(ic) => Preconditioner::Cholesky(ic),
            None => Preconditioner::Jacobi(
                a.diagonal()
                    .into_iter()
                    .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
                    .collect(),
            ),
        }
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            Preconditioner::Cholesky(ic) => ic.apply(r, z),
            Preconditioner::Jacobi(inv) => {
                for ((zi, ri), di) in z.iter_mut().zip(r).zip(inv) {
                    *zi = ri * di;
                }
            }
        }
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned conjugate gradients for a symmetric positive definite matrix.
///
/// Returns `x` with `‖Ax − b‖₂ ≤ tol·‖b‖₂`, measured on the true residual.
/// Incomplete Cholesky is used as preconditioner, falling back to Jacobi when
/// the incomplete factorisation breaks down.
pub fn solve_spd(a: &SparseMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = a.n_rows;
    if a.n_cols != n || b.len() != n {
        return Err(Error::Dimension(format!(
            "matrix {}x{} with rhs of length {}",
            a.n_rows,
            a.n_cols,
            b.len()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let precond = Preconditioner::new(a);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut iterations = 0;
    let mut residual = 1.0;

    // Outer loop restarts from the true residual whenever the recursive
    // residual claims convergence but the true one does not.
    while iterations < max_iter {
        precond.apply(&r, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        loop {
            if iterations >= max_iter {
                break;
            }
            iterations += 1;
            a.mul_vec_into(&p, &mut q);
            let pq = dot(&p, &q);
            if !(pq > 0.0) {
                break;
            }
            let alpha = rz / pq;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
            }
            if norm2(&r) <= tol * b_norm {
                break;
            }
            precond.apply(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        a.mul_vec_into(&x, &mut q);
        for i in 0..n {
            r[i] = b[i] - q[i];
        }
        let true_residual = norm2(&r) / b_norm;
        if true_residual <= tol {
            return Ok(x);
        }
        if true_residual >= residual * 0.999 && iterations > 0 {
            // stagnation at the floating-point floor
            residual = true_residual;
            break;
        }
        residual = true_residual;
    }
    Err(Error::NotConverged {
        iterations,
        residual,
    })
}
