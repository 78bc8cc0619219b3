//! Sparse storage and the direct/iterative solvers used by the fine-scale
//! problems.

use crate::error::{LodError, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) outside {nrows}x{ncols}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self::from_triplets(nrows, ncols, Vec::new())
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map(|k| vals[k]).unwrap_or(0.0)
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (r, yr) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            *yr = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        }
    }

    /// `y = A^T x`.
    pub fn transpose_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                y[c] += v * xr;
            }
        }
        y
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.ncols, self.nrows, self.triplets().map(|(r, c, v)| (c, r, v)).collect())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v *= factor);
        m
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `max |A_ij - A_ji|`.
    pub fn symmetry_defect(&self) -> f64 {
        self.triplets()
            .map(|(r, c, v)| (v - self.get(c, r)).abs())
            .fold(0.0, f64::max)
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let y = self.matvec(x);
        dot(x, &y)
    }

    /// Principal submatrix on the given (sorted or unsorted) index set.
    pub fn restrict(&self, dofs: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.ncols];
        for (k, &d) in dofs.iter().enumerate() {
            map[d] = k;
        }
        let mut t = Vec::new();
        for (k, &d) in dofs.iter().enumerate() {
            let (cols, vals) = self.row(d);
            for (&c, &v) in cols.iter().zip(vals) {
                if map[c] != usize::MAX {
                    t.push((k, map[c], v));
                }
            }
        }
        Self::from_triplets(dofs.len(), dofs.len(), t)
    }

    /// Keeps all rows and only the listed columns, renumbered.
    pub fn restrict_columns(&self, dofs: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.ncols];
        for (k, &d) in dofs.iter().enumerate() {
            map[d] = k;
        }
        let t = self
            .triplets()
            .filter(|&(_, c, _)| map[c] != usize::MAX)
            .map(|(r, c, v)| (r, map[c], v))
            .collect();
        Self::from_triplets(self.nrows, dofs.len(), t)
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        self.triplets().map(|(r, c, _)| r.abs_diff(c)).max().unwrap_or(0)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, c, v) in self.triplets() {
            d[r][c] = v;
        }
        d
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cholesky factor of a symmetric positive definite band matrix.
///
/// Row `i` stores `L[i][i - bw ..= i]` contiguously.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(LodError::arg("band Cholesky needs a square matrix"));
        }
        let n = a.nrows();
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut data = vec![0.0; n * w];
        for (r, c, v) in a.triplets() {
            if c <= r {
                data[r * w + (c + bw - r)] = v;
            }
        }
        for i in 0..n {
            let lo_i = i.saturating_sub(bw);
            for j in lo_i..=i {
                let lo = lo_i.max(j.saturating_sub(bw));
                let mut s = data[i * w + (j + bw - i)];
                let ri = i * w + bw - i;
                let rj = j * w + bw - j;
                for k in lo..j {
                    s -= data[ri + k] * data[rj + k];
                }
                if i == j {
                    let diag = a.get(i, i).abs().max(f64::MIN_POSITIVE);
                    if !(s > 1e-14 * diag) {
                        return Err(LodError::numeric(format!(
                            "matrix is not positive definite (pivot {s:.3e} at row {i})"
                        )));
                    }
                    data[ri + i] = s.sqrt();
                } else {
                    data[ri + j] = s / data[rj + j];
                }
            }
        }
        Ok(Self { n, bw, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    fn l(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.bw + 1) + (j + self.bw - i)]
    }

    /// Solves `L L^T x = b` in place. Entries of `b` before `first_nonzero`
    /// must be zero.
    pub fn solve_in_place_from(&self, b: &mut [f64], first_nonzero: usize) {
        let w = self.bw + 1;
        for i in first_nonzero..self.n {
            let lo = i.saturating_sub(self.bw).max(first_nonzero);
            let ri = i * w + self.bw - i;
            let mut s = b[i];
            for k in lo..i {
                s -= self.data[ri + k] * b[k];
            }
            b[i] = s / self.data[ri + i];
        }
        for i in (0..self.n).rev() {
            let ri = i * w + self.bw - i;
            b[i] /= self.data[ri + i];
            let xi = b[i];
            let lo = i.saturating_sub(self.bw);
            for k in lo..i {
                b[k] -= self.data[ri + k] * xi;
            }
        }
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        self.solve_in_place_from(b, 0);
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Squared ratio of the extreme Cholesky pivots, a cheap lower bound on
    /// the spectral condition number.
    pub fn condition_estimate(&self) -> f64 {
        let (lo, hi) = (0..self.n).fold((f64::INFINITY, 0.0f64), |(lo, hi), i| {
            let d = self.l(i, i);
            (lo.min(d), hi.max(d))
        });
        if self.n == 0 {
            1.0
        } else {
            (hi / lo).powi(2)
        }
    }
}

/// Dense Cholesky with a relative pivot threshold; a failing pivot reports its row.
#[derive(Debug, Clone)]
pub struct DenseCholesky {
    n: usize,
    l: Vec<f64>,
}

impl DenseCholesky {
    pub fn factor(a: &[f64], n: usize, rel_pivot_tol: f64) -> std::result::Result<Self, usize> {
        assert_eq!(a.len(), n * n);
        let mut l = a.to_vec();
        let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
        for j in 0..n {
            let mut s = l[j * n + j];
            for k in 0..j {
                s -= l[j * n + k] * l[j * n + k];
            }
            if !(s > rel_pivot_tol * scale) {
                return Err(j);
            }
            let d = s.sqrt();
            l[j * n + j] = d;
            for i in (j + 1)..n {
                let mut s = l[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                l[i * n + j] = 0.0;
            }
        }
        Ok(Self { n, l })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }
}

/// Solves a small dense system by Gaussian elimination with partial pivoting
/// and returns the solution columns for every right-hand side in `rhs`
/// together with the 1-norm condition number of `a`.
pub fn dense_lu_solve(a: &[f64], n: usize, rhs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, f64)> {
    let mut m = a.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| m[x * n + col].abs().total_cmp(&m[y * n + col].abs()))
            .unwrap();
        if m[piv * n + col].abs() < 1e-300 {
            return Err(LodError::numeric("singular dense matrix"));
        }
        if piv != col {
            for k in 0..n {
                m.swap(piv * n + k, col * n + k);
            }
            perm.swap(piv, col);
        }
        for r in (col + 1)..n {
            let f = m[r * n + col] / m[col * n + col];
            m[r * n + col] = f;
            for k in (col + 1)..n {
                m[r * n + k] -= f * m[col * n + k];
            }
        }
    }
    let solve = |b: &[f64]| -> Vec<f64> {
        let mut x: Vec<f64> = perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                x[i] -= m[i * n + k] * x[k];
            }
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                x[i] -= m[i * n + k] * x[k];
            }
            x[i] /= m[i * n + i];
        }
        x
    };
    let mut inv_norm = 0.0f64;
    for c in 0..n {
        let mut e = vec![0.0; n];
        e[c] = 1.0;
        inv_norm = inv_norm.max(solve(&e).iter().map(|v| v.abs()).sum());
    }
    let a_norm = (0..n)
        .map(|c| (0..n).map(|r| a[r * n + c].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    Ok((rhs.iter().map(|b| solve(b)).collect(), a_norm * inv_norm))
}

#[derive(Debug, Clone, Copy)]
pub struct SpdOptions {
    pub rel_tol: f64,
    /// Defaults to `20 * sqrt(n)`.
    pub max_iter: Option<usize>,
}

impl Default for SpdOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_iter: None,
        }
    }
}

/// Jacobi-preconditioned conjugate gradients.
pub fn solve_spd(k: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    solve_spd_with(k, b, SpdOptions::default())
}

pub fn solve_spd_with(k: &SparseMatrix, b: &[f64], opts: SpdOptions) -> Result<Vec<f64>> {
    let n = k.nrows();
    if b.len() != n || k.ncols() != n {
        return Err(LodError::arg("dimension mismatch in solve_spd"));
    }
    let mut x = vec![0.0; n];
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(x);
    }
    let inv_diag: Vec<f64> = k
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let cap = opts
        .max_iter
        .unwrap_or_else(|| (20.0 * (n as f64).sqrt()).ceil() as usize)
        .max(1);
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut res = 1.0;
    for _ in 0..cap {
        k.matvec_into(&p, &mut q);
        let pq = dot(&p, &q);
        if pq <= 0.0 {
            return Err(LodError::numeric("matrix is not positive definite in CG"));
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        res = norm2(&r) / bnorm;
        if res <= opts.rel_tol {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(LodError::NotConverged {
        iterations: cap,
        residual: res,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct SaddleOptions {
    /// Systems with more primal unknowns use the iterative Schur path.
    pub direct_threshold: usize,
    pub rel_tol: f64,
}

impl Default for SaddleOptions {
    fn default() -> Self {
        Self {
            direct_threshold: 200_000,
            rel_tol: 1e-11,
        }
    }
}

const SCHUR_PIVOT_TOL: f64 = 1e-13;

#[derive(Debug, Clone)]
enum SaddleKind {
    Direct {
        k: BandCholesky,
        schur: Option<DenseCholesky>,
    },
    Iterative {
        k: SparseMatrix,
    },
}

/// Reusable factorization of the block system `[K C^T; C 0]`.
#[derive(Debug, Clone)]
pub struct SaddleSolver {
    c: SparseMatrix,
    kind: SaddleKind,
    rel_tol: f64,
}

impl SaddleSolver {
    pub fn new(k: &SparseMatrix, c: &SparseMatrix) -> Result<Self> {
        Self::with_options(k, c, SaddleOptions::default())
    }

    pub fn with_options(k: &SparseMatrix, c: &SparseMatrix, opts: SaddleOptions) -> Result<Self> {
        let n = k.nrows();
        if k.ncols() != n || c.ncols() != n {
            return Err(LodError::arg(format!(
                "saddle blocks mismatch: K is {}x{}, C is {}x{}",
                k.nrows(),
                k.ncols(),
                c.nrows(),
                c.ncols()
            )));
        }
        let m = c.nrows();
        if m > n {
            return Err(LodError::RankDeficient {
                row: n,
                context: format!("{m} constraints exceed {n} unknowns"),
            });
        }
        let kind = if n <= opts.direct_threshold {
            let kf = BandCholesky::factor(k)?;
            let schur = if m == 0 {
                None
            } else {
                // S = C K^{-1} C^T, one column per constraint row
                let mut s = vec![0.0; m * m];
                let mut z = vec![0.0; n];
                for col in 0..m {
                    z.iter_mut().for_each(|v| *v = 0.0);
                    let (cols, vals) = c.row(col);
                    if cols.is_empty() {
                        return Err(LodError::RankDeficient {
                            row: col,
                            context: "empty constraint row".into(),
                        });
                    }
                    for (&ci, &v) in cols.iter().zip(vals) {
                        z[ci] = v;
                    }
                    kf.solve_in_place_from(&mut z, cols[0]);
                    for row in 0..m {
                        let (rc, rv) = c.row(row);
                        s[row * m + col] = rc.iter().zip(rv).map(|(&ci, &v)| v * z[ci]).sum();
                    }
                }
                for i in 0..m {
                    for j in (i + 1)..m {
                        let avg = 0.5 * (s[i * m + j] + s[j * m + i]);
                        s[i * m + j] = avg;
                        s[j * m + i] = avg;
                    }
                }
                Some(DenseCholesky::factor(&s, m, SCHUR_PIVOT_TOL).map_err(|row| {
                    LodError::RankDeficient {
                        row,
                        context: "Schur complement pivot vanished".into(),
                    }
                })?)
            };
            SaddleKind::Direct { k: kf, schur }
        } else {
            SaddleKind::Iterative { k: k.clone() }
        };
        Ok(Self {
            c: c.clone(),
            kind,
            rel_tol: opts.rel_tol,
        })
    }

    pub fn primal_dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn constraint_count(&self) -> usize {
        self.c.nrows()
    }

    /// Solves `K x + C^T l = r`, `C x = g`.
    pub fn solve(&self, r: &[f64], g: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.primal_dim();
        let m = self.constraint_count();
        if r.len() != n || g.len() != m {
            return Err(LodError::arg("saddle right-hand side has the wrong length"));
        }
        match &self.kind {
            SaddleKind::Direct { k, schur } => {
                let mut kr = r.to_vec();
                k.solve_in_place(&mut kr);
                let Some(s) = schur else {
                    return Ok((kr, Vec::new()));
                };
                let ckr = self.c.matvec(&kr);
                let mut lambda: Vec<f64> = ckr.iter().zip(g).map(|(a, b)| a - b).collect();
                s.solve_in_place(&mut lambda);
                let ctl = self.c.transpose_matvec(&lambda);
                let mut x: Vec<f64> = r.iter().zip(&ctl).map(|(a, b)| a - b).collect();
                k.solve_in_place(&mut x);
                Ok((x, lambda))
            }
            SaddleKind::Iterative { k } => self.solve_iterative(k, r, g),
        }
    }

    fn solve_iterative(&self, k: &SparseMatrix, r: &[f64], g: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let inner = SpdOptions {
            rel_tol: self.rel_tol * 1e-2,
            max_iter: Some(50 * ((k.nrows() as f64).sqrt() as usize + 10)),
        };
        let kinv = |b: &[f64]| solve_spd_with(k, b, inner);
        let kr = kinv(r)?;
        let m = self.constraint_count();
        if m == 0 {
            return Ok((kr, Vec::new()));
        }
        let rhs: Vec<f64> = self.c.matvec(&kr).iter().zip(g).map(|(a, b)| a - b).collect();
        let bnorm = norm2(&rhs);
        let mut lambda = vec![0.0; m];
        if bnorm > 0.0 {
            let apply = |v: &[f64]| -> Result<Vec<f64>> { Ok(self.c.matvec(&kinv(&self.c.transpose_matvec(v))?)) };
            let mut res = rhs.clone();
            let mut p = res.clone();
            let mut rr = dot(&res, &res);
            let cap = 4 * m + 50;
            let mut converged = false;
            for _ in 0..cap {
                let q = apply(&p)?;
                let pq = dot(&p, &q);
                if pq <= 0.0 {
                    return Err(LodError::RankDeficient {
                        row: 0,
                        context: "Schur operator is singular".into(),
                    });
                }
                let alpha = rr / pq;
                for i in 0..m {
                    lambda[i] += alpha * p[i];
                    res[i] -= alpha * q[i];
                }
                let rr_new = dot(&res, &res);
                if rr_new.sqrt() <= self.rel_tol * bnorm {
                    converged = true;
                    break;
                }
                for i in 0..m {
                    p[i] = res[i] + rr_new / rr * p[i];
                }
                rr = rr_new;
            }
            if !converged {
                return Err(LodError::NotConverged {
                    iterations: cap,
                    residual: rr.sqrt() / bnorm,
                });
            }
        }
        let ctl = self.c.transpose_matvec(&lambda);
        let rhs_x: Vec<f64> = r.iter().zip(&ctl).map(|(a, b)| a - b).collect();
        Ok((kinv(&rhs_x)?, lambda))
    }
}

/// One-shot saddle solve, see [`SaddleSolver`].
pub fn solve_saddle(k: &SparseMatrix, c: &SparseMatrix, r: &[f64], g: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    SaddleSolver::new(k, c)?.solve(r, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    struct Lcg(u64);
    impl Lcg {
        fn next(&mut self) -> f64 {
            self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((self.0 >> 11) as f64) / (1u64 << 53) as f64
        }
    }

    fn random_spd(n: usize, rng: &mut Lcg) -> SparseMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, n as f64 * 0.5 + 1.0 + rng.next()));
            for j in 0..i {
                if rng.next() < 0.3 {
                    let v = rng.next() - 0.5;
                    t.push((i, j, v));
                    t.push((j, i, v));
                }
            }
        }
        SparseMatrix::from_triplets(n, n, t)
    }

    fn to_na(a: &SparseMatrix) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(a.nrows(), a.ncols());
        for (r, c, v) in a.triplets() {
            m[(r, c)] = v;
        }
        m
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 0, 2.0), (0, 0, 3.0)]);
        assert_eq!(a.get(0, 0), 4.0);
        assert_eq!(a.get(1, 0), 2.0);
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.transpose().get(0, 1), 2.0);
    }

    #[test]
    fn spd_trivial_cases() {
        let k = SparseMatrix::identity(5);
        assert_eq!(solve_spd(&k, &[0.0; 5]).unwrap(), vec![0.0; 5]);
        let b = [1.0, -2.0, 3.0, 0.5, 7.0];
        let x = solve_spd(&k, &b).unwrap();
        for (a, b) in x.iter().zip(b) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn spd_matches_dense_oracle() {
        let mut rng = Lcg(7);
        let k = random_spd(50, &mut rng);
        let b: Vec<f64> = (0..50).map(|_| rng.next() - 0.5).collect();
        let x = solve_spd(&k, &b).unwrap();
        let oracle = to_na(&k).lu().solve(&DVector::from_vec(b.clone())).unwrap();
        for i in 0..50 {
            assert!((x[i] - oracle[i]).abs() < 1e-9);
        }
        let band = BandCholesky::factor(&k).unwrap().solve(&b);
        for i in 0..50 {
            assert!((band[i] - oracle[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn spd_reports_nonconvergence() {
        let mut rng = Lcg(3);
        let k = random_spd(40, &mut rng);
        let b = vec![1.0; 40];
        let err = solve_spd_with(
            &k,
            &b,
            SpdOptions {
                rel_tol: 1e-14,
                max_iter: Some(2),
            },
        )
        .unwrap_err();
        assert!(matches!(err, LodError::NotConverged { iterations: 2, .. }));
    }

    #[test]
    fn band_cholesky_rejects_indefinite() {
        let a = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]);
        assert!(BandCholesky::factor(&a).is_err());
    }

    fn random_constraints(m: usize, n: usize, rng: &mut Lcg) -> SparseMatrix {
        let mut t = Vec::new();
        for r in 0..m {
            for c in 0..n {
                if rng.next() < 0.4 {
                    t.push((r, c, rng.next() - 0.5));
                }
            }
            t.push((r, (r * 7) % n, 1.0));
        }
        SparseMatrix::from_triplets(m, n, t)
    }

    fn kkt_oracle(k: &SparseMatrix, c: &SparseMatrix, r: &[f64], g: &[f64]) -> DVector<f64> {
        let (n, m) = (k.nrows(), c.nrows());
        let mut a = DMatrix::zeros(n + m, n + m);
        a.view_mut((0, 0), (n, n)).copy_from(&to_na(k));
        let cm = to_na(c);
        a.view_mut((n, 0), (m, n)).copy_from(&cm);
        a.view_mut((0, n), (n, m)).copy_from(&cm.transpose());
        let rhs = DVector::from_iterator(n + m, r.iter().chain(g).copied());
        a.lu().solve(&rhs).unwrap()
    }

    #[test]
    fn saddle_matches_dense_kkt_oracle() {
        let mut rng = Lcg(11);
        let k = random_spd(30, &mut rng);
        let c = random_constraints(4, 30, &mut rng);
        let r: Vec<f64> = (0..30).map(|_| rng.next() - 0.5).collect();
        let g: Vec<f64> = (0..4).map(|_| rng.next()).collect();
        let oracle = kkt_oracle(&k, &c, &r, &g);
        let (x, l) = solve_saddle(&k, &c, &r, &g).unwrap();
        for i in 0..30 {
            assert!((x[i] - oracle[i]).abs() < 1e-9);
        }
        for i in 0..4 {
            assert!((l[i] - oracle[30 + i]).abs() < 1e-9);
        }
        // iterative path on the same system
        let it = SaddleSolver::with_options(
            &k,
            &c,
            SaddleOptions {
                direct_threshold: 0,
                rel_tol: 1e-12,
            },
        )
        .unwrap();
        let (xi, li) = it.solve(&r, &g).unwrap();
        for i in 0..30 {
            assert!((xi[i] - oracle[i]).abs() < 1e-9);
        }
        for i in 0..4 {
            assert!((li[i] - oracle[30 + i]).abs() < 1e-9);
        }
    }

    #[test]
    fn saddle_trivial_cases() {
        let mut rng = Lcg(5);
        let k = random_spd(12, &mut rng);
        let b: Vec<f64> = (0..12).map(|_| rng.next()).collect();
        let (x, l) = solve_saddle(&k, &SparseMatrix::zeros(0, 12), &b, &[]).unwrap();
        assert!(l.is_empty());
        let y = solve_spd(&k, &b).unwrap();
        for i in 0..12 {
            assert!((x[i] - y[i]).abs() < 1e-9);
        }
        let c = random_constraints(3, 12, &mut rng);
        let (x, l) = solve_saddle(&k, &c, &[0.0; 12], &[0.0; 3]).unwrap();
        assert!(x.iter().chain(&l).all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn saddle_detects_rank_deficiency() {
        let mut rng = Lcg(9);
        let k = random_spd(10, &mut rng);
        let row: Vec<(usize, usize, f64)> = (0..10).map(|c| (0, c, 1.0 + c as f64)).collect();
        let mut t = row.clone();
        t.extend(row.iter().map(|&(_, c, v)| (1, c, 2.0 * v)));
        let c = SparseMatrix::from_triplets(2, 10, t);
        let err = SaddleSolver::new(&k, &c).unwrap_err();
        assert!(matches!(err, LodError::RankDeficient { row: 1, .. }), "{err:?}");
    }

    #[test]
    fn dense_lu_and_condition() {
        let a = [4.0, 1.0, 2.0, 3.0];
        let (x, cond) = dense_lu_solve(&a, 2, &[vec![1.0, 0.0]]).unwrap();
        assert!((x[0][0] - 0.3).abs() < 1e-14 && (x[0][1] + 0.2).abs() < 1e-14);
        assert!((cond - 3.0).abs() < 1e-12);
    }

    #[test]
    fn restriction_keeps_submatrix() {
        let mut rng = Lcg(1);
        let k = random_spd(8, &mut rng);
        let sub = k.restrict(&[1, 4, 6]);
        assert_eq!(sub.get(1, 2), k.get(4, 6));
        assert_eq!(sub.get(0, 0), k.get(1, 1));
    }
}
