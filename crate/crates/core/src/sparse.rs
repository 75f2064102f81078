//! Compressed sparse row storage and the thin bridge to the sparse LU used
//! for every linear solve.

use faer::prelude::*;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::Col;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Self {
        triplets.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            debug_assert!(r < nrows && c < ncols);
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: diag.to_vec(),
        }
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

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Position of entry (r, c) in the value array, if structurally present.
    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        let row = &self.col_idx[self.row_ptr[r]..self.row_ptr[r + 1]];
        row.binary_search(&c).ok().map(|k| self.row_ptr[r] + k)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.position(r, c).map_or(0.0, |k| self.values[k])
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yr = acc;
        }
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nrows);
        let mut acc = 0.0;
        for (r, xr) in x.iter().enumerate() {
            if *xr == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                row += self.values[k] * y[self.col_idx[k]];
            }
            acc += xr * row;
        }
        acc
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows)
            .map(|r| self.row(r).map(|(_, v)| v).sum())
            .collect()
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.nrows == self.ncols
            && self
                .triplets()
                .all(|(r, c, v)| (v - self.get(c, r)).abs() <= tol * (1.0 + v.abs()))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, c, v) in self.triplets() {
            d[r][c] += v;
        }
        d
    }
}

/// Symbolic LU analysis shared between factorizations with one pattern.
#[derive(Default)]
pub struct SymbolicCache(std::sync::OnceLock<(usize, SymbolicLu<usize>)>);

/// Sparse LU factorization of a square system.
pub struct SparseLu {
    n: usize,
    lu: Lu<usize, f64>,
}

impl SparseLu {
    pub fn factor(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        Self::factor_reusing(n, triplets, &SymbolicCache::default())
    }

    /// Factors while reusing the symbolic analysis stored in `cache`; every
    /// call sharing a cache must pass the same sparsity pattern.
    pub fn factor_reusing(
        n: usize,
        triplets: &[(usize, usize, f64)],
        cache: &SymbolicCache,
    ) -> Result<Self> {
        let entries: Vec<Triplet<usize, usize, f64>> = triplets
            .iter()
            .map(|&(r, c, v)| Triplet::new(r, c, v))
            .collect();
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &entries)
            .map_err(|e| Error::Solver(format!("sparse assembly failed: {e:?}")))?;
        let symbolic = match cache.0.get() {
            Some((m, s)) if *m == n => s.clone(),
            _ => {
                let s = SymbolicLu::try_new(mat.symbolic())
                    .map_err(|e| Error::Solver(format!("symbolic LU failed: {e:?}")))?;
                let _ = cache.0.set((n, s.clone()));
                s
            }
        };
        let lu = Lu::try_new_with_symbolic(symbolic, mat.as_ref())
            .map_err(|e| Error::Solver(format!("numeric LU failed: {e:?}")))?;
        Ok(Self { n, lu })
    }

    pub fn from_csr(a: &CsrMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Solver("matrix is not square".into()));
        }
        let t: Vec<_> = a.triplets().collect();
        Self::factor(a.nrows(), &t)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(b.len(), self.n);
        let mut rhs = Col::<f64>::from_fn(self.n, |i| b[i]);
        self.lu.solve_in_place(rhs.as_mat_mut());
        let x: Vec<f64> = (0..self.n).map(|i| rhs[i]).collect();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver(
                "singular system (non-finite solution)".into(),
            ));
        }
        Ok(x)
    }
}

/// Solver for the saddle-point system `B y + C ν = b`, `Cᵀ y = 0`, where `B`
/// is symmetric positive semidefinite with a known kernel basis `Z` and
/// `ZᵀC` is invertible. One unknown per kernel vector is pinned so that only
/// a sparse nonsingular matrix is factored.
pub struct KernelSolver {
    lu: SparseLu,
    pins: Vec<usize>,
    kernel: Vec<Vec<f64>>,
    constraints: Vec<Vec<f64>>,
}

fn small_solve(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(r, &v)| r.iter().copied().chain([v]).collect())
        .collect();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
            .unwrap_or(c);
        m.swap(c, p);
        if m[c][c] == 0.0 {
            return Err(Error::Solver("singular constraint coupling".into()));
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c] / m[c][c];
                for k in c..=n {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    Ok((0..n).map(|i| m[i][n] / m[i][i]).collect())
}

impl KernelSolver {
    pub fn new(
        n: usize,
        triplets: &[(usize, usize, f64)],
        kernel: Vec<Vec<f64>>,
        constraints: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if kernel.len() != constraints.len() {
            return Err(Error::Solver("kernel and constraint counts differ".into()));
        }
        // Greedy pivoting on the kernel basis picks rows with Z[pins] invertible.
        let mut work = kernel.clone();
        let mut pins = Vec::with_capacity(kernel.len());
        for j in 0..work.len() {
            let (i, v) = work[j]
                .iter()
                .enumerate()
                .filter(|(i, _)| !pins.contains(i))
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(i, v)| (i, *v))
                .ok_or_else(|| Error::Solver("empty kernel vector".into()))?;
            if v == 0.0 {
                return Err(Error::Solver(
                    "kernel vectors are linearly dependent".into(),
                ));
            }
            for k in j + 1..work.len() {
                let f = work[k][i] / v;
                let pivot = work[j].clone();
                work[k]
                    .iter_mut()
                    .zip(&pivot)
                    .for_each(|(x, p)| *x -= f * p);
            }
            pins.push(i);
        }
        let mut t: Vec<(usize, usize, f64)> = triplets
            .iter()
            .copied()
            .filter(|(r, c, _)| !pins.contains(r) && !pins.contains(c))
            .collect();
        t.extend(pins.iter().map(|&i| (i, i, 1.0)));
        Ok(Self {
            lu: SparseLu::factor(n, &t)?,
            pins,
            kernel,
            constraints,
        })
    }

    /// Returns `(y, ν)`.
    pub fn solve(&self, b: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let nk = self.kernel.len();
        let zc: Vec<Vec<f64>> = (0..nk)
            .map(|i| {
                (0..nk)
                    .map(|j| dot(&self.kernel[i], &self.constraints[j]))
                    .collect()
            })
            .collect();
        let zb: Vec<f64> = self.kernel.iter().map(|z| dot(z, b)).collect();
        let nu = small_solve(&zc, &zb)?;
        let mut r = b.to_vec();
        for (c, v) in self.constraints.iter().zip(&nu) {
            r.iter_mut().zip(c).for_each(|(x, c)| *x -= v * c);
        }
        for &i in &self.pins {
            r[i] = 0.0;
        }
        let mut y = self.lu.solve(&r)?;
        let cz: Vec<Vec<f64>> = (0..nk)
            .map(|i| {
                (0..nk)
                    .map(|j| dot(&self.constraints[i], &self.kernel[j]))
                    .collect()
            })
            .collect();
        let cy: Vec<f64> = self.constraints.iter().map(|c| -dot(c, &y)).collect();
        let coef = small_solve(&cz, &cy)?;
        for (z, a) in self.kernel.iter().zip(&coef) {
            y.iter_mut().zip(z).for_each(|(x, z)| *x += a * z);
        }
        Ok((y, nu))
    }
}

/// Linear embedding of a reduced coordinate vector into the full nodal vector,
/// with at most one nonzero per full row. Used to eliminate trace-constrained
/// boundary unknowns.
#[derive(Clone, Debug)]
pub struct Reduction {
    map: Vec<Option<(usize, f64)>>,
    n_reduced: usize,
}

impl Reduction {
    pub fn identity(n: usize) -> Self {
        Self {
            map: (0..n).map(|i| Some((i, 1.0))).collect(),
            n_reduced: n,
        }
    }

    /// Full rows listed in `tied` are expressed as `factor * full[target]`,
    /// where `target` is itself a free full row.
    pub fn with_ties(n_full: usize, tied: &[(usize, usize, f64)]) -> Self {
        let mut tie_of: Vec<Option<(usize, f64)>> = vec![None; n_full];
        for &(row, target, factor) in tied {
            tie_of[row] = Some((target, factor));
        }
        let mut red_index = vec![usize::MAX; n_full];
        let mut n_reduced = 0;
        for i in 0..n_full {
            if tie_of[i].is_none() {
                red_index[i] = n_reduced;
                n_reduced += 1;
            }
        }
        let map = (0..n_full)
            .map(|i| match tie_of[i] {
                None => Some((red_index[i], 1.0)),
                Some((t, f)) => {
                    debug_assert!(tie_of[t].is_none());
                    if f == 0.0 {
                        None
                    } else {
                        Some((red_index[t], f))
                    }
                }
            })
            .collect();
        Self { map, n_reduced }
    }

    pub fn n_full(&self) -> usize {
        self.map.len()
    }

    pub fn n_reduced(&self) -> usize {
        self.n_reduced
    }

    pub fn is_identity(&self) -> bool {
        self.n_reduced == self.map.len()
    }

    pub fn entry(&self, full: usize) -> Option<(usize, f64)> {
        self.map[full]
    }

    pub fn expand(&self, reduced: &[f64]) -> Vec<f64> {
        assert_eq!(reduced.len(), self.n_reduced);
        self.map
            .iter()
            .map(|e| e.map_or(0.0, |(j, f)| f * reduced[j]))
            .collect()
    }

    /// Applies the transpose: accumulates full-space functionals onto reduced slots.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        assert_eq!(full.len(), self.map.len());
        let mut out = vec![0.0; self.n_reduced];
        for (i, e) in self.map.iter().enumerate() {
            if let Some((j, f)) = e {
                out[*j] += f * full[i];
            }
        }
        out
    }

    /// Projects a full vector onto the reduced coordinates by sampling free rows.
    pub fn sample(&self, full: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_reduced];
        for (i, e) in self.map.iter().enumerate() {
            if let Some((j, f)) = e {
                if *f == 1.0 {
                    out[*j] = full[i];
                }
            }
        }
        out
    }
}

/// Triplets of `leftᵀ A right`, shifted by the given row/column offsets.
pub fn reduced_triplets(
    a: &CsrMatrix,
    left: &Reduction,
    right: &Reduction,
    scale: f64,
    row_offset: usize,
    col_offset: usize,
    out: &mut Vec<(usize, usize, f64)>,
) {
    for (r, c, v) in a.triplets() {
        if let (Some((rr, fr)), Some((cc, fc))) = (left.entry(r), right.entry(c)) {
            out.push((rr + row_offset, cc + col_offset, scale * fr * v * fc));
        }
    }
}

/// Conjugate gradients with Jacobi preconditioning for symmetric positive
/// definite systems (mass matrices).
pub fn pcg(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = b.len();
    let diag: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    if diag.iter().any(|d| *d <= 0.0) {
        return Err(Error::Solver("pcg needs a positive diagonal".into()));
    }
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    for _ in 0..max_iter {
        a.mul_vec_into(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= tol * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Solver("pcg did not converge".into()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}
