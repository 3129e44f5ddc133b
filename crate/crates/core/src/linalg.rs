//! Compressed sparse row storage and a preconditioned conjugate-gradient
//! solver with optional deflation of the constant nullspace.

use std::collections::BTreeSet;
use std::io::Write;

use rayon::prelude::*;

use crate::fe_space::DofMap;
use crate::{Error, Result};

pub const SYMMETRY_TOL: f64 = 1e-12;

/// Rows above this size use a parallel matrix-vector product.
const PARALLEL_ROWS: usize = 4096;

pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    fn apply(&self, x: &[f64], y: &mut [f64]);

    /// Diagonal entries, when available, for Jacobi preconditioning.
    fn diagonal(&self) -> Option<Vec<f64>> {
        None
    }
}

/// General (possibly rectangular) CSR matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Zero matrix with the pattern induced by element connectivity: every
    /// row DOF of an element couples to every column DOF of the same element.
    pub fn from_element_pattern<'a>(
        nrows: usize,
        ncols: usize,
        elements: impl Iterator<Item = (&'a [usize], &'a [usize])>,
    ) -> Self {
        let mut rows: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nrows];
        for (r, c) in elements {
            for &i in r {
                rows[i].extend(c.iter().copied());
            }
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for row in rows {
            cols.extend(row);
            row_ptr.push(cols.len());
        }
        let vals = vec![0.0; cols.len()];
        Self { nrows, ncols, row_ptr, cols, vals }
    }

    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(i, j, v) in triplets {
            rows[i].push((j, v));
        }
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            for (j, v) in row {
                if cols.len() > *row_ptr.last().unwrap() && *cols.last().unwrap() == j {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { nrows, ncols, row_ptr, cols, vals }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Adds `v` to an entry inside the pattern. Panics on a pattern miss.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        let k = self.cols[range.clone()]
            .binary_search(&j)
            .unwrap_or_else(|_| panic!("entry ({i}, {j}) outside sparsity pattern"));
        self.vals[range.start + k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[range.clone()].binary_search(&j) {
            Ok(k) => self.vals[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()].iter().copied().zip(self.vals[range].iter().copied())
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn scale(&mut self, s: f64) {
        self.vals.iter_mut().for_each(|v| *v *= s);
    }

    /// `a·self + b·other`; patterns are merged.
    pub fn linear_combination(&self, a: f64, other: &CsrMatrix, b: f64) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut triplets = Vec::with_capacity(self.nnz() + other.nnz());
        triplets.extend(self.entries().map(|(i, j, v)| (i, j, a * v)));
        triplets.extend(other.entries().map(|(i, j, v)| (i, j, b * v)));
        CsrMatrix::from_triplets(self.nrows, self.ncols, &triplets)
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        let row = |i: usize| -> f64 {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            s
        };
        if self.nrows >= PARALLEL_ROWS {
            y.par_iter_mut().enumerate().for_each(|(i, yi)| *yi = row(i));
        } else {
            y.iter_mut().enumerate().for_each(|(i, yi)| *yi = row(i));
        }
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec(x, &mut y);
        y
    }

    /// `y = selfᵀ x`, accumulated serially in row order.
    pub fn transpose_mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        y.fill(0.0);
        for i in 0..self.nrows {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.cols[k]] += self.vals[k] * xi;
            }
        }
    }

    pub fn transpose_apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        self.transpose_mul_vec(x, &mut y);
        y
    }

    /// Keeps the rows listed in `rows` and the columns listed in `cols`.
    pub fn submatrix(&self, rows: &DofMap, cols: &DofMap) -> CsrMatrix {
        let mut row_ptr = vec![0];
        let mut c = Vec::new();
        let mut v = Vec::new();
        for &i in rows.free() {
            for (j, val) in self.row(i) {
                if let Some(jj) = cols.position(j) {
                    c.push(jj);
                    v.push(val);
                }
            }
            row_ptr.push(c.len());
        }
        CsrMatrix {
            nrows: rows.reduced_dim(),
            ncols: cols.reduced_dim(),
            row_ptr,
            cols: c,
            vals: v,
        }
    }

    /// Coordinate dump, one `i j value` line per stored entry (0-based).
    pub fn write_coo<W: Write>(&self, mut w: W) -> Result<()> {
        for (i, j, v) in self.entries() {
            writeln!(w, "{i} {j} {v:e}")?;
        }
        Ok(())
    }
}

/// Square matrix whose symmetry has been checked. The full pattern is
/// stored.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSym {
    inner: CsrMatrix,
}

impl SparseSym {
    pub fn new(inner: CsrMatrix) -> Result<Self> {
        if inner.nrows != inner.ncols {
            return Err(Error::DimensionMismatch {
                expected: inner.nrows,
                got: inner.ncols,
            });
        }
        for (i, j, v) in inner.entries() {
            let gap = (v - inner.get(j, i)).abs();
            if gap > SYMMETRY_TOL * (1.0 + v.abs()) {
                return Err(Error::NotSymmetric { row: i, col: j, gap });
            }
        }
        Ok(Self { inner })
    }

    pub fn csr(&self) -> &CsrMatrix {
        &self.inner
    }

    pub fn n(&self) -> usize {
        self.inner.nrows
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(i, j)
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        self.inner.apply_vec(x)
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.apply_vec(x))
    }

    pub fn bilinear_form(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.apply_vec(y))
    }

    pub fn scaled(&self, s: f64) -> SparseSym {
        let mut inner = self.inner.clone();
        inner.scale(s);
        SparseSym { inner }
    }

    pub fn linear_combination(&self, a: f64, other: &SparseSym, b: f64) -> SparseSym {
        SparseSym {
            inner: self.inner.linear_combination(a, &other.inner, b),
        }
    }

    /// Symmetric elimination of the DOFs not kept by `map`.
    pub fn restrict(&self, map: &DofMap) -> SparseSym {
        SparseSym {
            inner: self.inner.submatrix(map, map),
        }
    }

    pub fn write_coo<W: Write>(&self, w: W) -> Result<()> {
        self.inner.write_coo(w)
    }
}

impl LinearOperator for SparseSym {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.inner.mul_vec(x, y)
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some((0..self.n()).map(|i| self.inner.get(i, i)).collect())
    }
}

/// Weights `m_i = ∫ φ_i` describing the zero-mean constraint `mᵀx = 0`;
/// the operator kernel is assumed to be the all-ones vector.
#[derive(Clone, Debug)]
pub struct DeflationVector {
    weights: Vec<f64>,
    total: f64,
}

impl DeflationVector {
    pub fn new(weights: Vec<f64>) -> Self {
        let total = weights.iter().sum();
        Self { weights, total }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `Σ m_i`, i.e. the domain measure.
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn constraint_value(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x)
    }

    /// Shifts `x` by a constant so that `mᵀx = 0`.
    pub fn enforce(&self, x: &mut [f64]) {
        let shift = self.constraint_value(x) / self.total;
        x.iter_mut().for_each(|v| *v -= shift);
    }
}

/// Removes the component along the all-ones vector.
fn project_out_constants(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preconditioner {
    None,
    Jacobi,
}

#[derive(Clone, Copy, Debug)]
pub struct CgOptions<'a> {
    pub tol: f64,
    /// `None` means `10·n`.
    pub max_iter: Option<usize>,
    pub precond: Preconditioner,
    pub deflate: Option<&'a DeflationVector>,
}

impl Default for CgOptions<'_> {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: None,
            precond: Preconditioner::Jacobi,
            deflate: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

pub fn cg_solve(a: &dyn LinearOperator, b: &[f64], opts: &CgOptions) -> Result<CgOutcome> {
    cg_solve_from(a, b, None, opts)
}

pub fn cg_solve_from(a: &dyn LinearOperator, b: &[f64], x0: Option<&[f64]>, opts: &CgOptions) -> Result<CgOutcome> {
    cg_solve_monitored(a, b, x0, opts, &mut |_, _| {})
}

/// Preconditioned CG. `monitor` sees every iterate `(k, x_k)`, starting with
/// the initial guess at `k = 0`.
///
/// Convergence means `‖b − Ax‖₂ ≤ tol·‖b‖₂` for the true residual. With
/// deflation, `b` and every residual are projected off the constants and the
/// result is shifted to satisfy `mᵀx = 0`.
pub fn cg_solve_monitored(
    a: &dyn LinearOperator,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &CgOptions,
    monitor: &mut dyn FnMut(usize, &[f64]),
) -> Result<CgOutcome> {
    let n = a.dim();
    if n == 0 {
        return Err(Error::EmptySystem);
    }
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    let max_iter = opts.max_iter.unwrap_or(10 * n);
    let mut rhs = b.to_vec();
    if opts.deflate.is_some() {
        project_out_constants(&mut rhs);
    }
    let bnorm = norm(&rhs);
    let mut x = match x0 {
        Some(x0) => {
            if x0.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: x0.len() });
            }
            x0.to_vec()
        }
        None => vec![0.0; n],
    };
    monitor(0, &x);
    if bnorm == 0.0 {
        let x = vec![0.0; n];
        return Ok(CgOutcome { x, iterations: 0, residual: 0.0 });
    }

    let inv_diag: Option<Vec<f64>> = match opts.precond {
        Preconditioner::Jacobi => a.diagonal().map(|d| {
            d.into_iter()
                .map(|v| if v.abs() > 0.0 { 1.0 / v } else { 1.0 })
                .collect()
        }),
        Preconditioner::None => None,
    };
    let precondition = |r: &[f64], z: &mut [f64]| match &inv_diag {
        Some(d) => z.iter_mut().zip(r.iter().zip(d)).for_each(|(z, (r, d))| *z = r * d),
        None => z.copy_from_slice(r),
    };
    let true_residual = |x: &[f64], r: &mut [f64]| {
        a.apply(x, r);
        r.iter_mut().zip(&rhs).for_each(|(r, b)| *r = b - *r);
        if opts.deflate.is_some() {
            project_out_constants(r);
        }
    };

    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut q = vec![0.0; n];
    true_residual(&x, &mut r);
    let mut rel = norm(&r) / bnorm;
    let mut history = vec![rel];
    let mut iterations = 0;

    'outer: while rel > opts.tol {
        precondition(&r, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        loop {
            if iterations >= max_iter {
                return Err(Error::NonConvergence { iterations, residual: rel, history });
            }
            a.apply(&p, &mut q);
            let pq = dot(&p, &q);
            if !pq.is_finite() {
                return Err(Error::Divergence { iteration: iterations });
            }
            if pq <= 0.0 {
                // breakdown: restart from the true residual
                true_residual(&x, &mut r);
                rel = norm(&r) / bnorm;
                if rel <= opts.tol || iterations >= max_iter {
                    break 'outer;
                }
                return Err(Error::NonConvergence { iterations, residual: rel, history });
            }
            let alpha = rz / pq;
            x.iter_mut().zip(&p).for_each(|(x, p)| *x += alpha * p);
            r.iter_mut().zip(&q).for_each(|(r, q)| *r -= alpha * q);
            if opts.deflate.is_some() {
                project_out_constants(&mut r);
            }
            iterations += 1;
            monitor(iterations, &x);
            rel = norm(&r) / bnorm;
            if !rel.is_finite() {
                return Err(Error::Divergence { iteration: iterations });
            }
            history.push(rel);
            if rel <= opts.tol {
                // confirm with the true residual; restart if it drifted
                true_residual(&x, &mut r);
                rel = norm(&r) / bnorm;
                if rel <= opts.tol {
                    break 'outer;
                }
                continue 'outer;
            }
            precondition(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            p.iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
        }
    }
    if let Some(defl) = opts.deflate {
        defl.enforce(&mut x);
    }
    Ok(CgOutcome { x, iterations, residual: rel })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
