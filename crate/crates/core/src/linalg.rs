//! Sparse and banded linear algebra used by assembly and time stepping.
//!
//! Banded factorizations and the dense symmetric-definite eigensolver call
//! LAPACK; the CSR container and GMRES are implemented here.

use std::io::Write;
use std::os::raw::{c_char, c_int};

use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Zero matrix with the given pattern; each row's columns must be sorted.
    pub fn from_pattern(n: usize, rows: Vec<Vec<usize>>) -> Self {
        debug_assert_eq!(rows.len(), n);
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for r in rows {
            debug_assert!(r.windows(2).all(|w| w[0] < w[1]));
            cols.extend(r);
            row_ptr.push(cols.len());
        }
        let vals = vec![0.0; cols.len()];
        CsrMatrix {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    /// Same pattern, all values zero.
    pub fn zeros_like(&self) -> Self {
        CsrMatrix {
            vals: vec![0.0; self.vals.len()],
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    /// Position of `(i, j)` in the value array, if stored.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.cols[start..self.row_ptr[i + 1]]
            .binary_search(&j)
            .ok()
            .map(|p| start + p)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |p| self.vals[p])
    }

    /// Adds `v` to a stored entry. Panics if `(i, j)` is not in the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let p = self
            .position(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside sparsity pattern"));
        self.vals[p] += v;
    }

    pub fn values(&self) -> &[f64] {
        &self.vals
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.vals
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            *yi = c.iter().zip(v).map(|(&j, a)| a * x[j]).sum();
        }
    }

    /// `alpha A + beta B` for matrices sharing one pattern.
    pub fn linear_combination(&self, alpha: f64, other: &CsrMatrix, beta: f64) -> CsrMatrix {
        assert_eq!(self.cols, other.cols, "patterns differ");
        let vals = self
            .vals
            .iter()
            .zip(&other.vals)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        CsrMatrix {
            vals,
            ..self.clone()
        }
    }

    /// Largest `|a_ij - a_ji|` over stored entries.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (&j, a) in c.iter().zip(v) {
                worst = worst.max((a - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Writes `row col value` lines (zero-based) for every stored entry.
    pub fn write_coordinate<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (&j, a) in c.iter().zip(v) {
                writeln!(out, "{i} {j} {a:.17e}")?;
            }
        }
        Ok(())
    }
}

fn lapack_info(routine: &str, info: c_int) -> Result<()> {
    if info == 0 {
        Ok(())
    } else {
        Err(Error::Solver(format!("{routine} returned info = {info}")))
    }
}

/// LU factorization with partial pivoting of a general band matrix.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ab: Vec<f64>,
    ipiv: Vec<c_int>,
}

impl BandedLu {
    /// Collects entries from `fill`, which is called with a setter accepting
    /// `(i, j, value)` triples (added, so duplicates accumulate), then
    /// factorizes. Entries outside the band are an error.
    pub fn factor<F>(n: usize, kl: usize, ku: usize, fill: F) -> Result<Self>
    where
        F: FnOnce(&mut dyn FnMut(usize, usize, f64)),
    {
        let ldab = 2 * kl + ku + 1;
        let mut ab = vec![0.0; ldab * n];
        let mut outside = None;
        {
            let mut set = |i: usize, j: usize, v: f64| {
                if i > j + kl || j > i + ku {
                    outside = Some((i, j));
                    return;
                }
                ab[j * ldab + kl + ku + i - j] += v;
            };
            fill(&mut set);
        }
        if let Some((i, j)) = outside {
            return Err(Error::Solver(format!("entry ({i}, {j}) outside band")));
        }
        let mut ipiv = vec![0; n];
        let mut info = 0;
        let (nn, ikl, iku, ild) = (n as c_int, kl as c_int, ku as c_int, ldab as c_int);
        unsafe {
            lapack_sys::dgbtrf_(&nn, &nn, &ikl, &iku, ab.as_mut_ptr(), &ild, ipiv.as_mut_ptr(), &mut info);
        }
        lapack_info("dgbtrf", info)?;
        Ok(BandedLu { n, kl, ku, ab, ipiv })
    }

    pub fn solve(&self, b: &mut [f64]) -> Result<()> {
        assert_eq!(b.len(), self.n);
        let ldab = (2 * self.kl + self.ku + 1) as c_int;
        let (nn, ikl, iku, one) = (self.n as c_int, self.kl as c_int, self.ku as c_int, 1);
        let trans = b'N' as c_char;
        let mut info = 0;
        unsafe {
            lapack_sys::dgbtrs_(
                &trans,
                &nn,
                &ikl,
                &iku,
                &one,
                self.ab.as_ptr(),
                &ldab,
                self.ipiv.as_ptr(),
                b.as_mut_ptr(),
                &nn,
                &mut info,
            );
        }
        lapack_info("dgbtrs", info)
    }
}

/// Cholesky factorization of a symmetric positive definite band matrix.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    kd: usize,
    ab: Vec<f64>,
}

impl BandedCholesky {
    /// `fill` receives a setter for the upper triangle (`j >= i`); lower
    /// entries passed to it are ignored.
    pub fn factor<F>(n: usize, kd: usize, fill: F) -> Result<Self>
    where
        F: FnOnce(&mut dyn FnMut(usize, usize, f64)),
    {
        let ldab = kd + 1;
        let mut ab = vec![0.0; ldab * n];
        let mut outside = None;
        {
            let mut set = |i: usize, j: usize, v: f64| {
                if j < i {
                    return;
                }
                if j - i > kd {
                    outside = Some((i, j));
                    return;
                }
                ab[j * ldab + kd + i - j] += v;
            };
            fill(&mut set);
        }
        if let Some((i, j)) = outside {
            return Err(Error::Solver(format!("entry ({i}, {j}) outside band")));
        }
        let uplo = b'U' as c_char;
        let (nn, ikd, ild) = (n as c_int, kd as c_int, ldab as c_int);
        let mut info = 0;
        unsafe {
            lapack_sys::dpbtrf_(&uplo, &nn, &ikd, ab.as_mut_ptr(), &ild, &mut info);
        }
        lapack_info("dpbtrf", info)?;
        Ok(BandedCholesky { n, kd, ab })
    }

    /// Factorizes a symmetric CSR matrix restricted to `free` rows/columns;
    /// other rows become identity rows.
    pub fn from_csr(a: &CsrMatrix, free: &[bool], kd: usize) -> Result<Self> {
        Self::factor(a.dim(), kd, |set| {
            for (i, &fi) in free.iter().enumerate() {
                if !fi {
                    set(i, i, 1.0);
                    continue;
                }
                let (c, v) = a.row(i);
                for (&j, &x) in c.iter().zip(v) {
                    if free[j] {
                        set(i, j, x);
                    }
                }
            }
        })
    }

    pub fn solve(&self, b: &mut [f64]) -> Result<()> {
        assert_eq!(b.len(), self.n);
        let uplo = b'U' as c_char;
        let (nn, ikd, ild, one) = (self.n as c_int, self.kd as c_int, (self.kd + 1) as c_int, 1);
        let mut info = 0;
        unsafe {
            lapack_sys::dpbtrs_(&uplo, &nn, &ikd, &one, self.ab.as_ptr(), &ild, b.as_mut_ptr(), &nn, &mut info);
        }
        lapack_info("dpbtrs", info)
    }
}

/// Eigenpairs of the dense symmetric-definite pencil `A x = lambda B x`.
///
/// `a` and `b` are column-major `n x n`. Returns ascending eigenvalues and
/// `B`-orthonormal eigenvectors stored column by column.
pub fn generalized_symmetric_eigen(
    mut a: Vec<f64>,
    mut b: Vec<f64>,
    n: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n * n);
    let mut w = vec![0.0; n];
    let itype = 1;
    let jobz = b'V' as c_char;
    let uplo = b'U' as c_char;
    let nn = n as c_int;
    let mut info = 0;
    let mut work_query = 0.0;
    let mut iwork_query: c_int = 0;
    let query: c_int = -1;
    unsafe {
        lapack_sys::dsygvd_(
            &itype, &jobz, &uplo, &nn, a.as_mut_ptr(), &nn, b.as_mut_ptr(), &nn,
            w.as_mut_ptr(), &mut work_query, &query, &mut iwork_query, &query, &mut info,
        );
    }
    lapack_info("dsygvd workspace query", info)?;
    let lwork = work_query as c_int;
    let liwork = iwork_query;
    let mut work = vec![0.0; lwork.max(1) as usize];
    let mut iwork = vec![0; liwork.max(1) as usize];
    unsafe {
        lapack_sys::dsygvd_(
            &itype, &jobz, &uplo, &nn, a.as_mut_ptr(), &nn, b.as_mut_ptr(), &nn,
            w.as_mut_ptr(), work.as_mut_ptr(), &lwork, iwork.as_mut_ptr(), &liwork, &mut info,
        );
    }
    lapack_info("dsygvd", info)?;
    Ok((w, a))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterativeStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Restarted GMRES for `A x = b` starting from `x`, stopping when the
/// residual falls to `tol * ||b||`.
pub fn gmres<F>(
    apply: F,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    restart: usize,
    max_iters: usize,
) -> Result<IterativeStats>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(IterativeStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let restart = restart.max(1).min(n.max(1));
    let mut ax = vec![0.0; n];
    let mut total = 0;
    loop {
        apply(x, &mut ax);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm2(&r);
        let rel = beta / bnorm;
        if rel <= tol {
            return Ok(IterativeStats {
                iterations: total,
                relative_residual: rel,
            });
        }
        if total >= max_iters {
            return Err(Error::IterationLimit {
                iterations: total,
                residual: rel,
            });
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        // Hessenberg columns, Givens rotations, rotated right-hand side.
        let mut hess: Vec<Vec<f64>> = Vec::new();
        let mut cs: Vec<f64> = Vec::new();
        let mut sn: Vec<f64> = Vec::new();
        let mut g = vec![beta];
        let mut w = vec![0.0; n];
        for k in 0..restart {
            apply(&basis[k], &mut w);
            let mut h = vec![0.0; k + 2];
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(&w, v);
                h[i] = hij;
                w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= hij * vi);
            }
            // Second Gram-Schmidt pass for stability.
            for (i, v) in basis.iter().enumerate() {
                let c = dot(&w, v);
                h[i] += c;
                w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= c * vi);
            }
            let hn = norm2(&w);
            h[k + 1] = hn;
            for i in 0..k {
                let t = cs[i] * h[i] + sn[i] * h[i + 1];
                h[i + 1] = -sn[i] * h[i] + cs[i] * h[i + 1];
                h[i] = t;
            }
            let rho = h[k].hypot(h[k + 1]);
            let (c, s) = if rho == 0.0 { (1.0, 0.0) } else { (h[k] / rho, h[k + 1] / rho) };
            cs.push(c);
            sn.push(s);
            h[k] = rho;
            h[k + 1] = 0.0;
            g.push(-s * g[k]);
            g[k] *= c;
            hess.push(h);
            total += 1;
            let done = g[k + 1].abs() / bnorm <= tol || total >= max_iters || hn == 0.0;
            if !done {
                basis.push(w.iter().map(|v| v / hn).collect());
            }
            if done || k + 1 == restart {
                let m = k + 1;
                let mut y = vec![0.0; m];
                for i in (0..m).rev() {
                    let mut s = g[i];
                    for j in i + 1..m {
                        s -= hess[j][i] * y[j];
                    }
                    y[i] = s / hess[i][i];
                }
                for (j, yj) in y.iter().enumerate() {
                    x.iter_mut().zip(&basis[j]).for_each(|(xi, vi)| *xi += yj * vi);
                }
                break;
            }
        }
    }
}
