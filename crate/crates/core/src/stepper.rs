//! Time marching of the mixed scheme for `(U^n, V^n)`.
//!
//! Every step solves a block system
//!
//! ```text
//! [ a M - c J   c (S + M) ] [U]   [r1]
//! [ S           -M        ] [V] = [r2]
//! ```
//!
//! with `a = A^n_0`, `c = 1 - σ`, and `J` the Jacobian of the reaction term
//! (first step only). Pinned coefficients get identity rows.

use std::cell::RefCell;
use std::fmt;
use std::str::FromStr;

use log::debug;

use crate::assembly::{assemble_nonlinear, nonlinear_load, solve_spd, AssembledOperators, WeightedSpace};
use crate::error::{Error, Result};
use crate::fractional::{GradedMesh, L21Sigma};
use crate::linalg::{dot, generalized_symmetric_eigen, gmres, norm2, BandedCholesky, BandedLu, CsrMatrix};

/// Linear solver used for the per-step block systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMode {
    /// Generalized eigendecomposition of `(S, M)` computed once, reused by
    /// every linear step. Newton steps fall back to `Direct`.
    Modal,
    /// Conjugate gradients on the system reduced to `U`, preconditioned by
    /// a banded factorization refreshed every step.
    #[default]
    Reduced,
    /// Banded LU with partial pivoting, refactorized every step.
    Direct,
    /// Restarted GMRES with symmetric diagonal scaling.
    Krylov,
}

impl fmt::Display for SolverMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverMode::Modal => "modal",
            SolverMode::Reduced => "reduced",
            SolverMode::Direct => "direct",
            SolverMode::Krylov => "krylov",
        })
    }
}

impl FromStr for SolverMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "modal" => Ok(SolverMode::Modal),
            "reduced" => Ok(SolverMode::Reduced),
            "direct" => Ok(SolverMode::Direct),
            "krylov" => Ok(SolverMode::Krylov),
            other => Err(Error::Config(format!("unknown solver mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperSettings {
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    pub solver: SolverMode,
    pub krylov_tol: f64,
    pub krylov_restart: usize,
    pub krylov_max_iters: usize,
    /// Include `f(u) = u - u^3`; switching it off leaves a linear problem.
    pub reaction: bool,
}

impl Default for StepperSettings {
    fn default() -> Self {
        StepperSettings {
            newton_tol: 1e-12,
            newton_max_iters: 10,
            solver: SolverMode::Reduced,
            krylov_tol: 1e-12,
            krylov_restart: 200,
            krylov_max_iters: 20_000,
            reaction: true,
        }
    }
}

/// 2x2 block matrix over one dof set, with pinned rows replaced by identity.
#[derive(Debug, Clone)]
pub struct BlockMatrix {
    pub a11: CsrMatrix,
    pub a12: CsrMatrix,
    pub a21: CsrMatrix,
    pub a22: CsrMatrix,
    pub free: Vec<bool>,
}

/// Diagnostics of one block solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSolveStats {
    /// `||A x - b|| / ||b||` of the full block system.
    pub residual: f64,
    /// Krylov iterations; zero for factorizations.
    pub iterations: usize,
}

impl BlockMatrix {
    pub fn dim(&self) -> usize {
        self.a11.dim()
    }

    /// `(y1, y2) = A (x1, x2)`. Pinned columns are ignored, as in the
    /// factorized system.
    pub fn apply(&self, x1: &[f64], x2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.dim();
        let mask = |x: &[f64]| -> Vec<f64> { x.iter().zip(&self.free).map(|(v, &f)| if f { *v } else { 0.0 }).collect() };
        let (m1, m2) = (mask(x1), mask(x2));
        let mut y1 = self.a11.mul_vec(&m1);
        let mut y2 = self.a21.mul_vec(&m1);
        let t1 = self.a12.mul_vec(&m2);
        let t2 = self.a22.mul_vec(&m2);
        for i in 0..n {
            if self.free[i] {
                y1[i] += t1[i];
                y2[i] += t2[i];
            } else {
                y1[i] = x1[i];
                y2[i] = x2[i];
            }
        }
        (y1, y2)
    }

    /// `||A x - b|| / ||b||` (absolute when `b = 0`).
    pub fn relative_residual(&self, x1: &[f64], x2: &[f64], b1: &[f64], b2: &[f64]) -> f64 {
        let (y1, y2) = self.apply(x1, x2);
        let mut r = 0.0;
        let mut b = 0.0;
        for i in 0..self.dim() {
            r += (y1[i] - b1[i]).powi(2) + (y2[i] - b2[i]).powi(2);
            b += b1[i] * b1[i] + b2[i] * b2[i];
        }
        if b == 0.0 {
            r.sqrt()
        } else {
            (r / b).sqrt()
        }
    }

    fn entries(&self, mut emit: impl FnMut(usize, usize, f64)) {
        for i in 0..self.dim() {
            if !self.free[i] {
                emit(2 * i, 2 * i, 1.0);
                emit(2 * i + 1, 2 * i + 1, 1.0);
                continue;
            }
            for (blk, ro, co) in [(&self.a11, 0, 0), (&self.a12, 0, 1), (&self.a21, 1, 0), (&self.a22, 1, 1)] {
                let (c, v) = blk.row(i);
                for (&j, &x) in c.iter().zip(v) {
                    if self.free[j] {
                        emit(2 * i + ro, 2 * j + co, x);
                    }
                }
            }
        }
    }

    fn interleaved_bandwidth(&self) -> usize {
        let mut bw = 1;
        self.entries(|i, j, _| bw = bw.max(i.abs_diff(j)));
        bw
    }
}

/// Solves the block system by banded LU (`Direct`, also used for `Modal` and
/// `Reduced`, which need the special block structure of a time step) or
/// GMRES (`Krylov`).
pub fn solve_block(
    a: &BlockMatrix,
    b1: &[f64],
    b2: &[f64],
    mode: SolverMode,
    settings: &StepperSettings,
) -> Result<(Vec<f64>, Vec<f64>, BlockSolveStats)> {
    let n = a.dim();
    let (x1, x2, iterations) = match mode {
        SolverMode::Direct | SolverMode::Modal | SolverMode::Reduced => {
            let bw = a.interleaved_bandwidth();
            let lu = BandedLu::factor(2 * n, bw, bw, |set| a.entries(set))?;
            let mut x = interleave(b1, b2);
            lu.solve(&mut x)?;
            let (x1, x2) = deinterleave(&x);
            (x1, x2, 0)
        }
        SolverMode::Krylov => {
            let mut diag = vec![0.0; 2 * n];
            a.entries(|i, j, v| {
                if i == j {
                    diag[i] += v;
                }
            });
            let scale: Vec<f64> = diag
                .iter()
                .map(|d| if d.abs() > 0.0 { 1.0 / d.abs().sqrt() } else { 1.0 })
                .collect();
            let b = interleave(b1, b2);
            let bs: Vec<f64> = b.iter().zip(&scale).map(|(v, s)| v * s).collect();
            let apply = |x: &[f64], y: &mut [f64]| {
                let xs: Vec<f64> = x.iter().zip(&scale).map(|(v, s)| v * s).collect();
                let (u, v) = deinterleave(&xs);
                let (y1, y2) = a.apply(&u, &v);
                for i in 0..n {
                    y[2 * i] = y1[i] * scale[2 * i];
                    y[2 * i + 1] = y2[i] * scale[2 * i + 1];
                }
            };
            let mut y = vec![0.0; 2 * n];
            let stats = gmres(
                apply,
                &bs,
                &mut y,
                settings.krylov_tol,
                settings.krylov_restart,
                settings.krylov_max_iters,
            )?;
            let x: Vec<f64> = y.iter().zip(&scale).map(|(v, s)| v * s).collect();
            let (x1, x2) = deinterleave(&x);
            (x1, x2, stats.iterations)
        }
    };
    let residual = a.relative_residual(&x1, &x2, b1, b2);
    Ok((x1, x2, BlockSolveStats { residual, iterations }))
}

fn interleave(b1: &[f64], b2: &[f64]) -> Vec<f64> {
    b1.iter().zip(b2).flat_map(|(x, y)| [*x, *y]).collect()
}

fn deinterleave(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (x.iter().step_by(2).copied().collect(), x.iter().skip(1).step_by(2).copied().collect())
}

/// Generalized eigenbasis of `S phi = lambda M phi` on the free dofs, used
/// to solve `[a M, c(S+M); S, -M]` for any `a` by scalar division.
#[derive(Debug, Clone)]
pub struct ModalSolver {
    free_index: Vec<usize>,
    lambda: Vec<f64>,
    /// `M`-orthonormal eigenvectors, column-major over the free dofs.
    phi: Vec<f64>,
    mass_chol: BandedCholesky,
}

impl ModalSolver {
    pub fn new(space: &WeightedSpace, ops: &AssembledOperators) -> Result<Self> {
        let free = space.free_mask();
        let free_index: Vec<usize> = (0..free.len()).filter(|&i| free[i]).collect();
        let na = free_index.len();
        let mut local = vec![usize::MAX; free.len()];
        for (k, &i) in free_index.iter().enumerate() {
            local[i] = k;
        }
        let scale: Vec<f64> = free_index.iter().map(|&i| 1.0 / ops.mass.get(i, i).sqrt()).collect();
        let mut sd = vec![0.0; na * na];
        let mut md = vec![0.0; na * na];
        for (k, &i) in free_index.iter().enumerate() {
            for (mat, dense) in [(&ops.stiffness, &mut sd), (&ops.mass, &mut md)] {
                let (c, v) = mat.row(i);
                for (&j, &x) in c.iter().zip(v) {
                    let l = local[j];
                    if l != usize::MAX {
                        dense[l * na + k] = scale[k] * x * scale[l];
                    }
                }
            }
        }
        let (lambda, mut phi) = generalized_symmetric_eigen(sd, md, na)?;
        for col in phi.chunks_mut(na) {
            col.iter_mut().zip(&scale).for_each(|(v, s)| *v *= s);
        }
        let mass_chol = BandedCholesky::from_csr(&ops.mass, free, space.bandwidth())?;
        Ok(ModalSolver {
            free_index,
            lambda,
            phi,
            mass_chol,
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.lambda
    }

    /// Solves `a M U + c (S+M) V = r1`, `S U - M V = 0` on the free dofs;
    /// pinned entries of the result are zero.
    pub fn solve(&self, a: f64, c: f64, r1: &[f64], stiffness: &CsrMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
        let na = self.free_index.len();
        let rf: Vec<f64> = self.free_index.iter().map(|&i| r1[i]).collect();
        let mut uhat = vec![0.0; na];
        for (j, col) in self.phi.chunks(na).enumerate() {
            let rho: f64 = col.iter().zip(&rf).map(|(p, r)| p * r).sum();
            let l = self.lambda[j];
            uhat[j] = rho / (a + c * l * (l + 1.0));
        }
        let mut uf = vec![0.0; na];
        for (col, &uh) in self.phi.chunks(na).zip(&uhat) {
            uf.iter_mut().zip(col).for_each(|(u, p)| *u += uh * p);
        }
        let mut u = vec![0.0; r1.len()];
        for (k, &i) in self.free_index.iter().enumerate() {
            u[i] = uf[k];
        }
        // Pinned rows of S are empty, so S U already vanishes there.
        let mut v = stiffness.mul_vec(&u);
        self.mass_chol.solve(&mut v)?;
        Ok((u, v))
    }
}

/// Solver for `a M U + c (S+M) V = r1`, `S U - M V = r2` through the
/// symmetric positive definite reduced system
/// `(a M + c (S+M) M^{-1} S) U = r1 + c (S+M) M^{-1} r2`.
///
/// The preconditioner `P = B M^{-1} B` with `B = sqrt(a) M + sqrt(c) S`
/// differs from the reduced operator only in the coefficient of `S`
/// (`2 sqrt(ac)` instead of `c`), which bounds the condition number of the
/// preconditioned operator by 2.
#[derive(Debug, Clone)]
pub struct ReducedSolver {
    mass_chol: BandedCholesky,
    bandwidth: usize,
    tol: f64,
    max_iters: usize,
    /// Factor of `sqrt(a) M + sqrt(c) S` with the `(a, c)` it was built for.
    preconditioner: RefCell<Option<(f64, f64, BandedCholesky)>>,
}

/// Coefficients within this factor of the cached ones reuse the
/// preconditioner, which keeps the preconditioned condition number below 8.
const PRECONDITIONER_DRIFT: f64 = 2.0;

impl ReducedSolver {
    pub fn new(space: &WeightedSpace, ops: &AssembledOperators, tol: f64) -> Result<Self> {
        Ok(ReducedSolver {
            mass_chol: BandedCholesky::from_csr(&ops.mass, space.free_mask(), space.bandwidth())?,
            bandwidth: space.bandwidth(),
            tol,
            max_iters: 500,
            preconditioner: RefCell::new(None),
        })
    }

    /// Returns `(U, V, iterations)`; `guess` seeds the iteration.
    #[allow(clippy::too_many_arguments)]
    pub fn solve(
        &self,
        a: f64,
        c: f64,
        r1: &[f64],
        r2: &[f64],
        ops: &AssembledOperators,
        free: &[bool],
        guess: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, usize)> {
        let (mass, stiff) = (&ops.mass, &ops.stiffness);
        let m_inv = |x: &mut Vec<f64>| self.mass_chol.solve(x);
        let close = |x: f64, y: f64| x / y <= PRECONDITIONER_DRIFT && y / x <= PRECONDITIONER_DRIFT;
        let mut cached = self.preconditioner.borrow_mut();
        if !matches!(&*cached, Some((pa, pc, _)) if close(a, *pa) && close(c, *pc)) {
            let combined = mass.linear_combination(a.sqrt(), stiff, c.sqrt());
            *cached = Some((a, c, BandedCholesky::from_csr(&combined, free, self.bandwidth)?));
        }
        let pre = &cached.as_ref().expect("preconditioner was just built").2;
        let sum_apply = |x: &[f64]| {
            let mut y = stiff.mul_vec(x);
            axpy(&mut y, 1.0, &mass.mul_vec(x));
            y
        };
        let apply = |x: &[f64]| -> Result<Vec<f64>> {
            let mut t = stiff.mul_vec(x);
            m_inv(&mut t)?;
            let mut y = sum_apply(&t);
            y.iter_mut().for_each(|v| *v *= c);
            axpy(&mut y, a, &mass.mul_vec(x));
            Ok(y)
        };
        let precondition = |r: &[f64]| -> Result<Vec<f64>> {
            let mut z = r.to_vec();
            pre.solve(&mut z)?;
            let mut z = mass.mul_vec(&z);
            pre.solve(&mut z)?;
            Ok(z)
        };
        let mut b = r1.to_vec();
        if r2.iter().any(|&v| v != 0.0) {
            let mut t = r2.to_vec();
            m_inv(&mut t)?;
            axpy(&mut b, c, &sum_apply(&t));
        }
        for (v, &f) in b.iter_mut().zip(free) {
            if !f {
                *v = 0.0;
            }
        }
        let bnorm = norm2(&b);
        let mut x: Vec<f64> = guess.iter().zip(free).map(|(g, &f)| if f { *g } else { 0.0 }).collect();
        let mut iters = 0;
        if bnorm > 0.0 {
            let ax = apply(&x)?;
            let mut r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
            let mut z = precondition(&r)?;
            let mut p = z.clone();
            let mut rz = dot(&r, &z);
            while norm2(&r) > self.tol * bnorm {
                if iters == self.max_iters {
                    return Err(Error::IterationLimit {
                        iterations: iters,
                        residual: norm2(&r) / bnorm,
                    });
                }
                let ap = apply(&p)?;
                let step = rz / dot(&p, &ap);
                axpy(&mut x, step, &p);
                axpy(&mut r, -step, &ap);
                z = precondition(&r)?;
                let rz_new = dot(&r, &z);
                let beta = rz_new / rz;
                rz = rz_new;
                p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
                iters += 1;
            }
        } else {
            x.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut v = stiff.mul_vec(&x);
        axpy(&mut v, -1.0, r2);
        for (vi, &f) in v.iter_mut().zip(free) {
            if !f {
                *vi = 0.0;
            }
        }
        m_inv(&mut v)?;
        Ok((x, v, iters))
    }
}

/// Stored coefficient vectors `U^0..U^n`, `V^0..V^n` and per-step
/// diagnostics.
#[derive(Debug, Clone, Default)]
pub struct SolutionHistory {
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Newton iterations and final relative residual of the first step.
    pub newton_iterations: usize,
    pub newton_residual: f64,
    /// Relative block residual per step (entry 0 unused).
    pub block_residuals: Vec<f64>,
    /// `||S U^n - M V^n|| / ||M V^n||` per step.
    pub constraint_residuals: Vec<f64>,
    /// Iterations of iterative linear solves, one entry per linear step.
    pub linear_iterations: Vec<usize>,
}

impl SolutionHistory {
    pub fn new(u0: Vec<f64>, v0: Vec<f64>) -> Self {
        SolutionHistory {
            u: vec![u0],
            v: vec![v0],
            block_residuals: vec![0.0],
            constraint_residuals: vec![0.0],
            ..Default::default()
        }
    }

    /// Index of the last completed step.
    pub fn last(&self) -> usize {
        self.u.len() - 1
    }
}

/// Load vectors `int g(., t) (w b_i)` of a forcing term.
pub trait Forcing {
    fn load(&self, t: f64) -> Vec<f64>;
}

impl<F: Fn(f64) -> Vec<f64>> Forcing for F {
    fn load(&self, t: f64) -> Vec<f64> {
        self(t)
    }
}

pub struct TimeStepper<'a> {
    space: &'a WeightedSpace,
    ops: &'a AssembledOperators,
    weights: L21Sigma,
    settings: StepperSettings,
    sum_sm: CsrMatrix,
    backend: Backend,
}

#[derive(Debug)]
enum Backend {
    Modal(ModalSolver),
    Reduced(ReducedSolver),
    Block,
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

impl<'a> TimeStepper<'a> {
    pub fn new(
        space: &'a WeightedSpace,
        ops: &'a AssembledOperators,
        mesh: GradedMesh,
        settings: StepperSettings,
    ) -> Result<Self> {
        let backend = match settings.solver {
            SolverMode::Modal => Backend::Modal(ModalSolver::new(space, ops)?),
            SolverMode::Reduced => Backend::Reduced(ReducedSolver::new(space, ops, settings.krylov_tol)?),
            _ => Backend::Block,
        };
        Ok(TimeStepper {
            space,
            ops,
            weights: L21Sigma::new(mesh),
            settings,
            sum_sm: ops.stiffness.linear_combination(1.0, &ops.mass, 1.0),
            backend,
        })
    }

    pub fn mesh(&self) -> &GradedMesh {
        self.weights.mesh()
    }

    fn free(&self) -> &[bool] {
        self.space.free_mask()
    }

    fn mask(&self, x: &mut [f64]) {
        for (v, &f) in x.iter_mut().zip(self.free()) {
            if !f {
                *v = 0.0;
            }
        }
    }

    fn block(&self, a: f64, jac: Option<&CsrMatrix>) -> BlockMatrix {
        let c = 1.0 - self.mesh().sigma();
        let a11 = match jac {
            Some(j) => self.ops.mass.linear_combination(a, j, -c),
            None => self.ops.mass.linear_combination(a, &self.ops.mass, 0.0),
        };
        BlockMatrix {
            a11,
            a12: self.sum_sm.linear_combination(c, &self.sum_sm, 0.0),
            a21: self.ops.stiffness.clone(),
            a22: self.ops.mass.linear_combination(-1.0, &self.ops.mass, 0.0),
            free: self.free().to_vec(),
        }
    }

    fn constraint_residual(&self, u: &[f64], v: &[f64]) -> f64 {
        let su = self.ops.stiffness.mul_vec(u);
        let mv = self.ops.mass.mul_vec(v);
        let d: Vec<f64> = su.iter().zip(&mv).map(|(a, b)| a - b).collect();
        let scale = norm2(&mv);
        if scale == 0.0 {
            norm2(&d)
        } else {
            norm2(&d) / scale
        }
    }

    fn reaction(&self, state: &[f64]) -> Vec<f64> {
        if self.settings.reaction {
            nonlinear_load(self.space, state)
        } else {
            vec![0.0; state.len()]
        }
    }

    /// Newton solve of the first step. The initial guess solves the Poisson
    /// problem `S U = G^{1-σ}` with `M V = S U`.
    pub fn first_step(&self, history: &mut SolutionHistory, forcing: &dyn Forcing) -> Result<()> {
        assert_eq!(history.last(), 0, "first step needs a history with only step 0");
        let mesh = self.mesh();
        let sigma = mesh.sigma();
        let c = 1.0 - sigma;
        let a = self.weights.a_current(1);
        let (u0, v0) = (&history.u[0], &history.v[0]);
        let mut g = forcing.load(mesh.t_offset(1));
        self.mask(&mut g);

        // Data part of the first equation: a M U^0 - σ (S+M) V^0 + G.
        let mut data = self.ops.mass.mul_vec(u0);
        data.iter_mut().for_each(|v| *v *= a);
        axpy(&mut data, -sigma, &self.sum_sm.mul_vec(v0));
        axpy(&mut data, 1.0, &g);
        self.mask(&mut data);
        let scale = norm2(&data).max(norm2(&self.ops.mass.mul_vec(u0)));

        let (mut u, mut v) = if norm2(&g) > 0.0 {
            let ug = solve_spd(self.space, &self.ops.stiffness, &g)?;
            let vg = solve_spd(self.space, &self.ops.mass, &self.ops.stiffness.mul_vec(&ug))?;
            (ug, vg)
        } else {
            (u0.clone(), v0.clone())
        };

        let residual = |u: &[f64], v: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>, f64) {
            let mid: Vec<f64> = u0.iter().zip(u).map(|(p, q)| sigma * p + c * q).collect();
            let f = self.reaction(&mid);
            let mut r1 = self.ops.mass.mul_vec(u);
            r1.iter_mut().for_each(|x| *x *= a);
            axpy(&mut r1, c, &self.sum_sm.mul_vec(v));
            axpy(&mut r1, -1.0, &f);
            axpy(&mut r1, -1.0, &data);
            let mut r2 = self.ops.stiffness.mul_vec(u);
            axpy(&mut r2, -1.0, &self.ops.mass.mul_vec(v));
            self.mask(&mut r1);
            self.mask(&mut r2);
            let norm = (norm2(&r1).powi(2) + norm2(&r2).powi(2)).sqrt();
            let rel = if scale > 0.0 { norm / scale } else { norm };
            (r1, r2, mid, rel)
        };

        let mode = match self.settings.solver {
            SolverMode::Krylov => SolverMode::Krylov,
            _ => SolverMode::Direct,
        };
        let (mut r1, mut r2, mut mid, mut rel) = residual(&u, &v);
        let mut iters = 0;
        while rel > self.settings.newton_tol {
            if iters == self.settings.newton_max_iters {
                return Err(Error::NewtonDivergence {
                    iterations: iters,
                    residual: rel,
                });
            }
            let jac = if self.settings.reaction {
                assemble_nonlinear(self.space, &mid).1
            } else {
                self.ops.mass.zeros_like()
            };
            let block = self.block(a, Some(&jac));
            r1.iter_mut().for_each(|x| *x = -*x);
            r2.iter_mut().for_each(|x| *x = -*x);
            let (du, dv, _) = solve_block(&block, &r1, &r2, mode, &self.settings)?;
            axpy(&mut u, 1.0, &du);
            axpy(&mut v, 1.0, &dv);
            iters += 1;
            (r1, r2, mid, rel) = residual(&u, &v);
            debug!("newton iteration {iters}: relative residual {rel:e}");
        }
        history.newton_iterations = iters;
        history.newton_residual = rel;
        history.block_residuals.push(rel);
        history.constraint_residuals.push(self.constraint_residual(&u, &v));
        history.u.push(u);
        history.v.push(v);
        Ok(())
    }

    /// One linearized step `n >= 2` with the reaction term extrapolated.
    pub fn linear_step(&self, history: &mut SolutionHistory, forcing: &dyn Forcing) -> Result<()> {
        let n = history.last() + 1;
        assert!(n >= 2, "linear steps start at n = 2");
        let mesh = self.mesh();
        let sigma = mesh.sigma();
        let c = 1.0 - sigma;
        let w = self.weights.step_weights(n);
        let a = w[0];
        let dim = self.space.dim();

        // z = a U^{n-1} - sum_{j=1}^{n-1} A^n_{n-j} (U^j - U^{j-1}), regrouped
        // per stored vector.
        let mut z = vec![0.0; dim];
        axpy(&mut z, a - w[1], &history.u[n - 1]);
        for j in 1..n - 1 {
            axpy(&mut z, -(w[n - j] - w[n - j - 1]), &history.u[j]);
        }
        axpy(&mut z, w[n - 1], &history.u[0]);

        let ts = mesh.tau_star(n);
        let hat: Vec<f64> = history.u[n - 1]
            .iter()
            .zip(&history.u[n - 2])
            .map(|(p, q)| (1.0 + ts) * p - ts * q)
            .collect();
        let mut r1 = self.ops.mass.mul_vec(&z);
        axpy(&mut r1, -sigma, &self.sum_sm.mul_vec(&history.v[n - 1]));
        axpy(&mut r1, 1.0, &self.reaction(&hat));
        axpy(&mut r1, 1.0, &forcing.load(mesh.t_offset(n)));
        self.mask(&mut r1);
        let r2 = vec![0.0; dim];

        let (u, v, res) = match &self.backend {
            Backend::Modal(modal) => {
                let (u, v) = modal.solve(a, c, &r1, &self.ops.stiffness)?;
                let res = self.block(a, None).relative_residual(&u, &v, &r1, &r2);
                (u, v, res)
            }
            Backend::Reduced(reduced) => {
                let (u, v, iters) = reduced.solve(a, c, &r1, &r2, self.ops, self.free(), &hat)?;
                history.linear_iterations.push(iters);
                let res = self.block(a, None).relative_residual(&u, &v, &r1, &r2);
                (u, v, res)
            }
            Backend::Block => {
                let (u, v, stats) = solve_block(&self.block(a, None), &r1, &r2, self.settings.solver, &self.settings)?;
                history.linear_iterations.push(stats.iterations);
                (u, v, stats.residual)
            }
        };
        history.block_residuals.push(res);
        history.constraint_residuals.push(self.constraint_residual(&u, &v));
        history.u.push(u);
        history.v.push(v);
        Ok(())
    }

    /// Runs all steps from `(U^0, V^0)`, calling `observer(n, U^n, V^n)` for
    /// `n = 0..=N`.
    pub fn run<O>(&self, u0: Vec<f64>, v0: Vec<f64>, forcing: &dyn Forcing, mut observer: O) -> Result<SolutionHistory>
    where
        O: FnMut(usize, &[f64], &[f64]),
    {
        let mut history = SolutionHistory::new(u0, v0);
        observer(0, &history.u[0], &history.v[0]);
        self.first_step(&mut history, forcing)?;
        observer(1, &history.u[1], &history.v[1]);
        for n in 2..=self.mesh().steps() {
            self.linear_step(&mut history, forcing)?;
            observer(n, &history.u[n], &history.v[n]);
            if n % 500 == 0 {
                debug!("step {n}/{}: block residual {:e}", self.mesh().steps(), history.block_residuals[n]);
            }
        }
        Ok(history)
    }
}
