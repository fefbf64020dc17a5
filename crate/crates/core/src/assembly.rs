//! Weighted b-spline space `span{w b_k : k in K}` and its Galerkin operators.
//!
//! Quadrature points are generated once per space, together with the
//! univariate spline values needed to rebuild every weighted basis function
//! supported on the point's grid cell. All integrals (operators, loads,
//! nonlinear terms, errors) reuse that cache.

use std::ops::Range;

use crate::bspline::{cardinal_values_and_derivatives, Grid, TensorBasis, MAX_DEGREE};
use crate::domain::WeightFunction;
use crate::error::{Error, Result};
use crate::linalg::{BandedCholesky, CsrMatrix};
use crate::quadrature::{cell_points, gauss_rule, CellKind};

/// Gauss points per direction and subdivision depth for cut cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadratureSettings {
    pub points: usize,
    pub max_depth: usize,
}

impl QuadratureSettings {
    /// `m + 3` points: the mass integrand `(w b_i)(w b_j)` has degree
    /// `2m + 4` per variable for the degree-2-per-variable weights used here.
    pub fn for_degree(m: usize) -> Self {
        QuadratureSettings {
            points: m + 3,
            max_depth: 4,
        }
    }
}

/// One quadrature point with the weight and the univariate spline data of
/// its cell. Entry `a` of `bx` belongs to the basis index `l1 - m + a`.
#[derive(Debug, Clone, Copy)]
pub struct CachedPoint {
    pub x: [f64; 2],
    pub qw: f64,
    pub w: f64,
    pub grad_w: [f64; 2],
    bx: [f64; MAX_DEGREE + 1],
    dbx: [f64; MAX_DEGREE + 1],
    by: [f64; MAX_DEGREE + 1],
    dby: [f64; MAX_DEGREE + 1],
}

/// Quadrature points of one grid cell and the dofs of the `(m+1)^2`
/// b-splines that live on it (`None` for irrelevant indices).
#[derive(Debug, Clone)]
pub struct CellBlock {
    pub cell: [i64; 2],
    pub kind: CellKind,
    pub dofs: Vec<Option<usize>>,
    pub points: Range<usize>,
}

/// Trial/test space with cached quadrature.
#[derive(Debug, Clone)]
pub struct WeightedSpace {
    weight: WeightFunction,
    basis: TensorBasis,
    quad: QuadratureSettings,
    cells: Vec<CellBlock>,
    points: Vec<CachedPoint>,
    /// Per point `[w, qw w, bx.., by..]`, a compact copy of `points` for the
    /// per-step evaluation and load loops.
    packed: Vec<f64>,
}

/// Samples per cell direction used to decide which b-splines are relevant.
pub const RELEVANCE_SAMPLES: usize = 4;

impl WeightedSpace {
    /// Builds the space of degree `degree` on a grid with
    /// `cells_per_direction` cells across the weight's bounding box.
    pub fn new(
        weight: WeightFunction,
        degree: usize,
        cells_per_direction: usize,
        quad: QuadratureSettings,
    ) -> Result<Self> {
        let grid = Grid::covering(weight.bounding_box(), cells_per_direction)?;
        let basis = TensorBasis::classify_relevant(degree, grid, &weight, RELEVANCE_SAMPLES)?;
        Self::from_basis(weight, basis, quad)
    }

    pub fn from_basis(
        weight: WeightFunction,
        basis: TensorBasis,
        quad: QuadratureSettings,
    ) -> Result<Self> {
        let rule = gauss_rule(quad.points)?;
        let grid = *basis.grid();
        let m = basis.degree();
        let mi = m as i64;
        let inv_h = 1.0 / grid.h;
        let mut cells = Vec::new();
        let mut points = Vec::new();
        let mut v = [0.0; MAX_DEGREE + 1];
        let mut d = [0.0; MAX_DEGREE + 1];
        for lx in 0..grid.cells[0] as i64 {
            for ly in 0..grid.cells[1] as i64 {
                let origin = grid.cell_origin([lx, ly]);
                let (kind, pts) = cell_points(&weight, &rule, origin, grid.h, quad.max_depth);
                if pts.is_empty() {
                    continue;
                }
                let mut dofs = Vec::with_capacity((m + 1) * (m + 1));
                for a in 0..=mi {
                    for b in 0..=mi {
                        let k = [lx - mi + a, ly - mi + b];
                        dofs.push(basis.dof_index(k).filter(|&i| basis.is_relevant(i)));
                    }
                }
                let start = points.len();
                for p in pts {
                    let (w, grad_w) = weight.value_grad(p.x);
                    let mut cp = CachedPoint {
                        x: p.x,
                        qw: p.weight,
                        w,
                        grad_w,
                        bx: [0.0; MAX_DEGREE + 1],
                        dbx: [0.0; MAX_DEGREE + 1],
                        by: [0.0; MAX_DEGREE + 1],
                        dby: [0.0; MAX_DEGREE + 1],
                    };
                    let ux = (p.x[0] - origin[0]) * inv_h;
                    let uy = (p.x[1] - origin[1]) * inv_h;
                    cardinal_values_and_derivatives(m, ux, &mut v, &mut d);
                    for a in 0..=m {
                        cp.bx[a] = v[m - a];
                        cp.dbx[a] = d[m - a] * inv_h;
                    }
                    cardinal_values_and_derivatives(m, uy, &mut v, &mut d);
                    for a in 0..=m {
                        cp.by[a] = v[m - a];
                        cp.dby[a] = d[m - a] * inv_h;
                    }
                    points.push(cp);
                }
                cells.push(CellBlock {
                    cell: [lx, ly],
                    kind,
                    dofs,
                    points: start..points.len(),
                });
            }
        }
        let m1 = m + 1;
        let mut packed = Vec::with_capacity(points.len() * (2 + 2 * m1));
        for p in &points {
            packed.extend([p.w, p.qw * p.w]);
            packed.extend_from_slice(&p.bx[..m1]);
            packed.extend_from_slice(&p.by[..m1]);
        }
        Ok(WeightedSpace {
            weight,
            basis,
            quad,
            cells,
            points,
            packed,
        })
    }

    pub fn weight(&self) -> &WeightFunction {
        &self.weight
    }

    pub fn basis(&self) -> &TensorBasis {
        &self.basis
    }

    pub fn quadrature(&self) -> QuadratureSettings {
        self.quad
    }

    pub fn degree(&self) -> usize {
        self.basis.degree()
    }

    /// Number of coefficients `|K'|`.
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn free_mask(&self) -> &[bool] {
        self.basis.relevant_mask()
    }

    pub fn cells(&self) -> &[CellBlock] {
        &self.cells
    }

    pub fn points(&self) -> &[CachedPoint] {
        &self.points
    }

    /// Half-bandwidth of every assembled operator.
    pub fn bandwidth(&self) -> usize {
        self.basis.max_coupling_offset()
    }

    fn local_len(&self) -> usize {
        let m1 = self.degree() + 1;
        m1 * m1
    }

    /// Values of `w b_k` for the cell's local functions at `p`.
    pub fn local_values(&self, p: &CachedPoint, phi: &mut [f64]) {
        let m1 = self.degree() + 1;
        for a in 0..m1 {
            let wa = p.w * p.bx[a];
            for b in 0..m1 {
                phi[a * m1 + b] = wa * p.by[b];
            }
        }
    }

    /// Values and gradients of `w b_k` for the cell's local functions.
    pub fn local_values_grads(&self, p: &CachedPoint, phi: &mut [f64], grad: &mut [[f64; 2]]) {
        let m1 = self.degree() + 1;
        for a in 0..m1 {
            for b in 0..m1 {
                let bb = p.bx[a] * p.by[b];
                let i = a * m1 + b;
                phi[i] = p.w * bb;
                grad[i] = [
                    p.grad_w[0] * bb + p.w * p.dbx[a] * p.by[b],
                    p.grad_w[1] * bb + p.w * p.bx[a] * p.dby[b],
                ];
            }
        }
    }

    fn packed_point(&self, pi: usize) -> (f64, f64, &[f64], &[f64]) {
        let m1 = self.degree() + 1;
        let rec = &self.packed[pi * (2 + 2 * m1)..(pi + 1) * (2 + 2 * m1)];
        (rec[0], rec[1], &rec[2..2 + m1], &rec[2 + m1..])
    }

    /// `u_h = sum_k beta_k w b_k` at every cached point, in point order.
    pub fn field_at_points(&self, coeffs: &[f64]) -> Vec<f64> {
        let m1 = self.degree() + 1;
        let mut out = vec![0.0; self.points.len()];
        let mut local = vec![0.0; m1 * m1];
        for c in &self.cells {
            for (l, d) in local.iter_mut().zip(&c.dofs) {
                *l = d.map_or(0.0, |i| coeffs[i]);
            }
            for pi in c.points.clone() {
                let (w, _, bx, by) = self.packed_point(pi);
                let mut s = 0.0;
                for (row, xa) in local.chunks_exact(m1).zip(bx) {
                    let inner: f64 = row.iter().zip(by).map(|(c, b)| c * b).sum();
                    s += xa * inner;
                }
                out[pi] = w * s;
            }
        }
        out
    }

    /// `int_Omega h (w b_i)` for point values `h` given in point order.
    pub fn load_from_point_values(&self, values: &[f64]) -> Vec<f64> {
        let m1 = self.degree() + 1;
        let mut out = vec![0.0; self.dim()];
        let mut local = vec![0.0; m1 * m1];
        for c in &self.cells {
            local.iter_mut().for_each(|v| *v = 0.0);
            for pi in c.points.clone() {
                let (_, qww, bx, by) = self.packed_point(pi);
                let s = qww * values[pi];
                for (row, xa) in local.chunks_exact_mut(m1).zip(bx) {
                    let sa = s * xa;
                    row.iter_mut().zip(by).for_each(|(l, b)| *l += sa * b);
                }
            }
            for (d, l) in c.dofs.iter().zip(&local) {
                if let Some(i) = d {
                    out[*i] += l;
                }
            }
        }
        out
    }

    /// Value of `u_h` at an arbitrary point.
    pub fn evaluate(&self, coeffs: &[f64], p: [f64; 2]) -> f64 {
        let m = self.degree() as i64;
        let (l, _) = self.basis.grid().locate(p);
        let w = self.weight.value(p);
        let mut s = 0.0;
        for k1 in l[0] - m..=l[0] {
            for k2 in l[1] - m..=l[1] {
                if let Some(i) = self.basis.dof_index([k1, k2]) {
                    if self.basis.is_relevant(i) && coeffs[i] != 0.0 {
                        s += coeffs[i] * self.basis.eval([k1, k2], p).0;
                    }
                }
            }
        }
        w * s
    }

    /// `int_Omega f(x)` by the cached rule.
    pub fn integrate<F: FnMut([f64; 2]) -> f64>(&self, mut f: F) -> f64 {
        let mut total = 0.0;
        for c in &self.cells {
            let mut cell_sum = 0.0;
            for p in &self.points[c.points.clone()] {
                cell_sum += p.qw * f(p.x);
            }
            total += cell_sum;
        }
        total
    }

    /// Sparsity pattern: relevant pairs with overlapping supports; pinned
    /// rows are empty.
    fn pattern(&self) -> CsrMatrix {
        let m = self.degree() as i64;
        let n = self.dim();
        let rows = (0..n)
            .map(|i| {
                if !self.basis.is_relevant(i) {
                    return Vec::new();
                }
                let k = self.basis.index_of(i);
                let mut r = Vec::new();
                for d1 in -m..=m {
                    for d2 in -m..=m {
                        if let Some(j) = self.basis.dof_index([k[0] + d1, k[1] + d2]) {
                            if self.basis.is_relevant(j) {
                                r.push(j);
                            }
                        }
                    }
                }
                r.sort_unstable();
                r
            })
            .collect();
        CsrMatrix::from_pattern(n, rows)
    }

    /// Scatters symmetric local matrices computed by `local` (upper
    /// triangle, row-major `n_loc x n_loc`) into a matrix with the space's
    /// pattern. Both triangles receive identical values.
    fn assemble_symmetric<F>(&self, targets: usize, mut local: F) -> Vec<CsrMatrix>
    where
        F: FnMut(&CellBlock, &mut [Vec<f64>]),
    {
        let pattern = self.pattern();
        let mut out = vec![pattern; targets];
        let nl = self.local_len();
        let mut buffers = vec![vec![0.0; nl * nl]; targets];
        for c in &self.cells {
            buffers.iter_mut().for_each(|b| b.iter_mut().for_each(|v| *v = 0.0));
            local(c, &mut buffers);
            for (mat, buf) in out.iter_mut().zip(&buffers) {
                for a in 0..nl {
                    let Some(i) = c.dofs[a] else { continue };
                    for b in a..nl {
                        let Some(j) = c.dofs[b] else { continue };
                        let v = buf[a * nl + b];
                        mat.add(i, j, v);
                        if i != j {
                            mat.add(j, i, v);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Mass and stiffness matrices over `K'` with empty rows at pinned indices.
#[derive(Debug, Clone)]
pub struct AssembledOperators {
    pub mass: CsrMatrix,
    pub stiffness: CsrMatrix,
}

/// `M_ij = int (w b_i)(w b_j)` and `S_ij = int grad(w b_i) . grad(w b_j)`.
pub fn assemble_mass_stiffness(space: &WeightedSpace) -> Result<AssembledOperators> {
    let nl = space.local_len();
    let mut phi = vec![0.0; nl];
    let mut grad = vec![[0.0; 2]; nl];
    let mut mats = space.assemble_symmetric(2, |c, bufs| {
        let (mb, sb) = bufs.split_at_mut(1);
        let (mb, sb) = (&mut mb[0], &mut sb[0]);
        for p in &space.points[c.points.clone()] {
            space.local_values_grads(p, &mut phi, &mut grad);
            for a in 0..nl {
                let pa = p.qw * phi[a];
                let ga = [p.qw * grad[a][0], p.qw * grad[a][1]];
                for b in a..nl {
                    mb[a * nl + b] += pa * phi[b];
                    sb[a * nl + b] += ga[0] * grad[b][0] + ga[1] * grad[b][1];
                }
            }
        }
    });
    let stiffness = mats.pop().expect("two matrices");
    let mass = mats.pop().expect("two matrices");
    for (i, &free) in space.free_mask().iter().enumerate() {
        if free && mass.get(i, i) <= 0.0 {
            let k = space.basis().index_of(i);
            return Err(Error::DegenerateMass(k[0], k[1]));
        }
    }
    Ok(AssembledOperators { mass, stiffness })
}

/// `int_Omega g (w b_i)` for every dof.
pub fn assemble_load<G: Fn([f64; 2]) -> f64>(space: &WeightedSpace, g: G) -> Vec<f64> {
    let values: Vec<f64> = space.points().iter().map(|p| g(p.x)).collect();
    space.load_from_point_values(&values)
}

/// `f(s) = s - s^3`.
pub fn cubic_source(s: f64) -> f64 {
    s - s * s * s
}

/// `f'(s) = 1 - 3 s^2`.
pub fn cubic_source_derivative(s: f64) -> f64 {
    1.0 - 3.0 * s * s
}

/// `int f(u_h) (w b_i)` for the field with coefficients `state`.
pub fn nonlinear_load(space: &WeightedSpace, state: &[f64]) -> Vec<f64> {
    let mut u = space.field_at_points(state);
    u.iter_mut().for_each(|s| *s = cubic_source(*s));
    space.load_from_point_values(&u)
}

/// Nonlinear vector `int f(u_h) (w b_i)` and Jacobian
/// `int f'(u_h) (w b_j)(w b_i)`.
pub fn assemble_nonlinear(space: &WeightedSpace, state: &[f64]) -> (Vec<f64>, CsrMatrix) {
    let u = space.field_at_points(state);
    let vector = space.load_from_point_values(&u.iter().map(|&s| cubic_source(s)).collect::<Vec<_>>());
    let nl = space.local_len();
    let mut phi = vec![0.0; nl];
    let mut mats = space.assemble_symmetric(1, |c, bufs| {
        let jb = &mut bufs[0];
        for pi in c.points.clone() {
            let p = &space.points[pi];
            space.local_values(p, &mut phi);
            let s = p.qw * cubic_source_derivative(u[pi]);
            for a in 0..nl {
                let pa = s * phi[a];
                for b in a..nl {
                    jb[a * nl + b] += pa * phi[b];
                }
            }
        }
    });
    (vector, mats.pop().expect("one matrix"))
}

/// Solves `A x = rhs` on the relevant dofs for a symmetric positive
/// definite operator, with symmetric Jacobi scaling. Pinned entries are 0.
pub fn solve_spd(space: &WeightedSpace, a: &CsrMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let free = space.free_mask();
    let scale: Vec<f64> = a
        .diagonal()
        .iter()
        .zip(free)
        .map(|(&d, &f)| if f && d > 0.0 { 1.0 / d.sqrt() } else { 1.0 })
        .collect();
    let kd = space.bandwidth();
    let chol = BandedCholesky::factor(a.dim(), kd, |set| {
        for (i, &fi) in free.iter().enumerate() {
            if !fi {
                set(i, i, 1.0);
                continue;
            }
            let (c, v) = a.row(i);
            for (&j, &x) in c.iter().zip(v) {
                if j >= i && free[j] {
                    set(i, j, scale[i] * x * scale[j]);
                }
            }
        }
    })?;
    let mut y: Vec<f64> = rhs
        .iter()
        .zip(&scale)
        .zip(free)
        .map(|((r, s), &f)| if f { r * s } else { 0.0 })
        .collect();
    chol.solve(&mut y)?;
    Ok(y.iter().zip(&scale).zip(free).map(|((v, s), &f)| if f { v * s } else { 0.0 }).collect())
}

/// `int grad(g) . grad(w b_i)` for a gradient field `grad_g`.
pub fn gradient_load<G: Fn([f64; 2]) -> [f64; 2]>(space: &WeightedSpace, grad_g: G) -> Vec<f64> {
    let nl = space.local_len();
    let mut phi = vec![0.0; nl];
    let mut grad = vec![[0.0; 2]; nl];
    let mut out = vec![0.0; space.dim()];
    let mut local = vec![0.0; nl];
    for c in space.cells() {
        local.iter_mut().for_each(|v| *v = 0.0);
        for p in &space.points()[c.points.clone()] {
            space.local_values_grads(p, &mut phi, &mut grad);
            let gg = grad_g(p.x);
            for a in 0..nl {
                local[a] += p.qw * (gg[0] * grad[a][0] + gg[1] * grad[a][1]);
            }
        }
        for (d, l) in c.dofs.iter().zip(&local) {
            if let Some(i) = d {
                out[*i] += l;
            }
        }
    }
    out
}

/// Ritz projection: `S beta = int grad(u0) . grad(w b_i)` on the relevant
/// dofs.
pub fn ritz_project<G: Fn([f64; 2]) -> [f64; 2]>(
    space: &WeightedSpace,
    ops: &AssembledOperators,
    grad_u0: G,
) -> Result<Vec<f64>> {
    let rhs = gradient_load(space, grad_u0);
    if rhs.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; space.dim()]);
    }
    solve_spd(space, &ops.stiffness, &rhs)
}
