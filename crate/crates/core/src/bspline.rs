//! Uniform (cardinal) b-splines and their tensor products on a regular grid.
//!
//! The univariate spline `b^m` has knots `0, 1, ..., m+1` and is built from
//! the half-open indicator `b^0 = 1` on `[0, 1)`. A bivariate spline with
//! index `k` on a grid of width `h` is `b^m(x/h - k1) * b^m(y/h - k2)` (after
//! shifting by the grid origin), supported on `kh + [0, m+1]^2 h`.

use crate::domain::WeightFunction;
use crate::error::{Error, Result};

/// Largest spline degree supported by the fixed-size evaluation buffers.
pub const MAX_DEGREE: usize = 7;

/// Evaluates the cardinal b-spline `b^m` at `x` by the degree recursion.
///
/// Returns zero outside `[0, m+1)`.
pub fn eval_univariate(m: usize, x: f64) -> f64 {
    if !(0.0..(m + 1) as f64).contains(&x) {
        return 0.0;
    }
    if m == 0 {
        return 1.0;
    }
    let mf = m as f64;
    x / mf * eval_univariate(m - 1, x) + (mf + 1.0 - x) / mf * eval_univariate(m - 1, x - 1.0)
}

/// `order`-th derivative of `b^m` at `x`, from
/// `d/dx b^m(x) = b^{m-1}(x) - b^{m-1}(x-1)` applied `order` times.
pub fn eval_univariate_derivative(m: usize, order: usize, x: f64) -> Result<f64> {
    if order > m {
        return Err(Error::DerivativeOrder { order, degree: m });
    }
    let mut acc = 0.0;
    let mut binom = 1.0;
    for i in 0..=order {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * binom * eval_univariate(m - order, x - i as f64);
        binom = binom * (order - i) as f64 / (i + 1) as f64;
    }
    Ok(acc)
}

/// Values `b^m(u + s)` for `s = 0..=m`, i.e. every spline piece that is
/// nonzero on one knot interval, with `u` the local coordinate in it.
///
/// `u` is normally in `[0, 1)`; `u = 1` evaluates the left limit.
pub fn cardinal_values(m: usize, u: f64, out: &mut [f64]) {
    debug_assert!(out.len() > m);
    out[0] = 1.0;
    for p in 1..=m {
        let pf = p as f64;
        out[p] = 0.0;
        for s in (0..=p).rev() {
            let sf = s as f64;
            let own = (u + sf) / pf * out[s];
            let left = if s > 0 {
                (pf + 1.0 - u - sf) / pf * out[s - 1]
            } else {
                0.0
            };
            out[s] = own + left;
        }
    }
}

/// Values and first derivatives of `b^m(u + s)` for `s = 0..=m`.
pub fn cardinal_values_and_derivatives(m: usize, u: f64, val: &mut [f64], der: &mut [f64]) {
    if m == 0 {
        val[0] = 1.0;
        der[0] = 0.0;
        return;
    }
    let mut lower = [0.0; MAX_DEGREE + 1];
    cardinal_values(m - 1, u, &mut lower);
    for s in 0..=m {
        let here = if s < m { lower[s] } else { 0.0 };
        let prev = if s > 0 { lower[s - 1] } else { 0.0 };
        der[s] = here - prev;
    }
    cardinal_values(m, u, val);
}

/// Regular grid of square cells `Q_l = origin + l h + [0, 1]^2 h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub origin: [f64; 2],
    pub h: f64,
    pub cells: [usize; 2],
}

impl Grid {
    /// Covers `bbox = [[xmin, ymin], [xmax, ymax]]` with cells of width
    /// `max(width, height) / cells_per_direction`.
    pub fn covering(bbox: [[f64; 2]; 2], cells_per_direction: usize) -> Result<Self> {
        if cells_per_direction == 0 {
            return Err(Error::InvalidParameter("grid needs at least one cell".into()));
        }
        let w = bbox[1][0] - bbox[0][0];
        let ht = bbox[1][1] - bbox[0][1];
        if !(w > 0.0 && ht > 0.0) {
            return Err(Error::InvalidParameter(format!("degenerate bounding box {bbox:?}")));
        }
        let h = w.max(ht) / cells_per_direction as f64;
        let count = |len: f64| ((len / h) - 1e-9).ceil().max(1.0) as usize;
        Ok(Grid {
            origin: bbox[0],
            h,
            cells: [count(w), count(ht)],
        })
    }

    pub fn cell_count(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn cell_origin(&self, l: [i64; 2]) -> [f64; 2] {
        [
            self.origin[0] + l[0] as f64 * self.h,
            self.origin[1] + l[1] as f64 * self.h,
        ]
    }

    /// Cell index and local coordinates of `p`. Points on the far edge of the
    /// grid are attributed to the last cell with local coordinate 1.
    pub fn locate(&self, p: [f64; 2]) -> ([i64; 2], [f64; 2]) {
        let mut l = [0i64; 2];
        let mut u = [0.0; 2];
        for d in 0..2 {
            let t = (p[d] - self.origin[d]) / self.h;
            let mut cell = t.floor() as i64;
            if cell == self.cells[d] as i64 && t == self.cells[d] as f64 {
                cell -= 1;
            }
            l[d] = cell;
            u[d] = t - cell as f64;
        }
        (l, u)
    }
}

/// Tensor-product b-splines of one degree on a grid, with the relevant
/// index set `K` and its padded rectangle `K'`.
///
/// Coefficient vectors are indexed over `K'` in lexicographic `(k1, k2)`
/// order; indices in `K' \ K` are pinned to zero.
#[derive(Debug, Clone)]
pub struct TensorBasis {
    degree: usize,
    grid: Grid,
    lo: [i64; 2],
    hi: [i64; 2],
    relevant: Vec<bool>,
    relevant_list: Vec<[i64; 2]>,
}

impl TensorBasis {
    /// Classifies every b-spline whose support meets the grid: relevant iff
    /// some sample of a `samples_per_cell^2` lattice in a supporting cell has
    /// positive weight.
    pub fn classify_relevant(
        degree: usize,
        grid: Grid,
        weight: &WeightFunction,
        samples_per_cell: usize,
    ) -> Result<Self> {
        if degree == 0 || degree > MAX_DEGREE {
            return Err(Error::InvalidParameter(format!(
                "spline degree must be in 1..={MAX_DEGREE}, got {degree}"
            )));
        }
        if samples_per_cell < 2 {
            return Err(Error::InvalidParameter("samples_per_cell must be at least 2".into()));
        }
        if !(grid.h > 0.0) {
            return Err(Error::InvalidParameter("grid width must be positive".into()));
        }
        let [nx, ny] = grid.cells;
        let s = samples_per_cell;
        let mut active = vec![false; nx * ny];
        for lx in 0..nx {
            for ly in 0..ny {
                let o = grid.cell_origin([lx as i64, ly as i64]);
                'cell: for i in 0..s {
                    for j in 0..s {
                        let p = [
                            o[0] + (i as f64 + 0.5) / s as f64 * grid.h,
                            o[1] + (j as f64 + 0.5) / s as f64 * grid.h,
                        ];
                        if weight.value(p) > 0.0 {
                            active[lx * ny + ly] = true;
                            break 'cell;
                        }
                    }
                }
            }
        }

        let m = degree as i64;
        let mut relevant_list = Vec::new();
        for k1 in -m..nx as i64 {
            for k2 in -m..ny as i64 {
                let hit = (k1.max(0)..=(k1 + m).min(nx as i64 - 1)).any(|l1| {
                    (k2.max(0)..=(k2 + m).min(ny as i64 - 1))
                        .any(|l2| active[l1 as usize * ny + l2 as usize])
                });
                if hit {
                    relevant_list.push([k1, k2]);
                }
            }
        }
        if relevant_list.is_empty() {
            return Err(Error::EmptyBasis);
        }
        let mut lo = [i64::MAX; 2];
        let mut hi = [i64::MIN; 2];
        for k in &relevant_list {
            for d in 0..2 {
                lo[d] = lo[d].min(k[d]);
                hi[d] = hi[d].max(k[d]);
            }
        }
        let mut basis = TensorBasis {
            degree,
            grid,
            lo,
            hi,
            relevant: Vec::new(),
            relevant_list,
        };
        let mut relevant = vec![false; basis.len()];
        for k in &basis.relevant_list {
            relevant[basis.dof_index(*k).expect("relevant index inside K'")] = true;
        }
        basis.relevant = relevant;
        Ok(basis)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Number of indices in the padded array `K'`.
    pub fn len(&self) -> usize {
        (self.width(0) * self.width(1)) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn width(&self, d: usize) -> i64 {
        self.hi[d] - self.lo[d] + 1
    }

    /// Inclusive corners of `K'`.
    pub fn padded_bounds(&self) -> ([i64; 2], [i64; 2]) {
        (self.lo, self.hi)
    }

    /// Relevant indices `K`, lexicographically ordered.
    pub fn relevant_indices(&self) -> &[[i64; 2]] {
        &self.relevant_list
    }

    pub fn relevant_count(&self) -> usize {
        self.relevant_list.len()
    }

    /// Per-dof flag over `K'`: true for relevant (free) coefficients.
    pub fn relevant_mask(&self) -> &[bool] {
        &self.relevant
    }

    pub fn is_relevant(&self, dof: usize) -> bool {
        self.relevant[dof]
    }

    pub fn dof_index(&self, k: [i64; 2]) -> Option<usize> {
        if k[0] < self.lo[0] || k[0] > self.hi[0] || k[1] < self.lo[1] || k[1] > self.hi[1] {
            return None;
        }
        Some(((k[0] - self.lo[0]) * self.width(1) + (k[1] - self.lo[1])) as usize)
    }

    pub fn index_of(&self, dof: usize) -> [i64; 2] {
        let w = self.width(1);
        [self.lo[0] + dof as i64 / w, self.lo[1] + dof as i64 % w]
    }

    /// Largest `|i - j|` over pairs of dofs with overlapping supports.
    pub fn max_coupling_offset(&self) -> usize {
        let m = self.degree as i64;
        (m * self.width(1) + m) as usize
    }

    /// Support `kh + [0, m+1]^2 h` as `[[xmin, ymin], [xmax, ymax]]`.
    pub fn support(&self, k: [i64; 2]) -> [[f64; 2]; 2] {
        let o = self.grid.cell_origin(k);
        let len = (self.degree + 1) as f64 * self.grid.h;
        [o, [o[0] + len, o[1] + len]]
    }

    /// Value and gradient of `b_k` at `p`.
    pub fn eval(&self, k: [i64; 2], p: [f64; 2]) -> (f64, [f64; 2]) {
        let m = self.degree;
        let (l, u) = self.grid.locate(p);
        let s0 = l[0] - k[0];
        let s1 = l[1] - k[1];
        if !(0..=m as i64).contains(&s0) || !(0..=m as i64).contains(&s1) {
            return (0.0, [0.0, 0.0]);
        }
        let mut vx = [0.0; MAX_DEGREE + 1];
        let mut dx = [0.0; MAX_DEGREE + 1];
        let mut vy = [0.0; MAX_DEGREE + 1];
        let mut dy = [0.0; MAX_DEGREE + 1];
        cardinal_values_and_derivatives(m, u[0], &mut vx, &mut dx);
        cardinal_values_and_derivatives(m, u[1], &mut vy, &mut dy);
        let (a, b) = (s0 as usize, s1 as usize);
        let inv_h = 1.0 / self.grid.h;
        (
            vx[a] * vy[b],
            [dx[a] * vy[b] * inv_h, vx[a] * dy[b] * inv_h],
        )
    }
}
