//! Gauss-Legendre quadrature over `Omega = {w > 0}` on a regular grid, with
//! recursive subdivision of cells cut by the boundary.

use crate::bspline::Grid;
use crate::domain::WeightFunction;
use crate::error::{Error, Result};

pub const MAX_POINTS: usize = 16;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Legendre polynomial `P_q(x)` and its derivative.
fn legendre(q: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if q == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=q {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let qf = q as f64;
    (p1, qf * (x * p1 - p0) / (x * x - 1.0))
}

/// `q`-point Gauss-Legendre rule, `1 <= q <= 16`. Nodes are ascending.
pub fn gauss_rule(q: usize) -> Result<QuadratureRule> {
    if !(1..=MAX_POINTS).contains(&q) {
        return Err(Error::InvalidParameter(format!(
            "Gauss rule needs 1..={MAX_POINTS} points, got {q}"
        )));
    }
    let mut nodes = vec![0.0; q];
    let mut weights = vec![0.0; q];
    let qf = q as f64;
    for i in 0..q.div_ceil(2) {
        // Chebyshev-like initial guess for the i-th largest root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (qf + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(q, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(q, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[q - 1 - i] = x;
        nodes[i] = -x;
        weights[i] = w;
        weights[q - 1 - i] = w;
    }
    if q % 2 == 1 {
        nodes[q / 2] = 0.0;
    }
    Ok(QuadratureRule { nodes, weights })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Interior,
    Exterior,
    Cut,
}

/// Classifies the square `origin + [0, h]^2` from a 5x5 lattice including the
/// corners. Exterior when every sample has `w <= 0`; interior when every
/// sample has `w >= 0` (with at least one positive); cut otherwise.
pub fn classify_cell(weight: &WeightFunction, origin: [f64; 2], h: f64) -> CellKind {
    let mut any_pos = false;
    let mut any_neg = false;
    for i in 0..5 {
        for j in 0..5 {
            let p = [origin[0] + i as f64 * h / 4.0, origin[1] + j as f64 * h / 4.0];
            let w = weight.value(p);
            any_pos |= w > 0.0;
            any_neg |= w < 0.0;
        }
    }
    match (any_pos, any_neg) {
        (false, _) => CellKind::Exterior,
        (true, false) => CellKind::Interior,
        (true, true) => CellKind::Cut,
    }
}

/// Quadrature point in physical coordinates with its weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPoint {
    pub x: [f64; 2],
    pub weight: f64,
}

fn push_tensor(
    rule: &QuadratureRule,
    origin: [f64; 2],
    h: f64,
    filter: Option<&WeightFunction>,
    out: &mut Vec<QuadPoint>,
) {
    let half = 0.5 * h;
    for (xi, wi) in rule.nodes.iter().zip(&rule.weights) {
        for (yj, wj) in rule.nodes.iter().zip(&rule.weights) {
            let x = [origin[0] + half * (1.0 + xi), origin[1] + half * (1.0 + yj)];
            if let Some(w) = filter {
                if w.value(x) <= 0.0 {
                    continue;
                }
            }
            out.push(QuadPoint {
                x,
                weight: wi * wj * half * half,
            });
        }
    }
}

fn push_cut(
    weight: &WeightFunction,
    rule: &QuadratureRule,
    origin: [f64; 2],
    h: f64,
    depth: usize,
    max_depth: usize,
    out: &mut Vec<QuadPoint>,
) {
    if depth == max_depth {
        push_tensor(rule, origin, h, Some(weight), out);
        return;
    }
    let hs = 0.5 * h;
    for a in 0..2 {
        for b in 0..2 {
            let o = [origin[0] + a as f64 * hs, origin[1] + b as f64 * hs];
            match classify_cell(weight, o, hs) {
                CellKind::Exterior => {}
                CellKind::Interior => push_tensor(rule, o, hs, None, out),
                CellKind::Cut => push_cut(weight, rule, o, hs, depth + 1, max_depth, out),
            }
        }
    }
}

/// Quadrature points for one grid cell, in a fixed order.
pub fn cell_points(
    weight: &WeightFunction,
    rule: &QuadratureRule,
    origin: [f64; 2],
    h: f64,
    max_depth: usize,
) -> (CellKind, Vec<QuadPoint>) {
    let kind = classify_cell(weight, origin, h);
    let mut pts = Vec::new();
    match kind {
        CellKind::Exterior => {}
        CellKind::Interior => push_tensor(rule, origin, h, None, &mut pts),
        CellKind::Cut => push_cut(weight, rule, origin, h, 0, max_depth, &mut pts),
    }
    (kind, pts)
}

/// Quadrature points of a single grid cell.
#[derive(Debug, Clone)]
pub struct CellQuadrature {
    pub cell: [i64; 2],
    pub kind: CellKind,
    pub points: Vec<QuadPoint>,
}

/// Quadrature over the whole domain, grouped by grid cell in lexicographic
/// cell order. Exterior cells are omitted.
#[derive(Debug, Clone)]
pub struct DomainQuadrature {
    pub grid: Grid,
    pub cells: Vec<CellQuadrature>,
}

impl DomainQuadrature {
    pub fn build(weight: &WeightFunction, grid: Grid, q: usize, max_depth: usize) -> Result<Self> {
        let rule = gauss_rule(q)?;
        let mut cells = Vec::new();
        for lx in 0..grid.cells[0] as i64 {
            for ly in 0..grid.cells[1] as i64 {
                let o = grid.cell_origin([lx, ly]);
                let (kind, points) = cell_points(weight, &rule, o, grid.h, max_depth);
                if !points.is_empty() {
                    cells.push(CellQuadrature {
                        cell: [lx, ly],
                        kind,
                        points,
                    });
                }
            }
        }
        Ok(DomainQuadrature { grid, cells })
    }

    pub fn point_count(&self) -> usize {
        self.cells.iter().map(|c| c.points.len()).sum()
    }

    pub fn points(&self) -> impl Iterator<Item = &QuadPoint> {
        self.cells.iter().flat_map(|c| c.points.iter())
    }

    /// Sums `f` over all points in fixed order.
    pub fn integrate<F: FnMut([f64; 2]) -> f64>(&self, mut f: F) -> f64 {
        let mut total = 0.0;
        for c in &self.cells {
            let mut cell_sum = 0.0;
            for p in &c.points {
                cell_sum += p.weight * f(p.x);
            }
            total += cell_sum;
        }
        total
    }
}

/// `int_Omega f` with Gauss rules of `q` points per direction on the cells
/// of `grid`, subdividing cut cells up to `max_depth` times.
pub fn integrate_over_domain<F: FnMut([f64; 2]) -> f64>(
    f: F,
    weight: &WeightFunction,
    grid: Grid,
    q: usize,
    max_depth: usize,
) -> Result<f64> {
    Ok(DomainQuadrature::build(weight, grid, q, max_depth)?.integrate(f))
}
