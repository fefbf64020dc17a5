mod common;

use std::f64::consts::PI;

use rand::Rng;
use wbfrac::assembly::{
    assemble_load, assemble_mass_stiffness, assemble_nonlinear, gradient_load, nonlinear_load, ritz_project,
    AssembledOperators, QuadratureSettings, WeightedSpace,
};
use wbfrac::bspline::Grid;
use wbfrac::domain::{weighted_basis_value_grad, WeightFunction};
use wbfrac::linalg::{generalized_symmetric_eigen, CsrMatrix};
use wbfrac::quadrature::integrate_over_domain;

fn space(weight: WeightFunction, m: usize, cells: usize) -> WeightedSpace {
    WeightedSpace::new(weight, m, cells, QuadratureSettings::for_degree(m)).unwrap()
}

fn sine(p: [f64; 2]) -> f64 {
    (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1]).sin()
}

fn sine_grad(p: [f64; 2]) -> [f64; 2] {
    let k = 2.0 * PI;
    [k * (k * p[0]).cos() * (k * p[1]).sin(), k * (k * p[0]).sin() * (k * p[1]).cos()]
}

fn free_dofs(s: &WeightedSpace) -> Vec<usize> {
    (0..s.dim()).filter(|&i| s.free_mask()[i]).collect()
}

/// Column-major dense restriction to the free dofs with symmetric Jacobi scaling.
fn scaled_dense(a: &CsrMatrix, free: &[usize]) -> Vec<f64> {
    let n = free.len();
    let d: Vec<f64> = free.iter().map(|&i| a.get(i, i).sqrt()).collect();
    let mut out = vec![0.0; n * n];
    for (c, &j) in free.iter().enumerate() {
        for (r, &i) in free.iter().enumerate() {
            out[c * n + r] = a.get(i, j) / (d[r] * d[c]);
        }
    }
    out
}

fn identity(n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    (0..n).for_each(|i| out[i * n + i] = 1.0);
    out
}

fn max_relative_asymmetry(a: &CsrMatrix) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.dim() {
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            let scale = (a.get(i, i) * a.get(j, j)).sqrt().max(f64::MIN_POSITIVE);
            worst = worst.max((v - a.get(j, i)).abs() / scale);
        }
    }
    worst
}

#[test]
fn operators_are_symmetric() {
    for (w, m) in [(WeightFunction::unit_square(), 2), (WeightFunction::inscribed_disk(), 3)] {
        let s = space(w, m, 8);
        let ops = assemble_mass_stiffness(&s).unwrap();
        assert!(max_relative_asymmetry(&ops.mass) <= 1e-12);
        assert!(max_relative_asymmetry(&ops.stiffness) <= 1e-12);
    }
}

#[test]
fn mass_is_definite_and_stiffness_semidefinite_on_relevant_dofs() {
    for (w, m) in [(WeightFunction::unit_square(), 1), (WeightFunction::inscribed_disk(), 2)] {
        let s = space(w, m, 8);
        let ops = assemble_mass_stiffness(&s).unwrap();
        let free = free_dofs(&s);
        let n = free.len();
        let (em, _) = generalized_symmetric_eigen(scaled_dense(&ops.mass, &free), identity(n), n).unwrap();
        assert!(em[0] > 0.0, "smallest mass eigenvalue {}", em[0]);
        let (es, _) = generalized_symmetric_eigen(scaled_dense(&ops.stiffness, &free), identity(n), n).unwrap();
        assert!(es[0] >= -1e-10, "smallest stiffness eigenvalue {}", es[0]);
    }
}

#[test]
fn sparsity_is_the_support_overlap_graph() {
    let s = space(WeightFunction::inscribed_disk(), 2, 8);
    let ops = assemble_mass_stiffness(&s).unwrap();
    let m = s.degree() as i64;
    let basis = s.basis();
    for i in free_dofs(&s) {
        for j in free_dofs(&s) {
            let (ki, kj) = (basis.index_of(i), basis.index_of(j));
            let overlap = (ki[0] - kj[0]).abs() <= m && (ki[1] - kj[1]).abs() <= m;
            assert_eq!(ops.mass.position(i, j).is_some(), overlap, "{ki:?} {kj:?}");
            assert_eq!(ops.stiffness.position(i, j).is_some(), overlap);
        }
    }
    // On the square every overlapping pair has a positive mass entry.
    let sq = space(WeightFunction::unit_square(), 2, 6);
    let mass = assemble_mass_stiffness(&sq).unwrap().mass;
    assert!(mass.values().iter().all(|&v| v > 0.0));
    let n = (2 * m + 1) as usize;
    assert!((0..mass.dim()).all(|i| mass.row(i).0.len() <= n * n));
}

#[test]
fn total_mass_on_the_square_is_the_integral_of_w_squared() {
    // int_0^1 (x(1-x))^2 dx = 1/30.
    let s = space(WeightFunction::unit_square(), 1, 8);
    let ops = assemble_mass_stiffness(&s).unwrap();
    let ones = vec![1.0; s.dim()];
    let total: f64 = ops.mass.mul_vec(&ones).iter().sum();
    assert!((total - 1.0 / 900.0).abs() <= 1e-14, "{total}");
}

#[test]
fn mass_row_sums_match_direct_quadrature() {
    for m in [1, 2] {
        let w = WeightFunction::unit_square();
        let s = space(w.clone(), m, 6);
        let ops = assemble_mass_stiffness(&s).unwrap();
        let sums = ops.mass.mul_vec(&vec![1.0; s.dim()]);
        let grid = Grid::covering(w.bounding_box(), 6).unwrap();
        for i in (0..s.dim()).step_by(5) {
            let k = s.basis().index_of(i);
            let oracle = integrate_over_domain(
                |p| w.value(p) * weighted_basis_value_grad(&w, s.basis(), k, p).0,
                &w,
                grid,
                8,
                4,
            )
            .unwrap();
            assert!((sums[i] - oracle).abs() <= 1e-12 * oracle.abs().max(1e-6), "m={m} k={k:?}: {} vs {oracle}", sums[i]);
        }
    }
}

#[test]
fn mass_and_stiffness_entries_match_direct_quadrature_on_the_disk() {
    let w = WeightFunction::inscribed_disk();
    let s = space(w.clone(), 2, 8);
    let ops = assemble_mass_stiffness(&s).unwrap();
    let grid = Grid::covering(w.bounding_box(), 8).unwrap();
    let q = s.quadrature();
    let mut r = common::rng(30);
    let free = free_dofs(&s);
    for _ in 0..20 {
        let i = free[r.gen_range(0..free.len())];
        let (cols, _) = ops.mass.row(i);
        let j = cols[r.gen_range(0..cols.len())];
        let (ki, kj) = (s.basis().index_of(i), s.basis().index_of(j));
        let fi = |p| weighted_basis_value_grad(&w, s.basis(), ki, p);
        let fj = |p| weighted_basis_value_grad(&w, s.basis(), kj, p);
        let mo = integrate_over_domain(|p| fi(p).0 * fj(p).0, &w, grid, q.points, q.max_depth).unwrap();
        let so = integrate_over_domain(
            |p| {
                let (a, b) = (fi(p).1, fj(p).1);
                a[0] * b[0] + a[1] * b[1]
            },
            &w,
            grid,
            q.points,
            q.max_depth,
        )
        .unwrap();
        assert!((ops.mass.get(i, j) - mo).abs() <= 1e-12 * ops.mass.get(i, i));
        assert!((ops.stiffness.get(i, j) - so).abs() <= 1e-12 * ops.stiffness.get(i, i));
    }
}

#[test]
fn pinned_rows_are_empty_on_the_disk() {
    let s = space(WeightFunction::inscribed_disk(), 3, 8);
    let ops = assemble_mass_stiffness(&s).unwrap();
    let pinned: Vec<usize> = (0..s.dim()).filter(|&i| !s.free_mask()[i]).collect();
    assert!(!pinned.is_empty());
    for i in pinned {
        assert!(ops.mass.row(i).0.is_empty() && ops.stiffness.row(i).0.is_empty());
        for j in 0..s.dim() {
            assert_eq!(ops.stiffness.get(j, i), 0.0);
        }
    }
}

#[test]
fn dof_counts_for_the_cubic_series() {
    for (cells, dofs) in [(4, 49), (8, 121), (16, 361), (32, 1225)] {
        let g = Grid::covering(WeightFunction::unit_square().bounding_box(), cells).unwrap();
        let b = wbfrac::bspline::TensorBasis::classify_relevant(3, g, &WeightFunction::unit_square(), 4).unwrap();
        assert_eq!(b.len(), dofs);
    }
}

#[test]
fn loads() {
    let s = space(WeightFunction::unit_square(), 2, 8);
    assert!(assemble_load(&s, |_| 0.0).iter().all(|&v| v == 0.0));

    // g = 1 is invariant under the square's symmetries, and so is the grid.
    let one = assemble_load(&s, |_| 1.0);
    let n = (s.dim() as f64).sqrt() as usize;
    let at = |a: usize, b: usize| one[s.basis().dof_index(index_at(&s, a, b)).unwrap()];
    for a in 0..n {
        for b in 0..n {
            let v = at(a, b);
            for u in [at(b, a), at(n - 1 - a, b), at(a, n - 1 - b)] {
                assert!((v - u).abs() <= 1e-15 * v.abs().max(1e-3));
            }
        }
    }

    // Pairing with the coefficients c_k = g(support centre) approximates
    // int g^2 w > 0; check it against direct quadrature of that function.
    let w = WeightFunction::unit_square();
    let load = assemble_load(&s, sine);
    let coeffs: Vec<f64> = (0..s.dim())
        .map(|i| {
            let sup = s.basis().support(s.basis().index_of(i));
            sine([0.5 * (sup[0][0] + sup[1][0]), 0.5 * (sup[0][1] + sup[1][1])])
        })
        .collect();
    let pairing: f64 = load.iter().zip(&coeffs).map(|(a, b)| a * b).sum();
    let grid = Grid::covering(w.bounding_box(), 8).unwrap();
    let oracle = integrate_over_domain(|p| sine(p) * s.evaluate(&coeffs, p), &w, grid, 8, 4).unwrap();
    assert!(pairing > 0.0);
    assert!((pairing - oracle).abs() <= 1e-12, "{pairing} vs {oracle}");
}

fn index_at(s: &WeightedSpace, a: usize, b: usize) -> [i64; 2] {
    let (lo, _) = s.basis().padded_bounds();
    [lo[0] + a as i64, lo[1] + b as i64]
}

#[test]
fn nonlinear_terms_at_zero_state() {
    let s = space(WeightFunction::inscribed_disk(), 2, 8);
    let ops = assemble_mass_stiffness(&s).unwrap();
    let zero = vec![0.0; s.dim()];
    let (v, jac) = assemble_nonlinear(&s, &zero);
    assert!(v.iter().all(|&x| x == 0.0));
    assert!(nonlinear_load(&s, &zero).iter().all(|&x| x == 0.0));
    for i in 0..s.dim() {
        let (cols, vals) = jac.row(i);
        for (&j, &x) in cols.iter().zip(vals) {
            assert!((x - ops.mass.get(i, j)).abs() <= 1e-13 * (ops.mass.get(i, i) * ops.mass.get(j, j)).sqrt(), "{i} {j}: {x} vs {}", ops.mass.get(i, j));
        }
    }
}

#[test]
fn nonlinear_vector_is_the_pointwise_cubic() {
    let s = space(WeightFunction::inscribed_disk(), 1, 8);
    let mut r = common::rng(31);
    let state: Vec<f64> = (0..s.dim()).map(|i| if s.free_mask()[i] { r.gen_range(-4.0..4.0) } else { 0.0 }).collect();
    let w = s.weight().clone();
    let grid = *s.basis().grid();
    let q = s.quadrature();
    let v = nonlinear_load(&s, &state);
    for i in free_dofs(&s).into_iter().step_by(7) {
        let k = s.basis().index_of(i);
        let oracle = integrate_over_domain(
            |p| {
                let u = s.evaluate(&state, p);
                (u - u * u * u) * weighted_basis_value_grad(&w, s.basis(), k, p).0
            },
            &w,
            grid,
            q.points,
            q.max_depth,
        )
        .unwrap();
        assert!((v[i] - oracle).abs() <= 1e-12 * oracle.abs().max(1e-8), "{} vs {oracle}", v[i]);
    }
}

#[test]
fn jacobian_matches_directional_finite_differences() {
    let s = space(WeightFunction::inscribed_disk(), 2, 8);
    let mut r = common::rng(32);
    let rand_vec = |r: &mut rand_chacha::ChaCha8Rng, scale: f64| -> Vec<f64> {
        (0..s.dim()).map(|i| if s.free_mask()[i] { r.gen_range(-scale..scale) } else { 0.0 }).collect()
    };
    let state = rand_vec(&mut r, 10.0);
    let (_, jac) = assemble_nonlinear(&s, &state);
    for _ in 0..5 {
        let d = rand_vec(&mut r, 1.0);
        let eps = 1e-5;
        let plus: Vec<f64> = state.iter().zip(&d).map(|(a, b)| a + eps * b).collect();
        let minus: Vec<f64> = state.iter().zip(&d).map(|(a, b)| a - eps * b).collect();
        let (fp, fm) = (nonlinear_load(&s, &plus), nonlinear_load(&s, &minus));
        let fd: Vec<f64> = fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
        let jd = jac.mul_vec(&d);
        let num: f64 = fd.iter().zip(&jd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = jd.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(num <= 1e-6 * den, "relative error {}", num / den);
    }
}

fn ritz(s: &WeightedSpace, ops: &AssembledOperators, g: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
    ritz_project(s, ops, g).unwrap()
}

#[test]
fn ritz_projection_of_zero_is_zero() {
    let s = space(WeightFunction::inscribed_disk(), 2, 8);
    let ops = assemble_mass_stiffness(&s).unwrap();
    assert!(ritz(&s, &ops, |_| [0.0, 0.0]).iter().all(|&v| v == 0.0));
}

#[test]
fn ritz_projection_reproduces_space_members() {
    for w in [WeightFunction::unit_square(), WeightFunction::inscribed_disk()] {
        let s = space(w.clone(), 2, 8);
        let ops = assemble_mass_stiffness(&s).unwrap();
        for i in free_dofs(&s).into_iter().step_by(11) {
            let k = s.basis().index_of(i);
            let beta = ritz(&s, &ops, |p| weighted_basis_value_grad(&w, s.basis(), k, p).1);
            for (j, &b) in beta.iter().enumerate() {
                let expected = if j == i { 1.0 } else { 0.0 };
                assert!((b - expected).abs() <= 1e-8, "k={k:?} j={j}: {b}");
            }
        }
    }
}

#[test]
fn ritz_projection_is_galerkin_orthogonal() {
    let s = space(WeightFunction::inscribed_disk(), 3, 8);
    let ops = assemble_mass_stiffness(&s).unwrap();
    let beta = ritz(&s, &ops, sine_grad);
    let rhs = gradient_load(&s, sine_grad);
    let sb = ops.stiffness.mul_vec(&beta);
    let scale = rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for i in free_dofs(&s) {
        assert!((sb[i] - rhs[i]).abs() <= 1e-10 * scale);
    }
}

#[test]
fn ritz_projection_error_is_third_order_for_quadratics() {
    let w = WeightFunction::unit_square();
    let error = |cells: usize| {
        let s = space(w.clone(), 2, cells);
        let ops = assemble_mass_stiffness(&s).unwrap();
        let beta = ritz(&s, &ops, sine_grad);
        let grid = Grid::covering(w.bounding_box(), 32).unwrap();
        integrate_over_domain(|p| (sine(p) - s.evaluate(&beta, p)).powi(2), &w, grid, 6, 4).unwrap().sqrt()
    };
    let (e8, e16) = (error(8), error(16));
    let ratio = e8 / e16;
    assert!((6.0..=12.0).contains(&ratio), "ratio {ratio}: {e8} -> {e16}");
}

#[test]
fn coordinate_export_lists_every_stored_entry() {
    let s = space(WeightFunction::unit_square(), 1, 4);
    let ops = assemble_mass_stiffness(&s).unwrap();
    let mut buf = Vec::new();
    ops.mass.write_coordinate(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let entries: Vec<(usize, usize, f64)> = text
        .lines()
        .filter(|l| !l.starts_with('%') && !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    assert_eq!(entries.len(), ops.mass.nnz());
    for (i, j, v) in entries {
        assert_eq!(v, ops.mass.get(i, j));
    }
}
