mod common;

use proptest::prelude::*;
use rand::Rng;
use common::Oracle;
use wbfrac::fractional::{caputo_power, complementary_coefficients, gamma, GradedMesh, L21Sigma};

fn sample_meshes() -> Vec<GradedMesh> {
    let mut out = Vec::new();
    for alpha in [0.3, 0.5, 0.8] {
        for r in [1.0, 2.0 / alpha] {
            for n in [8, 64] {
                out.push(GradedMesh::new(0.5, n, r, alpha).unwrap());
            }
        }
    }
    out
}

#[test]
fn mesh_reference_values() {
    let m = GradedMesh::new(0.5, 4, 2.0, 0.5).unwrap();
    assert_eq!(m.t(2), 0.125);
    let u = GradedMesh::new(1.0, 2, 1.0, 0.5).unwrap();
    assert_eq!((u.t(1), u.tau(1), u.tau(2)), (0.5, 0.5, 0.5));
    assert_eq!(u.sigma(), 0.25);
    assert_eq!(u.t_offset(1), 0.75 * u.t(1));
    for n in 2..=2 {
        assert!((u.tau_star(n) - (1.0 - u.sigma())).abs() < 1e-15);
    }
    assert!(GradedMesh::new(1.0, 4, 0.9, 0.5).is_err());
    assert!(GradedMesh::new(1.0, 4, 1.0, 0.0).is_err());
    assert!(GradedMesh::new(1.0, 4, 1.0, 1.0).is_err());
    assert!(GradedMesh::new(1.0, 0, 1.0, 0.5).is_err());
}

#[test]
fn uniform_mesh_extrapolation_factor_is_constant() {
    let m = GradedMesh::new(0.5, 16, 1.0, 0.6).unwrap();
    for n in 2..=16 {
        assert!((m.tau_star(n) - (1.0 - m.sigma())).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn mesh_nodes_are_ordered(alpha in 0.05f64..0.95, r in 1.0f64..8.0, n in 1usize..200, t in 0.1f64..4.0) {
        let m = GradedMesh::new(t, n, r, alpha).unwrap();
        prop_assert_eq!(m.t(0), 0.0);
        prop_assert_eq!(m.t(n), t);
        for k in 1..=n {
            prop_assert!(m.t(k) > m.t(k - 1));
            prop_assert!(m.t(k - 1) < m.t_offset(k) && m.t_offset(k) < m.t(k));
        }
    }
}

#[test]
fn first_weight_matches_quadrature_oracle() {
    let mesh = GradedMesh::new(1.0, 1, 1.0, 0.5).unwrap();
    let c = L21Sigma::new(mesh.clone());
    let a = c.step_weights(1)[0];
    let oracle = Oracle { mesh: &mesh }.a_current(1);
    assert!((a - oracle).abs() <= 1e-10 * oracle);
    assert!((a - 0.9772).abs() < 5e-5);
}

#[test]
fn coefficients_match_quadrature_oracle() {
    for mesh in sample_meshes() {
        let c = L21Sigma::new(mesh.clone());
        let o = Oracle { mesh: &mesh };
        for n in 1..=mesh.steps() {
            let a0 = c.a_current(n);
            assert!((a0 - o.a_current(n)).abs() <= 1e-10 * a0);
            for j in 1..n {
                let a = c.a_history(n, j);
                let ao = o.a_history(n, j);
                assert!((a - ao).abs() <= 1e-10 * ao, "a n={n} j={j}: {a} vs {ao}");
                let b = c.b_history(n, j);
                let bo = o.b_history(n, j);
                // The moment cancels; measure it against the integral of |η - t_{j-1/2}|.
                let scale = ao * mesh.tau(j) / (mesh.t(j + 1) - mesh.t(j - 1));
                assert!((b - bo).abs() <= 1e-10 * scale, "b n={n} j={j}: {b} vs {bo}");
            }
        }
    }
}

#[test]
fn step_weights_match_oracle_assembly() {
    for mesh in sample_meshes().into_iter().filter(|m| m.steps() == 8) {
        let c = L21Sigma::new(mesh.clone());
        let o = Oracle { mesh: &mesh };
        for n in 1..=mesh.steps() {
            let w = c.step_weights(n);
            let wo = o.weights(n);
            let scale = wo[0];
            for k in 0..n {
                assert!((w[k] - wo[k]).abs() <= 1e-10 * scale, "n={n} k={k}: {} vs {}", w[k], wo[k]);
            }
        }
    }
}

#[test]
fn two_step_weights_telescope_on_uniform_mesh() {
    for alpha in [0.3, 0.5, 0.9] {
        let mesh = GradedMesh::new(1.0, 2, 1.0, alpha).unwrap();
        let w = L21Sigma::new(mesh.clone()).step_weights(2);
        let ts = mesh.t_offset(2);
        let oracle = common::integrate_near_singular(alpha, &|_| 1.0, 0.0, ts) / (mesh.tau(1) * gamma(1.0 - alpha));
        assert!((w[0] + w[1] - oracle).abs() <= 1e-10 * oracle);
    }
}

#[test]
fn coefficients_are_positive() {
    for alpha in [0.4, 0.6, 0.8] {
        for r in [1.0, 2.0 / alpha] {
            for n in [8, 64] {
                let c = L21Sigma::new(GradedMesh::new(0.5, n, r, alpha).unwrap());
                for k in 1..=n {
                    assert!(c.step_weights(k)[0] > 0.0);
                    for j in 1..k {
                        assert!(c.a_history(k, j) > 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn complementary_coefficients_first_entries() {
    let c = L21Sigma::new(GradedMesh::new(0.5, 12, 2.5, 0.8).unwrap());
    for n in 1..=12 {
        let q = c.complementary(n);
        // Entry n - 1 is Q^{(n)}_0.
        assert!((q[n - 1] - 1.0 / c.step_weights(n)[0]).abs() < 1e-14 * q[n - 1]);
    }
    let one = L21Sigma::new(GradedMesh::new(1.0, 1, 1.0, 0.5).unwrap());
    assert!((one.complementary(1)[0] - 1.0 / 0.9772).abs() < 1e-4);
    let tables: Vec<Vec<f64>> = (1..=5).map(|k| c.step_weights(k)).collect();
    assert_eq!(complementary_coefficients(&tables), c.complementary(5));
}

#[test]
fn complementary_coefficients_invert_the_discrete_derivative() {
    let mut r = common::rng(20);
    for (alpha, grading) in [(0.4, 5.0), (0.7, 1.0), (0.5, 4.0)] {
        let steps = 40;
        let c = L21Sigma::new(GradedMesh::new(0.5, steps, grading, alpha).unwrap());
        let omega: Vec<f64> = (0..=steps).map(|_| r.gen_range(-1.0..1.0)).collect();
        let d = c.apply(&omega);
        for n in [1, 7, steps] {
            let q = c.complementary(n);
            let s: f64 = (1..=n).map(|j| q[j - 1] * d[j - 1]).sum();
            assert!((s - (omega[n] - omega[0])).abs() <= 1e-10, "n={n}: {s}");
        }
    }
}

#[test]
fn complementary_sum_bound() {
    // γ = α: sum_j Q^{(N)}_{N-j} <= 11 Γ(1) / (4 Γ(1+α)) T^α (t_N/T)^α.
    let t = 0.5;
    for alpha in [0.4, 0.8] {
        for steps in [16, 64] {
            for r in [1.0, 2.0 / alpha] {
                let c = L21Sigma::new(GradedMesh::new(t, steps, r, alpha).unwrap());
                let s: f64 = c.complementary(steps).iter().sum();
                let bound = 11.0 / (4.0 * gamma(1.0 + alpha)) * t.powf(alpha);
                assert!(s <= bound, "alpha={alpha} N={steps} r={r}: {s} > {bound}");
            }
        }
    }
}

#[test]
fn truncation_error_decays_at_the_predicted_rate() {
    for alpha in [0.4, 0.6, 0.8] {
        let r = 2.0 / alpha;
        let expected = (3.0f64 - alpha).min(r * alpha);
        let mut errors = Vec::new();
        for steps in [16, 32, 64, 128] {
            let mesh = GradedMesh::new(1.0, steps, r, alpha).unwrap();
            let c = L21Sigma::new(mesh.clone());
            let omega: Vec<f64> = mesh.nodes().iter().map(|&t| t.powi(3) + t.powf(alpha)).collect();
            let d = c.apply(&omega);
            let mut worst = 0.0f64;
            for n in 1..=steps {
                let ts = mesh.t_offset(n);
                let exact = caputo_power(alpha, 3.0, ts).unwrap() + caputo_power(alpha, alpha, ts).unwrap();
                worst = worst.max(ts.powf(alpha) * (d[n - 1] - exact).abs());
            }
            errors.push(worst);
        }
        for w in errors.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!(rate >= expected - 0.2, "alpha={alpha}: rate {rate} in {errors:?}");
        }
    }
}

#[test]
fn caputo_power_matches_quadrature_of_the_definition() {
    for (alpha, g, t) in [(0.5, 0.5, 1.0), (0.5, 1.0, 1.0), (0.3, 3.0, 0.4), (0.8, 0.8, 2.0), (0.6, 2.5, 0.7)] {
        let exact = caputo_power(alpha, g, t).unwrap();
        let numeric = common::caputo_numeric(alpha, &|s| g * s.powf(g - 1.0), t);
        assert!((exact - numeric).abs() <= 1e-10 * exact.abs(), "{alpha} {g} {t}: {exact} vs {numeric}");
    }
    assert!((caputo_power(0.5, 0.5, 3.7).unwrap() - 0.886_226_925_452_758).abs() < 1e-12);
    assert!((caputo_power(0.5, 1.0, 1.0).unwrap() - 1.128_379_167_095_513).abs() < 1e-12);
    assert!(caputo_power(0.5, 2.0, 1e-12).unwrap() < 1e-15);
    assert!(caputo_power(0.5, 0.0, 1.0).is_err());
}

#[test]
fn gamma_reference_values() {
    let cases = [
        (0.1, 9.513_507_698_668_732),
        (1.0 / 3.0, 2.678_938_534_707_747_6),
        (0.5, std::f64::consts::PI.sqrt()),
        (1.5, 0.886_226_925_452_758),
        (2.5, 1.329_340_388_179_137),
        (4.5, 11.631_728_396_567_449),
        (5.0, 24.0),
    ];
    for (x, g) in cases {
        assert!((gamma(x) - g).abs() <= 1e-12 * g, "Γ({x}) = {} vs {g}", gamma(x));
    }
}

proptest! {
    #[test]
    fn gamma_recurrence(x in 0.01f64..4.0) {
        prop_assert!((gamma(x + 1.0) - x * gamma(x)).abs() <= 1e-12 * gamma(x + 1.0));
    }
}
