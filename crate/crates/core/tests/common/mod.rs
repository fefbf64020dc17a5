#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wbfrac::fractional::{gamma, GradedMesh};
use wbfrac::quadrature::gauss_rule;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Cardinal b-spline from truncated powers:
/// `b^m(x) = 1/m! sum_j (-1)^j C(m+1, j) (x - j)_+^m`.
pub fn truncated_power_bspline(m: usize, x: f64) -> f64 {
    if !(0.0..(m + 1) as f64).contains(&x) {
        return 0.0;
    }
    let mut s = 0.0;
    for j in 0..=m + 1 {
        let d = x - j as f64;
        if d > 0.0 {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            s += sign * binomial(m + 1, j) * d.powi(m as i32);
        }
    }
    s / factorial(m)
}

fn panel(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let rule = gauss_rule(16).unwrap();
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * f(c + h * x)).sum::<f64>() * h
}

/// Composite 16-point Gauss on panels that shrink geometrically towards
/// either end flagged as (nearly) singular.
pub fn integrate_graded(f: &dyn Fn(f64) -> f64, a: f64, b: f64, grade_lo: bool, grade_hi: bool) -> f64 {
    let mid = if grade_lo && grade_hi { 0.5 * (a + b) } else if grade_lo { b } else { a };
    let mut total = 0.0;
    if grade_lo {
        let mut hi = mid;
        let len = mid - a;
        for k in 1..1100 {
            let lo = a + len * 0.5f64.powi(k);
            total += panel(f, lo, hi);
            hi = lo;
            if hi - a < 1e-300 || (hi - a) < len * 1e-280 {
                break;
            }
        }
    }
    if grade_hi {
        let mut lo = mid;
        let len = b - mid;
        for k in 1..1100 {
            let hi = b - len * 0.5f64.powi(k);
            total += panel(f, lo, hi);
            lo = hi;
            if b - lo < len * 1e-280 {
                break;
            }
        }
    }
    if !grade_lo && !grade_hi {
        // Sixteen uniform panels.
        let h = (b - a) / 16.0;
        total = (0..16).map(|i| panel(f, a + i as f64 * h, a + (i + 1) as f64 * h)).sum();
    }
    total
}

/// Integral of `s^{-α} g(s)` over `[d, d + len]`, `d >= 0`, with panels
/// graded towards `s = d` relative to its distance from the singularity.
pub fn integrate_near_singular(alpha: f64, g: &dyn Fn(f64) -> f64, d: f64, len: f64) -> f64 {
    integrate_offset_singular(alpha, &|y| g(d + y), d, len)
}

/// Integral of `(d + y)^{-α} g(y)` over `y` in `[0, len]`. Working in the
/// offset `y` keeps `g` accurate when `len` is tiny next to `d`.
pub fn integrate_offset_singular(alpha: f64, g: &dyn Fn(f64) -> f64, d: f64, len: f64) -> f64 {
    let f = |y: f64| (d + y).powf(-alpha) * g(y);
    if d == 0.0 {
        return integrate_graded(&f, 0.0, len, true, false);
    }
    // Breakpoints len 2^{-k} until the panel length drops below d.
    let mut total = 0.0;
    let mut hi = len;
    let mut k = 1;
    loop {
        let lo = len * 0.5f64.powi(k);
        if lo < 0.25 * d {
            total += integrate_graded(&f, 0.0, hi, false, false);
            break;
        }
        total += panel(&f, lo, hi);
        hi = lo;
        k += 1;
    }
    total
}

/// Central difference of `f` at `x`.
pub fn central_difference(f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Gradient by central differences.
pub fn fd_gradient(f: &dyn Fn([f64; 2]) -> f64, p: [f64; 2], h: f64) -> [f64; 2] {
    [
        (f([p[0] + h, p[1]]) - f([p[0] - h, p[1]])) / (2.0 * h),
        (f([p[0], p[1] + h]) - f([p[0], p[1] - h])) / (2.0 * h),
    ]
}

fn five_point(f: &dyn Fn([f64; 2]) -> f64, p: [f64; 2], h: f64) -> f64 {
    (f([p[0] + h, p[1]]) + f([p[0] - h, p[1]]) + f([p[0], p[1] + h]) + f([p[0], p[1] - h]) - 4.0 * f(p)) / (h * h)
}

/// Five-point Laplacian with one Richardson step (fourth order).
pub fn fd_laplacian(f: &dyn Fn([f64; 2]) -> f64, p: [f64; 2], h: f64) -> f64 {
    (4.0 * five_point(f, p, 0.5 * h) - five_point(f, p, h)) / 3.0
}

/// Caputo derivative of a scalar function from its derivative `dw`, by
/// graded quadrature of `1/Γ(1-α) int_0^t (t-s)^{-α} w'(s) ds`.
pub fn caputo_numeric(alpha: f64, dw: &dyn Fn(f64) -> f64, t: f64) -> f64 {
    // Near s = t integrate in u = t - s so the kernel never sees a rounded zero.
    let head = |s: f64| (t - s).powf(-alpha) * dw(s);
    let tail = |u: f64| u.powf(-alpha) * dw(t - u);
    let h = 0.5 * t;
    (integrate_graded(&head, 0.0, h, true, false) + integrate_graded(&tail, 0.0, h, true, false)) / libm::tgamma(1.0 - alpha)
}

/// `a_{n,0}`, `a_{n,n-j}`, `b_{n,n-j}` from their defining integrals,
/// written in the variable `s = t_{n-σ} - η`.
pub struct Oracle<'a> {
    pub mesh: &'a GradedMesh,
}

impl Oracle<'_> {
    pub fn alpha(&self) -> f64 {
        self.mesh.alpha()
    }

    pub fn a_current(&self, n: usize) -> f64 {
        let ts = self.mesh.t_offset(n);
        let len = ts - self.mesh.t(n - 1);
        let i = integrate_near_singular(self.alpha(), &|_| 1.0, 0.0, len);
        i / (self.mesh.tau(n) * gamma(1.0 - self.alpha()))
    }

    pub fn a_history(&self, n: usize, j: usize) -> f64 {
        let ts = self.mesh.t_offset(n);
        let i = integrate_near_singular(self.alpha(), &|_| 1.0, ts - self.mesh.t(j), self.mesh.tau(j));
        i / (self.mesh.tau(j) * gamma(1.0 - self.alpha()))
    }

    pub fn b_history(&self, n: usize, j: usize) -> f64 {
        let ts = self.mesh.t_offset(n);
        let mid = 0.5 * (self.mesh.t(j - 1) + self.mesh.t(j));
        let half = self.mesh.tau(j) - (mid - self.mesh.t(j - 1));
        // With s = t_{n-σ} - t_j + y, η - t_{j-1/2} = half - y.
        let i = integrate_offset_singular(self.alpha(), &|y| half - y, ts - self.mesh.t(j), self.mesh.tau(j));
        2.0 * i / (self.mesh.tau(j) * gamma(1.0 - self.alpha()) * (self.mesh.t(j + 1) - self.mesh.t(j - 1)))
    }

    pub fn weights(&self, n: usize) -> Vec<f64> {
        let mut w = vec![0.0; n];
        w[0] = self.a_current(n);
        if n == 1 {
            return w;
        }
        let b: Vec<f64> = (0..n).map(|j| if j == 0 { 0.0 } else { self.b_history(n, j) }).collect();
        w[0] += self.mesh.tau(n - 1) / self.mesh.tau(n) * b[n - 1];
        for j in 1..n {
            let mut v = self.a_history(n, j) - b[j];
            if j >= 2 {
                v += self.mesh.tau(j - 1) / self.mesh.tau(j) * b[j - 1];
            }
            w[n - j] = v;
        }
        w
    }
}
