//! Graded temporal meshes and the L2-1σ approximation of the Caputo
//! derivative.
//!
//! On the mesh `t_n = T (n/N)^r` the derivative at `t_{n-σ} = t_n - σ τ_n`
//! (with `σ = α/2`) is approximated by
//! `(D_N u)^{n-σ} = sum_{j=1}^{n} A^n_{n-j} (u^j - u^{j-1})`.

use crate::error::{Error, Result};

/// `Γ(x)` for positive arguments.
pub fn gamma(x: f64) -> f64 {
    libm::tgamma(x)
}

/// Temporal nodes `t_n = T (n/N)^r`, `n = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradedMesh {
    t_final: f64,
    steps: usize,
    grading: f64,
    alpha: f64,
    nodes: Vec<f64>,
}

impl GradedMesh {
    pub fn new(t_final: f64, steps: usize, grading: f64, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if !(grading >= 1.0) {
            return Err(Error::InvalidParameter(format!("grading must be >= 1, got {grading}")));
        }
        if !(t_final > 0.0) {
            return Err(Error::InvalidParameter(format!("final time must be positive, got {t_final}")));
        }
        if steps == 0 {
            return Err(Error::InvalidParameter("at least one time step is required".into()));
        }
        let nf = steps as f64;
        let mut nodes: Vec<f64> = (0..=steps)
            .map(|n| t_final * (n as f64 / nf).powf(grading))
            .collect();
        nodes[steps] = t_final;
        Ok(GradedMesh {
            t_final,
            steps,
            grading,
            alpha,
            nodes,
        })
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn grading(&self) -> f64 {
        self.grading
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `σ = α / 2`.
    pub fn sigma(&self) -> f64 {
        0.5 * self.alpha
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn t(&self, n: usize) -> f64 {
        self.nodes[n]
    }

    /// `τ_n = t_n - t_{n-1}` for `n >= 1`.
    pub fn tau(&self, n: usize) -> f64 {
        self.nodes[n] - self.nodes[n - 1]
    }

    /// `t_{n-σ} = σ t_{n-1} + (1-σ) t_n`.
    pub fn t_offset(&self, n: usize) -> f64 {
        let s = self.sigma();
        s * self.nodes[n - 1] + (1.0 - s) * self.nodes[n]
    }

    /// Extrapolation factor `(1-σ) τ_n / τ_{n-1}` for `n >= 2`.
    pub fn tau_star(&self, n: usize) -> f64 {
        (1.0 - self.sigma()) * self.tau(n) / self.tau(n - 1)
    }
}

/// `int_lo^hi (s - η)^{-α} dη` for `s >= hi`, written through `s - hi` and
/// the interval length to avoid cancellation.
fn kernel_integral(alpha: f64, dist: f64, len: f64) -> f64 {
    let p = 1.0 - alpha;
    if dist == 0.0 {
        return len.powf(p) / p;
    }
    dist.powf(p) * (p * (len / dist).ln_1p()).exp_m1() / p
}

/// `int_{-h}^{h} (d + x)^{-α} (-x) dx` for `d > h > 0`, the weighted
/// integral in the b coefficients after centring at the interval midpoint.
fn centred_moment(alpha: f64, d: f64, h: f64) -> f64 {
    let eps = h / d;
    if eps < 0.5 {
        // Odd terms of the binomial series of (1 + x/d)^{-α}.
        let mut coeff = alpha; // (α)_k / k! at k = 1
        let mut sum = 0.0;
        let mut k = 1usize;
        let eps2 = eps * eps;
        let mut epsk = eps;
        loop {
            let term = coeff * epsk / (k + 2) as f64;
            sum += term;
            if term.abs() <= 1e-18 * sum.abs() || k > 400 {
                break;
            }
            let kf = k as f64;
            coeff *= (alpha + kf) * (alpha + kf + 1.0) / ((kf + 1.0) * (kf + 2.0));
            epsk *= eps2;
            k += 2;
        }
        2.0 * h * h * d.powf(-alpha) * sum
    } else {
        let p1 = 1.0 - alpha;
        let p2 = 2.0 - alpha;
        let prim = |z: f64| d * z.powf(p1) / p1 - z.powf(p2) / p2;
        prim(d + h) - prim(d - h)
    }
}

/// L2-1σ weights on a graded mesh.
#[derive(Debug, Clone)]
pub struct L21Sigma {
    mesh: GradedMesh,
    gamma_1ma: f64,
    gamma_2ma: f64,
}

impl L21Sigma {
    pub fn new(mesh: GradedMesh) -> Self {
        let a = mesh.alpha();
        L21Sigma {
            gamma_1ma: gamma(1.0 - a),
            gamma_2ma: gamma(2.0 - a),
            mesh,
        }
    }

    pub fn mesh(&self) -> &GradedMesh {
        &self.mesh
    }

    /// `a_{n,0} = (1-σ)^{1-α} τ_n^{-α} / Γ(2-α)`.
    pub fn a_current(&self, n: usize) -> f64 {
        let a = self.mesh.alpha();
        let tau = self.mesh.tau(n);
        (1.0 - self.mesh.sigma()).powf(1.0 - a) * tau.powf(-a) / self.gamma_2ma
    }

    /// `a_{n,n-j} = τ_j^{-1}/Γ(1-α) int_{t_{j-1}}^{t_j} (t_{n-σ} - η)^{-α} dη`
    /// for `1 <= j <= n-1`.
    pub fn a_history(&self, n: usize, j: usize) -> f64 {
        let ts = self.mesh.t_offset(n);
        let tau = self.mesh.tau(j);
        kernel_integral(self.mesh.alpha(), ts - self.mesh.t(j), tau) / (tau * self.gamma_1ma)
    }

    /// `b_{n,n-j} = 2 τ_j^{-1} / (Γ(1-α)(t_{j+1} - t_{j-1}))
    /// int_{t_{j-1}}^{t_j} (t_{n-σ} - η)^{-α} (η - t_{j-1/2}) dη`
    /// for `1 <= j <= n-1`.
    pub fn b_history(&self, n: usize, j: usize) -> f64 {
        let ts = self.mesh.t_offset(n);
        let tau = self.mesh.tau(j);
        let mid = 0.5 * (self.mesh.t(j - 1) + self.mesh.t(j));
        let moment = centred_moment(self.mesh.alpha(), ts - mid, 0.5 * tau);
        2.0 * moment / (tau * self.gamma_1ma * (self.mesh.t(j + 1) - self.mesh.t(j - 1)))
    }

    /// `A^n_{k}` for `k = 0..n`, so that entry `n - j` multiplies
    /// `u^j - u^{j-1}`.
    pub fn step_weights(&self, n: usize) -> Vec<f64> {
        assert!(n >= 1 && n <= self.mesh.steps(), "step {n} out of range");
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

    /// `(D_N u)^{n-σ}` for `n = 1..=N` from nodal values `u^0..u^N`.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.mesh.steps() + 1);
        (1..=self.mesh.steps())
            .map(|n| {
                let w = self.step_weights(n);
                (1..=n).map(|j| w[n - j] * (values[j] - values[j - 1])).sum()
            })
            .collect()
    }

    /// Complementary coefficients `Q^{(n)}_{n-i}` for `i = 1..=n`, returned
    /// with entry `i - 1` holding `Q^{(n)}_{n-i}`.
    pub fn complementary(&self, n: usize) -> Vec<f64> {
        let tables: Vec<Vec<f64>> = (1..=n).map(|k| self.step_weights(k)).collect();
        complementary_coefficients(&tables)
    }
}

/// `Q^{(n)}_{n-i}` from the weight tables `A^k` of steps `k = 1..=n`
/// (`tables[k-1][l] = A^k_l`), via
/// `Q^{(n)}_{n-i} = 1/A^i_0 sum_{k=i+1}^{n} (A^k_{k-i-1} - A^k_{k-i}) Q^{(n)}_{n-k}`.
pub fn complementary_coefficients(tables: &[Vec<f64>]) -> Vec<f64> {
    let n = tables.len();
    let mut q = vec![0.0; n + 1];
    q[n] = 1.0 / tables[n - 1][0];
    for i in (1..n).rev() {
        let mut s = 0.0;
        for k in i + 1..=n {
            let ak = &tables[k - 1];
            let next = if k - i < ak.len() { ak[k - i] } else { 0.0 };
            s += (ak[k - i - 1] - next) * q[k];
        }
        q[i] = s / tables[i - 1][0];
    }
    q.remove(0);
    q
}

/// Caputo derivative of `t^γ`: `Γ(γ+1)/Γ(γ+1-α) t^{γ-α}`.
pub fn caputo_power(alpha: f64, gamma_exp: f64, t: f64) -> Result<f64> {
    if !(gamma_exp > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "power exponent must be positive, got {gamma_exp}"
        )));
    }
    Ok(gamma(gamma_exp + 1.0) / gamma(gamma_exp + 1.0 - alpha) * t.powf(gamma_exp - alpha))
}
