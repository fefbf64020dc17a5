//! Manufactured solutions `u = (t^3 + t^α) φ(x, y)`, their forcing, and the
//! relative error measures of the convergence studies.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::assembly::{cubic_source, WeightedSpace};
use crate::domain::WeightFunction;
use crate::error::{Error, Result};
use crate::fractional::gamma;
use crate::stepper::Forcing;

/// The two test problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Example {
    /// `φ = sin(2πx) sin(2πy)` on the unit square.
    SquareSine,
    /// `φ = w^3 sin(w)` with the disk weight `w = 1/4 - |p - (1/2, 1/2)|^2`.
    DiskComposite,
}

impl Example {
    pub fn name(self) -> &'static str {
        match self {
            Example::SquareSine => "square_sine",
            Example::DiskComposite => "disk_composite",
        }
    }

    pub fn weight(self) -> WeightFunction {
        match self {
            Example::SquareSine => WeightFunction::unit_square(),
            Example::DiskComposite => WeightFunction::inscribed_disk(),
        }
    }
}

impl fmt::Display for Example {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Example {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "square_sine" | "1" => Ok(Example::SquareSine),
            "disk_composite" | "2" => Ok(Example::DiskComposite),
            other => Err(Error::Config(format!("unknown example {other:?}"))),
        }
    }
}

/// Spatial factor `φ` and the derivatives the scheme needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialValues {
    pub phi: f64,
    pub grad: [f64; 2],
    pub laplacian: f64,
    pub grad_laplacian: [f64; 2],
    pub bilaplacian: f64,
}

/// Derivatives 0..=4 of `ψ(s) = s^3 sin(s)`.
fn cubic_sine_derivatives(s: f64) -> [f64; 5] {
    let (sn, cs) = s.sin_cos();
    let s2 = s * s;
    let s3 = s2 * s;
    [
        s3 * sn,
        3.0 * s2 * sn + s3 * cs,
        6.0 * s * sn + 6.0 * s2 * cs - s3 * sn,
        6.0 * sn + 18.0 * s * cs - 9.0 * s2 * sn - s3 * cs,
        24.0 * cs - 36.0 * s * sn - 12.0 * s2 * cs + s3 * sn,
    ]
}

/// Exact solution `u = (t^3 + t^α) φ`, `v = -Δu`, and forcing
/// `g = D^α u + Δ^2 u - Δu - f(u)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedProblem {
    pub example: Example,
    pub alpha: f64,
}

impl ManufacturedProblem {
    pub fn new(example: Example, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        Ok(ManufacturedProblem { example, alpha })
    }

    pub fn weight(&self) -> WeightFunction {
        self.example.weight()
    }

    /// `t^3 + t^α`.
    pub fn temporal(&self, t: f64) -> f64 {
        t * t * t + t.powf(self.alpha)
    }

    /// Caputo derivative of `t^3 + t^α`:
    /// `Γ(4)/Γ(4-α) t^{3-α} + Γ(1+α)`.
    pub fn temporal_caputo(&self, t: f64) -> f64 {
        let a = self.alpha;
        gamma(4.0) / gamma(4.0 - a) * t.powf(3.0 - a) + gamma(1.0 + a)
    }

    pub fn spatial(&self, p: [f64; 2]) -> SpatialValues {
        match self.example {
            Example::SquareSine => {
                let k = 2.0 * PI;
                let (sx, cx) = (k * p[0]).sin_cos();
                let (sy, cy) = (k * p[1]).sin_cos();
                let phi = sx * sy;
                let grad = [k * cx * sy, k * sx * cy];
                let k2 = 2.0 * k * k;
                SpatialValues {
                    phi,
                    grad,
                    laplacian: -k2 * phi,
                    grad_laplacian: [-k2 * grad[0], -k2 * grad[1]],
                    bilaplacian: k2 * k2 * phi,
                }
            }
            Example::DiskComposite => {
                let (w, gw) = self.weight().value_grad(p);
                let d = cubic_sine_derivatives(w);
                // |grad w|^2 = 1 - 4w and Δw = -4 for this weight.
                let q = 1.0 - 4.0 * w;
                let lap = d[2] * q - 4.0 * d[1];
                let dlap = d[3] * q - 8.0 * d[2];
                SpatialValues {
                    phi: d[0],
                    grad: [d[1] * gw[0], d[1] * gw[1]],
                    laplacian: lap,
                    grad_laplacian: [dlap * gw[0], dlap * gw[1]],
                    bilaplacian: d[4] * q * q - 16.0 * d[3] * q + 32.0 * d[2],
                }
            }
        }
    }

    pub fn exact_u(&self, p: [f64; 2], t: f64) -> f64 {
        self.temporal(t) * self.spatial(p).phi
    }

    /// `v = -Δu`.
    pub fn exact_v(&self, p: [f64; 2], t: f64) -> f64 {
        -self.temporal(t) * self.spatial(p).laplacian
    }

    pub fn forcing(&self, p: [f64; 2], t: f64) -> f64 {
        let s = self.spatial(p);
        let tt = self.temporal(t);
        self.temporal_caputo(t) * s.phi + tt * (s.bilaplacian - s.laplacian) - cubic_source(tt * s.phi)
    }

    /// Precomputed load vectors for `forcing` on a space.
    pub fn forcing_loads(&self, space: &WeightedSpace) -> ForcingLoads {
        let pts = space.points();
        let mut phi = Vec::with_capacity(pts.len());
        let mut op = Vec::with_capacity(pts.len());
        let mut cube = Vec::with_capacity(pts.len());
        for p in pts {
            let s = self.spatial(p.x);
            phi.push(s.phi);
            op.push(s.bilaplacian - s.laplacian);
            cube.push(s.phi * s.phi * s.phi);
        }
        ForcingLoads {
            problem: *self,
            phi: space.load_from_point_values(&phi),
            operator: space.load_from_point_values(&op),
            cube: space.load_from_point_values(&cube),
        }
    }
}

/// The forcing load at any time as a combination of three fixed vectors:
/// with `T = t^3 + t^α` and `C` its Caputo derivative,
/// `g = (C - T) φ + T (Δ^2 φ - Δφ) + T^3 φ^3`.
#[derive(Debug, Clone)]
pub struct ForcingLoads {
    problem: ManufacturedProblem,
    phi: Vec<f64>,
    operator: Vec<f64>,
    cube: Vec<f64>,
}

impl Forcing for ForcingLoads {
    fn load(&self, t: f64) -> Vec<f64> {
        let tt = self.problem.temporal(t);
        let c = self.problem.temporal_caputo(t);
        let (a, b, d) = (c - tt, tt, tt * tt * tt);
        (0..self.phi.len())
            .map(|i| a * self.phi[i] + b * self.operator[i] + d * self.cube[i])
            .collect()
    }
}

/// Running maxima for `E_u` and `E_v` over steps `n >= 1`.
#[derive(Debug, Clone)]
pub struct ErrorTracker {
    problem: ManufacturedProblem,
    phi: Vec<f64>,
    neg_lap: Vec<f64>,
    qw: Vec<f64>,
    phi_norm: f64,
    lap_norm: f64,
    max_err_u: f64,
    max_err_v: f64,
    max_u: f64,
    max_v: f64,
}

impl ErrorTracker {
    pub fn new(problem: ManufacturedProblem, space: &WeightedSpace) -> Self {
        let pts = space.points();
        let mut phi = Vec::with_capacity(pts.len());
        let mut neg_lap = Vec::with_capacity(pts.len());
        let mut qw = Vec::with_capacity(pts.len());
        for p in pts {
            let s = problem.spatial(p.x);
            phi.push(s.phi);
            neg_lap.push(-s.laplacian);
            qw.push(p.qw);
        }
        let norm = |f: &[f64]| f.iter().zip(&qw).map(|(v, w)| w * v * v).sum::<f64>().sqrt();
        ErrorTracker {
            phi_norm: norm(&phi),
            lap_norm: norm(&neg_lap),
            problem,
            phi,
            neg_lap,
            qw,
            max_err_u: 0.0,
            max_err_v: 0.0,
            max_u: 0.0,
            max_v: 0.0,
        }
    }

    /// `||T(t) f - g_h||` with `g_h` given at the quadrature points.
    fn distance(&self, exact: &[f64], scale: f64, approx: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((e, a), w) in exact.iter().zip(approx).zip(&self.qw) {
            let d = scale * e - a;
            s += w * d * d;
        }
        s.sqrt()
    }

    /// Records step values; `u_pts`, `v_pts` are `U^n`, `V^n` evaluated at
    /// the space's quadrature points.
    pub fn record(&mut self, t: f64, u_pts: &[f64], v_pts: &[f64]) {
        let tt = self.problem.temporal(t);
        self.max_err_u = self.max_err_u.max(self.distance(&self.phi, tt, u_pts));
        self.max_err_v = self.max_err_v.max(self.distance(&self.neg_lap, tt, v_pts));
        self.max_u = self.max_u.max(tt.abs() * self.phi_norm);
        self.max_v = self.max_v.max(tt.abs() * self.lap_norm);
    }

    /// `(E_u, E_v)`.
    pub fn relative_errors(&self) -> Result<(f64, f64)> {
        if self.max_u == 0.0 || self.max_v == 0.0 {
            return Err(Error::InvalidParameter("exact solution vanishes at every recorded step".into()));
        }
        Ok((self.max_err_u / self.max_u, self.max_err_v / self.max_v))
    }
}

/// `log2(e_{i-1} / e_i)` for successive errors.
pub fn convergence_rates(errors: &[f64]) -> Result<Vec<f64>> {
    if let Some(e) = errors.iter().find(|e| !(**e > 0.0)) {
        return Err(Error::InvalidParameter(format!("errors must be positive, got {e}")));
    }
    Ok(errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect())
}
