//! Implicit domains `Omega = {w > 0}` given by analytic weight functions.

use std::fmt;
use std::sync::Arc;

use crate::bspline::TensorBasis;

type WeightMap = dyn Fn([f64; 2]) -> (f64, [f64; 2]) + Send + Sync;

/// User-supplied analytic weight: a map returning value and gradient, plus
/// the bounding box of its positivity set.
#[derive(Clone)]
pub struct CustomWeight {
    eval: Arc<WeightMap>,
    bbox: [[f64; 2]; 2],
    interior: [f64; 2],
}

impl fmt::Debug for CustomWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomWeight")
            .field("bbox", &self.bbox)
            .field("interior", &self.interior)
            .finish_non_exhaustive()
    }
}

/// Weight function vanishing on the boundary and positive inside.
#[derive(Debug, Clone)]
pub enum WeightFunction {
    /// `(x - x0)(x1 - x)(y - y0)(y1 - y)` on the rectangle `[x0,x1] x [y0,y1]`.
    ProductSquare { lo: [f64; 2], hi: [f64; 2] },
    /// `r^2 - |p - c|^2` on the disk of radius `r` around `c`.
    Disk { center: [f64; 2], radius: f64 },
    Custom(CustomWeight),
}

impl WeightFunction {
    /// `xy(1-x)(1-y)` on the unit square.
    pub fn unit_square() -> Self {
        WeightFunction::ProductSquare {
            lo: [0.0, 0.0],
            hi: [1.0, 1.0],
        }
    }

    /// `1/4 - (x-1/2)^2 - (y-1/2)^2`, the disk inscribed in the unit square.
    pub fn inscribed_disk() -> Self {
        WeightFunction::Disk {
            center: [0.5, 0.5],
            radius: 0.5,
        }
    }

    /// Wraps an analytic weight. `bbox` must contain `{w > 0}` and
    /// `interior` must be a point with `w > 0`.
    pub fn custom<F>(eval: F, bbox: [[f64; 2]; 2], interior: [f64; 2]) -> Self
    where
        F: Fn([f64; 2]) -> (f64, [f64; 2]) + Send + Sync + 'static,
    {
        WeightFunction::Custom(CustomWeight {
            eval: Arc::new(eval),
            bbox,
            interior,
        })
    }

    pub fn value(&self, p: [f64; 2]) -> f64 {
        match self {
            WeightFunction::ProductSquare { lo, hi } => {
                (p[0] - lo[0]) * (hi[0] - p[0]) * (p[1] - lo[1]) * (hi[1] - p[1])
            }
            WeightFunction::Disk { center, radius } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                radius * radius - dx * dx - dy * dy
            }
            WeightFunction::Custom(c) => (c.eval)(p).0,
        }
    }

    pub fn value_grad(&self, p: [f64; 2]) -> (f64, [f64; 2]) {
        match self {
            WeightFunction::ProductSquare { lo, hi } => {
                let fx = (p[0] - lo[0]) * (hi[0] - p[0]);
                let fy = (p[1] - lo[1]) * (hi[1] - p[1]);
                let dfx = hi[0] + lo[0] - 2.0 * p[0];
                let dfy = hi[1] + lo[1] - 2.0 * p[1];
                (fx * fy, [dfx * fy, fx * dfy])
            }
            WeightFunction::Disk { center, radius } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                (radius * radius - dx * dx - dy * dy, [-2.0 * dx, -2.0 * dy])
            }
            WeightFunction::Custom(c) => (c.eval)(p),
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.value(p) > 0.0
    }

    /// `[[xmin, ymin], [xmax, ymax]]` enclosing the domain.
    pub fn bounding_box(&self) -> [[f64; 2]; 2] {
        match self {
            WeightFunction::ProductSquare { lo, hi } => [*lo, *hi],
            WeightFunction::Disk { center, radius } => [
                [center[0] - radius, center[1] - radius],
                [center[0] + radius, center[1] + radius],
            ],
            WeightFunction::Custom(c) => c.bbox,
        }
    }

    /// A point where the weight is positive.
    pub fn interior_point(&self) -> [f64; 2] {
        match self {
            WeightFunction::ProductSquare { lo, hi } => {
                [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])]
            }
            WeightFunction::Disk { center, .. } => *center,
            WeightFunction::Custom(c) => c.interior,
        }
    }

    /// Point on the boundary for a parameter `s` in `[0, 1)`, walking the
    /// boundary once. `None` for custom weights.
    pub fn boundary_point(&self, s: f64) -> Option<[f64; 2]> {
        match self {
            WeightFunction::ProductSquare { lo, hi } => {
                let s = s.rem_euclid(1.0) * 4.0;
                let side = s.floor() as usize;
                let t = s - side as f64;
                let lerp = |a: f64, b: f64| a + t * (b - a);
                Some(match side {
                    0 => [lerp(lo[0], hi[0]), lo[1]],
                    1 => [hi[0], lerp(lo[1], hi[1])],
                    2 => [lerp(hi[0], lo[0]), hi[1]],
                    _ => [lo[0], lerp(hi[1], lo[1])],
                })
            }
            WeightFunction::Disk { center, radius } => {
                let th = std::f64::consts::TAU * s;
                Some([center[0] + radius * th.cos(), center[1] + radius * th.sin()])
            }
            WeightFunction::Custom(_) => None,
        }
    }
}

/// Value and gradient of the weighted basis function `w b_k` at `p`.
pub fn weighted_basis_value_grad(
    weight: &WeightFunction,
    basis: &TensorBasis,
    k: [i64; 2],
    p: [f64; 2],
) -> (f64, [f64; 2]) {
    let (b, db) = basis.eval(k, p);
    if b == 0.0 && db == [0.0, 0.0] {
        return (0.0, [0.0, 0.0]);
    }
    let (w, dw) = weight.value_grad(p);
    (w * b, [dw[0] * b + w * db[0], dw[1] * b + w * db[1]])
}
