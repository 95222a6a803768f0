use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::rng::gaussian_matrix;

/// User-supplied convex function for `Regularizer::custom`.
pub trait ConvexFunction: Send + Sync {
    fn value(&self, w: &DVector<f64>) -> f64;
    fn subgradient(&self, w: &DVector<f64>) -> DVector<f64>;
}

impl<V, S> ConvexFunction for (V, S)
where
    V: Fn(&DVector<f64>) -> f64 + Send + Sync,
    S: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
{
    fn value(&self, w: &DVector<f64>) -> f64 {
        (self.0)(w)
    }

    fn subgradient(&self, w: &DVector<f64>) -> DVector<f64> {
        (self.1)(w)
    }
}

#[derive(Clone)]
pub enum RegularizerKind {
    /// `‖w‖₂²`.
    SquaredFrobenius,
    /// `‖w‖_p^p`, `p ≥ 1`.
    LpToTheP(f64),
    Custom(Arc<dyn ConvexFunction>),
}

impl fmt::Debug for RegularizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegularizerKind::SquaredFrobenius => write!(f, "SquaredFrobenius"),
            RegularizerKind::LpToTheP(p) => write!(f, "LpToTheP({p})"),
            RegularizerKind::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// `weight · kind(w)`, applied to the flattened variable.
#[derive(Debug, Clone)]
pub struct Regularizer {
    pub kind: RegularizerKind,
    pub weight: f64,
}

impl Regularizer {
    pub fn squared_frobenius(weight: f64) -> Self {
        Regularizer {
            kind: RegularizerKind::SquaredFrobenius,
            weight,
        }
    }

    pub fn lp(p: f64, weight: f64) -> Result<Self> {
        if !(p >= 1.0) || !p.is_finite() {
            return Err(Error::invalid(format!("p must be finite and at least 1, got {p}")));
        }
        Ok(Regularizer {
            kind: RegularizerKind::LpToTheP(p),
            weight,
        })
    }

    /// Wraps a user function after a midpoint-convexity spot check in `dim`
    /// dimensions.
    pub fn custom(f: Arc<dyn ConvexFunction>, weight: f64, dim: usize) -> Result<Self> {
        let reg = Regularizer {
            kind: RegularizerKind::Custom(f),
            weight,
        };
        if !reg.midpoint_convex(dim, 200, 0) {
            return Err(Error::invalid("custom regularizer failed the midpoint convexity check"));
        }
        Ok(reg)
    }

    pub fn is_smooth(&self) -> bool {
        match self.kind {
            RegularizerKind::SquaredFrobenius => true,
            RegularizerKind::LpToTheP(p) => p > 1.0,
            RegularizerKind::Custom(_) => false,
        }
    }

    pub fn value(&self, w: &DVector<f64>) -> f64 {
        let base = match &self.kind {
            RegularizerKind::SquaredFrobenius => w.norm_squared(),
            RegularizerKind::LpToTheP(p) => w.iter().map(|v| v.abs().powf(*p)).sum(),
            RegularizerKind::Custom(f) => f.value(w),
        };
        self.weight * base
    }

    /// An element of the subdifferential (0 is chosen at kinks of `|·|`).
    pub fn subgradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let g = match &self.kind {
            RegularizerKind::SquaredFrobenius => w * 2.0,
            RegularizerKind::LpToTheP(p) => w.map(|v| if v == 0.0 { 0.0 } else { p * v.signum() * v.abs().powf(p - 1.0) }),
            RegularizerKind::Custom(f) => f.subgradient(w),
        };
        g * self.weight
    }

    /// `argmin_w t·R(w) + ½‖w − v‖²`.
    pub fn prox(&self, v: &DVector<f64>, t: f64) -> DVector<f64> {
        let s = t * self.weight;
        if s <= 0.0 {
            return v.clone();
        }
        match &self.kind {
            RegularizerKind::SquaredFrobenius => v / (1.0 + 2.0 * s),
            RegularizerKind::LpToTheP(p) => {
                let p = *p;
                if p == 1.0 {
                    v.map(|x| x.signum() * (x.abs() - s).max(0.0))
                } else if p == 2.0 {
                    v / (1.0 + 2.0 * s)
                } else {
                    v.map(|x| x.signum() * scalar_lp_prox(x.abs(), s, p))
                }
            }
            RegularizerKind::Custom(f) => custom_prox(f.as_ref(), v, s),
        }
    }

    pub fn midpoint_convex(&self, dim: usize, trials: usize, seed: u64) -> bool {
        let pts = gaussian_matrix(2 * trials, dim, seed) * 2.0;
        (0..trials).all(|k| {
            let a = pts.row(2 * k).transpose();
            let b = pts.row(2 * k + 1).transpose();
            let mid = (&a + &b) * 0.5;
            let lhs = self.value(&mid);
            let rhs = 0.5 * (self.value(&a) + self.value(&b));
            lhs <= rhs + 1e-9 * (1.0 + rhs.abs())
        })
    }
}

/// Root of `y + s·p·y^{p−1} = x` on `[0, x]`.
fn scalar_lp_prox(x: f64, s: f64, p: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, x);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid + s * p * mid.powf(p - 1.0) > x {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Subgradient method on the strongly convex prox objective with step `1/k`.
fn custom_prox(f: &dyn ConvexFunction, v: &DVector<f64>, s: f64) -> DVector<f64> {
    let objective = |w: &DVector<f64>| s * f.value(w) + 0.5 * (w - v).norm_squared();
    let mut w = v.clone();
    let mut best = w.clone();
    let mut best_val = objective(&w);
    for k in 1..=2000 {
        let g = f.subgradient(&w) * s + (&w - v);
        w -= g / k as f64;
        let val = objective(&w);
        if val < best_val {
            best_val = val;
            best = w.clone();
        }
    }
    best
}
