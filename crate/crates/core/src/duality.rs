//! Discriminator-induced constraints on generated data.
//!
//! Eliminating a two-layer discriminator with weight decay `β_d` leaves the
//! constraint `max_{‖u‖≤1} |1ᵀσ(Xu) − 1ᵀσ(Gu)| ≤ β_d`. The functions here
//! evaluate the left-hand side ("gap") for each activation and return a
//! witness direction when one exists.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{check_finite, column_sums, same_cols, sym_eig, DataMatrix};
use crate::rng::unit_direction;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationKind {
    Linear,
    Quadratic,
    ReLU,
    /// `σ(t) = a t² + b t + c`.
    Polynomial {
        a: f64,
        b: f64,
        c: f64,
    },
}

impl ActivationKind {
    pub fn apply(&self, t: f64) -> f64 {
        match *self {
            ActivationKind::Linear => t,
            ActivationKind::Quadratic => t * t,
            ActivationKind::ReLU => t.max(0.0),
            ActivationKind::Polynomial { a, b, c } => a * t * t + b * t + c,
        }
    }

    /// Derivative, with the ReLU kink assigned slope 0.
    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            ActivationKind::Linear => 1.0,
            ActivationKind::Quadratic => 2.0 * t,
            ActivationKind::ReLU => {
                if t > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Polynomial { a, b, .. } => 2.0 * a * t + b,
        }
    }

    pub fn second_derivative(&self, t: f64) -> f64 {
        match *self {
            ActivationKind::Linear | ActivationKind::ReLU => {
                let _ = t;
                0.0
            }
            ActivationKind::Quadratic => 2.0,
            ActivationKind::Polynomial { a, .. } => 2.0 * a,
        }
    }

    pub fn is_positively_homogeneous(&self) -> bool {
        matches!(self, ActivationKind::Linear | ActivationKind::ReLU)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintMode {
    /// Weight decay: the gap must stay below `β_d`.
    Regularized,
    /// Norm-constrained discriminator: the gap becomes an objective term.
    NormConstrained,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualConstraint {
    pub activation: ActivationKind,
    pub beta_d: f64,
    pub mode: ConstraintMode,
    pub skip_connection: bool,
    /// Directions sampled for ReLU gaps on multi-column data.
    pub relu_samples: usize,
    pub seed: u64,
    /// Include a discriminator bias in the exact single-column ReLU gap.
    pub relu_bias: bool,
}

impl DualConstraint {
    pub fn new(activation: ActivationKind, beta_d: f64) -> Self {
        DualConstraint {
            activation,
            beta_d,
            mode: ConstraintMode::Regularized,
            skip_connection: false,
            relu_samples: 10_000,
            seed: 0,
            relu_bias: false,
        }
    }

    pub fn with_skip_connection(mut self) -> Self {
        self.skip_connection = true;
        self
    }

    pub fn norm_constrained(mut self) -> Self {
        self.mode = ConstraintMode::NormConstrained;
        self
    }
}

/// Gap value plus the direction (and bias, for the biased 1-D ReLU case)
/// attaining it.
#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub gap_value: f64,
    pub witness: Option<DVector<f64>>,
    pub bias: Option<f64>,
}

impl GapReport {
    fn new(gap_value: f64, witness: Option<DVector<f64>>) -> Self {
        GapReport {
            gap_value,
            witness,
            bias: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub gap_value: f64,
    pub beta_d: f64,
    pub feasible: bool,
    /// `β_d − gap`, or negative mean mismatch when a skip connection fails.
    /// Zero in norm-constrained mode, where there is no constraint.
    pub margin: f64,
    pub witness: Option<DVector<f64>>,
    pub bias: Option<f64>,
}

fn check_pair(x: &DataMatrix, g: &DataMatrix) -> Result<()> {
    check_finite(x, "real data")?;
    check_finite(g, "generated data")?;
    same_cols(x, g, "real vs generated columns")
}

fn normalized(v: DVector<f64>) -> Option<DVector<f64>> {
    let n = v.norm();
    (n > 0.0).then(|| v / n)
}

/// `‖1ᵀX − 1ᵀG‖₂`.
pub fn dual_gap_linear(x: &DataMatrix, g: &DataMatrix) -> Result<GapReport> {
    check_pair(x, g)?;
    let diff = column_sums(x) - column_sums(g);
    Ok(GapReport::new(diff.norm(), normalized(diff)))
}

/// `‖XᵀX − GᵀG‖₂`.
pub fn dual_gap_quadratic(x: &DataMatrix, g: &DataMatrix) -> Result<GapReport> {
    check_pair(x, g)?;
    let diff = second_moment_diff(x, g);
    let eig = sym_eig(&diff)?;
    let n = eig.eigenvalues.len();
    let (hi, lo) = (eig.eigenvalues[0], eig.eigenvalues[n - 1]);
    let (gap, col) = if hi.abs() >= lo.abs() { (hi.abs(), 0) } else { (lo.abs(), n - 1) };
    let witness = (gap > 0.0).then(|| eig.eigenvectors.column(col).into_owned());
    Ok(GapReport::new(gap, witness))
}

fn second_moment_diff(x: &DataMatrix, g: &DataMatrix) -> DataMatrix {
    let d = x.tr_mul(x) - g.tr_mul(g);
    (&d + d.transpose()) * 0.5
}

fn relu_value(x: &DataMatrix, g: &DataMatrix, u: &DVector<f64>, bias: f64) -> f64 {
    let sum = |m: &DataMatrix| (m * u).iter().map(|&t| (t + bias).max(0.0)).sum::<f64>();
    sum(x) - sum(g)
}

/// Lower bound on the ReLU gap from `samples` sphere directions.
///
/// Direction `k` depends only on `(seed, k)`, so a larger sample count never
/// lowers the reported value.
pub fn dual_gap_relu(x: &DataMatrix, g: &DataMatrix, samples: usize, seed: u64) -> Result<GapReport> {
    check_pair(x, g)?;
    if samples == 0 {
        return Err(Error::invalid("ReLU gap needs at least one sampled direction"));
    }
    let d = x.ncols();
    let (best_k, best) = (0..samples)
        .into_par_iter()
        .map(|k| {
            let u = unit_direction(d, seed, k as u64);
            (k, relu_value(x, g, &u, 0.0).abs())
        })
        .reduce(
            || (usize::MAX, f64::NEG_INFINITY),
            |a, b| {
                if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
                    b
                } else {
                    a
                }
            },
        );
    let witness = (best > 0.0).then(|| unit_direction(d, seed, best_k as u64));
    Ok(GapReport::new(best, witness))
}

/// Exact ReLU gap for single-column data, maximizing over `u = ±1`.
///
/// With `with_bias`, the discriminator neuron is `(xu + b)_+` with `b` free.
/// The objective is piecewise linear in `b` with kinks at `−u·x_k` and
/// `−u·g_k`, so scanning those breakpoints (and the all-active tail) is exact.
/// A free bias makes the gap unbounded unless both samples have equal size.
pub fn dual_gap_relu_exact_1d(x: &DataMatrix, g: &DataMatrix, with_bias: bool) -> Result<GapReport> {
    check_pair(x, g)?;
    if x.ncols() != 1 {
        return Err(Error::dims("exact 1-D ReLU gap columns", 1, x.ncols()));
    }
    if with_bias && x.nrows() != g.nrows() {
        return Err(Error::invalid(format!(
            "biased 1-D ReLU gap is unbounded for unequal sample counts ({} vs {})",
            x.nrows(),
            g.nrows()
        )));
    }
    let mut best = GapReport::new(f64::NEG_INFINITY, None);
    for s in [1.0, -1.0] {
        let u = DVector::from_element(1, s);
        let mut biases = vec![0.0];
        if with_bias {
            biases.extend(x.iter().chain(g.iter()).map(|&v| -s * v));
        }
        for b in biases {
            let val = relu_value(x, g, &u, b).abs();
            if val > best.gap_value {
                best = GapReport {
                    gap_value: val,
                    witness: Some(u.clone()),
                    bias: with_bias.then_some(b),
                };
            }
        }
        if with_bias {
            // All rows active: the value no longer depends on b.
            let tail = s * (x.sum() - g.sum());
            if tail.abs() > best.gap_value {
                let b = x.iter().chain(g.iter()).map(|&v| s * v).fold(0.0, |m: f64, v| m.max(-v)) + 1.0;
                best = GapReport {
                    gap_value: tail.abs(),
                    witness: Some(u.clone()),
                    bias: Some(b),
                };
            }
        }
    }
    if best.gap_value == 0.0 {
        best.witness = None;
        best.bias = None;
    }
    Ok(best)
}

/// Gap for `σ(t) = a t² + b t + c`:
/// `max_{‖u‖≤1} |a uᵀΔ₂u + b Δ₁ᵀu + c(n_r − n_f)|`, a trust-region problem.
pub fn dual_gap_polynomial(x: &DataMatrix, g: &DataMatrix, a: f64, b: f64, c: f64) -> Result<GapReport> {
    check_pair(x, g)?;
    let offset = c * (x.nrows() as f64 - g.nrows() as f64);
    let mean_diff = (column_sums(x) - column_sums(g)) * b;

    if a == 0.0 {
        let n = mean_diff.norm();
        let gap = n + offset.abs();
        let witness = normalized(if offset < 0.0 { -mean_diff } else { mean_diff });
        return Ok(GapReport::new(gap, witness));
    }

    let quad = second_moment_diff(x, g) * a;
    if mean_diff.norm() == 0.0 {
        // Range of uᵀ(aΔ₂)u over the ball is [min(λ_min, 0), max(λ_max, 0)].
        let eig = sym_eig(&quad)?;
        let n = eig.eigenvalues.len();
        let hi = eig.eigenvalues[0].max(0.0) + offset;
        let lo = eig.eigenvalues[n - 1].min(0.0) + offset;
        let (gap, col) = if hi.abs() >= lo.abs() { (hi.abs(), 0) } else { (lo.abs(), n - 1) };
        let active = if col == 0 {
            eig.eigenvalues[0] > 0.0
        } else {
            eig.eigenvalues[n - 1] < 0.0
        };
        let witness = active.then(|| eig.eigenvectors.column(col).into_owned());
        return Ok(GapReport::new(gap, if gap > 0.0 { witness } else { None }));
    }

    let (hi, u_hi) = trust_region_max(&quad, &mean_diff)?;
    let (lo_neg, u_lo) = trust_region_max(&(-&quad), &(-&mean_diff))?;
    let (hi, lo) = (hi + offset, -lo_neg + offset);
    let (gap, u) = if hi.abs() >= lo.abs() { (hi.abs(), u_hi) } else { (lo.abs(), u_lo) };
    Ok(GapReport::new(gap, (u.norm() > 0.0).then_some(u)))
}

/// `max_{‖u‖≤1} uᵀAu + hᵀu` for symmetric `A`, returning value and maximizer.
///
/// Works in the eigenbasis of `A`: the maximizer is `(μI − A)^{-1}h/2` with
/// `μ ≥ max(λ_max, 0)` chosen by bisection so the norm constraint holds,
/// including the degenerate ("hard") case where `h` has no component along
/// the top eigenvector.
pub fn trust_region_max(a: &DataMatrix, h: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    let eig = sym_eig(a)?;
    let lam = &eig.eigenvalues;
    let q = &eig.eigenvectors;
    let ht = q.transpose() * h;
    let d = lam.len();
    let lmax = lam[0];
    let scale = lam.amax().max(h.norm()).max(1e-300);

    let coords = |mu: f64| DVector::from_fn(d, |i, _| if ht[i] == 0.0 { 0.0 } else { 0.5 * ht[i] / (mu - lam[i]) });
    let value = |y: &DVector<f64>| (0..d).map(|i| lam[i] * y[i] * y[i]).sum::<f64>() + ht.dot(y);

    // Interior stationary point: only when A is negative definite.
    if lmax < 0.0 {
        let y = coords(0.0);
        if y.norm() <= 1.0 {
            return Ok((value(&y), q * y));
        }
    }

    let floor = lmax.max(0.0);
    let top_mass: f64 = (0..d).filter(|&i| lam[i] >= lmax - 1e-12 * scale).map(|i| ht[i] * ht[i]).sum();
    let hard = top_mass <= (1e-14 * scale).powi(2);

    let y = if hard {
        // Partial solution on the complement of the top eigenspace, padded
        // along the top eigenvector to reach the sphere.
        let mu = lmax.max(0.0);
        let mut y = DVector::from_fn(d, |i, _| {
            if lam[i] >= lmax - 1e-12 * scale {
                0.0
            } else {
                0.5 * ht[i] / (mu - lam[i])
            }
        });
        let n2 = y.norm_squared();
        if lmax >= 0.0 && n2 < 1.0 {
            y[0] = (1.0 - n2).sqrt();
            y
        } else if n2 <= 1.0 {
            y
        } else {
            bisect_multiplier(&coords, floor, scale)
        }
    } else {
        bisect_multiplier(&coords, floor, scale)
    };
    Ok((value(&y), q * y))
}

fn bisect_multiplier(coords: &dyn Fn(f64) -> DVector<f64>, floor: f64, scale: f64) -> DVector<f64> {
    let mut lo = floor;
    let mut hi = floor + scale + 1.0;
    while coords(hi).norm() > 1.0 {
        hi = floor + 2.0 * (hi - floor);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if coords(mid).norm() > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let y = coords(hi);
    let n = y.norm();
    if n > 0.0 {
        y / n
    } else {
        y
    }
}

/// Evaluates the constraint `c` on `(X, G)`.
pub fn check_feasible(x: &DataMatrix, g: &DataMatrix, c: &DualConstraint) -> Result<FeasibilityReport> {
    if c.mode == ConstraintMode::Regularized && !(c.beta_d > 0.0) {
        return Err(Error::invalid(format!("beta_d must be positive, got {}", c.beta_d)));
    }
    if c.skip_connection && c.activation != ActivationKind::Quadratic {
        return Err(Error::invalid("skip connections are only defined for quadratic activation"));
    }
    let gap = match c.activation {
        ActivationKind::Linear => dual_gap_linear(x, g)?,
        ActivationKind::Quadratic => dual_gap_quadratic(x, g)?,
        ActivationKind::ReLU if x.ncols() == 1 => dual_gap_relu_exact_1d(x, g, c.relu_bias)?,
        ActivationKind::ReLU => dual_gap_relu(x, g, c.relu_samples, c.seed)?,
        ActivationKind::Polynomial { a, b, c: c0 } => dual_gap_polynomial(x, g, a, b, c0)?,
    };

    if c.mode == ConstraintMode::NormConstrained {
        return Ok(FeasibilityReport {
            gap_value: gap.gap_value,
            beta_d: c.beta_d,
            feasible: true,
            margin: 0.0,
            witness: gap.witness,
            bias: gap.bias,
        });
    }

    let mut margin = c.beta_d - gap.gap_value;
    if c.skip_connection {
        let sx = column_sums(x);
        let mismatch = (&sx - column_sums(g)).norm();
        let floor = f64::EPSILON * x.nrows().max(g.nrows()) as f64 * x.amax().max(g.amax());
        if mismatch > (1e-8 * sx.norm()).max(floor) {
            margin = margin.min(-mismatch);
        }
    }
    Ok(FeasibilityReport {
        gap_value: gap.gap_value,
        beta_d: c.beta_d,
        feasible: margin >= 0.0,
        margin,
        witness: gap.witness,
        bias: gap.bias,
    })
}

/// One-column matrix from a slice.
pub fn column(values: &[f64]) -> DataMatrix {
    DMatrix::from_column_slice(values.len(), 1, values)
}
