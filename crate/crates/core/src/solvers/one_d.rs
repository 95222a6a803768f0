//! The 1-D ReLU generator / ReLU discriminator program.
//!
//! With sorted data `x₁ < … < x_n` and generated points interleaved as
//! `x₁ ≤ w₁ ≤ x₂ ≤ … ≤ x_n ≤ w_n`, write `x̃ = (x₁, w₁, x₂, w₂, …)` with
//! signs `s = (+, −, +, −, …)`. The discriminator constraint reduces to the
//! affine rows `|Σ_{i≥j} s_i(x̃_i − x̃_j)| ≤ β` and `|Σ_{i≤j} s_i(x̃_j − x̃_i)| ≤ β`.

use nalgebra::DVector;

use super::abs::{solve_abs_constrained, AbsConstraint, AbsConstraintSystem, AbsSolution};
use super::regularizer::Regularizer;
use crate::error::{Error, Result};

/// Constraint rows of the 1-D program before the bound is attached.
#[derive(Debug, Clone)]
pub struct OneDTemplate {
    /// Data sorted increasingly; `w_i` pairs with `sorted_x[i]`.
    pub sorted_x: Vec<f64>,
    pub rows: Vec<AbsConstraint>,
    pub min_gap: f64,
}

impl OneDTemplate {
    pub fn with_bound(&self, beta_d: f64) -> AbsConstraintSystem {
        AbsConstraintSystem {
            dim: self.sorted_x.len(),
            rows: self.rows.clone(),
            bound: beta_d,
        }
    }

    /// Set when `β_d` exceeds the smallest gap between data points, in which
    /// case the interleaving assumption may fail and the program may be infeasible.
    pub fn beta_warning(&self, beta_d: f64) -> bool {
        beta_d > self.min_gap
    }
}

/// Affine expression `coeffsᵀw + offset`.
#[derive(Clone)]
struct Affine {
    coeffs: Vec<f64>,
    offset: f64,
}

impl Affine {
    fn zero(n: usize) -> Self {
        Affine {
            coeffs: vec![0.0; n],
            offset: 0.0,
        }
    }

    fn axpy(&mut self, s: f64, other: &Affine) {
        for (c, o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *c += s * o;
        }
        self.offset += s * other.offset;
    }
}

pub fn build_1d_constraints(x: &[f64]) -> Result<OneDTemplate> {
    if x.is_empty() {
        return Err(Error::invalid("need at least one data point"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("data points must be finite"));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|p| p[0] == p[1]) {
        return Err(Error::invalid("data points must be distinct"));
    }
    let n = sorted.len();
    let min_gap = sorted.windows(2).map(|p| p[1] - p[0]).fold(f64::INFINITY, f64::min);

    // Interleaved sequence as affine functions of w.
    let tilde: Vec<Affine> = (0..2 * n)
        .map(|i| {
            let mut a = Affine::zero(n);
            if i % 2 == 0 {
                a.offset = sorted[i / 2];
            } else {
                a.coeffs[i / 2] = 1.0;
            }
            a
        })
        .collect();
    let sign = |i: usize| if i.is_multiple_of(2) { 1.0 } else { -1.0 };

    let mut raw = Vec::with_capacity(4 * n);
    for j in 0..2 * n {
        let mut tail = Affine::zero(n);
        for i in j..2 * n {
            tail.axpy(sign(i), &tilde[i]);
            tail.axpy(-sign(i), &tilde[j]);
        }
        raw.push(tail);
        let mut head = Affine::zero(n);
        for i in 0..=j {
            head.axpy(sign(i), &tilde[j]);
            head.axpy(-sign(i), &tilde[i]);
        }
        raw.push(head);
    }

    let mut rows: Vec<AbsConstraint> = Vec::new();
    for mut a in raw {
        let lead = a.coeffs.iter().copied().find(|c| c.abs() > 1e-12).unwrap_or(a.offset);
        if lead == 0.0 || (lead.abs() <= 1e-12 && a.coeffs.iter().all(|c| c.abs() <= 1e-12)) {
            // Identically zero rows constrain nothing.
            continue;
        }
        if lead < 0.0 {
            a.coeffs.iter_mut().for_each(|c| *c = -*c);
            a.offset = -a.offset;
        }
        let row = AbsConstraint::new(a.coeffs, a.offset);
        let dup = rows
            .iter()
            .any(|r| (&r.coeffs - &row.coeffs).amax() < 1e-12 && (r.offset - row.offset).abs() < 1e-12);
        if !dup {
            rows.push(row);
        }
    }
    Ok(OneDTemplate {
        sorted_x: sorted,
        rows,
        min_gap,
    })
}

#[derive(Debug, Clone)]
pub struct OneDSolution {
    pub sorted_x: Vec<f64>,
    /// `w[i]` is the generated point paired with `sorted_x[i]`.
    pub w: DVector<f64>,
    pub solution: AbsSolution,
    pub beta_warning: bool,
    pub system: AbsConstraintSystem,
}

pub fn solve_1d_relu_program(x: &[f64], beta_d: f64, reg: &Regularizer, tol: f64) -> Result<OneDSolution> {
    if !(beta_d > 0.0) {
        return Err(Error::invalid(format!("beta_d must be positive, got {beta_d}")));
    }
    let template = build_1d_constraints(x)?;
    let system = template.with_bound(beta_d);
    let solution = solve_abs_constrained(reg, &system, tol)?;
    Ok(OneDSolution {
        beta_warning: template.beta_warning(beta_d),
        sorted_x: template.sorted_x,
        w: solution.w.clone(),
        solution,
        system,
    })
}
