//! `min R(w)` subject to `|a_jᵀw + b_j| ≤ β` for every row.
//!
//! Feasibility is settled first by the LP `min t s.t. |a_jᵀw + b_j| ≤ t`,
//! whose optimum also gives a well-centred starting point. The squared norm
//! is then solved exactly by a primal active-set method and `‖w‖₁` exactly
//! as an LP; other regularizers run Chambolle–Pock. Every path reports a
//! KKT residual.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};

use super::nnls::nnls;
use super::regularizer::{Regularizer, RegularizerKind};
use crate::error::{Error, Result};
use crate::numerics::{pinv, spectral_norm, DataMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct AbsConstraint {
    pub coeffs: DVector<f64>,
    pub offset: f64,
}

impl AbsConstraint {
    pub fn new(coeffs: Vec<f64>, offset: f64) -> Self {
        AbsConstraint {
            coeffs: DVector::from_vec(coeffs),
            offset,
        }
    }

    pub fn eval(&self, w: &DVector<f64>) -> f64 {
        self.coeffs.dot(w) + self.offset
    }
}

/// Rows `|a_jᵀw + b_j| ≤ bound` over `w ∈ R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsConstraintSystem {
    pub dim: usize,
    pub rows: Vec<AbsConstraint>,
    pub bound: f64,
}

impl AbsConstraintSystem {
    pub fn max_violation(&self, w: &DVector<f64>) -> f64 {
        self.rows.iter().map(|r| r.eval(w).abs() - self.bound).fold(0.0, f64::max)
    }

    fn coefficient_matrix(&self) -> DataMatrix {
        DMatrix::from_fn(self.rows.len(), self.dim, |i, j| self.rows[i].coeffs[j])
    }

    fn offsets(&self) -> DVector<f64> {
        DVector::from_iterator(self.rows.len(), self.rows.iter().map(|r| r.offset))
    }

    fn validate(&self) -> Result<()> {
        if !(self.bound >= 0.0) || !self.bound.is_finite() {
            return Err(Error::invalid(format!("bound must be finite and nonnegative, got {}", self.bound)));
        }
        for r in &self.rows {
            if r.coeffs.len() != self.dim {
                return Err(Error::dims("constraint coefficient length", self.dim, r.coeffs.len()));
            }
            if !r.offset.is_finite() || r.coeffs.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("constraint row has non-finite entries"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AbsSolution {
    pub w: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub max_violation: f64,
    /// Smallest achievable `max_j |a_jᵀw + b_j|`.
    pub phase1_value: f64,
}

pub fn solve_abs_constrained(reg: &Regularizer, sys: &AbsConstraintSystem, tol: f64) -> Result<AbsSolution> {
    sys.validate()?;
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    let n = sys.dim;

    let (start, phase1_value) = if sys.rows.is_empty() {
        (DVector::zeros(n), 0.0)
    } else {
        phase_one(sys)?
    };
    if phase1_value > sys.bound + tol {
        return Err(Error::Infeasible(format!(
            "smallest achievable constraint value {phase1_value:.6e} exceeds bound {:.6e}",
            sys.bound
        )));
    }

    let w = if reg.weight == 0.0 {
        start
    } else {
        match reg.kind {
            RegularizerKind::SquaredFrobenius => active_set_least_norm(sys, start),
            RegularizerKind::LpToTheP(2.0) => active_set_least_norm(sys, start),
            RegularizerKind::LpToTheP(1.0) => l1_program(sys).unwrap_or(start),
            _ => chambolle_pock(reg, sys, start, tol)?,
        }
    };

    let kkt_residual = kkt_residual(reg, sys, &w, tol);
    Ok(AbsSolution {
        objective: reg.value(&w),
        max_violation: sys.max_violation(&w),
        kkt_residual,
        phase1_value,
        w,
    })
}

fn phase_one(sys: &AbsConstraintSystem) -> Result<(DVector<f64>, f64)> {
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = (0..sys.dim).map(|_| lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY))).collect();
    let t = lp.add_var(1.0, (0.0, f64::INFINITY));
    for row in &sys.rows {
        let mut terms: Vec<_> = vars.iter().zip(row.coeffs.iter()).map(|(&v, &c)| (v, c)).collect();
        terms.push((t, -1.0));
        lp.add_constraint(terms.clone(), ComparisonOp::Le, -row.offset);
        let last = terms.len() - 1;
        terms[last].1 = 1.0;
        lp.add_constraint(terms, ComparisonOp::Ge, -row.offset);
    }
    let sol = lp
        .solve()
        .map_err(|e| Error::Infeasible(format!("phase-one program failed: {e}")))?;
    let w = DVector::from_iterator(sys.dim, vars.iter().map(|&v| *sol.var_value(v)));
    let value = sys.rows.iter().map(|r| r.eval(&w).abs()).fold(0.0, f64::max);
    Ok((w, value))
}

/// One-sided form `C w ≤ d`: row `2j` is the upper side of constraint `j`,
/// row `2j + 1` the lower side.
fn one_sided(sys: &AbsConstraintSystem) -> (DataMatrix, DVector<f64>) {
    let a = sys.coefficient_matrix();
    let b = sys.offsets();
    let m = sys.rows.len();
    let c = DMatrix::from_fn(2 * m, sys.dim, |i, j| if i % 2 == 0 { a[(i / 2, j)] } else { -a[(i / 2, j)] });
    let d = DVector::from_fn(2 * m, |i, _| if i % 2 == 0 { sys.bound - b[i / 2] } else { sys.bound + b[i / 2] });
    (c, d)
}

fn rows_of(c: &DataMatrix, idx: &[usize]) -> DataMatrix {
    DMatrix::from_fn(idx.len(), c.ncols(), |i, j| c[(idx[i], j)])
}

/// Primal active-set method for `min ‖w‖²` over `Cw ≤ d` from a feasible start.
fn active_set_least_norm(sys: &AbsConstraintSystem, start: DVector<f64>) -> DVector<f64> {
    let (c, d) = one_sided(sys);
    let total = c.nrows();
    let scale = 1.0 + start.norm() + c.amax();
    let mut w = start;
    let mut working: Vec<usize> = Vec::new();

    for _ in 0..(20 * total + 100) {
        let cw = rows_of(&c, &working);
        let gram_inv = if working.is_empty() {
            DMatrix::zeros(0, 0)
        } else {
            pinv(&(&cw * cw.transpose())).unwrap_or_else(|_| DMatrix::zeros(working.len(), working.len()))
        };
        // Step to the minimizer on the current face.
        let p = if working.is_empty() {
            -&w
        } else {
            -(&w - cw.transpose() * (&gram_inv * (&cw * &w)))
        };

        if p.norm() <= 1e-14 * scale {
            if working.is_empty() {
                break;
            }
            // Stationarity 2w + C_Wᵀμ = 0.
            let mu = -(&gram_inv * (&cw * &w)) * 2.0;
            let (k, min_mu) = mu
                .iter()
                .copied()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("nonempty working set");
            if min_mu >= -1e-12 * scale {
                break;
            }
            working.remove(k);
            continue;
        }

        let mut alpha = 1.0;
        let mut blocking = None;
        for i in 0..total {
            if working.contains(&i) {
                continue;
            }
            let cp = c.row(i).dot(&p.transpose());
            if cp > 1e-15 * scale {
                let slack = d[i] - c.row(i).dot(&w.transpose());
                let step = (slack / cp).max(0.0);
                if step < alpha {
                    alpha = step;
                    blocking = Some(i);
                }
            }
        }
        w += &p * alpha;
        if let Some(i) = blocking {
            working.push(i);
        }
    }
    w
}

/// `min Σ|w_i|` as an LP over `(w, s)` with `−s ≤ w ≤ s`.
fn l1_program(sys: &AbsConstraintSystem) -> Option<DVector<f64>> {
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let w: Vec<_> = (0..sys.dim).map(|_| lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY))).collect();
    let s: Vec<_> = (0..sys.dim).map(|_| lp.add_var(1.0, (0.0, f64::INFINITY))).collect();
    for i in 0..sys.dim {
        lp.add_constraint([(w[i], 1.0), (s[i], -1.0)], ComparisonOp::Le, 0.0);
        lp.add_constraint([(w[i], 1.0), (s[i], 1.0)], ComparisonOp::Ge, 0.0);
    }
    for row in &sys.rows {
        let terms: Vec<_> = w.iter().zip(row.coeffs.iter()).map(|(&v, &c)| (v, c)).collect();
        lp.add_constraint(terms.clone(), ComparisonOp::Le, sys.bound - row.offset);
        lp.add_constraint(terms, ComparisonOp::Ge, -sys.bound - row.offset);
    }
    let sol = lp.solve().ok()?;
    Some(DVector::from_iterator(sys.dim, w.iter().map(|&v| *sol.var_value(v))))
}

/// Chambolle–Pock on `min R(w) + I_box(Aw + b)` from a feasible start.
fn chambolle_pock(reg: &Regularizer, sys: &AbsConstraintSystem, start: DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    let a = sys.coefficient_matrix();
    let b = sys.offsets();
    let norm = spectral_norm(&a, 1e-6)?.max(1e-12);
    let (tau, sigma) = (0.95 / norm, 0.95 / norm);
    let at = a.transpose();

    let mut w = start;
    let mut lambda = DVector::zeros(a.nrows());
    let mut best = w.clone();
    let mut best_score = f64::INFINITY;
    for k in 0..200_000 {
        let w_next = reg.prox(&(&w - &at * &lambda * tau), tau);
        let w_bar = &w_next * 2.0 - &w;
        let v = &lambda + (&a * &w_bar + &b) * sigma;
        lambda = v.map(|x| x.signum() * (x.abs() - sigma * sys.bound).max(0.0));
        w = w_next;
        if k % 200 == 199 {
            let score = kkt_residual(reg, sys, &w, tol).max(sys.max_violation(&w));
            if score < best_score {
                best_score = score;
                best = w.clone();
            }
            if score < 0.1 * tol {
                break;
            }
        }
        if !w.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { iteration: k, step: tau });
        }
    }
    Ok(best)
}

/// Norm of the best stationarity residual `∂R(w) + Σ μ_i c_i` with `μ ≥ 0`
/// over constraints active within `tol`. For `‖w‖₁`, zero coordinates may
/// absorb up to `weight` in absolute value.
pub fn kkt_residual(reg: &Regularizer, sys: &AbsConstraintSystem, w: &DVector<f64>, tol: f64) -> f64 {
    let (c, d) = one_sided(sys);
    let active: Vec<usize> = (0..c.nrows())
        .filter(|&i| d[i] - c.row(i).dot(&w.transpose()) <= tol.max(1e-9))
        .collect();
    let g = reg.subgradient(w);
    let ca = rows_of(&c, &active);

    let l1 = matches!(reg.kind, RegularizerKind::LpToTheP(p) if p == 1.0);
    let free: Vec<usize> = (0..w.len()).filter(|&i| !(l1 && w[i] == 0.0)).collect();
    let sub_c = DMatrix::from_fn(free.len(), active.len(), |r, k| ca[(k, free[r])]);
    let sub_g = DVector::from_fn(free.len(), |r, _| g[free[r]]);
    let mu = nnls(&sub_c, &(-&sub_g));
    let mut resid = (&sub_g + &sub_c * &mu).norm_squared();
    if l1 {
        let push = ca.transpose() * &mu;
        for i in 0..w.len() {
            if w[i] == 0.0 {
                resid += (push[i].abs() - reg.weight).max(0.0).powi(2);
            }
        }
    }
    resid.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::gaussian_matrix;

    fn sys(rows: Vec<(Vec<f64>, f64)>, bound: f64) -> AbsConstraintSystem {
        let dim = rows[0].0.len();
        AbsConstraintSystem {
            dim,
            rows: rows.into_iter().map(|(c, o)| AbsConstraint::new(c, o)).collect(),
            bound,
        }
    }

    #[test]
    fn unconstrained_minimum_is_zero() {
        let s = AbsConstraintSystem {
            dim: 3,
            rows: vec![],
            bound: 1.0,
        };
        let r = solve_abs_constrained(&Regularizer::squared_frobenius(1.0), &s, 1e-6).unwrap();
        assert_eq!(r.w.norm(), 0.0);
        let r = solve_abs_constrained(&Regularizer::lp(1.0, 1.0).unwrap(), &s, 1e-6).unwrap();
        assert_eq!(r.w.norm(), 0.0);
    }

    #[test]
    fn single_row_projection() {
        let s = sys(vec![(vec![1.0, 0.0, 0.0], 1.0)], 0.1);
        let r = solve_abs_constrained(&Regularizer::squared_frobenius(1.0), &s, 1e-9).unwrap();
        assert!((r.w[0] + 0.9).abs() < 1e-12 && r.w[1] == 0.0 && r.w[2] == 0.0);
        assert!(r.kkt_residual < 1e-9);
    }

    #[test]
    fn infeasible_system_is_certified() {
        let s = sys(vec![(vec![1.0], 1.0), (vec![1.0], -1.0)], 0.5);
        match solve_abs_constrained(&Regularizer::squared_frobenius(1.0), &s, 1e-6) {
            Err(Error::Infeasible(_)) => {}
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    fn random_system(seed: u64) -> AbsConstraintSystem {
        let a = gaussian_matrix(6, 3, seed);
        let b = gaussian_matrix(6, 1, seed + 1);
        AbsConstraintSystem {
            dim: 3,
            rows: (0..6)
                .map(|i| AbsConstraint::new(a.row(i).iter().copied().collect(), 2.0 + b[i]))
                .collect(),
            bound: 1.5,
        }
    }

    #[test]
    fn optimal_against_random_feasible_probes() {
        let regs = [
            Regularizer::squared_frobenius(1.0),
            Regularizer::lp(1.0, 1.0).unwrap(),
            Regularizer::lp(1.5, 1.0).unwrap(),
        ];
        for seed in 0..4 {
            let s = random_system(seed * 10);
            let Ok(start) = phase_one(&s) else { continue };
            if start.1 > s.bound {
                continue;
            }
            for reg in &regs {
                let sol = solve_abs_constrained(reg, &s, 1e-6).unwrap();
                assert!(sol.max_violation <= 1e-6, "violation {}", sol.max_violation);
                assert!(sol.kkt_residual < 1e-6, "{:?} kkt {}", reg.kind, sol.kkt_residual);
                let probes = gaussian_matrix(10_000, 3, seed + 99);
                for k in 0..probes.nrows() {
                    // Probes along segments from the feasible centre.
                    let dir = probes.row(k).transpose();
                    let p = &start.0 + dir * 0.5;
                    if s.max_violation(&p) <= 0.0 {
                        assert!(sol.objective <= reg.value(&p) + 1e-6);
                    }
                }
            }
        }
    }
}
