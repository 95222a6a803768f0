//! Two-layer ReLU generator weights reproducing a target output.
//!
//! Each target column `t` is written as `Σ_i D_i Z̃ (u_i − v_i)` with `u_i`,
//! `v_i` in the cone of arrangement `i`, minimizing `Σ ‖u_i‖ + ‖v_i‖`. The
//! group-norm program runs through ADMM; its block directions, plus the
//! generators of every cone, then feed an LP over nonnegative neuron sizes
//! that enforces the output exactly with at most `n` active neurons per
//! column. Neurons are emitted with balanced scaling `(h/√‖h‖, ±√‖h‖)`.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::model::GeneratorModel;
use crate::arrangements::{augment_with_ones, ArrangementSet, Cone};
use crate::error::{Error, Result};
use crate::numerics::{check_finite, pinv, sym_eig, DataMatrix};

#[derive(Debug, Clone)]
pub struct RecoveredNeuron {
    /// First-layer weight in the (possibly bias-augmented) latent space.
    pub direction: DVector<f64>,
    /// `+1` for `u` blocks, `−1` for `v` blocks.
    pub sign: f64,
    /// Index into the arrangement set.
    pub pattern: usize,
    pub column: usize,
}

#[derive(Debug, Clone)]
pub struct RecoveryReport {
    pub model: GeneratorModel,
    pub neurons: Vec<RecoveredNeuron>,
    /// Max absolute deviation of the network output from the target.
    pub residual: f64,
    /// `Σ ‖h_j‖` over neurons, i.e. half the balanced weight-decay sum.
    pub objective: f64,
}

pub fn generator_recovery(z: &DataMatrix, g_star: &DataMatrix, arrangements: &ArrangementSet, tol: f64) -> Result<RecoveryReport> {
    check_finite(z, "latent matrix")?;
    check_finite(g_star, "target output")?;
    if !arrangements.complete {
        return Err(Error::IncompleteArrangements);
    }
    if g_star.nrows() != z.nrows() {
        return Err(Error::dims("target rows vs latent rows", z.nrows(), g_star.nrows()));
    }
    if let Some(p) = arrangements.patterns.iter().find(|p| p.pattern.len() != z.nrows()) {
        return Err(Error::dims("pattern length vs latent rows", z.nrows(), p.pattern.len()));
    }
    let zt = if arrangements.with_bias { augment_with_ones(z) } else { z.clone() };
    let cones: Vec<Cone> = arrangements
        .patterns
        .iter()
        .map(|p| Cone::new(&p.pattern, &zt))
        .collect::<Result<_>>()?;

    let per_column: Vec<Vec<RecoveredNeuron>> = (0..g_star.ncols())
        .into_par_iter()
        .map(|col| {
            let target = g_star.column(col).into_owned();
            recover_column(&zt, &target, arrangements, &cones, col)
        })
        .collect::<Result<_>>()?;
    let neurons: Vec<RecoveredNeuron> = per_column.into_iter().flatten().collect();

    let model = assemble(&neurons, z.ncols(), g_star.ncols(), arrangements.with_bias);
    let out = model.evaluate(z)?;
    let residual = (out - g_star).amax();
    if residual > tol {
        return Err(Error::RecoveryFailed { residual, tol });
    }
    let objective = neurons.iter().map(|n| n.direction.norm()).sum();
    Ok(RecoveryReport {
        model,
        neurons,
        residual,
        objective,
    })
}

fn assemble(neurons: &[RecoveredNeuron], d: usize, cols: usize, with_bias: bool) -> GeneratorModel {
    let m = neurons.len();
    let mut w1 = DMatrix::zeros(d, m);
    let mut w2 = DMatrix::zeros(m, cols);
    let mut bias = DVector::zeros(m);
    for (j, n) in neurons.iter().enumerate() {
        let scale = n.direction.norm().sqrt();
        for i in 0..d {
            w1[(i, j)] = n.direction[i] / scale;
        }
        if with_bias {
            bias[j] = n.direction[d] / scale;
        }
        w2[(j, n.column)] = n.sign * scale;
    }
    GeneratorModel::TwoLayerReLU {
        w1,
        w2,
        bias: with_bias.then_some(bias),
    }
}

struct Candidate {
    direction: DVector<f64>,
    sign: f64,
    pattern: usize,
    output: DVector<f64>,
}

fn recover_column(
    zt: &DataMatrix,
    target: &DVector<f64>,
    arrangements: &ArrangementSet,
    cones: &[Cone],
    col: usize,
) -> Result<Vec<RecoveredNeuron>> {
    let scale = target.amax();
    if scale == 0.0 {
        return Ok(Vec::new());
    }
    let masks: Vec<DataMatrix> = arrangements
        .patterns
        .iter()
        .map(|p| DMatrix::from_fn(zt.nrows(), zt.ncols(), |i, j| if p.pattern[i] { zt[(i, j)] } else { 0.0 }))
        .collect();

    let blocks = admm_group_norm(zt, target, &masks, cones);

    let mut cands: Vec<Candidate> = Vec::new();
    let push = |cands: &mut Vec<Candidate>, d: DVector<f64>, sign: f64, pattern: usize| {
        let n = d.norm();
        if n == 0.0 {
            return;
        }
        let d = d / n;
        let output = (zt * &d).map(|t| t.max(0.0)) * sign;
        if output.amax() <= 1e-14 {
            return;
        }
        cands.push(Candidate {
            direction: d,
            sign,
            pattern,
            output,
        });
    };
    let largest = blocks.iter().map(|b| b.0.norm()).fold(0.0, f64::max);
    for (block, sign, pattern) in &blocks {
        if block.norm() > 1e-6 * largest {
            push(&mut cands, cones[*pattern].project(block), *sign, *pattern);
        }
    }
    for (i, cone) in cones.iter().enumerate() {
        for g in cone.generators() {
            push(&mut cands, g.clone(), 1.0, i);
            push(&mut cands, g, -1.0, i);
        }
    }
    if cands.is_empty() {
        return Err(Error::RecoveryFailed { residual: scale, tol: 0.0 });
    }

    let sizes = lp_sizes(&cands, target).ok_or(Error::RecoveryFailed { residual: scale, tol: 0.0 })?;
    let sizes = polish_sizes(&cands, target, sizes);
    let sizes = caratheodory(&cands, sizes);

    Ok(cands
        .iter()
        .zip(sizes.iter())
        .filter(|(_, &s)| s > 0.0)
        .map(|(c, &s)| RecoveredNeuron {
            direction: &c.direction * s,
            sign: c.sign,
            pattern: c.pattern,
            column: col,
        })
        .collect())
}

/// ADMM for `min Σ‖x_b‖ + I_{K_b}(x_b)` s.t. `Σ ± M_b x_b = t`.
/// Returns `(block, sign, pattern)` triples.
fn admm_group_norm(zt: &DataMatrix, target: &DVector<f64>, masks: &[DataMatrix], cones: &[Cone]) -> Vec<(DVector<f64>, f64, usize)> {
    let p = masks.len();
    let d = zt.ncols();
    let n = zt.nrows();
    let blocks = 2 * p;
    let m = DMatrix::from_fn(n, blocks * d, |i, col| {
        let (b, j) = (col / d, col % d);
        let sign = if b < p { 1.0 } else { -1.0 };
        sign * masks[b % p][(i, j)]
    });
    let Ok(m_pinv) = pinv(&m) else {
        return Vec::new();
    };
    let project_affine = |v: &DVector<f64>| v - &m_pinv * (&m * v - target);

    let mut rho = 1.0 / target.norm().max(1e-12);
    let mut y = DVector::zeros(blocks * d);
    let mut lam = DVector::zeros(blocks * d);
    for it in 0..4000 {
        let x = project_affine(&(&y - &lam));
        let y_prev = y.clone();
        for b in 0..blocks {
            let v = x.rows(b * d, d) + lam.rows(b * d, d);
            let proj = cones[b % p].project(&v.into_owned());
            let norm = proj.norm();
            let shrink = if norm > 0.0 { (1.0 - 1.0 / (rho * norm)).max(0.0) } else { 0.0 };
            y.rows_mut(b * d, d).copy_from(&(proj * shrink));
        }
        lam += &x - &y;
        if it % 25 == 24 {
            let primal = (&x - &y).norm();
            let dual = rho * (&y - &y_prev).norm();
            if primal < 1e-12 * (1.0 + y.norm()) && dual < 1e-12 {
                break;
            }
            // Residual balancing; the scaled multiplier is rescaled with ρ.
            if primal > 10.0 * dual {
                rho *= 2.0;
                lam /= 2.0;
            } else if dual > 10.0 * primal {
                rho /= 2.0;
                lam *= 2.0;
            }
        }
    }
    (0..blocks)
        .map(|b| {
            let sign = if b < p { 1.0 } else { -1.0 };
            (y.rows(b * d, d).into_owned(), sign, b % p)
        })
        .collect()
}

/// `min Σ s_k` s.t. `Σ s_k out_k = t`, `s ≥ 0`.
fn lp_sizes(cands: &[Candidate], target: &DVector<f64>) -> Option<Vec<f64>> {
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = cands.iter().map(|_| lp.add_var(1.0, (0.0, f64::INFINITY))).collect();
    for i in 0..target.len() {
        let terms: Vec<_> = cands
            .iter()
            .zip(&vars)
            .filter(|(c, _)| c.output[i] != 0.0)
            .map(|(c, &v)| (v, c.output[i]))
            .collect();
        if terms.is_empty() {
            if target[i].abs() > 1e-12 {
                return None;
            }
            continue;
        }
        lp.add_constraint(terms, ComparisonOp::Eq, target[i]);
    }
    let sol = lp.solve().ok()?;
    Some(vars.iter().map(|&v| sol.var_value(v).max(0.0)).collect())
}

/// Re-solves the equality on the LP support to remove simplex round-off.
fn polish_sizes(cands: &[Candidate], target: &DVector<f64>, sizes: Vec<f64>) -> Vec<f64> {
    let support: Vec<usize> = (0..sizes.len()).filter(|&k| sizes[k] > 1e-14).collect();
    if support.is_empty() {
        return sizes;
    }
    let a = DMatrix::from_fn(target.len(), support.len(), |i, j| cands[support[j]].output[i]);
    let Ok(ap) = pinv(&a) else { return sizes };
    let refined = &ap * target;
    let old_resid = (&a * DVector::from_iterator(support.len(), support.iter().map(|&k| sizes[k])) - target).amax();
    let new_resid = (&a * &refined - target).amax();
    if refined.iter().all(|&s| s >= 0.0) && new_resid <= old_resid {
        let mut out = vec![0.0; sizes.len()];
        for (j, &k) in support.iter().enumerate() {
            out[k] = refined[j];
        }
        out
    } else {
        sizes
    }
}

/// Drops dependent columns from the support without changing `Σ s_k out_k`.
fn caratheodory(cands: &[Candidate], mut sizes: Vec<f64>) -> Vec<f64> {
    loop {
        let support: Vec<usize> = (0..sizes.len()).filter(|&k| sizes[k] > 0.0).collect();
        let n = cands.first().map_or(0, |c| c.output.len());
        if support.len() <= n {
            return sizes;
        }
        let a = DMatrix::from_fn(n, support.len(), |i, j| cands[support[j]].output[i]);
        // More columns than rows: the smallest eigenvector of AᵀA is a null vector.
        let Ok(eig) = sym_eig(&a.tr_mul(&a)) else { return sizes };
        let null = eig.eigenvectors.column(support.len() - 1).into_owned();
        let null = if null.iter().any(|&v| v > 0.0) { null } else { -null };
        let mut step = f64::INFINITY;
        for (j, &k) in support.iter().enumerate() {
            if null[j] > 1e-14 {
                step = step.min(sizes[k] / null[j]);
            }
        }
        if !step.is_finite() {
            return sizes;
        }
        for (j, &k) in support.iter().enumerate() {
            sizes[k] -= step * null[j];
            if sizes[k] <= 1e-15 {
                sizes[k] = 0.0;
            }
        }
    }
}
