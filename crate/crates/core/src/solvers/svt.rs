//! Quadratic- and linear-discriminator programs with linear generators.

use nalgebra::{DMatrix, DVector};

use super::regularizer::{Regularizer, RegularizerKind};
use crate::error::{Error, Result};
use crate::numerics::{check_finite, column_sums, spectral_norm, svd, sym_eig, top_eig_factor, DataMatrix};

/// Left orthogonal factor `L` in `G* = L (Σ² − βI)_+^{1/2} Vᵀ`.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum OrthogonalChoice {
    /// Rows of `(Σ² − βI)_+^{1/2}Vᵀ`, padded with zero rows.
    #[default]
    Identity,
    /// `L = U`, so `G*` shares the left singular vectors of `X`.
    UAligned,
    /// Any matrix with orthonormal columns; applied to the padded core.
    Given(DataMatrix),
}

fn thresholded(sigma: &DVector<f64>, beta_d: f64) -> DVector<f64> {
    sigma.map(|s| (s * s - beta_d).max(0.0).sqrt())
}

/// Number of squared singular values strictly above `β_d`.
pub fn retained_rank(sigma: &DVector<f64>, beta_d: f64) -> usize {
    sigma.iter().filter(|&&s| s * s > beta_d).count()
}

/// Smallest `β_d` (up to `margin`) that keeps exactly `k` directions:
/// `σ_{k+1}² + margin`.
pub fn beta_for_rank(x: &DataMatrix, k: usize, margin: f64) -> Result<f64> {
    let sigma = svd(x)?.singular_values;
    if k >= sigma.len() {
        return Err(Error::invalid(format!("cannot keep {k} of {} singular values", sigma.len())));
    }
    Ok(sigma[k] * sigma[k] + margin)
}

pub fn svt_generator(x: &DataMatrix, beta_d: f64, orient: &OrthogonalChoice) -> Result<DataMatrix> {
    if !(beta_d > 0.0) {
        return Err(Error::invalid(format!("beta_d must be positive, got {beta_d}")));
    }
    let dec = svd(x)?;
    let s = thresholded(&dec.singular_values, beta_d);
    let core = DMatrix::from_diagonal(&s) * dec.v.transpose();
    let r = core.nrows();
    match orient {
        OrthogonalChoice::UAligned => Ok(&dec.u * core),
        OrthogonalChoice::Identity => {
            let rows = x.nrows().max(r);
            let mut g = DMatrix::zeros(rows, x.ncols());
            g.rows_mut(0, r).copy_from(&core);
            Ok(g)
        }
        OrthogonalChoice::Given(q) => {
            if q.ncols() < r {
                return Err(Error::dims("orthogonal factor columns", r, q.ncols()));
            }
            check_orthonormal_columns(q)?;
            let mut padded = DMatrix::zeros(q.ncols(), x.ncols());
            padded.rows_mut(0, r).copy_from(&core);
            Ok(q * padded)
        }
    }
}

fn check_orthonormal_columns(q: &DataMatrix) -> Result<()> {
    let err = (q.tr_mul(q) - DMatrix::identity(q.ncols(), q.ncols())).amax();
    if err > 1e-8 {
        return Err(Error::invalid(format!("factor is not orthonormal (deviation {err:.2e})")));
    }
    Ok(())
}

/// `(‖G‖_F², (β_g/2)‖G‖_F²)`: the two objective scalings in use.
pub fn svt_objectives(g: &DataMatrix, beta_g: f64) -> (f64, f64) {
    let raw = g.norm_squared();
    (raw, 0.5 * beta_g * raw)
}

/// Linear-generator weights `W` with `(ZW)ᵀ(ZW) = V(Σ² − βI)_+Vᵀ`.
///
/// With `Q_k, Λ_k` the top-`k` eigenpairs of `ZᵀZ`, `W = Q_k Λ_k^{-1/2} S_k V_kᵀ`
/// where `S_k` holds the retained `√(σ² − β)`. This equals
/// `pinv_sqrt(ZᵀZ, k) · Q_k S_k V_kᵀ`, i.e. the inverse square root applied
/// after embedding the thresholded factor in `Z`'s dominant eigenspace.
pub fn closed_form_linear_weights(z: &DataMatrix, x: &DataMatrix, beta_d: f64) -> Result<DataMatrix> {
    closed_form_linear_weights_rotated(z, x, beta_d, None)
}

/// As `closed_form_linear_weights`, inserting a `k × k` orthogonal factor
/// `R` between the eigenspace embedding and the thresholded core. Any such
/// `R` leaves `(ZW)ᵀ(ZW)` unchanged.
pub fn closed_form_linear_weights_rotated(
    z: &DataMatrix,
    x: &DataMatrix,
    beta_d: f64,
    rotation: Option<&DataMatrix>,
) -> Result<DataMatrix> {
    if !(beta_d > 0.0) {
        return Err(Error::invalid(format!("beta_d must be positive, got {beta_d}")));
    }
    check_finite(z, "latent matrix")?;
    if z.nrows() != x.nrows() {
        return Err(Error::dims("latent rows vs data rows", x.nrows(), z.nrows()));
    }
    let dec = svd(x)?;
    let k = retained_rank(&dec.singular_values, beta_d);
    if k == 0 {
        return Ok(DMatrix::zeros(z.ncols(), x.ncols()));
    }
    let eig = sym_eig(&z.tr_mul(z))?;
    let (q, lambda) = top_eig_factor(&eig, k)?;
    let s = thresholded(&dec.singular_values.rows(0, k).into_owned(), beta_d);
    let core = DMatrix::from_diagonal(&s) * dec.v.columns(0, k).transpose();
    let core = match rotation {
        Some(r) => {
            if r.nrows() != k || r.ncols() != k {
                return Err(Error::dims("rotation size", k, r.nrows()));
            }
            check_orthonormal_columns(r)?;
            r * core
        }
        None => core,
    };
    let embed = DMatrix::from_fn(z.ncols(), k, |i, j| q[(i, j)] / lambda[j].sqrt());
    Ok(embed * core)
}

/// Minimizes `reg(W)` subject to `‖1ᵀX − 1ᵀZW‖₂ ≤ β_d`.
///
/// For the squared norm the optimum shrinks the target mean towards the
/// origin by `β_d` and solves the single vector equation with least norm.
/// Other regularizers run Chambolle–Pock on the ball constraint.
pub fn mean_match_weights(z: &DataMatrix, x: &DataMatrix, beta_d: f64, reg: &Regularizer) -> Result<DataMatrix> {
    check_finite(z, "latent matrix")?;
    check_finite(x, "data matrix")?;
    if !(beta_d >= 0.0) {
        return Err(Error::invalid(format!("beta_d must be nonnegative, got {beta_d}")));
    }
    let target = column_sums(x);
    let zs = column_sums(z);
    let (df, d) = (z.ncols(), x.ncols());
    if target.norm() <= beta_d {
        return Ok(DMatrix::zeros(df, d));
    }
    let zn = zs.norm_squared();
    if zn == 0.0 {
        return Err(Error::Infeasible(format!(
            "latent column sums vanish while the data mean norm {:.6e} exceeds beta_d",
            target.norm()
        )));
    }
    let shrunk = &target * (1.0 - beta_d / target.norm());
    let least_norm = &zs * shrunk.transpose() / zn;
    if matches!(reg.kind, RegularizerKind::SquaredFrobenius) || reg.weight == 0.0 {
        return Ok(least_norm);
    }
    mean_match_primal_dual(&zs, &target, beta_d, reg, least_norm, d)
}

/// Chambolle–Pock for `min R(W) + I{‖Wᵀ1ᵀZ − m‖ ≤ β}` on vec(W).
fn mean_match_primal_dual(
    zs: &DVector<f64>,
    target: &DVector<f64>,
    beta_d: f64,
    reg: &Regularizer,
    start: DataMatrix,
    d: usize,
) -> Result<DataMatrix> {
    let df = zs.len();
    // K vec(W) = Wᵀ zs with vec column-major over W (df × d).
    let k = DMatrix::from_fn(d, df * d, |row, col| if col / df == row { zs[col % df] } else { 0.0 });
    let norm = spectral_norm(&k, 1e-8)?.max(1e-12);
    let (tau, sigma) = (0.95 / norm, 0.95 / norm);
    let mut w = DVector::from_column_slice(start.as_slice());
    let mut y = DVector::zeros(d);
    let mut prev = w.clone();
    for it in 0..100_000 {
        let w_next = reg.prox(&(&w - k.transpose() * &y * tau), tau);
        let w_bar = &w_next * 2.0 - &w;
        // prox of σ·(ball indicator shifted by m)* via Moreau.
        let v = &y + &k * &w_bar * sigma;
        let shifted = &v / sigma - target;
        let proj = if shifted.norm() > beta_d {
            &shifted * (beta_d / shifted.norm())
        } else {
            shifted.clone()
        };
        y = &v - (proj + target) * sigma;
        w = w_next;
        if it % 100 == 99 {
            if (&w - &prev).norm() <= 1e-12 * (1.0 + w.norm()) {
                break;
            }
            prev = w.clone();
        }
    }
    // Pull back onto the constraint if the iterate ends marginally outside.
    let out = DMatrix::from_column_slice(df, d, w.as_slice());
    let resid = target - out.transpose() * zs;
    if resid.norm() > beta_d {
        let excess = &resid * (1.0 - beta_d / resid.norm());
        return Ok(out + zs * excess.transpose() / zs.norm_squared());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::duality::dual_gap_quadratic;
    use crate::rng::{gaussian_matrix, random_orthogonal};

    fn diag(v: &[f64]) -> DataMatrix {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    #[test]
    fn svt_examples() {
        let x = diag(&[2.0, 1.0]);
        let g = svt_generator(&x, 1.0, &OrthogonalChoice::Identity).unwrap();
        assert!((g - diag(&[3f64.sqrt(), 0.0])).amax() < 1e-12);
        let g = svt_generator(&x, 4.0, &OrthogonalChoice::Identity).unwrap();
        assert_eq!(g.amax(), 0.0);
        assert!(svt_generator(&x, 0.0, &OrthogonalChoice::Identity).is_err());
    }

    #[test]
    fn svt_feasible_for_all_orientations() {
        let x = gaussian_matrix(6, 3, 1);
        let q = random_orthogonal(6, 2);
        for orient in [OrthogonalChoice::Identity, OrthogonalChoice::UAligned, OrthogonalChoice::Given(q)] {
            for beta in [0.1, 1.0, 5.0] {
                let g = svt_generator(&x, beta, &orient).unwrap();
                assert!(dual_gap_quadratic(&x, &g).unwrap().gap_value <= beta + 1e-8);
                let sigma = svd(&x).unwrap().singular_values;
                let expected: f64 = sigma.iter().map(|s| (s * s - beta).max(0.0)).sum();
                assert!((g.norm_squared() - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn closed_form_matches_svt() {
        for seed in 0..10 {
            let x = gaussian_matrix(8, 3, seed);
            let z = gaussian_matrix(8, 4, seed + 100);
            let beta = 1.0;
            let w = closed_form_linear_weights(&z, &x, beta).unwrap();
            let g = &z * &w;
            let svt = svt_generator(&x, beta, &OrthogonalChoice::Identity).unwrap();
            assert!((g.norm_squared() - svt.norm_squared()).abs() < 1e-8);
            assert!((g.tr_mul(&g) - svt.tr_mul(&svt)).amax() < 1e-8);
            assert!(dual_gap_quadratic(&x, &g).unwrap().gap_value <= beta + 1e-8);
        }
    }

    #[test]
    fn closed_form_rank_deficiency() {
        let x = diag(&[3.0, 2.0, 1.5]);
        let z = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        match closed_form_linear_weights(&z, &x, 1.0) {
            Err(Error::RankDeficient { required: 3, rank: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let w = closed_form_linear_weights(&z, &x, 100.0).unwrap();
        assert_eq!(w.amax(), 0.0);
    }

    #[test]
    fn closed_form_with_rotation() {
        let x = gaussian_matrix(6, 3, 5);
        let z = gaussian_matrix(6, 3, 6);
        let k = retained_rank(&svd(&x).unwrap().singular_values, 0.5);
        let r = random_orthogonal(k, 7);
        let w = closed_form_linear_weights_rotated(&z, &x, 0.5, Some(&r)).unwrap();
        let w0 = closed_form_linear_weights(&z, &x, 0.5).unwrap();
        let (g, g0) = (&z * &w, &z * &w0);
        assert!((g.tr_mul(&g) - g0.tr_mul(&g0)).amax() < 1e-9);
    }

    #[test]
    fn beta_for_rank_keeps_k() {
        let x = gaussian_matrix(10, 4, 3);
        let sigma = svd(&x).unwrap().singular_values;
        for k in 0..4 {
            let b = beta_for_rank(&x, k, 1e-9).unwrap();
            assert_eq!(retained_rank(&sigma, b), k);
        }
    }

    #[test]
    fn mean_match_cases() {
        let reg = Regularizer::squared_frobenius(1.0);
        let x = gaussian_matrix(5, 2, 1);
        let z = gaussian_matrix(5, 3, 2);
        let big = column_sums(&x).norm() + 1.0;
        assert_eq!(mean_match_weights(&z, &x, big, &reg).unwrap().amax(), 0.0);

        let w = mean_match_weights(&z, &x, 0.0, &reg).unwrap();
        assert!((column_sums(&(&z * &w)) - column_sums(&x)).norm() < 1e-10);
        // Least norm: W lies in span(1ᵀZ) column-wise.
        let zs = column_sums(&z);
        let proj = &zs * (zs.transpose() * &w) / zs.norm_squared();
        assert!((proj - &w).amax() < 1e-12);

        let beta = 0.5;
        let w = mean_match_weights(&z, &x, beta, &reg).unwrap();
        let gap = (column_sums(&x) - column_sums(&(&z * &w))).norm();
        assert!((gap - beta).abs() < 1e-6);

        let zero_sum = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let x2 = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(matches!(mean_match_weights(&zero_sum, &x2, 0.1, &reg), Err(Error::Infeasible(_))));
    }

    #[test]
    fn mean_match_l1_is_feasible_and_no_worse_than_least_norm() {
        let x = gaussian_matrix(5, 2, 11);
        let z = gaussian_matrix(5, 3, 12);
        let reg = Regularizer::lp(1.0, 1.0).unwrap();
        let w = mean_match_weights(&z, &x, 0.3, &reg).unwrap();
        let gap = (column_sums(&x) - column_sums(&(&z * &w))).norm();
        assert!(gap <= 0.3 + 1e-6);
        let ln = mean_match_weights(&z, &x, 0.3, &Regularizer::squared_frobenius(1.0)).unwrap();
        let l1 = |m: &DataMatrix| m.iter().map(|v| v.abs()).sum::<f64>();
        assert!(l1(&w) <= l1(&ln) + 1e-6);
    }
}
