//! Dense linear-algebra kernel shared by every solver.
//!
//! Matrices are `nalgebra::DMatrix<f64>` with rows as samples. The SVD and
//! symmetric eigendecomposition come from nalgebra; this module re-sorts
//! their output, validates inputs and layers the rank-aware helpers the
//! convex programs need on top.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense real matrix, rows = samples.
pub type DataMatrix = DMatrix<f64>;

/// Eigenvalues below this fraction of the largest one count as zero.
pub const RANK_CUTOFF: f64 = 1e-12;

/// Thin singular value decomposition `A = U diag(σ) Vᵀ`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: DataMatrix,
    pub singular_values: DVector<f64>,
    pub v: DataMatrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> DataMatrix {
        &self.u * DMatrix::from_diagonal(&self.singular_values) * self.v.transpose()
    }

    /// Number of singular values above `RANK_CUTOFF`-relative threshold.
    pub fn rank(&self) -> usize {
        let top = self.singular_values.iter().copied().fold(0.0, f64::max);
        if top == 0.0 {
            return 0;
        }
        // σ² is what the cutoff applies to, so compare σ against √cutoff.
        let cut = top * RANK_CUTOFF.sqrt();
        self.singular_values.iter().filter(|&&s| s > cut).count()
    }
}

/// Eigendecomposition of a symmetric matrix, eigenvalues nonincreasing.
#[derive(Debug, Clone)]
pub struct EigResult {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DataMatrix,
}

impl EigResult {
    pub fn reconstruct(&self) -> DataMatrix {
        &self.eigenvectors * DMatrix::from_diagonal(&self.eigenvalues) * self.eigenvectors.transpose()
    }
}

pub fn check_finite(a: &DataMatrix, what: &str) -> Result<()> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::invalid(format!("{what} is empty ({}x{})", a.nrows(), a.ncols())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{what} has non-finite entries")));
    }
    Ok(())
}

pub(crate) fn same_cols(a: &DataMatrix, b: &DataMatrix, context: &'static str) -> Result<()> {
    if a.ncols() != b.ncols() {
        return Err(Error::dims(context, a.ncols(), b.ncols()));
    }
    Ok(())
}

pub fn svd(a: &DataMatrix) -> Result<SvdResult> {
    check_finite(a, "svd input")?;
    let dec = a.clone().svd(true, true);
    let u = dec.u.expect("requested U");
    let v_t = dec.v_t.expect("requested Vᵀ");
    let sv = dec.singular_values;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));

    let r = sv.len();
    let mut u_sorted = DMatrix::zeros(a.nrows(), r);
    let mut v_sorted = DMatrix::zeros(a.ncols(), r);
    let mut s_sorted = DVector::zeros(r);
    for (dst, &src) in order.iter().enumerate() {
        s_sorted[dst] = sv[src].max(0.0);
        u_sorted.set_column(dst, &u.column(src));
        v_sorted.set_column(dst, &v_t.row(src).transpose());
    }
    Ok(SvdResult {
        u: u_sorted,
        singular_values: s_sorted,
        v: v_sorted,
    })
}

/// Largest singular value by power iteration on `AᵀA`.
///
/// Starts from the normalized all-ones vector; if that start is annihilated
/// by `A`, standard basis vectors are tried in order. Deterministic.
pub fn spectral_norm(a: &DataMatrix, tol: f64) -> Result<f64> {
    check_finite(a, "spectral_norm input")?;
    if !(tol > 0.0) {
        return Err(Error::invalid("spectral_norm tolerance must be positive"));
    }
    if a.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let d = a.ncols();
    let ata = a.transpose() * a;
    let scale = ata.amax();

    let mut starts = vec![DVector::from_element(d, 1.0 / (d as f64).sqrt())];
    starts.extend((0..d).map(|i| DVector::from_fn(d, |j, _| if i == j { 1.0 } else { 0.0 })));

    for start in starts {
        let mut v = start;
        let mut w = &ata * &v;
        if w.norm() <= 1e-14 * scale {
            continue;
        }
        let mut rho = v.dot(&w);
        let mut settled = 0;
        for _ in 0..200_000 {
            v = &w / w.norm();
            w = &ata * &v;
            let next = v.dot(&w);
            let change = (next - rho).abs();
            rho = next;
            if change <= 1e-2 * tol * rho.abs() {
                settled += 1;
                if settled >= 3 {
                    break;
                }
            } else {
                settled = 0;
            }
        }
        return Ok(rho.max(0.0).sqrt());
    }
    Ok(0.0)
}

/// Symmetric eigendecomposition. Inputs asymmetric beyond `1e-10` (relative
/// to the largest entry) are rejected; the rest are symmetrized first.
pub fn sym_eig(s: &DataMatrix) -> Result<EigResult> {
    check_finite(s, "sym_eig input")?;
    if s.nrows() != s.ncols() {
        return Err(Error::dims("sym_eig expects a square matrix", s.nrows(), s.ncols()));
    }
    let scale = s.amax().max(1.0);
    let asym = (s - s.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(Error::invalid(format!("matrix is not symmetric (max asymmetry {asym:.3e})")));
    }
    let sym = (s + s.transpose()) * 0.5;
    let dec = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..dec.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| dec.eigenvalues[j].total_cmp(&dec.eigenvalues[i]));
    let n = order.len();
    let mut vals = DVector::zeros(n);
    let mut vecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vals[dst] = dec.eigenvalues[src];
        vecs.set_column(dst, &dec.eigenvectors.column(src));
    }
    Ok(EigResult {
        eigenvalues: vals,
        eigenvectors: vecs,
    })
}

/// `Q_k Λ_k^{-1/2} Q_kᵀ` over the top-`k` eigenpairs of a PSD matrix.
pub fn pinv_sqrt(s: &DataMatrix, k: usize) -> Result<DataMatrix> {
    let eig = sym_eig(s)?;
    let (q, lambda) = top_eig_factor(&eig, k)?;
    let scaled = DMatrix::from_fn(q.nrows(), k, |i, j| q[(i, j)] / lambda[j].sqrt());
    Ok(scaled * q.transpose())
}

/// Top-`k` eigenvectors and eigenvalues, erroring when `k` exceeds the
/// numerical rank.
pub(crate) fn top_eig_factor(eig: &EigResult, k: usize) -> Result<(DataMatrix, DVector<f64>)> {
    let rank = numerical_rank_eig(&eig.eigenvalues);
    if k > rank {
        return Err(Error::RankDeficient { required: k, rank });
    }
    let q = eig.eigenvectors.columns(0, k).into_owned();
    let lambda = eig.eigenvalues.rows(0, k).into_owned();
    Ok((q, lambda))
}

pub(crate) fn numerical_rank_eig(eigenvalues: &DVector<f64>) -> usize {
    let top = eigenvalues.iter().copied().fold(0.0, f64::max);
    if top <= 0.0 {
        return 0;
    }
    eigenvalues.iter().filter(|&&l| l >= RANK_CUTOFF * top).count()
}

pub fn rank(a: &DataMatrix) -> Result<usize> {
    Ok(svd(a)?.rank())
}

/// Moore–Penrose pseudo-inverse with the crate-wide rank cutoff.
pub fn pinv(a: &DataMatrix) -> Result<DataMatrix> {
    let dec = svd(a)?;
    let r = dec.rank();
    let mut out = DMatrix::zeros(a.ncols(), a.nrows());
    for k in 0..r {
        let s = dec.singular_values[k];
        out += dec.v.column(k) * dec.u.column(k).transpose() / s;
    }
    Ok(out)
}

/// Column sums as a vector (`1ᵀA` transposed).
pub fn column_sums(a: &DataMatrix) -> DVector<f64> {
    DVector::from_iterator(a.ncols(), a.column_iter().map(|c| c.sum()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::gaussian_matrix;
    use proptest::prelude::*;

    fn rel_fro(a: &DataMatrix, b: &DataMatrix) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn svd_of_identity() {
        let r = svd(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(r.singular_values.as_slice(), &[1.0, 1.0]);
        assert!(rel_fro(&r.reconstruct(), &DMatrix::identity(2, 2)) < 1e-14);
    }

    #[test]
    fn svd_of_diagonal_sorts() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 4.0]));
        let r = svd(&a).unwrap();
        assert!((r.singular_values[0] - 4.0).abs() < 1e-14);
        assert!((r.singular_values[1] - 3.0).abs() < 1e-14);
        assert!(r.u[(1, 0)].abs() > 0.999 && r.v[(1, 0)].abs() > 0.999);
    }

    #[test]
    fn svd_random_5x3_reconstructs() {
        let a = gaussian_matrix(5, 3, 11);
        let r = svd(&a).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                assert!((r.reconstruct()[(i, j)] - a[(i, j)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn svd_rejects_nan() {
        let mut a = DMatrix::zeros(2, 2);
        a[(0, 1)] = f64::NAN;
        assert!(matches!(svd(&a), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn spectral_norm_cases() {
        assert_eq!(spectral_norm(&DMatrix::zeros(3, 2), 1e-10).unwrap(), 0.0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -5.0]));
        assert!((spectral_norm(&d, 1e-12).unwrap() - 5.0).abs() < 1e-10);
        let a = gaussian_matrix(4, 4, 5);
        let s = svd(&a).unwrap().singular_values[0];
        assert!((spectral_norm(&a, 1e-10).unwrap() - s).abs() <= 1e-8 * s);
    }

    #[test]
    fn spectral_norm_when_ones_vector_is_annihilated() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 2.0, -2.0]);
        let s = svd(&a).unwrap().singular_values[0];
        assert!((spectral_norm(&a, 1e-12).unwrap() - s).abs() < 1e-10);
    }

    #[test]
    fn sym_eig_cases() {
        let e = sym_eig(&DMatrix::identity(3, 3)).unwrap();
        assert!(e.eigenvalues.iter().all(|&l| (l - 1.0).abs() < 1e-14));
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let e = sym_eig(&d).unwrap();
        assert_eq!(e.eigenvalues.as_slice(), &[4.0, 1.0]);
        assert!(sym_eig(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])).is_err());
    }

    #[test]
    fn gram_matrix_is_psd_on_random_probes() {
        let x = gaussian_matrix(6, 4, 3);
        let s = x.transpose() * &x;
        let e = sym_eig(&s).unwrap();
        assert!(e.eigenvalues.iter().all(|&l| l >= -1e-10));
        for seed in 0..20 {
            let v = gaussian_matrix(4, 1, 100 + seed);
            assert!((v.transpose() * &s * &v)[(0, 0)] >= -1e-10);
        }
    }

    #[test]
    fn pinv_sqrt_cases() {
        let i2 = DMatrix::identity(2, 2);
        assert!(rel_fro(&pinv_sqrt(&i2, 2).unwrap(), &i2) < 1e-14);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 0.0]));
        let p = pinv_sqrt(&d, 1).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.0]));
        assert!((p - expected).amax() < 1e-14);
        assert!(matches!(pinv_sqrt(&d, 2), Err(Error::RankDeficient { required: 2, rank: 1 })));
    }

    #[test]
    fn pinv_sqrt_gives_projector() {
        let b = gaussian_matrix(5, 3, 9);
        let s = &b * b.transpose(); // rank 3 in 5 dims
        let p = pinv_sqrt(&s, 3).unwrap();
        let proj = &p * &s * &p;
        assert!((&proj * &proj - &proj).amax() < 1e-8);
        assert!((proj.trace() - 3.0).abs() < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn svd_contracts(rows in 1usize..=20, cols in 1usize..=20, seed in 0u64..10_000) {
            let a = gaussian_matrix(rows, cols, seed);
            let r = svd(&a).unwrap();
            let k = r.singular_values.len();
            prop_assert!((r.u.transpose() * &r.u - DMatrix::identity(k, k)).amax() < 1e-10);
            prop_assert!((r.v.transpose() * &r.v - DMatrix::identity(k, k)).amax() < 1e-10);
            prop_assert!(rel_fro(&r.reconstruct(), &a) < 1e-8);
            for w in r.singular_values.as_slice().windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
            let s = spectral_norm(&a, 1e-11).unwrap();
            prop_assert!((s - r.singular_values[0]).abs() <= 1e-8 * r.singular_values[0]);
        }

        #[test]
        fn sym_eig_pairs(n in 1usize..=12, seed in 0u64..10_000) {
            let b = gaussian_matrix(n, n, seed);
            let s = &b + b.transpose();
            let e = sym_eig(&s).unwrap();
            let norm = e.eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.abs()));
            for j in 0..n {
                let v = e.eigenvectors.column(j);
                let resid = (&s * v - v * e.eigenvalues[j]).norm();
                prop_assert!(resid <= 1e-8 * norm.max(1e-300));
            }
            prop_assert!((e.eigenvectors.transpose() * &e.eigenvectors - DMatrix::identity(n, n)).amax() < 1e-10);
        }
    }
}
