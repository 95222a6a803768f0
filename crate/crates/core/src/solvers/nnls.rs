use nalgebra::{DMatrix, DVector};

use crate::numerics::{pinv, DataMatrix};

/// Lawson–Hanson nonnegative least squares: `min_{x ≥ 0} ‖Ax − b‖₂`.
pub fn nnls(a: &DataMatrix, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    if n == 0 {
        return x;
    }
    let scale = a.amax().max(1e-300) * b.amax().max(1.0);
    let tol = 1e-13 * scale * (a.nrows().max(n) as f64);
    let mut passive = vec![false; n];

    for _ in 0..(3 * n + 30) {
        let grad = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && grad[j] > tol)
            .max_by(|&i, &j| grad[i].total_cmp(&grad[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;

        loop {
            let z = solve_passive(a, b, &passive);
            if (0..n).filter(|&i| passive[i]).all(|i| z[i] > 0.0) {
                x = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            for i in 0..n {
                if passive[i] && z[i] <= 0.0 {
                    alpha = alpha.min(x[i] / (x[i] - z[i]));
                }
            }
            x += (z - &x) * alpha;
            for i in 0..n {
                if passive[i] && x[i] <= 1e-15 * scale {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    x
}

fn solve_passive(a: &DataMatrix, b: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let idx: Vec<usize> = (0..passive.len()).filter(|&i| passive[i]).collect();
    let sub = DMatrix::from_fn(a.nrows(), idx.len(), |r, c| a[(r, idx[c])]);
    let sol = pinv(&sub).map(|p| p * b).unwrap_or_else(|_| DVector::zeros(idx.len()));
    let mut z = DVector::zeros(passive.len());
    for (k, &i) in idx.iter().enumerate() {
        z[i] = sol[k];
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::gaussian_matrix;

    #[test]
    fn matches_unconstrained_when_interior() {
        let a = DMatrix::identity(3, 3);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!((nnls(&a, &b) - &b).norm() < 1e-12);
        let b = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        assert!((nnls(&a, &b) - DVector::from_vec(vec![1.0, 0.0, 3.0])).norm() < 1e-12);
    }

    #[test]
    fn kkt_conditions_hold() {
        for seed in 0..20 {
            let a = gaussian_matrix(6, 4, seed);
            let b = gaussian_matrix(6, 1, seed + 100).column(0).into_owned();
            let x = nnls(&a, &b);
            let grad = a.transpose() * (&b - &a * &x);
            for j in 0..4 {
                assert!(x[j] >= 0.0);
                assert!(grad[j] <= 1e-9);
                if x[j] > 0.0 {
                    assert!(grad[j].abs() <= 1e-9);
                }
            }
        }
    }
}
