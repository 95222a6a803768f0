//! Deterministic random streams.
//!
//! Every draw is keyed by `(seed, stream)` so sampled quantities do not
//! depend on how work is split across threads.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream(seed, 0);
    // Row-major fill so a prefix of rows is stable when more rows are requested.
    DMatrix::from_row_iterator(rows, cols, (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// The `index`-th uniformly distributed unit direction in `dim` dimensions.
pub fn unit_direction(dim: usize, seed: u64, index: u64) -> DVector<f64> {
    let mut rng = stream(seed, index);
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with sign fix).
pub fn random_orthogonal(n: usize, seed: u64) -> DMatrix<f64> {
    let g = gaussian_matrix(n, n, seed);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}
