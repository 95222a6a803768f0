use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::DataMatrix;

#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorModel {
    /// `ZW`.
    Linear(DataMatrix),
    /// `(ZW₁ + 1bᵀ)_+ W₂`.
    TwoLayerReLU {
        w1: DataMatrix,
        w2: DataMatrix,
        bias: Option<DVector<f64>>,
    },
    /// `lift(Z; a, b, c) · W`.
    TwoLayerPoly { a: f64, b: f64, c: f64, w: DataMatrix },
}

impl GeneratorModel {
    pub fn evaluate(&self, z: &DataMatrix) -> Result<DataMatrix> {
        match self {
            GeneratorModel::Linear(w) => {
                expect_rows(w, z.ncols(), "linear weight rows")?;
                Ok(z * w)
            }
            GeneratorModel::TwoLayerReLU { w1, w2, bias } => {
                expect_rows(w1, z.ncols(), "first-layer rows")?;
                expect_rows(w2, w1.ncols(), "second-layer rows")?;
                let mut pre = z * w1;
                if let Some(b) = bias {
                    if b.len() != w1.ncols() {
                        return Err(Error::dims("bias length", w1.ncols(), b.len()));
                    }
                    for mut row in pre.row_iter_mut() {
                        row += b.transpose();
                    }
                }
                Ok(pre.map(|t| t.max(0.0)) * w2)
            }
            GeneratorModel::TwoLayerPoly { a, b, c, w } => {
                let lifted = polynomial_lift(z, *a, *b, *c);
                expect_rows(w, lifted.ncols(), "lifted weight rows")?;
                Ok(lifted * w)
            }
        }
    }

    pub fn neurons(&self) -> usize {
        match self {
            GeneratorModel::Linear(_) => 0,
            GeneratorModel::TwoLayerReLU { w1, .. } => w1.ncols(),
            GeneratorModel::TwoLayerPoly { w, .. } => w.nrows(),
        }
    }
}

fn expect_rows(m: &DataMatrix, rows: usize, context: &'static str) -> Result<()> {
    if m.nrows() != rows {
        return Err(Error::dims(context, rows, m.nrows()));
    }
    Ok(())
}

/// Row `i` becomes `(a·vec(z_i z_iᵀ), b·z_i, c)`, width `d² + d + 1`.
pub fn polynomial_lift(z: &DataMatrix, a: f64, b: f64, c: f64) -> DataMatrix {
    let (n, d) = z.shape();
    let width = d * d + d + 1;
    DMatrix::from_fn(n, width, |i, j| {
        if j < d * d {
            a * z[(i, j / d)] * z[(i, j % d)]
        } else if j < d * d + d {
            b * z[(i, j - d * d)]
        } else {
            c
        }
    })
}

/// Linear weights reproducing `σ(ZW₁)W₂` for `σ(t) = at² + bt + c`:
/// neuron `j` contributes `[vec(w₁w₁ᵀ)w₂ᵀ; w₁w₂ᵀ; w₂ᵀ]`, where `w₁` is
/// column `j` of `W₁` and `w₂ᵀ` is row `j` of `W₂`.
pub fn polynomial_weights(w1: &DataMatrix, w2: &DataMatrix) -> Result<DataMatrix> {
    if w1.ncols() != w2.nrows() {
        return Err(Error::dims("neurons in first vs second layer", w1.ncols(), w2.nrows()));
    }
    let d = w1.nrows();
    let k = w2.ncols();
    let mut out = DMatrix::zeros(d * d + d + 1, k);
    for j in 0..w1.ncols() {
        let u = w1.column(j);
        let v = w2.row(j);
        for col in 0..k {
            for p in 0..d {
                for q in 0..d {
                    out[(p * d + q, col)] += u[p] * u[q] * v[col];
                }
                out[(d * d + p, col)] += u[p] * v[col];
            }
            out[(d * d + d, col)] += v[col];
        }
    }
    Ok(out)
}
