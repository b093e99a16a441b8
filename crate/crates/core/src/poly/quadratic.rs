use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{BlockLayout, BlockPolynomial, PolyResult};
use crate::scalar::Coefficient;

/// `psi(f) = -i<m,f> + 1/2 <Rf,f>`, the negative log characteristic
/// functional of a Gaussian with mean `m` and covariance `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticExponent {
    /// `-i m`
    pub linear: Vec<Complex64>,
    /// `R / 2`, symmetric
    pub quad: DMatrix<f64>,
}

impl QuadraticExponent {
    pub fn from_gaussian(mean: &[f64], cov: &DMatrix<f64>) -> Self {
        assert_eq!(cov.nrows(), mean.len());
        Self {
            linear: mean.iter().map(|&m| Complex64::new(0.0, -m)).collect(),
            quad: (cov + cov.transpose()) * 0.25,
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn eval(&self, f: &[f64]) -> Complex64 {
        let v = DVector::from_column_slice(f);
        let lin: Complex64 = self.linear.iter().zip(f).map(|(a, &x)| a * x).sum();
        lin + Complex64::from(v.dot(&(&self.quad * &v)))
    }

    /// Embeds the exponent as a degree-2 polynomial in block `block` of `layout`.
    ///
    /// Returns `None` when the coefficient ring cannot hold the (imaginary)
    /// linear part.
    pub fn to_poly<C: Coefficient>(
        &self,
        layout: &BlockLayout,
        block: usize,
    ) -> Option<PolyResult<BlockPolynomial<C>>> {
        let d = self.dim();
        assert_eq!(layout.dim(), d);
        let mut terms = Vec::new();
        for (i, a) in self.linear.iter().enumerate() {
            let mut e = vec![0u8; layout.nvars()];
            e[layout.var(block, i)] = 1;
            terms.push((e, C::from_complex(*a)?));
        }
        for i in 0..d {
            for j in i..d {
                let c = if i == j {
                    self.quad[(i, i)]
                } else {
                    self.quad[(i, j)] + self.quad[(j, i)]
                };
                let mut e = vec![0u8; layout.nvars()];
                e[layout.var(block, i)] += 1;
                e[layout.var(block, j)] += 1;
                terms.push((e, C::from_f64(c)));
            }
        }
        Some(BlockPolynomial::from_terms(layout, terms))
    }
}
