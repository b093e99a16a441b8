use std::fmt;

use crate::scalar::{Coefficient, FieldCoefficient};

/// Dense square matrix over a coefficient ring, used for exact operator
/// arithmetic inside the polynomial pipelines.
#[derive(Clone, PartialEq)]
pub struct CoeffMatrix<C> {
    dim: usize,
    data: Vec<C>,
}

impl<C: Coefficient> fmt::Debug for CoeffMatrix<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.rows()).finish()
    }
}

impl<C: Coefficient> CoeffMatrix<C> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![C::zero(); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scalar(dim, C::one())
    }

    pub fn scalar(dim: usize, c: C) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = c.clone();
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(f(i, j));
            }
        }
        Self { dim, data }
    }

    pub fn from_f64(m: &nalgebra::DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "square matrix expected");
        Self::from_fn(m.nrows(), |i, j| C::from_f64(m[(i, j)]))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> &C {
        &self.data[i * self.dim + j]
    }

    pub fn rows(&self) -> Vec<Vec<C>> {
        self.data.chunks(self.dim).map(|r| r.to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self.get(j, i).clone())
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a.clone() + b.clone())
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a.clone() - b.clone())
    }

    pub fn scale(&self, c: &C) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|a| a.clone() * c.clone()).collect(),
        }
    }

    pub fn neg(&self) -> Self {
        self.scale(&-C::one())
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        Self::from_fn(self.dim, |i, j| {
            (0..self.dim).fold(C::zero(), |acc, k| {
                acc + self.get(i, k).clone() * other.get(k, j).clone()
            })
        })
    }

    pub fn mul_vec(&self, v: &[C]) -> Vec<C> {
        assert_eq!(self.dim, v.len());
        (0..self.dim)
            .map(|i| {
                (0..self.dim).fold(C::zero(), |acc, k| acc + self.get(i, k).clone() * v[k].clone())
            })
            .collect()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.data.iter().map(C::magnitude).fold(0.0, f64::max)
    }

    fn zip(&self, other: &Self, f: impl Fn(&C, &C) -> C) -> Self {
        assert_eq!(self.dim, other.dim);
        Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(a, b)).collect(),
        }
    }
}

impl<C: FieldCoefficient> CoeffMatrix<C> {
    /// Gauss-Jordan inverse with largest-magnitude pivoting; `None` if a pivot
    /// is negligible.
    pub fn inverse(&self) -> Option<Self> {
        let n = self.dim;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        for col in 0..n {
            let pivot = (col..n)
                .filter(|&r| !a.get(r, col).is_negligible())
                .max_by(|&x, &y| {
                    a.get(x, col)
                        .magnitude()
                        .partial_cmp(&a.get(y, col).magnitude())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })?;
            if pivot != col {
                for k in 0..n {
                    a.data.swap(pivot * n + k, col * n + k);
                    inv.data.swap(pivot * n + k, col * n + k);
                }
            }
            let p = a.get(col, col).clone();
            for k in 0..n {
                a.data[col * n + k] = a.data[col * n + k].clone() / p.clone();
                inv.data[col * n + k] = inv.data[col * n + k].clone() / p.clone();
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = a.get(r, col).clone();
                if factor.is_negligible() {
                    continue;
                }
                for k in 0..n {
                    let av = a.get(col, k).clone() * factor.clone();
                    let iv = inv.get(col, k).clone() * factor.clone();
                    a.data[r * n + k] = a.data[r * n + k].clone() - av;
                    inv.data[r * n + k] = inv.data[r * n + k].clone() - iv;
                }
            }
        }
        Some(inv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;

    #[test]
    fn exact_inverse() {
        let m = CoeffMatrix::<BigRational>::from_fn(2, |i, j| {
            BigRational::from_f64([[2.0, 1.0], [1.0, 3.0]][i][j])
        });
        let inv = m.inverse().unwrap();
        assert_eq!(m.mul(&inv), CoeffMatrix::identity(2));
    }

    #[test]
    fn singular_has_no_inverse() {
        let m = CoeffMatrix::<f64>::from_fn(2, |_, _| 1.0);
        assert!(m.inverse().is_none());
    }
}
