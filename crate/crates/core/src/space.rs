//! The finite-dimensional model of the state space: `X = R^d` with the
//! Euclidean pairing, its dual identified with `R^d`, and the group of
//! invertible operators acting on it.

use std::fmt;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Relative singular-value tolerance for membership in the invertible group.
pub const GL_TOLERANCE: f64 = 1e-10;

/// Dimension `d >= 1` of the space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpaceDim(usize);

impl SpaceDim {
    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Precondition("dimension must be at least 1".into()));
        }
        Ok(Self(d))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

/// `<x, f> = sum_i x_i f_i`.
pub fn pairing<T: Real>(x: &[T], f: &[T]) -> Result<T> {
    if x.len() != f.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: f.len(),
        });
    }
    Ok(x.iter()
        .zip(f)
        .fold(T::zero(), |acc, (&a, &b)| acc + a * b))
}

/// A bounded linear operator on `R^d`, stored as a square matrix together with
/// its extreme singular values.
#[derive(Clone)]
pub struct LinearOp<T: Real> {
    matrix: DMatrix<T>,
    sigma_min: T,
    sigma_max: T,
    inverse: OnceLock<Option<DMatrix<T>>>,
}

impl<T: Real> fmt::Debug for LinearOp<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearOp")
            .field("matrix", &self.matrix)
            .field("sigma_min", &self.sigma_min)
            .field("sigma_max", &self.sigma_max)
            .finish()
    }
}

impl<T: Real> PartialEq for LinearOp<T> {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

impl<T: Real> LinearOp<T> {
    pub fn new(matrix: DMatrix<T>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        if matrix.nrows() == 0 {
            return Err(Error::Precondition("operator of dimension 0".into()));
        }
        if matrix.iter().any(|v| !num_traits::Float::is_finite(*v)) {
            return Err(Error::Precondition("operator has non-finite entries".into()));
        }
        let sv = matrix.clone().singular_values();
        let sigma_max = sv.iter().copied().fold(T::zero(), |a, b| if b > a { b } else { a });
        let sigma_min = sv.iter().copied().fold(sigma_max, |a, b| if b < a { b } else { a });
        Ok(Self {
            matrix,
            sigma_min,
            sigma_max,
            inverse: OnceLock::new(),
        })
    }

    /// Builds an operator from row-major data.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let d = rows.len();
        for r in rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.len(),
                });
            }
        }
        Self::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn identity(d: usize) -> Self {
        Self::new(DMatrix::identity(d, d)).expect("identity is well formed")
    }

    pub fn scalar(d: usize, c: T) -> Self {
        Self::new(DMatrix::identity(d, d) * c).expect("scaled identity is well formed")
    }

    pub fn diagonal(entries: &[T]) -> Self {
        let d = entries.len();
        Self::new(DMatrix::from_fn(d, d, |i, j| if i == j { entries[i] } else { T::zero() }))
            .expect("diagonal operator is well formed")
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.matrix[(i, j)]).collect())
            .collect()
    }

    pub fn sigma_min(&self) -> T {
        self.sigma_min
    }

    /// Condition number estimate `sigma_max / sigma_min` (infinite when singular).
    pub fn cond_estimate(&self) -> T {
        if self.sigma_min > T::zero() {
            self.sigma_max / self.sigma_min
        } else {
            <T as num_traits::Float>::infinity()
        }
    }

    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let v = &self.matrix * DVector::from_column_slice(x);
        Ok(v.iter().copied().collect())
    }

    /// The adjoint `A*`, which for the Euclidean pairing is the transpose.
    pub fn adjoint(&self) -> Self {
        Self {
            matrix: self.matrix.transpose(),
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
            inverse: OnceLock::new(),
        }
    }

    /// True iff the smallest singular value exceeds `tol` relative to the
    /// largest one. Caches the inverse on success.
    pub fn check_invertible(&self, tol: T) -> bool {
        let ok = self.sigma_max > T::zero() && self.sigma_min > tol * self.sigma_max;
        if ok {
            self.inverse.get_or_init(|| self.matrix.clone().try_inverse());
        }
        ok
    }

    pub fn is_invertible(&self) -> bool {
        self.check_invertible(T::from_f64(GL_TOLERANCE).expect("tolerance representable"))
    }

    pub fn inverse(&self) -> Option<LinearOp<T>> {
        if !self.is_invertible() {
            return None;
        }
        let inv = self.inverse.get().cloned().flatten()?;
        LinearOp::new(inv).ok()
    }

    pub fn compose(&self, other: &Self) -> Result<Self> {
        self.same_dim(other)?;
        Self::new(&self.matrix * &other.matrix)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_dim(other)?;
        Self::new(&self.matrix + &other.matrix)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_dim(other)?;
        Self::new(&self.matrix - &other.matrix)
    }

    pub fn scale(&self, c: T) -> Self {
        Self::new(&self.matrix * c).expect("scaling keeps the operator square")
    }

    /// Maximum absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        (&self.matrix - &other.matrix)
            .iter()
            .fold(T::zero(), |acc, v| {
                let a = num_traits::Float::abs(*v);
                if a > acc {
                    a
                } else {
                    acc
                }
            })
    }

    fn same_dim(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }
}

/// Which of `B_i A_i^{-1} + B_j A_j^{-1}` and `B_i A_i^{-1} - B_j A_j^{-1}` failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PairSign {
    Plus,
    Minus,
}

impl fmt::Display for PairSign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairSign::Plus => "+",
            PairSign::Minus => "-",
        })
    }
}

/// A pair `(i, j)`, `i < j` (zero-based), whose sum or difference of
/// coefficient ratios is singular.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct HeydeFailure {
    pub i: usize,
    pub j: usize,
    pub sign: PairSign,
    pub sigma_min: f64,
}

impl fmt::Display for HeydeFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "B_{i}A_{i}^-1 {s} B_{j}A_{j}^-1 is singular",
            i = self.i + 1,
            j = self.j + 1,
            s = self.sign
        )
    }
}

/// Ratios `C_j = B_j A_j^{-1}`; errors name the first singular input operator.
pub fn coefficient_ratios<T: Real>(a: &[LinearOp<T>], b: &[LinearOp<T>]) -> Result<Vec<LinearOp<T>>> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    for (name, ops) in [("A", a), ("B", b)] {
        for (idx, op) in ops.iter().enumerate() {
            if !op.is_invertible() {
                return Err(Error::NotInvertible {
                    name: format!("{name}_{}", idx + 1),
                    sigma_min: num_traits::ToPrimitive::to_f64(&op.sigma_min()).unwrap_or(f64::NAN),
                });
            }
        }
    }
    a.iter()
        .zip(b)
        .map(|(ai, bi)| bi.compose(&ai.inverse().expect("checked above")))
        .collect()
}

/// Every pair violating the invertibility of `B_i A_i^{-1} ± B_j A_j^{-1}`.
pub fn heyde_failures<T: Real>(
    a: &[LinearOp<T>],
    b: &[LinearOp<T>],
    tol: T,
) -> Result<Vec<HeydeFailure>> {
    if a.len() < 2 {
        return Err(Error::Precondition(format!(
            "at least two operators required, got {}",
            a.len()
        )));
    }
    let c = coefficient_ratios(a, b)?;
    let mut failures = Vec::new();
    for i in 0..c.len() {
        for j in (i + 1)..c.len() {
            for (sign, op) in [(PairSign::Plus, c[i].add(&c[j])?), (PairSign::Minus, c[i].sub(&c[j])?)] {
                if !op.check_invertible(tol) {
                    failures.push(HeydeFailure {
                        i,
                        j,
                        sign,
                        sigma_min: num_traits::ToPrimitive::to_f64(&op.sigma_min()).unwrap_or(f64::NAN),
                    });
                }
            }
        }
    }
    Ok(failures)
}

/// True iff all `B_i A_i^{-1} ± B_j A_j^{-1}` (`i != j`) are invertible.
pub fn check_heyde_condition<T: Real>(a: &[LinearOp<T>], b: &[LinearOp<T>], tol: T) -> Result<bool> {
    Ok(heyde_failures(a, b, tol)?.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn op(rows: &[&[f64]]) -> LinearOp<f64> {
        LinearOp::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn pairing_examples() {
        assert_eq!(pairing(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(pairing(&[0.0, 0.0], &[3.0, 7.0]).unwrap(), 0.0);
        assert_eq!(pairing(&[1.0, 2.0], &[3.0, -1.0]).unwrap(), 1.0);
        assert!(matches!(
            pairing(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn adjoint_examples() {
        let i2 = LinearOp::<f64>::identity(2);
        assert_eq!(i2.adjoint(), i2);
        let a = op(&[&[0.0, 1.0], &[0.0, 0.0]]);
        assert_eq!(a.adjoint(), op(&[&[0.0, 0.0], &[1.0, 0.0]]));
        assert_eq!(a.adjoint().adjoint().matrix(), a.matrix());
    }

    #[test]
    fn adjoint_pairs_on_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = 3;
        let a = LinearOp::new(DMatrix::from_fn(d, d, |_, _| rng.gen_range(-2.0..2.0))).unwrap();
        let at = a.adjoint();
        for _ in 0..100 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lhs = pairing(&a.apply(&x).unwrap(), &f).unwrap();
            let rhs = pairing(&x, &at.apply(&f).unwrap()).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn invertibility_examples() {
        assert!(LinearOp::<f64>::identity(3).check_invertible(1e-10));
        assert!(!LinearOp::new(DMatrix::<f64>::zeros(2, 2)).unwrap().check_invertible(1e-10));
        assert!(!op(&[&[1.0, 0.0], &[0.0, 1e-14]]).check_invertible(1e-10));
    }

    #[test]
    fn cached_inverse_is_accurate() {
        let a = op(&[&[2.0, 1.0], &[1.0, 3.0]]);
        let inv = a.inverse().unwrap();
        let prod = a.compose(&inv).unwrap();
        assert!(prod.max_abs_diff(&LinearOp::identity(2)) <= 1e-10);
    }

    #[test]
    fn heyde_scalar_cases() {
        let one = LinearOp::scalar(1, 1.0);
        let a = vec![one.clone(), one.clone()];
        let bad = vec![one.clone(), LinearOp::scalar(1, -1.0)];
        let good = vec![one.clone(), LinearOp::scalar(1, 2.0)];
        assert!(!check_heyde_condition(&a, &bad, 1e-10).unwrap());
        assert!(check_heyde_condition(&a, &good, 1e-10).unwrap());
        let f = heyde_failures(&a, &bad, 1e-10).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!((f[0].i, f[0].j, f[0].sign), (0, 1, PairSign::Plus));
    }

    #[test]
    fn heyde_equal_ratios_fail() {
        let a: Vec<_> = [1.0, 2.0, 3.0].iter().map(|&c| LinearOp::scalar(2, c)).collect();
        let mut b = a.clone();
        b[2] = LinearOp::scalar(2, 5.0);
        assert!(!check_heyde_condition(&a, &b, 1e-10).unwrap());
    }

    #[test]
    fn heyde_names_singular_input() {
        let a = vec![LinearOp::scalar(1, 1.0), LinearOp::scalar(1, 0.0)];
        let b = vec![LinearOp::scalar(1, 1.0), LinearOp::scalar(1, 2.0)];
        let err = check_heyde_condition(&a, &b, 1e-10).unwrap_err();
        assert!(err.to_string().contains("A_2"), "{err}");
    }

    #[test]
    fn works_in_single_precision() {
        let a = LinearOp::<f32>::from_rows(&[vec![2.0, 0.0], vec![0.0, 4.0]]).unwrap();
        assert!(a.is_invertible());
        assert_eq!(a.apply(&[1.0, 1.0]).unwrap(), vec![2.0, 4.0]);
    }
}
