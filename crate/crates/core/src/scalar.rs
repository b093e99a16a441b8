//! Scalar abstractions shared by the operator model and the polynomial algebra.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_complex::{Complex, Complex64};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Real floating-point scalars usable for operator matrices (f32 or f64).
pub trait Real: nalgebra::RealField + num_traits::Float + Copy {}

impl Real for f32 {}
impl Real for f64 {}

/// Magnitude below which floating-point coefficients are treated as zero.
pub const CANONICAL_THRESHOLD: f64 = 1e-12;

/// Coefficient ring of a block polynomial.
///
/// Floating types canonicalize coefficients whose magnitude is at most
/// [`CANONICAL_THRESHOLD`]; exact types only drop true zeros.
pub trait Coefficient:
    Clone
    + PartialEq
    + fmt::Debug
    + Send
    + Sync
    + 'static
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
{
    const EXACT: bool;

    fn is_negligible(&self) -> bool;

    fn magnitude(&self) -> f64;

    fn from_f64(x: f64) -> Self;

    /// Lifts a complex value; real-only rings reject a nonzero imaginary part.
    fn from_complex(z: Complex64) -> Option<Self>;

    fn to_complex64(&self) -> Complex64;

    fn write_coeff(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result;
}

/// Coefficients supporting division (needed for operator inverses).
pub trait FieldCoefficient: Coefficient + Div<Output = Self> {}

impl<T> FieldCoefficient for T where T: Coefficient + Div<Output = T> {}

fn write_real(x: f64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    write!(f, "{x:?}")
}

impl Coefficient for f64 {
    const EXACT: bool = false;

    fn is_negligible(&self) -> bool {
        self.abs() <= CANONICAL_THRESHOLD
    }

    fn magnitude(&self) -> f64 {
        self.abs()
    }

    fn from_f64(x: f64) -> Self {
        x
    }

    fn from_complex(z: Complex64) -> Option<Self> {
        (z.im == 0.0).then_some(z.re)
    }

    fn to_complex64(&self) -> Complex64 {
        Complex64::new(*self, 0.0)
    }

    fn write_coeff(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_real(*self, f)
    }
}

impl Coefficient for Complex64 {
    const EXACT: bool = false;

    fn is_negligible(&self) -> bool {
        self.norm() <= CANONICAL_THRESHOLD
    }

    fn magnitude(&self) -> f64 {
        self.norm()
    }

    fn from_f64(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }

    fn from_complex(z: Complex64) -> Option<Self> {
        Some(z)
    }

    fn to_complex64(&self) -> Complex64 {
        *self
    }

    fn write_coeff(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.im.abs() <= CANONICAL_THRESHOLD {
            write_real(self.re, f)
        } else if self.re.abs() <= CANONICAL_THRESHOLD {
            write!(f, "{:?}i", self.im)
        } else {
            write!(f, "({:?}{:+?}i)", self.re, self.im)
        }
    }
}

fn rational_from_f64(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap_or_else(|| panic!("cannot represent {x} exactly"))
}

impl Coefficient for BigRational {
    const EXACT: bool = true;

    fn is_negligible(&self) -> bool {
        self.is_zero()
    }

    fn magnitude(&self) -> f64 {
        self.abs().to_f64().unwrap_or(f64::INFINITY)
    }

    fn from_f64(x: f64) -> Self {
        rational_from_f64(x)
    }

    fn from_complex(z: Complex64) -> Option<Self> {
        (z.im == 0.0).then(|| rational_from_f64(z.re))
    }

    fn to_complex64(&self) -> Complex64 {
        Complex64::new(self.to_f64().unwrap_or(f64::NAN), 0.0)
    }

    fn write_coeff(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.denom() == &BigInt::one() {
            write!(f, "{}", self.numer())
        } else {
            write!(f, "{}/{}", self.numer(), self.denom())
        }
    }
}

impl Coefficient for Complex<BigRational> {
    const EXACT: bool = true;

    fn is_negligible(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    fn magnitude(&self) -> f64 {
        self.to_complex64().norm()
    }

    fn from_f64(x: f64) -> Self {
        Complex::new(rational_from_f64(x), BigRational::zero())
    }

    fn from_complex(z: Complex64) -> Option<Self> {
        Some(Complex::new(rational_from_f64(z.re), rational_from_f64(z.im)))
    }

    fn to_complex64(&self) -> Complex64 {
        Complex64::new(
            self.re.to_f64().unwrap_or(f64::NAN),
            self.im.to_f64().unwrap_or(f64::NAN),
        )
    }

    fn write_coeff(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.im.is_zero() {
            self.re.write_coeff(f)
        } else if self.re.is_zero() {
            self.im.write_coeff(f)?;
            f.write_str("i")
        } else {
            f.write_str("(")?;
            self.re.write_coeff(f)?;
            f.write_str(if self.im.is_negative() { "-" } else { "+" })?;
            self.im.abs().write_coeff(f)?;
            f.write_str("i)")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_rationals_round_trip_dyadics() {
        let r = BigRational::from_f64(0.375);
        assert_eq!(r.to_complex64().re, 0.375);
        assert!(!r.is_negligible());
        assert!((r.clone() - r).is_negligible());
    }

    #[test]
    fn float_threshold() {
        assert!(1e-13f64.is_negligible());
        assert!(!1e-11f64.is_negligible());
        assert!(Complex64::new(0.0, 5e-13).is_negligible());
    }

    #[test]
    fn real_rings_reject_imaginary_parts() {
        assert!(<f64 as Coefficient>::from_complex(Complex64::new(1.0, 1.0)).is_none());
        assert!(BigRational::from_complex(Complex64::new(1.0, 0.5)).is_none());
        assert!(Complex::<BigRational>::from_complex(Complex64::new(1.0, 0.5)).is_some());
    }
}
