//! Characteristic-functional laboratory: exact and Monte-Carlo checks of
//! Gaussian characterizations through Q-independence.

pub mod charfn;
pub mod config;
pub mod dist;
pub mod elimination;
pub mod error;
pub mod poly;
pub mod qindep;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod space;
pub mod theorems;
pub mod verify;

pub use error::{Error, Result};

use num_complex::{Complex, Complex64};
use num_rational::BigRational;

/// Real `d x d` operator with `f64` entries.
pub type Operator = space::LinearOp<f64>;
/// Polynomial with complex double coefficients.
pub type Poly = poly::BlockPolynomial<Complex64>;
/// Polynomial with exact complex-rational coefficients.
pub type ExactPoly = poly::BlockPolynomial<Complex<BigRational>>;
