//! Polynomial algebra over named blocks of dual variables.
//!
//! A [`BlockPolynomial`] lives on a [`BlockLayout`]: an ordered list of block
//! names (`f`, `g`, `g1`, ...) each carrying `d` coordinates. Terms are kept in
//! canonical form (graded lexicographic order, no negligible coefficients), so
//! structural equality and [`BlockPolynomial::is_zero`] are exact decisions.

mod affine;
mod matrix;
mod quadratic;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::scalar::Coefficient;

pub use affine::AffineMap;
pub use matrix::CoeffMatrix;
pub use quadratic::QuadraticExponent;

/// Total degree allowed for any stored polynomial.
pub const MAX_DEGREE: u32 = 8;

#[derive(Debug, Error, PartialEq)]
pub enum PolyError {
    #[error("total degree {0} exceeds the cap of {MAX_DEGREE}")]
    DegreeCap(u32),
    #[error("layout mismatch: {0}")]
    Layout(String),
}

pub type PolyResult<T> = Result<T, PolyError>;

/// Names and coordinate dimension of the variable blocks.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BlockLayout {
    names: Vec<String>,
    dim: usize,
}

impl BlockLayout {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>, dim: usize) -> Self {
        assert!(dim >= 1, "block dimension must be positive");
        Self {
            names: names.into_iter().map(Into::into).collect(),
            dim,
        }
    }

    pub fn single(name: &str, dim: usize) -> Self {
        Self::new([name], dim)
    }

    pub fn blocks(&self) -> usize {
        self.names.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn nvars(&self) -> usize {
        self.names.len() * self.dim
    }

    pub fn var(&self, block: usize, coord: usize) -> usize {
        block * self.dim + coord
    }

    pub fn block_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn var_name(&self, var: usize) -> String {
        let name = &self.names[var / self.dim];
        let coord = var % self.dim + 1;
        if name.ends_with(|c: char| c.is_ascii_digit()) {
            format!("{name}_{coord}")
        } else {
            format!("{name}{coord}")
        }
    }

    /// Flattens per-block vectors into a point of the full variable space.
    pub fn flatten<C: Clone>(&self, blocks: &[Vec<C>]) -> Vec<C> {
        assert_eq!(blocks.len(), self.blocks());
        blocks
            .iter()
            .flat_map(|b| {
                assert_eq!(b.len(), self.dim);
                b.iter().cloned()
            })
            .collect()
    }
}

/// Exponent vector with graded lexicographic ordering.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Monomial(Box<[u8]>);

impl Monomial {
    pub fn one(nvars: usize) -> Self {
        Self(vec![0; nvars].into_boxed_slice())
    }

    pub fn from_exponents(exps: Vec<u8>) -> Self {
        Self(exps.into_boxed_slice())
    }

    pub fn exponents(&self) -> &[u8] {
        &self.0
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|&e| e as u32).sum()
    }

    fn product(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(other.0.iter()).map(|(a, b)| a + b).collect())
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, PartialEq)]
pub struct BlockPolynomial<C> {
    layout: BlockLayout,
    terms: BTreeMap<Monomial, C>,
}

impl<C: Coefficient> fmt::Debug for BlockPolynomial<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BlockPolynomial[{:?}]({self})", self.layout.names)
    }
}

impl<C: Coefficient> BlockPolynomial<C> {
    pub fn zero(layout: &BlockLayout) -> Self {
        Self {
            layout: layout.clone(),
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(layout: &BlockLayout, c: C) -> Self {
        let mut p = Self::zero(layout);
        p.add_term(Monomial::one(layout.nvars()), c);
        p
    }

    pub fn var(layout: &BlockLayout, block: usize, coord: usize) -> Self {
        let mut exps = vec![0u8; layout.nvars()];
        exps[layout.var(block, coord)] = 1;
        let mut p = Self::zero(layout);
        p.add_term(Monomial::from_exponents(exps), C::one());
        p
    }

    /// Linear form `sum_i coeffs[i] * block_i`.
    pub fn linear(layout: &BlockLayout, block: usize, coeffs: &[C]) -> Self {
        assert_eq!(coeffs.len(), layout.dim());
        let mut p = Self::zero(layout);
        for (i, c) in coeffs.iter().enumerate() {
            let mut exps = vec![0u8; layout.nvars()];
            exps[layout.var(block, i)] = 1;
            p.add_term(Monomial::from_exponents(exps), c.clone());
        }
        p
    }

    pub fn from_terms(
        layout: &BlockLayout,
        terms: impl IntoIterator<Item = (Vec<u8>, C)>,
    ) -> PolyResult<Self> {
        let mut p = Self::zero(layout);
        for (exps, c) in terms {
            if exps.len() != layout.nvars() {
                return Err(PolyError::Layout(format!(
                    "monomial has {} exponents, layout has {} variables",
                    exps.len(),
                    layout.nvars()
                )));
            }
            let m = Monomial::from_exponents(exps);
            if m.degree() > MAX_DEGREE {
                return Err(PolyError::DegreeCap(m.degree()));
            }
            p.add_term(m, c);
        }
        Ok(p)
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &C)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coefficient(&self, exps: &[u8]) -> C {
        self.terms
            .get(&Monomial::from_exponents(exps.to_vec()))
            .cloned()
            .unwrap_or_else(C::zero)
    }

    pub fn constant_term(&self) -> C {
        self.coefficient(&vec![0; self.layout.nvars()])
    }

    /// Total degree; the zero polynomial reports 0.
    pub fn total_degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Canonical zero test (every stored coefficient is non-negligible).
    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Zero test with an explicit absolute tolerance on coefficient magnitudes.
    pub fn is_zero_within(&self, tol: f64) -> bool {
        self.max_coefficient() <= tol
    }

    pub fn max_coefficient(&self) -> f64 {
        self.terms.values().map(C::magnitude).fold(0.0, f64::max)
    }

    /// Homogeneous part of the highest total degree.
    pub fn leading_form(&self) -> Self {
        let top = self.total_degree();
        Self {
            layout: self.layout.clone(),
            terms: self
                .terms
                .iter()
                .filter(|(m, _)| m.degree() == top)
                .map(|(m, c)| (m.clone(), c.clone()))
                .collect(),
        }
    }

    pub fn eval(&self, point: &[C]) -> C {
        assert_eq!(point.len(), self.layout.nvars());
        self.terms.iter().fold(C::zero(), |acc, (m, c)| {
            let mut v = c.clone();
            for (x, &e) in point.iter().zip(m.exponents()) {
                for _ in 0..e {
                    v = v * x.clone();
                }
            }
            acc + v
        })
    }

    pub fn scale(&self, c: &C) -> Self {
        let mut p = Self::zero(&self.layout);
        for (m, v) in &self.terms {
            p.add_term(m.clone(), v.clone() * c.clone());
        }
        p
    }

    pub fn checked_mul(&self, other: &Self) -> PolyResult<Self> {
        self.check_layout(other)?;
        let degree = self.total_degree() + other.total_degree();
        if !self.is_zero() && !other.is_zero() && degree > MAX_DEGREE {
            return Err(PolyError::DegreeCap(degree));
        }
        let mut p = Self::zero(&self.layout);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                p.add_term(ma.product(mb), ca.clone() * cb.clone());
            }
        }
        Ok(p)
    }

    pub fn checked_pow(&self, e: u32) -> PolyResult<Self> {
        let mut acc = Self::constant(&self.layout, C::one());
        for _ in 0..e {
            acc = acc.checked_mul(self)?;
        }
        Ok(acc)
    }

    /// Re-labels a polynomial onto a layout with the same variable count.
    pub fn relabel(&self, layout: &BlockLayout) -> PolyResult<Self> {
        if layout.nvars() != self.layout.nvars() {
            return Err(PolyError::Layout("variable counts differ".into()));
        }
        Ok(Self {
            layout: layout.clone(),
            terms: self.terms.clone(),
        })
    }

    fn add_term(&mut self, m: Monomial, c: C) {
        use std::collections::btree_map::Entry;
        match self.terms.entry(m) {
            Entry::Vacant(v) => {
                if !c.is_negligible() {
                    v.insert(c);
                }
            }
            Entry::Occupied(mut o) => {
                let sum = o.get().clone() + c;
                if sum.is_negligible() {
                    o.remove();
                } else {
                    *o.get_mut() = sum;
                }
            }
        }
    }

    fn check_layout(&self, other: &Self) -> PolyResult<()> {
        if self.layout != other.layout {
            return Err(PolyError::Layout(format!(
                "{:?} vs {:?}",
                self.layout.names, other.layout.names
            )));
        }
        Ok(())
    }

    pub fn checked_add(&self, other: &Self) -> PolyResult<Self> {
        self.check_layout(other)?;
        let mut p = self.clone();
        for (m, c) in &other.terms {
            p.add_term(m.clone(), c.clone());
        }
        Ok(p)
    }

    pub fn checked_sub(&self, other: &Self) -> PolyResult<Self> {
        self.checked_add(&-other)
    }
}

impl<C: Coefficient> std::ops::Neg for &BlockPolynomial<C> {
    type Output = BlockPolynomial<C>;

    fn neg(self) -> BlockPolynomial<C> {
        self.scale(&-C::one())
    }
}

/// Sum of polynomials on a shared layout.
///
/// # Panics
///
/// Panics on a layout mismatch; use [`BlockPolynomial::checked_add`] when the
/// layouts are not known to agree.
impl<C: Coefficient> std::ops::Add for &BlockPolynomial<C> {
    type Output = BlockPolynomial<C>;

    fn add(self, rhs: Self) -> BlockPolynomial<C> {
        self.checked_add(rhs).expect("layouts must agree")
    }
}

impl<C: Coefficient> std::ops::Sub for &BlockPolynomial<C> {
    type Output = BlockPolynomial<C>;

    fn sub(self, rhs: Self) -> BlockPolynomial<C> {
        self.checked_sub(rhs).expect("layouts must agree")
    }
}

impl<C: Coefficient> fmt::Display for BlockPolynomial<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (idx, (m, c)) in self.terms.iter().rev().enumerate() {
            let coeff = CoeffDisplay(c).to_string();
            match (idx, coeff.strip_prefix('-')) {
                (0, _) => f.write_str(&coeff)?,
                (_, Some(rest)) => write!(f, " - {rest}")?,
                (_, None) => write!(f, " + {coeff}")?,
            }
            for (var, &e) in m.exponents().iter().enumerate() {
                match e {
                    0 => {}
                    1 => write!(f, "*{}", self.layout.var_name(var))?,
                    _ => write!(f, "*{}^{e}", self.layout.var_name(var))?,
                }
            }
        }
        Ok(())
    }
}

struct CoeffDisplay<'a, C>(&'a C);

impl<C: Coefficient> fmt::Display for CoeffDisplay<'_, C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.write_coeff(f)
    }
}
