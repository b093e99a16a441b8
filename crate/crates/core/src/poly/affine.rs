use super::{BlockLayout, BlockPolynomial, CoeffMatrix, PolyError, PolyResult};
use crate::scalar::Coefficient;

/// Affine substitution of every source variable by a degree-one polynomial in
/// the target layout.
#[derive(Clone)]
pub struct AffineMap<C> {
    source: BlockLayout,
    target: BlockLayout,
    images: Vec<BlockPolynomial<C>>,
}

impl<C: Coefficient> std::fmt::Debug for AffineMap<C> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AffineMap")
            .field("source", &self.source.names())
            .field("target", &self.target.names())
            .field("images", &self.images)
            .finish()
    }
}

impl<C: Coefficient> AffineMap<C> {
    /// Map sending every source variable to zero.
    pub fn zero(source: &BlockLayout, target: &BlockLayout) -> Self {
        assert_eq!(source.dim(), target.dim(), "block dimensions must agree");
        Self {
            source: source.clone(),
            target: target.clone(),
            images: vec![BlockPolynomial::zero(target); source.nvars()],
        }
    }

    /// Identity on a layout.
    pub fn identity(layout: &BlockLayout) -> Self {
        let mut m = Self::zero(layout, layout);
        for b in 0..layout.blocks() {
            m.add_block(b, b, &CoeffMatrix::identity(layout.dim()));
        }
        m
    }

    /// Translation `x -> x + shift` on a flat variable vector.
    pub fn translation(layout: &BlockLayout, shift: &[C]) -> Self {
        assert_eq!(shift.len(), layout.nvars());
        let mut m = Self::identity(layout);
        for (v, s) in shift.iter().enumerate() {
            let c = BlockPolynomial::constant(layout, s.clone());
            m.images[v] = &m.images[v] + &c;
        }
        m
    }

    /// Adds `matrix * target_block` to the image of `source_block`.
    pub fn add_block(
        &mut self,
        source_block: usize,
        target_block: usize,
        matrix: &CoeffMatrix<C>,
    ) -> &mut Self {
        let d = self.source.dim();
        assert_eq!(matrix.dim(), d);
        for i in 0..d {
            let row: Vec<C> = (0..d).map(|j| matrix.get(i, j).clone()).collect();
            let lin = BlockPolynomial::linear(&self.target, target_block, &row);
            let v = self.source.var(source_block, i);
            self.images[v] = &self.images[v] + &lin;
        }
        self
    }

    /// Adds a constant vector to the image of `source_block`.
    pub fn add_offset(&mut self, source_block: usize, offset: &[C]) -> &mut Self {
        assert_eq!(offset.len(), self.source.dim());
        for (i, o) in offset.iter().enumerate() {
            let v = self.source.var(source_block, i);
            let c = BlockPolynomial::constant(&self.target, o.clone());
            self.images[v] = &self.images[v] + &c;
        }
        self
    }

    pub fn source(&self) -> &BlockLayout {
        &self.source
    }

    pub fn target(&self) -> &BlockLayout {
        &self.target
    }

    /// Substitutes the map into `p`, producing a polynomial on the target layout.
    pub fn apply(&self, p: &BlockPolynomial<C>) -> PolyResult<BlockPolynomial<C>> {
        if p.layout() != &self.source {
            return Err(PolyError::Layout(format!(
                "polynomial on {:?}, map expects {:?}",
                p.layout().names(),
                self.source.names()
            )));
        }
        let max_exp: Vec<u8> = (0..self.source.nvars())
            .map(|v| p.terms().map(|(m, _)| m.exponents()[v]).max().unwrap_or(0))
            .collect();
        let mut powers: Vec<Vec<BlockPolynomial<C>>> = Vec::with_capacity(max_exp.len());
        for (v, &e) in max_exp.iter().enumerate() {
            let mut pw = vec![BlockPolynomial::constant(&self.target, C::one())];
            for k in 1..=e as usize {
                let next = pw[k - 1].checked_mul(&self.images[v])?;
                pw.push(next);
            }
            powers.push(pw);
        }
        let mut out = BlockPolynomial::zero(&self.target);
        for (m, c) in p.terms() {
            let mut term = BlockPolynomial::constant(&self.target, c.clone());
            for (v, &e) in m.exponents().iter().enumerate() {
                if e > 0 {
                    term = term.checked_mul(&powers[v][e as usize])?;
                }
            }
            out = &out + &term;
        }
        Ok(out)
    }
}

impl<C: Coefficient> BlockPolynomial<C> {
    /// Forward difference `p(x + shift) - p(x)` for a flat shift vector.
    pub fn delta(&self, shift: &[C]) -> PolyResult<Self> {
        let shifted = AffineMap::translation(self.layout(), shift).apply(self)?;
        Ok(&shifted - self)
    }

    /// Forward difference with one shift vector per block.
    pub fn delta_blocks(&self, shifts: &[Vec<C>]) -> PolyResult<Self> {
        let flat = self.layout().flatten(shifts);
        self.delta(&flat)
    }

    /// `order`-fold forward difference along a single shift.
    pub fn delta_pow(&self, shift: &[C], order: u32) -> PolyResult<Self> {
        let mut p = self.clone();
        for _ in 0..order {
            if p.is_zero() {
                break;
            }
            p = p.delta(shift)?;
        }
        Ok(p)
    }

    pub fn compose(&self, map: &AffineMap<C>) -> PolyResult<Self> {
        map.apply(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;
    use proptest::prelude::*;

    fn q(x: f64) -> BigRational {
        <BigRational as Coefficient>::from_f64(x)
    }

    #[test]
    fn delta_of_square() {
        let l = BlockLayout::single("f", 1);
        let f = BlockPolynomial::<BigRational>::var(&l, 0, 0);
        let sq = f.checked_mul(&f).unwrap();
        // (f+h)^2 - f^2 = 2hf + h^2
        let d = sq.delta(&[q(3.0)]).unwrap();
        let expect = &f.scale(&q(6.0)) + &BlockPolynomial::constant(&l, q(9.0));
        assert_eq!(d, expect);
        assert!(sq.delta_pow(&[q(3.0)], 3).unwrap().is_zero());
    }

    #[test]
    fn composition_with_block_matrices() {
        let src = BlockLayout::single("y", 1);
        let tgt = BlockLayout::new(["f", "g"], 1);
        let y = BlockPolynomial::<f64>::var(&src, 0, 0);
        let p = y.checked_mul(&y).unwrap();
        let mut m = AffineMap::zero(&src, &tgt);
        m.add_block(0, 0, &CoeffMatrix::identity(1))
            .add_block(0, 1, &CoeffMatrix::scalar(1, 2.0));
        let out = p.compose(&m).unwrap();
        // (f + 2g)^2 evaluated at (1, 1) = 9
        assert!((out.eval(&[1.0, 1.0]) - 9.0).abs() < 1e-12);
        assert_eq!(out.total_degree(), 2);
    }

    proptest! {
        #[test]
        fn delta_lowers_degree(
            coeffs in proptest::collection::vec(-5i32..5, 1..6),
            h in 1i32..4,
        ) {
            let l = BlockLayout::single("y", 1);
            let terms = coeffs.iter().enumerate().map(|(k, &c)| (vec![k as u8], q(c as f64)));
            let p = BlockPolynomial::from_terms(&l, terms).unwrap();
            let d = p.delta(&[q(h as f64)]).unwrap();
            if p.total_degree() >= 1 {
                prop_assert!(d.is_zero() || d.total_degree() < p.total_degree());
            } else {
                prop_assert!(d.is_zero());
            }
            prop_assert!(p.delta_pow(&[q(h as f64)], p.total_degree() + 1).unwrap().is_zero());
        }

        #[test]
        fn delta_commutes(a in -3i32..3, b in -3i32..3, c in -3i32..3) {
            let l = BlockLayout::new(["f", "g"], 1);
            let f = BlockPolynomial::<BigRational>::var(&l, 0, 0);
            let g = BlockPolynomial::<BigRational>::var(&l, 1, 0);
            let p = &f.checked_mul(&g).unwrap().checked_mul(&f).unwrap() + &g.scale(&q(c as f64));
            let h1 = [q(a as f64), q(1.0)];
            let h2 = [q(2.0), q(b as f64)];
            let x = p.delta(&h1).unwrap().delta(&h2).unwrap();
            let y = p.delta(&h2).unwrap().delta(&h1).unwrap();
            prop_assert_eq!(x, y);
        }
    }
}
