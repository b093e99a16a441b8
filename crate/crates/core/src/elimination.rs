//! Finite-difference elimination replays.
//!
//! A functional equation `sum_t w_t F_t(M_t x) = 0` is held symbolically: each
//! term records its unknown function, the linear map feeding it and the
//! differences applied so far. Substituting `x + s` and subtracting the
//! previous equation appends the shift `M_t s` to every term; a term whose new
//! shift is zero drops out, which is how unknown functions are eliminated.
//! The unknowns are concrete polynomials here, so every intermediate equation
//! can be checked to vanish identically.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::poly::{AffineMap, BlockLayout, BlockPolynomial, CoeffMatrix};
use crate::scalar::{Coefficient, FieldCoefficient};

/// Largest coefficient magnitude accepted as an exact zero.
pub const IDENTITY_TOL: f64 = 1e-10;

/// Outcome of one stage of a replay.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: String,
    pub description: String,
    /// Largest coefficient of the stage identity (plus any shift-formula mismatch).
    pub residual: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub eliminated: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EliminationReport {
    pub pipeline: String,
    /// The `l` used in the exponents (degree bound of `r`).
    pub l: u32,
    pub stages: Vec<StageReport>,
}

impl EliminationReport {
    pub fn passed(&self) -> bool {
        self.stages.iter().all(|s| s.passed)
    }

    pub fn first_failure(&self) -> Option<&StageReport> {
        self.stages.iter().find(|s| !s.passed)
    }

    pub fn max_residual(&self) -> f64 {
        self.stages.iter().map(|s| s.residual).fold(0.0, f64::max)
    }
}

/// Replay settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOptions {
    /// Degree bound `l` of `r`; defaults to its actual degree.
    pub l: Option<u32>,
    pub tol: f64,
    /// Flip the sign of one term when this stage is reached (test hook).
    pub fault: Option<String>,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self {
            l: None,
            tol: IDENTITY_TOL,
            fault: None,
        }
    }
}

/// One term `w * Delta_{s_1} ... Delta_{s_p} F(M x)`.
#[derive(Clone)]
struct Term<C> {
    weight: C,
    func: usize,
    /// `(function block, equation block, matrix)`: function block `b` receives
    /// the sum of `matrix * x_e` over its entries.
    map: Vec<(usize, usize, CoeffMatrix<C>)>,
    shifts: Vec<Vec<C>>,
}

struct Unknown<C> {
    name: String,
    poly: BlockPolynomial<C>,
}

struct FunctionalEquation<C> {
    layout: BlockLayout,
    funcs: Vec<Unknown<C>>,
    terms: Vec<Term<C>>,
}

fn is_zero_vec<C: Coefficient>(v: &[C]) -> bool {
    v.iter().all(Coefficient::is_negligible)
}

fn neg_vec<C: Coefficient>(a: &[C]) -> Vec<C> {
    a.iter().map(|x| -x.clone()).collect()
}

fn vec_gap<C: Coefficient>(a: &[C], b: &[C]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.clone() - y.clone()).magnitude())
        .fold(0.0, f64::max)
}

fn inverse_of<C: FieldCoefficient>(m: &CoeffMatrix<C>, name: &str) -> Result<CoeffMatrix<C>> {
    m.inverse().ok_or_else(|| Error::NotInvertible {
        name: name.to_string(),
        sigma_min: 0.0,
    })
}

impl<C: FieldCoefficient> FunctionalEquation<C> {
    fn new(layout: BlockLayout) -> Self {
        Self {
            layout,
            funcs: Vec::new(),
            terms: Vec::new(),
        }
    }

    fn add_unknown(&mut self, name: impl Into<String>, poly: BlockPolynomial<C>) -> usize {
        self.funcs.push(Unknown {
            name: name.into(),
            poly,
        });
        self.funcs.len() - 1
    }

    fn add_term(&mut self, weight: C, func: usize, map: Vec<(usize, usize, CoeffMatrix<C>)>) {
        self.terms.push(Term {
            weight,
            func,
            map,
            shifts: Vec::new(),
        });
    }

    fn dim(&self) -> usize {
        self.layout.dim()
    }

    /// Shift seen by a term's function when the equation variables move by
    /// `shift` (one vector per equation block).
    fn term_shift(&self, t: &Term<C>, shift: &[Vec<C>]) -> Vec<C> {
        let fl = self.funcs[t.func].poly.layout();
        let d = self.dim();
        let mut out = vec![C::zero(); fl.nvars()];
        for (b, e, m) in &t.map {
            let v = m.mul_vec(&shift[*e]);
            for i in 0..d {
                let slot = &mut out[b * d + i];
                *slot = slot.clone() + v[i].clone();
            }
        }
        out
    }

    /// Substitutes `x + shift` and subtracts the current equation. Returns the
    /// names of the terms that dropped out.
    fn difference(&mut self, shift: &[Vec<C>]) -> Vec<String> {
        assert_eq!(shift.len(), self.layout.blocks());
        let mut gone = Vec::new();
        let terms = std::mem::take(&mut self.terms);
        for mut t in terms {
            let s = self.term_shift(&t, shift);
            if is_zero_vec(&s) {
                gone.push(self.funcs[t.func].name.clone());
            } else {
                t.shifts.push(s);
                self.terms.push(t);
            }
        }
        gone
    }

    /// Restricts the equation to `x_block = 0`.
    fn set_block_zero(&mut self, block: usize) {
        let names: Vec<String> = self
            .layout
            .names()
            .iter()
            .enumerate()
            .filter(|(b, _)| *b != block)
            .map(|(_, n)| n.clone())
            .collect();
        self.layout = BlockLayout::new(names, self.dim());
        for t in &mut self.terms {
            t.map.retain(|(_, e, _)| *e != block);
            for (_, e, _) in &mut t.map {
                if *e > block {
                    *e -= 1;
                }
            }
        }
    }

    fn term_poly(&self, t: &Term<C>) -> Result<BlockPolynomial<C>> {
        let mut p = self.funcs[t.func].poly.clone();
        for s in &t.shifts {
            if p.is_zero() {
                break;
            }
            p = p.delta(s)?;
        }
        let mut map = AffineMap::zero(p.layout(), &self.layout);
        for (b, e, m) in &t.map {
            map.add_block(*b, *e, m);
        }
        Ok(p.compose(&map)?.scale(&t.weight))
    }

    fn residual(&self) -> Result<BlockPolynomial<C>> {
        let mut acc = BlockPolynomial::zero(&self.layout);
        for t in &self.terms {
            acc = &acc + &self.term_poly(t)?;
        }
        Ok(acc)
    }

    fn has(&self, name: &str) -> bool {
        self.terms.iter().any(|t| self.funcs[t.func].name == name)
    }

    /// Last shift of the (single) term of function `name`.
    fn last_shift(&self, name: &str) -> Option<&Vec<C>> {
        self.terms
            .iter()
            .find(|t| self.funcs[t.func].name == name)
            .and_then(|t| t.shifts.last())
    }
}

/// Seeded source of small exact shift vectors.
pub struct ShiftSource {
    rng: rand_chacha::ChaCha8Rng,
}

impl ShiftSource {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: crate::rng::stream(seed, &[crate::rng::purpose::SHIFTS]),
        }
    }

    /// Nonzero vector with entries in `{-2, -3/2, ..., 2}`.
    pub fn vector<C: Coefficient>(&mut self, d: usize) -> Vec<C> {
        use rand::Rng;
        loop {
            let v: Vec<i32> = (0..d).map(|_| self.rng.gen_range(-4..=4)).collect();
            if v.iter().any(|x| *x != 0) {
                return v.into_iter().map(|x| C::from_f64(x as f64 / 2.0)).collect();
            }
        }
    }
}

struct Recorder {
    tol: f64,
    fault: Option<String>,
    stages: Vec<StageReport>,
}

impl Recorder {
    fn new(opts: &ReplayOptions) -> Self {
        Self {
            tol: opts.tol,
            fault: opts.fault.clone(),
            stages: Vec::new(),
        }
    }

    /// Flips the sign of the first term that is not identically zero. Returns
    /// `None` when the stage is not the faulted one, `Some(false)` when every
    /// term already vanishes.
    fn inject<C: FieldCoefficient>(&self, stage: &str, eq: &mut FunctionalEquation<C>) -> Result<Option<bool>> {
        if self.fault.as_deref() != Some(stage) {
            return Ok(None);
        }
        for i in 0..eq.terms.len() {
            if !eq.term_poly(&eq.terms[i])?.is_zero() {
                let t = &mut eq.terms[i];
                t.weight = -t.weight.clone();
                return Ok(Some(true));
            }
        }
        Ok(Some(false))
    }

    #[allow(clippy::too_many_arguments)]
    fn check<C: FieldCoefficient>(
        &mut self,
        stage: &str,
        description: &str,
        eq: &mut FunctionalEquation<C>,
        eliminated: Vec<String>,
        must_be_gone: &[String],
        extra: f64,
    ) -> Result<()> {
        let faulted = self.inject(stage, eq)?;
        let mut residual = eq.residual()?.max_coefficient() + extra;
        if faulted == Some(false) {
            residual += 1.0;
        }
        let lingering: Vec<&String> = must_be_gone.iter().filter(|n| eq.has(n)).collect();
        let mut notes = Vec::new();
        if !lingering.is_empty() {
            notes.push(format!("still present: {lingering:?}"));
        }
        match faulted {
            Some(true) => notes.push("sign of one term flipped by fault injection".into()),
            Some(false) => notes.push("identity perturbed by fault injection".into()),
            None => {}
        }
        self.stages.push(StageReport {
            stage: stage.to_string(),
            description: description.to_string(),
            residual,
            passed: residual <= self.tol && lingering.is_empty(),
            eliminated,
            note: (!notes.is_empty()).then(|| notes.join("; ")),
        });
        Ok(())
    }

    /// Records a closing claim `poly == 0` evaluated directly.
    fn claim<C: FieldCoefficient>(&mut self, stage: &str, description: &str, poly: &BlockPolynomial<C>) {
        let mut residual = poly.max_coefficient();
        let mut note = None;
        if self.fault.as_deref() == Some(stage) {
            residual += 1.0;
            note = Some("claim perturbed by fault injection".to_string());
        }
        self.stages.push(StageReport {
            stage: stage.to_string(),
            description: description.to_string(),
            residual,
            passed: residual <= self.tol,
            eliminated: Vec::new(),
            note,
        });
    }
}

fn x_layout(d: usize) -> BlockLayout {
    BlockLayout::single("x", d)
}

fn pair_layout(d: usize) -> BlockLayout {
    BlockLayout::new(["f", "g"], d)
}

fn check_psis<C: Coefficient>(psis: &[BlockPolynomial<C>], d: usize) -> Result<()> {
    if let Some(p) = psis.iter().find(|p| p.layout() != &x_layout(d)) {
        return Err(Error::Precondition(format!(
            "unknown functions must live on a single block of dimension {d}, got {:?}",
            p.layout().names()
        )));
    }
    Ok(())
}

/// `sum_j psi_j(M_j y)` as a polynomial on `x_layout`, with `M_j` applied to
/// the single argument block.
fn sum_composed<C: FieldCoefficient>(psis: &[BlockPolynomial<C>], ms: &[CoeffMatrix<C>]) -> Result<BlockPolynomial<C>> {
    let d = ms[0].dim();
    let l = x_layout(d);
    let mut acc = BlockPolynomial::zero(&l);
    for (p, m) in psis.iter().zip(ms) {
        let mut map = AffineMap::zero(&l, &l);
        map.add_block(0, 0, m);
        acc = &acc + &p.compose(&map)?;
    }
    Ok(acc)
}

/// `sum_j psi_j(sum_b M_{j,b} x_b)` on `layout`.
fn combine<C: FieldCoefficient>(
    layout: &BlockLayout,
    psi: &BlockPolynomial<C>,
    parts: &[(usize, CoeffMatrix<C>)],
) -> Result<BlockPolynomial<C>> {
    let mut map = AffineMap::zero(psi.layout(), layout);
    for (e, m) in parts {
        map.add_block(0, *e, m);
    }
    Ok(psi.compose(&map)?)
}

/// Log of the factor `exp{r}` for the Q-independence of `sum A_j xi_j` and
/// `sum B_j xi_j` when `psi_j = -log mu_j`:
/// `r(f, g) = -sum_j [psi_j(A_j* f + B_j* g) - psi_j(A_j* f) - psi_j(B_j* g)]`.
pub fn lemma1_poly<C: FieldCoefficient>(
    psis: &[BlockPolynomial<C>],
    a: &[CoeffMatrix<C>],
    b: &[CoeffMatrix<C>],
) -> Result<BlockPolynomial<C>> {
    let d = a[0].dim();
    check_psis(psis, d)?;
    let l = pair_layout(d);
    let mut acc = BlockPolynomial::zero(&l);
    for ((p, aj), bj) in psis.iter().zip(a).zip(b) {
        let (at, bt) = (aj.transpose(), bj.transpose());
        acc = &acc - &combine(&l, p, &[(0, at.clone()), (1, bt.clone())])?;
        acc = &acc + &combine(&l, p, &[(0, at)])?;
        acc = &acc + &combine(&l, p, &[(1, bt)])?;
    }
    Ok(acc)
}

/// `r(f, g) = sum_j [psi_j(A_j* f - B_j* g) - psi_j(A_j* f + B_j* g)]`.
pub fn lemma4_poly<C: FieldCoefficient>(
    psis: &[BlockPolynomial<C>],
    a: &[CoeffMatrix<C>],
    b: &[CoeffMatrix<C>],
) -> Result<BlockPolynomial<C>> {
    let d = a[0].dim();
    check_psis(psis, d)?;
    let l = pair_layout(d);
    let mut acc = BlockPolynomial::zero(&l);
    for ((p, aj), bj) in psis.iter().zip(a).zip(b) {
        let (at, bt) = (aj.transpose(), bj.transpose());
        acc = &acc + &combine(&l, p, &[(0, at.clone()), (1, bt.neg())])?;
        acc = &acc - &combine(&l, p, &[(0, at), (1, bt)])?;
    }
    Ok(acc)
}

/// Sample-mean residual on `(f, g1..gn)` for `psi = -log mu`:
/// `r = -sum_j psi(f/n + g_j - gbar) + n psi(f/n) + sum_j psi(g_j - gbar)`.
pub fn lemma6_poly<C: FieldCoefficient>(psi: &BlockPolynomial<C>, n: usize) -> Result<BlockPolynomial<C>> {
    let d = psi.layout().dim();
    check_psis(std::slice::from_ref(psi), d)?;
    let layout = crate::qindep::sample_mean_layout(n, d);
    let inv_n = C::one() / C::from_f64(n as f64);
    let id = CoeffMatrix::<C>::identity(d);
    let centered = |j: usize| -> Vec<(usize, CoeffMatrix<C>)> {
        (0..n)
            .map(|k| {
                let c = if k == j { C::one() - inv_n.clone() } else { -inv_n.clone() };
                (k + 1, id.scale(&c))
            })
            .collect()
    };
    let mut acc = combine(&layout, psi, &[(0, id.scale(&inv_n))])?.scale(&C::from_f64(n as f64));
    for j in 0..n {
        let mut parts = centered(j);
        parts.push((0, id.scale(&inv_n)));
        acc = &acc - &combine(&layout, psi, &parts)?;
        acc = &acc + &combine(&layout, psi, &centered(j))?;
    }
    Ok(acc)
}

fn degree_bound<C: Coefficient>(r: &BlockPolynomial<C>, opts: &ReplayOptions) -> u32 {
    opts.l.unwrap_or_else(|| r.total_degree())
}

/// Replays the elimination behind the Skitovich-Darmois argument for
/// `L_1 = sum xi_j`, `L_2 = sum C_j xi_j`, starting from
/// `sum_j psi_j(f + C_j* g) - P(f) - Q(g) + r(f, g) = 0`.
///
/// Each `psi_m` is removed by the shift `(h_m, k_m)`, `k_m = -(C_m*)^{-1} h_m`;
/// `Q` by a shift in `f` alone; `r` by `l + 1` further differences. The
/// replay closes with `Delta_h^{n+l+2} P = 0`.
pub fn sd_pipeline<C: FieldCoefficient>(
    psis: &[BlockPolynomial<C>],
    c: &[CoeffMatrix<C>],
    r: &BlockPolynomial<C>,
    shifts: &mut ShiftSource,
    opts: &ReplayOptions,
) -> Result<EliminationReport> {
    let n = psis.len();
    if n < 2 || c.len() != n {
        return Err(Error::Precondition(format!(
            "need n >= 2 functions and as many coefficients (got {n} and {})",
            c.len()
        )));
    }
    let d = c[0].dim();
    check_psis(psis, d)?;
    let l = degree_bound(r, opts);
    let ct: Vec<CoeffMatrix<C>> = c.iter().map(CoeffMatrix::transpose).collect();
    let ct_inv: Vec<CoeffMatrix<C>> = ct
        .iter()
        .enumerate()
        .map(|(j, m)| inverse_of(m, &format!("C_{}", j + 1)))
        .collect::<Result<_>>()?;
    let id = CoeffMatrix::<C>::identity(d);
    let p = sum_composed(psis, &vec![id.clone(); n])?;
    let q = sum_composed(psis, &ct)?;

    let mut eq = FunctionalEquation::new(pair_layout(d));
    let names: Vec<String> = (1..=n).map(|j| format!("psi_{j}")).collect();
    for (j, psi) in psis.iter().enumerate() {
        let fi = eq.add_unknown(names[j].clone(), psi.clone());
        eq.add_term(C::one(), fi, vec![(0, 0, id.clone()), (0, 1, ct[j].clone())]);
    }
    let pi = eq.add_unknown("P", p.clone());
    eq.add_term(-C::one(), pi, vec![(0, 0, id.clone())]);
    let qi = eq.add_unknown("Q", q);
    eq.add_term(-C::one(), qi, vec![(0, 1, id.clone())]);
    let ri = eq.add_unknown("r", r.clone());
    eq.add_term(C::one(), ri, vec![(0, 0, id.clone()), (1, 1, id.clone())]);

    let mut rec = Recorder::new(opts);
    rec.check(
        "start",
        "sum_j psi_j(f + C_j* g) = P(f) + Q(g) - r(f, g)",
        &mut eq,
        Vec::new(),
        &[],
        0.0,
    )?;

    let mut hs = Vec::with_capacity(n);
    let mut gone = Vec::new();
    for m in (0..n).rev() {
        let h: Vec<C> = shifts.vector(d);
        let k = neg_vec(&ct_inv[m].mul_vec(&h));
        let eliminated = eq.difference(&[h.clone(), k.clone()]);
        // l_{m,j} = (C_j* - C_m*) k_m for the remaining psi_j
        let mut gap: f64 = 0.0;
        for j in 0..m {
            let expect = ct[j].sub(&ct[m]).mul_vec(&k);
            let got = eq.last_shift(&names[j]).cloned().unwrap_or_default();
            gap = gap.max(vec_gap(&got, &expect));
        }
        gone.push(names[m].clone());
        rec.check(
            &format!("eliminate_psi_{}", m + 1),
            &format!(
                "shift (h_{m1}, -(C_{m1}*)^-1 h_{m1}) removes psi_{m1}; remaining psi_j carry Delta_((C_j* - C_{m1}*) k_{m1})",
                m1 = m + 1
            ),
            &mut eq,
            eliminated,
            &gone,
            gap,
        )?;
        hs.push(h);
    }

    let h: Vec<C> = shifts.vector(d);
    let eliminated = eq.difference(&[h.clone(), vec![C::zero(); d]]);
    gone.push("Q".into());
    rec.check(
        "eliminate_q",
        "Delta_h Delta_h1..hn P(f) + Delta_(h,0) Delta_(h1,k1)..(hn,kn) r(f, g) = 0",
        &mut eq,
        eliminated,
        &gone,
        0.0,
    )?;

    let k: Vec<C> = shifts.vector(d);
    let mut eliminated = Vec::new();
    for _ in 0..=l {
        eliminated.extend(eq.difference(&[h.clone(), k.clone()]));
    }
    // Delta^{l+1} kills r; check that term on its own and drop it.
    let r_left = eq
        .terms
        .iter()
        .filter(|t| t.func == ri)
        .map(|t| eq.term_poly(t))
        .collect::<Result<Vec<_>>>()?
        .iter()
        .map(BlockPolynomial::max_coefficient)
        .fold(0.0, f64::max);
    eq.terms.retain(|t| t.func != ri);
    if r_left <= opts.tol {
        eliminated.push("r".into());
    }
    rec.check(
        "annihilate_r",
        "Delta^{l+1}_(h,k) r = 0 leaves Delta_h^{l+2} Delta_h1..hn P(f) = 0",
        &mut eq,
        eliminated,
        &gone,
        r_left,
    )?;

    let h_diag: Vec<C> = shifts.vector(d);
    let final_p = p.delta_pow(&h_diag, n as u32 + l + 2)?;
    rec.claim(
        "p_is_polynomial",
        &format!("h_1 = ... = h_n = h gives Delta_h^(n+l+2) P(f) = 0 with n + l + 2 = {}", n as u32 + l + 2),
        &final_p,
    );

    Ok(EliminationReport {
        pipeline: "skitovich_darmois".into(),
        l,
        stages: rec.stages,
    })
}

/// Replays the Heyde elimination for `L_1 = sum xi_j`, `L_2 = sum C_j xi_j`
/// from `sum_j psi_j(f + C_j* g) - sum_j psi_j(f - C_j* g) + r(f, g) = 0`,
/// isolating `psi_target` and closing with `Delta_h^{2n+l} psi_target = 0`.
pub fn heyde_pipeline<C: FieldCoefficient>(
    psis: &[BlockPolynomial<C>],
    c: &[CoeffMatrix<C>],
    r: &BlockPolynomial<C>,
    target: usize,
    shifts: &mut ShiftSource,
    opts: &ReplayOptions,
) -> Result<EliminationReport> {
    let n = psis.len();
    if n < 2 || c.len() != n || target >= n {
        return Err(Error::Precondition(format!(
            "need n >= 2 functions, matching coefficients and a target below n (got {n}, {}, {target})",
            c.len()
        )));
    }
    let d = c[0].dim();
    check_psis(psis, d)?;
    let l = degree_bound(r, opts);
    let ct: Vec<CoeffMatrix<C>> = c.iter().map(CoeffMatrix::transpose).collect();
    let id = CoeffMatrix::<C>::identity(d);
    let t1 = target + 1;

    let mut eq = FunctionalEquation::new(pair_layout(d));
    let plus: Vec<String> = (1..=n).map(|j| format!("psi_{j}(f+C_{j}*g)")).collect();
    let minus: Vec<String> = (1..=n).map(|j| format!("psi_{j}(f-C_{j}*g)")).collect();
    for (j, psi) in psis.iter().enumerate() {
        let fp = eq.add_unknown(plus[j].clone(), psi.clone());
        eq.add_term(C::one(), fp, vec![(0, 0, id.clone()), (0, 1, ct[j].clone())]);
        let fm = eq.add_unknown(minus[j].clone(), psi.clone());
        eq.add_term(-C::one(), fm, vec![(0, 0, id.clone()), (0, 1, ct[j].neg())]);
    }
    let ri = eq.add_unknown("r", r.clone());
    eq.add_term(C::one(), ri, vec![(0, 0, id.clone()), (1, 1, id.clone())]);

    let mut rec = Recorder::new(opts);
    rec.check(
        "start",
        "sum_j psi_j(f + C_j* g) = sum_j psi_j(f - C_j* g) - r(f, g)",
        &mut eq,
        Vec::new(),
        &[],
        0.0,
    )?;

    let mut gone = Vec::new();
    for i in (0..n).rev() {
        let h: Vec<C> = shifts.vector(d);
        let eliminated = eq.difference(&[ct[i].mul_vec(&h), h.clone()]);
        // l_{i,j} = (C_i* + C_j*) h_i and m_{i,j} = (C_i* - C_j*) h_i
        let mut gap: f64 = 0.0;
        for j in 0..n {
            let got = eq.last_shift(&plus[j]).cloned().unwrap_or_default();
            gap = gap.max(vec_gap(&got, &ct[i].add(&ct[j]).mul_vec(&h)));
            if j < i {
                let got = eq.last_shift(&minus[j]).cloned().unwrap_or_default();
                gap = gap.max(vec_gap(&got, &ct[i].sub(&ct[j]).mul_vec(&h)));
            }
        }
        gone.push(minus[i].clone());
        rec.check(
            &format!("eliminate_reflected_psi_{}", i + 1),
            &format!(
                "shift (C_{i1}* h_{i1}, h_{i1}) removes psi_{i1}(f - C_{i1}* g)",
                i1 = i + 1
            ),
            &mut eq,
            eliminated,
            &gone,
            gap,
        )?;
    }

    for i in (0..n).rev().filter(|&i| i != target) {
        let k: Vec<C> = shifts.vector(d);
        let eliminated = eq.difference(&[ct[i].mul_vec(&k), neg_vec(&k)]);
        let got = eq.last_shift(&plus[target]).cloned().unwrap_or_default();
        let gap = vec_gap(&got, &ct[i].sub(&ct[target]).mul_vec(&k));
        gone.push(plus[i].clone());
        rec.check(
            &format!("eliminate_psi_{}", i + 1),
            &format!(
                "shift (C_{i1}* k_{i1}, -k_{i1}) removes psi_{i1}(f + C_{i1}* g); psi_{t1} carries Delta_((C_{i1}* - C_{t1}*) k_{i1})",
                i1 = i + 1
            ),
            &mut eq,
            eliminated,
            &gone,
            gap,
        )?;
    }

    let h: Vec<C> = shifts.vector(d);
    let mut eliminated = Vec::new();
    for _ in 0..=l {
        eliminated.extend(eq.difference(&[h.clone(), vec![C::zero(); d]]));
    }
    let r_left = eq
        .terms
        .iter()
        .filter(|t| t.func == ri)
        .map(|t| eq.term_poly(t))
        .collect::<Result<Vec<_>>>()?
        .iter()
        .map(BlockPolynomial::max_coefficient)
        .fold(0.0, f64::max);
    eq.terms.retain(|t| t.func != ri);
    if r_left <= opts.tol {
        eliminated.push("r".into());
    }
    rec.check(
        "annihilate_r",
        &format!("Delta^(l+1)_(h,0) r = 0 leaves only psi_{t1}"),
        &mut eq,
        eliminated,
        &gone,
        r_left,
    )?;

    eq.set_block_zero(1);
    rec.check(
        "restrict_g_zero",
        &format!("at g = 0: Delta_h^(l+1) Delta_b.. Delta_l.. psi_{t1}(f) = 0"),
        &mut eq,
        Vec::new(),
        &gone,
        0.0,
    )?;

    let h_diag: Vec<C> = shifts.vector(d);
    let order = 2 * n as u32 + l;
    let final_psi = psis[target].delta_pow(&h_diag, order)?;
    rec.claim(
        &format!("psi_{t1}_is_polynomial"),
        &format!(
            "h_i = (C_i* + C_{t1}*)^-1 h, k_i = (C_i* - C_{t1}*)^-1 h give Delta_h^(2n+l) psi_{t1} = 0 with 2n + l = {order}"
        ),
        &final_psi,
    );

    Ok(EliminationReport {
        pipeline: format!("heyde_psi_{t1}"),
        l,
        stages: rec.stages,
    })
}

/// Replays the sample-mean elimination from
/// `sum_j psi(f + n g_j - sum g) - n psi(f) - sum_j psi(n g_j - sum g) + r(n f, n g) = 0`
/// (arguments scaled by `n`), closing with `Delta_h^{l+4} psi = 0`.
/// `r` is the residual on `(f, g1..gn)` before scaling.
pub fn sample_mean_pipeline<C: FieldCoefficient>(
    psi: &BlockPolynomial<C>,
    n: usize,
    r: &BlockPolynomial<C>,
    shifts: &mut ShiftSource,
    opts: &ReplayOptions,
) -> Result<EliminationReport> {
    if n < 2 {
        return Err(Error::Precondition(format!("need n >= 2, got {n}")));
    }
    let d = psi.layout().dim();
    check_psis(std::slice::from_ref(psi), d)?;
    let layout = crate::qindep::sample_mean_layout(n, d);
    if r.layout() != &layout {
        return Err(Error::Precondition("r must live on (f, g1..gn)".into()));
    }
    let l = degree_bound(r, opts);
    let nc = C::from_f64(n as f64);
    let id = CoeffMatrix::<C>::identity(d);
    // r(n f, n g)
    let mut scale = AffineMap::zero(&layout, &layout);
    for b in 0..=n {
        scale.add_block(b, b, &id.scale(&nc));
    }
    let r_scaled = r.compose(&scale)?;

    let mut eq = FunctionalEquation::new(layout.clone());
    let pf = eq.add_unknown("psi(f)", psi.clone());
    eq.add_term(-nc.clone(), pf, vec![(0, 0, id.clone())]);
    let sample: Vec<String> = (1..=n).map(|j| format!("psi(f+n*g{j}-sum g)")).collect();
    let residue: Vec<String> = (1..=n).map(|j| format!("psi(n*g{j}-sum g)")).collect();
    let g_parts = |j: usize| -> Vec<(usize, usize, CoeffMatrix<C>)> {
        (0..n)
            .map(|k| {
                let c = if k == j { nc.clone() - C::one() } else { -C::one() };
                (0, k + 1, id.scale(&c))
            })
            .collect()
    };
    for j in 0..n {
        let fs = eq.add_unknown(sample[j].clone(), psi.clone());
        let mut parts = g_parts(j);
        parts.push((0, 0, id.clone()));
        eq.add_term(C::one(), fs, parts);
        let fr = eq.add_unknown(residue[j].clone(), psi.clone());
        eq.add_term(-C::one(), fr, g_parts(j));
    }
    let ri = eq.add_unknown("r", r_scaled);
    eq.add_term(
        C::one(),
        ri,
        (0..=n).map(|b| (b, b, id.clone())).collect(),
    );

    let mut rec = Recorder::new(opts);
    rec.check(
        "start",
        "sum_j psi(f + n g_j - sum g) = n psi(f) + sum_j psi(n g_j - sum g) - r(n f, n g)",
        &mut eq,
        Vec::new(),
        &[],
        0.0,
    )?;

    let zero = vec![C::zero(); d];
    let h1: Vec<C> = shifts.vector(d);
    let eliminated = eq.difference(&vec![h1.clone(); n + 1]);
    let mut gone: Vec<String> = residue.clone();
    rec.check(
        "eliminate_residue_terms",
        "shift (h1, h1, ..., h1) removes every psi(n g_j - sum g)",
        &mut eq,
        eliminated,
        &gone,
        0.0,
    )?;

    let h2: Vec<C> = shifts.vector(d);
    let mut s2 = vec![zero.clone(); n + 1];
    s2[0] = h2.clone();
    s2[1] = h2.clone();
    let eliminated = eq.difference(&s2);
    // the first sample term now carries Delta_{n h2}
    let got = eq.last_shift(&sample[0]).cloned().unwrap_or_default();
    let gap = vec_gap(&got, &h2.iter().map(|x| x.clone() * nc.clone()).collect::<Vec<_>>());
    gone.extend(sample[1..].iter().cloned());
    rec.check(
        "eliminate_other_sample_terms",
        "shift (h2, h2, 0, ..., 0) removes psi(f + n g_j - sum g) for j >= 2",
        &mut eq,
        eliminated,
        &gone,
        gap,
    )?;

    let h3: Vec<C> = shifts.vector(d);
    let mut s3 = vec![zero.clone(); n + 1];
    s3[0] = h3.clone();
    s3[2] = h3.clone();
    let eliminated = eq.difference(&s3);
    gone.push(sample[0].clone());
    rec.check(
        "eliminate_first_sample_term",
        "shift (h3, 0, h3, 0, ..., 0) leaves n Delta_h3 Delta_h2 Delta_h1 psi(f) = Delta.. r",
        &mut eq,
        eliminated,
        &gone,
        0.0,
    )?;

    let ks: Vec<Vec<C>> = (0..=n).map(|_| shifts.vector(d)).collect();
    let mut eliminated = Vec::new();
    for _ in 0..=l {
        eliminated.extend(eq.difference(&ks));
    }
    let r_left = eq
        .terms
        .iter()
        .filter(|t| t.func == ri)
        .map(|t| eq.term_poly(t))
        .collect::<Result<Vec<_>>>()?
        .iter()
        .map(BlockPolynomial::max_coefficient)
        .fold(0.0, f64::max);
    eq.terms.retain(|t| t.func != ri);
    if r_left <= opts.tol {
        eliminated.push("r".into());
    }
    rec.check(
        "annihilate_r",
        "Delta^(l+1)_(k, k1..kn) r = 0 leaves Delta_k^(l+1) Delta_h3 Delta_h2 Delta_h1 psi(f) = 0",
        &mut eq,
        eliminated,
        &gone,
        r_left,
    )?;

    let h: Vec<C> = shifts.vector(d);
    let final_psi = psi.delta_pow(&h, l + 4)?;
    rec.claim(
        "psi_is_polynomial",
        &format!("h1 = h2 = h3 = k = h gives Delta_h^(l+4) psi = 0 with l + 4 = {}", l + 4),
        &final_psi,
    );

    Ok(EliminationReport {
        pipeline: "sample_mean".into(),
        l,
        stages: rec.stages,
    })
}

/// Operator pairs of the two Q-independent forms built from a symmetric
/// conditional law of `C_1 xi_1 + C_2 xi_2` given `xi_1 + xi_2`:
/// `L'_1 = (C_1 + C_2) xi_1 + 2 C_2 xi_2`, `L'_2 = 2 C_1 xi_1 + (C_1 + C_2) xi_2`.
pub fn lemma5_coefficients<C: Coefficient>(
    c1: &CoeffMatrix<C>,
    c2: &CoeffMatrix<C>,
) -> ([CoeffMatrix<C>; 2], [CoeffMatrix<C>; 2]) {
    let two = C::one() + C::one();
    let sum = c1.add(c2);
    ([sum.clone(), c2.scale(&two)], [c1.scale(&two), sum])
}

/// Composed residual of the Q-independence of `L'_1`, `L'_2` on `(k, l)`:
/// `r'(k, l) = r(C_1* l + C_2* k, k + l) + r(C_2* k, -k) + r(C_1* l, -l)`.
///
/// `literal_third_term` uses `r(-C_1* l, l)` in place of the last term; the two
/// agree only when `r` is even.
pub fn lemma5_composed<C: FieldCoefficient>(
    r: &BlockPolynomial<C>,
    c1: &CoeffMatrix<C>,
    c2: &CoeffMatrix<C>,
    literal_third_term: bool,
) -> Result<BlockPolynomial<C>> {
    let d = c1.dim();
    let src = pair_layout(d);
    if r.layout() != &src {
        return Err(Error::Precondition("r must live on (f, g)".into()));
    }
    let tgt = BlockLayout::new(["k", "l"], d);
    let (c1t, c2t) = (c1.transpose(), c2.transpose());
    let id = CoeffMatrix::<C>::identity(d);
    let sub = |fk: CoeffMatrix<C>, fl: CoeffMatrix<C>, gk: CoeffMatrix<C>, gl: CoeffMatrix<C>| -> Result<BlockPolynomial<C>> {
        let mut m = AffineMap::zero(&src, &tgt);
        m.add_block(0, 0, &fk).add_block(0, 1, &fl).add_block(1, 0, &gk).add_block(1, 1, &gl);
        Ok(r.compose(&m)?)
    };
    let zero = CoeffMatrix::<C>::zeros(d);
    let a = sub(c2t.clone(), c1t.clone(), id.clone(), id.clone())?;
    let b = sub(c2t, zero.clone(), id.neg(), zero.clone())?;
    let c = if literal_third_term {
        sub(zero.clone(), c1t.neg(), zero, id)?
    } else {
        sub(zero.clone(), c1t, zero, id.neg())?
    };
    Ok(&(&a + &b) + &c)
}

/// Checks of the composed-residual identity for exact `psi_1, psi_2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma5Check {
    /// Log form of the composed equation minus the composed residual.
    pub identity_residual: f64,
    /// Composed residual minus the direct Q-independence residual of `L'_1, L'_2`.
    pub transform_residual: f64,
    /// Same identity with the literal third term `r(-C_1* l, l)`.
    pub literal_residual: f64,
}

pub fn lemma5_check<C: FieldCoefficient>(
    psis: &[BlockPolynomial<C>; 2],
    c1: &CoeffMatrix<C>,
    c2: &CoeffMatrix<C>,
) -> Result<Lemma5Check> {
    let d = c1.dim();
    let id = CoeffMatrix::<C>::identity(d);
    let r = lemma4_poly(psis, &[id.clone(), id], &[c1.clone(), c2.clone()])?;
    let composed = lemma5_composed(&r, c1, c2, false)?;
    let literal = lemma5_composed(&r, c1, c2, true)?;
    let (a, b) = lemma5_coefficients(c1, c2);
    // lemma1 residual of L'_1 = a . xi, L'_2 = b . xi on (k, l)
    let direct = lemma1_poly(psis, &a, &b)?.relabel(&BlockLayout::new(["k", "l"], d))?;
    let two = C::one() + C::one();
    let (c1t, c2t) = (c1.transpose(), c2.transpose());
    let sum_t = c1t.add(&c2t);
    let kl = BlockLayout::new(["k", "l"], d);
    // -psi1((C1*+C2*)k + 2C1* l) - psi2(2C2* k + (C1*+C2*) l) + psi1((C1*+C2*)k)
    //   + psi2(2C2* k) + psi1(2C1* l) + psi2((C1*+C2*) l)
    let mut lhs = BlockPolynomial::zero(&kl);
    lhs = &lhs - &combine(&kl, &psis[0], &[(0, sum_t.clone()), (1, c1t.scale(&two))])?;
    lhs = &lhs - &combine(&kl, &psis[1], &[(0, c2t.scale(&two)), (1, sum_t.clone())])?;
    lhs = &lhs + &combine(&kl, &psis[0], &[(0, sum_t.clone())])?;
    lhs = &lhs + &combine(&kl, &psis[1], &[(0, c2t.scale(&two))])?;
    lhs = &lhs + &combine(&kl, &psis[0], &[(1, c1t.scale(&two))])?;
    lhs = &lhs + &combine(&kl, &psis[1], &[(1, sum_t)])?;
    Ok(Lemma5Check {
        identity_residual: (&lhs - &composed).max_coefficient(),
        transform_residual: (&composed - &direct).max_coefficient(),
        literal_residual: (&lhs - &literal).max_coefficient(),
    })
}
