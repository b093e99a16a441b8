use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};

use super::{CfSource, EmpiricalCf, BATCH, ROW_CHUNK};
use crate::error::{Error, Result};
use crate::poly::BlockLayout;
use crate::rng;
use crate::Poly;

/// Replicates used to estimate influence-function variances.
pub const SE_ROWS: usize = 20_000;

/// Steps of the ray continuation used for exact complex logarithms.
const CONTINUATION_STEPS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldValue {
    pub value: Complex64,
    pub se: f64,
}

/// A scalar field on a block layout, evaluated along straight lines.
pub trait Field: Sync {
    fn layout(&self) -> &BlockLayout;

    /// Values along `base + k * step` for `k < count`, one entry per line.
    /// `Err(k)` reports the first point of the line outside the domain.
    fn eval_lines(
        &self,
        base: &[f64],
        steps: &[(Vec<f64>, usize)],
    ) -> Vec<std::result::Result<Vec<FieldValue>, usize>>;

    fn is_exact(&self) -> bool;

    /// Per-block radius `rho` such that every point whose blocks all have norm
    /// at most `rho` lies in the domain; `None` when unrestricted.
    fn domain_radius(&self) -> Option<f64> {
        None
    }

    fn eval_point(&self, p: &[f64]) -> Result<FieldValue> {
        let zero = vec![0.0; p.len()];
        match self.eval_lines(p, &[(zero, 1)]).pop() {
            Some(Ok(v)) => Ok(v[0]),
            _ => Err(Error::OutOfDomain { point: p.to_vec() }),
        }
    }
}

/// Exact polynomial as a field (no domain restriction, zero standard error).
pub struct PolyField(pub Poly);

impl Field for PolyField {
    fn layout(&self) -> &BlockLayout {
        self.0.layout()
    }

    fn eval_lines(
        &self,
        base: &[f64],
        steps: &[(Vec<f64>, usize)],
    ) -> Vec<std::result::Result<Vec<FieldValue>, usize>> {
        steps
            .iter()
            .map(|(step, count)| {
                Ok((0..*count)
                    .map(|k| {
                        let p: Vec<Complex64> = base
                            .iter()
                            .zip(step)
                            .map(|(b, s)| Complex64::from(b + k as f64 * s))
                            .collect();
                        FieldValue {
                            value: self.0.eval(&p),
                            se: 0.0,
                        }
                    })
                    .collect())
            })
            .collect()
    }

    fn is_exact(&self) -> bool {
        true
    }
}

/// Field given by a closure; `None` marks points outside the domain.
pub struct FnField<F> {
    layout: BlockLayout,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64]) -> Option<FieldValue> + Sync,
{
    pub fn new(layout: BlockLayout, f: F) -> Self {
        Self { layout, f }
    }
}

impl<F> Field for FnField<F>
where
    F: Fn(&[f64]) -> Option<FieldValue> + Sync,
{
    fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    fn eval_lines(
        &self,
        base: &[f64],
        steps: &[(Vec<f64>, usize)],
    ) -> Vec<std::result::Result<Vec<FieldValue>, usize>> {
        steps
            .iter()
            .map(|(step, count)| {
                (0..*count)
                    .map(|k| {
                        let p: Vec<f64> = base.iter().zip(step).map(|(b, s)| b + k as f64 * s).collect();
                        (self.f)(&p).ok_or(k)
                    })
                    .collect()
            })
            .collect()
    }

    fn is_exact(&self) -> bool {
        true
    }
}

/// How the logarithm of each CF is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogMode {
    /// `log |phi|^2`: the log CF of the symmetrized law, real valued.
    Symmetrized,
    /// Branch-continuous complex `log phi`.
    Unwrapped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SeMethod {
    /// Delta-method standard errors from per-replicate influence values.
    Influence,
    /// Poisson bootstrap over replicates.
    Bootstrap { replicates: usize, seed: u64 },
}

/// `weight * log phi_source(map * point)`.
#[derive(Debug, Clone)]
pub struct LogTerm {
    pub source: usize,
    pub weight: f64,
    pub map: DMatrix<f64>,
}

/// Weighted sum of log characteristic functions at linear images of a point,
/// restricted to the floor-bounded neighborhoods of zero of its sources.
#[derive(Debug, Clone)]
pub struct LogCombination {
    layout: BlockLayout,
    sources: Vec<CfSource>,
    radii: Vec<f64>,
    terms: Vec<LogTerm>,
    mode: LogMode,
    floor: f64,
    se_method: SeMethod,
}

/// Matrix sending a flat layout point to `sum_b M_b * block_b`.
pub fn linear_map(layout: &BlockLayout, rows: usize, parts: &[(usize, DMatrix<f64>)]) -> DMatrix<f64> {
    let d = layout.dim();
    let mut m = DMatrix::zeros(rows, layout.nvars());
    for (b, mat) in parts {
        assert_eq!(mat.nrows(), rows);
        assert_eq!(mat.ncols(), d);
        let mut view = m.view_mut((0, b * d), (rows, d));
        view += mat;
    }
    m
}

impl LogCombination {
    pub fn new(layout: BlockLayout, mode: LogMode, floor: f64) -> Result<Self> {
        if !(floor > 0.0 && floor < 1.0) {
            return Err(Error::Precondition(format!("floor must lie in (0, 1), got {floor}")));
        }
        Ok(Self {
            layout,
            sources: Vec::new(),
            radii: Vec::new(),
            terms: Vec::new(),
            mode,
            floor,
            se_method: SeMethod::Influence,
        })
    }

    pub fn with_se_method(mut self, m: SeMethod) -> Self {
        self.se_method = m;
        self
    }

    pub fn add_source(&mut self, source: CfSource) -> Result<usize> {
        if let (CfSource::Empirical(new), Some(len)) = (&source, self.empirical_len()) {
            if new.len() != len {
                return Err(Error::Precondition(
                    "empirical sources in one field must share the replicate count".into(),
                ));
            }
        }
        self.radii.push(source.neighborhood_radius(self.floor));
        self.sources.push(source);
        Ok(self.sources.len() - 1)
    }

    /// Adds `weight * log phi_source(sum_b M_b * block_b)`.
    pub fn add_term(&mut self, source: usize, weight: f64, parts: &[(usize, DMatrix<f64>)]) {
        let rows = self.sources[source].dim();
        let map = linear_map(&self.layout, rows, parts);
        self.terms.push(LogTerm { source, weight, map });
    }

    pub fn add_term_map(&mut self, source: usize, weight: f64, map: DMatrix<f64>) {
        assert_eq!(map.nrows(), self.sources[source].dim());
        assert_eq!(map.ncols(), self.layout.nvars());
        self.terms.push(LogTerm { source, weight, map });
    }

    /// The same combination composed with a linear embedding `new -> old`
    /// (`embed` has one row per old variable). Sources and radii are shared.
    pub fn pulled_back(&self, layout: BlockLayout, embed: &DMatrix<f64>) -> Self {
        assert_eq!(embed.nrows(), self.layout.nvars());
        assert_eq!(embed.ncols(), layout.nvars());
        let terms = self
            .terms
            .iter()
            .map(|t| LogTerm {
                source: t.source,
                weight: t.weight,
                map: &t.map * embed,
            })
            .collect();
        Self {
            layout,
            sources: self.sources.clone(),
            radii: self.radii.clone(),
            terms,
            mode: self.mode,
            floor: self.floor,
            se_method: self.se_method,
        }
    }

    pub fn terms(&self) -> &[LogTerm] {
        &self.terms
    }

    pub fn sources(&self) -> &[CfSource] {
        &self.sources
    }

    /// Neighborhood radius of each source.
    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn mode(&self) -> LogMode {
        self.mode
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    fn empirical_len(&self) -> Option<usize> {
        self.sources.iter().find_map(|s| match s {
            CfSource::Empirical(e) => Some(e.len()),
            _ => None,
        })
    }

    fn log_of(&self, src: &CfSource, arg: &[f64], phi: Complex64) -> Option<Complex64> {
        if phi.norm() < self.floor {
            return None;
        }
        match self.mode {
            LogMode::Symmetrized => Some(Complex64::from(phi.norm_sqr().ln())),
            LogMode::Unwrapped => match src {
                CfSource::Empirical(e) => Some(nearest_branch(phi.ln(), dot(e.mean(), arg))),
                _ => continued_log(src, arg, self.floor),
            },
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adds the multiple of `2 pi i` that brings the imaginary part nearest `target`.
fn nearest_branch(principal: Complex64, target: f64) -> Complex64 {
    let k = ((target - principal.im) / (2.0 * PI)).round();
    Complex64::new(principal.re, principal.im + 2.0 * PI * k)
}

/// Complex log by argument continuation along the segment from 0 to `arg`.
fn continued_log(src: &CfSource, arg: &[f64], floor: f64) -> Option<Complex64> {
    let mut prev = Complex64::from(1.0);
    let mut phase = 0.0;
    for s in 1..=CONTINUATION_STEPS {
        let t = s as f64 / CONTINUATION_STEPS as f64;
        let p: Vec<f64> = arg.iter().map(|x| x * t).collect();
        let v = src.eval(&p).ok()?.0;
        if v.norm() < floor {
            return None;
        }
        phase += (v / prev).arg();
        prev = v;
    }
    Some(Complex64::new(prev.norm().ln(), phase))
}

struct TermLines {
    base: Vec<f64>,
    steps: Vec<(Vec<f64>, usize)>,
}

impl Field for LogCombination {
    fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    fn domain_radius(&self) -> Option<f64> {
        let d = self.layout.dim();
        self.terms
            .iter()
            .map(|t| {
                let spread: f64 = (0..self.layout.blocks())
                    .map(|b| {
                        let cols = t.map.columns(b * d, d).into_owned();
                        cols.singular_values().max()
                    })
                    .sum();
                if spread > 0.0 {
                    self.radii[t.source] / spread
                } else {
                    f64::INFINITY
                }
            })
            .reduce(f64::min)
    }

    fn is_exact(&self) -> bool {
        self.sources.iter().all(CfSource::is_exact)
    }

    fn eval_lines(
        &self,
        base: &[f64],
        steps: &[(Vec<f64>, usize)],
    ) -> Vec<std::result::Result<Vec<FieldValue>, usize>> {
        let base_v = DVector::from_column_slice(base);
        let step_v: Vec<DVector<f64>> = steps.iter().map(|(s, _)| DVector::from_column_slice(s)).collect();

        // Term arguments along each line, and the first point leaving a neighborhood.
        let mut first_bad: Vec<usize> = steps.iter().map(|(_, c)| *c).collect();
        let args: Vec<TermLines> = self
            .terms
            .iter()
            .map(|t| {
                let b = (&t.map * &base_v).as_slice().to_vec();
                let ls: Vec<(Vec<f64>, usize)> = step_v
                    .iter()
                    .zip(steps)
                    .map(|(s, (_, c))| ((&t.map * s).as_slice().to_vec(), *c))
                    .collect();
                let r = self.radii[t.source] + 1e-12;
                for (li, (s, c)) in ls.iter().enumerate() {
                    for k in 0..*c {
                        let norm2: f64 = b.iter().zip(s).map(|(x, y)| (x + k as f64 * y).powi(2)).sum();
                        if norm2.sqrt() > r {
                            first_bad[li] = first_bad[li].min(k);
                            break;
                        }
                    }
                }
                TermLines { base: b, steps: ls }
            })
            .collect();

        let live: Vec<usize> = (0..steps.len()).filter(|&l| first_bad[l] == steps[l].1).collect();
        if live.is_empty() {
            return first_bad.into_iter().map(Err).collect();
        }

        // CF values per term, per live line, per point.
        let phis: Vec<Vec<Vec<Complex64>>> = self
            .terms
            .iter()
            .zip(&args)
            .map(|(t, a)| {
                let src = &self.sources[t.source];
                let lines: Vec<(Vec<f64>, usize)> = live.iter().map(|&l| a.steps[l].clone()).collect();
                match src {
                    CfSource::Empirical(e) => e.lines(&a.base, &lines),
                    _ => lines
                        .iter()
                        .map(|(s, c)| {
                            (0..*c)
                                .map(|k| src.exact_value(&point_on(&a.base, s, k)))
                                .collect()
                        })
                        .collect(),
                }
            })
            .collect();

        let mut values: Vec<Vec<Complex64>> = Vec::with_capacity(live.len());
        for (li, &l) in live.iter().enumerate() {
            let mut vals = Vec::with_capacity(steps[l].1);
            for k in 0..steps[l].1 {
                let mut acc = Complex64::default();
                for ((t, a), phi) in self.terms.iter().zip(&args).zip(&phis) {
                    let arg = point_on(&a.base, &a.steps[l].0, k);
                    match self.log_of(&self.sources[t.source], &arg, phi[li][k]) {
                        Some(lg) => acc += lg * t.weight,
                        None => {
                            first_bad[l] = first_bad[l].min(k);
                            break;
                        }
                    }
                }
                vals.push(acc);
            }
            values.push(vals);
        }

        let ses = self.standard_errors(&args, &live, &phis, &values);

        let mut out: Vec<std::result::Result<Vec<FieldValue>, usize>> =
            first_bad.iter().map(|&k| Err(k)).collect();
        for (li, &l) in live.iter().enumerate() {
            if first_bad[l] < steps[l].1 {
                continue;
            }
            out[l] = Ok(values[li]
                .iter()
                .zip(&ses[li])
                .map(|(&value, &se)| FieldValue { value, se })
                .collect());
        }
        out
    }
}

fn point_on(base: &[f64], step: &[f64], k: usize) -> Vec<f64> {
    base.iter().zip(step).map(|(b, s)| b + k as f64 * s).collect()
}

impl LogCombination {
    fn empirical_terms(&self) -> Vec<(usize, &EmpiricalCf)> {
        self.terms
            .iter()
            .enumerate()
            .filter_map(|(i, t)| match &self.sources[t.source] {
                CfSource::Empirical(e) => Some((i, e)),
                _ => None,
            })
            .collect()
    }

    fn standard_errors(
        &self,
        args: &[TermLines],
        live: &[usize],
        phis: &[Vec<Vec<Complex64>>],
        values: &[Vec<Complex64>],
    ) -> Vec<Vec<f64>> {
        let emp = self.empirical_terms();
        if emp.is_empty() {
            return values.iter().map(|v| vec![0.0; v.len()]).collect();
        }
        let lines_of = |ti: usize| -> Vec<(Vec<f64>, usize)> { live.iter().map(|&l| args[ti].steps[l].clone()).collect() };
        let term_lines: Vec<Vec<(Vec<f64>, usize)>> = emp.iter().map(|(ti, _)| lines_of(*ti)).collect();
        let n = emp[0].1.len();
        match self.se_method {
            SeMethod::Influence => {
                let m = n.min(SE_ROWS);
                // (e - phi) / phi * w differs from e * (w / phi) by a constant,
                // which leaves the variance unchanged
                let coef: Vec<Vec<Vec<Complex64>>> = emp
                    .iter()
                    .map(|(ti, _)| {
                        let w = self.terms[*ti].weight;
                        phis[*ti].iter().map(|line| line.iter().map(|p| w / p).collect()).collect()
                    })
                    .collect();
                let lanes = || -> Vec<Vec<[f64; BATCH]>> {
                    live.iter().map(|&l| vec![[0.0; BATCH]; args[0].steps[l].1]).collect()
                };
                let (mut sum_r, mut sum_i, mut sq) = (lanes(), lanes(), lanes());
                let (mut zr, mut zi) = (lanes(), lanes());
                let sym = self.mode == LogMode::Symmetrized;
                for start in (0..m).step_by(BATCH) {
                    let len = BATCH.min(m - start);
                    for v in zr.iter_mut().chain(zi.iter_mut()).flatten() {
                        *v = [0.0; BATCH];
                    }
                    for ((ti, e), (ls, c)) in emp.iter().zip(term_lines.iter().zip(&coef)) {
                        e.add_weighted_phasors(start, len, &args[*ti].base, ls, c, &mut zr, &mut zi);
                    }
                    for li in 0..live.len() {
                        for k in 0..zr[li].len() {
                            let (a, b) = (&zr[li][k], &zi[li][k]);
                            let (sr, si, q) = (&mut sum_r[li][k], &mut sum_i[li][k], &mut sq[li][k]);
                            for i in 0..len {
                                let (x, y) = if sym { (2.0 * a[i], 0.0) } else { (a[i], b[i]) };
                                sr[i] += x;
                                si[i] += y;
                                q[i] += x * x + y * y;
                            }
                        }
                    }
                }
                let mf = m as f64;
                (0..live.len())
                    .map(|li| {
                        (0..sum_r[li].len())
                            .map(|k| {
                                if m < 2 {
                                    return 0.0;
                                }
                                let s = Complex64::new(sum_r[li][k].iter().sum(), sum_i[li][k].iter().sum());
                                let q: f64 = sq[li][k].iter().sum();
                                let var = ((q - s.norm_sqr() / mf) / (mf - 1.0)).max(0.0);
                                (var / n as f64).sqrt()
                            })
                            .collect()
                    })
                    .collect()
            }
            SeMethod::Bootstrap { replicates, seed } => {
                self.bootstrap_se(args, live, phis, &emp, &term_lines, replicates, seed)
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn bootstrap_se(
        &self,
        args: &[TermLines],
        live: &[usize],
        phis: &[Vec<Vec<Complex64>>],
        emp: &[(usize, &EmpiricalCf)],
        term_lines: &[Vec<(Vec<f64>, usize)>],
        replicates: usize,
        seed: u64,
    ) -> Vec<Vec<f64>> {
        let n = emp[0].1.len();
        let b_count = replicates.max(2);
        // sums[b][term][line][k]
        let mut sums: Vec<Vec<Vec<Vec<Complex64>>>> = vec![
            term_lines
                .iter()
                .map(|ls| ls.iter().map(|(_, c)| vec![Complex64::default(); *c]).collect())
                .collect();
            b_count
        ];
        let mut weights = vec![0.0; b_count];
        let mut buf: Vec<Vec<Vec<Complex64>>> = sums[0].clone();
        let poisson = Poisson::new(1.0).expect("unit rate");
        for chunk in 0..n.div_ceil(ROW_CHUNK) {
            let mut r = rng::stream(seed, &[rng::purpose::BOOTSTRAP, chunk as u64]);
            for row in chunk * ROW_CHUNK..((chunk + 1) * ROW_CHUNK).min(n) {
                for ((ti, e), (ls, b)) in emp.iter().zip(term_lines.iter().zip(buf.iter_mut())) {
                    e.row_lines(row, &args[*ti].base, ls, b);
                }
                for (bi, s) in sums.iter_mut().enumerate() {
                    let w: f64 = r.sample(poisson);
                    weights[bi] += w;
                    if w == 0.0 {
                        continue;
                    }
                    for (st, bt) in s.iter_mut().zip(&buf) {
                        for (sl, bl) in st.iter_mut().zip(bt) {
                            for (x, y) in sl.iter_mut().zip(bl) {
                                *x += y * w;
                            }
                        }
                    }
                }
            }
        }
        let mut acc = zeros_c(live, args);
        let mut acc2: Vec<Vec<f64>> = acc.iter().map(|v| vec![0.0; v.len()]).collect();
        for (bi, s) in sums.iter().enumerate() {
            for li in 0..live.len() {
                for k in 0..acc[li].len() {
                    let mut v = Complex64::default();
                    for (ti, t) in self.terms.iter().enumerate() {
                        let phi = match emp.iter().position(|(i, _)| *i == ti) {
                            Some(p) => s[p][li][k] / weights[bi].max(1.0),
                            None => phis[ti][li][k],
                        };
                        let lg = match self.mode {
                            LogMode::Symmetrized => Complex64::from(phi.norm_sqr().max(1e-300).ln()),
                            LogMode::Unwrapped => {
                                let base_log = (phis[ti][li][k]).ln();
                                let l = phi.ln();
                                nearest_branch(l, base_log.im)
                            }
                        };
                        v += lg * t.weight;
                    }
                    acc[li][k] += v;
                    acc2[li][k] += v.norm_sqr();
                }
            }
        }
        let bf = b_count as f64;
        acc.iter()
            .zip(&acc2)
            .map(|(s, q)| {
                s.iter()
                    .zip(q)
                    .map(|(s, q)| ((q - s.norm_sqr() / bf) / (bf - 1.0)).max(0.0).sqrt())
                    .collect()
            })
            .collect()
    }
}

fn zeros_c(live: &[usize], args: &[TermLines]) -> Vec<Vec<Complex64>> {
    live.iter()
        .map(|&l| vec![Complex64::default(); args[0].steps[l].1])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{ComponentDist, GaussianDist, ProductDist, ScalarFamily};
    use std::sync::Arc;

    fn id(d: usize) -> DMatrix<f64> {
        DMatrix::identity(d, d)
    }

    #[test]
    fn exact_gaussian_unwrapped_log_is_quadratic() {
        let g = GaussianDist::new(vec![2.5], DMatrix::from_element(1, 1, 0.3)).unwrap();
        let layout = BlockLayout::single("f", 1);
        let mut c = LogCombination::new(layout, LogMode::Unwrapped, 0.2).unwrap();
        let s = c.add_source(CfSource::Exact(ComponentDist::Gaussian(g))).unwrap();
        c.add_term(s, -1.0, &[(0, id(1))]);
        // psi(f) = -i m f + R f^2 / 2, phase 2.5*f exceeds pi for f > 1.26
        for f in [0.5, 1.5, 2.0] {
            let v = c.eval_point(&[f]).unwrap().value;
            let expect = Complex64::new(0.15 * f * f, -2.5 * f);
            assert!((v - expect).norm() < 1e-10, "{f}: {v}");
        }
    }

    #[test]
    fn floor_excludes_points_outside_the_neighborhood() {
        let u = ComponentDist::iid(ScalarFamily::Uniform { a: -1.0, b: 1.0 }, 1).unwrap();
        let mut c = LogCombination::new(BlockLayout::single("f", 1), LogMode::Symmetrized, 0.2).unwrap();
        let s = c.add_source(CfSource::Exact(u)).unwrap();
        c.add_term(s, 1.0, &[(0, id(1))]);
        assert!(c.eval_point(&[2.0]).is_ok());
        // side lobe near 4.5 has modulus 0.217 but lies past the first zero
        assert!(c.eval_point(&[4.5]).is_err());
        let lines = c.eval_lines(&[0.0], &[(vec![1.0], 5)]);
        assert_eq!(lines[0], Err(3));
    }

    #[test]
    fn influence_se_tracks_monte_carlo_spread() {
        let dist = ProductDist::iid(ComponentDist::Gaussian(GaussianDist::standard(1)), 1).unwrap();
        let layout = BlockLayout::single("f", 1);
        let mut vals = Vec::new();
        let mut ses = Vec::new();
        for seed in 0..30 {
            let s = Arc::new(dist.sample(20_000, seed).unwrap());
            let mut c = LogCombination::new(layout.clone(), LogMode::Symmetrized, 0.2).unwrap();
            let src = c.add_source(CfSource::Empirical(EmpiricalCf::component(s, 0).unwrap())).unwrap();
            c.add_term(src, 1.0, &[(0, id(1))]);
            let v = c.eval_point(&[1.2]).unwrap();
            vals.push(v.value.re);
            ses.push(v.se);
        }
        let mean = vals.iter().sum::<f64>() / 30.0;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 29.0).sqrt();
        let se = ses.iter().sum::<f64>() / 30.0;
        assert!(sd / se > 0.6 && sd / se < 1.6, "sd {sd} se {se}");
        assert!((mean + 1.44).abs() < 4.0 * se);
    }

    #[test]
    fn bootstrap_and_influence_agree_roughly() {
        let dist = ProductDist::iid(ComponentDist::Gaussian(GaussianDist::standard(1)), 1).unwrap();
        let s = Arc::new(dist.sample(5_000, 3).unwrap());
        let layout = BlockLayout::single("f", 1);
        let build = |m: SeMethod| {
            let mut c = LogCombination::new(layout.clone(), LogMode::Unwrapped, 0.2).unwrap().with_se_method(m);
            let src = c.add_source(CfSource::Empirical(EmpiricalCf::component(s.clone(), 0).unwrap())).unwrap();
            c.add_term(src, 1.0, &[(0, id(1))]);
            c.eval_point(&[1.0]).unwrap()
        };
        let a = build(SeMethod::Influence);
        let b = build(SeMethod::Bootstrap { replicates: 200, seed: 1 });
        assert_eq!(a.value, b.value);
        assert!(b.se / a.se > 0.7 && b.se / a.se < 1.4, "{} vs {}", a.se, b.se);
    }
}
