//! Characteristic-function numerics: exact and empirical evaluators, branch
//! continuous logarithms, finite differences and the polynomial-degree test.

mod degree;
mod field;
mod grid;

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::dist::{ComponentDist, ProductDist, SampleMatrix};
use crate::error::{Error, Result};
use crate::space::LinearOp;

pub use degree::{
    certify, degree_test, finite_difference, Certification, DegreeTestParams, PolyDegreeCertificate, Verdict,
};
pub use field::{Field, FieldValue, FnField, LogCombination, LogMode, LogTerm, PolyField, SeMethod};
pub use grid::{log_cf_field, LogCfField, StarGrid};

/// Rows handled by one parallel task; fixes the summation order.
const ROW_CHUNK: usize = 8192;

/// Radial step used when scanning for the floor crossing.
const SCAN_STEP: f64 = 0.05;
/// Largest radius scanned.
const SCAN_MAX: f64 = 8.0;

/// Where characteristic-function values come from.
#[derive(Debug, Clone)]
pub enum CfSource {
    /// Closed-form CF of one component law on R^d.
    Exact(ComponentDist),
    /// Closed-form joint CF of a tuple, argument in R^{n d}.
    ExactJoint(ProductDist),
    Empirical(EmpiricalCf),
}

/// Empirical CF of one or more component blocks of a sample matrix.
///
/// With several blocks the phasors are averaged per replicate, which is the
/// pooled estimator for identically distributed components. In joint mode the
/// argument spans the whole row.
#[derive(Debug, Clone)]
pub struct EmpiricalCf {
    samples: Arc<SampleMatrix>,
    blocks: Vec<usize>,
    joint: bool,
    mean: Vec<f64>,
}

impl EmpiricalCf {
    pub fn component(samples: Arc<SampleMatrix>, j: usize) -> Result<Self> {
        Self::pooled(samples, vec![j])
    }

    pub fn pooled(samples: Arc<SampleMatrix>, blocks: Vec<usize>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySample);
        }
        if blocks.is_empty() || blocks.iter().any(|&j| j >= samples.n()) {
            return Err(Error::Precondition(format!(
                "component selector {blocks:?} out of range for n = {}",
                samples.n()
            )));
        }
        let d = samples.d();
        let mut mean = vec![0.0; d];
        for k in 0..samples.len() {
            for &j in &blocks {
                for (m, x) in mean.iter_mut().zip(samples.component(k, j)) {
                    *m += x;
                }
            }
        }
        let total = (samples.len() * blocks.len()) as f64;
        mean.iter_mut().for_each(|m| *m /= total);
        Ok(Self {
            samples,
            blocks,
            joint: false,
            mean,
        })
    }

    pub fn joint(samples: Arc<SampleMatrix>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySample);
        }
        let w = samples.n() * samples.d();
        let mut mean = vec![0.0; w];
        for row in samples.rows() {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        let total = samples.len() as f64;
        mean.iter_mut().for_each(|m| *m /= total);
        Ok(Self {
            samples,
            blocks: Vec::new(),
            joint: true,
            mean,
        })
    }

    pub fn samples(&self) -> &SampleMatrix {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        if self.joint {
            self.samples.n() * self.samples.d()
        } else {
            self.samples.d()
        }
    }

    /// Sample mean of the selected coordinates; predicts the phase of the CF.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Replicate-level phasor `e_k(arg)`, averaged over pooled blocks.
    #[inline]
    fn for_each_part(&self, k: usize, mut f: impl FnMut(&[f64])) {
        if self.joint {
            f(self.samples.row(k));
        } else {
            for &j in &self.blocks {
                f(self.samples.component(k, j));
            }
        }
    }

    fn parts(&self) -> f64 {
        if self.joint {
            1.0
        } else {
            self.blocks.len() as f64
        }
    }

    /// Phasors along several lines sharing a base: entry `[line][k]` is the
    /// mean of `exp(i<x, base + k * step_line>)` over replicates.
    pub fn lines(&self, base: &[f64], steps: &[(Vec<f64>, usize)]) -> Vec<Vec<Complex64>> {
        let n = self.len();
        let chunks = n.div_ceil(ROW_CHUNK);
        let partials: Vec<Vec<Vec<Complex64>>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut batch = PhasorBatch::new(base, steps);
                for k in c * ROW_CHUNK..((c + 1) * ROW_CHUNK).min(n) {
                    self.for_each_part(k, |x| batch.push(x));
                }
                batch.finish()
            })
            .collect();
        let scale = 1.0 / (n as f64 * self.parts());
        let mut out: Vec<Vec<Complex64>> = steps.iter().map(|(_, cnt)| vec![Complex64::default(); *cnt]).collect();
        for p in partials {
            for (o, a) in out.iter_mut().zip(p) {
                for (x, y) in o.iter_mut().zip(a) {
                    *x += y;
                }
            }
        }
        out.iter_mut().flatten().for_each(|x| *x *= scale);
        out
    }

    /// Adds `coef[l][k] * e_r(base + k step_l)` for replicates
    /// `start..start + len` into lane `r - start` of `zr`/`zi`, indexed
    /// `[line][k][lane]`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn add_weighted_phasors(
        &self,
        start: usize,
        len: usize,
        base: &[f64],
        steps: &[(Vec<f64>, usize)],
        coef: &[Vec<Complex64>],
        zr: &mut [Vec<[f64; BATCH]>],
        zi: &mut [Vec<[f64; BATCH]>],
    ) {
        let parts = if self.joint { 1 } else { self.blocks.len() };
        let scale = 1.0 / parts as f64;
        let mut th0 = [0.0; BATCH];
        let mut th = vec![[0.0; BATCH]; steps.len()];
        for p in 0..parts {
            for i in 0..len {
                let x = if self.joint {
                    self.samples.row(start + i)
                } else {
                    self.samples.component(start + i, self.blocks[p])
                };
                th0[i] = dot(x, base);
                for (t, (st, _)) in th.iter_mut().zip(steps) {
                    t[i] = dot(x, st);
                }
            }
            let (mut c0, mut s0) = ([0.0; BATCH], [0.0; BATCH]);
            for i in 0..len {
                let (s, c) = sin_cos(th0[i]);
                (s0[i], c0[i]) = (s * scale, c * scale);
            }
            for (l, (_, cnt)) in steps.iter().enumerate() {
                let (mut cs, mut ss) = ([0.0; BATCH], [0.0; BATCH]);
                for i in 0..len {
                    (ss[i], cs[i]) = sin_cos(th[l][i]);
                }
                let (mut vr, mut vi) = (c0, s0);
                for k in 0..*cnt {
                    let (cr, ci) = (coef[l][k].re, coef[l][k].im);
                    let (ar, ai) = (&mut zr[l][k], &mut zi[l][k]);
                    for i in 0..len {
                        ar[i] += vr[i] * cr - vi[i] * ci;
                        ai[i] += vr[i] * ci + vi[i] * cr;
                        let r = vr[i] * cs[i] - vi[i] * ss[i];
                        vi[i] = vr[i] * ss[i] + vi[i] * cs[i];
                        vr[i] = r;
                    }
                }
            }
        }
    }

    /// Per-replicate phasors along lines, written into `buf[line][k]`.
    fn row_lines(&self, k: usize, base: &[f64], steps: &[(Vec<f64>, usize)], buf: &mut [Vec<Complex64>]) {
        for b in buf.iter_mut() {
            b.iter_mut().for_each(|x| *x = Complex64::default());
        }
        let scale = 1.0 / self.parts();
        self.for_each_part(k, |x| {
            let e0 = cis(dot(x, base));
            for ((step, _), a) in steps.iter().zip(buf.iter_mut()) {
                let ec = cis(dot(x, step));
                let mut v = e0;
                for slot in a.iter_mut() {
                    *slot += v * scale;
                    v *= ec;
                }
            }
        });
    }

    /// Empirical CF and its standard error at one point.
    pub fn eval(&self, f: &[f64]) -> (Complex64, f64) {
        let n = self.len();
        let (mut s, mut sre2, mut sim2) = (Complex64::default(), 0.0, 0.0);
        let scale = 1.0 / self.parts();
        for k in 0..n {
            let mut e = Complex64::default();
            self.for_each_part(k, |x| e += cis(dot(x, f)) * scale);
            s += e;
            sre2 += e.re * e.re;
            sim2 += e.im * e.im;
        }
        let nf = n as f64;
        let mean = s / nf;
        if n < 2 {
            return (mean, 0.0);
        }
        let var_re = (sre2 - nf * mean.re * mean.re).max(0.0) / (nf - 1.0);
        let var_im = (sim2 - nf * mean.im * mean.im).max(0.0) / (nf - 1.0);
        (mean, ((var_re + var_im) / nf).sqrt())
    }

    /// Largest radius `r` such that the CF modulus stays at or above `floor` on
    /// `[0, r] * u` for a unit direction `u`.
    fn scan_radius(&self, u: &[f64], floor: f64) -> f64 {
        let steps = (SCAN_MAX / SCAN_STEP).round() as usize;
        let step: Vec<f64> = u.iter().map(|x| x * SCAN_STEP).collect();
        let zero = vec![0.0; u.len()];
        let vals = &self.lines(&zero, &[(step, steps + 1)])[0];
        crossing(vals.iter().map(|v| v.norm()), floor)
    }
}

/// Index-based radius of the first floor crossing along a scan.
fn crossing(moduli: impl Iterator<Item = f64>, floor: f64) -> f64 {
    let mut last = 0.0;
    for (k, m) in moduli.enumerate() {
        if m < floor {
            return last;
        }
        last = k as f64 * SCAN_STEP;
    }
    last
}

#[inline]
fn cis(theta: f64) -> Complex64 {
    let (s, c) = sin_cos(theta);
    Complex64::new(c, s)
}

/// Replicates accumulated per batch; phasors are formed lane-wise so the
/// trigonometry and the recurrences vectorize.
pub(crate) const BATCH: usize = 64;

/// Sums of `exp(i<x, base + k step>)` over replicates, for several lines.
struct PhasorBatch<'a> {
    len: usize,
    base: &'a [f64],
    steps: &'a [(Vec<f64>, usize)],
    /// Buffered replicate coordinates, `[coordinate][lane]`.
    xs: Vec<[f64; BATCH]>,
    /// Lane accumulators `[line][k]`, real and imaginary parts.
    re: Vec<Vec<[f64; BATCH]>>,
    im: Vec<Vec<[f64; BATCH]>>,
}

impl<'a> PhasorBatch<'a> {
    fn new(base: &'a [f64], steps: &'a [(Vec<f64>, usize)]) -> Self {
        Self {
            len: 0,
            base,
            steps,
            xs: vec![[0.0; BATCH]; base.len()],
            re: steps.iter().map(|(_, c)| vec![[0.0; BATCH]; *c]).collect(),
            im: steps.iter().map(|(_, c)| vec![[0.0; BATCH]; *c]).collect(),
        }
    }

    #[inline]
    fn push(&mut self, x: &[f64]) {
        let i = self.len;
        for (col, v) in self.xs.iter_mut().zip(x) {
            col[i] = *v;
        }
        self.len += 1;
        if self.len == BATCH {
            self.flush();
        }
    }

    fn angles(&self, dir: &[f64]) -> [f64; BATCH] {
        let mut th = [0.0; BATCH];
        for (col, w) in self.xs.iter().zip(dir) {
            for i in 0..BATCH {
                th[i] += col[i] * w;
            }
        }
        th
    }

    fn flush(&mut self) {
        let m = self.len;
        if m == 0 {
            return;
        }
        let th0 = self.angles(self.base);
        let (mut c0, mut s0) = ([0.0; BATCH], [0.0; BATCH]);
        for i in 0..BATCH {
            (s0[i], c0[i]) = sin_cos(th0[i]);
        }
        // lanes past `m` hold stale coordinates; their phasors are masked out
        for i in m..BATCH {
            c0[i] = 0.0;
            s0[i] = 0.0;
        }
        for (l, (step, cnt)) in self.steps.iter().enumerate() {
            let th = self.angles(step);
            let (mut cs, mut ss) = ([0.0; BATCH], [0.0; BATCH]);
            for i in 0..BATCH {
                (ss[i], cs[i]) = sin_cos(th[i]);
            }
            let (mut vr, mut vi) = (c0, s0);
            for k in 0..*cnt {
                let (ar, ai) = (&mut self.re[l][k], &mut self.im[l][k]);
                for i in 0..BATCH {
                    ar[i] += vr[i];
                    ai[i] += vi[i];
                    let r = vr[i] * cs[i] - vi[i] * ss[i];
                    vi[i] = vr[i] * ss[i] + vi[i] * cs[i];
                    vr[i] = r;
                }
            }
        }
        self.len = 0;
    }

    fn finish(mut self) -> Vec<Vec<Complex64>> {
        self.flush();
        self.re
            .iter()
            .zip(&self.im)
            .map(|(re, im)| {
                re.iter()
                    .zip(im)
                    .map(|(r, i)| Complex64::new(r.iter().sum(), i.iter().sum()))
                    .collect()
            })
            .collect()
    }
}

/// Sine and cosine without branches, so loops over it vectorize.
///
/// Three-part Cody-Waite reduction by `pi/2` and the fdlibm minimax kernels
/// on `[-pi/4, pi/4]`; absolute error below `1e-15` for `|theta| < 1e6`.
#[inline(always)]
fn sin_cos(theta: f64) -> (f64, f64) {
    const FRAC_2_PI: f64 = 6.366_197_723_675_814e-1;
    const PIO2_1: f64 = 1.570_796_326_734_125_6;
    const PIO2_2: f64 = 6.077_100_506_303_966e-11;
    const PIO2_3: f64 = 2.022_266_248_795_950_6e-21;
    const S: [f64; 6] = [
        -1.666_666_666_666_663_2e-1,
        8.333_333_333_322_49e-3,
        -1.984_126_982_985_795e-4,
        2.755_731_370_707_007e-6,
        -2.505_076_025_340_686_3e-8,
        1.589_690_995_211_55e-10,
    ];
    const C: [f64; 6] = [
        4.166_666_666_666_66e-2,
        -1.388_888_888_887_411e-3,
        2.480_158_728_947_673e-5,
        -2.755_731_435_139_066_3e-7,
        2.087_572_321_298_175e-9,
        -1.135_964_755_778_819_5e-11,
    ];
    // round to nearest through the 1.5 * 2^52 shifter (libm round does not inline)
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    let k = (theta * FRAC_2_PI + SHIFTER) - SHIFTER;
    let r = ((theta - k * PIO2_1) - k * PIO2_2) - k * PIO2_3;
    let z = r * r;
    let sp = S[0] + z * (S[1] + z * (S[2] + z * (S[3] + z * (S[4] + z * S[5]))));
    let cp = C[0] + z * (C[1] + z * (C[2] + z * (C[3] + z * (C[4] + z * C[5]))));
    let sr = r + r * z * sp;
    let cr = 1.0 - 0.5 * z + z * z * cp;
    // quadrant bits in floating point: q = k mod 4 = 2 h + swap
    let q = k - 4.0 * ((0.25 * k - 0.375 + SHIFTER) - SHIFTER);
    let h = (0.5 * q - 0.25 + SHIFTER) - SHIFTER;
    let swap = q - 2.0 * h;
    let (s, c) = (sr + swap * (cr - sr), cr + swap * (sr - cr));
    let s_sign = 1.0 - 2.0 * h;
    let c_sign = 1.0 - 2.0 * (swap + h - 2.0 * swap * h);
    (s * s_sign, c * c_sign)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl CfSource {
    pub fn dim(&self) -> usize {
        match self {
            Self::Exact(c) => c.dim(),
            Self::ExactJoint(p) => p.n() * p.d(),
            Self::Empirical(e) => e.dim(),
        }
    }

    pub fn is_exact(&self) -> bool {
        !matches!(self, Self::Empirical(_))
    }

    /// CF value and standard error at `arg`.
    pub fn eval(&self, arg: &[f64]) -> Result<(Complex64, f64)> {
        if arg.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: arg.len(),
            });
        }
        match self {
            Self::Exact(c) => Ok((c.exact_cf(arg)?, 0.0)),
            Self::ExactJoint(p) => {
                let d = p.d();
                let fs: Vec<Vec<f64>> = arg.chunks(d).map(|c| c.to_vec()).collect();
                Ok((p.exact_joint_cf(&fs)?, 0.0))
            }
            Self::Empirical(e) => Ok(e.eval(arg)),
        }
    }

    fn exact_value(&self, arg: &[f64]) -> Complex64 {
        self.eval(arg).map(|v| v.0).unwrap_or_default()
    }

    /// Radius of the floor-bounded neighborhood of zero: the smallest scan
    /// radius over a fixed set of directions (a single direction in dimension
    /// one, where the modulus is even).
    pub fn neighborhood_radius(&self, floor: f64) -> f64 {
        scan_directions(self.dim())
            .iter()
            .map(|u| match self {
                Self::Empirical(e) => e.scan_radius(u, floor),
                _ => {
                    let steps = (SCAN_MAX / SCAN_STEP).round() as usize;
                    crossing(
                        (0..=steps).map(|k| {
                            let t = k as f64 * SCAN_STEP;
                            let p: Vec<f64> = u.iter().map(|x| x * t).collect();
                            self.exact_value(&p).norm()
                        }),
                        floor,
                    )
                }
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Up to eight unit scan directions: coordinate axes, then the all-ones and
/// alternating-sign diagonals.
fn scan_directions(dim: usize) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = (0..dim.min(6))
        .map(|i| {
            let mut v = vec![0.0; dim];
            v[i] = 1.0;
            v
        })
        .collect();
    if dim > 1 {
        let s = 1.0 / (dim as f64).sqrt();
        dirs.push(vec![s; dim]);
        dirs.push((0..dim).map(|i| if i % 2 == 0 { s } else { -s }).collect());
    }
    dirs
}

/// Evaluator of `f -> E exp(i<xi', f>)`, with `xi' = A xi` when a pre-transform
/// is attached (folded in as `A^T f`).
#[derive(Debug, Clone)]
pub struct CharFnHandle {
    source: CfSource,
    transform: Option<DMatrix<f64>>,
}

impl CharFnHandle {
    pub fn new(source: CfSource) -> Self {
        Self {
            source,
            transform: None,
        }
    }

    pub fn exact(dist: ComponentDist) -> Self {
        Self::new(CfSource::Exact(dist))
    }

    pub fn empirical(samples: Arc<SampleMatrix>, component: usize) -> Result<Self> {
        Ok(Self::new(CfSource::Empirical(EmpiricalCf::component(samples, component)?)))
    }

    pub fn with_transform(mut self, a: &LinearOp<f64>) -> Result<Self> {
        if a.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: a.dim(),
            });
        }
        let at = a.matrix().transpose();
        self.transform = Some(match self.transform.take() {
            Some(prev) => prev * at,
            None => at,
        });
        Ok(self)
    }

    pub fn source(&self) -> &CfSource {
        &self.source
    }

    /// Matrix mapping the handle's argument to the source argument.
    pub fn argument_map(&self) -> DMatrix<f64> {
        self.transform
            .clone()
            .unwrap_or_else(|| DMatrix::identity(self.dim(), self.dim()))
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    pub fn eval(&self, f: &[f64]) -> Result<(Complex64, f64)> {
        match &self.transform {
            None => self.source.eval(f),
            Some(t) => {
                if f.len() != t.ncols() {
                    return Err(Error::DimensionMismatch {
                        expected: t.ncols(),
                        got: f.len(),
                    });
                }
                let arg = t * nalgebra::DVector::from_column_slice(f);
                self.source.eval(arg.as_slice())
            }
        }
    }
}

/// Empirical characteristic function of component `j` (optionally of `A xi_j`)
/// with its standard error.
pub fn ecf(
    samples: &Arc<SampleMatrix>,
    j: usize,
    transform: Option<&LinearOp<f64>>,
    f: &[f64],
) -> Result<(Complex64, f64)> {
    let mut h = CharFnHandle::empirical(samples.clone(), j)?;
    if let Some(a) = transform {
        h = h.with_transform(a)?;
    }
    h.eval(f)
}
