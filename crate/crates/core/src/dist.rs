//! Distribution families on R^d and on n-tuples: closed-form characteristic
//! functions, seeded samplers, reflection/symmetrization, and jointly Gaussian
//! tuples that are Q-independent without being independent.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{BlockLayout, BlockPolynomial};
use crate::rng;
use crate::Poly;

const SYMMETRY_TOL: f64 = 1e-12;
const EIGEN_TOL: f64 = 1e-12;

/// Rows drawn from one random stream; fixes the parallel decomposition.
pub const SAMPLE_BLOCK: usize = 8192;

/// One-dimensional families with closed-form characteristic functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ScalarFamily {
    #[serde(rename = "gaussian1d")]
    Gaussian1d {
        #[serde(default)]
        mean: f64,
        #[serde(default = "one")]
        std: f64,
    },
    Uniform { a: f64, b: f64 },
    /// Centered Laplace with scale `b`.
    Laplace { b: f64 },
    Exponential { rate: f64 },
    /// `w N(m1, sigma^2) + (1-w) N(m2, sigma^2)`
    GaussianMixture { w: f64, m1: f64, m2: f64, sigma: f64 },
}

fn one() -> f64 {
    1.0
}

impl ScalarFamily {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDistribution(msg));
        match *self {
            Self::Gaussian1d { mean, std } if !(mean.is_finite() && std >= 0.0) => {
                bad(format!("gaussian1d needs finite mean and std >= 0, got ({mean}, {std})"))
            }
            Self::Uniform { a, b } if !(a.is_finite() && b.is_finite() && a < b) => {
                bad(format!("uniform needs a < b, got ({a}, {b})"))
            }
            Self::Laplace { b } if !(b > 0.0 && b.is_finite()) => {
                bad(format!("laplace scale must be positive, got {b}"))
            }
            Self::Exponential { rate } if !(rate > 0.0 && rate.is_finite()) => {
                bad(format!("exponential rate must be positive, got {rate}"))
            }
            Self::GaussianMixture { w, sigma, .. } if !((0.0..=1.0).contains(&w) && sigma >= 0.0) => {
                bad(format!("mixture needs w in [0,1] and sigma >= 0, got ({w}, {sigma})"))
            }
            _ => Ok(()),
        }
    }

    pub fn cf(&self, t: f64) -> Complex64 {
        let gauss = |m: f64, s: f64| Complex64::from_polar((-0.5 * s * s * t * t).exp(), m * t);
        match *self {
            Self::Gaussian1d { mean, std } => gauss(mean, std),
            Self::Uniform { a, b } => {
                let half = 0.5 * (b - a) * t;
                let sinc = if half.abs() < 1e-8 {
                    1.0 - half * half / 6.0
                } else {
                    half.sin() / half
                };
                Complex64::from_polar(1.0, 0.5 * (a + b) * t) * sinc
            }
            Self::Laplace { b } => Complex64::from(1.0 / (1.0 + b * b * t * t)),
            Self::Exponential { rate } => rate / Complex64::new(rate, -t),
            Self::GaussianMixture { w, m1, m2, sigma } => {
                gauss(m1, sigma) * w + gauss(m2, sigma) * (1.0 - w)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Gaussian1d { mean, std } => {
                mean + std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
            }
            Self::Uniform { a, b } => rng.gen_range(a..b),
            Self::Laplace { b } => {
                let u: f64 = rng.gen::<f64>() - 0.5;
                -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            Self::Exponential { rate } => Exp::new(rate).expect("validated rate").sample(rng),
            Self::GaussianMixture { w, m1, m2, sigma } => {
                let m = if rng.gen::<f64>() < w { m1 } else { m2 };
                Normal::new(m, sigma).expect("validated sigma").sample(rng)
            }
        }
    }

    pub fn is_gaussian(&self) -> bool {
        match *self {
            Self::Gaussian1d { .. } => true,
            Self::GaussianMixture { w, m1, m2, .. } => m1 == m2 || w == 0.0 || w == 1.0,
            _ => false,
        }
    }

    /// Mean and variance when the family is Gaussian.
    pub fn gaussian_params(&self) -> Option<(f64, f64)> {
        match *self {
            Self::Gaussian1d { mean, std } => Some((mean, std * std)),
            Self::GaussianMixture { w, m1, m2, sigma } if self.is_gaussian() => {
                Some((if w == 0.0 { m2 } else { m1 }, sigma * sigma))
            }
            _ => None,
        }
    }
}

/// Gaussian measure on R^d with mean `m` and covariance `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDist {
    mean: Vec<f64>,
    cov: DMatrix<f64>,
    /// `V diag(sqrt(lambda))`, with negative roundoff eigenvalues clamped to 0.
    factor: DMatrix<f64>,
}

impl GaussianDist {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: cov.nrows(),
            });
        }
        if mean.iter().chain(cov.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidDistribution("non-finite Gaussian parameter".into()));
        }
        let scale = cov.amax().max(1.0);
        if (&cov - cov.transpose()).amax() > SYMMETRY_TOL * scale {
            return Err(Error::InvalidDistribution("covariance is not symmetric".into()));
        }
        let factor = psd_factor(&cov, "covariance")?;
        Ok(Self { mean, cov, factor })
    }

    pub fn standard(d: usize) -> Self {
        Self::new(vec![0.0; d], DMatrix::identity(d, d)).expect("identity covariance")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// `exp(i<m,f> - 1/2 <Rf,f>)`
    pub fn cf(&self, f: &[f64]) -> Complex64 {
        let v = DVector::from_column_slice(f);
        let quad = v.dot(&(&self.cov * &v));
        let lin: f64 = self.mean.iter().zip(f).map(|(m, x)| m * x).sum();
        Complex64::from_polar((-0.5 * quad).exp(), lin)
    }

    pub fn reflect(&self) -> Self {
        Self {
            mean: self.mean.iter().map(|m| -m).collect(),
            ..self.clone()
        }
    }

    pub fn symmetrize(&self) -> Self {
        Self::new(vec![0.0; self.dim()], &self.cov * 2.0).expect("scaled PSD")
    }

    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.dim();
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.mean[i] + (0..d).map(|k| self.factor[(i, k)] * z[k]).sum::<f64>();
        }
    }
}

fn psd_factor(cov: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let scale = cov.amax().max(1.0);
    let eig = SymmetricEigen::new(cov.clone());
    if let Some(&lo) = eig.eigenvalues.iter().find(|&&l| l < -EIGEN_TOL * scale) {
        return Err(Error::InvalidDistribution(format!(
            "{what} is not positive semidefinite (eigenvalue {lo:.3e})"
        )));
    }
    let mut factor = eig.eigenvectors.clone();
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        factor.column_mut(k).scale_mut(l.max(0.0).sqrt());
    }
    Ok(factor)
}

/// Law of one component xi_j on R^d.
#[derive(Debug, Clone, PartialEq)]
pub enum ComponentDist {
    Gaussian(GaussianDist),
    /// Independent coordinates, one scalar family per coordinate.
    Product(Vec<ScalarFamily>),
    /// Law of `-xi`.
    Reflected(Box<ComponentDist>),
    /// Law of `xi - xi'` for independent copies.
    Symmetrized(Box<ComponentDist>),
}

impl ComponentDist {
    /// Same scalar family on each of `d` coordinates.
    pub fn iid(family: ScalarFamily, d: usize) -> Result<Self> {
        family.validate()?;
        Ok(Self::Product(vec![family; d]))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian(g) => g.dim(),
            Self::Product(v) => v.len(),
            Self::Reflected(b) | Self::Symmetrized(b) => b.dim(),
        }
    }

    pub fn exact_cf(&self, f: &[f64]) -> Result<Complex64> {
        if f.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: f.len(),
            });
        }
        Ok(self.cf_unchecked(f))
    }

    fn cf_unchecked(&self, f: &[f64]) -> Complex64 {
        match self {
            Self::Gaussian(g) => g.cf(f),
            Self::Product(v) => v.iter().zip(f).map(|(s, &t)| s.cf(t)).product(),
            Self::Reflected(b) => b.cf_unchecked(f).conj(),
            Self::Symmetrized(b) => Complex64::from(b.cf_unchecked(f).norm_sqr()),
        }
    }

    pub fn reflect(&self) -> Self {
        match self {
            Self::Gaussian(g) => Self::Gaussian(g.reflect()),
            Self::Reflected(b) => (**b).clone(),
            Self::Symmetrized(_) => self.clone(),
            Self::Product(_) => Self::Reflected(Box::new(self.clone())),
        }
    }

    pub fn symmetrize(&self) -> Self {
        match self {
            Self::Gaussian(g) => Self::Gaussian(g.symmetrize()),
            Self::Reflected(b) => b.symmetrize(),
            _ => Self::Symmetrized(Box::new(self.clone())),
        }
    }

    /// Gaussian parameters when the law is Gaussian (possibly degenerate).
    pub fn as_gaussian(&self) -> Option<GaussianDist> {
        match self {
            Self::Gaussian(g) => Some(g.clone()),
            Self::Product(v) => {
                let params: Option<Vec<(f64, f64)>> = v.iter().map(ScalarFamily::gaussian_params).collect();
                let params = params?;
                let mean = params.iter().map(|p| p.0).collect();
                let cov = DMatrix::from_diagonal(&DVector::from_iterator(v.len(), params.iter().map(|p| p.1)));
                GaussianDist::new(mean, cov).ok()
            }
            Self::Reflected(b) => b.as_gaussian().map(|g| g.reflect()),
            Self::Symmetrized(b) => b.as_gaussian().map(|g| g.symmetrize()),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        self.as_gaussian().is_some()
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Gaussian(_) => Ok(()),
            Self::Product(v) => v.iter().try_for_each(ScalarFamily::validate),
            Self::Reflected(b) | Self::Symmetrized(b) => b.validate(),
        }
    }

    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            Self::Gaussian(g) => g.sample_into(rng, out),
            Self::Product(v) => {
                for (o, s) in out.iter_mut().zip(v) {
                    *o = s.sample(rng);
                }
            }
            Self::Reflected(b) => {
                b.sample_into(rng, out);
                out.iter_mut().for_each(|x| *x = -*x);
            }
            Self::Symmetrized(b) => {
                let mut other = vec![0.0; out.len()];
                b.sample_into(rng, out);
                b.sample_into(rng, &mut other);
                out.iter_mut().zip(&other).for_each(|(x, y)| *x -= y);
            }
        }
    }
}

/// Dependence structure of an n-tuple.
#[derive(Debug, Clone, PartialEq)]
pub enum Dependence {
    Independent,
    /// Jointly Gaussian tuple with cross-covariance blocks `Sigma_ij`, `i < j`
    /// (0-based component indices).
    Coupled(Vec<(usize, usize, DMatrix<f64>)>),
    /// Every component equals the first one.
    Replicated,
}

/// An n-tuple (xi_1, ..., xi_n) of random vectors in R^d.
#[derive(Debug, Clone)]
pub struct ProductDist {
    components: Vec<ComponentDist>,
    dependence: Dependence,
    joint: Option<GaussianDist>,
}

impl ProductDist {
    pub fn independent(components: Vec<ComponentDist>) -> Result<Self> {
        Self::new(components, Dependence::Independent)
    }

    pub fn new(components: Vec<ComponentDist>, dependence: Dependence) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::InvalidDistribution("tuple needs at least one component".into()));
        };
        let d = first.dim();
        for c in &components {
            c.validate()?;
            if c.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: c.dim(),
                });
            }
        }
        let joint = match &dependence {
            Dependence::Coupled(blocks) => Some(joint_gaussian(&components, blocks)?),
            _ => None,
        };
        Ok(Self {
            components,
            dependence,
            joint,
        })
    }

    /// n iid copies of one component law.
    pub fn iid(component: ComponentDist, n: usize) -> Result<Self> {
        Self::independent(vec![component; n])
    }

    pub fn n(&self) -> usize {
        self.components.len()
    }

    pub fn d(&self) -> usize {
        self.components[0].dim()
    }

    pub fn components(&self) -> &[ComponentDist] {
        &self.components
    }

    pub fn component(&self, j: usize) -> &ComponentDist {
        &self.components[j]
    }

    pub fn dependence(&self) -> &Dependence {
        &self.dependence
    }

    /// Joint characteristic function at `(f_1, ..., f_n)`.
    pub fn exact_joint_cf(&self, fs: &[Vec<f64>]) -> Result<Complex64> {
        if fs.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: fs.len(),
            });
        }
        match &self.dependence {
            Dependence::Independent => fs
                .iter()
                .zip(&self.components)
                .map(|(f, c)| c.exact_cf(f))
                .product(),
            Dependence::Coupled(_) => {
                let flat: Vec<f64> = fs.iter().flatten().copied().collect();
                Ok(self.joint.as_ref().expect("coupled joint").cf(&flat))
            }
            Dependence::Replicated => {
                let mut sum = vec![0.0; self.d()];
                for f in fs {
                    for (s, x) in sum.iter_mut().zip(f) {
                        *s += x;
                    }
                }
                self.components[0].exact_cf(&sum)
            }
        }
    }

    /// Draws `n_samples` replicates; bitwise-deterministic in `seed` regardless
    /// of thread count.
    pub fn sample(&self, n_samples: usize, seed: u64) -> Result<SampleMatrix> {
        if n_samples == 0 {
            return Err(Error::EmptySample);
        }
        let (n, d) = (self.n(), self.d());
        let width = n * d;
        let mut data = vec![0.0; n_samples * width];
        data.par_chunks_mut(SAMPLE_BLOCK * width)
            .enumerate()
            .for_each(|(block, chunk)| self.fill_block(seed, block as u64, chunk));
        Ok(SampleMatrix {
            n,
            d,
            seed,
            data,
        })
    }

    fn fill_block(&self, seed: u64, block: u64, chunk: &mut [f64]) {
        let d = self.d();
        let width = self.n() * d;
        match &self.dependence {
            Dependence::Coupled(_) => {
                let joint = self.joint.as_ref().expect("coupled joint");
                let mut rng = rng::stream(seed, &[rng::purpose::SAMPLE, u64::MAX, block]);
                for row in chunk.chunks_mut(width) {
                    joint.sample_into(&mut rng, row);
                }
            }
            Dependence::Independent => {
                for (j, comp) in self.components.iter().enumerate() {
                    let mut rng = rng::stream(seed, &[rng::purpose::SAMPLE, j as u64, block]);
                    for row in chunk.chunks_mut(width) {
                        comp.sample_into(&mut rng, &mut row[j * d..(j + 1) * d]);
                    }
                }
            }
            Dependence::Replicated => {
                let mut rng = rng::stream(seed, &[rng::purpose::SAMPLE, 0, block]);
                for row in chunk.chunks_mut(width) {
                    self.components[0].sample_into(&mut rng, &mut row[..d]);
                    for j in 1..self.n() {
                        row.copy_within(0..d, j * d);
                    }
                }
            }
        }
    }
}

fn joint_gaussian(
    components: &[ComponentDist],
    blocks: &[(usize, usize, DMatrix<f64>)],
) -> Result<GaussianDist> {
    let n = components.len();
    let d = components[0].dim();
    let mut mean = Vec::with_capacity(n * d);
    let mut cov = DMatrix::zeros(n * d, n * d);
    for (j, c) in components.iter().enumerate() {
        let g = c.as_gaussian().ok_or_else(|| {
            Error::Unsupported(format!("coupling requires Gaussian components; component {} is not", j + 1))
        })?;
        mean.extend_from_slice(g.mean());
        cov.view_mut((j * d, j * d), (d, d)).copy_from(g.cov());
    }
    for (i, j, s) in blocks {
        let (i, j) = (*i, *j);
        if i >= n || j >= n || i == j {
            return Err(Error::InvalidDistribution(format!(
                "coupling block ({}, {}) is out of range",
                i + 1,
                j + 1
            )));
        }
        if s.nrows() != d || s.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: s.nrows(),
            });
        }
        cov.view_mut((i * d, j * d), (d, d)).copy_from(s);
        cov.view_mut((j * d, i * d), (d, d)).copy_from(&s.transpose());
    }
    psd_factor(&cov, "block covariance")?;
    GaussianDist::new(mean, cov)
}

/// Exact log-ratio `q(f_1..f_n) = -sum_{i<j} <Sigma_ij f_j, f_i>` of a coupled
/// Gaussian tuple, on blocks named `f1..fn`.
pub fn coupled_gaussian_q(dist: &ProductDist) -> Result<Poly> {
    let n = dist.n();
    let d = dist.d();
    let layout = component_layout(n, d);
    let blocks = match dist.dependence() {
        Dependence::Independent => return Ok(BlockPolynomial::zero(&layout)),
        Dependence::Coupled(b) => b,
        Dependence::Replicated => {
            return Err(Error::Unsupported(
                "replicated tuples have no polynomial log-ratio in general".into(),
            ))
        }
    };
    let mut terms = Vec::new();
    for (i, j, s) in blocks {
        for a in 0..d {
            for b in 0..d {
                if s[(a, b)] == 0.0 {
                    continue;
                }
                let mut e = vec![0u8; layout.nvars()];
                e[layout.var(*i, a)] += 1;
                e[layout.var(*j, b)] += 1;
                terms.push((e, Complex64::from(-s[(a, b)])));
            }
        }
    }
    Ok(BlockPolynomial::from_terms(&layout, terms)?)
}

/// Layout with blocks `f1..fn`.
pub fn component_layout(n: usize, d: usize) -> BlockLayout {
    BlockLayout::new((1..=n).map(|j| format!("f{j}")), d)
}

/// N replicates of an n-tuple in R^d, stored replicate-major with contiguous
/// component blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    n: usize,
    d: usize,
    seed: u64,
    data: Vec<f64>,
}

impl SampleMatrix {
    pub fn from_rows(n: usize, d: usize, seed: u64, data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptySample);
        }
        if data.len() % (n * d) != 0 {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: data.len() % (n * d),
            });
        }
        Ok(Self { n, d, seed, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.n * self.d)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let w = self.n * self.d;
        &self.data[k * w..(k + 1) * w]
    }

    pub fn component(&self, k: usize, j: usize) -> &[f64] {
        &self.row(k)[j * self.d..(j + 1) * self.d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.n * self.d)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<String> = (1..=self.n)
            .flat_map(|j| (1..=self.d).map(move |i| format!("comp{j}_dim{i}")))
            .collect();
        w.write_record(&header)?;
        for row in self.rows() {
            w.write_record(row.iter().map(|x| format!("{x:?}")))?;
        }
        w.flush()?;
        Ok(())
    }
}
