//! Q-independence: the log-ratio `q` of a joint CF against its marginals and
//! the residuals of the functional equations behind the characterization
//! theorems, as fields that can be gridded, dumped and degree-certified.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::charfn::{
    certify, CfSource, Certification, DegreeTestParams, EmpiricalCf, Field, LogCombination, LogMode,
    PolyDegreeCertificate, SeMethod, StarGrid, Verdict,
};
use crate::dist::{component_layout, ProductDist, SampleMatrix};
use crate::error::{Error, Result};
use crate::poly::BlockLayout;
use crate::{rng, Operator};

/// Which functional equation a field belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Equation {
    /// Q-independence of two linear forms.
    Lemma1,
    /// Symmetry of the conditional law of one linear form given another.
    Lemma4,
    /// Q-independence of the sample mean and the residue vector.
    Lemma6,
    /// The sample-mean residual on the slice `f = n h, g_1 = g, g_2 = -g`.
    SampleMeanSlice,
    /// Log-ratio of a joint CF to the product of its marginals.
    Q,
}

impl Equation {
    pub fn name(self) -> &'static str {
        match self {
            Self::Lemma1 => "lemma1",
            Self::Lemma4 => "lemma4",
            Self::Lemma6 => "lemma6",
            Self::SampleMeanSlice => "sample_mean_slice",
            Self::Q => "q",
        }
    }
}

impl fmt::Display for Equation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Equation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lemma1" => Self::Lemma1,
            "lemma4" => Self::Lemma4,
            "lemma6" => Self::Lemma6,
            "sample_mean_slice" => Self::SampleMeanSlice,
            "q" => Self::Q,
            _ => return Err(Error::Config(format!("unknown equation `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Exact,
    Empirical,
}

/// How log-CF fields are formed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldOptions {
    pub mode: LogMode,
    pub floor: f64,
    pub se_method: SeMethod,
}

impl Default for FieldOptions {
    fn default() -> Self {
        Self {
            mode: LogMode::Symmetrized,
            floor: 0.2,
            se_method: SeMethod::Influence,
        }
    }
}

impl FieldOptions {
    fn combination(&self, layout: BlockLayout) -> Result<LogCombination> {
        Ok(LogCombination::new(layout, self.mode, self.floor)?.with_se_method(self.se_method))
    }
}

/// CF sources of the components `xi_1..xi_n`, possibly shared between
/// identically distributed components, with optional pre-transforms
/// `xi'_j = T_j xi_j`.
#[derive(Debug, Clone)]
pub struct Marginals {
    sources: Vec<CfSource>,
    index: Vec<usize>,
    /// Argument maps `T_j^T`.
    maps: Vec<DMatrix<f64>>,
}

impl Marginals {
    /// One source per component.
    pub fn new(sources: Vec<CfSource>) -> Result<Self> {
        let n = sources.len();
        Self::with_index(sources, (0..n).collect())
    }

    /// One source shared by `n` components.
    pub fn shared(source: CfSource, n: usize) -> Result<Self> {
        Self::with_index(vec![source], vec![0; n])
    }

    fn with_index(sources: Vec<CfSource>, index: Vec<usize>) -> Result<Self> {
        let Some(first) = sources.first() else {
            return Err(Error::Precondition("at least one marginal is required".into()));
        };
        let d = first.dim();
        if let Some(s) = sources.iter().find(|s| s.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: s.dim(),
            });
        }
        let maps = vec![DMatrix::identity(d, d); index.len()];
        Ok(Self { sources, index, maps })
    }

    /// Exact marginals of a tuple; equal component laws share a source.
    pub fn exact(dist: &ProductDist) -> Result<Self> {
        let groups = identical_groups(dist);
        let mut index = vec![0; dist.n()];
        let mut sources = Vec::new();
        for (g, members) in groups.iter().enumerate() {
            sources.push(CfSource::Exact(dist.component(members[0]).clone()));
            for &j in members {
                index[j] = g;
            }
        }
        Self::with_index(sources, index)
    }

    /// Empirical marginals; components with equal laws in `dist` are pooled.
    pub fn empirical(samples: Arc<SampleMatrix>, dist: &ProductDist) -> Result<Self> {
        if samples.n() != dist.n() || samples.d() != dist.d() {
            return Err(Error::DimensionMismatch {
                expected: dist.n() * dist.d(),
                got: samples.n() * samples.d(),
            });
        }
        let groups = identical_groups(dist);
        let mut index = vec![0; dist.n()];
        let mut sources = Vec::new();
        for (g, members) in groups.into_iter().enumerate() {
            for &j in &members {
                index[j] = g;
            }
            sources.push(CfSource::Empirical(EmpiricalCf::pooled(samples.clone(), members)?));
        }
        Self::with_index(sources, index)
    }

    /// Marginals of `xi'_j = T_j xi_j`.
    pub fn transformed(mut self, ops: &[Operator]) -> Result<Self> {
        if ops.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: ops.len(),
            });
        }
        let d = self.dim();
        for (m, t) in self.maps.iter_mut().zip(ops) {
            if t.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: t.dim(),
                });
            }
            *m = &*m * t.matrix().transpose();
        }
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.index.len()
    }

    pub fn dim(&self) -> usize {
        self.sources[0].dim()
    }

    pub fn sources(&self) -> &[CfSource] {
        &self.sources
    }

    pub fn is_exact(&self) -> bool {
        self.sources.iter().all(CfSource::is_exact)
    }

    /// Registers the sources in `comb`, returning the slot of each component.
    fn register(&self, comb: &mut LogCombination) -> Result<Vec<usize>> {
        let slots = self
            .sources
            .iter()
            .map(|s| comb.add_source(s.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.index.iter().map(|&i| slots[i]).collect())
    }
}

/// Indices of components grouped by equal law, in order of first appearance.
pub fn identical_groups(dist: &ProductDist) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for j in 0..dist.n() {
        match groups.iter_mut().find(|g| dist.component(g[0]) == dist.component(j)) {
            Some(g) => g.push(j),
            None => groups.push(vec![j]),
        }
    }
    groups
}

fn check_operators(m: &Marginals, a: &[Operator], b: &[Operator]) -> Result<()> {
    for ops in [a, b] {
        if ops.len() != m.n() {
            return Err(Error::DimensionMismatch {
                expected: m.n(),
                got: ops.len(),
            });
        }
        if let Some(op) = ops.iter().find(|op| op.dim() != m.dim()) {
            return Err(Error::DimensionMismatch {
                expected: m.dim(),
                got: op.dim(),
            });
        }
    }
    Ok(())
}

/// `r(f, g) = sum_j [log mu_j(A_j* f + B_j* g) - log mu_j(A_j* f) - log mu_j(B_j* g)]`,
/// the log of the factor `exp{r}` in the Q-independence equation of
/// `L_1 = sum A_j xi_j` and `L_2 = sum B_j xi_j`.
pub fn lemma1_field(m: &Marginals, a: &[Operator], b: &[Operator], opts: &FieldOptions) -> Result<LogCombination> {
    check_operators(m, a, b)?;
    let mut comb = opts.combination(BlockLayout::new(["f", "g"], m.dim()))?;
    let slots = m.register(&mut comb)?;
    for j in 0..m.n() {
        let at = &m.maps[j] * a[j].matrix().transpose();
        let bt = &m.maps[j] * b[j].matrix().transpose();
        comb.add_term(slots[j], 1.0, &[(0, at.clone()), (1, bt.clone())]);
        comb.add_term(slots[j], -1.0, &[(0, at)]);
        comb.add_term(slots[j], -1.0, &[(1, bt)]);
    }
    Ok(comb)
}

/// `r(f, g) = sum_j [psi_j(A_j* f - B_j* g) - psi_j(A_j* f + B_j* g)]` with
/// `psi_j = -log mu_j`: the log of the factor in the symmetry equation for the
/// conditional law of `L_2` given `L_1`.
pub fn lemma4_field(m: &Marginals, a: &[Operator], b: &[Operator], opts: &FieldOptions) -> Result<LogCombination> {
    check_operators(m, a, b)?;
    let mut comb = opts.combination(BlockLayout::new(["f", "g"], m.dim()))?;
    let slots = m.register(&mut comb)?;
    for j in 0..m.n() {
        let at = &m.maps[j] * a[j].matrix().transpose();
        let bt = &m.maps[j] * b[j].matrix().transpose();
        comb.add_term(slots[j], -1.0, &[(0, at.clone()), (1, -&bt)]);
        comb.add_term(slots[j], 1.0, &[(0, at), (1, bt)]);
    }
    Ok(comb)
}

/// Layout `(f, g1, ..., gn)` of the sample-mean residual.
pub fn sample_mean_layout(n: usize, d: usize) -> BlockLayout {
    BlockLayout::new(std::iter::once("f".to_string()).chain((1..=n).map(|j| format!("g{j}"))), d)
}

/// Log of the factor `exp{r}` relating the joint CF of the sample mean `S` and
/// the residue vector `V` of `n` iid copies of a law to the product of their
/// marginals:
/// `r(f, g) = sum_j log mu(f/n + g_j - gbar) - n log mu(f/n) - sum_j log mu(g_j - gbar)`.
pub fn lemma6_field(source: &CfSource, n: usize, opts: &FieldOptions) -> Result<LogCombination> {
    if n < 2 {
        return Err(Error::Precondition(format!("the sample mean needs n >= 2, got {n}")));
    }
    let d = source.dim();
    let mut comb = opts.combination(sample_mean_layout(n, d))?;
    let s = comb.add_source(source.clone())?;
    let id = DMatrix::<f64>::identity(d, d);
    let inv_n = 1.0 / n as f64;
    // g_j - gbar as parts over the g blocks
    let centered = |j: usize| -> Vec<(usize, DMatrix<f64>)> {
        (0..n)
            .map(|k| {
                let c = if k == j { 1.0 - inv_n } else { -inv_n };
                (k + 1, &id * c)
            })
            .collect()
    };
    for j in 0..n {
        let mut parts = centered(j);
        parts.push((0, &id * inv_n));
        comb.add_term(s, 1.0, &parts);
        comb.add_term(s, -1.0, &centered(j));
    }
    comb.add_term(s, -(n as f64), &[(0, &id * inv_n)]);
    Ok(comb)
}

/// The sample-mean residual restricted to `f = n h, g_1 = g, g_2 = -g`, other
/// `g_j = 0`, as a field on `(h, g)`.
pub fn sample_mean_slice(lemma6: &LogCombination) -> Result<LogCombination> {
    let layout = lemma6.layout();
    let n = layout.blocks() - 1;
    let d = layout.dim();
    if n < 2 {
        return Err(Error::Precondition("the slice needs n >= 2".into()));
    }
    let mut embed = DMatrix::zeros(layout.nvars(), 2 * d);
    for i in 0..d {
        embed[(i, i)] = n as f64;
        embed[(d + i, d + i)] = 1.0;
        embed[(2 * d + i, d + i)] = -1.0;
    }
    Ok(lemma6.pulled_back(BlockLayout::new(["h", "g"], d), &embed))
}

/// `q(f_1..f_n) = log mu_joint(f_1..f_n) - sum_j log mu_j(f_j)`.
pub fn q_field(joint: &CfSource, m: &Marginals, opts: &FieldOptions) -> Result<LogCombination> {
    let (n, d) = (m.n(), m.dim());
    if joint.dim() != n * d {
        return Err(Error::DimensionMismatch {
            expected: n * d,
            got: joint.dim(),
        });
    }
    let layout = component_layout(n, d);
    let mut comb = opts.combination(layout.clone())?;
    let js = comb.add_source(joint.clone())?;
    comb.add_term_map(js, 1.0, DMatrix::identity(n * d, n * d));
    let slots = m.register(&mut comb)?;
    for j in 0..n {
        comb.add_term(slots[j], -1.0, &[(j, m.maps[j].clone())]);
    }
    Ok(comb)
}

/// Joint CF source of a tuple: closed form or the empirical joint CF.
pub fn joint_source(dist: &ProductDist, samples: Option<Arc<SampleMatrix>>) -> Result<CfSource> {
    Ok(match samples {
        None => CfSource::ExactJoint(dist.clone()),
        Some(s) => CfSource::Empirical(EmpiricalCf::joint(s)?),
    })
}

/// Star grid parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub rays: usize,
    pub radii: usize,
    pub radius: f64,
    pub floor: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            rays: 8,
            radii: 12,
            radius: 2.0,
            floor: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridValue {
    pub point: Vec<f64>,
    pub value: Complex64,
    pub se: f64,
}

/// Field values on a grid, after floor culling.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualGrid {
    pub equation: Equation,
    pub variables: Vec<String>,
    pub source: SourceKind,
    pub points: Vec<GridValue>,
    /// Grid points dropped because some stencil argument left its neighborhood.
    pub excluded: usize,
}

/// `q` on a grid.
pub type QEstimate = ResidualGrid;

impl ResidualGrid {
    pub fn origin(&self) -> Option<&GridValue> {
        self.points.iter().find(|p| p.point.iter().all(|x| *x == 0.0))
    }

    /// True when the value at the origin is zero within `1e-12 + 3 se`.
    pub fn is_normalized(&self) -> bool {
        self.origin().is_some_and(|o| o.value.norm() <= 1e-12 + 3.0 * o.se)
    }

    pub fn max_abs(&self) -> f64 {
        self.points.iter().map(|p| p.value.norm()).fold(0.0, f64::max)
    }

    pub fn max_se(&self) -> f64 {
        self.points.iter().map(|p| p.se).fold(0.0, f64::max)
    }

    /// CSV with one column per coordinate, then the real and imaginary parts
    /// of the value and its standard error.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let prefix = if self.equation == Equation::Q { "q" } else { "residual" };
        let mut header = self.variables.clone();
        header.extend([format!("{prefix}_re"), format!("{prefix}_im"), "se".to_string()]);
        w.write_record(&header)?;
        for p in &self.points {
            let mut rec: Vec<String> = p.point.iter().map(|x| fmt_num(*x)).collect();
            rec.extend([fmt_num(p.value.re), fmt_num(p.value.im), fmt_num(p.se)]);
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x:e}")
}

/// Evaluates `field` on a product of per-block star grids (one or two blocks)
/// or on a joint star grid (more blocks). Points are visited as lines along
/// the rays of the last grid, so empirical fields share their phasor sums.
pub fn evaluate_grid(field: &dyn Field, equation: Equation, spec: &GridSpec, seed: u64) -> Result<ResidualGrid> {
    let layout = field.layout();
    let (blocks, d, nv) = (layout.blocks(), layout.dim(), layout.nvars());
    let mut bases: Vec<Vec<f64>> = vec![Vec::new()];
    let ray_grid = if blocks <= 2 {
        for b in 0..blocks - 1 {
            let g = StarGrid::new(d, spec.rays, spec.radii, spec.radius, rng::derive_seed(seed, &[b as u64]))?;
            bases = bases
                .iter()
                .flat_map(|prefix| {
                    g.points().into_iter().map(move |(_, _, p)| {
                        let mut v = prefix.clone();
                        v.extend(p);
                        v
                    })
                })
                .collect();
        }
        StarGrid::new(d, spec.rays, spec.radii, spec.radius, rng::derive_seed(seed, &[blocks as u64 - 1]))?
    } else {
        StarGrid::new(nv, spec.rays, spec.radii, spec.radius, seed)?
    };
    let offset = nv - ray_grid.dim();
    let spacing = spec.radius / spec.radii as f64;
    let lines: Vec<(Vec<f64>, usize)> = ray_grid
        .directions()
        .iter()
        .map(|u| {
            let mut s = vec![0.0; nv];
            for (x, y) in s[offset..].iter_mut().zip(u) {
                *x = y * spacing;
            }
            (s, spec.radii + 1)
        })
        .collect();
    let total = bases.len() * ray_grid.len();
    let mut points = Vec::new();
    for prefix in &bases {
        let mut base = prefix.clone();
        base.resize(nv, 0.0);
        let mut results = field.eval_lines(&base, &lines);
        let retry: Vec<(usize, usize)> = results
            .iter()
            .enumerate()
            .filter_map(|(l, r)| match r {
                Err(k) if *k > 0 => Some((l, *k)),
                _ => None,
            })
            .collect();
        if !retry.is_empty() {
            let shorter: Vec<(Vec<f64>, usize)> = retry.iter().map(|&(l, k)| (lines[l].0.clone(), k)).collect();
            for (&(l, _), r) in retry.iter().zip(field.eval_lines(&base, &shorter)) {
                results[l] = r;
            }
        }
        let mut origin_done = false;
        for ((step, _), r) in lines.iter().zip(results) {
            let Ok(vals) = r else { continue };
            for (k, v) in vals.into_iter().enumerate() {
                if k == 0 {
                    if origin_done {
                        continue;
                    }
                    origin_done = true;
                }
                points.push(GridValue {
                    point: base.iter().zip(step).map(|(b, s)| b + k as f64 * s).collect(),
                    value: v.value,
                    se: v.se,
                });
            }
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyGrid(format!(
            "all {total} points of the {equation} grid fall outside the floor-{} neighborhoods",
            spec.floor
        )));
    }
    let variables = (0..nv).map(|v| layout.var_name(v)).collect();
    Ok(ResidualGrid {
        equation,
        variables,
        source: if field.is_exact() {
            SourceKind::Exact
        } else {
            SourceKind::Empirical
        },
        excluded: total - points.len(),
        points,
    })
}

fn opts_for(spec: &GridSpec, mode: LogMode) -> FieldOptions {
    FieldOptions {
        mode,
        floor: spec.floor,
        ..FieldOptions::default()
    }
}

/// `q` on a grid over `(f_1..f_n)`, with branch-continuous logarithms.
pub fn estimate_q(joint: &CfSource, marginals: &Marginals, grid: &GridSpec, seed: u64) -> Result<QEstimate> {
    let field = q_field(joint, marginals, &opts_for(grid, LogMode::Unwrapped))?;
    evaluate_grid(&field, Equation::Q, grid, seed)
}

pub fn lemma1_residual(
    marginals: &Marginals,
    a: &[Operator],
    b: &[Operator],
    grid: &GridSpec,
    seed: u64,
) -> Result<ResidualGrid> {
    let field = lemma1_field(marginals, a, b, &opts_for(grid, LogMode::Unwrapped))?;
    evaluate_grid(&field, Equation::Lemma1, grid, seed)
}

pub fn lemma4_residual(
    marginals: &Marginals,
    a: &[Operator],
    b: &[Operator],
    grid: &GridSpec,
    seed: u64,
) -> Result<ResidualGrid> {
    let field = lemma4_field(marginals, a, b, &opts_for(grid, LogMode::Unwrapped))?;
    evaluate_grid(&field, Equation::Lemma4, grid, seed)
}

pub fn lemma6_residual(source: &CfSource, n: usize, grid: &GridSpec, seed: u64) -> Result<ResidualGrid> {
    let field = lemma6_field(source, n, &opts_for(grid, LogMode::Unwrapped))?;
    evaluate_grid(&field, Equation::Lemma6, grid, seed)
}

/// Degree certification of one residual or log-ratio field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QIndependenceCertificate {
    pub equation: Equation,
    pub certification: Certification,
}

/// One row of the report's certificate list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateEntry {
    pub equation: Equation,
    #[serde(rename = "D")]
    pub degree: u32,
    pub verdict: Verdict,
    pub max_residual: f64,
    pub noise_threshold: f64,
    pub grid_points: usize,
    pub max_ratio: f64,
    pub probes: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub diagnostic: Option<String>,
}

impl QIndependenceCertificate {
    pub fn verdict(&self) -> Verdict {
        self.certification.verdict
    }

    /// Smallest certified degree bound.
    pub fn degree(&self) -> Option<u32> {
        self.certification.degree
    }

    pub fn headline(&self) -> &PolyDegreeCertificate {
        self.certification.headline()
    }

    pub fn entries(&self) -> Vec<CertificateEntry> {
        self.certification
            .per_degree
            .iter()
            .map(|c| CertificateEntry {
                equation: self.equation,
                degree: c.degree_bound,
                verdict: c.verdict,
                max_residual: c.max_residual,
                noise_threshold: c.noise_threshold,
                grid_points: c.grid_points,
                max_ratio: c.max_ratio,
                probes: c.probe_count,
                diagnostic: c.diagnostic.clone(),
            })
            .collect()
    }
}

/// Degree tests `D = 0..=d_max` on a field.
pub fn certify_field(
    field: &dyn Field,
    equation: Equation,
    d_max: u32,
    params: &DegreeTestParams,
) -> QIndependenceCertificate {
    QIndependenceCertificate {
        equation,
        certification: certify(field, d_max, params),
    }
}
