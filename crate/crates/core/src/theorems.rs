//! Experiment drivers for the characterization theorems.
//!
//! Each driver checks the operator preconditions, builds the residual field of
//! the relevant equation, certifies its polynomial degree, checks the
//! marginals for Gaussianity, replays the finite-difference elimination when
//! the inputs are exact Gaussians, and adjudicates the outcome against what
//! the theorem predicts for the declared laws.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::charfn::{
    degree_test, CfSource, DegreeTestParams, LogCombination, Verdict,
};
use crate::dist::{ComponentDist, Dependence, ProductDist, SampleMatrix};
use crate::elimination::{
    heyde_pipeline, lemma1_poly, lemma4_poly, lemma5_check, lemma5_coefficients, lemma6_poly, sample_mean_pipeline,
    sd_pipeline, EliminationReport, ReplayOptions, ShiftSource, StageReport, IDENTITY_TOL,
};
use crate::error::{Error, Result};
use crate::poly::{BlockLayout, BlockPolynomial, CoeffMatrix, QuadraticExponent};
use crate::qindep::{
    certify_field, identical_groups, joint_source, lemma1_field, lemma4_field, lemma6_field, q_field,
    sample_mean_slice, CertificateEntry, Equation, FieldOptions, GridSpec, Marginals, QIndependenceCertificate,
    SourceKind,
};
use crate::rng::{self, derive_seed};
use crate::space::{coefficient_ratios, heyde_failures, GL_TOLERANCE};
use crate::Operator;

type Exact = Complex<BigRational>;

/// Number of seeded replays of each elimination pipeline.
pub const REPLAYS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    /// Q-independent linear forms `L_1 = sum A_j xi_j`, `L_2 = sum B_j xi_j`.
    Sd,
    /// Symmetric conditional law of `L_2` given `L_1`.
    Heyde,
    /// Symmetric conditional law of `xi_1 + C xi_2` given `xi_1 + xi_2`.
    Thm3,
    /// Q-independent sample mean and residue vector.
    SampleMean,
}

impl Theorem {
    pub fn name(self) -> &'static str {
        match self {
            Theorem::Sd => "sd",
            Theorem::Heyde => "heyde",
            Theorem::Thm3 => "thm3",
            Theorem::SampleMean => "sample_mean",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conclusion {
    ConsistentWithTheorem,
    ViolationDetected,
    Inconclusive,
}

/// Where CF values come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceSpec {
    Exact,
    /// `samples` replicates drawn from the declared law.
    Empirical { samples: usize },
}

impl SourceSpec {
    pub fn kind(self) -> SourceKind {
        match self {
            SourceSpec::Exact => SourceKind::Exact,
            SourceSpec::Empirical { .. } => SourceKind::Empirical,
        }
    }
}

/// Degree-certification settings shared by every field of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifySpec {
    pub d_max: u32,
    pub probes: usize,
    pub exact_tol: f64,
    /// Radius of the ball holding probe base points.
    pub radius: f64,
}

impl Default for CertifySpec {
    fn default() -> Self {
        Self {
            d_max: 4,
            probes: 12,
            exact_tol: 1e-9,
            radius: 2.0,
        }
    }
}

impl CertifySpec {
    fn params(&self, seed: u64) -> DegreeTestParams {
        DegreeTestParams {
            probes: self.probes,
            radius: self.radius,
            exact_tol: self.exact_tol,
            seed,
            ..Default::default()
        }
    }
}

/// A fully resolved experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub theorem: Theorem,
    pub seed: u64,
    pub dist: ProductDist,
    /// Operators of `L_1` (identities for the sample-mean theorem).
    pub a: Vec<Operator>,
    /// Operators of `L_2`.
    pub b: Vec<Operator>,
    /// The single coefficient of the `thm3` form `xi_1 + C xi_2`.
    pub c: Option<Operator>,
    pub source: SourceSpec,
    pub field: FieldOptions,
    pub grid: GridSpec,
    pub certify: CertifySpec,
    pub gaussianity_directions: usize,
    /// Overrides the degree bound `l` of `r` in the elimination replays.
    pub l_override: Option<u32>,
    /// Elimination stage whose identity gets a flipped sign (test hook).
    pub inject_fault: Option<String>,
}

impl ExperimentSpec {
    /// Spec with default settings and `L_1 = sum xi_j`, `L_2 = sum C_j xi_j`.
    pub fn new(theorem: Theorem, dist: ProductDist, c: Vec<Operator>) -> Self {
        let d = dist.d();
        let n = dist.n();
        Self {
            theorem,
            seed: 0,
            a: vec![Operator::identity(d); n],
            b: c,
            c: None,
            dist,
            source: SourceSpec::Exact,
            field: FieldOptions::default(),
            grid: GridSpec::default(),
            certify: CertifySpec::default(),
            gaussianity_directions: 16,
            l_override: None,
            inject_fault: None,
        }
    }

    fn replay_options(&self) -> ReplayOptions {
        ReplayOptions {
            l: self.l_override,
            tol: IDENTITY_TOL,
            fault: self.inject_fault.clone(),
        }
    }

    fn probe_seed(&self, label: u64) -> u64 {
        derive_seed(self.seed, &[rng::purpose::PROBES, label])
    }
}

/// Draws the sample for an empirical run (`None` in exact mode).
pub fn draw_samples(spec: &ExperimentSpec) -> Result<Option<Arc<SampleMatrix>>> {
    match spec.source {
        SourceSpec::Exact => Ok(None),
        SourceSpec::Empirical { samples } => Ok(Some(Arc::new(
            spec.dist.sample(samples, derive_seed(spec.seed, &[rng::purpose::SAMPLE]))?,
        ))),
    }
}

/// Marginal CF sources of the declared law, closed form or pooled empirical.
pub fn marginals(spec: &ExperimentSpec, samples: Option<&Arc<SampleMatrix>>) -> Result<Marginals> {
    match samples {
        None => Marginals::exact(&spec.dist),
        Some(s) => Marginals::empirical(s.clone(), &spec.dist),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreconditionCheck {
    pub name: String,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl PreconditionCheck {
    fn ok(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: true,
            detail: None,
        }
    }

    fn failed(name: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: false,
            detail: Some(detail.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Preconditions {
    pub ok: bool,
    pub checks: Vec<PreconditionCheck>,
}

impl Preconditions {
    fn new(checks: Vec<PreconditionCheck>) -> Self {
        Self {
            ok: checks.iter().all(|c| c.passed),
            checks,
        }
    }
}

/// Verdict of one certified field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldSummary {
    pub equation: Equation,
    pub verdict: Verdict,
    /// Smallest degree bound certified polynomial.
    pub degree: Option<u32>,
    pub excludes_quadratic: bool,
    /// Whether the theorem's conclusion hinges on this field.
    pub primary: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GaussianStatus {
    Gaussian,
    NonGaussian,
    Inconclusive,
}

/// Gaussianity of one marginal law (shared by the listed components).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianityReport {
    /// One-based component indices.
    pub components: Vec<usize>,
    pub source: SourceKind,
    pub declared_gaussian: bool,
    pub directions: usize,
    /// Largest deviation of `-log mu` from its quadratic fit (exact mode).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_deviation: Option<f64>,
    pub tolerance: f64,
    /// Per-direction degree-2 verdict counts (empirical mode).
    pub polynomial: usize,
    pub not_polynomial: usize,
    pub inconclusive: usize,
    pub status: GaussianStatus,
}

impl GaussianityReport {
    pub fn rejected_fraction(&self) -> f64 {
        if self.directions == 0 {
            return 0.0;
        }
        self.not_polynomial as f64 / self.directions as f64
    }
}

/// One elimination stage, merged over the seeded replays.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRow {
    pub pipeline: String,
    pub stage: String,
    pub description: String,
    /// Largest residual over the replays.
    pub residual: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub eliminated: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EliminationSummary {
    pub replays: usize,
    pub passed: bool,
    pub max_residual: f64,
    pub stages: Vec<StageRow>,
}

impl EliminationSummary {
    /// Merges replays: `runs[k]` holds every pipeline report of replay `k`.
    pub fn merge(runs: &[Vec<EliminationReport>]) -> Self {
        let mut stages: Vec<StageRow> = Vec::new();
        if let Some(first) = runs.first() {
            for (p, rep) in first.iter().enumerate() {
                for (s, st) in rep.stages.iter().enumerate() {
                    let others: Vec<&StageReport> = runs
                        .iter()
                        .filter_map(|r| r.get(p).and_then(|r| r.stages.get(s)))
                        .collect();
                    stages.push(StageRow {
                        pipeline: rep.pipeline.clone(),
                        stage: st.stage.clone(),
                        description: st.description.clone(),
                        residual: others.iter().map(|o| o.residual).fold(0.0, f64::max),
                        passed: others.iter().all(|o| o.passed),
                        eliminated: st.eliminated.clone(),
                        note: others.iter().find_map(|o| o.note.clone()),
                    });
                }
            }
        }
        Self {
            replays: runs.len(),
            passed: stages.iter().all(|s| s.passed),
            max_residual: stages.iter().map(|s| s.residual).fold(0.0, f64::max),
            stages,
        }
    }

    pub fn first_failure(&self) -> Option<&StageRow> {
        self.stages.iter().find(|s| !s.passed)
    }

    fn extend(&mut self, other: EliminationSummary) {
        self.stages.extend(other.stages);
        self.passed = self.stages.iter().all(|s| s.passed);
        self.max_residual = self.stages.iter().map(|s| s.residual).fold(0.0, f64::max);
        self.replays = self.replays.max(other.replays);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremVerdict {
    pub theorem: Theorem,
    pub source: SourceKind,
    pub declared_gaussian: bool,
    pub preconditions: Preconditions,
    pub fields: Vec<FieldSummary>,
    pub certificates: Vec<CertificateEntry>,
    pub gaussianity: Vec<GaussianityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elimination: Option<EliminationSummary>,
    pub conclusion: Conclusion,
    pub diagnostics: Vec<String>,
}

impl TheoremVerdict {
    pub fn field(&self, equation: Equation) -> Option<&FieldSummary> {
        self.fields.iter().find(|f| f.equation == equation)
    }
}

/// Runs the driver named by `spec.theorem`.
pub fn run(spec: &ExperimentSpec) -> Result<TheoremVerdict> {
    match spec.theorem {
        Theorem::Sd => run_skitovich_darmois(spec),
        Theorem::Heyde => run_heyde(spec),
        Theorem::Thm3 => run_theorem3(spec),
        Theorem::SampleMean => run_sample_mean_residue(spec),
    }
}

fn check_shapes(spec: &ExperimentSpec) -> Result<()> {
    let (n, d) = (spec.dist.n(), spec.dist.d());
    for (name, ops) in [("A", &spec.a), ("B", &spec.b)] {
        if ops.len() != n {
            return Err(Error::Config(format!("{name} has {} operators, expected n = {n}", ops.len())));
        }
        if let Some((j, op)) = ops.iter().enumerate().find(|(_, op)| op.dim() != d) {
            return Err(Error::Config(format!(
                "{name}_{} is {}x{}, expected {d}x{d}",
                j + 1,
                op.dim(),
                op.dim()
            )));
        }
    }
    Ok(())
}

fn invertibility_checks(a: &[Operator], b: &[Operator]) -> Vec<PreconditionCheck> {
    let mut v = Vec::new();
    for (name, ops) in [("A", a), ("B", b)] {
        for j in 0..ops.len() {
            v.push(PreconditionCheck::ok(format!("{name}_{} invertible", j + 1)));
        }
    }
    v
}

fn summarize(cert: &QIndependenceCertificate, primary: bool) -> FieldSummary {
    FieldSummary {
        equation: cert.equation,
        verdict: cert.verdict(),
        degree: cert.degree(),
        excludes_quadratic: cert.certification.excludes_degree(2),
        primary,
    }
}

/// Accumulates the pieces of a verdict.
struct Builder {
    exact: bool,
    declared_gaussian: bool,
    certs: Vec<(QIndependenceCertificate, bool)>,
    gaussianity: Vec<GaussianityReport>,
    elimination: Option<EliminationSummary>,
    diagnostics: Vec<String>,
}

impl Builder {
    fn new(spec: &ExperimentSpec) -> Self {
        Self {
            exact: spec.source == SourceSpec::Exact,
            declared_gaussian: spec.dist.components().iter().all(ComponentDist::is_gaussian),
            certs: Vec::new(),
            gaussianity: Vec::new(),
            elimination: None,
            diagnostics: Vec::new(),
        }
    }

    fn add_elimination(&mut self, e: EliminationSummary) {
        match &mut self.elimination {
            Some(prev) => prev.extend(e),
            None => self.elimination = Some(e),
        }
    }

    fn adjudicate(&mut self) -> Conclusion {
        if let Some(e) = &self.elimination {
            if let Some(f) = e.first_failure() {
                self.diagnostics.push(format!(
                    "elimination identity fails at {}/{} (residual {:.3e})",
                    f.pipeline, f.stage, f.residual
                ));
                return Conclusion::ViolationDetected;
            }
        }
        for (c, _) in &self.certs {
            if let Some(msg) = &c.headline().diagnostic {
                self.diagnostics.push(format!("{}: {msg}", c.equation));
            }
        }
        let exact = self.exact;
        if self.declared_gaussian {
            let fields_ok = self.certs.iter().all(|(c, _)| c.certification.polynomial_within(2));
            let gauss_ok = self.gaussianity.iter().all(|g| g.status == GaussianStatus::Gaussian);
            if fields_ok && gauss_ok {
                return Conclusion::ConsistentWithTheorem;
            }
            for (c, _) in self.certs.iter().filter(|(c, _)| !c.certification.polynomial_within(2)) {
                self.diagnostics.push(format!(
                    "{} is not certified polynomial of degree <= 2 (verdict {:?})",
                    c.equation,
                    c.verdict()
                ));
            }
            for g in self.gaussianity.iter().filter(|g| g.status != GaussianStatus::Gaussian) {
                self.diagnostics.push(format!(
                    "components {:?} not confirmed Gaussian ({:?})",
                    g.components, g.status
                ));
            }
            return if exact {
                Conclusion::ViolationDetected
            } else {
                Conclusion::Inconclusive
            };
        }
        // contrapositive: a non-Gaussian law cannot give a polynomial residual
        let primary: Vec<&QIndependenceCertificate> =
            self.certs.iter().filter(|(_, p)| *p).map(|(c, _)| c).collect();
        if exact {
            if primary.iter().any(|c| c.verdict() == Verdict::NotPolynomial) {
                return Conclusion::ConsistentWithTheorem;
            }
            if let Some(c) = primary.iter().find(|c| c.verdict() == Verdict::Polynomial) {
                self.diagnostics.push(format!(
                    "{} certified polynomial of degree {:?} for a non-Gaussian law",
                    c.equation,
                    c.degree()
                ));
                return Conclusion::ViolationDetected;
            }
        } else if primary.iter().any(|c| c.certification.excludes_degree(2)) {
            return Conclusion::ConsistentWithTheorem;
        }
        self.diagnostics
            .push("no residual of the non-Gaussian law was shown to be non-quadratic".into());
        Conclusion::Inconclusive
    }

    fn finish(mut self, spec: &ExperimentSpec, theorem: Theorem, pre: Preconditions) -> TheoremVerdict {
        let conclusion = self.adjudicate();
        TheoremVerdict {
            theorem,
            source: spec.source.kind(),
            declared_gaussian: self.declared_gaussian,
            preconditions: pre,
            fields: self.certs.iter().map(|(c, p)| summarize(c, *p)).collect(),
            certificates: self.certs.iter().flat_map(|(c, _)| c.entries()).collect(),
            gaussianity: self.gaussianity,
            elimination: self.elimination,
            conclusion,
            diagnostics: self.diagnostics,
        }
    }
}

fn inconclusive(spec: &ExperimentSpec, theorem: Theorem, pre: Preconditions, why: Vec<String>) -> TheoremVerdict {
    TheoremVerdict {
        theorem,
        source: spec.source.kind(),
        declared_gaussian: spec.dist.components().iter().all(ComponentDist::is_gaussian),
        preconditions: pre,
        fields: Vec::new(),
        certificates: Vec::new(),
        gaussianity: Vec::new(),
        elimination: None,
        conclusion: Conclusion::Inconclusive,
        diagnostics: why,
    }
}

fn exact_matrix(op: &Operator) -> CoeffMatrix<Exact> {
    CoeffMatrix::from_f64(op.matrix())
}

/// `psi_j = -log mu'_j` of `xi'_j = T_j xi_j` for Gaussian components.
fn gaussian_exponents(dist: &ProductDist, transforms: &[Operator]) -> Option<Vec<BlockPolynomial<Exact>>> {
    let d = dist.d();
    let layout = BlockLayout::single("x", d);
    dist.components()
        .iter()
        .zip(transforms)
        .map(|(c, t)| {
            let g = c.as_gaussian()?;
            let m = t.matrix();
            let mean = m * nalgebra::DVector::from_column_slice(g.mean());
            let cov = m * g.cov() * m.transpose();
            QuadraticExponent::from_gaussian(mean.as_slice(), &cov)
                .to_poly(&layout, 0)?
                .ok()
        })
        .collect()
}

fn replay<F>(spec: &ExperimentSpec, mut one: F) -> Result<EliminationSummary>
where
    F: FnMut(&mut ShiftSource, &ReplayOptions) -> Result<Vec<EliminationReport>>,
{
    let opts = spec.replay_options();
    let runs = (0..REPLAYS)
        .map(|k| {
            let mut shifts = ShiftSource::new(derive_seed(spec.seed, &[rng::purpose::SHIFTS, k as u64]));
            one(&mut shifts, &opts)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EliminationSummary::merge(&runs))
}

/// Gaussianity reports for each group of identically distributed components.
fn gaussianity_for(spec: &ExperimentSpec, m: &Marginals) -> Vec<GaussianityReport> {
    let groups = identical_groups(&spec.dist);
    groups
        .iter()
        .enumerate()
        .map(|(g, members)| {
            let source = &m.sources()[g];
            let params = GaussianityParams {
                directions: spec.gaussianity_directions,
                exact_tol: spec.certify.exact_tol,
                field: spec.field,
                certify: spec.certify,
            };
            let mut rep = gaussianity_check(source, &params, derive_seed(spec.seed, &[rng::purpose::DIRECTIONS, g as u64]));
            rep.components = members.iter().map(|j| j + 1).collect();
            rep.declared_gaussian = spec.dist.component(members[0]).is_gaussian();
            rep
        })
        .collect()
}

/// Q-independence of the components themselves when they are coupled.
fn q_certificate(
    spec: &ExperimentSpec,
    samples: Option<&Arc<SampleMatrix>>,
    m: &Marginals,
) -> Result<Option<QIndependenceCertificate>> {
    if matches!(spec.dist.dependence(), Dependence::Independent) {
        return Ok(None);
    }
    let joint = joint_source(&spec.dist, samples.cloned())?;
    let field = q_field(&joint, m, &spec.field)?;
    Ok(Some(certify_field(
        &field,
        Equation::Q,
        spec.certify.d_max,
        &spec.certify.params(spec.probe_seed(9)),
    )))
}

/// Skitovich-Darmois: Q-independence of `L_1 = sum A_j xi_j` and
/// `L_2 = sum B_j xi_j` forces every `xi_j` to be Gaussian.
///
/// The forms are reduced to `sum xi'_j`, `sum C_j xi'_j` with `xi'_j = A_j xi_j`
/// and `C_j = B_j A_j^{-1}`.
pub fn run_skitovich_darmois(spec: &ExperimentSpec) -> Result<TheoremVerdict> {
    check_shapes(spec)?;
    let c = coefficient_ratios(&spec.a, &spec.b)?;
    let pre = Preconditions::new(invertibility_checks(&spec.a, &spec.b));
    let samples = draw_samples(spec)?;
    let base = marginals(spec, samples.as_ref())?;
    let m = base.clone().transformed(&spec.a)?;
    let d = spec.dist.d();
    let ids = vec![Operator::identity(d); spec.dist.n()];

    let mut b = Builder::new(spec);
    let field = lemma1_field(&m, &ids, &c, &spec.field)?;
    b.certs.push((
        certify_field(&field, Equation::Lemma1, spec.certify.d_max, &spec.certify.params(spec.probe_seed(1))),
        true,
    ));
    if let Some(q) = q_certificate(spec, samples.as_ref(), &base)? {
        b.certs.push((q, false));
    }
    b.gaussianity = gaussianity_for(spec, &base);

    if b.exact {
        if let Some(psis) = gaussian_exponents(&spec.dist, &spec.a) {
            let cm: Vec<CoeffMatrix<Exact>> = c.iter().map(exact_matrix).collect();
            let idm = vec![CoeffMatrix::<Exact>::identity(d); cm.len()];
            let r = lemma1_poly(&psis, &idm, &cm)?;
            b.add_elimination(replay(spec, |s, o| Ok(vec![sd_pipeline(&psis, &cm, &r, s, o)?]))?);
        }
    }
    Ok(b.finish(spec, Theorem::Sd, pre))
}

/// Heyde: a symmetric conditional law of `L_2` given `L_1` forces Gaussian
/// components when every `B_i A_i^{-1} +- B_j A_j^{-1}` is invertible.
pub fn run_heyde(spec: &ExperimentSpec) -> Result<TheoremVerdict> {
    check_shapes(spec)?;
    let c = coefficient_ratios(&spec.a, &spec.b)?;
    let mut checks = invertibility_checks(&spec.a, &spec.b);
    let failures = heyde_failures(&spec.a, &spec.b, GL_TOLERANCE)?;
    if failures.is_empty() {
        checks.push(PreconditionCheck::ok("B_iA_i^-1 +- B_jA_j^-1 invertible for i != j"));
    }
    for f in &failures {
        checks.push(PreconditionCheck::failed(
            format!("pair ({}, {}) sign {}", f.i + 1, f.j + 1, f.sign),
            format!("{f} (sigma_min = {:.3e})", f.sigma_min),
        ));
    }
    let pre = Preconditions::new(checks);
    if !pre.ok {
        let why = failures.iter().map(|f| format!("precondition failed: {f}")).collect();
        return Ok(inconclusive(spec, Theorem::Heyde, pre, why));
    }
    let samples = draw_samples(spec)?;
    let base = marginals(spec, samples.as_ref())?;
    let m = base.clone().transformed(&spec.a)?;
    let d = spec.dist.d();
    let n = spec.dist.n();
    let ids = vec![Operator::identity(d); n];

    let mut b = Builder::new(spec);
    let field = lemma4_field(&m, &ids, &c, &spec.field)?;
    b.certs.push((
        certify_field(&field, Equation::Lemma4, spec.certify.d_max, &spec.certify.params(spec.probe_seed(4))),
        true,
    ));
    b.gaussianity = gaussianity_for(spec, &base);

    if b.exact {
        if let Some(psis) = gaussian_exponents(&spec.dist, &spec.a) {
            let cm: Vec<CoeffMatrix<Exact>> = c.iter().map(exact_matrix).collect();
            let idm = vec![CoeffMatrix::<Exact>::identity(d); n];
            let r = lemma4_poly(&psis, &idm, &cm)?;
            b.add_elimination(replay(spec, |s, o| {
                (0..n).map(|t| heyde_pipeline(&psis, &cm, &r, t, s, o)).collect()
            })?);
        }
    }
    Ok(b.finish(spec, Theorem::Heyde, pre))
}

/// Coefficients of the Q-independent pair built from the symmetric
/// conditional law of `C_1 xi_1 + C_2 xi_2` given `xi_1 + xi_2`:
/// `L'_1 = (C_1 + C_2) xi_1 + 2 C_2 xi_2`, `L'_2 = 2 C_1 xi_1 + (C_1 + C_2) xi_2`.
pub fn lemma5_transform(c1: &Operator, c2: &Operator) -> Result<([Operator; 2], [Operator; 2])> {
    for (name, op) in [("C_1", c1), ("C_2", c2)] {
        if !op.is_invertible() {
            return Err(Error::NotInvertible {
                name: name.into(),
                sigma_min: op.sigma_min(),
            });
        }
    }
    let sum = c1.add(c2)?;
    Ok(([sum.clone(), c2.scale(2.0)], [c1.scale(2.0), sum]))
}

/// Two-component form `L_1 = xi_1 + xi_2`, `L_2 = xi_1 + C xi_2` with `C` and
/// `I + C` invertible; reduced to Skitovich-Darmois through the composed pair.
pub fn run_theorem3(spec: &ExperimentSpec) -> Result<TheoremVerdict> {
    let d = spec.dist.d();
    if spec.dist.n() != 2 {
        return Err(Error::Config(format!("thm3 needs n = 2, got {}", spec.dist.n())));
    }
    let c = spec
        .c
        .clone()
        .ok_or_else(|| Error::Config("thm3 needs the single operator C".into()))?;
    if c.dim() != d {
        return Err(Error::Config(format!("C is {}x{}, expected {d}x{d}", c.dim(), c.dim())));
    }
    if !c.is_invertible() {
        return Err(Error::NotInvertible {
            name: "C".into(),
            sigma_min: c.sigma_min(),
        });
    }
    let id = Operator::identity(d);
    let ipc = id.add(&c)?;
    if !ipc.is_invertible() {
        return Err(Error::NotInvertible {
            name: "I+C (in finite dimension Ker(I+C) = {0} is the same condition)".into(),
            sigma_min: ipc.sigma_min(),
        });
    }
    let (l1, l2) = lemma5_transform(&id, &c)?;
    let mut checks = vec![PreconditionCheck::ok("C invertible"), PreconditionCheck::ok("I+C invertible")];
    for (name, op) in [("L'_1 first", &l1[0]), ("L'_1 second", &l1[1]), ("L'_2 first", &l2[0]), ("L'_2 second", &l2[1])] {
        if op.is_invertible() {
            checks.push(PreconditionCheck::ok(format!("{name} coefficient invertible")));
        } else {
            return Err(Error::NotInvertible {
                name: format!("{name} coefficient of the composed pair"),
                sigma_min: op.sigma_min(),
            });
        }
    }

    let mut sd_spec = spec.clone();
    sd_spec.theorem = Theorem::Sd;
    sd_spec.a = l1.to_vec();
    sd_spec.b = l2.to_vec();
    let mut v = run_skitovich_darmois(&sd_spec)?;
    v.theorem = Theorem::Thm3;
    checks.extend(v.preconditions.checks.drain(..));
    v.preconditions = Preconditions::new(checks);

    if spec.source == SourceSpec::Exact {
        if let Some(psis) = gaussian_exponents(&spec.dist, &[id.clone(), id.clone()]) {
            let psis: [BlockPolynomial<Exact>; 2] = [psis[0].clone(), psis[1].clone()];
            let (c1, c2) = (CoeffMatrix::<Exact>::identity(d), exact_matrix(&c));
            let chk = lemma5_check(&psis, &c1, &c2)?;
            let (ea, eb) = lemma5_coefficients(&c1, &c2);
            let coeff_gap = [
                (&ea[0], &l1[0]),
                (&ea[1], &l1[1]),
                (&eb[0], &l2[0]),
                (&eb[1], &l2[1]),
            ]
            .iter()
            .map(|(e, f)| e.sub(&exact_matrix(f)).max_magnitude())
            .fold(0.0, f64::max);
            let row = |stage: &str, description: &str, residual: f64| StageRow {
                pipeline: "composed_pair".into(),
                stage: stage.into(),
                description: description.into(),
                residual,
                passed: residual <= IDENTITY_TOL,
                eliminated: Vec::new(),
                note: None,
            };
            let stages = vec![
                row(
                    "composed_residual_identity",
                    "log form of the composed equation equals r'(k, l)",
                    chk.identity_residual,
                ),
                row(
                    "composed_pair_residual",
                    "r'(k, l) equals the Q-independence residual of L'_1, L'_2",
                    chk.transform_residual,
                ),
                row("composed_coefficients", "L' coefficients match ((I+C), 2C; 2I, (I+C))", coeff_gap),
            ];
            let extra = EliminationSummary {
                replays: 1,
                passed: stages.iter().all(|s| s.passed),
                max_residual: stages.iter().map(|s| s.residual).fold(0.0, f64::max),
                stages,
            };
            match &mut v.elimination {
                Some(e) => e.extend(extra),
                None => v.elimination = Some(extra),
            }
            if let Some(f) = v.elimination.as_ref().and_then(|e| e.first_failure()) {
                if v.conclusion != Conclusion::ViolationDetected {
                    v.diagnostics.push(format!(
                        "elimination identity fails at {}/{} (residual {:.3e})",
                        f.pipeline, f.stage, f.residual
                    ));
                }
                v.conclusion = Conclusion::ViolationDetected;
            }
        }
    }
    Ok(v)
}

/// Sample mean `S = (1/n) sum xi_j` and residue vector `V = (xi_j - S)_j` of
/// iid components: Q-independence forces a Gaussian law.
pub fn run_sample_mean_residue(spec: &ExperimentSpec) -> Result<TheoremVerdict> {
    let n = spec.dist.n();
    let d = spec.dist.d();
    if n < 2 {
        return Err(Error::Precondition(format!("the sample mean needs n >= 2, got {n}")));
    }
    let mut checks = vec![PreconditionCheck::ok("n >= 2")];
    let groups = identical_groups(&spec.dist);
    checks.push(if groups.len() == 1 {
        PreconditionCheck::ok("components identically distributed")
    } else {
        PreconditionCheck::failed("components identically distributed", format!("{} distinct laws", groups.len()))
    });
    checks.push(if matches!(spec.dist.dependence(), Dependence::Independent) {
        PreconditionCheck::ok("components independent")
    } else {
        PreconditionCheck::failed("components independent", "a coupling is declared")
    });
    let pre = Preconditions::new(checks);
    if !pre.ok {
        return Err(Error::Precondition(
            "the sample-mean theorem needs independent identically distributed components".into(),
        ));
    }

    let samples = draw_samples(spec)?;
    let m = marginals(spec, samples.as_ref())?;
    let source = m.sources()[0].clone();
    let mut b = Builder::new(spec);
    let full = lemma6_field(&source, n, &spec.field)?;
    let slice = sample_mean_slice(&full)?;
    b.certs.push((
        certify_field(&full, Equation::Lemma6, spec.certify.d_max, &spec.certify.params(spec.probe_seed(6))),
        true,
    ));
    b.certs.push((
        certify_field(
            &slice,
            Equation::SampleMeanSlice,
            spec.certify.d_max,
            &spec.certify.params(spec.probe_seed(7)),
        ),
        true,
    ));
    b.gaussianity = gaussianity_for(spec, &m);

    if b.exact {
        if let Some(psis) = gaussian_exponents(&spec.dist, &vec![Operator::identity(d); n]) {
            let psi = psis[0].clone();
            let r = lemma6_poly(&psi, n)?;
            b.add_elimination(replay(spec, |s, o| Ok(vec![sample_mean_pipeline(&psi, n, &r, s, o)?]))?);
        }
    }

    if n == 2 {
        // S and V are functions of xi_1 + xi_2 and xi_1 - xi_2
        let mut sd_spec = spec.clone();
        sd_spec.theorem = Theorem::Sd;
        sd_spec.a = vec![Operator::identity(d); 2];
        sd_spec.b = vec![Operator::identity(d), Operator::scalar(d, -1.0)];
        let sd = run_skitovich_darmois(&sd_spec)?;
        b.diagnostics.push(format!(
            "n = 2 also checked as the pair xi_1 + xi_2, xi_1 - xi_2: {:?}",
            sd.conclusion
        ));
        let mut sd_b = Builder::new(&sd_spec);
        sd_b.certs.push((
            certify_field(
                &lemma1_field(&m, &sd_spec.a, &sd_spec.b, &spec.field)?,
                Equation::Lemma1,
                spec.certify.d_max,
                &spec.certify.params(spec.probe_seed(1)),
            ),
            true,
        ));
        b.certs.extend(sd_b.certs);
        if let Some(e) = sd.elimination {
            b.add_elimination(e);
        }
    }
    Ok(b.finish(spec, Theorem::SampleMean, pre))
}

/// The field a driver certifies for `equation`, built from the same samples.
///
/// `lemma1` and `lemma4` use the configured forms (the composed pair for
/// `thm3`); `lemma6` and the slice use the first component's law.
pub fn equation_field(
    spec: &ExperimentSpec,
    samples: Option<&Arc<SampleMatrix>>,
    equation: Equation,
) -> Result<LogCombination> {
    let d = spec.dist.d();
    let n = spec.dist.n();
    let (a, b) = match (spec.theorem, &spec.c) {
        (Theorem::Thm3, Some(c)) => {
            let (l1, l2) = lemma5_transform(&Operator::identity(d), c)?;
            (l1.to_vec(), l2.to_vec())
        }
        _ => (spec.a.clone(), spec.b.clone()),
    };
    let base = marginals(spec, samples)?;
    match equation {
        Equation::Lemma1 | Equation::Lemma4 => {
            let c = coefficient_ratios(&a, &b)?;
            let m = base.transformed(&a)?;
            let ids = vec![Operator::identity(d); n];
            if equation == Equation::Lemma1 {
                lemma1_field(&m, &ids, &c, &spec.field)
            } else {
                lemma4_field(&m, &ids, &c, &spec.field)
            }
        }
        Equation::Lemma6 => lemma6_field(&base.sources()[0], n, &spec.field),
        Equation::SampleMeanSlice => sample_mean_slice(&lemma6_field(&base.sources()[0], n, &spec.field)?),
        Equation::Q => {
            let joint = joint_source(&spec.dist, samples.cloned())?;
            q_field(&joint, &base, &spec.field)
        }
    }
}

/// Equations whose grids a run of `spec` reports.
pub fn run_equations(spec: &ExperimentSpec) -> Vec<Equation> {
    let mut eqs = match spec.theorem {
        Theorem::Sd | Theorem::Thm3 => vec![Equation::Lemma1],
        Theorem::Heyde => vec![Equation::Lemma4],
        Theorem::SampleMean => vec![Equation::Lemma6, Equation::SampleMeanSlice],
    };
    if !matches!(spec.dist.dependence(), Dependence::Independent) {
        eqs.push(Equation::Q);
    }
    eqs
}

/// Settings of the Gaussianity oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianityParams {
    pub directions: usize,
    /// Largest quadratic-fit deviation accepted in exact mode.
    pub exact_tol: f64,
    pub field: FieldOptions,
    pub certify: CertifySpec,
}

impl Default for GaussianityParams {
    fn default() -> Self {
        Self {
            directions: 16,
            exact_tol: 1e-9,
            field: FieldOptions::default(),
            certify: CertifySpec::default(),
        }
    }
}

/// Points per ray in the exact quadratic fit.
const FIT_POINTS: usize = 16;

/// Unit directions; in dimension one a single direction (the sign is
/// immaterial for the modulus and conjugates the phase).
fn oracle_directions(d: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    if d == 1 {
        return vec![vec![1.0]];
    }
    let mut r = rng::stream(seed, &[rng::purpose::DIRECTIONS]);
    (0..count)
        .map(|_| {
            let g: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            g.iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// Largest deviation of `t -> -log mu(t u)` from its least-squares quadratic
/// on `t in (0, radius]`, with the phase continued along the ray.
fn quadratic_fit_deviation(source: &CfSource, u: &[f64], radius: f64) -> Result<f64> {
    let ts: Vec<f64> = (0..=FIT_POINTS).map(|k| radius * k as f64 / FIT_POINTS as f64).collect();
    let mut re = Vec::with_capacity(ts.len());
    let mut im = Vec::with_capacity(ts.len());
    let mut prev = 0.0;
    for &t in &ts {
        let p: Vec<f64> = u.iter().map(|x| x * t).collect();
        let (v, _) = source.eval(&p)?;
        let psi = -v.ln();
        let turns = ((prev - psi.im) / std::f64::consts::TAU).round();
        let phase = psi.im + std::f64::consts::TAU * turns;
        prev = phase;
        re.push(psi.re);
        im.push(phase);
    }
    let design = DMatrix::from_fn(ts.len(), 3, |i, j| ts[i].powi(j as i32));
    let svd = design.clone().svd(true, true);
    let mut worst: f64 = 0.0;
    for ys in [re, im] {
        let y = nalgebra::DVector::from_vec(ys);
        let coef = svd
            .solve(&y, 1e-14)
            .map_err(|e| Error::Precondition(format!("quadratic fit failed: {e}")))?;
        let fit = &design * coef;
        worst = worst.max((fit - y).amax());
    }
    Ok(worst)
}

/// Gaussianity oracle for one law: exact sources are fitted by a quadratic
/// along each ray; empirical sources run the degree-2 test on the log CF of
/// each projection `<xi, u>`.
pub fn gaussianity_check(source: &CfSource, params: &GaussianityParams, seed: u64) -> GaussianityReport {
    let d = source.dim();
    let dirs = oracle_directions(d, params.directions.max(1), seed);
    let mut rep = GaussianityReport {
        components: Vec::new(),
        source: if source.is_exact() {
            SourceKind::Exact
        } else {
            SourceKind::Empirical
        },
        declared_gaussian: false,
        directions: dirs.len(),
        max_deviation: None,
        tolerance: params.exact_tol,
        polynomial: 0,
        not_polynomial: 0,
        inconclusive: 0,
        status: GaussianStatus::Inconclusive,
    };
    if source.is_exact() {
        let radius = source.neighborhood_radius(params.field.floor).min(params.certify.radius);
        let mut worst: f64 = 0.0;
        for u in &dirs {
            match quadratic_fit_deviation(source, u, radius) {
                Ok(dev) => worst = worst.max(dev),
                Err(_) => worst = f64::INFINITY,
            }
        }
        rep.max_deviation = Some(worst);
        rep.status = if worst <= params.exact_tol {
            rep.polynomial = dirs.len();
            GaussianStatus::Gaussian
        } else {
            rep.not_polynomial = dirs.len();
            GaussianStatus::NonGaussian
        };
        return rep;
    }
    for (k, u) in dirs.iter().enumerate() {
        let verdict = projection_field(source, u, &params.field)
            .map(|f| {
                let p = params.certify.params(derive_seed(seed, &[rng::purpose::PROBES, k as u64]));
                degree_test(&f, 2, &p).verdict
            })
            .unwrap_or(Verdict::Inconclusive);
        match verdict {
            Verdict::Polynomial => rep.polynomial += 1,
            Verdict::NotPolynomial => rep.not_polynomial += 1,
            Verdict::Inconclusive => rep.inconclusive += 1,
        }
    }
    let total = dirs.len();
    rep.status = if 2 * rep.not_polynomial >= total {
        GaussianStatus::NonGaussian
    } else if rep.not_polynomial == 0 && 2 * rep.polynomial >= total {
        GaussianStatus::Gaussian
    } else {
        GaussianStatus::Inconclusive
    };
    rep
}

/// `t -> log mu(t u)`, the log CF of the projection `<xi, u>`.
fn projection_field(source: &CfSource, u: &[f64], opts: &FieldOptions) -> Result<LogCombination> {
    let mut comb =
        LogCombination::new(BlockLayout::single("t", 1), opts.mode, opts.floor)?.with_se_method(opts.se_method);
    let s = comb.add_source(source.clone())?;
    comb.add_term(s, 1.0, &[(0, DMatrix::from_column_slice(u.len(), 1, u))]);
    Ok(comb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{GaussianDist, ScalarFamily};

    fn gauss(d: usize) -> ComponentDist {
        ComponentDist::Gaussian(GaussianDist::standard(d))
    }

    fn scalar_ops(v: &[f64]) -> Vec<Operator> {
        v.iter().map(|&c| Operator::scalar(1, c)).collect()
    }

    #[test]
    fn sd_gaussian_d2_is_consistent() {
        let dist = ProductDist::iid(gauss(2), 2).unwrap();
        let spec = ExperimentSpec::new(Theorem::Sd, dist, vec![Operator::identity(2); 2]);
        let v = run_skitovich_darmois(&spec).unwrap();
        assert_eq!(v.conclusion, Conclusion::ConsistentWithTheorem, "{v:#?}");
        let f = v.field(Equation::Lemma1).unwrap();
        assert_eq!(f.verdict, Verdict::Polynomial);
        assert!(f.degree.unwrap() <= 2);
        assert!(v.elimination.as_ref().unwrap().passed);
        assert_eq!(v.elimination.as_ref().unwrap().replays, REPLAYS);
    }

    #[test]
    fn sd_uniform_exact_is_consistent_by_contrapositive() {
        let u = ComponentDist::iid(ScalarFamily::Uniform { a: -1.0, b: 1.0 }, 1).unwrap();
        let dist = ProductDist::iid(u, 2).unwrap();
        let spec = ExperimentSpec::new(Theorem::Sd, dist, scalar_ops(&[1.0, -1.0]));
        let v = run_skitovich_darmois(&spec).unwrap();
        assert_eq!(v.field(Equation::Lemma1).unwrap().verdict, Verdict::NotPolynomial);
        assert_eq!(v.conclusion, Conclusion::ConsistentWithTheorem, "{v:#?}");
        assert!(v.elimination.is_none());
        assert_eq!(v.gaussianity[0].status, GaussianStatus::NonGaussian);
    }

    #[test]
    fn sd_singular_operator_names_it() {
        let dist = ProductDist::iid(gauss(1), 2).unwrap();
        let mut spec = ExperimentSpec::new(Theorem::Sd, dist, scalar_ops(&[1.0, 1.0]));
        spec.a[0] = Operator::scalar(1, 0.0);
        match run_skitovich_darmois(&spec) {
            Err(Error::NotInvertible { name, .. }) => assert_eq!(name, "A_1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sd_reduction_invariance() {
        let g = GaussianDist::new(vec![0.0], DMatrix::from_element(1, 1, 1.0)).unwrap();
        let dist = ProductDist::iid(ComponentDist::Gaussian(g), 2).unwrap();
        let mut spec = ExperimentSpec::new(Theorem::Sd, dist, scalar_ops(&[2.0, -1.0]));
        spec.a = scalar_ops(&[2.0, 0.5]);
        let v1 = run_skitovich_darmois(&spec).unwrap();
        // the same forms written with xi'_j = A_j xi_j
        let comps: Vec<ComponentDist> = [2.0f64, 0.5]
            .iter()
            .map(|a| ComponentDist::Gaussian(GaussianDist::new(vec![0.0], DMatrix::from_element(1, 1, a * a)).unwrap()))
            .collect();
        let mut spec2 = spec.clone();
        spec2.dist = ProductDist::independent(comps).unwrap();
        spec2.a = scalar_ops(&[1.0, 1.0]);
        spec2.b = scalar_ops(&[1.0, -2.0]);
        let v2 = run_skitovich_darmois(&spec2).unwrap();
        assert_eq!(v1.conclusion, v2.conclusion);
        assert_eq!(v1.field(Equation::Lemma1), v2.field(Equation::Lemma1));
    }

    #[test]
    fn heyde_examples() {
        let dist = ProductDist::iid(gauss(1), 2).unwrap();
        let spec = ExperimentSpec::new(Theorem::Heyde, dist.clone(), scalar_ops(&[1.0, 2.0]));
        let v = run_heyde(&spec).unwrap();
        assert_eq!(v.conclusion, Conclusion::ConsistentWithTheorem, "{v:#?}");
        assert!(v.elimination.unwrap().stages.iter().any(|s| s.pipeline == "heyde_psi_2"));

        let bad = ExperimentSpec::new(Theorem::Heyde, dist, scalar_ops(&[1.0, -1.0]));
        let v = run_heyde(&bad).unwrap();
        assert_eq!(v.conclusion, Conclusion::Inconclusive);
        assert!(!v.preconditions.ok);
        assert!(v.diagnostics[0].contains("B_1A_1^-1 + B_2A_2^-1"));

        let lap = ComponentDist::iid(ScalarFamily::Laplace { b: 1.0 }, 1).unwrap();
        let spec = ExperimentSpec::new(Theorem::Heyde, ProductDist::iid(lap, 2).unwrap(), scalar_ops(&[1.0, 2.0]));
        let v = run_heyde(&spec).unwrap();
        assert_eq!(v.field(Equation::Lemma4).unwrap().verdict, Verdict::NotPolynomial);
        assert_eq!(v.conclusion, Conclusion::ConsistentWithTheorem);
    }

    #[test]
    fn lemma5_transform_forms() {
        let c = Operator::diagonal(&[2.0, 3.0]);
        let (l1, l2) = lemma5_transform(&Operator::identity(2), &c).unwrap();
        assert_eq!(l1[0], Operator::diagonal(&[3.0, 4.0]));
        assert_eq!(l1[1], Operator::diagonal(&[4.0, 6.0]));
        assert_eq!(l2[0], Operator::scalar(2, 2.0));
        assert_eq!(l2[1], Operator::diagonal(&[3.0, 4.0]));
        assert!(lemma5_transform(&Operator::scalar(2, 0.0), &c).is_err());
    }

    #[test]
    fn theorem3_examples() {
        let dist = ProductDist::iid(gauss(1), 2).unwrap();
        let mut spec = ExperimentSpec::new(Theorem::Thm3, dist.clone(), Vec::new());
        spec.c = Some(Operator::scalar(1, 2.0));
        let v = run_theorem3(&spec).unwrap();
        assert_eq!(v.conclusion, Conclusion::ConsistentWithTheorem, "{v:#?}");
        let e = v.elimination.unwrap();
        assert!(e.stages.iter().any(|s| s.stage == "composed_residual_identity" && s.passed));

        spec.c = Some(Operator::scalar(1, -1.0));
        match run_theorem3(&spec) {
            Err(Error::NotInvertible { name, .. }) => assert!(name.starts_with("I+C")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sample_mean_examples() {
        let spec = ExperimentSpec::new(Theorem::SampleMean, ProductDist::iid(gauss(1), 3).unwrap(), Vec::new());
        let v = run_sample_mean_residue(&spec).unwrap();
        assert_eq!(v.conclusion, Conclusion::ConsistentWithTheorem, "{v:#?}");
        assert_eq!(v.field(Equation::Lemma6).unwrap().degree, Some(0));

        let e = ComponentDist::iid(ScalarFamily::Exponential { rate: 1.0 }, 1).unwrap();
        let spec = ExperimentSpec::new(Theorem::SampleMean, ProductDist::iid(e, 3).unwrap(), Vec::new());
        let v = run_sample_mean_residue(&spec).unwrap();
        assert_eq!(v.field(Equation::Lemma6).unwrap().verdict, Verdict::NotPolynomial);
        assert_eq!(v.conclusion, Conclusion::ConsistentWithTheorem);

        let spec = ExperimentSpec::new(Theorem::SampleMean, ProductDist::iid(gauss(1), 2).unwrap(), Vec::new());
        let v = run_sample_mean_residue(&spec).unwrap();
        assert_eq!(v.conclusion, Conclusion::ConsistentWithTheorem);
        assert!(v.field(Equation::Lemma1).is_some());
        assert!(v.elimination.unwrap().stages.iter().any(|s| s.pipeline == "skitovich_darmois"));
    }

    #[test]
    fn fault_injection_is_a_violation() {
        let dist = ProductDist::iid(gauss(1), 2).unwrap();
        let mut spec = ExperimentSpec::new(Theorem::Sd, dist, scalar_ops(&[1.0, -1.0]));
        spec.inject_fault = Some("eliminate_q".into());
        let v = run_skitovich_darmois(&spec).unwrap();
        assert_eq!(v.conclusion, Conclusion::ViolationDetected);
        assert_eq!(v.elimination.unwrap().first_failure().unwrap().stage, "eliminate_q");
    }

    #[test]
    fn gaussianity_exact_and_degenerate() {
        let g = GaussianDist::new(vec![0.5, -1.0], DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5])).unwrap();
        let rep = gaussianity_check(&CfSource::Exact(ComponentDist::Gaussian(g)), &GaussianityParams::default(), 1);
        assert_eq!(rep.status, GaussianStatus::Gaussian);
        assert_eq!(rep.directions, 16);
        assert!(rep.max_deviation.unwrap() <= 1e-10);

        let point = GaussianDist::new(vec![0.7], DMatrix::zeros(1, 1)).unwrap();
        let rep = gaussianity_check(&CfSource::Exact(ComponentDist::Gaussian(point)), &GaussianityParams::default(), 1);
        assert_eq!(rep.status, GaussianStatus::Gaussian);

        let u = ComponentDist::iid(ScalarFamily::Uniform { a: -1.0, b: 1.0 }, 2).unwrap();
        let rep = gaussianity_check(&CfSource::Exact(u), &GaussianityParams::default(), 1);
        assert_eq!(rep.status, GaussianStatus::NonGaussian);
    }

    #[test]
    fn coupled_gaussian_adds_q_certificate() {
        let cross = DMatrix::from_element(1, 1, 0.3);
        let dist = ProductDist::new(vec![gauss(1), gauss(1)], Dependence::Coupled(vec![(0, 1, cross)])).unwrap();
        let spec = ExperimentSpec::new(Theorem::Sd, dist, scalar_ops(&[1.0, -1.0]));
        let v = run_skitovich_darmois(&spec).unwrap();
        let q = v.field(Equation::Q).unwrap();
        assert_eq!(q.verdict, Verdict::Polynomial);
        assert!(q.degree.unwrap() <= 2);
        assert_eq!(v.conclusion, Conclusion::ConsistentWithTheorem);
    }
}
