//! Run configuration: TOML (or JSON) with every default filled in, so the
//! echoed form fully describes a run.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::charfn::{LogMode, SeMethod};
use crate::dist::{ComponentDist, Dependence, GaussianDist, ProductDist, ScalarFamily};
use crate::error::{Error, Result};
use crate::qindep::{FieldOptions, GridSpec};
use crate::rng::{derive_seed, purpose};
use crate::theorems::{CertifySpec, ExperimentSpec, SourceSpec, Theorem};
use crate::Operator;

/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "CHARLAB_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub theorem: Theorem,
    pub n: usize,
    pub d: usize,
    #[serde(default)]
    pub source: SourceConfig,
    /// One law shared by every component, or one per component.
    pub components: Vec<ComponentSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coupling: Vec<CouplingSpec>,
    #[serde(default)]
    pub operators: OperatorConfig,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub field: FieldConfig,
    #[serde(default)]
    pub certify: CertifyConfig,
    #[serde(default)]
    pub gaussianity: GaussianityConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub debug: DebugConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceMode {
    Exact,
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeChoice {
    Influence,
    Bootstrap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    pub mode: SourceMode,
    pub samples: usize,
    pub se_method: SeChoice,
    /// Bootstrap replicates when `se_method = "bootstrap"`.
    pub bootstrap: usize,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            mode: SourceMode::Exact,
            samples: 100_000,
            se_method: SeChoice::Influence,
            bootstrap: 200,
        }
    }
}

/// Component law. Scalar families act independently on each coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ComponentSpec {
    Gaussian {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mean: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cov: Option<Vec<Vec<f64>>>,
    },
    Uniform {
        a: f64,
        b: f64,
    },
    Laplace {
        b: f64,
    },
    Exponential {
        rate: f64,
    },
    GaussianMixture {
        w: f64,
        m1: f64,
        m2: f64,
        sigma: f64,
    },
}

/// Cross-covariance `Sigma_ij` between components `i < j` (one-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSpec {
    pub i: usize,
    pub j: usize,
    pub cov: Vec<Vec<f64>>,
}

/// A `d x d` matrix, or a number standing for that multiple of the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OpSpec {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<OpSpec>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<OpSpec>>,
    /// Coefficients `C_j` with `A_j = I` (`sd`, `heyde`), or the single `C` of `thm3`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<OpSpec>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub log_mode: LogMode,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            log_mode: LogMode::Symmetrized,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyConfig {
    pub d_max: u32,
    pub probes: usize,
    pub exact_tol: f64,
    /// Radius of the probe ball; shrinks to the field's domain when smaller.
    pub radius: f64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        let c = CertifySpec::default();
        Self {
            d_max: c.d_max,
            probes: c.probes,
            exact_tol: c.exact_tol,
            radius: c.radius,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianityConfig {
    pub directions: usize,
}

impl Default for GaussianityConfig {
    fn default() -> Self {
        Self { directions: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write the residual grids of the run's equations as CSV.
    pub csv: bool,
    pub export_samples: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("charlab-out"),
            csv: false,
            export_samples: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DebugConfig {
    /// Elimination stage to corrupt.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inject_fault: Option<String>,
    /// Degree bound `l` used in the elimination exponents.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l: Option<u32>,
}

impl RunConfig {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON config: {e}")))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid TOML config: {e}")))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies the `CHARLAB_SEED` override when set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}")))?;
        }
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n == 0 || self.d == 0 {
            return bad(format!("n and d must be positive (got n = {}, d = {})", self.n, self.d));
        }
        if self.components.len() != 1 && self.components.len() != self.n {
            return bad(format!(
                "components: give one law or n = {} laws, got {}",
                self.n,
                self.components.len()
            ));
        }
        if self.source.samples == 0 {
            return bad("source.samples must be positive".into());
        }
        if self.source.se_method == SeChoice::Bootstrap && self.source.bootstrap < 2 {
            return bad("source.bootstrap needs at least 2 replicates".into());
        }
        if !(self.grid.floor > 0.0 && self.grid.floor < 1.0) {
            return bad(format!("grid.floor must lie in (0, 1), got {}", self.grid.floor));
        }
        if self.grid.rays == 0 || self.grid.radii == 0 || !(self.grid.radius > 0.0) {
            return bad("grid.rays, grid.radii and grid.radius must be positive".into());
        }
        if self.certify.d_max > 6 {
            return bad(format!("certify.d_max = {} exceeds 6", self.certify.d_max));
        }
        if self.certify.probes == 0 {
            return bad("certify.probes must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of the echoed config.
    pub fn hash(&self) -> String {
        config_hash(&self.echo())
    }

    /// The config as a JSON value with every default present.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn output_dir(&self) -> &Path {
        &self.output.dir
    }

    /// Resolves distributions and operators into a runnable experiment.
    pub fn experiment(&self) -> Result<ExperimentSpec> {
        let (n, d) = (self.n, self.d);
        let laws: Vec<ComponentDist> = (0..n)
            .map(|j| {
                let spec = if self.components.len() == 1 {
                    &self.components[0]
                } else {
                    &self.components[j]
                };
                component(spec, d).map_err(|e| Error::Config(format!("components[{}]: {e}", j + 1)))
            })
            .collect::<Result<_>>()?;
        let dependence = if self.coupling.is_empty() {
            Dependence::Independent
        } else {
            let mut blocks = Vec::new();
            for c in &self.coupling {
                if c.i == 0 || c.j == 0 || c.i > n || c.j > n || c.i >= c.j {
                    return Err(Error::Config(format!(
                        "coupling ({}, {}) needs 1 <= i < j <= n = {n}",
                        c.i, c.j
                    )));
                }
                blocks.push((c.i - 1, c.j - 1, matrix(&c.cov, d, "coupling cov")?));
            }
            Dependence::Coupled(blocks)
        };
        let dist = ProductDist::new(laws, dependence)?;

        let ops = |name: &str, v: &Option<Vec<OpSpec>>| -> Result<Option<Vec<Operator>>> {
            v.as_ref()
                .map(|list| {
                    list.iter()
                        .enumerate()
                        .map(|(k, o)| operator(o, d).map_err(|e| Error::Config(format!("{name}_{}: {e}", k + 1))))
                        .collect::<Result<Vec<_>>>()
                })
                .transpose()
        };
        let a = ops("A", &self.operators.a)?;
        let b = ops("B", &self.operators.b)?;
        let c = ops("C", &self.operators.c)?;
        let ident = vec![Operator::identity(d); n];
        let (a, b, single_c) = match self.theorem {
            Theorem::Sd | Theorem::Heyde => match (b, c) {
                (Some(_), Some(_)) => {
                    return Err(Error::Config("operators: give either b or c, not both".into()));
                }
                (Some(b), None) => (a.unwrap_or_else(|| ident.clone()), b, None),
                (None, Some(c)) => {
                    if a.is_some() {
                        return Err(Error::Config("operators.c implies A_j = I; drop operators.a".into()));
                    }
                    (ident.clone(), c, None)
                }
                (None, None) => return Err(Error::Config("operators: b or c is required".into())),
            },
            Theorem::Thm3 => {
                let c = c.ok_or_else(|| Error::Config("thm3 needs operators.c = [C]".into()))?;
                if c.len() != 1 {
                    return Err(Error::Config(format!("thm3 takes a single C, got {}", c.len())));
                }
                (ident.clone(), ident.clone(), Some(c[0].clone()))
            }
            Theorem::SampleMean => (ident.clone(), ident.clone(), None),
        };

        let source = match self.source.mode {
            SourceMode::Exact => SourceSpec::Exact,
            SourceMode::Empirical => SourceSpec::Empirical {
                samples: self.source.samples,
            },
        };
        let se_method = match self.source.se_method {
            SeChoice::Influence => SeMethod::Influence,
            SeChoice::Bootstrap => SeMethod::Bootstrap {
                replicates: self.source.bootstrap,
                seed: derive_seed(self.seed, &[purpose::BOOTSTRAP]),
            },
        };
        Ok(ExperimentSpec {
            theorem: self.theorem,
            seed: self.seed,
            dist,
            a,
            b,
            c: single_c,
            source,
            field: FieldOptions {
                mode: self.field.log_mode,
                floor: self.grid.floor,
                se_method,
            },
            grid: self.grid,
            certify: CertifySpec {
                d_max: self.certify.d_max,
                probes: self.certify.probes,
                exact_tol: self.certify.exact_tol,
                radius: self.certify.radius,
            },
            gaussianity_directions: self.gaussianity.directions,
            l_override: self.debug.l,
            inject_fault: self.debug.inject_fault.clone(),
        })
    }
}

/// SHA-256 (hex) of a JSON value in canonical (sorted-key, compact) form.
pub fn config_hash(v: &serde_json::Value) -> String {
    let text = serde_json::to_string(v).expect("value serializes");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn matrix(rows: &[Vec<f64>], d: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Config(format!("{what} must be {d}x{d}")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

fn operator(o: &OpSpec, d: usize) -> Result<Operator> {
    match o {
        OpSpec::Scalar(c) => Ok(Operator::scalar(d, *c)),
        OpSpec::Matrix(rows) => Operator::new(matrix(rows, d, "operator")?),
    }
}

fn component(spec: &ComponentSpec, d: usize) -> Result<ComponentDist> {
    let fam = |f: ScalarFamily| ComponentDist::iid(f, d);
    match spec {
        ComponentSpec::Gaussian { mean, cov } => {
            let mean = mean.clone().unwrap_or_else(|| vec![0.0; d]);
            if mean.len() != d {
                return Err(Error::Config(format!("mean must have {d} entries")));
            }
            let cov = match cov {
                Some(rows) => matrix(rows, d, "cov")?,
                None => DMatrix::identity(d, d),
            };
            Ok(ComponentDist::Gaussian(GaussianDist::new(mean, cov)?))
        }
        ComponentSpec::Uniform { a, b } => fam(ScalarFamily::Uniform { a: *a, b: *b }),
        ComponentSpec::Laplace { b } => fam(ScalarFamily::Laplace { b: *b }),
        ComponentSpec::Exponential { rate } => fam(ScalarFamily::Exponential { rate: *rate }),
        ComponentSpec::GaussianMixture { w, m1, m2, sigma } => fam(ScalarFamily::GaussianMixture {
            w: *w,
            m1: *m1,
            m2: *m2,
            sigma: *sigma,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SD: &str = r#"
seed = 7
theorem = "sd"
n = 2
d = 1
components = [{ family = "uniform", a = -1.0, b = 1.0 }]

[operators]
c = [1.0, -1.0]
"#;

    #[test]
    fn defaults_are_filled_and_echoed() {
        let cfg = RunConfig::parse(SD).unwrap();
        assert_eq!(cfg.grid, GridSpec::default());
        assert_eq!(cfg.certify.d_max, 4);
        assert_eq!(cfg.source.samples, 100_000);
        assert_eq!(cfg.source.bootstrap, 200);
        let echo = cfg.echo();
        assert_eq!(echo["grid"]["floor"], 0.2);
        assert_eq!(echo["certify"]["d_max"], 4);
        // the echo parses back to the same config
        let again: RunConfig = serde_json::from_value(echo.clone()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(config_hash(&echo), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn json_is_accepted() {
        let cfg = RunConfig::parse(SD).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::parse(&json).unwrap(), cfg);
    }

    #[test]
    fn resolves_operators() {
        let spec = RunConfig::parse(SD).unwrap().experiment().unwrap();
        assert_eq!(spec.a, vec![Operator::identity(1); 2]);
        assert_eq!(spec.b[1], Operator::scalar(1, -1.0));
        assert_eq!(spec.source, SourceSpec::Exact);
    }

    #[test]
    fn schema_errors_name_the_field() {
        let err = RunConfig::parse(&SD.replace("n = 2", "n = 2\nbogus = 1")).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let err = RunConfig::parse(&SD.replace("seed = 7\n", "")).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
        let err = RunConfig::parse(&SD.replace("d = 1", "d = 1\n[grid]\nrays = \"x\"")).unwrap_err();
        assert!(err.to_string().contains("rays"), "{err}");
    }

    #[test]
    fn thm3_and_coupling() {
        let text = r#"
seed = 1
theorem = "thm3"
n = 2
d = 2
components = [{ family = "gaussian" }]
coupling = [{ i = 1, j = 2, cov = [[0.3, 0.0], [0.0, 0.3]] }]
[operators]
c = [[[2.0, 0.0], [0.0, 3.0]]]
"#;
        let spec = RunConfig::parse(text).unwrap().experiment().unwrap();
        assert_eq!(spec.c, Some(Operator::diagonal(&[2.0, 3.0])));
        assert!(matches!(spec.dist.dependence(), Dependence::Coupled(_)));
    }
}
