//! Run reports: the verdict of one config plus everything needed to
//! reproduce it, and the artifacts written next to it.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::qindep::{evaluate_grid, CertificateEntry, Equation, SourceKind};
use crate::rng::{derive_seed, purpose};
use crate::theorems::{
    self, Conclusion, EliminationSummary, FieldSummary, GaussianityReport, Preconditions, Theorem, TheoremVerdict,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Environment {
    pub version: String,
    /// SHA-256 of the canonical JSON of `config`.
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema_version: u32,
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
    pub seed: u64,
    pub timing_ms: u64,
    pub config: serde_json::Value,
    pub environment: Environment,
    /// Files written by the run, relative to the output directory.
    pub artifacts: Vec<String>,
}

impl Report {
    pub fn new(cfg: &RunConfig, v: TheoremVerdict, timing_ms: u64) -> Self {
        let config = cfg.echo();
        Self {
            schema_version: SCHEMA_VERSION,
            theorem: v.theorem,
            source: v.source,
            declared_gaussian: v.declared_gaussian,
            preconditions: v.preconditions,
            fields: v.fields,
            certificates: v.certificates,
            gaussianity: v.gaussianity,
            elimination: v.elimination,
            conclusion: v.conclusion,
            diagnostics: v.diagnostics,
            seed: cfg.seed,
            timing_ms,
            environment: Environment {
                version: env!("CARGO_PKG_VERSION").to_string(),
                config_hash: crate::config::config_hash(&config),
            },
            config,
            artifacts: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Runs `cfg`, writes the report and its artifacts under `out_dir`.
pub fn execute(cfg: &RunConfig, out_dir: &Path) -> Result<Report> {
    let spec = cfg.experiment()?;
    let start = Instant::now();
    let verdict = theorems::run(&spec)?;
    let timing_ms = start.elapsed().as_millis() as u64;
    let mut report = Report::new(cfg, verdict, timing_ms);

    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    if cfg.output.csv || cfg.output.export_samples {
        let samples = theorems::draw_samples(&spec)?;
        if cfg.output.csv {
            for eq in theorems::run_equations(&spec) {
                let rel = format!("{}.csv", eq.name());
                match write_field_csv(&spec, samples.as_ref(), eq, &out_dir.join(&rel)) {
                    Ok(()) => report.artifacts.push(rel),
                    Err(Error::EmptyGrid(why)) => report.diagnostics.push(format!("{eq} grid not written: {why}")),
                    Err(e) => return Err(e),
                }
            }
        }
        if let (true, Some(s)) = (cfg.output.export_samples, samples.as_ref()) {
            let rel = "samples.csv".to_string();
            let path = out_dir.join(&rel);
            s.write_csv(BufWriter::new(File::create(&path).map_err(|e| io_err(&path, e))?))?;
            report.artifacts.push(rel);
        }
    }
    report.artifacts.push(REPORT_FILE.into());
    let path = out_dir.join(REPORT_FILE);
    fs::write(&path, report.to_json()).map_err(|e| io_err(&path, e))?;
    Ok(report)
}

/// Evaluates one equation's field on the configured grid and writes it as CSV.
pub fn write_field_csv(
    spec: &theorems::ExperimentSpec,
    samples: Option<&std::sync::Arc<crate::dist::SampleMatrix>>,
    equation: Equation,
    path: &Path,
) -> Result<()> {
    let field = theorems::equation_field(spec, samples, equation)?;
    let grid = evaluate_grid(&field, equation, &spec.grid, grid_seed(spec.seed, equation))?;
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    grid.write_csv(BufWriter::new(file))
}

/// Seed of the star-grid directions for `equation`.
pub fn grid_seed(seed: u64, equation: Equation) -> u64 {
    let label = match equation {
        Equation::Lemma1 => 1,
        Equation::Lemma4 => 4,
        Equation::Lemma6 => 6,
        Equation::SampleMeanSlice => 7,
        Equation::Q => 9,
    };
    derive_seed(seed, &[purpose::GRID, label])
}

/// Resolves the output directory: the override, else the config's `output.dir`.
pub fn output_dir(cfg: &RunConfig, over: Option<PathBuf>) -> PathBuf {
    over.unwrap_or_else(|| cfg.output.dir.clone())
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const CFG: &str = r#"
seed = 11
theorem = "sd"
n = 2
d = 1
components = [{ family = "gaussian" }]
[operators]
c = [1.0, -1.0]
[output]
csv = true
"#;

    #[test]
    fn report_is_reproducible_and_hash_matches_echo() {
        let cfg = RunConfig::parse(CFG).unwrap();
        let dir = std::env::temp_dir().join(format!("charlab-report-{}", std::process::id()));
        let r1 = execute(&cfg, &dir).unwrap();
        let r2 = execute(&cfg, &dir).unwrap();
        assert_eq!(r1.conclusion, Conclusion::ConsistentWithTheorem);
        let strip = |r: &Report| {
            let mut r = r.clone();
            r.timing_ms = 0;
            r.to_json()
        };
        assert_eq!(strip(&r1), strip(&r2));
        assert_eq!(r1.environment.config_hash, crate::config::config_hash(&r1.config));
        assert!(r1.artifacts.contains(&"lemma1.csv".to_string()));
        assert!(dir.join("lemma1.csv").exists());
        let _ = fs::remove_dir_all(&dir);
    }
}
