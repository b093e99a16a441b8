use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use charlab::config::RunConfig;
use charlab::qindep::{evaluate_grid, Equation};
use charlab::report::{self, grid_seed};
use charlab::theorems::{self, Conclusion};
use charlab::verify::{verify_algebra, VerifyOptions};
use charlab::Error;

#[derive(Parser)]
#[command(name = "charlab", version, about = "Gaussian characterization checks through Q-independence")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML or JSON config.
    Run {
        config: PathBuf,
        /// Output directory; defaults to the config's `output.dir`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Replay the elimination identities on seeded random Gaussian instances.
    VerifyAlgebra {
        /// Number of components (default: 2 and 3).
        #[arg(long)]
        n: Option<usize>,
        /// Dimension (default: 1 and 2).
        #[arg(long)]
        d: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// Use exact rational arithmetic.
        #[arg(long)]
        exact: bool,
        /// Corrupt the named stage (test hook).
        #[arg(long)]
        inject_fault: Option<String>,
    },
    /// Evaluate one functional equation's field on the config's grid.
    DumpField {
        config: PathBuf,
        #[arg(long)]
        equation: Equation,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out_dir } => run(config, out_dir),
        Command::VerifyAlgebra {
            n,
            d,
            seed,
            reps,
            exact,
            inject_fault,
        } => verify(n, d, seed, reps, exact, inject_fault),
        Command::DumpField { config, equation, out } => dump_field(config, equation, out),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            if matches!(e.downcast_ref::<Error>(), Some(Error::EmptyGrid(_))) {
                ExitCode::from(3)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn load(path: &PathBuf) -> Result<RunConfig> {
    let cfg = RunConfig::load(path)?.with_env_seed()?;
    Ok(cfg)
}

fn run(config: PathBuf, out_dir: Option<PathBuf>) -> Result<u8> {
    let cfg = load(&config)?;
    let dir = report::output_dir(&cfg, out_dir);
    let rep = report::execute(&cfg, &dir)?;
    println!("theorem: {}", rep.theorem.name());
    for f in &rep.fields {
        println!(
            "  {:<18} {:?} degree {:?}{}",
            f.equation.name(),
            f.verdict,
            f.degree,
            if f.primary { "" } else { " (auxiliary)" }
        );
    }
    if let Some(e) = &rep.elimination {
        println!(
            "  elimination        {} over {} replays (max residual {:.2e})",
            if e.passed { "passed" } else { "FAILED" },
            e.replays,
            e.max_residual
        );
    }
    for d in &rep.diagnostics {
        println!("  note: {d}");
    }
    println!("conclusion: {:?}", rep.conclusion);
    println!("report: {}", dir.join(report::REPORT_FILE).display());
    Ok(match rep.conclusion {
        Conclusion::ConsistentWithTheorem => 0,
        Conclusion::ViolationDetected => 2,
        Conclusion::Inconclusive => 3,
    })
}

fn verify(
    n: Option<usize>,
    d: Option<usize>,
    seed: u64,
    reps: usize,
    exact: bool,
    fault: Option<String>,
) -> Result<u8> {
    let mut opts = VerifyOptions {
        seed,
        reps,
        exact,
        fault,
        ..VerifyOptions::default()
    };
    if let Some(n) = n {
        opts.ns = vec![n];
    }
    if let Some(d) = d {
        opts.ds = vec![d];
    }
    let rep = verify_algebra(&opts)?;
    println!("arithmetic: {}  tolerance: {:.0e}", rep.arithmetic, rep.tolerance);
    for r in &rep.rows {
        println!(
            "{:<42} {:>4} instances  max residual {:.3e}  {}",
            r.identity,
            r.instances,
            r.max_residual,
            if r.passed { "ok" } else { "FAIL" }
        );
        if let Some(f) = &r.first_failure {
            println!("    first failure: {f}");
        }
    }
    Ok(if rep.passed() { 0 } else { 2 })
}

fn dump_field(config: PathBuf, equation: Equation, out: PathBuf) -> Result<u8> {
    let cfg = load(&config)?;
    let spec = cfg.experiment()?;
    let samples = theorems::draw_samples(&spec)?;
    let field = theorems::equation_field(&spec, samples.as_ref(), equation)?;
    let grid = evaluate_grid(&field, equation, &spec.grid, grid_seed(spec.seed, equation))?;
    let file = File::create(&out).with_context(|| format!("cannot create {}", out.display()))?;
    grid.write_csv(BufWriter::new(file))?;
    println!(
        "{}: {} points ({} excluded), max |value| {:.3e} -> {}",
        equation.name(),
        grid.points.len(),
        grid.excluded,
        grid.max_abs(),
        out.display()
    );
    Ok(0)
}
