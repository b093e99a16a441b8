//! Exact-identity suite: elimination replays, the composed-residual identity
//! and finite-difference properties on seeded random quadratic instances.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::{Complex, Complex64};
use num_rational::BigRational;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::elimination::{
    heyde_pipeline, lemma1_poly, lemma4_poly, lemma5_check, lemma6_poly, sample_mean_pipeline, sd_pipeline,
    EliminationReport, ReplayOptions, ShiftSource, IDENTITY_TOL,
};
use crate::error::Result;
use crate::poly::{BlockLayout, BlockPolynomial, CoeffMatrix, QuadraticExponent};
use crate::rng::{derive_seed, purpose, stream};
use crate::scalar::FieldCoefficient;

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub ns: Vec<usize>,
    pub ds: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    /// Rational arithmetic instead of complex floating point.
    pub exact: bool,
    pub fault: Option<String>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            ns: vec![2, 3],
            ds: vec![1, 2],
            reps: 5,
            seed: 0,
            exact: false,
            fault: None,
        }
    }
}

/// Largest residual of one identity over every instance it was checked on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityRow {
    pub identity: String,
    pub instances: usize,
    pub max_residual: f64,
    pub passed: bool,
    /// `(n, d, rep)` and stage of the first failure.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub arithmetic: &'static str,
    pub tolerance: f64,
    pub rows: Vec<IdentityRow>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn max_residual(&self) -> f64 {
        self.rows.iter().map(|r| r.max_residual).fold(0.0, f64::max)
    }
}

#[derive(Default)]
struct Table {
    rows: BTreeMap<String, IdentityRow>,
    order: Vec<String>,
}

impl Table {
    fn record(&mut self, identity: &str, residual: f64, failure: impl FnOnce() -> String) {
        if !self.rows.contains_key(identity) {
            self.order.push(identity.to_string());
        }
        let row = self.rows.entry(identity.to_string()).or_insert_with(|| IdentityRow {
            identity: identity.to_string(),
            instances: 0,
            max_residual: 0.0,
            passed: true,
            first_failure: None,
        });
        row.instances += 1;
        row.max_residual = row.max_residual.max(residual);
        if residual > IDENTITY_TOL || residual.is_nan() {
            row.passed = false;
            if row.first_failure.is_none() {
                row.first_failure = Some(failure());
            }
        }
    }

    fn pipeline(&mut self, identity: &str, tag: &str, rep: &EliminationReport) {
        let res = rep.max_residual();
        let failed = rep.first_failure().map(|s| s.stage.clone());
        if !self.rows.contains_key(identity) {
            self.order.push(identity.to_string());
        }
        let row = self.rows.entry(identity.to_string()).or_insert_with(|| IdentityRow {
            identity: identity.to_string(),
            instances: 0,
            max_residual: 0.0,
            passed: true,
            first_failure: None,
        });
        row.instances += 1;
        row.max_residual = row.max_residual.max(res);
        if let Some(stage) = failed {
            row.passed = false;
            if row.first_failure.is_none() {
                row.first_failure = Some(format!("{tag} at stage {stage}"));
            }
        }
    }

    fn finish(mut self) -> Vec<IdentityRow> {
        self.order.iter().map(|k| self.rows.remove(k).expect("recorded")).collect()
    }
}

/// A random quadratic instance: Gaussian exponents `psi_j` and coefficients
/// `C_j` with `C_j` and every `C_i +- C_j` (`i != j`) invertible.
pub struct QuadraticInstance<C> {
    pub psis: Vec<BlockPolynomial<C>>,
    pub c: Vec<CoeffMatrix<C>>,
}

fn dyadic(r: &mut ChaCha8Rng, lo: i32, hi: i32, den: f64) -> f64 {
    r.gen_range(lo..=hi) as f64 / den
}

fn well_conditioned(m: &DMatrix<f64>) -> bool {
    let sv = m.clone().singular_values();
    sv.min() > 0.1
}

/// Means in quarters, covariances `L L^T + I/2` with half-integer `L`, and
/// coefficient entries in halves.
pub fn random_instance<C: FieldCoefficient>(n: usize, d: usize, seed: u64) -> QuadraticInstance<C> {
    let mut r = stream(seed, &[purpose::INSTANCES, n as u64, d as u64]);
    let layout = BlockLayout::single("x", d);
    let psis = (0..n)
        .map(|_| {
            let mean: Vec<f64> = (0..d).map(|_| dyadic(&mut r, -4, 4, 4.0)).collect();
            let l = DMatrix::from_fn(d, d, |_, _| dyadic(&mut r, -2, 2, 2.0));
            let cov = &l * l.transpose() + DMatrix::identity(d, d) * 0.5;
            QuadraticExponent::from_gaussian(&mean, &cov)
                .to_poly(&layout, 0)
                .expect("complex coefficients")
                .expect("degree 2")
        })
        .collect();
    let c = loop {
        let mats: Vec<DMatrix<f64>> = (0..n)
            .map(|_| DMatrix::from_fn(d, d, |_, _| dyadic(&mut r, -4, 4, 2.0)))
            .collect();
        let ok = mats.iter().all(well_conditioned)
            && (0..n).all(|i| {
                ((i + 1)..n).all(|j| well_conditioned(&(&mats[i] + &mats[j])) && well_conditioned(&(&mats[i] - &mats[j])))
            });
        if ok {
            break mats.iter().map(CoeffMatrix::from_f64).collect();
        }
    };
    QuadraticInstance { psis, c }
}

/// Random polynomial on `(f, g)` of total degree exactly `degree`.
fn random_poly<C: FieldCoefficient>(r: &mut ChaCha8Rng, d: usize, degree: u32) -> BlockPolynomial<C> {
    let layout = BlockLayout::new(["f", "g"], d);
    let nv = layout.nvars();
    let mut terms: Vec<(Vec<u8>, C)> = Vec::new();
    for k in 0..6 {
        let target = if k == 0 { degree } else { r.gen_range(0..=degree) };
        let mut e = vec![0u8; nv];
        for _ in 0..target {
            e[r.gen_range(0..nv)] += 1;
        }
        let mut c = 0;
        while c == 0 {
            c = r.gen_range(-8..=8);
        }
        let im = r.gen_range(-4..=4);
        terms.push((e, C::from_complex(Complex64::new(c as f64 / 4.0, im as f64 / 4.0)).expect("complex")));
    }
    let p = BlockPolynomial::from_terms(&layout, terms).expect("degree within bound");
    if p.total_degree() == degree {
        p
    } else {
        random_poly(r, d, degree)
    }
}

fn check_differences<C: FieldCoefficient>(t: &mut Table, d: usize, seed: u64) -> Result<()> {
    let mut r = stream(seed, &[purpose::INSTANCES, 99, d as u64]);
    let mut shifts = ShiftSource::new(seed);
    for degree in 0..=4u32 {
        let p: BlockPolynomial<C> = random_poly(&mut r, d, degree);
        let nv = p.layout().nvars();
        let h: Vec<C> = shifts.vector(nv);
        let kill = p.delta_pow(&h, degree + 1)?.max_coefficient();
        t.record("difference_kills_degree_plus_one", kill, || format!("d={d} degree={degree}"));
        // Delta_h^D p is the constant D! * top(h)
        let top = p.leading_form().eval(&h);
        let fact: f64 = (1..=degree).map(f64::from).product();
        let expect = BlockPolynomial::constant(p.layout(), top * C::from_f64(fact));
        let last = p.delta_pow(&h, degree)?;
        t.record("difference_of_order_degree_is_constant", (&last - &expect).max_coefficient(), || {
            format!("d={d} degree={degree}")
        });
        let k: Vec<C> = shifts.vector(nv);
        let hk = p.delta(&h)?.delta(&k)?;
        let kh = p.delta(&k)?.delta(&h)?;
        t.record("differences_commute", (&hk - &kh).max_coefficient(), || format!("d={d} degree={degree}"));
    }
    Ok(())
}

fn run_suite<C: FieldCoefficient>(opts: &VerifyOptions) -> Result<Vec<IdentityRow>> {
    let mut t = Table::default();
    let replay = ReplayOptions {
        fault: opts.fault.clone(),
        ..Default::default()
    };
    for &d in &opts.ds {
        check_differences::<C>(&mut t, d, opts.seed)?;
    }
    for &n in &opts.ns {
        for &d in &opts.ds {
            for rep in 0..opts.reps {
                let seed = derive_seed(opts.seed, &[rep as u64]);
                let inst: QuadraticInstance<C> = random_instance(n, d, seed);
                let tag = format!("n={n} d={d} rep={rep}");
                let id = vec![CoeffMatrix::<C>::identity(d); n];
                let mut shifts = ShiftSource::new(seed);

                let r = lemma1_poly(&inst.psis, &id, &inst.c)?;
                t.pipeline("sd_elimination", &tag, &sd_pipeline(&inst.psis, &inst.c, &r, &mut shifts, &replay)?);

                let r = lemma4_poly(&inst.psis, &id, &inst.c)?;
                for target in 0..n {
                    let rep = heyde_pipeline(&inst.psis, &inst.c, &r, target, &mut shifts, &replay)?;
                    t.pipeline("heyde_elimination", &format!("{tag} target={}", target + 1), &rep);
                }

                let r = lemma6_poly(&inst.psis[0], n)?;
                let rep = sample_mean_pipeline(&inst.psis[0], n, &r, &mut shifts, &replay)?;
                t.pipeline("sample_mean_elimination", &tag, &rep);

                let pair = [inst.psis[0].clone(), inst.psis[1].clone()];
                let chk = lemma5_check(&pair, &inst.c[0], &inst.c[1])?;
                t.record("composed_residual_identity", chk.identity_residual, || tag.clone());
                t.record("composed_pair_residual", chk.transform_residual, || tag.clone());
            }
        }
    }
    Ok(t.finish())
}

/// Runs the suite; every identity must hold to `IDENTITY_TOL`.
pub fn verify_algebra(opts: &VerifyOptions) -> Result<VerifyReport> {
    let rows = if opts.exact {
        run_suite::<Complex<BigRational>>(opts)?
    } else {
        run_suite::<Complex64>(opts)?
    };
    Ok(VerifyReport {
        arithmetic: if opts.exact { "rational" } else { "complex_f64" },
        tolerance: IDENTITY_TOL,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let rep = verify_algebra(&VerifyOptions::default()).unwrap();
        assert!(rep.passed(), "{rep:#?}");
        assert!(rep.max_residual() <= 1e-12);
        let sd = rep.rows.iter().find(|r| r.identity == "sd_elimination").unwrap();
        assert_eq!(sd.instances, 2 * 2 * 5);
    }

    #[test]
    fn exact_suite_is_exactly_zero() {
        let opts = VerifyOptions {
            ns: vec![2],
            ds: vec![1],
            reps: 2,
            exact: true,
            ..Default::default()
        };
        let rep = verify_algebra(&opts).unwrap();
        assert!(rep.passed());
        assert_eq!(rep.max_residual(), 0.0);
    }

    #[test]
    fn fault_names_the_stage() {
        let opts = VerifyOptions {
            fault: Some("eliminate_q".into()),
            reps: 1,
            ..Default::default()
        };
        let rep = verify_algebra(&opts).unwrap();
        assert!(!rep.passed());
        let row = rep.rows.iter().find(|r| !r.passed).unwrap();
        assert!(row.first_failure.as_ref().unwrap().contains("eliminate_q"));
    }

    #[test]
    fn instances_are_seeded() {
        let a: QuadraticInstance<Complex64> = random_instance(3, 2, 7);
        let b: QuadraticInstance<Complex64> = random_instance(3, 2, 7);
        assert_eq!(a.psis, b.psis);
        assert_eq!(a.c, b.c);
    }
}
