use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::field::{Field, FieldValue};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Polynomial,
    NotPolynomial,
    Inconclusive,
}

/// Binomial weights of the forward difference of order `m`, lowest point first.
fn difference_weights(m: usize) -> Vec<f64> {
    let mut w = vec![1.0f64];
    for _ in 0..m {
        let mut next = vec![0.0; w.len() + 1];
        for (i, &c) in w.iter().enumerate() {
            next[i] -= c;
            next[i + 1] += c;
        }
        w = next;
    }
    w
}

/// `Delta_h^order F(base)` with the standard error of the combination
/// (treating point errors as independent).
pub fn finite_difference(field: &dyn Field, base: &[f64], h: &[f64], order: usize) -> Result<FieldValue> {
    if base.len() != field.layout().nvars() || h.len() != base.len() {
        return Err(Error::DimensionMismatch {
            expected: field.layout().nvars(),
            got: base.len().min(h.len()),
        });
    }
    let vals = match field.eval_lines(base, &[(h.to_vec(), order + 1)]).pop() {
        Some(Ok(v)) => v,
        Some(Err(k)) => {
            return Err(Error::OutOfDomain {
                point: base.iter().zip(h).map(|(b, s)| b + k as f64 * s).collect(),
            })
        }
        None => unreachable!("one line requested"),
    };
    let w = difference_weights(order);
    let value: Complex64 = vals.iter().zip(&w).map(|(v, c)| v.value * *c).sum();
    let se = vals.iter().zip(&w).map(|(v, c)| (v.se * c).powi(2)).sum::<f64>().sqrt();
    Ok(FieldValue { value, se })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeTestParams {
    /// Valid stencils required per degree.
    pub probes: usize,
    /// Radius of the per-block ball holding probe base points.
    pub radius: f64,
    /// Threshold floor for exact (zero standard error) fields.
    pub exact_tol: f64,
    pub seed: u64,
    /// Draws allowed per required probe before giving up.
    pub attempts_per_probe: usize,
}

impl Default for DegreeTestParams {
    fn default() -> Self {
        Self {
            probes: 12,
            radius: 2.0,
            exact_tol: 1e-9,
            seed: 0,
            attempts_per_probe: 50,
        }
    }
}

/// Outcome of the finite-difference test `Delta_h^{D+1} F = 0` at one degree
/// bound. `max_residual`/`noise_threshold` describe the probe with the largest
/// residual-to-threshold ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyDegreeCertificate {
    pub degree_bound: u32,
    pub verdict: Verdict,
    pub max_residual: f64,
    pub noise_threshold: f64,
    pub max_ratio: f64,
    pub max_abs_residual: f64,
    pub probe_count: usize,
    pub attempts: usize,
    pub grid_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

#[derive(Default)]
struct Tally {
    best_ratio: f64,
    best: (f64, f64),
    max_abs: f64,
    count: usize,
}

fn random_block_ball<R: Rng>(r: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    let g: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    let rad = radius * r.gen::<f64>().powf(1.0 / dim as f64);
    g.iter().map(|x| x / norm * rad).collect()
}

/// Runs the probe loop for several degree bounds at once; every probe shares
/// its base point across degrees and scales one random direction to each
/// degree's shift bound `radius / (D + 2)`. The radius shrinks to the field's
/// domain when that is smaller.
fn run_probes(field: &dyn Field, degrees: &[u32], params: &DegreeTestParams) -> Vec<PolyDegreeCertificate> {
    let layout = field.layout();
    let (blocks, dim) = (layout.blocks(), layout.dim());
    let mut r = rng::stream(params.seed, &[rng::purpose::PROBES]);
    // stencils span up to twice the base radius
    let radius = match field.domain_radius() {
        Some(rho) if rho.is_finite() => params.radius.min(2.0 * rho),
        _ => params.radius,
    };
    let mut tallies: Vec<Tally> = degrees.iter().map(|_| Tally::default()).collect();
    let max_attempts = params.probes.max(1) * params.attempts_per_probe.max(1);
    let weights: Vec<Vec<f64>> = degrees.iter().map(|&d| difference_weights(d as usize + 1)).collect();
    let mut attempts = 0;
    while attempts < max_attempts && tallies.iter().any(|t| t.count < params.probes) {
        attempts += 1;
        let base: Vec<f64> = (0..blocks)
            .flat_map(|_| random_block_ball(&mut r, dim, radius))
            .collect();
        let dir: Vec<Vec<f64>> = (0..blocks)
            .map(|_| (0..dim).map(|_| r.sample(StandardNormal)).collect())
            .collect();
        let max_norm = dir
            .iter()
            .map(|b: &Vec<f64>| b.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
            .max(1e-300);
        let s: f64 = r.gen_range(0.5..1.0);
        let pending: Vec<usize> = (0..degrees.len()).filter(|&i| tallies[i].count < params.probes).collect();
        let lines: Vec<(Vec<f64>, usize)> = pending
            .iter()
            .map(|&i| {
                let scale = s * radius / (degrees[i] as f64 + 2.0) / max_norm;
                let step = dir.iter().flatten().map(|x| x * scale).collect();
                (step, degrees[i] as usize + 2)
            })
            .collect();
        for (&i, res) in pending.iter().zip(field.eval_lines(&base, &lines)) {
            let Ok(vals) = res else { continue };
            let d = degrees[i];
            let resid: Complex64 = vals.iter().zip(&weights[i]).map(|(v, c)| v.value * *c).sum();
            let resid = resid.norm();
            let se_max = vals.iter().map(|v| v.se).fold(0.0, f64::max);
            let thr = (2f64.powi(d as i32 + 1) * 4.0 * se_max).max(params.exact_tol);
            let t = &mut tallies[i];
            let ratio = resid / thr;
            if t.count == 0 || ratio > t.best_ratio {
                t.best_ratio = ratio;
                t.best = (resid, thr);
            }
            t.max_abs = t.max_abs.max(resid);
            t.count += 1;
        }
    }
    degrees
        .iter()
        .zip(tallies)
        .map(|(&d, t)| {
            let (verdict, diagnostic) = if t.count < params.probes {
                (
                    Verdict::Inconclusive,
                    Some(format!(
                        "only {} of {} stencils fit the valid domain after {attempts} draws",
                        t.count, params.probes
                    )),
                )
            } else if t.best_ratio <= 1.0 {
                (Verdict::Polynomial, None)
            } else if t.best_ratio > 3.0 {
                (Verdict::NotPolynomial, None)
            } else {
                (
                    Verdict::Inconclusive,
                    Some(format!("largest residual is {:.2} noise thresholds", t.best_ratio)),
                )
            };
            PolyDegreeCertificate {
                degree_bound: d,
                verdict,
                max_residual: t.best.0,
                noise_threshold: t.best.1,
                max_ratio: t.best_ratio,
                max_abs_residual: t.max_abs,
                probe_count: t.count,
                attempts,
                grid_points: t.count * (d as usize + 2),
                diagnostic,
            }
        })
        .collect()
}

/// Finite-difference test of "F is a polynomial of degree at most `d`".
pub fn degree_test(field: &dyn Field, d: u32, params: &DegreeTestParams) -> PolyDegreeCertificate {
    run_probes(field, &[d], params).remove(0)
}

/// Degree tests for every bound `0..=d_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    pub verdict: Verdict,
    /// Smallest degree bound certified polynomial.
    pub degree: Option<u32>,
    pub per_degree: Vec<PolyDegreeCertificate>,
}

impl Certification {
    /// Certificate reported for the overall verdict: the certified degree, or
    /// the largest decisive rejection, or the top bound.
    pub fn headline(&self) -> &PolyDegreeCertificate {
        if let Some(d) = self.degree {
            return &self.per_degree[d as usize];
        }
        self.per_degree
            .iter()
            .rev()
            .find(|c| c.verdict == Verdict::NotPolynomial)
            .unwrap_or_else(|| self.per_degree.last().expect("at least one degree"))
    }

    /// True when the tests rule out every polynomial of degree at most `k`:
    /// no bound up to `k` passed and some bound of at least `k` was rejected.
    pub fn excludes_degree(&self, k: u32) -> bool {
        let passed_low = self
            .per_degree
            .iter()
            .any(|c| c.degree_bound <= k && c.verdict == Verdict::Polynomial);
        let rejected = self
            .per_degree
            .iter()
            .any(|c| c.degree_bound >= k && c.verdict == Verdict::NotPolynomial);
        !passed_low && rejected
    }

    pub fn polynomial_within(&self, k: u32) -> bool {
        self.degree.is_some_and(|d| d <= k)
    }
}

/// Runs the degree test for `D = 0..=d_max`; the verdict is polynomial at the
/// smallest passing bound, otherwise not polynomial if any bound was rejected.
pub fn certify(field: &dyn Field, d_max: u32, params: &DegreeTestParams) -> Certification {
    let degrees: Vec<u32> = (0..=d_max).collect();
    let per_degree = run_probes(field, &degrees, params);
    let degree = per_degree
        .iter()
        .find(|c| c.verdict == Verdict::Polynomial)
        .map(|c| c.degree_bound);
    let verdict = if degree.is_some() {
        Verdict::Polynomial
    } else if per_degree.iter().any(|c| c.verdict == Verdict::NotPolynomial) {
        Verdict::NotPolynomial
    } else {
        Verdict::Inconclusive
    };
    Certification {
        verdict,
        degree,
        per_degree,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charfn::field::{FnField, PolyField};
    use crate::charfn::{CfSource, LogCombination, LogMode};
    use crate::dist::{ComponentDist, GaussianDist, ScalarFamily};
    use crate::poly::{BlockLayout, BlockPolynomial};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn square_field() -> FnField<impl Fn(&[f64]) -> Option<FieldValue> + Sync> {
        FnField::new(BlockLayout::single("f", 1), |p: &[f64]| {
            Some(FieldValue {
                value: Complex64::from(p[0] * p[0]),
                se: 0.0,
            })
        })
    }

    #[test]
    fn differences_of_a_square() {
        let f = square_field();
        assert!(finite_difference(&f, &[0.7], &[1.3], 3).unwrap().value.norm() < 1e-12);
        assert!((finite_difference(&f, &[0.4], &[1.0], 2).unwrap().value.re - 2.0).abs() < 1e-12);
        let c = FnField::new(BlockLayout::single("f", 1), |_: &[f64]| {
            Some(FieldValue {
                value: Complex64::from(3.0),
                se: 0.0,
            })
        });
        assert_eq!(finite_difference(&c, &[0.1], &[0.5], 1).unwrap().value.norm(), 0.0);
    }

    #[test]
    fn out_of_domain_names_the_point() {
        let f = FnField::new(BlockLayout::single("f", 1), |p: &[f64]| {
            (p[0] < 1.0).then_some(FieldValue {
                value: Complex64::from(p[0]),
                se: 0.0,
            })
        });
        match finite_difference(&f, &[0.0], &[0.4], 3) {
            Err(Error::OutOfDomain { point }) => assert!((point[0] - 1.2).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    fn gaussian_log_field() -> LogCombination {
        let g = GaussianDist::new(vec![0.5, -0.2], DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.6])).unwrap();
        let mut c = LogCombination::new(BlockLayout::single("f", 2), LogMode::Unwrapped, 0.2).unwrap();
        let s = c.add_source(CfSource::Exact(ComponentDist::Gaussian(g))).unwrap();
        c.add_term(s, -1.0, &[(0, DMatrix::identity(2, 2))]);
        c
    }

    #[test]
    fn exact_gaussian_degree_bounds() {
        let c = gaussian_log_field();
        let p = DegreeTestParams::default();
        let two = degree_test(&c, 2, &p);
        assert_eq!(two.verdict, Verdict::Polynomial);
        assert!(two.max_abs_residual <= 1e-9);
        assert_eq!(degree_test(&c, 1, &p).verdict, Verdict::NotPolynomial);
        let cert = certify(&c, 4, &p);
        assert_eq!(cert.degree, Some(2));
    }

    #[test]
    fn log_sinc_is_not_low_degree() {
        let u = ComponentDist::iid(ScalarFamily::Uniform { a: -1.0, b: 1.0 }, 1).unwrap();
        let mut c = LogCombination::new(BlockLayout::single("f", 1), LogMode::Symmetrized, 0.2).unwrap();
        let s = c.add_source(CfSource::Exact(u)).unwrap();
        c.add_term(s, 1.0, &[(0, DMatrix::identity(1, 1))]);
        let cert = certify(&c, 4, &DegreeTestParams::default());
        for d in &cert.per_degree {
            assert_eq!(d.verdict, Verdict::NotPolynomial, "D = {}", d.degree_bound);
        }
        assert!(cert.excludes_degree(2));
    }

    #[test]
    fn zero_field_is_constant() {
        let z = PolyField(BlockPolynomial::zero(&BlockLayout::new(["f", "g"], 1)));
        let cert = certify(&z, 4, &DegreeTestParams::default());
        assert_eq!(cert.degree, Some(0));
    }

    #[test]
    fn starved_domain_is_inconclusive() {
        let f = FnField::new(BlockLayout::single("f", 1), |_: &[f64]| None);
        let c = degree_test(&f, 2, &DegreeTestParams::default());
        assert_eq!(c.verdict, Verdict::Inconclusive);
        assert!(c.diagnostic.is_some());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn exact_polynomials_pass_at_their_degree(
            coeffs in proptest::collection::vec(-2.0f64..2.0, 6),
            deg in 1u32..5,
        ) {
            let l = BlockLayout::new(["f", "g"], 1);
            let mut terms = vec![(vec![deg as u8, 0], 1.0 + coeffs[0].abs())];
            for (i, c) in coeffs.iter().enumerate().skip(1) {
                let a = (i as u32) % (deg + 1);
                terms.push((vec![a as u8, ((deg - a).min(i as u32 % 2)) as u8], *c));
            }
            let p = BlockPolynomial::from_terms(&l, terms.into_iter().map(|(e, c)| (e, Complex64::from(c)))).unwrap();
            let top = p.total_degree();
            let field = PolyField(p);
            let params = DegreeTestParams { probes: 6, ..Default::default() };
            prop_assert_eq!(degree_test(&field, top, &params).verdict, Verdict::Polynomial);
            prop_assert_eq!(degree_test(&field, top - 1, &params).verdict, Verdict::NotPolynomial);
        }
    }
}
