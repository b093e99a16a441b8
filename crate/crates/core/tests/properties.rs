use std::sync::Arc;

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use proptest::prelude::*;

use charlab::charfn::EmpiricalCf;
use charlab::dist::{ComponentDist, GaussianDist, ProductDist, ScalarFamily};
use charlab::poly::{BlockLayout, BlockPolynomial};
use charlab::space::check_heyde_condition;
use charlab::theorems::lemma5_transform;
use charlab::Operator;

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn spd(d: usize, entries: &[f64]) -> DMatrix<f64> {
    let b = DMatrix::from_fn(d, d, |i, j| entries[i * 4 + j]);
    &b * b.transpose() + DMatrix::identity(d, d) * 0.1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gaussian_cf_matches_closed_form(
        d in 1usize..=4,
        m in prop::collection::vec(-2.0f64..2.0, 4),
        b in prop::collection::vec(-1.0f64..1.0, 16),
        f in prop::collection::vec(-3.0f64..3.0, 4),
    ) {
        let cov = spd(d, &b);
        let g = GaussianDist::new(m[..d].to_vec(), cov.clone()).unwrap();
        let got = ComponentDist::Gaussian(g).exact_cf(&f[..d]).unwrap();
        let mut quad = 0.0;
        let mut lin = 0.0;
        for i in 0..d {
            lin += m[i] * f[i];
            for j in 0..d {
                quad += f[i] * cov[(i, j)] * f[j];
            }
        }
        let want = Complex64::new(-0.5 * quad, lin).exp();
        prop_assert!((got - want).norm() <= 1e-12, "{got} vs {want}");
    }

    #[test]
    fn difference_of_order_degree_plus_one_vanishes(
        coeffs in prop::collection::vec(-5i64..=5, 15),
        top in 1i64..=5,
        degree in 1u32..=4,
        h in prop::collection::vec(prop_oneof![-3i64..=-1, 1i64..=3], 2),
    ) {
        let layout = BlockLayout::new(["f", "g"], 1);
        let mut terms = Vec::new();
        let mut k = 0;
        for total in 0..=degree {
            for a in 0..=total {
                let c = if total == degree && a == 0 { top } else { coeffs[k % coeffs.len()] };
                k += 1;
                terms.push((vec![a as u8, (total - a) as u8], rat(c, 1)));
            }
        }
        let p = BlockPolynomial::from_terms(&layout, terms).unwrap();
        prop_assert_eq!(p.total_degree(), degree);
        let shift = [rat(h[0], 1), rat(h[1], 2)];
        prop_assert!(p.delta_pow(&shift, degree + 1).unwrap().is_zero());

        // Delta^D p is the constant D! * (leading form at h)
        let top_diff = p.delta_pow(&shift, degree).unwrap();
        let fact: i64 = (1..=degree as i64).product();
        let oracle = p.leading_form().eval(&shift) * rat(fact, 1);
        prop_assert_eq!(top_diff.total_degree(), 0);
        prop_assert_eq!(top_diff.constant_term(), oracle.clone());
        if oracle != rat(0, 1) {
            prop_assert!(!top_diff.is_zero());
        }
    }

    #[test]
    fn composed_pair_coefficients(c in prop::collection::vec(-3.0f64..3.0, 4)) {
        let cop = Operator::new(DMatrix::from_row_slice(2, 2, &c)).unwrap();
        prop_assume!(cop.sigma_min() > 1e-3);
        let id = Operator::identity(2);
        let (l1, l2) = lemma5_transform(&id, &cop).unwrap();
        let ipc = id.add(&cop).unwrap();
        prop_assert!(l1[0].max_abs_diff(&ipc) == 0.0);
        prop_assert!(l1[1].max_abs_diff(&cop.scale(2.0)) == 0.0);
        prop_assert!(l2[0].max_abs_diff(&id.scale(2.0)) == 0.0);
        prop_assert!(l2[1].max_abs_diff(&ipc) == 0.0);
    }

    #[test]
    fn inverse_round_trips(c in prop::collection::vec(-3.0f64..3.0, 9)) {
        let op = Operator::new(DMatrix::from_row_slice(3, 3, &c)).unwrap();
        prop_assume!(op.sigma_min() > 1e-2);
        let inv = op.inverse().unwrap();
        let prod = op.compose(&inv).unwrap();
        prop_assert!(prod.max_abs_diff(&Operator::identity(3)) < 1e-9);
    }

    #[test]
    fn empirical_cf_is_a_cf(seed in 0u64..1000, t in prop::collection::vec(-4.0f64..4.0, 2)) {
        let dist = ProductDist::iid(ComponentDist::iid(ScalarFamily::Exponential { rate: 1.5 }, 2).unwrap(), 1).unwrap();
        let e = EmpiricalCf::component(Arc::new(dist.sample(500, seed).unwrap()), 0).unwrap();
        let (at0, se0) = e.eval(&[0.0, 0.0]);
        prop_assert!((at0 - Complex64::from(1.0)).norm() < 1e-12);
        prop_assert!(se0 < 1e-12);
        let (v, _) = e.eval(&t);
        let (w, _) = e.eval(&[-t[0], -t[1]]);
        prop_assert!(v.norm() <= 1.0 + 1e-12);
        prop_assert!((v - w.conj()).norm() < 1e-12);
    }
}

#[test]
fn heyde_condition_scalar_cases() {
    let one = Operator::identity(1);
    let a = [one.clone(), one.clone()];
    let fails = [one.clone(), Operator::scalar(1, -1.0)];
    let holds = [one.clone(), Operator::scalar(1, 2.0)];
    assert!(!check_heyde_condition(&a, &fails, 1e-10).unwrap());
    assert!(check_heyde_condition(&a, &holds, 1e-10).unwrap());
}

/// The influence standard error should cover the estimation error at the
/// nominal 4-sigma rate.
#[test]
fn empirical_cf_noise_model() {
    let dist = ProductDist::iid(ComponentDist::iid(ScalarFamily::Laplace { b: 0.8 }, 1).unwrap(), 1).unwrap();
    let points: Vec<f64> = (1..=10).map(|k| 0.25 * k as f64).collect();
    let mut outside = 0;
    let mut total = 0;
    for seed in 0..20 {
        let e = EmpiricalCf::component(Arc::new(dist.sample(10_000, seed).unwrap()), 0).unwrap();
        for &t in &points {
            let (v, se) = e.eval(&[t]);
            let exact = 1.0 / (1.0 + 0.64 * t * t);
            if (v - Complex64::from(exact)).norm() > 4.0 * se {
                outside += 1;
            }
            total += 1;
        }
    }
    assert!(outside as f64 <= 0.05 * total as f64, "{outside} of {total} beyond 4 se");
}
