use std::collections::HashMap;

use learnquad::hermite::{
    eval_monomial, gauss_hermite_1d, gaussian_monomial_moment, monomial_exponents, smolyak_rule, smolyak_terms,
};
use learnquad::QuadratureRuleF64;

#[test]
fn node_counts_in_nine_and_25_dims() {
    for (dim, counts) in [(9, vec![1, 19, 181, 1177]), (25, vec![1, 51, 1301, 22201])] {
        let got: Vec<usize> = (1..=4).map(|l| smolyak_rule::<f64>(dim, l).unwrap().len()).collect();
        assert_eq!(got, counts, "dim {dim}");
    }
}

/// Combination formula evaluated term by term, without merging nodes.
fn unmerged_integral(dim: usize, level: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    let rules: Vec<_> = (1..=level).map(|n| gauss_hermite_1d::<f64>(n).unwrap()).collect();
    let mut total = 0.0;
    for term in smolyak_terms(dim, level).unwrap() {
        let r: Vec<_> = term.orders.iter().map(|&k| &rules[k - 1]).collect();
        let mut idx = vec![0; dim];
        let mut x = vec![0.0; dim];
        loop {
            let mut w = term.coefficient as f64;
            for m in 0..dim {
                x[m] = r[m].nodes()[idx[m]];
                w *= r[m].weights()[idx[m]];
            }
            total += w * f(&x);
            let mut m = 0;
            while m < dim {
                idx[m] += 1;
                if idx[m] < r[m].len() {
                    break;
                }
                idx[m] = 0;
                m += 1;
            }
            if m == dim {
                break;
            }
        }
    }
    total
}

#[test]
fn merged_rule_matches_unmerged_combination() {
    let f = |x: &[f64]| (0.3 * x[0] - 0.2 * x[1] + 0.1 * x[2]).cos() * (1.0 + x[0] * x[2]).abs().sqrt();
    for level in 1..=5 {
        let rule = smolyak_rule::<f64>(3, level).unwrap();
        let a = rule.integrate(f).unwrap();
        let b = unmerged_integral(3, level, f);
        assert!((a - b).abs() < 1e-13, "level {level}: {a} vs {b}");
    }
}

#[test]
fn nodes_are_unique_and_symmetric() {
    let rule = smolyak_rule::<f64>(4, 4).unwrap();
    let mut seen = HashMap::new();
    for j in 0..rule.len() {
        let key: Vec<u64> = rule.node(j).iter().map(|v| v.to_bits()).collect();
        assert!(seen.insert(key, rule.weights()[j]).is_none(), "duplicate node {j}");
    }
    for j in 0..rule.len() {
        let mirrored: Vec<u64> = rule.node(j).iter().map(|v| (-v + 0.0).to_bits()).collect();
        let w = seen.get(&mirrored).expect("mirror image is a node");
        assert!((w - rule.weights()[j]).abs() < 1e-15);
    }
    let total: f64 = rule.weights().iter().sum();
    assert!((total - 1.0).abs() < 1e-12, "{total}");
}

#[test]
fn exactness_is_sharp() {
    // exact through degree 2L-1, and some monomial of degree 2L is missed
    for level in 1..=4 {
        let rule = smolyak_rule::<f64>(2, level).unwrap();
        let err = |deg: usize| {
            monomial_exponents(2, deg)
                .iter()
                .map(|p| (rule.integrate(|x| eval_monomial(p, x)).unwrap() - gaussian_monomial_moment::<f64>(p)).abs())
                .fold(0.0, f64::max)
        };
        assert!(err(2 * level - 1) < 1e-10);
        assert!(err(2 * level) > 1e-3, "level {level}");
    }
}

#[test]
fn single_precision_rule() {
    let r32 = smolyak_rule::<f32>(9, 3).unwrap();
    let r64: QuadratureRuleF64 = smolyak_rule(9, 3).unwrap();
    assert_eq!(r32.len(), r64.len());
    let q = r32.integrate(|x| x[0] * x[0] * x[3] * x[3]).unwrap();
    assert!((q - 1.0).abs() < 1e-5);
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn random_polynomials_integrate_exactly(
            level in 1usize..=4,
            coeffs in prop::collection::vec(-2.0f64..2.0, 35),
        ) {
            let rule = smolyak_rule::<f64>(3, level).unwrap();
            let terms = monomial_exponents(3, 2 * level - 1);
            let exact: f64 = terms.iter().zip(&coeffs).map(|(p, c)| c * gaussian_monomial_moment::<f64>(p)).sum();
            let q = rule
                .integrate(|x| terms.iter().zip(&coeffs).map(|(p, c)| c * eval_monomial(p, x)).sum())
                .unwrap();
            prop_assert!((q - exact).abs() < 1e-10 * (1.0 + exact.abs()), "{} vs {}", q, exact);
        }
    }
}
