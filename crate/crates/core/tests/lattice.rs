use proptest::prelude::*;
use rbsde_core::lattice::binomial_half_pmf;
use rbsde_core::{Engine, Lattice};

fn field(values: &[f64], len: usize) -> Vec<f64> {
    (0..len).map(|i| values[i % values.len()]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn iterated_expectation_matches_weights(
        d in 1usize..=2,
        m in 1usize..=8,
        values in prop::collection::vec(-10.0f64..10.0, 1..40),
    ) {
        let lat = Lattice::build(d, 1.3, m, 1_000_000).unwrap();
        let mut f = field(&values, lat.layer_len(m));
        let direct: f64 = lat.weights(m).iter().zip(&f).map(|(w, v)| w * v).sum();
        for layer in (0..m).rev() {
            f = lat.cond_exp(layer, &f, 1).unwrap();
        }
        prop_assert!((f[0] - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
    }

    #[test]
    fn conditional_expectation_is_monotone(
        d in 1usize..=2,
        m in 1usize..=6,
        base in prop::collection::vec(-5.0f64..5.0, 1..30),
        bump in prop::collection::vec(0.0f64..3.0, 1..30),
    ) {
        let lat = Lattice::build(d, 1.0, m, 1_000_000).unwrap();
        let len = lat.layer_len(m);
        let lo = field(&base, len);
        let bumped = field(&bump, len);
        let hi: Vec<f64> = lo.iter().zip(&bumped).map(|(a, b)| a + b).collect();
        let e_lo = lat.cond_exp(m - 1, &lo, 1).unwrap();
        let e_hi = lat.cond_exp(m - 1, &hi, 1).unwrap();
        prop_assert!(e_lo.iter().zip(&e_hi).all(|(a, b)| a <= b));
    }

    #[test]
    fn children_recombine(d in 1usize..=3, m in 0usize..6, idx in 0usize..1000) {
        let lat = Lattice::build(d, 1.0, 6, 1_000_000).unwrap();
        let idx = idx % lat.layer_len(m);
        let kids = lat.children(m, idx);
        prop_assert_eq!(kids.len(), 1 << d);
        prop_assert!(kids.iter().all(|&c| c < lat.layer_len(m + 1)));
        let parent = lat.states(m);
        let next = lat.states(m + 1);
        let h = lat.sqrt_dt();
        for (mv, &c) in kids.iter().enumerate() {
            for r in 0..d {
                let step = if (mv >> r) & 1 == 1 { h } else { -h };
                prop_assert!((next[c * d + r] - parent[idx * d + r] - step).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn binomial_matches_pascal() {
    let mut row = vec![1.0f64];
    for _ in 0..40 {
        let mut next = vec![1.0; row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
    let scale = 2f64.powi(-40);
    let pmf = binomial_half_pmf(40);
    for (a, b) in pmf.iter().zip(&row) {
        assert!((a - b * scale).abs() < 1e-14, "{a} vs {}", b * scale);
    }
}

#[test]
fn budget_counts_last_layer() {
    assert!(Lattice::build(2, 1.0, 999, 1_000_000).is_ok());
    assert!(Lattice::build(2, 1.0, 1000, 1_000_000).is_err());
}
