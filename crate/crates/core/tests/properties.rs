use nalgebra::{DMatrix, DVector};
use piecewise_market::mcstats::{empirical_order, pairwise_sum};
use piecewise_market::numeraire::{growth_rate, numeraire_dissection, pseudo_inverse};
use piecewise_market::openmarket::{ranked_value, ranks};
use piecewise_market::tree::{
    minimal_financing, optional_decompose, random, DecomposeOutcome, WithdrawalStream,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gram(n: usize, r: usize, entries: &[f64]) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, r, |i, j| entries[i * 6 + j]);
    &b * b.transpose()
}

proptest! {
    #[test]
    fn penrose_identities(n in 1usize..6, r in 0usize..6, entries in prop::collection::vec(-2.0f64..2.0, 36)) {
        let c = gram(n, r.min(n), &entries);
        let p = pseudo_inverse(&c).unwrap();
        let s = 1.0 + c.norm() * p.norm();
        prop_assert!((&c * &p * &c - &c).norm() <= 1e-9 * s * (1.0 + c.norm()));
        prop_assert!((&p * &c * &p - &p).norm() <= 1e-9 * s * (1.0 + p.norm()));
        let cp = &c * &p;
        prop_assert!((&cp - cp.transpose()).norm() <= 1e-9 * s);
        prop_assert!((&p - p.transpose()).norm() <= 1e-9 * (1.0 + p.norm()));
    }

    #[test]
    fn numeraire_maximizes_growth(
        n in 1usize..5,
        entries in prop::collection::vec(-2.0f64..2.0, 36),
        a in prop::collection::vec(-1.0f64..1.0, 5),
        pi in prop::collection::vec(-3.0f64..3.0, 5),
    ) {
        let c = gram(n, n, &entries) + DMatrix::identity(n, n) * 0.1;
        let alpha = DVector::from_column_slice(&a[..n]);
        let step = numeraire_dissection(&alpha, &c).unwrap();
        prop_assert!(step.in_range);
        let g = growth_rate(&step.rho, &alpha, &c);
        prop_assert!((g - step.growth.value().unwrap()).abs() <= 1e-9 * (1.0 + g.abs()));
        let other = growth_rate(&DVector::from_column_slice(&pi[..n]), &alpha, &c);
        prop_assert!(other <= g + 1e-9 * (1.0 + g.abs()));
    }

    #[test]
    fn ranks_agree_with_sorting(v in prop::collection::vec(-3i32..3, 1..9)) {
        let v: Vec<f64> = v.into_iter().map(f64::from).collect();
        let u = ranks(&v);
        let mut seen = u.clone();
        seen.sort();
        prop_assert_eq!(seen, (1..=v.len()).collect::<Vec<_>>());
        let mut sorted = v.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        for k in 1..=v.len() {
            let (x, i) = ranked_value(&v, k).unwrap();
            prop_assert_eq!(x, sorted[k - 1]);
            prop_assert_eq!(u[i], k);
        }
    }

    #[test]
    fn pairwise_sum_matches_naive(xs in prop::collection::vec(-1e3f64..1e3, 0..500)) {
        let naive: f64 = xs.iter().sum();
        let scale: f64 = xs.iter().map(|x| x.abs()).sum();
        prop_assert!((pairwise_sum(&xs) - naive).abs() <= 1e-12 * (1.0 + scale));
    }

    #[test]
    fn order_of_power_laws(p in 0.2f64..2.5, c in 0.01f64..10.0) {
        let dts: Vec<f64> = (4..9).map(|k| 0.5f64.powi(k)).collect();
        let errs: Vec<f64> = dts.iter().map(|d| c * d.powf(p)).collect();
        prop_assert!((empirical_order(&dts, &errs).unwrap() - p).abs() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn minimal_financing_decomposes_with_nonnegative_withdrawals(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random::viable_tree(&mut rng, &random::Shape::default());
        let dk: Vec<f64> = (0..t.len())
            .map(|i| if t.node(i).is_leaf() || rng.random_bool(0.3) { rng.random_range(0.0..2.0) } else { 0.0 })
            .collect();
        let k = WithdrawalStream::new(&t, dk).unwrap();
        let x = minimal_financing(&t, &k).unwrap();
        match optional_decompose(&t, &x).unwrap() {
            DecomposeOutcome::Accepted(d) => {
                prop_assert!(d.reconstruction_error <= 1e-10);
                prop_assert!(d.dk.iter().all(|v| *v >= 0.0));
            }
            DecomposeOutcome::Rejected(v) => prop_assert!(false, "rejected at node {}", v.node),
        }
    }
}
