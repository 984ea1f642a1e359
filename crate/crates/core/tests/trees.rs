#![allow(clippy::needless_range_loop)]

mod common;

use common::*;
use piecewise_market::tree::{
    fixtures, minimal_financing, na1_probe, optional_decompose, random, superhedge, Claim,
    DecomposeOutcome, EventTree, WithdrawalStream,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Snell envelope of an American payoff on a tree whose nodes have two
/// children each, under the unique martingale weights.
fn snell(t: &EventTree, h: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut u: Vec<f64> = (0..t.len()).map(&h).collect();
    for d in (0..t.horizon()).rev() {
        for &i in t.at_depth(d) {
            let kids = &t.node(i).children;
            let (a, b) = (kids[0], kids[1]);
            let s = t.node(i).prices[0];
            let (sa, sb) = (t.node(a).prices[0], t.node(b).prices[0]);
            let qa = (s - sb) / (sa - sb);
            let cont = qa * u[a] + (1.0 - qa) * u[b];
            u[i] = h(i).max(cont);
        }
    }
    u
}

#[test]
fn american_put_envelope_decomposes() {
    let t = fixtures::binomial_steps(4);
    let h = |i: usize| fixtures::shrinking_put(t.node(i));
    let u = snell(&t, h);
    let DecomposeOutcome::Accepted(d) = optional_decompose(&t, &u).unwrap() else {
        panic!("the Snell envelope is a supermartingale under the deflator");
    };
    assert!(d.reconstruction_error <= 1e-12);
    let mut exercised = 0;
    for i in 0..t.len() {
        assert!(d.dk[i] >= 0.0);
        if t.node(i).is_leaf() {
            continue;
        }
        // the hedge is exact in a complete tree, so all withdrawal is excess,
        // and it is paid exactly where stopping beats continuing
        assert!(d.slack[i].abs() <= 1e-12);
        let continuation = u[i] - d.excess[i];
        assert!((continuation - d.continuation[i]).abs() <= 1e-12);
        if d.excess[i] > 1e-12 {
            exercised += 1;
            assert!((u[i] - h(i)).abs() <= 1e-12);
        }
    }
    assert!(
        exercised > 0,
        "the shrinking strike makes early exercise pay"
    );
}

#[test]
fn american_put_envelope_withdrawals_cost_its_root_value() {
    // financing the envelope's withdrawals plus its terminal value costs
    // exactly the envelope at the root
    let t = fixtures::binomial_steps(3);
    let u = snell(&t, |i| fixtures::shrinking_put(t.node(i)));
    let d = optional_decompose(&t, &u).unwrap().accepted().unwrap();
    let mut dk = d.dk.clone();
    for &l in t.at_depth(t.horizon()) {
        dk[l] += u[l] - d.dk[l];
    }
    let k = WithdrawalStream::new(&t, dk.clone()).unwrap();
    let x = superhedge(&t, &k).unwrap().x;
    assert!((x - u[0]).abs() <= 1e-12, "{x} vs {}", u[0]);
    assert!((x - superhedge_oracle(&t, &dk)).abs() <= 1e-9);
}

/// One-step arbitrage by brute force over `{-3..3}^n`.
fn brute_force_arbitrage(t: &EventTree, i: usize) -> bool {
    let kids = &t.node(i).children;
    let n = t.node(i).effective_prices().len();
    let ds: Vec<Vec<f64>> = kids.iter().map(|&c| t.delta_s(c)).collect();
    let range: Vec<i32> = (-3..=3).collect();
    let thetas: Vec<Vec<f64>> = match n {
        1 => range.iter().map(|&a| vec![a as f64]).collect(),
        2 => range
            .iter()
            .flat_map(|&a| range.iter().map(move |&b| vec![a as f64, b as f64]))
            .collect(),
        _ => unreachable!(),
    };
    thetas.iter().any(|th| {
        let pay: Vec<f64> = ds
            .iter()
            .map(|d| d.iter().zip(th).map(|(x, y)| x * y).sum())
            .collect();
        pay.iter().all(|p| *p >= 0.0) && pay.iter().any(|p| *p > 0.0)
    })
}

#[test]
fn arbitrage_probe_matches_brute_force_on_lattices() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let shape = random::Shape {
        max_depth: 2,
        max_children: 3,
        max_assets: 2,
        resets: false,
        max_nodes: 60,
    };
    let (mut viable, mut not) = (0, 0);
    for _ in 0..300 {
        let t = random::lattice_tree(&mut rng, &shape);
        let brute = (0..t.len()).any(|i| !t.node(i).is_leaf() && brute_force_arbitrage(&t, i));
        let probe = na1_probe(&t);
        assert_eq!(probe.viable, !brute);
        if let Some(c) = probe.certificate {
            not += 1;
            let i = t.index_of(c.node).unwrap();
            let kids = &t.node(i).children;
            let pay: Vec<f64> = kids
                .iter()
                .map(|&k| {
                    t.delta_s(k)
                        .iter()
                        .zip(&c.strategy)
                        .map(|(a, b)| a * b)
                        .sum()
                })
                .collect();
            let scale = c.strategy.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            assert!(pay.iter().all(|p| *p >= -1e-12 * scale));
            assert!(pay.iter().any(|p| *p > 1e-12 * scale));
        } else {
            viable += 1;
        }
    }
    assert!(viable > 20 && not > 20, "{viable} viable, {not} not");
}

#[test]
fn superhedge_is_monotone_sublinear_and_cash_additive() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for (_, t) in tree_set().iter().take(30) {
        let a = random_stream(&mut rng, t);
        let b = random_stream(&mut rng, t);
        let x = |dk: &[f64]| {
            superhedge(t, &WithdrawalStream::new(t, dk.to_vec()).unwrap())
                .unwrap()
                .x
        };
        let sum: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p + q).collect();
        let (xa, xb, xs) = (x(&a), x(&b), x(&sum));
        let tol = 1e-10 * (1.0 + xs.abs());
        assert!(xa <= xs + tol && xb <= xs + tol);
        assert!(xs <= xa + xb + tol);
        let twice: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        assert!((x(&twice) - 2.0 * xa).abs() <= tol);
        let mut cash = a.clone();
        for &l in t.at_depth(t.horizon()) {
            cash[l] += 0.7;
        }
        assert!((x(&cash) - xa - 0.7).abs() <= tol);
    }
}

#[test]
fn minimal_financing_starts_at_the_superhedging_price() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for (_, t) in tree_set().iter().take(20) {
        let k = WithdrawalStream::new(t, random_stream(&mut rng, t)).unwrap();
        let x = minimal_financing(t, &k).unwrap();
        let sh = superhedge(t, &k).unwrap();
        assert!((x[0] - sh.x).abs() <= 1e-10 * (1.0 + sh.x));
    }
}

#[test]
fn claims_on_fixtures() {
    let t = fixtures::trinomial_two_assets();
    let c = Claim::from_fn(&t, 1, |n| (n.prices[0] - 1.0).max(0.0)).unwrap();
    // three outcomes, two assets and cash: every claim is replicated
    let sh = superhedge(&t, &c.stream()).unwrap();
    assert!((sh.x - superhedge_oracle(&t, &c.payoff)).abs() <= 1e-9);
    assert!(replicable_oracle(&t, &c.payoff));
    assert!(!replicable_oracle(&fixtures::trinomial(), &{
        let tr = fixtures::trinomial();
        Claim::from_fn(&tr, 1, |n| (n.prices[0] - 1.0).max(0.0))
            .unwrap()
            .payoff
    }));
}
