//! Small hand-checkable trees used by tests, examples and the bundled tree
//! files.

use super::model::{ClaimSpec, EventTree, Node, NodeSpec, TreeFile};

type Row<'a> = (usize, Option<usize>, f64, &'a [f64], Option<&'a [f64]>);

fn build(rows: &[Row]) -> EventTree {
    let specs: Vec<NodeSpec> = rows
        .iter()
        .map(|&(id, parent, prob, prices, post)| NodeSpec {
            id,
            parent,
            prob: parent.map(|_| prob),
            dim: None,
            prices: prices.to_vec(),
            reset: post.is_some(),
            post_prices: post.map(|p| p.to_vec()),
        })
        .collect();
    EventTree::from_specs(&specs).expect("fixture trees are valid")
}

/// `1 → {2, 0.5}` with equal probabilities.
pub fn binomial() -> EventTree {
    build(&[
        (0, None, 1.0, &[1.0], None),
        (1, Some(0), 0.5, &[2.0], None),
        (2, Some(0), 0.5, &[0.5], None),
    ])
}

/// `1 → {2, 1, 0.5}` with equal probabilities (nodes 1, 2, 3).
pub fn trinomial() -> EventTree {
    let t = 1.0 / 3.0;
    build(&[
        (0, None, 1.0, &[1.0], None),
        (1, Some(0), t, &[2.0], None),
        (2, Some(0), t, &[1.0], None),
        (3, Some(0), t, &[0.5], None),
    ])
}

/// Three outcomes spanned by two assets.
pub fn trinomial_two_assets() -> EventTree {
    let t = 1.0 / 3.0;
    build(&[
        (0, None, 1.0, &[1.0, 1.0], None),
        (1, Some(0), t, &[2.0, 1.5], None),
        (2, Some(0), t, &[0.5, 1.5], None),
        (3, Some(0), t, &[1.0, 0.5], None),
    ])
}

/// `1 → {2, 1.5}`: both outcomes gain, so buying the asset is an arbitrage.
pub fn both_up() -> EventTree {
    build(&[
        (0, None, 1.0, &[1.0], None),
        (1, Some(0), 0.5, &[2.0], None),
        (2, Some(0), 0.5, &[1.5], None),
    ])
}

/// One child per node and constant prices.
pub fn deterministic() -> EventTree {
    build(&[
        (0, None, 1.0, &[1.0], None),
        (1, Some(0), 1.0, &[1.0], None),
        (2, Some(1), 1.0, &[1.0], None),
    ])
}

/// A one-asset binomial step, after which a second asset is listed; the
/// second step is incomplete on the up branch.
pub fn two_epoch() -> EventTree {
    let q = 0.25;
    let t = 1.0 / 3.0;
    build(&[
        (0, None, 1.0, &[1.0], None),
        (1, Some(0), 0.5, &[2.0], Some(&[2.0, 1.0])),
        (2, Some(0), 0.5, &[0.5], Some(&[0.5, 1.0])),
        (3, Some(1), q, &[3.0, 1.5], None),
        (4, Some(1), q, &[1.5, 1.5], None),
        (5, Some(1), q, &[2.0, 0.5], None),
        (6, Some(1), q, &[1.5, 0.75], None),
        (7, Some(2), t, &[0.75, 1.2], None),
        (8, Some(2), t, &[0.25, 1.3], None),
        (9, Some(2), t, &[0.6, 0.6], None),
    ])
}

/// Recombining-style binomial with `depth` steps, up factor 2 and down
/// factor 1/2, equal probabilities.
pub fn binomial_steps(depth: usize) -> EventTree {
    let mut specs = vec![NodeSpec {
        id: 0,
        parent: None,
        prob: None,
        dim: None,
        prices: vec![1.0],
        reset: false,
        post_prices: None,
    }];
    let mut frontier = vec![(0usize, 1.0f64)];
    for _ in 0..depth {
        let mut next = Vec::new();
        for (id, s) in frontier {
            for f in [2.0, 0.5] {
                let nid = specs.len();
                specs.push(NodeSpec {
                    id: nid,
                    parent: Some(id),
                    prob: Some(0.5),
                    dim: None,
                    prices: vec![s * f],
                    reset: false,
                    post_prices: None,
                });
                next.push((nid, s * f));
            }
        }
        frontier = next;
    }
    EventTree::from_specs(&specs).expect("valid binomial")
}

/// Put payoff whose strike shrinks by 10% per step, so early exercise pays
/// even without interest.
pub fn shrinking_put(node: &Node) -> f64 {
    (1.5 * 0.9f64.powi(node.depth as i32) - node.prices[0]).max(0.0)
}

/// Named fixtures as tree files, each with a call on the first asset struck
/// at 1 and maturing at the horizon.
pub fn all() -> Vec<(&'static str, TreeFile)> {
    let named = [
        ("binomial", binomial()),
        ("trinomial", trinomial()),
        ("trinomial_two_assets", trinomial_two_assets()),
        ("both_up", both_up()),
        ("deterministic", deterministic()),
        ("two_epoch", two_epoch()),
    ];
    named
        .into_iter()
        .map(|(name, t)| {
            let payoff = t
                .at_depth(t.horizon())
                .iter()
                .map(|&i| (t.node(i).id, (t.node(i).prices[0] - 1.0).max(0.0)))
                .collect();
            let claims = [(
                "call".to_string(),
                ClaimSpec {
                    maturity: t.horizon(),
                    payoff,
                },
            )]
            .into();
            (
                name,
                TreeFile {
                    name: Some(name.to_string()),
                    nodes: t.to_specs(),
                    streams: Default::default(),
                    claims,
                },
            )
        })
        .collect()
}
