//! Random tree generators for property tests.

use rand::Rng;

use super::model::{EventTree, NodeSpec};

/// Size limits of a generated tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shape {
    pub max_depth: usize,
    pub max_children: usize,
    pub max_assets: usize,
    /// Allow dimension changes at inner nodes.
    pub resets: bool,
    pub max_nodes: usize,
}

impl Default for Shape {
    fn default() -> Self {
        Shape {
            max_depth: 4,
            max_children: 4,
            max_assets: 2,
            resets: true,
            max_nodes: 400,
        }
    }
}

fn positive_weights(rng: &mut impl Rng, m: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Increments with `Σ q ΔS = 0` for a random strictly positive `q`, scaled
/// down until every child price stays positive.
fn martingale_increments(rng: &mut impl Rng, prices: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = prices.len();
    if m == 1 {
        return vec![vec![0.0; n]];
    }
    let q = positive_weights(rng, m);
    let mut ds: Vec<Vec<f64>> = Vec::with_capacity(m);
    for j in 0..m - 1 {
        if j > 0 && rng.random_bool(0.1) {
            // repeated outcome
            ds.push(ds[j - 1].clone());
        } else {
            ds.push(
                prices
                    .iter()
                    .map(|s| s * rng.random_range(-0.5..0.5))
                    .collect(),
            );
        }
    }
    let last: Vec<f64> = (0..n)
        .map(|a| -(0..m - 1).map(|j| q[j] * ds[j][a]).sum::<f64>() / q[m - 1])
        .collect();
    ds.push(last);
    let mut scale = 1.0;
    while ds
        .iter()
        .any(|d| d.iter().zip(prices).any(|(x, s)| s + scale * x <= 0.05 * s))
    {
        scale *= 0.5;
    }
    ds.into_iter()
        .map(|d| d.into_iter().map(|x| x * scale).collect())
        .collect()
}

/// Grows a tree breadth first, asking `step` for the child increments of
/// each inner node. Returns `None` when the node budget is exceeded.
fn grow(
    rng: &mut impl Rng,
    shape: &Shape,
    root: Vec<f64>,
    mut step: impl FnMut(&mut dyn rand::RngCore, &[f64], usize) -> Vec<Vec<f64>>,
) -> Option<EventTree> {
    let depth = rng.random_range(1..=shape.max_depth.max(1));
    let mut specs = vec![NodeSpec {
        id: 0,
        parent: None,
        prob: None,
        dim: None,
        prices: root,
        reset: false,
        post_prices: None,
    }];
    let mut frontier = vec![0usize];
    for d in 0..depth {
        let mut next = Vec::new();
        for k in frontier {
            if d > 0 && shape.resets && rng.random_bool(0.2) {
                let cur = specs[k].prices.clone();
                let n = cur.len();
                let up = n < shape.max_assets && (n == 1 || rng.random_bool(0.5));
                let post = if up {
                    let mut p = cur.clone();
                    p.push(rng.random_range(0.5..2.0));
                    p
                } else if n > 1 {
                    let drop = rng.random_range(0..n);
                    cur.iter()
                        .enumerate()
                        .filter(|(i, _)| *i != drop)
                        .map(|(_, v)| *v)
                        .collect()
                } else {
                    cur.clone()
                };
                if post.len() != n {
                    specs[k].reset = true;
                    specs[k].post_prices = Some(post);
                }
            }
            let base = specs[k]
                .post_prices
                .clone()
                .unwrap_or_else(|| specs[k].prices.clone());
            let m = rng.random_range(2..=shape.max_children.max(2));
            let ds = step(rng, &base, m);
            let p = positive_weights(rng, ds.len());
            for (j, inc) in ds.into_iter().enumerate() {
                let id = specs.len();
                specs.push(NodeSpec {
                    id,
                    parent: Some(k),
                    prob: Some(p[j]),
                    dim: None,
                    prices: base.iter().zip(inc).map(|(s, x)| s + x).collect(),
                    reset: false,
                    post_prices: None,
                });
                next.push(id);
            }
            if specs.len() > shape.max_nodes {
                return None;
            }
        }
        frontier = next;
    }
    Some(EventTree::from_specs(&specs).expect("generated trees are well formed"))
}

/// A random tree in which every node admits a strictly positive deflator.
pub fn viable_tree(rng: &mut impl Rng, shape: &Shape) -> EventTree {
    loop {
        let n = rng.random_range(1..=shape.max_assets.max(1));
        let root: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let t = grow(rng, shape, root, |r, s, m| {
            let mut r = r;
            martingale_increments(&mut r, s, m)
        });
        if let Some(t) = t {
            return t;
        }
    }
}

/// A random tree with increments on the half-integer lattice in `[-1, 1]`
/// and prices near 10; viability is left to chance. With at most two assets
/// any one-step arbitrage has a representative in `{-3..3}^n`.
pub fn lattice_tree(rng: &mut impl Rng, shape: &Shape) -> EventTree {
    loop {
        let n = rng.random_range(1..=shape.max_assets.clamp(1, 2));
        let no_resets = Shape {
            resets: false,
            ..*shape
        };
        let t = grow(rng, &no_resets, vec![10.0; n], |r, s, m| {
            (0..m)
                .map(|_| {
                    (0..s.len())
                        .map(|_| r.random_range(-2i32..=2) as f64 * 0.5)
                        .collect()
                })
                .collect()
        });
        if let Some(t) = t {
            return t;
        }
    }
}
