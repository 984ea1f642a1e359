//! Superhedging, its dual over deflators, minimal financing and the
//! optional decomposition.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{Claim, EventTree, NodeValues, WithdrawalStream};
use super::onestep::OneStep;
use super::viable_geometry;
use crate::error::Result;

/// Relative tolerance for decomposition acceptance and withdrawals.
const DECOMP_TOL: f64 = 1e-10;

fn child_vector(tree: &EventTree, i: usize, values: &[f64]) -> DVector<f64> {
    children_by(tree, i, |c| values[c])
}

fn children_by(tree: &EventTree, i: usize, f: impl Fn(usize) -> f64) -> DVector<f64> {
    let kids = &tree.node(i).children;
    DVector::from_iterator(kids.len(), kids.iter().map(|&c| f(c)))
}

/// Runs `f` on every inner node, deepest first, nodes of one depth in
/// parallel. `f` sees the values already computed for deeper nodes.
fn backward<T: Send + Sync>(
    tree: &EventTree,
    leaf: impl Fn(usize) -> T,
    f: impl Fn(usize, &[T]) -> T + Sync,
) -> Vec<T> {
    // leaf values double as placeholders for inner nodes until their depth
    let mut out: Vec<T> = (0..tree.len()).map(leaf).collect();
    for d in (0..tree.horizon()).rev() {
        let row: Vec<(usize, T)> = tree
            .at_depth(d)
            .par_iter()
            .map(|&i| (i, f(i, &out)))
            .collect();
        for (i, v) in row {
            out[i] = v;
        }
    }
    out
}

/// Cheapest superhedge of a withdrawal stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Superhedge {
    /// Initial capital `x(K)`.
    pub x: f64,
    /// Shares held from each inner node to its children (empty at leaves).
    pub theta: Vec<Vec<f64>>,
    /// `V(node)`: capital needed at the node before its own withdrawal.
    pub value: NodeValues,
    /// Wealth `x + ϑ·S` of the hedge, before withdrawals.
    pub wealth: NodeValues,
    /// `wealth − K >= V − ΔK` at every node.
    pub superhedges: bool,
}

pub fn superhedge(tree: &EventTree, k: &WithdrawalStream) -> Result<Superhedge> {
    let geo = viable_geometry(tree)?;
    let step = backward(
        tree,
        |i| (k.dk[i], Vec::new()),
        |i, done| {
            let g = geo[i].as_ref().expect("inner node");
            let w = children_by(tree, i, |c| done[c].0);
            let (v, theta) = g
                .superhedge(&w)
                .expect("viable nodes have a finite superhedge");
            (k.dk[i] + v, theta.iter().copied().collect())
        },
    );
    let value: NodeValues = step.iter().map(|s| s.0).collect();
    let theta: Vec<Vec<f64>> = step.into_iter().map(|s| s.1).collect();
    let x = value[0];
    let wealth = strategy_wealth_inner(tree, x, &theta);
    let cum = tree.cumulate(&k.dk);
    let superhedges = (0..tree.len()).all(|i| {
        let tol = DECOMP_TOL * (1.0 + value[i].abs() + cum[i].abs());
        wealth[i] - cum[i] >= value[i] - k.dk[i] - tol
    });
    Ok(Superhedge {
        x,
        theta,
        value,
        wealth,
        superhedges,
    })
}

pub(crate) fn strategy_wealth_inner(tree: &EventTree, x: f64, theta: &[Vec<f64>]) -> NodeValues {
    let mut w = vec![x; tree.len()];
    for i in 1..tree.len() {
        let p = tree.node(i).parent.unwrap();
        let gain: f64 = theta[p]
            .iter()
            .zip(tree.delta_s(i))
            .map(|(a, b)| a * b)
            .sum();
        w[i] = w[p] + gain;
    }
    w
}

/// `sup_Y E[Σ Y ΔK]` and whether a strictly positive deflator reaches it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualValue {
    pub value: f64,
    /// `D(node) = ΔK(node) + sup Σ p y D(child)`.
    pub values: NodeValues,
    pub attained: bool,
    /// File ids of nodes whose one-step supremum sits on the boundary.
    pub not_attained: Vec<usize>,
}

pub fn dual_value(tree: &EventTree, k: &WithdrawalStream) -> Result<DualValue> {
    let geo = viable_geometry(tree)?;
    let step = backward(
        tree,
        |i| (k.dk[i], true),
        |i, done| {
            let g = geo[i].as_ref().expect("inner node");
            let w = children_by(tree, i, |c| done[c].0);
            let (sup, _) = g.sup(&w).expect("viable");
            (k.dk[i] + sup, g.sup_attained(&w))
        },
    );
    let not_attained: Vec<usize> = (0..tree.len())
        .filter(|&i| !step[i].1)
        .map(|i| tree.node(i).id)
        .collect();
    Ok(DualValue {
        value: step[0].0,
        values: step.iter().map(|s| s.0).collect(),
        attained: not_attained.is_empty(),
        not_attained,
    })
}

/// `X̃ = K + (value of the withdrawals still to come)`, the smallest process
/// financing `K`.
pub fn minimal_financing(tree: &EventTree, k: &WithdrawalStream) -> Result<NodeValues> {
    let d = dual_value(tree, k)?;
    let cum = tree.cumulate(&k.dk);
    Ok((0..tree.len())
        .map(|i| cum[i] + d.values[i] - k.dk[i])
        .collect())
}

/// Optional decomposition of an accepted process.
///
/// `X(node)` is the value before the node's own withdrawal. Of the total
/// `dk(node) = slack(node) + excess(node)`, the slack (hedge overshoot on
/// arrival) is paid before `X(node)` is observed and the excess
/// `X(node) − v(node)` right after, so that
/// `X(node) = X(root) + ϑ·S(node) − Σ_{strict ancestors} dk − slack(node)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub theta: Vec<Vec<f64>>,
    /// Cheapest one-step superhedge `v(node)` of the children's values.
    pub continuation: NodeValues,
    pub excess: NodeValues,
    pub slack: NodeValues,
    pub dk: NodeValues,
    pub reconstruction_error: f64,
}

/// A node where some deflator makes `X` grow in expectation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub node: usize,
    /// Strictly positive one-step ratios `y` with `Σ p y = 1`,
    /// `Σ p y ΔS = 0` and `Σ p y X(child) > X(node)`.
    pub y: Vec<f64>,
    pub deflated_value: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum DecomposeOutcome {
    Accepted(Decomposition),
    Rejected(Violation),
}

impl DecomposeOutcome {
    pub fn accepted(self) -> Option<Decomposition> {
        match self {
            DecomposeOutcome::Accepted(d) => Some(d),
            DecomposeOutcome::Rejected(_) => None,
        }
    }
}

fn witness(g: &OneStep, w: &DVector<f64>, x: f64) -> Option<Vec<f64>> {
    let (best, arg) = g.sup(w)?;
    let vertex = &g.vertices[arg[0]];
    let center = g.analytic_center()?;
    let gap = best - x;
    let spread = (vertex.dot(w) - center.dot(w)).abs();
    let eps = (gap / (2.0 * spread + f64::MIN_POSITIVE)).min(0.5);
    let q = vertex * (1.0 - eps) + center * eps;
    Some(g.ratios(&q).iter().copied().collect())
}

pub fn optional_decompose(tree: &EventTree, x: &[f64]) -> Result<DecomposeOutcome> {
    if x.len() != tree.len() {
        return Err(crate::Error::Dimension {
            context: "process to decompose".into(),
            expected: tree.len(),
            found: x.len(),
        });
    }
    let geo = viable_geometry(tree)?;
    let nodes: Vec<usize> = (0..tree.len()).collect();
    let per: Vec<std::result::Result<(f64, Vec<f64>), Violation>> = nodes
        .par_iter()
        .map(|&i| {
            let Some(g) = geo[i].as_ref() else {
                return Ok((x[i], Vec::new()));
            };
            let w = child_vector(tree, i, x);
            let (sup, _) = g.sup(&w).expect("viable");
            let tol = DECOMP_TOL * (1.0 + x[i].abs() + w.amax());
            if sup > x[i] + tol {
                let y = witness(g, &w, x[i]).expect("viable");
                let deflated_value = y
                    .iter()
                    .zip(&g.probs)
                    .zip(w.iter())
                    .map(|((y, p), v)| y * p * v)
                    .sum();
                return Err(Violation {
                    node: tree.node(i).id,
                    y,
                    deflated_value,
                    value: x[i],
                });
            }
            let (v, theta) = g.superhedge(&w).expect("viable");
            Ok((v, theta.iter().copied().collect()))
        })
        .collect();
    let mut continuation = vec![0.0; tree.len()];
    let mut theta = vec![Vec::new(); tree.len()];
    for (i, r) in per.into_iter().enumerate() {
        match r {
            Ok((v, t)) => {
                continuation[i] = v;
                theta[i] = t;
            }
            Err(v) => return Ok(DecomposeOutcome::Rejected(v)),
        }
    }
    let clamp = |d: f64, scale: f64| {
        if d < 0.0 && d >= -DECOMP_TOL * (1.0 + scale) {
            0.0
        } else {
            d
        }
    };
    let excess: NodeValues = (0..tree.len())
        .map(|i| clamp(x[i] - continuation[i], x[i].abs()))
        .collect();
    let mut slack = vec![0.0; tree.len()];
    for i in 1..tree.len() {
        let p = tree.node(i).parent.unwrap();
        let gain: f64 = theta[p]
            .iter()
            .zip(tree.delta_s(i))
            .map(|(a, b)| a * b)
            .sum();
        slack[i] = clamp(continuation[p] + gain - x[i], x[i].abs());
    }
    let dk: NodeValues = (0..tree.len()).map(|i| excess[i] + slack[i]).collect();
    let gains = strategy_wealth_inner(tree, x[0], &theta);
    let before = tree.cumulate(&dk);
    let reconstruction_error = (0..tree.len())
        .map(|i| (gains[i] - (before[i] - dk[i]) - slack[i] - x[i]).abs())
        .fold(0.0, f64::max);
    Ok(DecomposeOutcome::Accepted(Decomposition {
        theta,
        continuation,
        excess,
        slack,
        dk,
        reconstruction_error,
    }))
}

/// Replication test of a claim through its minimal financing process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub replicable: bool,
    pub price: f64,
    pub dk: NodeValues,
    pub max_withdrawal: f64,
}

pub fn replicable(tree: &EventTree, claim: &Claim) -> Result<Replication> {
    let stream = claim.stream();
    let xt = minimal_financing(tree, &stream)?;
    let d = optional_decompose(tree, &xt)?
        .accepted()
        .expect("the minimal financing process is a deflator supermartingale");
    let max_withdrawal = d.dk.iter().copied().fold(0.0, f64::max);
    let scale = 1.0 + claim.payoff.iter().copied().fold(0.0, f64::max);
    Ok(Replication {
        replicable: max_withdrawal <= DECOMP_TOL * scale,
        price: xt[0],
        dk: d.dk,
        max_withdrawal,
    })
}
