//! Exact computations on finite event trees: one-step deflator sets,
//! arbitrage probes, superhedging and its dual, optional decomposition,
//! completeness and the log-optimal (supermartingale numéraire) wealth.
//!
//! All node problems are tiny (a handful of children and assets), so they
//! are solved by enumerating vertices and basic solutions instead of
//! calling an optimizer.

mod deflators;
pub mod fixtures;
mod growth;
mod hedging;
mod model;
mod onestep;
pub mod random;

pub use deflators::{
    is_deflator, is_martingale, is_supermartingale, sample_deflators, strategy_wealth,
    MartingaleCheck, TreeDeflator,
};
pub use growth::{log_optimal_step, supermartingale_numeraire, NumeraireTree};
pub use hedging::{
    dual_value, minimal_financing, optional_decompose, replicable, superhedge, DecomposeOutcome,
    Decomposition, DualValue, Replication, Superhedge, Violation,
};
pub use model::{
    Claim, ClaimSpec, EventTree, Node, NodeSpec, NodeValues, TreeFile, WithdrawalStream,
};
pub use onestep::{min_norm_solve, rank, DeflatorSetKind, OneStep, TOL};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

impl EventTree {
    /// One-step geometry of every inner node (`None` at leaves).
    pub fn geometry(&self) -> Vec<Option<OneStep>> {
        (0..self.len())
            .into_par_iter()
            .map(|i| self.one_step(i))
            .collect()
    }

    pub fn one_step(&self, i: usize) -> Option<OneStep> {
        let node = self.node(i);
        if node.is_leaf() {
            return None;
        }
        let n = node.effective_prices().len();
        let rows: Vec<Vec<f64>> = node.children.iter().map(|&c| self.delta_s(c)).collect();
        let ds = nalgebra::DMatrix::from_fn(rows.len(), n, |j, a| rows[j][a]);
        let probs = node.children.iter().map(|&c| self.node(c).prob).collect();
        Some(OneStep::new(probs, ds))
    }
}

/// Outcome of the first-kind arbitrage probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Na1Probe {
    pub viable: bool,
    /// Per inner node (by file id): kind of the one-step deflator set.
    pub kinds: Vec<(usize, DeflatorSetKind)>,
    pub certificate: Option<Na1Certificate>,
}

/// A zero-capital one-step strategy at `node` whose payoff is nonnegative on
/// every child and positive on some.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Na1Certificate {
    pub node: usize,
    pub strategy: Vec<f64>,
    /// Payoff per child, in child order.
    pub payoff: Vec<f64>,
    pub expected_payoff: f64,
}

pub fn na1_probe(tree: &EventTree) -> Na1Probe {
    let geo = tree.geometry();
    let mut kinds = Vec::new();
    let mut certificate = None;
    for (i, g) in geo.iter().enumerate() {
        let Some(g) = g else { continue };
        let kind = g.kind();
        kinds.push((tree.node(i).id, kind));
        if kind == DeflatorSetKind::Empty && certificate.is_none() {
            let theta = g
                .arbitrage()
                .expect("an empty deflator set has a Farkas certificate");
            let payoff: Vec<f64> = (&g.ds * &theta).iter().copied().collect();
            certificate = Some(Na1Certificate {
                node: tree.node(i).id,
                expected_payoff: payoff.iter().zip(&g.probs).map(|(x, p)| x * p).sum(),
                strategy: theta.iter().copied().collect(),
                payoff,
            });
        }
    }
    Na1Probe {
        viable: certificate.is_none(),
        kinds,
        certificate,
    }
}

/// Geometry of a tree known to be viable, or the arbitrage at the first bad
/// node.
pub(crate) fn viable_geometry(tree: &EventTree) -> Result<Vec<Option<OneStep>>> {
    let geo = tree.geometry();
    for (i, g) in geo.iter().enumerate() {
        if let Some(g) = g {
            if !g.strictly_feasible() {
                return Err(Error::TreeNotViable {
                    node: tree.node(i).id,
                    strategy: g
                        .arbitrage()
                        .map(|t| t.iter().copied().collect())
                        .unwrap_or_default(),
                });
            }
        }
    }
    Ok(geo)
}

/// Whether the deflator is unique: every node's one-step set is a single
/// point.
pub fn is_complete(tree: &EventTree) -> Result<bool> {
    let geo = viable_geometry(tree)?;
    Ok(geo
        .iter()
        .flatten()
        .all(|g| g.kind() == DeflatorSetKind::Singleton))
}
