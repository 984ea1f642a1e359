//! Sampling deflators and exact (super)martingale checks.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::hedging::strategy_wealth_inner;
use super::model::{EventTree, NodeValues};
use super::viable_geometry;
use crate::error::{Error, Result};

/// Tolerance of the martingale checks.
const MART_TOL: f64 = 1e-10;
/// Tolerance of the one-step deflator conditions.
const DEFLATOR_TOL: f64 = 1e-12;

/// A strictly positive node process with `Y(root) = 1` that deflates every
/// wealth process to a martingale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDeflator {
    pub y: NodeValues,
}

/// `count` deflators: the first uses the analytic center of every node's
/// one-step set, the others mix the center with a random vertex per node.
/// Duplicates are dropped, so a complete tree yields one deflator.
pub fn sample_deflators(tree: &EventTree, count: usize, seed: u64) -> Result<Vec<TreeDeflator>> {
    let geo = viable_geometry(tree)?;
    let centers: Vec<Option<DVector<f64>>> = geo
        .iter()
        .map(|g| g.as_ref().map(|g| g.analytic_center().expect("viable")))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<TreeDeflator> = Vec::new();
    for s in 0..count {
        let mut y = vec![1.0; tree.len()];
        for i in 0..tree.len() {
            let (Some(g), Some(c)) = (&geo[i], &centers[i]) else {
                continue;
            };
            let q = if s == 0 {
                c.clone()
            } else {
                let v = &g.vertices[rng.random_range(0..g.vertices.len())];
                let w: f64 = rng.random_range(0.0..0.95);
                v * w + c * (1.0 - w)
            };
            for (j, &child) in tree.node(i).children.iter().enumerate() {
                y[child] = y[i] * q[j] / g.probs[j];
            }
        }
        let fresh = out.iter().all(|d| {
            d.y.iter()
                .zip(&y)
                .any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + a.abs()))
        });
        if fresh {
            out.push(TreeDeflator { y });
        }
    }
    Ok(out)
}

/// Exact check of the defining conditions `Y > 0`, `Y(root) = 1`,
/// `Σ p y = 1` and `Σ p y ΔS = 0` at every node.
pub fn is_deflator(tree: &EventTree, y: &[f64]) -> bool {
    if y.len() != tree.len() || (y[0] - 1.0).abs() > DEFLATOR_TOL || y.iter().any(|v| !(*v > 0.0)) {
        return false;
    }
    (0..tree.len()).all(|i| {
        let node = tree.node(i);
        if node.is_leaf() {
            return true;
        }
        let n = node.effective_prices().len();
        let mut mass = 0.0;
        let mut drift = vec![0.0; n];
        for &c in &node.children {
            let w = tree.node(c).prob * y[c] / y[i];
            mass += w;
            for (d, s) in drift.iter_mut().zip(tree.delta_s(c)) {
                *d += w * s;
            }
        }
        let scale = 1.0
            + node
                .effective_prices()
                .iter()
                .fold(0.0f64, |m, s| m.max(s.abs()));
        (mass - 1.0).abs() <= DEFLATOR_TOL && drift.iter().all(|d| d.abs() <= DEFLATOR_TOL * scale)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MartingaleCheck {
    pub holds: bool,
    /// File id of the node with the largest residual.
    pub worst_node: usize,
    /// `Σ p Z(child) − Z(node)` there.
    pub residual: f64,
}

fn check(tree: &EventTree, z: &[f64], two_sided: bool) -> Result<MartingaleCheck> {
    if z.len() != tree.len() {
        return Err(Error::Dimension {
            context: "node process".into(),
            expected: tree.len(),
            found: z.len(),
        });
    }
    let mut worst = MartingaleCheck {
        holds: true,
        worst_node: tree.node(0).id,
        residual: 0.0,
    };
    let mut worst_score = f64::NEG_INFINITY;
    for i in 0..tree.len() {
        let node = tree.node(i);
        if node.is_leaf() {
            continue;
        }
        let e: f64 = node
            .children
            .iter()
            .map(|&c| tree.node(c).prob * z[c])
            .sum();
        let r = e - z[i];
        let score = if two_sided { r.abs() } else { r };
        let tol = MART_TOL * (1.0 + z[i].abs());
        if score > tol {
            worst.holds = false;
        }
        if score - tol > worst_score {
            worst_score = score - tol;
            worst.worst_node = node.id;
            worst.residual = r;
        }
    }
    Ok(worst)
}

/// `Σ p Z(child) <= Z(node)` everywhere, to `1e-10` relative.
pub fn is_supermartingale(tree: &EventTree, z: &[f64]) -> Result<MartingaleCheck> {
    check(tree, z, false)
}

pub fn is_martingale(tree: &EventTree, z: &[f64]) -> Result<MartingaleCheck> {
    check(tree, z, true)
}

/// Wealth `x + ϑ·S` of a self-financing strategy holding `theta[node]`
/// shares from each inner node.
pub fn strategy_wealth(tree: &EventTree, x: f64, theta: &[Vec<f64>]) -> Result<NodeValues> {
    if theta.len() != tree.len() {
        return Err(Error::Dimension {
            context: "strategy".into(),
            expected: tree.len(),
            found: theta.len(),
        });
    }
    for (i, t) in theta.iter().enumerate() {
        let node = tree.node(i);
        let want = if node.is_leaf() {
            t.len()
        } else {
            node.effective_prices().len()
        };
        if t.len() != want {
            return Err(Error::Dimension {
                context: format!("strategy at node {}", node.id),
                expected: want,
                found: t.len(),
            });
        }
    }
    Ok(strategy_wealth_inner(tree, x, theta))
}

#[cfg(test)]
mod tests {
    use super::super::fixtures;
    use super::*;

    #[test]
    fn complete_tree_has_one_deflator() {
        let t = fixtures::binomial();
        let d = sample_deflators(&t, 10, 7).unwrap();
        assert_eq!(d.len(), 1);
        assert!((d[0].y[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!(is_deflator(&t, &d[0].y));
    }

    #[test]
    fn trinomial_samples_are_distinct_and_valid() {
        let t = fixtures::trinomial();
        let d = sample_deflators(&t, 8, 1).unwrap();
        assert_eq!(d.len(), 8);
        for y in &d {
            assert!(is_deflator(&t, &y.y));
            let s: Vec<f64> = (0..t.len()).map(|i| y.y[i] * t.node(i).prices[0]).collect();
            assert!(is_martingale(&t, &s).unwrap().holds);
        }
    }

    #[test]
    fn deterministic_tree_has_unit_deflator() {
        let t = fixtures::deterministic();
        let d = sample_deflators(&t, 3, 0).unwrap();
        assert_eq!(d.len(), 1);
        assert!(d[0].y.iter().all(|y| *y == 1.0));
    }

    #[test]
    fn decreasing_is_super_not_martingale() {
        let t = fixtures::trinomial();
        let z: Vec<f64> = (0..t.len()).map(|i| -(t.node(i).depth as f64)).collect();
        assert!(is_supermartingale(&t, &z).unwrap().holds);
        let m = is_martingale(&t, &z).unwrap();
        assert!(!m.holds);
        assert_eq!(m.residual, -1.0);
        assert!(is_martingale(&t, &vec![2.5; t.len()]).unwrap().holds);
    }
}
