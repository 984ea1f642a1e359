//! Log-optimal wealth on a tree, built epoch by epoch.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::model::{EventTree, NodeValues};
use super::onestep::OneStep;
use super::viable_geometry;
use crate::error::Result;

/// Orthonormal basis of the row space of `ΔS` (the directions that change
/// the payoff).
fn row_space(ds: &DMatrix<f64>) -> DMatrix<f64> {
    let n = ds.ncols();
    if ds.nrows() == 0 || n == 0 {
        return DMatrix::zeros(n, 0);
    }
    let svd = ds.clone().svd(false, true);
    let vt = svd.v_t.unwrap();
    let smax = svd.singular_values.iter().fold(0.0f64, |m, s| m.max(*s));
    let cols: Vec<DVector<f64>> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > 1e-12 * smax.max(1.0))
        .map(|k| vt.row(k).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Maximizer of `Σ p log(1 + x z)` over the open interval where every
/// factor is positive. Needs outcomes of both signs.
fn log_optimal_1d(p: &[f64], x: &[f64]) -> f64 {
    if x.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    if x.len() == 2 && x[0] != 0.0 && x[1] != 0.0 {
        // first-order condition p1 x1 (1 + x2 z) + p2 x2 (1 + x1 z) = 0
        return -(p[0] * x[0] + p[1] * x[1]) / (x[0] * x[1] * (p[0] + p[1]));
    }
    let lo = x
        .iter()
        .filter(|v| **v > 0.0)
        .map(|v| -1.0 / v)
        .fold(f64::NEG_INFINITY, f64::max);
    let hi = x
        .iter()
        .filter(|v| **v < 0.0)
        .map(|v| -1.0 / v)
        .fold(f64::INFINITY, f64::min);
    let deriv = |z: f64| -> f64 { p.iter().zip(x).map(|(p, x)| p * x / (1.0 + x * z)).sum() };
    let (mut a, mut b) = (lo, hi);
    for _ in 0..400 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if deriv(m) > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Shares per unit of wealth maximizing `Σ p log(1 + θᵀΔS)` at one node,
/// chosen within the row space of `ΔS`.
pub fn log_optimal_step(g: &OneStep) -> DVector<f64> {
    let n = g.assets();
    if n == 1 {
        let x: Vec<f64> = g.ds.column(0).iter().copied().collect();
        return DVector::from_element(1, log_optimal_1d(&g.probs, &x));
    }
    let basis = row_space(&g.ds);
    let r = basis.ncols();
    if r == 0 {
        return DVector::zeros(n);
    }
    let y = &g.ds * &basis;
    if r == 1 {
        let x: Vec<f64> = y.column(0).iter().copied().collect();
        return basis.column(0) * log_optimal_1d(&g.probs, &x);
    }
    let f = |z: &DVector<f64>| -> Option<f64> {
        let mut s = 0.0;
        for j in 0..y.nrows() {
            let w = 1.0 + y.row(j).dot(&z.transpose());
            if w <= 0.0 {
                return None;
            }
            s += g.probs[j] * w.ln();
        }
        Some(s)
    };
    let mut z = DVector::zeros(r);
    for _ in 0..200 {
        let mut grad = DVector::zeros(r);
        let mut hess = DMatrix::zeros(r, r);
        for j in 0..y.nrows() {
            let row = y.row(j).transpose();
            let w = 1.0 + row.dot(&z);
            grad += &row * (g.probs[j] / w);
            hess += &row * row.transpose() * (g.probs[j] / (w * w));
        }
        if grad.amax() < 1e-15 {
            break;
        }
        let Some(step) = hess.cholesky().map(|c| c.solve(&grad)) else {
            break;
        };
        let f0 = f(&z).expect("iterates stay feasible");
        let mut t = 1.0;
        loop {
            let cand = &z + &step * t;
            if f(&cand).is_some_and(|v| v >= f0) {
                z = cand;
                break;
            }
            t *= 0.5;
            if t < 1e-14 {
                break;
            }
        }
        if t < 1e-14 {
            break;
        }
    }
    basis * z
}

/// The log-optimal wealth `X_*` with `X_*(root) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumeraireTree {
    pub wealth: NodeValues,
    /// Shares per unit of wealth held from each inner node.
    pub theta: Vec<Vec<f64>>,
    /// Portfolio weights `θ_i S_i` at each inner node.
    pub weights: Vec<Vec<f64>>,
    /// `factors[node][k − 1]`: growth of the epoch-`k` piece up to the node.
    pub factors: Vec<Vec<f64>>,
    pub epochs: usize,
}

pub fn supermartingale_numeraire(tree: &EventTree) -> Result<NumeraireTree> {
    use rayon::prelude::*;
    let geo = viable_geometry(tree)?;
    let theta: Vec<Vec<f64>> = geo
        .par_iter()
        .map(|g| {
            g.as_ref()
                .map(|g| log_optimal_step(g).iter().copied().collect())
                .unwrap_or_default()
        })
        .collect();
    let epoch = tree.epoch_of_step_into();
    let epochs = epoch.iter().copied().max().unwrap_or(1);
    let mut wealth = vec![1.0; tree.len()];
    let mut factors = vec![vec![1.0; epochs]; tree.len()];
    for i in 1..tree.len() {
        let p = tree.node(i).parent.unwrap();
        let f = 1.0
            + theta[p]
                .iter()
                .zip(tree.delta_s(i))
                .map(|(a, b)| a * b)
                .sum::<f64>();
        wealth[i] = wealth[p] * f;
        factors[i] = factors[p].clone();
        factors[i][epoch[i] - 1] *= f;
    }
    let weights = (0..tree.len())
        .map(|i| {
            theta[i]
                .iter()
                .zip(tree.node(i).effective_prices())
                .map(|(t, s)| t * s)
                .collect()
        })
        .collect();
    Ok(NumeraireTree {
        wealth,
        theta,
        weights,
        factors,
        epochs,
    })
}
