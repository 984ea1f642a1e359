use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::simulate::SimPath;
use crate::error::{Error, Result};
use crate::ustate::{epoch_key, DissectionKey, Integrand, ResetSequence, TimeGrid, UPath};

/// Return increments `ΔR_i(t_{j+1}) = ΔS_i(t_{j+1}) / S_i(t_j+)` per step,
/// tagged with the dissection the step belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPath {
    pub grid: TimeGrid,
    pub resets: ResetSequence,
    pub keys: Vec<DissectionKey>,
    pub dr: Vec<Vec<f64>>,
}

/// Dissection key of every step of `x`.
pub fn step_keys(x: &UPath, resets: &ResetSequence) -> Vec<DissectionKey> {
    (0..x.grid().steps())
        .map(|j| {
            epoch_key(resets, x, resets.epoch_of_step(j)).expect("step lies in a started epoch")
        })
        .collect()
}

/// Return process of a price path; `path_id` only labels errors.
pub fn return_process_for(s: &UPath, resets: &ResetSequence, path_id: usize) -> Result<ReturnPath> {
    resets.validate_for(s)?;
    let steps = s.grid().steps();
    let mut dr = Vec::with_capacity(steps);
    for j in 0..steps {
        let base = s.right(j);
        let next = s.value(j + 1);
        let mut r = Vec::with_capacity(base.len());
        for (i, (&b, &x)) in base.iter().zip(next).enumerate() {
            if !(b > 0.0) {
                return Err(Error::NonPositivePrice {
                    path: path_id,
                    index: j,
                    component: i,
                    value: b,
                });
            }
            r.push((x - b) / b);
        }
        dr.push(r);
    }
    Ok(ReturnPath {
        grid: s.grid().clone(),
        resets: resets.clone(),
        keys: step_keys(s, resets),
        dr,
    })
}

pub fn return_process(s: &UPath, resets: &ResetSequence) -> Result<ReturnPath> {
    return_process_for(s, resets, 0)
}

impl ReturnPath {
    pub fn steps(&self) -> usize {
        self.dr.len()
    }

    /// `R` as a path: cumulative within each epoch, re-based to zero right
    /// after every reset.
    pub fn as_upath(&self) -> UPath {
        let n0 = self.dr.first().map_or(0, Vec::len);
        let mut values = vec![vec![0.0; n0]];
        let mut post = BTreeMap::new();
        let mut acc = vec![0.0; n0];
        for (j, r) in self.dr.iter().enumerate() {
            if acc.len() != r.len() || self.resets.taus().iter().skip(1).any(|&t| t == j) {
                if j > 0 {
                    post.insert(j, vec![0.0; r.len()]);
                }
                acc = vec![0.0; r.len()];
            }
            acc.iter_mut().zip(r).for_each(|(a, x)| *a += x);
            values.push(acc.clone());
        }
        UPath::new(self.grid.clone(), values, post)
            .expect("return path is consistent by construction")
    }

    /// Return of a portfolio on step `j`: `ΔR_π = Σ_i π_i ΔR_i`.
    pub fn portfolio_return(&self, weights: &Integrand, j: usize) -> f64 {
        dot(&weights.steps[j], &self.dr[j])
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariationMode {
    /// `ΔC = v Δt` from the model covariance rate.
    #[default]
    Model,
    /// `ΔC = ΔM ΔMᵀ`.
    Realized,
}

/// `R = A + M` per step with the covariation increments of `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnDecomposition {
    pub grid: TimeGrid,
    pub keys: Vec<DissectionKey>,
    pub da: Vec<Vec<f64>>,
    pub dm: Vec<Vec<f64>>,
    pub dc: Vec<DMatrix<f64>>,
}

pub fn decompose_returns(
    path: &SimPath,
    returns: &ReturnPath,
    mode: CovariationMode,
) -> ReturnDecomposition {
    let grid = returns.grid.clone();
    let mut da = Vec::with_capacity(returns.steps());
    let mut dm = Vec::with_capacity(returns.steps());
    let mut dc = Vec::with_capacity(returns.steps());
    for j in 0..returns.steps() {
        let dt = grid.dt(j);
        let a: Vec<f64> = path.drift[j].iter().map(|x| x * dt).collect();
        let m: Vec<f64> = returns.dr[j].iter().zip(&a).map(|(r, a)| r - a).collect();
        let c = match mode {
            CovariationMode::Model => &path.cov[j] * dt,
            CovariationMode::Realized => {
                let v = DVector::from_column_slice(&m);
                &v * v.transpose()
            }
        };
        da.push(a);
        dm.push(m);
        dc.push(c);
    }
    ReturnDecomposition {
        grid,
        keys: returns.keys.clone(),
        da,
        dm,
        dc,
    }
}

/// Cumulative `A^{k,n}`, `M^{k,n}`, `C^{k,n}` of one dissection, indexed by
/// grid point: zero before the epoch, frozen after it.
#[derive(Debug, Clone, PartialEq)]
pub struct DissectedDecomposition {
    pub a: Vec<Vec<f64>>,
    pub m: Vec<Vec<f64>>,
    pub c: Vec<DMatrix<f64>>,
}

impl ReturnDecomposition {
    pub fn dissection(&self, key: DissectionKey) -> DissectedDecomposition {
        let n = key.n;
        let mut a = vec![vec![0.0; n]];
        let mut m = vec![vec![0.0; n]];
        let mut c = vec![DMatrix::zeros(n, n)];
        for j in 0..self.keys.len() {
            let (mut an, mut mn, mut cn) = (a[j].clone(), m[j].clone(), c[j].clone());
            if self.keys[j] == key {
                an.iter_mut().zip(&self.da[j]).for_each(|(x, d)| *x += d);
                mn.iter_mut().zip(&self.dm[j]).for_each(|(x, d)| *x += d);
                cn += &self.dc[j];
            }
            a.push(an);
            m.push(mn);
            c.push(cn);
        }
        DissectedDecomposition { a, m, c }
    }
}

/// Realized covariation `Σ ΔP ΔQ` of two scalar paths on the same grid.
pub fn covariation(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(p.len());
    let mut acc = 0.0;
    out.push(0.0);
    for j in 1..p.len().min(q.len()) {
        acc += (p[j] - p[j - 1]) * (q[j] - q[j - 1]);
        out.push(acc);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// `ΔO = Δt`.
    #[default]
    Calendar,
    /// `ΔO = Σ_i (|ΔA_i| + ΔC_ii)`.
    Paper,
}

/// Local return rate `α`, covariation rate `c` and clock increment on one
/// step of the active dissection.
#[derive(Debug, Clone, PartialEq)]
pub struct RateStep {
    pub key: DissectionKey,
    pub alpha: DVector<f64>,
    pub c: DMatrix<f64>,
    pub d_o: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatesPath {
    pub grid: TimeGrid,
    pub steps: Vec<RateStep>,
}

pub fn local_rates(decomp: &ReturnDecomposition, clock: ClockMode) -> RatesPath {
    let steps = (0..decomp.keys.len())
        .map(|j| {
            let d_o = match clock {
                ClockMode::Calendar => decomp.grid.dt(j),
                ClockMode::Paper => {
                    let da: f64 = decomp.da[j].iter().map(|x| x.abs()).sum();
                    da + decomp.dc[j].diagonal().sum()
                }
            };
            let n = decomp.keys[j].n;
            let (alpha, c) = if d_o > 0.0 {
                (
                    DVector::from_iterator(n, decomp.da[j].iter().map(|x| x / d_o)),
                    &decomp.dc[j] / d_o,
                )
            } else {
                (DVector::zeros(n), DMatrix::zeros(n, n))
            };
            RateStep {
                key: decomp.keys[j],
                alpha,
                c,
                d_o,
            }
        })
        .collect();
    RatesPath {
        grid: decomp.grid.clone(),
        steps,
    }
}

/// Rates straight from the model on the calendar clock.
pub fn model_rates(path: &SimPath) -> RatesPath {
    let keys = step_keys(&path.prices, &path.resets);
    let grid = path.grid().clone();
    let steps = (0..keys.len())
        .map(|j| RateStep {
            key: keys[j],
            alpha: DVector::from_column_slice(&path.drift[j]),
            c: path.cov[j].clone(),
            d_o: grid.dt(j),
        })
        .collect();
    RatesPath { grid, steps }
}

/// `∫ (|νᵀα| + νᵀcν) dO` per dissection up to grid index `upto`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Integrability {
    pub per_key: BTreeMap<DissectionKey, f64>,
    pub total: f64,
    pub finite: bool,
}

pub fn integrability_report(
    nu: &Integrand,
    rates: &RatesPath,
    upto: usize,
) -> Result<Integrability> {
    let mut per_key = BTreeMap::new();
    let mut total = 0.0;
    for (j, st) in rates.steps.iter().enumerate().take(upto) {
        let v = nu
            .steps
            .get(j)
            .ok_or_else(|| Error::Structure(format!("integrand has no step {j}")))?;
        if v.len() != st.key.n {
            return Err(Error::Dimension {
                context: format!("integrand on step {j}"),
                expected: st.key.n,
                found: v.len(),
            });
        }
        let nv = DVector::from_column_slice(v);
        let val = (nv.dot(&st.alpha).abs() + (nv.transpose() * &st.c * &nv)[(0, 0)]) * st.d_o;
        *per_key.entry(st.key).or_insert(0.0) += val;
        total += val;
    }
    Ok(Integrability {
        per_key,
        total,
        finite: total.is_finite(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{simulate_path, MarketModel};
    use crate::ustate::{dissect_integrator, minimal_reset_sequence};

    fn e1() -> UPath {
        let grid = TimeGrid::new(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let mut post = BTreeMap::new();
        post.insert(1, vec![5.0]);
        UPath::new(
            grid,
            vec![vec![1.0, 2.0], vec![2.0, 3.0], vec![7.0], vec![4.0]],
            post,
        )
        .unwrap()
    }

    #[test]
    fn doubling_and_constant() {
        let s = e1();
        let r = return_process(&s, &minimal_reset_sequence(&s)).unwrap();
        assert_eq!(r.dr[0], vec![1.0, 0.5]);
        assert_eq!(r.dr[1], vec![0.4]);
        assert_eq!(
            r.keys,
            vec![
                DissectionKey::new(1, 2),
                DissectionKey::new(2, 1),
                DissectionKey::new(2, 1)
            ]
        );
        let g = TimeGrid::uniform(1.0, 3).unwrap();
        let c = UPath::continuous(g, vec![vec![2.0]; 4]).unwrap();
        let r = return_process(&c, &minimal_reset_sequence(&c)).unwrap();
        assert!(r.dr.iter().flatten().all(|x| *x == 0.0));
    }

    #[test]
    fn return_upath_dissects_to_increments() {
        let s = e1();
        let resets = minimal_reset_sequence(&s);
        let r = return_process(&s, &resets).unwrap();
        let d = dissect_integrator(&r.as_upath(), &resets).unwrap();
        assert_eq!(d[&DissectionKey::new(1, 2)].values[1], vec![1.0, 0.5]);
        let x21 = &d[&DissectionKey::new(2, 1)];
        assert_eq!(x21.values[2], vec![0.4]);
        assert!((x21.values[3][0] - (0.4 - 3.0 / 7.0)).abs() < 1e-15);
    }

    #[test]
    fn nonpositive_price_is_located() {
        let g = TimeGrid::uniform(1.0, 2).unwrap();
        let s = UPath::continuous(g, vec![vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        match return_process_for(&s, &ResetSequence::trivial(), 9) {
            Err(Error::NonPositivePrice {
                path: 9,
                index: 1,
                component: 0,
                ..
            }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn paper_clock_arithmetic() {
        let m = MarketModel::gbm(&[1.0], &[0.1], &[0.2], 0.0);
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        let p = simulate_path(&m, &g, 1, 0).unwrap();
        let r = return_process(&p.prices, &p.resets).unwrap();
        let d = decompose_returns(&p, &r, CovariationMode::Model);
        let rates = local_rates(&d, ClockMode::Paper);
        for st in &rates.steps {
            assert!((st.d_o - 0.14 * 0.25).abs() < 1e-15);
            assert!((st.alpha[0] - 5.0 / 7.0).abs() < 1e-14);
            assert!((st.c[(0, 0)] - 2.0 / 7.0).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_rates_under_paper_clock() {
        let m = MarketModel::gbm(&[1.0, 1.0], &[0.0, 0.0], &[0.0, 0.0], 0.0);
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        let p = simulate_path(&m, &g, 1, 0).unwrap();
        let r = return_process(&p.prices, &p.resets).unwrap();
        let d = decompose_returns(&p, &r, CovariationMode::Realized);
        assert!(d.dm.iter().flatten().all(|x| *x == 0.0));
        let rates = local_rates(&d, ClockMode::Paper);
        assert!(rates
            .steps
            .iter()
            .all(|s| s.d_o == 0.0 && s.alpha.iter().all(|a| *a == 0.0)));
    }

    #[test]
    fn integrability_constant_rates() {
        let m = MarketModel::gbm(&[1.0, 1.0], &[0.1, 0.05], &[0.2, 0.1], 0.0);
        let g = TimeGrid::uniform(1.0, 8).unwrap();
        let p = simulate_path(&m, &g, 1, 0).unwrap();
        let rates = model_rates(&p);
        let nu = Integrand::from_fn(&p.prices, |_, n| vec![1.0; n]);
        let rep = integrability_report(&nu, &rates, 8).unwrap();
        assert!((rep.total - 0.20).abs() < 1e-12);
        let nu2 = Integrand::from_fn(&p.prices, |_, n| vec![2.0; n]);
        let rep2 = integrability_report(&nu2, &rates, 8).unwrap();
        assert!((rep2.total - (2.0 * 0.15 + 4.0 * 0.05)).abs() < 1e-12);
        let zero = Integrand::zeros_like(&p.prices);
        assert_eq!(integrability_report(&zero, &rates, 8).unwrap().total, 0.0);
    }

    #[test]
    fn covariation_basics() {
        let p = [0.0, 1.0, 0.5, 2.0];
        let q = [3.0; 4];
        assert!(covariation(&p, &q).iter().all(|x| *x == 0.0));
        let pp = covariation(&p, &p);
        assert!(pp.windows(2).all(|w| w[1] >= w[0]));
    }
}
