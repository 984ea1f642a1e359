//! Portfolios (weights on returns), strategies (shares of assets), wealth
//! processes and the conversions between them.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{dot, RatesPath, ReturnDecomposition, ReturnPath};
use crate::ustate::{piecewise_integral, Integrand, ResetSequence, UPath};

/// Predictable weights `π` with `π(0) = 0`; the money market holds
/// `1 − Σ_i π_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portfolio {
    pub weights: Integrand,
}

impl Portfolio {
    pub fn new(weights: Integrand) -> Result<Self> {
        if !weights.in_l0() {
            return Err(Error::Structure(
                "a portfolio starts from the zero vector".into(),
            ));
        }
        Ok(Portfolio { weights })
    }

    /// The null portfolio: everything in the money market.
    pub fn null_like(x: &UPath) -> Self {
        Portfolio {
            weights: Integrand::zeros_like(x),
        }
    }

    pub fn from_fn(x: &UPath, f: impl FnMut(usize, usize) -> Vec<f64>) -> Self {
        Portfolio {
            weights: Integrand::from_fn(x, f),
        }
    }

    pub fn step(&self, j: usize) -> &[f64] {
        &self.weights.steps[j]
    }

    pub fn money_market_weight(&self, j: usize) -> f64 {
        1.0 - self.weights.steps[j].iter().sum::<f64>()
    }
}

/// Predictable share counts `ϑ` with `ϑ(0) = 0` and an initial capital.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub x: f64,
    pub shares: Integrand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WealthPath {
    pub values: Vec<f64>,
    /// Wealth `>= 0` at all grid times.
    pub admissible: bool,
    /// Wealth `> 0` at all grid times.
    pub strictly_admissible: bool,
}

impl WealthPath {
    fn from_values(values: Vec<f64>) -> Self {
        WealthPath {
            admissible: values.iter().all(|v| *v >= 0.0),
            strictly_admissible: values.iter().all(|v| *v > 0.0),
            values,
        }
    }

    pub fn last(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

/// `X_π(t_{j+1}) = X_π(t_j)(1 + ΔR_π(t_{j+1}))`, `X_π(0) = 1`. A factor
/// `<= 0` is reported as an error.
pub fn wealth_of_portfolio(pi: &Portfolio, r: &ReturnPath) -> Result<WealthPath> {
    let mut values = Vec::with_capacity(r.steps() + 1);
    let mut x = 1.0;
    values.push(x);
    for j in 0..r.steps() {
        let f = 1.0 + r.portfolio_return(&pi.weights, j);
        if !(f > 0.0) {
            return Err(Error::WealthNonPositive {
                index: j + 1,
                factor: f,
            });
        }
        x *= f;
        values.push(x);
    }
    Ok(WealthPath::from_values(values))
}

fn bracket_step(d: &ReturnDecomposition, j: usize, w: &[f64]) -> f64 {
    let v = DVector::from_column_slice(w);
    (v.transpose() * &d.dc[j] * &v)[(0, 0)]
}

/// Continuous-model wealth `exp(R_π − ½ C_ππ)` with the bracket taken from
/// the decomposition.
pub fn wealth_of_portfolio_exp(
    pi: &Portfolio,
    r: &ReturnPath,
    d: &ReturnDecomposition,
) -> Vec<f64> {
    let mut values = Vec::with_capacity(r.steps() + 1);
    let mut log = 0.0;
    values.push(1.0);
    for j in 0..r.steps() {
        let w = pi.step(j);
        log += r.portfolio_return(&pi.weights, j) - 0.5 * bracket_step(d, j, w);
        values.push(log.exp());
    }
    values
}

/// `X = x + ϑ·S` through the piecewise integral.
pub fn wealth_of_strategy(
    strategy: &Strategy,
    s: &UPath,
    resets: &ResetSequence,
) -> Result<WealthPath> {
    let gains = piecewise_integral(&strategy.shares, s, resets)?;
    Ok(WealthPath::from_values(
        gains.into_iter().map(|g| strategy.x + g).collect(),
    ))
}

/// Shares `ϑ_i(t_j) = X_π(t_j) π_i(t_j) / S_i(t_j+)` with unit capital.
pub fn strategy_from_portfolio(pi: &Portfolio, s: &UPath, r: &ReturnPath) -> Result<Strategy> {
    let wealth = wealth_of_portfolio(pi, r)?;
    let mut steps = Vec::with_capacity(r.steps());
    for j in 0..r.steps() {
        let price = s.right(j);
        let w = pi.step(j);
        if w.len() != price.len() {
            return Err(Error::Dimension {
                context: format!("portfolio on step {j}"),
                expected: price.len(),
                found: w.len(),
            });
        }
        let mut th = Vec::with_capacity(w.len());
        for (i, (&wi, &si)) in w.iter().zip(price).enumerate() {
            if !(si > 0.0) {
                return Err(Error::NonPositivePrice {
                    path: 0,
                    index: j,
                    component: i,
                    value: si,
                });
            }
            th.push(wealth.values[j] * wi / si);
        }
        steps.push(th);
    }
    Ok(Strategy {
        x: 1.0,
        shares: Integrand::new(vec![0.0; s.value(0).len()], steps),
    })
}

/// Weights `π_i = S_i(t_j+) ϑ_i(t_j) / X(t_j)`; needs strictly positive
/// wealth.
pub fn portfolio_from_strategy(
    strategy: &Strategy,
    s: &UPath,
    resets: &ResetSequence,
) -> Result<Portfolio> {
    let wealth = wealth_of_strategy(strategy, s, resets)?;
    if let Some((index, &w)) = wealth.values.iter().enumerate().find(|(_, w)| !(**w > 0.0)) {
        return Err(Error::NotStrictlyAdmissible { index, wealth: w });
    }
    let steps = (0..s.grid().steps())
        .map(|j| {
            let x = wealth.values[j];
            strategy.shares.steps[j]
                .iter()
                .zip(s.right(j))
                .map(|(th, si)| si * th / x)
                .collect()
        })
        .collect();
    Portfolio::new(Integrand::new(vec![0.0; s.value(0).len()], steps))
}

/// `X_π / X_ρ` next to the stochastic exponential of the relative return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeWealth {
    pub ratio: Vec<f64>,
    /// `ℰ(R^ρ_π)` in its continuous-model form.
    pub exponential: Vec<f64>,
    /// `sup_t |ratio − exponential|`.
    pub discrepancy: f64,
}

/// Relative wealth of `π` against `ρ` with the relative-return
/// representation built from the dissected return decomposition.
pub fn relative_wealth(
    pi: &Portfolio,
    rho: &Portfolio,
    r: &ReturnPath,
    d: &ReturnDecomposition,
) -> Result<RelativeWealth> {
    let xp = wealth_of_portfolio(pi, r)?;
    let xr = wealth_of_portfolio(rho, r)?;
    let ratio: Vec<f64> = xp
        .values
        .iter()
        .zip(&xr.values)
        .map(|(a, b)| a / b)
        .collect();

    let mut log = 0.0;
    let mut exponential = Vec::with_capacity(ratio.len());
    exponential.push(1.0);
    for j in 0..r.steps() {
        let p = pi.step(j);
        let q = rho.step(j);
        let cq = &d.dc[j] * DVector::from_column_slice(q);
        // R^ρ_0 and R^ρ_i increments
        let d0 = dot(q, cq.as_slice()) - dot(q, &r.dr[j]);
        let p0 = 1.0 - p.iter().sum::<f64>();
        let mut inc = p0 * d0;
        for i in 0..p.len() {
            inc += p[i] * (d0 + r.dr[j][i] - cq[i]);
        }
        let diff: Vec<f64> = q.iter().zip(p).map(|(a, b)| a - b).collect();
        log += inc - 0.5 * bracket_step(d, j, &diff);
        exponential.push(log.exp());
    }
    let discrepancy = ratio
        .iter()
        .zip(&exponential)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(RelativeWealth {
        ratio,
        exponential,
        discrepancy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WealthVariant {
    #[default]
    Multiplicative,
    Exponential,
}

/// `X/X_ρ = x + Σ η·ΔM` with `η_i = (S_i ϑ_i − X ρ_i)/X_ρ` sampled at the
/// left end of each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaRepresentation {
    pub eta: Vec<Vec<f64>>,
    pub ratio: Vec<f64>,
    pub integral: Vec<f64>,
    /// `sup_t |X/X_ρ − x − Σ η·ΔM|`.
    pub residual: f64,
    /// Signed terminal gap `X(T)/X_ρ(T) − x − Σ η·ΔM`.
    pub terminal_gap: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn deflated_ratio_representation(
    strategy: &Strategy,
    rho: &Portfolio,
    s: &UPath,
    resets: &ResetSequence,
    r: &ReturnPath,
    d: &ReturnDecomposition,
    rates: &RatesPath,
    variant: WealthVariant,
) -> Result<EtaRepresentation> {
    for (j, st) in rates.steps.iter().enumerate() {
        let q = DVector::from_column_slice(rho.step(j));
        let gap = (&st.c * &q - &st.alpha).norm();
        if gap > 1e-8 * (1.0 + st.alpha.norm()) {
            return Err(Error::Precondition(format!(
                "ρ violates the structural condition on step {j} (‖cρ − α‖ = {gap:e})"
            )));
        }
    }
    let x = wealth_of_strategy(strategy, s, resets)?.values;
    let xr = match variant {
        WealthVariant::Multiplicative => wealth_of_portfolio(rho, r)?.values,
        WealthVariant::Exponential => wealth_of_portfolio_exp(rho, r, d),
    };
    let mut eta = Vec::with_capacity(r.steps());
    let mut integral = Vec::with_capacity(r.steps() + 1);
    let mut acc = strategy.x;
    integral.push(acc);
    for j in 0..r.steps() {
        let e: Vec<f64> = s
            .right(j)
            .iter()
            .zip(&strategy.shares.steps[j])
            .zip(rho.step(j))
            .map(|((si, th), q)| (si * th - x[j] * q) / xr[j])
            .collect();
        acc += dot(&e, &d.dm[j]);
        integral.push(acc);
        eta.push(e);
    }
    let ratio: Vec<f64> = x.iter().zip(&xr).map(|(a, b)| a / b).collect();
    let residual = ratio
        .iter()
        .zip(&integral)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let terminal_gap = ratio.last().unwrap() - integral.last().unwrap();
    Ok(EtaRepresentation {
        eta,
        ratio,
        integral,
        residual,
        terminal_gap,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::market::{
        decompose_returns, model_rates, return_process, simulate_path, CovariationMode, MarketModel,
    };
    use crate::numeraire::assemble_numeraire;
    use crate::ustate::{minimal_reset_sequence, TimeGrid};

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
    fn null_portfolio_has_unit_wealth() {
        let s = e1();
        let r = return_process(&s, &minimal_reset_sequence(&s)).unwrap();
        let w = wealth_of_portfolio(&Portfolio::null_like(&s), &r).unwrap();
        assert!(w.values.iter().all(|x| *x == 1.0));
    }

    #[test]
    fn single_asset_doubling() {
        let g = TimeGrid::uniform(1.0, 1).unwrap();
        let s = UPath::continuous(g, vec![vec![1.0], vec![2.0]]).unwrap();
        let r = return_process(&s, &ResetSequence::trivial()).unwrap();
        let pi = Portfolio::from_fn(&s, |_, n| vec![1.0; n]);
        assert_eq!(wealth_of_portfolio(&pi, &r).unwrap().values, vec![1.0, 2.0]);
    }

    #[test]
    fn wealth_factor_nonpositive_is_error() {
        let g = TimeGrid::uniform(1.0, 1).unwrap();
        let s = UPath::continuous(g, vec![vec![1.0], vec![0.4]]).unwrap();
        let r = return_process(&s, &ResetSequence::trivial()).unwrap();
        let pi = Portfolio::from_fn(&s, |_, n| vec![2.0; n]);
        assert!(matches!(
            wealth_of_portfolio(&pi, &r),
            Err(Error::WealthNonPositive { index: 1, .. })
        ));
    }

    #[test]
    fn strategy_examples() {
        let s = e1();
        let resets = minimal_reset_sequence(&s);
        let zero = Strategy {
            x: 1.5,
            shares: Integrand::zeros_like(&s),
        };
        assert!(wealth_of_strategy(&zero, &s, &resets)
            .unwrap()
            .values
            .iter()
            .all(|v| *v == 1.5));
        let e1_strategy = Strategy {
            x: 1.0,
            shares: Integrand::new(vec![0.0, 0.0], vec![vec![1.0, 1.0], vec![2.0], vec![2.0]]),
        };
        let w = wealth_of_strategy(&e1_strategy, &s, &resets).unwrap();
        assert_eq!(w.last(), 1.0);

        let g = TimeGrid::uniform(1.0, 3).unwrap();
        let s = UPath::continuous(
            g,
            vec![
                vec![2.0, 1.0],
                vec![2.5, 1.0],
                vec![1.5, 3.0],
                vec![3.0, 0.5],
            ],
        )
        .unwrap();
        let hold = Strategy {
            x: 0.5,
            shares: Integrand::from_fn(&s, |_, _| vec![1.0, 0.0]),
        };
        let w = wealth_of_strategy(&hold, &s, &ResetSequence::trivial()).unwrap();
        for j in 0..4 {
            assert_eq!(w.values[j], 0.5 + s.value(j)[0] - 2.0);
        }
    }

    #[test]
    fn conversion_examples() {
        let g = TimeGrid::uniform(1.0, 2).unwrap();
        let s = UPath::continuous(g, vec![vec![1.0, 1.0], vec![1.2, 0.9], vec![1.1, 1.0]]).unwrap();
        let resets = ResetSequence::trivial();
        let r = return_process(&s, &resets).unwrap();
        let pi = Portfolio::from_fn(&s, |_, _| vec![0.5, 0.5]);
        let th = strategy_from_portfolio(&pi, &s, &r).unwrap();
        assert_eq!(th.shares.steps[0], vec![0.5, 0.5]);
        let th0 = strategy_from_portfolio(&Portfolio::null_like(&s), &s, &r).unwrap();
        assert!(th0.shares.steps.iter().flatten().all(|v| *v == 0.0));

        let hold = Strategy {
            x: 1.0,
            shares: Integrand::from_fn(&s, |_, _| vec![1.0, 0.0]),
        };
        let p = portfolio_from_strategy(&hold, &s, &resets).unwrap();
        assert!(p
            .weights
            .steps
            .iter()
            .all(|w| (w[0] - 1.0).abs() < 1e-15 && w[1] == 0.0));

        let broke = Strategy {
            x: 0.1,
            shares: Integrand::from_fn(&s, |_, _| vec![0.0, 2.0]),
        };
        assert!(matches!(
            portfolio_from_strategy(&broke, &s, &resets),
            Err(Error::NotStrictlyAdmissible { index: 1, .. })
        ));
    }

    #[test]
    fn wealth_is_continuous_across_resets() {
        let s = e1();
        let resets = minimal_reset_sequence(&s);
        let r = return_process(&s, &resets).unwrap();
        let pi = Portfolio::new(Integrand::new(
            vec![0.0, 0.0],
            vec![vec![0.3, 0.2], vec![0.5], vec![-0.5]],
        ))
        .unwrap();
        let w = wealth_of_portfolio(&pi, &r).unwrap();
        // the only change at t_1 is the return over (t_0, t_1]
        assert!((w.values[1] - 1.4).abs() < 1e-15);
        let th = strategy_from_portfolio(&pi, &s, &r).unwrap();
        let back = wealth_of_strategy(&th, &s, &resets).unwrap();
        for (a, b) in back.values.iter().zip(&w.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn gbm_path() -> (
        crate::market::SimPath,
        ReturnPath,
        ReturnDecomposition,
        RatesPath,
    ) {
        let m = MarketModel::gbm(&[1.0, 2.0], &[0.1, 0.05], &[0.2, 0.1], 0.0);
        let g = TimeGrid::uniform(1.0, 64).unwrap();
        let p = simulate_path(&m, &g, 4, 0).unwrap();
        let r = return_process(&p.prices, &p.resets).unwrap();
        let d = decompose_returns(&p, &r, CovariationMode::Realized);
        let rates = model_rates(&p);
        (p, r, d, rates)
    }

    #[test]
    fn self_ratio_is_one() {
        let (p, r, d, rates) = gbm_path();
        let rho = Portfolio::new(assemble_numeraire(&rates).unwrap()).unwrap();
        let rw = relative_wealth(&rho, &rho, &r, &d).unwrap();
        assert!(rw.ratio.iter().all(|v| *v == 1.0));
        let null = Portfolio::null_like(&p.prices);
        let rw = relative_wealth(&rho, &null, &r, &d).unwrap();
        let x = wealth_of_portfolio(&rho, &r).unwrap();
        assert_eq!(rw.ratio, x.values);
    }

    #[test]
    fn replicating_numeraire_gives_zero_eta() {
        let (p, r, d, rates) = gbm_path();
        let rho = Portfolio::new(assemble_numeraire(&rates).unwrap()).unwrap();
        let th = strategy_from_portfolio(&rho, &p.prices, &r).unwrap();
        let rep = deflated_ratio_representation(
            &th,
            &rho,
            &p.prices,
            &p.resets,
            &r,
            &d,
            &rates,
            WealthVariant::Multiplicative,
        )
        .unwrap();
        assert!(rep.eta.iter().flatten().all(|e| e.abs() < 1e-12));
        assert!(rep.residual < 1e-12);
    }

    #[test]
    fn structural_violation_is_a_precondition_error() {
        let (p, r, d, rates) = gbm_path();
        let bad = Portfolio::from_fn(&p.prices, |_, n| vec![1.0; n]);
        let th = Strategy {
            x: 1.0,
            shares: Integrand::zeros_like(&p.prices),
        };
        assert!(matches!(
            deflated_ratio_representation(
                &th,
                &bad,
                &p.prices,
                &p.resets,
                &r,
                &d,
                &rates,
                WealthVariant::Multiplicative
            ),
            Err(Error::Precondition(_))
        ));
    }
}
