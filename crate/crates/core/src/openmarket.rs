//! Ranks and the top-`m` open market: ranked components, predictable rank
//! processes, censored returns and rates, and the top-`m` numéraire.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{RateStep, RatesPath, ReturnPath};
use crate::numeraire::{numeraire_dissection, Growth};
use crate::ustate::{Integrand, UPath};

/// Asset indices from largest to smallest value; ties go to the smaller
/// index.
pub fn rank_order(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx
}

/// `u_i`: the (1-based) rank of asset `i`.
pub fn ranks(v: &[f64]) -> Vec<usize> {
    let mut u = vec![0; v.len()];
    for (r, i) in rank_order(v).into_iter().enumerate() {
        u[i] = r + 1;
    }
    u
}

/// The `k`-th ranked component `v_(k)` (1-based `k`) and the index holding
/// it.
pub fn ranked_value(v: &[f64], k: usize) -> Result<(f64, usize)> {
    if k == 0 || k > v.len() {
        return Err(Error::Input(format!("rank {k} outside 1..={}", v.len())));
    }
    let i = rank_order(v)[k - 1];
    Ok((v[i], i))
}

/// `v_(k) = max_{|I| = k} min_{i ∈ I} v_i` by enumerating index subsets.
pub fn ranked_value_by_subsets(v: &[f64], k: usize) -> Result<f64> {
    let n = v.len();
    if k == 0 || k > n {
        return Err(Error::Input(format!("rank {k} outside 1..={n}")));
    }
    if n > 20 {
        return Err(Error::Input(
            "subset enumeration is limited to n <= 20".into(),
        ));
    }
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let m = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| v[i])
            .fold(f64::INFINITY, f64::min);
        best = best.max(m);
    }
    Ok(best)
}

/// Rank used on each step `(t_j, t_{j+1}]`, taken from `S(t_j+)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankPath {
    pub ranks: Vec<Vec<usize>>,
}

pub fn rank_process(s: &UPath) -> RankPath {
    RankPath {
        ranks: (0..s.grid().steps()).map(|j| ranks(s.right(j))).collect(),
    }
}

impl RankPath {
    /// Number of steps on which the rank vector changes within an epoch.
    pub fn rank_changes(&self) -> usize {
        self.ranks
            .windows(2)
            .filter(|w| w[0].len() == w[1].len() && w[0] != w[1])
            .count()
    }

    pub fn in_top(&self, j: usize, m: usize) -> Vec<bool> {
        self.ranks[j].iter().map(|&u| u <= m).collect()
    }
}

fn check_m(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::Input("top-m needs m >= 1".into()));
    }
    Ok(())
}

/// `ΔR̃_i = 1{u_i <= m} ΔR_i` on every step.
pub fn censor_returns(r: &ReturnPath, u: &RankPath, m: usize) -> Result<ReturnPath> {
    check_m(m)?;
    let mut out = r.clone();
    for (j, dr) in out.dr.iter_mut().enumerate() {
        for (x, &rank) in dr.iter_mut().zip(&u.ranks[j]) {
            if rank > m {
                *x = 0.0;
            }
        }
    }
    Ok(out)
}

/// `α̃ = Dα`, `c̃ = DcD` with `D = diag(1{u_i <= m})`.
#[derive(Debug, Clone, PartialEq)]
pub struct CensoredRates {
    pub alpha: DVector<f64>,
    pub c: DMatrix<f64>,
    pub d: Vec<bool>,
}

impl CensoredRates {
    pub fn d_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.d.len(), self.d.len(), |i, j| {
            if i == j && self.d[i] {
                1.0
            } else {
                0.0
            }
        })
    }
}

pub fn censored_rates(step: &RateStep, u: &[usize], m: usize) -> Result<CensoredRates> {
    check_m(m)?;
    let n = step.alpha.len();
    if u.len() != n {
        return Err(Error::Dimension {
            context: "rank vector against rates".into(),
            expected: n,
            found: u.len(),
        });
    }
    let d: Vec<bool> = u.iter().map(|&r| r <= m).collect();
    let alpha = DVector::from_fn(n, |i, _| if d[i] { step.alpha[i] } else { 0.0 });
    let c = DMatrix::from_fn(n, n, |i, j| if d[i] && d[j] { step.c[(i, j)] } else { 0.0 });
    Ok(CensoredRates { alpha, c, d })
}

/// Top-`m` numéraire `ρ = (c̃)†α̃` and its growth rate.
#[derive(Debug, Clone, PartialEq)]
pub struct TopMNumeraire {
    pub rho: DVector<f64>,
    pub in_range: bool,
    pub growth: Growth,
    pub phi: Option<DVector<f64>>,
}

/// Solves on the active block only, so weights outside the top `m` are
/// exactly zero.
pub fn top_m_numeraire(cr: &CensoredRates) -> Result<TopMNumeraire> {
    let n = cr.d.len();
    let act: Vec<usize> = (0..n).filter(|&i| cr.d[i]).collect();
    let k = act.len();
    let a = DVector::from_fn(k, |i, _| cr.alpha[act[i]]);
    let c = DMatrix::from_fn(k, k, |i, j| cr.c[(act[i], act[j])]);
    let ns = numeraire_dissection(&a, &c)?;
    let embed = |v: &DVector<f64>| {
        let mut out = DVector::zeros(n);
        for (i, &ix) in act.iter().enumerate() {
            out[ix] = v[i];
        }
        out
    };
    Ok(TopMNumeraire {
        rho: embed(&ns.rho),
        in_range: ns.in_range,
        growth: ns.growth,
        phi: ns.phi.as_ref().map(embed),
    })
}

/// Top-`m` numéraire weights on every step.
pub fn assemble_top_m_numeraire(rates: &RatesPath, u: &RankPath, m: usize) -> Result<Integrand> {
    let n0 = rates.steps.first().map_or(0, |s| s.key.n);
    let mut steps: Vec<Vec<f64>> = Vec::with_capacity(rates.steps.len());
    let mut prev: Option<CensoredRates> = None;
    for (j, st) in rates.steps.iter().enumerate() {
        let cr = censored_rates(st, &u.ranks[j], m)?;
        if prev
            .as_ref()
            .is_some_and(|p| p.alpha == cr.alpha && p.c == cr.c && p.d == cr.d)
        {
            steps.push(steps[j - 1].clone());
            continue;
        }
        let t = top_m_numeraire(&cr)?;
        prev = Some(cr);
        if !t.in_range {
            return Err(Error::NonViable {
                key: st.key,
                step: j,
                phi: t.phi.unwrap().iter().copied().collect(),
            });
        }
        steps.push(t.rho.iter().copied().collect());
    }
    Ok(Integrand::new(vec![0.0; n0], steps))
}

/// First `(step, index)` where `π` holds an asset ranked below `m`.
pub fn top_m_violation(pi: &Integrand, u: &RankPath, m: usize) -> Option<(usize, usize)> {
    for (j, w) in pi.steps.iter().enumerate() {
        for (i, (&x, &rank)) in w.iter().zip(&u.ranks[j]).enumerate() {
            if rank > m && x != 0.0 {
                return Some((j, i));
            }
        }
    }
    None
}

pub fn is_top_m_portfolio(pi: &Integrand, u: &RankPath, m: usize) -> bool {
    top_m_violation(pi, u, m).is_none()
}

/// Zeroes the weights of assets outside the current top `m`.
pub fn censor_portfolio(pi: &Integrand, u: &RankPath, m: usize) -> Integrand {
    let mut out = pi.clone();
    for (j, w) in out.steps.iter_mut().enumerate() {
        for (x, &rank) in w.iter_mut().zip(&u.ranks[j]) {
            if rank > m {
                *x = 0.0;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ustate::{DissectionKey, TimeGrid};

    #[test]
    fn lexicographic_ties() {
        let v = [3.0, 1.0, 3.0];
        assert_eq!(ranked_value(&v, 1).unwrap(), (3.0, 0));
        assert_eq!(ranked_value(&v, 2).unwrap(), (3.0, 2));
        assert_eq!(ranked_value(&v, 3).unwrap(), (1.0, 1));
        assert_eq!(ranks(&v), vec![1, 3, 2]);
        assert!(ranked_value(&v, 0).is_err() && ranked_value(&v, 4).is_err());
    }

    #[test]
    fn sorted_input_ranks_in_place() {
        let v = [5.0, 4.0, 2.0, 2.0, 1.0];
        for k in 1..=5 {
            assert_eq!(ranked_value(&v, k).unwrap(), (v[k - 1], k - 1));
            assert_eq!(ranked_value_by_subsets(&v, k).unwrap(), v[k - 1]);
        }
    }

    #[test]
    fn rank_process_is_left_sampled() {
        let g = TimeGrid::uniform(1.0, 2).unwrap();
        let s = UPath::continuous(g, vec![vec![1.0, 2.0], vec![3.0, 2.0], vec![0.5, 2.0]]).unwrap();
        let u = rank_process(&s);
        assert_eq!(u.ranks, vec![vec![2, 1], vec![1, 2]]);
        assert_eq!(u.rank_changes(), 1);
        let eq =
            UPath::continuous(TimeGrid::uniform(1.0, 1).unwrap(), vec![vec![2.0, 2.0]; 2]).unwrap();
        assert_eq!(rank_process(&eq).ranks[0], vec![1, 2]);
    }

    fn step(alpha: &[f64], c: &[&[f64]]) -> RateStep {
        let n = alpha.len();
        RateStep {
            key: DissectionKey::new(1, n),
            alpha: DVector::from_column_slice(alpha),
            c: DMatrix::from_fn(n, n, |i, j| c[i][j]),
            d_o: 1.0,
        }
    }

    #[test]
    fn censored_two_asset_example() {
        let st = step(&[0.1, 0.05], &[&[0.04, 0.01], &[0.01, 0.01]]);
        let cr = censored_rates(&st, &[1, 2], 1).unwrap();
        assert_eq!(cr.alpha.as_slice(), &[0.1, 0.0]);
        assert_eq!(cr.c, DMatrix::from_row_slice(2, 2, &[0.04, 0.0, 0.0, 0.0]));
        let d = cr.d_matrix();
        assert_eq!(&d * &st.alpha, cr.alpha);
        assert_eq!(&d * &st.c * &d, cr.c);
        let t = top_m_numeraire(&cr).unwrap();
        assert!((t.rho[0] - 2.5).abs() < 1e-12);
        assert_eq!(t.rho[1], 0.0);
        assert!((t.growth.value().unwrap() - 0.125).abs() < 1e-12);

        let all = censored_rates(&st, &[1, 2], 2).unwrap();
        assert_eq!(
            (all.alpha.clone(), all.c.clone()),
            (st.alpha.clone(), st.c.clone())
        );
        let closed = numeraire_dissection(&st.alpha, &st.c).unwrap();
        assert!((top_m_numeraire(&all).unwrap().rho - closed.rho).amax() < 1e-12);
    }

    #[test]
    fn censoring_is_not_best_asset_selection() {
        // asset 2 is on top but asset 1 would grow faster
        let st = step(&[0.2, 0.05], &[&[0.04, 0.0], &[0.0, 0.04]]);
        let t = top_m_numeraire(&censored_rates(&st, &[2, 1], 1).unwrap()).unwrap();
        assert_eq!(t.rho[0], 0.0);
        let g = t.growth.value().unwrap();
        assert!((g - 0.5 * 0.05 * 0.05 / 0.04).abs() < 1e-12);
    }

    #[test]
    fn censor_returns_zeroes_low_ranks() {
        let g = TimeGrid::uniform(1.0, 2).unwrap();
        let s = UPath::continuous(g, vec![vec![2.0, 1.0], vec![2.2, 1.1], vec![2.0, 1.0]]).unwrap();
        let r =
            crate::market::return_process(&s, &crate::ustate::ResetSequence::trivial()).unwrap();
        let u = rank_process(&s);
        let rc = censor_returns(&r, &u, 1).unwrap();
        assert!(rc.dr.iter().all(|d| d[1] == 0.0));
        assert_eq!(censor_returns(&r, &u, 2).unwrap(), r);
        assert!(censor_returns(&r, &u, 0).is_err());

        let eq = Integrand::from_fn(&s, |_, n| vec![0.5; n]);
        assert_eq!(top_m_violation(&eq, &u, 1), Some((0, 1)));
        assert!(is_top_m_portfolio(&censor_portfolio(&eq, &u, 1), &u, 1));
    }
}
