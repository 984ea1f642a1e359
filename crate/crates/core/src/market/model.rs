use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Initial asset: price, drift rate and volatility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetSpec {
    pub price: f64,
    #[serde(default)]
    pub drift: f64,
    #[serde(default)]
    pub vol: f64,
    /// Target price level for mean-reverting dynamics; defaults to `price`.
    #[serde(default)]
    pub level: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Dynamics {
    /// Constant drift and volatility per asset.
    #[default]
    Gbm,
    /// Deterministic: drift only, volatilities ignored.
    Constant,
    /// Log-price reverting to its level: `a_i = μ_i + κ (log L_i - log s_i)`.
    MeanReverting { speed: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stepping {
    /// `S <- S exp((a - v_ii/2) dt + (L xi)_i sqrt(dt))`, always positive.
    #[default]
    LogEuler,
    /// `S <- S (1 + a dt + (L xi)_i sqrt(dt))`.
    Arithmetic,
}

/// Independent compound-Poisson jumps per asset, relative sizes uniform on
/// `[low, high]` with `low > -1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpSpec {
    pub intensity: f64,
    pub low: f64,
    pub high: f64,
}

impl JumpSpec {
    pub fn mean(&self) -> f64 {
        0.5 * (self.low + self.high)
    }

    pub fn second_moment(&self) -> f64 {
        (self.low * self.low + self.low * self.high + self.high * self.high) / 3.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// A new asset is appended.
    Entry,
    /// One asset leaves the market.
    Exit,
    /// The largest asset splits into two adjacent ones.
    Split,
    /// Two random assets merge into the position of the first.
    Merge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledEvent {
    pub time: f64,
    pub kind: EventKind,
}

/// Poisson rates (per unit time) of random dimensional events.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRates {
    #[serde(default)]
    pub entry: f64,
    #[serde(default)]
    pub exit: f64,
    #[serde(default)]
    pub split: f64,
    #[serde(default)]
    pub merge: f64,
}

impl EventRates {
    pub fn is_zero(&self) -> bool {
        self.entry == 0.0 && self.exit == 0.0 && self.split == 0.0 && self.merge == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriceLaw {
    Fixed {
        value: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    /// A fraction of the mean price of the incumbents.
    MeanFraction {
        fraction: f64,
    },
}

/// Price and dynamics of newly listed assets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IpoLaw {
    pub price: PriceLaw,
    #[serde(default)]
    pub drift: f64,
    #[serde(default)]
    pub vol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitRule {
    #[default]
    Uniform,
    Smallest,
}

fn default_max_dim() -> usize {
    12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    #[serde(default)]
    pub scheduled: Vec<ScheduledEvent>,
    #[serde(default)]
    pub rates: EventRates,
    #[serde(default)]
    pub ipo: Option<IpoLaw>,
    #[serde(default)]
    pub exit_rule: ExitRule,
    /// Entries and splits are skipped at this dimension.
    #[serde(default = "default_max_dim")]
    pub max_dim: usize,
}

impl Default for EventSpec {
    fn default() -> Self {
        EventSpec {
            scheduled: Vec::new(),
            rates: EventRates::default(),
            ipo: None,
            exit_rule: ExitRule::default(),
            max_dim: default_max_dim(),
        }
    }
}

impl EventSpec {
    pub fn is_empty(&self) -> bool {
        self.scheduled.is_empty() && self.rates.is_zero()
    }
}

/// A market: initial assets, per-epoch dynamics and a dimensional-event law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketModel {
    pub assets: Vec<AssetSpec>,
    /// Uniform pairwise correlation of the diffusion parts.
    #[serde(default)]
    pub correlation: f64,
    #[serde(default)]
    pub dynamics: Dynamics,
    #[serde(default)]
    pub stepping: Stepping,
    #[serde(default)]
    pub jumps: Option<JumpSpec>,
    #[serde(default)]
    pub events: EventSpec,
}

/// Dynamics parameters carried by a live asset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssetParams {
    pub drift: f64,
    pub vol: f64,
    pub level: f64,
}

impl MarketModel {
    /// Geometric Brownian motion without events.
    pub fn gbm(prices: &[f64], drifts: &[f64], vols: &[f64], correlation: f64) -> Self {
        MarketModel {
            assets: prices
                .iter()
                .zip(drifts)
                .zip(vols)
                .map(|((&price, &drift), &vol)| AssetSpec {
                    price,
                    drift,
                    vol,
                    level: None,
                })
                .collect(),
            correlation,
            dynamics: Dynamics::Gbm,
            stepping: Stepping::LogEuler,
            jumps: None,
            events: EventSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.assets.is_empty() {
            return Err(Error::Model(
                "at least one initial asset is required".into(),
            ));
        }
        for (i, a) in self.assets.iter().enumerate() {
            if !(a.price > 0.0) || !a.price.is_finite() {
                return Err(Error::Model(format!(
                    "asset {i}: price must be positive, got {}",
                    a.price
                )));
            }
            if !(a.vol >= 0.0) || !a.drift.is_finite() || !a.vol.is_finite() {
                return Err(Error::Model(format!(
                    "asset {i}: drift must be finite and vol >= 0"
                )));
            }
            if let Some(l) = a.level {
                if !(l > 0.0) {
                    return Err(Error::Model(format!("asset {i}: level must be positive")));
                }
            }
        }
        if !(-1.0..=1.0).contains(&self.correlation) {
            return Err(Error::Model(format!(
                "correlation {} outside [-1, 1]",
                self.correlation
            )));
        }
        if let Dynamics::MeanReverting { speed } = self.dynamics {
            if !(speed >= 0.0) || !speed.is_finite() {
                return Err(Error::Model("mean-reversion speed must be >= 0".into()));
            }
        }
        if let Some(j) = &self.jumps {
            if !(j.intensity >= 0.0) || !(j.low > -1.0) || !(j.high >= j.low) || !j.high.is_finite()
            {
                return Err(Error::Model(
                    "jumps need intensity >= 0 and -1 < low <= high".into(),
                ));
            }
        }
        let ev = &self.events;
        for r in [
            ev.rates.entry,
            ev.rates.exit,
            ev.rates.split,
            ev.rates.merge,
        ] {
            if !(r >= 0.0) || !r.is_finite() {
                return Err(Error::Model("event rates must be finite and >= 0".into()));
            }
        }
        if ev.max_dim < self.assets.len() {
            return Err(Error::Model(format!(
                "max_dim {} below the initial dimension {}",
                ev.max_dim,
                self.assets.len()
            )));
        }
        let wants_entry =
            ev.rates.entry > 0.0 || ev.scheduled.iter().any(|e| e.kind == EventKind::Entry);
        match &ev.ipo {
            None if wants_entry => {
                return Err(Error::Model("entry events need an ipo law".into()));
            }
            Some(ipo) => {
                let ok = match ipo.price {
                    PriceLaw::Fixed { value } => value > 0.0,
                    PriceLaw::Uniform { low, high } => low > 0.0 && high >= low,
                    PriceLaw::MeanFraction { fraction } => fraction > 0.0,
                };
                if !ok || !(ipo.vol >= 0.0) {
                    return Err(Error::Model(
                        "ipo law needs positive prices and vol >= 0".into(),
                    ));
                }
            }
            None => {}
        }
        Ok(())
    }

    pub fn initial_prices(&self) -> Vec<f64> {
        self.assets.iter().map(|a| a.price).collect()
    }

    pub fn initial_params(&self) -> Vec<AssetParams> {
        self.assets
            .iter()
            .map(|a| AssetParams {
                drift: a.drift,
                vol: a.vol,
                level: a.level.unwrap_or(a.price),
            })
            .collect()
    }

    fn effective_vol(&self, p: &AssetParams) -> f64 {
        match self.dynamics {
            Dynamics::Constant => 0.0,
            _ => p.vol,
        }
    }

    /// Drift rate of the continuous part at price vector `s`.
    pub fn diffusion_drift(&self, params: &[AssetParams], s: &[f64]) -> Vec<f64> {
        params
            .iter()
            .zip(s)
            .map(|(p, &si)| match self.dynamics {
                Dynamics::MeanReverting { speed } => p.drift + speed * (p.level.ln() - si.ln()),
                _ => p.drift,
            })
            .collect()
    }

    /// Total drift rate `a(t, s)`, including the jump compensator.
    pub fn drift(&self, params: &[AssetParams], s: &[f64]) -> Vec<f64> {
        let mut a = self.diffusion_drift(params, s);
        if let Some(j) = &self.jumps {
            let comp = j.intensity * j.mean();
            a.iter_mut().for_each(|x| *x += comp);
        }
        a
    }

    /// Covariance rate of the continuous part.
    pub fn diffusion_cov(&self, params: &[AssetParams]) -> DMatrix<f64> {
        let n = params.len();
        let vols: Vec<f64> = params.iter().map(|p| self.effective_vol(p)).collect();
        DMatrix::from_fn(n, n, |i, j| {
            let r = if i == j { 1.0 } else { self.correlation };
            r * vols[i] * vols[j]
        })
    }

    /// Total covariance rate `v(t, s)`, including jump variance.
    pub fn cov(&self, params: &[AssetParams]) -> DMatrix<f64> {
        let mut v = self.diffusion_cov(params);
        if let Some(j) = &self.jumps {
            let extra = j.intensity * j.second_moment();
            for i in 0..v.nrows() {
                v[(i, i)] += extra;
            }
        }
        v
    }
}

/// A factor `L` with `L Lᵀ = v` after clipping eigenvalues in
/// `[-1e-10, 0)` to zero; larger negative eigenvalues are a model error.
pub fn psd_factor(v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = v.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(v.clone());
    let scale = eig.eigenvalues.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let mut l = eig.eigenvectors.clone();
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam < -1e-10 * scale {
            return Err(Error::Model(format!(
                "covariance rate is not positive semidefinite (eigenvalue {lam:e})"
            )));
        }
        let s = lam.max(0.0).sqrt();
        l.column_mut(k).scale_mut(s);
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_reproduces_covariance() {
        let m = MarketModel::gbm(&[1.0, 1.0, 1.0], &[0.0; 3], &[0.2, 0.1, 0.3], 0.4);
        let v = m.cov(&m.initial_params());
        let l = psd_factor(&v).unwrap();
        assert!((&l * l.transpose() - &v).abs().max() < 1e-14);
    }

    #[test]
    fn negative_correlation_beyond_psd_is_rejected() {
        let m = MarketModel::gbm(&[1.0, 1.0, 1.0], &[0.0; 3], &[0.2, 0.2, 0.2], -0.9);
        assert!(psd_factor(&m.cov(&m.initial_params())).is_err());
    }

    #[test]
    fn perfect_correlation_is_clipped_not_rejected() {
        let m = MarketModel::gbm(&[1.0, 1.0], &[0.0; 2], &[0.2, 0.2], 1.0);
        let l = psd_factor(&m.cov(&m.initial_params())).unwrap();
        assert!(
            (&l * l.transpose() - m.cov(&m.initial_params()))
                .abs()
                .max()
                < 1e-14
        );
    }

    #[test]
    fn jump_moments_enter_rates() {
        let mut m = MarketModel::gbm(&[1.0], &[0.1], &[0.2], 0.0);
        m.jumps = Some(JumpSpec {
            intensity: 2.0,
            low: -0.2,
            high: 0.4,
        });
        let p = m.initial_params();
        assert!((m.drift(&p, &[1.0])[0] - (0.1 + 2.0 * 0.1)).abs() < 1e-15);
        let second = (0.04 - 0.08 + 0.16) / 3.0;
        assert!((m.cov(&p)[(0, 0)] - (0.04 + 2.0 * second)).abs() < 1e-15);
    }

    #[test]
    fn entry_needs_ipo_law() {
        let mut m = MarketModel::gbm(&[1.0], &[0.1], &[0.2], 0.0);
        m.events.scheduled.push(ScheduledEvent {
            time: 0.5,
            kind: EventKind::Entry,
        });
        assert!(m.validate().is_err());
    }
}
