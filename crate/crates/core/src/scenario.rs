//! Scenario files: a market model, a grid, the portfolios under test and
//! the batteries to run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{MarketModel, RatesPath, SimPath};
use crate::numeraire::assemble_numeraire;
use crate::openmarket::{assemble_top_m_numeraire, rank_order, RankPath};
use crate::portfolio::Portfolio;
use crate::ustate::{Integrand, TimeGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub horizon: f64,
    pub dt: f64,
}

impl GridSpec {
    pub fn grid(&self) -> Result<TimeGrid> {
        let steps = self.horizon / self.dt;
        let n = steps.round();
        if !(self.dt > 0.0) || !(self.horizon > 0.0) || (steps - n).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::Grid(format!(
                "dt {} must divide the horizon {} into whole steps",
                self.dt, self.horizon
            )));
        }
        TimeGrid::uniform(self.horizon, n as usize)
    }
}

/// How a top-`m` portfolio spreads its capital over the current leaders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopWeighting {
    #[default]
    Equal,
    /// Proportional to price.
    Cap,
    /// Everything in the rank-one asset.
    Leader,
}

fn one() -> f64 {
    1.0
}

/// A rule producing portfolio weights from a simulated path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PortfolioRule {
    MoneyMarket,
    /// Fully invested in the asset at `index` while it exists.
    Single {
        index: usize,
    },
    EqualWeight {
        #[serde(default = "one")]
        scale: f64,
    },
    /// Constant weights; assets beyond the list get zero.
    Fixed {
        weights: Vec<f64>,
    },
    Numeraire {
        #[serde(default = "one")]
        scale: f64,
    },
    TopM {
        #[serde(default)]
        weighting: TopWeighting,
    },
    TopMNumeraire {
        #[serde(default = "one")]
        scale: f64,
    },
    /// Explicit weights per grid step.
    Table {
        steps: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortfolioSpec {
    pub name: String,
    pub rule: PortfolioRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Battery {
    /// `X_π/X_ρ` is a supermartingale for every candidate.
    Supermartingale,
    /// `E[log X_π/X_ρ] <= 0`.
    LogOptimality,
    /// Numéraire weights do not depend on the clock.
    ClockInvariance,
    /// The assembled numéraire satisfies `cρ = α`.
    Structural,
    /// Top-`m` support, censored rates and relative wealth against the
    /// top-`m` numéraire.
    OpenMarket,
    /// Discretization errors shrink at order >= 0.8.
    Refinement,
}

impl Battery {
    pub fn name(self) -> &'static str {
        match self {
            Battery::Supermartingale => "supermartingale",
            Battery::LogOptimality => "log_optimality",
            Battery::ClockInvariance => "clock_invariance",
            Battery::Structural => "structural",
            Battery::OpenMarket => "open_market",
            Battery::Refinement => "refinement",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.trim().to_string()))
            .map_err(|_| Error::Input(format!("unknown battery '{s}'")))
    }
}

fn default_checkpoints() -> Vec<f64> {
    vec![]
}

fn default_level() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinementSpec {
    /// Step sizes, each half the previous one.
    pub dts: Vec<f64>,
    pub paths: usize,
    /// Index of the asset the strategy buys and holds in the ratio
    /// representation; `None` keeps everything in the money market.
    #[serde(default)]
    pub hold: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub model: MarketModel,
    pub grid: GridSpec,
    #[serde(default)]
    pub seed: u64,
    pub paths: usize,
    #[serde(default)]
    pub portfolios: Vec<PortfolioSpec>,
    /// Times at which ensemble statistics are taken; the horizon if empty.
    #[serde(default = "default_checkpoints")]
    pub checkpoints: Vec<f64>,
    #[serde(default)]
    pub top_m: Option<usize>,
    #[serde(default)]
    pub batteries: Vec<Battery>,
    /// Critical value in standard errors.
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub refinement: Option<RefinementSpec>,
    /// Tree files, relative to the scenario file.
    #[serde(default)]
    pub trees: Vec<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// A schema violation with the JSON path of the offending field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemaError {
    pub field: String,
    pub message: String,
}

impl Scenario {
    /// Parses and validates; schema errors name the offending field.
    pub fn from_json(text: &str) -> std::result::Result<Scenario, SchemaError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scn: Scenario = serde_path_to_error::deserialize(de).map_err(|e| SchemaError {
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        scn.validate().map_err(|(field, message)| SchemaError {
            field: field.to_string(),
            message,
        })?;
        Ok(scn)
    }

    pub fn from_path(path: &Path) -> Result<std::result::Result<Scenario, SchemaError>> {
        Ok(Scenario::from_json(&std::fs::read_to_string(path)?))
    }

    fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        self.model
            .validate()
            .map_err(|e| ("model", e.to_string()))?;
        let grid = self.grid.grid().map_err(|e| ("grid", e.to_string()))?;
        if self.paths < 2 {
            return Err(("paths", "at least 2 paths are needed".into()));
        }
        for &t in &self.checkpoints {
            if grid.index_of(t).is_none() {
                return Err(("checkpoints", format!("{t} is not a grid time")));
            }
        }
        if self.top_m == Some(0) {
            return Err(("top_m", "m must be >= 1".into()));
        }
        if !(self.level > 0.0) {
            return Err(("level", "must be positive".into()));
        }
        for p in &self.portfolios {
            let needs_m = matches!(
                p.rule,
                PortfolioRule::TopM { .. } | PortfolioRule::TopMNumeraire { .. }
            );
            if needs_m && self.top_m.is_none() {
                return Err(("portfolios", format!("'{}' needs top_m", p.name)));
            }
        }
        if let Some(r) = &self.refinement {
            if r.dts.len() < 2 || r.paths < 2 {
                return Err((
                    "refinement",
                    "need at least two step sizes and two paths".into(),
                ));
            }
            for w in r.dts.windows(2) {
                if (w[0] / w[1] - 2.0).abs() > 1e-12 {
                    return Err((
                        "refinement.dts",
                        "each step size must halve the previous".into(),
                    ));
                }
            }
        }
        if self.batteries.contains(&Battery::Refinement) && self.refinement.is_none() {
            return Err((
                "refinement",
                "the refinement battery needs a refinement block".into(),
            ));
        }
        if self.batteries.contains(&Battery::OpenMarket) && self.top_m.is_none() {
            return Err(("top_m", "the open_market battery needs top_m".into()));
        }
        Ok(())
    }

    /// Checkpoints as grid indices (the horizon if none are configured).
    pub fn checkpoint_indices(&self, grid: &TimeGrid) -> Result<Vec<usize>> {
        if self.checkpoints.is_empty() {
            return Ok(vec![grid.steps()]);
        }
        self.checkpoints
            .iter()
            .map(|&t| {
                grid.index_of(t)
                    .ok_or_else(|| Error::Grid(format!("checkpoint {t} is not a grid time")))
            })
            .collect()
    }
}

/// Everything a rule may look at on one path.
pub struct PathContext<'a> {
    pub path: &'a SimPath,
    pub rates: &'a RatesPath,
    pub ranks: &'a RankPath,
    pub top_m: Option<usize>,
}

impl PortfolioRule {
    pub fn weights(&self, ctx: &PathContext) -> Result<Portfolio> {
        let s = &ctx.path.prices;
        let steps = s.grid().steps();
        let dims: Vec<usize> = (0..steps).map(|j| s.right(j).len()).collect();
        let scaled = |w: Integrand, k: f64| Integrand {
            initial: w.initial,
            steps: w
                .steps
                .into_iter()
                .map(|v| v.into_iter().map(|x| x * k).collect())
                .collect(),
        };
        let need_m = || {
            ctx.top_m
                .ok_or_else(|| Error::Input("top-m rule without top_m".into()))
        };
        let weights = match self {
            PortfolioRule::MoneyMarket => Integrand::from_fn(s, |_, n| vec![0.0; n]),
            PortfolioRule::Single { index } => Integrand::from_fn(s, |_, n| {
                let mut w = vec![0.0; n];
                if *index < n {
                    w[*index] = 1.0;
                }
                w
            }),
            PortfolioRule::EqualWeight { scale } => {
                Integrand::from_fn(s, |_, n| vec![scale / n as f64; n])
            }
            PortfolioRule::Fixed { weights } => Integrand::from_fn(s, |_, n| {
                (0..n)
                    .map(|i| weights.get(i).copied().unwrap_or(0.0))
                    .collect()
            }),
            PortfolioRule::Numeraire { scale } => scaled(assemble_numeraire(ctx.rates)?, *scale),
            PortfolioRule::TopM { weighting } => {
                let m = need_m()?;
                Integrand::from_fn(s, |j, n| {
                    let u = &ctx.ranks.ranks[j];
                    let price = s.right(j);
                    let top: Vec<usize> = (0..n).filter(|&i| u[i] <= m).collect();
                    let mut w = vec![0.0; n];
                    match weighting {
                        TopWeighting::Equal => {
                            top.iter().for_each(|&i| w[i] = 1.0 / top.len() as f64)
                        }
                        TopWeighting::Cap => {
                            let tot: f64 = top.iter().map(|&i| price[i]).sum();
                            top.iter().for_each(|&i| w[i] = price[i] / tot);
                        }
                        TopWeighting::Leader => w[rank_order(price)[0]] = 1.0,
                    }
                    w
                })
            }
            PortfolioRule::TopMNumeraire { scale } => scaled(
                assemble_top_m_numeraire(ctx.rates, ctx.ranks, need_m()?)?,
                *scale,
            ),
            PortfolioRule::Table { steps: table } => {
                if table.len() != steps {
                    return Err(Error::Dimension {
                        context: "portfolio table rows".into(),
                        expected: steps,
                        found: table.len(),
                    });
                }
                for (j, row) in table.iter().enumerate() {
                    if row.len() != dims[j] {
                        return Err(Error::Dimension {
                            context: format!("portfolio table row {j}"),
                            expected: dims[j],
                            found: row.len(),
                        });
                    }
                }
                Integrand::new(vec![0.0; s.value(0).len()], table.clone())
            }
        };
        Portfolio::new(weights)
    }
}
