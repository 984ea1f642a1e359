//! Monte Carlo verification batteries and the refinement study.
//!
//! Paths are simulated, reduced to a small per-path summary and dropped, so
//! memory does not grow with the step count. Summaries are collected in
//! path order, which keeps every estimate independent of the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{
    decompose_returns, local_rates, model_rates, path_rng, return_process_for, simulate_path,
    simulate_path_with, ClockMode, CovariationMode, MarketModel, SimPath, Stream,
};
use crate::mcstats::{
    mean_with_se, pairwise_sum, refinement_table, supermartingale_test, RefinementTable,
    SupermartingaleReport,
};
use crate::numeraire::{assemble_numeraire, log_optimality_battery, structural_residual};
use crate::openmarket::{
    assemble_top_m_numeraire, censored_rates, is_top_m_portfolio, rank_process,
};
use crate::portfolio::{
    deflated_ratio_representation, relative_wealth, strategy_from_portfolio, wealth_of_portfolio,
    wealth_of_portfolio_exp, Portfolio, WealthVariant,
};
use crate::scenario::{Battery, PathContext, RefinementSpec, Scenario};
use crate::ustate::{Integrand, TimeGrid};

/// Tolerance of the clock-invariance comparison.
pub const CLOCK_TOL: f64 = 1e-10;
/// Tolerance of `‖cρ − α‖` for the assembled numéraire.
pub const STRUCTURAL_TOL: f64 = 1e-8;

/// One row of the flat battery table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub battery: Battery,
    pub diagnostic: String,
    pub candidate: String,
    pub checkpoint: Option<f64>,
    pub estimate: f64,
    pub se: f64,
    /// Largest estimate that passes.
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryResult {
    pub battery: Battery,
    pub pass: bool,
    pub lines: Vec<Line>,
    /// Pairwise supermartingale tests per candidate.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub pair_tests: Vec<(String, SupermartingaleReport)>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub tables: Vec<RefinementTable>,
    /// Candidates left out, with the reason.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub skipped: Vec<(String, String)>,
}

impl BatteryResult {
    fn new(battery: Battery) -> Self {
        BatteryResult {
            battery,
            pass: true,
            lines: Vec::new(),
            pair_tests: Vec::new(),
            tables: Vec::new(),
            skipped: Vec::new(),
        }
    }

    fn push(&mut self, line: Line) {
        self.pass &= line.pass;
        self.lines.push(line);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub scenario: String,
    pub seed: u64,
    pub paths: usize,
    pub dt: f64,
    pub checkpoints: Vec<f64>,
    pub batteries: Vec<BatteryResult>,
    pub pass: bool,
}

impl VerifyReport {
    pub fn lines(&self) -> impl Iterator<Item = &Line> {
        self.batteries.iter().flat_map(|b| &b.lines)
    }
}

/// What one path contributes to the batteries.
#[derive(Debug, Default)]
struct PathSummary {
    /// `X_π/X_ρ` at the checkpoints per candidate; `None` after ruin.
    ratio: Vec<Option<Vec<f64>>>,
    clock_gap: f64,
    structural: f64,
    viable: bool,
    top_support_ok: bool,
    censor_mismatches: usize,
    /// `X_π/X_ρ̃` against the top-`m` numéraire; `None` after ruin or
    /// when the candidate is not a top-`m` portfolio on this path.
    top_ratio: Vec<Option<Vec<f64>>>,
    top_member: Vec<bool>,
}

fn ratios_at(x: &[f64], xr: &[f64], cps: &[usize]) -> Vec<f64> {
    cps.iter().map(|&k| x[k] / xr[k]).collect()
}

/// Wealth at the checkpoints relative to `xr`, `None` if the wealth factor
/// hits zero.
fn candidate_ratio(
    pi: &Portfolio,
    r: &crate::market::ReturnPath,
    xr: &[f64],
    cps: &[usize],
) -> Result<Option<Vec<f64>>> {
    match wealth_of_portfolio(pi, r) {
        Ok(w) => Ok(Some(ratios_at(&w.values, xr, cps))),
        Err(Error::WealthNonPositive { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn max_rel_gap(a: &Integrand, b: &Integrand) -> f64 {
    a.steps
        .iter()
        .zip(&b.steps)
        .flat_map(|(x, y)| x.iter().zip(y))
        .map(|(x, y)| (x - y).abs() / x.abs().max(1.0))
        .fold(0.0, f64::max)
}

fn summarize(
    scn: &Scenario,
    grid: &TimeGrid,
    cps: &[usize],
    want: &[Battery],
    id: usize,
) -> Result<PathSummary> {
    let sim = simulate_path(&scn.model, grid, scn.seed, id)?;
    let r = return_process_for(&sim.prices, &sim.resets, id)?;
    let rates = model_rates(&sim);
    let rho = assemble_numeraire(&rates)?;
    let ranks = rank_process(&sim.prices);
    let ctx = PathContext {
        path: &sim,
        rates: &rates,
        ranks: &ranks,
        top_m: scn.top_m,
    };
    let rho_p = Portfolio::new(rho.clone())?;
    let xr = wealth_of_portfolio(&rho_p, &r)?.values;
    let mut out = PathSummary {
        viable: true,
        top_support_ok: true,
        ..Default::default()
    };
    let candidates: Vec<Portfolio> = scn
        .portfolios
        .iter()
        .map(|p| p.rule.weights(&ctx))
        .collect::<Result<_>>()?;
    if want.contains(&Battery::Supermartingale) || want.contains(&Battery::LogOptimality) {
        for pi in &candidates {
            out.ratio.push(candidate_ratio(pi, &r, &xr, cps)?);
        }
    }
    if want.contains(&Battery::ClockInvariance) {
        let d = decompose_returns(&sim, &r, CovariationMode::Model);
        let cal = assemble_numeraire(&local_rates(&d, ClockMode::Calendar))?;
        let pap = assemble_numeraire(&local_rates(&d, ClockMode::Paper))?;
        out.clock_gap = max_rel_gap(&cal, &pap);
    }
    if want.contains(&Battery::Structural) {
        let rep = structural_residual(&rates, &rho)?;
        out.viable = rep.viable;
        out.structural = rep.steps.iter().map(|s| s.residual).fold(0.0, f64::max);
        out.structural = rep
            .integrated
            .values()
            .fold(out.structural, |m, v| m.max(*v));
    }
    if want.contains(&Battery::OpenMarket) {
        let m = scn
            .top_m
            .ok_or_else(|| Error::Input("the open_market battery needs top_m".into()))?;
        for (j, st) in rates.steps.iter().enumerate() {
            let cr = censored_rates(st, &ranks.ranks[j], m)?;
            let d = cr.d_matrix();
            if cr.alpha != &d * &st.alpha || cr.c != &d * &st.c * &d {
                out.censor_mismatches += 1;
            }
        }
        let top = assemble_top_m_numeraire(&rates, &ranks, m)?;
        out.top_support_ok = is_top_m_portfolio(&top, &ranks, m);
        let xt = wealth_of_portfolio(&Portfolio::new(top)?, &r)?.values;
        for pi in &candidates {
            let member = is_top_m_portfolio(&pi.weights, &ranks, m);
            out.top_member.push(member);
            out.top_ratio.push(if member {
                candidate_ratio(pi, &r, &xt, cps)?
            } else {
                None
            });
        }
    }
    Ok(out)
}

/// Supermartingale lines: `E[X_π/X_ρ] <= 1 + z·SE` at each checkpoint, then
/// the pairwise test between checkpoints.
fn ratio_battery(
    res: &mut BatteryResult,
    name: &str,
    per_path: &[Vec<f64>],
    times: &[f64],
    level: f64,
) -> Result<()> {
    for (k, &t) in times.iter().enumerate() {
        let xs: Vec<f64> = per_path.iter().map(|v| v[k]).collect();
        let e = mean_with_se(&xs, t)?;
        let bound = 1.0 + level * e.se;
        res.push(Line {
            battery: res.battery,
            diagnostic: "mean_ratio".into(),
            candidate: name.to_string(),
            checkpoint: Some(t),
            estimate: e.mean,
            se: e.se,
            bound,
            pass: e.mean <= bound,
        });
    }
    if times.len() > 1 {
        let rep = supermartingale_test(per_path, times, level)?;
        res.pass &= rep.pass;
        res.pair_tests.push((name.to_string(), rep));
    }
    Ok(())
}

fn ruin_line(battery: Battery, name: &str, ruined: usize, total: usize) -> Line {
    Line {
        battery,
        diagnostic: "ruin".into(),
        candidate: name.to_string(),
        checkpoint: None,
        estimate: ruined as f64 / total as f64,
        se: 0.0,
        bound: 0.0,
        pass: false,
    }
}

fn exact_line(battery: Battery, diagnostic: &str, estimate: f64, bound: f64) -> Line {
    Line {
        battery,
        diagnostic: diagnostic.into(),
        candidate: String::new(),
        checkpoint: None,
        estimate,
        se: 0.0,
        bound,
        pass: estimate <= bound,
    }
}

/// Runs the requested batteries of a scenario. The refinement battery uses
/// the scenario's refinement block instead of its grid.
pub fn verify(scn: &Scenario, batteries: &[Battery]) -> Result<VerifyReport> {
    let grid = scn.grid.grid()?;
    let cps = scn.checkpoint_indices(&grid)?;
    let times: Vec<f64> = cps.iter().map(|&k| grid.times()[k]).collect();
    let mut want = batteries.to_vec();
    want.sort();
    want.dedup();
    let names: Vec<String> = scn.portfolios.iter().map(|p| p.name.clone()).collect();

    let needs_paths = want.iter().any(|b| *b != Battery::Refinement);
    let summaries: Vec<PathSummary> = if needs_paths {
        (0..scn.paths)
            .into_par_iter()
            .map(|id| summarize(scn, &grid, &cps, &want, id))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let mut results = Vec::new();
    for &b in &want {
        let mut res = BatteryResult::new(b);
        match b {
            Battery::Supermartingale | Battery::LogOptimality => {
                let mut log_names = Vec::new();
                let mut log_samples = Vec::new();
                for (c, name) in names.iter().enumerate() {
                    let ruined = summaries.iter().filter(|s| s.ratio[c].is_none()).count();
                    if ruined > 0 {
                        res.push(ruin_line(b, name, ruined, summaries.len()));
                        continue;
                    }
                    let per_path: Vec<Vec<f64>> = summaries
                        .iter()
                        .map(|s| s.ratio[c].clone().unwrap())
                        .collect();
                    if b == Battery::Supermartingale {
                        ratio_battery(&mut res, name, &per_path, &times, scn.level)?;
                    } else {
                        log_names.push(name.clone());
                        log_samples.push(
                            (0..times.len())
                                .map(|k| per_path.iter().map(|v| v[k].ln()).collect())
                                .collect::<Vec<Vec<f64>>>(),
                        );
                    }
                }
                if b == Battery::LogOptimality {
                    for l in log_optimality_battery(&log_names, &log_samples, &times, scn.level)? {
                        res.push(Line {
                            battery: b,
                            diagnostic: l.diagnostic,
                            candidate: l.candidate,
                            checkpoint: Some(l.estimate.time),
                            estimate: l.estimate.mean,
                            se: l.estimate.se,
                            bound: l.bound,
                            pass: l.pass,
                        });
                    }
                }
            }
            Battery::ClockInvariance => {
                let gap = summaries.iter().map(|s| s.clock_gap).fold(0.0, f64::max);
                res.push(exact_line(b, "max_weight_gap", gap, CLOCK_TOL));
            }
            Battery::Structural => {
                let worst = summaries.iter().map(|s| s.structural).fold(0.0, f64::max);
                res.push(exact_line(b, "max_residual", worst, STRUCTURAL_TOL));
                let nonviable = summaries.iter().filter(|s| !s.viable).count();
                res.push(exact_line(b, "nonviable_paths", nonviable as f64, 0.0));
            }
            Battery::OpenMarket => {
                let bad_support = summaries.iter().filter(|s| !s.top_support_ok).count();
                res.push(exact_line(
                    b,
                    "support_outside_top_m",
                    bad_support as f64,
                    0.0,
                ));
                let mism: usize = summaries.iter().map(|s| s.censor_mismatches).sum();
                res.push(exact_line(b, "censored_rate_mismatches", mism as f64, 0.0));
                for (c, name) in names.iter().enumerate() {
                    if !summaries.iter().all(|s| s.top_member[c]) {
                        res.skipped
                            .push((name.clone(), "not a top-m portfolio on every path".into()));
                        continue;
                    }
                    let ruined = summaries
                        .iter()
                        .filter(|s| s.top_ratio[c].is_none())
                        .count();
                    if ruined > 0 {
                        res.push(ruin_line(b, name, ruined, summaries.len()));
                        continue;
                    }
                    let per_path: Vec<Vec<f64>> = summaries
                        .iter()
                        .map(|s| s.top_ratio[c].clone().unwrap())
                        .collect();
                    ratio_battery(&mut res, name, &per_path, &times, scn.level)?;
                }
            }
            Battery::Refinement => {
                let spec = scn.refinement.as_ref().ok_or_else(|| {
                    Error::Input("the refinement battery needs a refinement block".into())
                })?;
                for t in refinement_study(&scn.model, scn.grid.horizon, spec, scn.seed)? {
                    res.pass &= t.pass;
                    res.tables.push(t);
                }
            }
        }
        results.push(res);
    }
    Ok(VerifyReport {
        scenario: scn.name.clone(),
        seed: scn.seed,
        paths: scn.paths,
        dt: scn.grid.dt,
        checkpoints: times,
        pass: results.iter().all(|r| r.pass),
        batteries: results,
    })
}

/// Names of the refinement diagnostics, in table order.
pub const REFINEMENT_DIAGNOSTICS: [&str; 3] = [
    "relative_wealth_discrepancy",
    "deflated_ratio_residual",
    "exp_vs_mult_gap",
];

/// Sup-norm errors of the three discretization diagnostics on one path.
fn path_errors(sim: &SimPath, hold: Option<usize>) -> Result<[f64; 3]> {
    let r = return_process_for(&sim.prices, &sim.resets, sim.id)?;
    let rates = model_rates(sim);
    let d = decompose_returns(sim, &r, CovariationMode::Realized);
    let rho = Portfolio::new(assemble_numeraire(&rates)?)?;
    let pi = Portfolio::from_fn(&sim.prices, |_, n| {
        let mut w = vec![0.0; n];
        if let Some(i) = hold.filter(|i| *i < n) {
            w[i] = 1.0;
        }
        w
    });
    let discrepancy = relative_wealth(&pi, &rho, &r, &d)?.discrepancy;
    let strategy = strategy_from_portfolio(&pi, &sim.prices, &r)?;
    let residual = deflated_ratio_representation(
        &strategy,
        &rho,
        &sim.prices,
        &sim.resets,
        &r,
        &d,
        &rates,
        WealthVariant::Exponential,
    )?
    .residual;
    let mult = wealth_of_portfolio(&rho, &r)?.values;
    let exp = wealth_of_portfolio_exp(&rho, &r, &d);
    let gap = mult
        .iter()
        .zip(&exp)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok([discrepancy, residual, gap])
}

/// Path `id` on each grid (coarse to fine), driven by one set of Brownian
/// marks drawn on the finest grid.
pub fn coupled_levels(
    model: &MarketModel,
    grids: &[TimeGrid],
    seed: u64,
    id: usize,
) -> Result<Vec<SimPath>> {
    use rand_distr::{Distribution, StandardNormal};
    let fine = grids
        .last()
        .ok_or_else(|| Error::Grid("no refinement levels".into()))?;
    let fine_steps = fine.steps();
    if grids.iter().any(|g| fine_steps % g.steps() != 0) {
        return Err(Error::Grid("step counts must divide the finest one".into()));
    }
    let mut rng = path_rng(seed, id, Stream::Diffusion);
    let mut marks: Vec<Vec<f64>> = Vec::with_capacity(fine_steps);
    let fine_path = simulate_path_with(model, fine, seed, id, &mut |_, n| {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        marks.push(v.clone());
        v
    })?;
    let mut out = Vec::with_capacity(grids.len());
    for g in &grids[..grids.len() - 1] {
        let ratio = fine_steps / g.steps();
        let scale = 1.0 / (ratio as f64).sqrt();
        out.push(simulate_path_with(model, g, seed, id, &mut |j, n| {
            (0..n)
                .map(|i| (0..ratio).map(|q| marks[j * ratio + q][i]).sum::<f64>() * scale)
                .collect()
        })?);
    }
    out.push(fine_path);
    Ok(out)
}

/// Errors of the discretization diagnostics under step halving. Levels of
/// one path share their Brownian marks: each coarse mark is the scaled sum
/// of the fine marks it covers, so the levels see the same trajectory.
/// Only scheduled events (on the coarsest grid) keep that coupling, so
/// random events and jumps are refused.
pub fn refinement_study(
    model: &MarketModel,
    horizon: f64,
    spec: &RefinementSpec,
    seed: u64,
) -> Result<Vec<RefinementTable>> {
    if !model.events.rates.is_zero() || model.jumps.as_ref().is_some_and(|j| j.intensity > 0.0) {
        return Err(Error::Precondition(
            "the refinement study needs a model without random events or jumps".into(),
        ));
    }
    let grids: Vec<TimeGrid> = spec
        .dts
        .iter()
        .map(|&dt| crate::scenario::GridSpec { horizon, dt }.grid())
        .collect::<Result<_>>()?;
    let per_path: Vec<Vec<[f64; 3]>> = (0..spec.paths)
        .into_par_iter()
        .map(|id| {
            coupled_levels(model, &grids, seed, id)?
                .iter()
                .map(|sim| path_errors(sim, spec.hold))
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(REFINEMENT_DIAGNOSTICS
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let errors = (0..grids.len())
                .map(|l| {
                    let xs: Vec<f64> = per_path.iter().map(|p| p[l][k]).collect();
                    pairwise_sum(&xs) / xs.len() as f64
                })
                .collect();
            refinement_table(name, spec.dts.clone(), errors)
        })
        .collect())
}
