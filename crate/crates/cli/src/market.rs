//! Scenario subcommands: simulate, numeraire, verify, open-market, refine.

use std::collections::BTreeMap;
use std::path::Path;

use piecewise_market::battery::{self, refinement_study, BatteryResult, VerifyReport};
use piecewise_market::io::{read_ensemble_csv, write_ensemble_csv, Manifest};
use piecewise_market::market::{
    model_rates, return_process_for, simulate_path, RateStep, RatesPath, SimPath,
};
use piecewise_market::numeraire::{
    assemble_numeraire, structural_residual, Growth, StructuralReport,
};
use piecewise_market::openmarket::{
    assemble_top_m_numeraire, censored_rates, rank_process, RankPath,
};
use piecewise_market::portfolio::{wealth_of_portfolio, Portfolio};
use piecewise_market::scenario::{Battery, PathContext, Scenario};
use piecewise_market::ustate::{TimeGrid, UPath};
use piecewise_market::Error;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::out::Out;
use crate::{Common, Failure, Outcome};

/// Paths that get per-path series and reports.
const PLOTTED: usize = 16;
/// Paths simulated at once while streaming an ensemble to disk.
const CHUNK: usize = 256;

fn simulate_range(
    scn: &Scenario,
    grid: &TimeGrid,
    ids: std::ops::Range<usize>,
) -> piecewise_market::Result<Vec<SimPath>> {
    ids.into_par_iter()
        .map(|id| simulate_path(&scn.model, grid, scn.seed, id))
        .collect()
}

#[derive(Serialize)]
struct WealthRow<'a> {
    path_id: usize,
    time: f64,
    candidate: &'a str,
    wealth: f64,
    relative_to_numeraire: f64,
}

fn wealth_rows<'a>(
    scn: &'a Scenario,
    sim: &SimPath,
    rows: &mut Vec<WealthRow<'a>>,
) -> piecewise_market::Result<()> {
    let r = return_process_for(&sim.prices, &sim.resets, sim.id)?;
    let rates = model_rates(sim);
    let ranks = rank_process(&sim.prices);
    let ctx = PathContext {
        path: sim,
        rates: &rates,
        ranks: &ranks,
        top_m: scn.top_m,
    };
    let xr = wealth_of_portfolio(&Portfolio::new(assemble_numeraire(&rates)?)?, &r)?.values;
    let times = sim.grid().times();
    let mut push = |name: &'a str, x: &[f64]| {
        for (j, (&w, &n)) in x.iter().zip(&xr).enumerate() {
            rows.push(WealthRow {
                path_id: sim.id,
                time: times[j],
                candidate: name,
                wealth: w,
                relative_to_numeraire: w / n,
            });
        }
    };
    push("numeraire", &xr);
    for p in &scn.portfolios {
        // A ruined candidate simply has no series on this path.
        if let Ok(w) = wealth_of_portfolio(&p.rule.weights(&ctx)?, &r) {
            push(&p.name, &w.values);
        }
    }
    Ok(())
}

pub fn simulate(scn: &Scenario, out: &mut Out) -> Outcome {
    let grid = scn.grid.grid()?;
    out.stream("ensemble.csv", |w| {
        let mut start = 0;
        let mut first = true;
        while start < scn.paths {
            let end = (start + CHUNK).min(scn.paths);
            let sims = simulate_range(scn, &grid, start..end)?;
            let refs: Vec<(usize, &UPath)> = sims.iter().map(|s| (s.id, &s.prices)).collect();
            // Only the first chunk carries the header.
            let mut buf = Vec::new();
            write_ensemble_csv(&mut buf, &refs)?;
            let body = if first {
                &buf[..]
            } else {
                let nl = buf.iter().position(|b| *b == b'\n').map_or(0, |i| i + 1);
                &buf[nl..]
            };
            w.write_all(body)?;
            first = false;
            start = end;
        }
        Ok(())
    })?;
    out.json(
        "manifest.json",
        &Manifest {
            grid: grid.clone(),
            seed: scn.seed,
            model_id: scn.name.clone(),
            paths: scn.paths,
        },
    )?;
    let sims = simulate_range(scn, &grid, 0..scn.paths.min(PLOTTED))?;
    let mut rows = Vec::new();
    for s in &sims {
        wealth_rows(scn, s, &mut rows)?;
    }
    out.csv("wealth.csv", &rows)?;
    Ok(true)
}

/// Re-simulates the ensemble's paths from its manifest and checks that the
/// file holds exactly those prices; model rates are not stored in the file.
fn ensemble_paths(scn: &Scenario, csv: &Path) -> Result<Vec<SimPath>, Failure> {
    let dir = csv.parent().unwrap_or(Path::new("."));
    let text = std::fs::read_to_string(dir.join("manifest.json")).map_err(|e| {
        Failure::Input(format!(
            "cannot read manifest.json next to the ensemble: {e}"
        ))
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(Error::from)?;
    if manifest.model_id != scn.name {
        return Err(Failure::Input(format!(
            "ensemble was made by scenario '{}', not '{}'",
            manifest.model_id, scn.name
        )));
    }
    let file = std::fs::File::open(csv)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", csv.display())))?;
    let paths = read_ensemble_csv(std::io::BufReader::new(file), &manifest.grid)?;
    paths
        .into_par_iter()
        .map(|(id, prices)| {
            let sim = simulate_path(&scn.model, &manifest.grid, manifest.seed, id)?;
            if sim.prices != prices {
                return Err(Error::Data(format!(
                    "path {id} does not match the scenario model under seed {}",
                    manifest.seed
                )));
            }
            Ok(sim)
        })
        .collect::<piecewise_market::Result<_>>()
        .map_err(Failure::from)
}

fn growth_value(g: &Growth) -> f64 {
    g.value().unwrap_or(f64::INFINITY)
}

#[derive(Serialize)]
struct WeightRow {
    path_id: usize,
    time: f64,
    epoch: usize,
    component: usize,
    weight: f64,
}

#[derive(Serialize)]
struct GrowthRow {
    path_id: usize,
    time: f64,
    cumulative_growth: f64,
}

#[derive(Serialize)]
struct PathReport {
    path_id: usize,
    report: StructuralReport,
}

pub fn numeraire(
    scn: &Scenario,
    common: &Common,
    ensemble: Option<&Path>,
    out: &mut Out,
) -> Outcome {
    let sims = match ensemble {
        Some(p) => ensemble_paths(scn, p)?,
        None => {
            let n = common.paths.unwrap_or(scn.paths.min(PLOTTED));
            simulate_range(scn, &scn.grid.grid()?, 0..n)?
        }
    };
    let mut reports = Vec::new();
    let mut weights = Vec::new();
    let mut growth = Vec::new();
    let mut pass = true;
    for sim in &sims {
        let rates = model_rates(sim);
        let rho = assemble_numeraire(&rates)?;
        let report = structural_residual(&rates, &rho)?;
        pass &= report.viable && report.numeraire_candidate;
        let times = sim.grid().times();
        for (j, w) in rho.steps.iter().enumerate() {
            for (i, &x) in w.iter().enumerate() {
                weights.push(WeightRow {
                    path_id: sim.id,
                    time: times[j],
                    epoch: sim.resets.epoch_of_step(j),
                    component: i,
                    weight: x,
                });
            }
        }
        for (j, g) in report.cumulative_growth.iter().enumerate() {
            growth.push(GrowthRow {
                path_id: sim.id,
                time: times[j],
                cumulative_growth: growth_value(g),
            });
        }
        reports.push(PathReport {
            path_id: sim.id,
            report,
        });
    }
    out.json("structural.json", &reports)?;
    out.csv("weights.csv", &weights)?;
    out.csv("growth.csv", &growth)?;
    Ok(pass)
}

#[derive(Serialize)]
struct FlatLine<'a> {
    battery: &'static str,
    diagnostic: &'a str,
    candidate: &'a str,
    checkpoint: Option<f64>,
    estimate: f64,
    se: f64,
    bound: f64,
    verdict: &'static str,
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn flat(report: &VerifyReport) -> Vec<FlatLine<'_>> {
    report
        .lines()
        .map(|l| FlatLine {
            battery: l.battery.name(),
            diagnostic: &l.diagnostic,
            candidate: &l.candidate,
            checkpoint: l.checkpoint,
            estimate: l.estimate,
            se: l.se,
            bound: l.bound,
            verdict: verdict(l.pass),
        })
        .collect()
}

fn print_table(results: &[BatteryResult]) {
    for b in results {
        println!("{:<18} {}", b.battery.name(), verdict(b.pass));
        for l in &b.lines {
            let cp = l.checkpoint.map(|t| format!("{t}")).unwrap_or_default();
            println!(
                "  {:<28} {:<20} {:>6} {:>14.6e} {:>12.4e} {:>14.6e} {}",
                l.diagnostic,
                l.candidate,
                cp,
                l.estimate,
                l.se,
                l.bound,
                verdict(l.pass)
            );
        }
        for (name, rep) in &b.pair_tests {
            println!(
                "  {:<28} {:<20} {:>6} worst margin {:.4e} (z = {:.3}) {}",
                "pairwise",
                name,
                "",
                rep.worst_margin,
                rep.z,
                verdict(rep.pass)
            );
        }
        for t in &b.tables {
            let order = t.order.map_or("-".to_string(), |o| format!("{o:.3}"));
            println!("  {:<28} order {order} {}", t.diagnostic, verdict(t.pass));
        }
    }
}

pub fn verify(scn: &Scenario, batteries: &[Battery], out: &mut Out) -> Outcome {
    let report = battery::verify(scn, batteries)?;
    out.json("battery.json", &report)?;
    out.csv("battery.csv", &flat(&report))?;
    print_table(&report.batteries);
    Ok(report.pass)
}

#[derive(Serialize)]
struct RankRow {
    path_id: usize,
    time: f64,
    asset: usize,
    price: f64,
    rank: usize,
}

fn censored_path(
    rates: &RatesPath,
    ranks: &RankPath,
    m: usize,
) -> piecewise_market::Result<RatesPath> {
    let steps = rates
        .steps
        .iter()
        .zip(&ranks.ranks)
        .map(|(st, u)| {
            let cr = censored_rates(st, u, m)?;
            Ok(RateStep {
                key: st.key,
                alpha: cr.alpha,
                c: cr.c,
                d_o: st.d_o,
            })
        })
        .collect::<piecewise_market::Result<_>>()?;
    Ok(RatesPath {
        grid: rates.grid.clone(),
        steps,
    })
}

pub fn open_market(scn: &Scenario, out: &mut Out) -> Outcome {
    let m = scn.top_m.ok_or_else(|| {
        Failure::Schema(piecewise_market::scenario::SchemaError {
            field: "top_m".into(),
            message: "open-market needs top_m (or --top-m)".into(),
        })
    })?;
    let grid = scn.grid.grid()?;
    let changes: Vec<usize> = (0..scn.paths)
        .into_par_iter()
        .map(|id| {
            simulate_path(&scn.model, &grid, scn.seed, id)
                .map(|s| rank_process(&s.prices).rank_changes())
        })
        .collect::<piecewise_market::Result<_>>()?;
    let total: usize = changes.iter().sum();
    let mut ranks_csv = Vec::new();
    let mut reports = Vec::new();
    let mut pass = true;
    for sim in simulate_range(scn, &grid, 0..scn.paths.min(PLOTTED))? {
        let rates = model_rates(&sim);
        let ranks = rank_process(&sim.prices);
        let rho = assemble_top_m_numeraire(&rates, &ranks, m)?;
        let report = structural_residual(&censored_path(&rates, &ranks, m)?, &rho)?;
        pass &= report.viable && report.numeraire_candidate;
        reports.push(PathReport {
            path_id: sim.id,
            report,
        });
        let times = grid.times();
        for (j, u) in ranks.ranks.iter().enumerate() {
            for (i, &rank) in u.iter().enumerate() {
                ranks_csv.push(RankRow {
                    path_id: sim.id,
                    time: times[j],
                    asset: i,
                    price: sim.prices.right(j)[i],
                    rank,
                });
            }
        }
    }
    let report = battery::verify(scn, &[Battery::OpenMarket])?;
    pass &= report.pass;
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in &changes {
        *counts.entry(c).or_default() += 1;
    }
    let histogram: Vec<Value> = counts
        .into_iter()
        .map(|(changes, paths)| json!({"rank_changes": changes, "paths": paths}))
        .collect();
    out.json(
        "open_market.json",
        &json!({
            "m": m,
            "paths": scn.paths,
            "turnover": {
                "mean_rank_changes": total as f64 / scn.paths as f64,
                "max_rank_changes": changes.iter().copied().max().unwrap_or(0),
                "histogram": histogram,
            },
            "censored_structural": reports,
            "battery": report.batteries,
            "pass": pass,
        }),
    )?;
    out.csv("ranks.csv", &ranks_csv)?;
    out.csv("battery.csv", &flat(&report))?;
    print_table(&report.batteries);
    Ok(pass)
}

#[derive(Serialize)]
struct RefineRow<'a> {
    diagnostic: &'a str,
    dt: f64,
    error: f64,
    order: Option<f64>,
    verdict: &'static str,
}

pub fn refine(scn: &Scenario, out: &mut Out) -> Outcome {
    let spec = scn.refinement.as_ref().ok_or_else(|| {
        Failure::Schema(piecewise_market::scenario::SchemaError {
            field: "refinement".into(),
            message: "refine needs a refinement block".into(),
        })
    })?;
    let tables = refinement_study(&scn.model, scn.grid.horizon, spec, scn.seed)?;
    let rows: Vec<RefineRow> = tables
        .iter()
        .flat_map(|t| {
            t.dts
                .iter()
                .zip(&t.errors)
                .map(move |(&dt, &error)| RefineRow {
                    diagnostic: &t.diagnostic,
                    dt,
                    error,
                    order: t.order,
                    verdict: verdict(t.pass),
                })
        })
        .collect();
    for t in &tables {
        let order = t.order.map_or("-".to_string(), |o| format!("{o:.3}"));
        println!("{:<28} order {order:>6} {}", t.diagnostic, verdict(t.pass));
    }
    out.json("refinement.json", &tables)?;
    out.csv("refinement.csv", &rows)?;
    Ok(tables.iter().all(|t| t.pass))
}
