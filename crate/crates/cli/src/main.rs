//! `piecewise-market`: runs scenarios and tree checks, writes reports.
//!
//! Exit codes: 0 every selected check passed, 1 some check failed,
//! 2 invalid input (schema, flags, missing files), 3 engine error.

mod market;
mod out;
mod trees;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use piecewise_market::scenario::{Battery, Scenario, SchemaError};
use piecewise_market::Error;
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "piecewise-market", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Scenario file.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: the scenario's `out`, else `out/<name>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    paths: Option<usize>,
    #[arg(long, global = true)]
    dt: Option<f64>,
    #[arg(long = "top-m", global = true)]
    top_m: Option<usize>,
    /// Comma-separated battery names.
    #[arg(long, global = true, value_delimiter = ',')]
    battery: Vec<String>,
    /// Tree file (overrides the scenario's tree list).
    #[arg(long, global = true)]
    tree: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the ensemble and write it with wealth series.
    Simulate,
    /// Numéraire weights, structural reports and growth series.
    Numeraire {
        /// Use a previously written ensemble (with its manifest.json).
        #[arg(long)]
        ensemble: Option<PathBuf>,
    },
    /// Run the Monte Carlo batteries.
    Verify,
    /// Rank-censored market: top-m numéraire, ranks and turnover.
    OpenMarket,
    /// Exact checks on event trees.
    Tree {
        #[arg(value_enum)]
        check: TreeCheck,
    },
    /// Discretization errors under step halving.
    Refine,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeCheck {
    Viability,
    Decompose,
    Superhedge,
    Complete,
    Numeraire,
}

impl TreeCheck {
    fn name(self) -> &'static str {
        match self {
            TreeCheck::Viability => "viability",
            TreeCheck::Decompose => "decompose",
            TreeCheck::Superhedge => "superhedge",
            TreeCheck::Complete => "complete",
            TreeCheck::Numeraire => "numeraire",
        }
    }
}

/// Why a run stopped early.
#[derive(Debug)]
pub enum Failure {
    Schema(SchemaError),
    Input(String),
    Engine(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::Data(_) | Error::Input(_) => {
                Failure::Input(e.to_string())
            }
            e => Failure::Engine(e),
        }
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Schema(_) | Failure::Input(_) => 2,
            Failure::Engine(_) => 3,
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Failure::Schema(e) => {
                json!({"error": "schema", "field": e.field, "message": e.message})
            }
            Failure::Input(m) => json!({"error": "input", "message": m}),
            Failure::Engine(e) => json!({"error": "engine", "message": e.to_string()}),
        }
    }
}

pub type Outcome = Result<bool, Failure>;

/// A loaded scenario with the directory its relative paths start from.
pub struct Loaded {
    pub scenario: Scenario,
    pub base: PathBuf,
}

fn load_scenario(common: &Common, refine: bool) -> Result<Loaded, Failure> {
    let path = common
        .scenario
        .as_ref()
        .ok_or_else(|| Failure::Input("--scenario is required".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
    let mut v: Value = serde_json::from_str(&text).map_err(|e| {
        Failure::Schema(SchemaError {
            field: String::new(),
            message: e.to_string(),
        })
    })?;
    if let Some(obj) = v.as_object_mut() {
        if let Some(s) = common.seed {
            obj.insert("seed".into(), json!(s));
        }
        if let Some(p) = common.paths {
            obj.insert("paths".into(), json!(p));
            if refine {
                if let Some(r) = obj.get_mut("refinement").and_then(Value::as_object_mut) {
                    r.insert("paths".into(), json!(p));
                }
            }
        }
        if let Some(m) = common.top_m {
            obj.insert("top_m".into(), json!(m));
        }
        if let Some(dt) = common.dt {
            if let Some(g) = obj.get_mut("grid").and_then(Value::as_object_mut) {
                g.insert("dt".into(), json!(dt));
            }
        }
    }
    let scenario = Scenario::from_json(&v.to_string()).map_err(Failure::Schema)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { scenario, base })
}

/// Batteries from `--battery`, else the scenario's list, else the defaults.
fn batteries(common: &Common, scn: &Scenario) -> Result<Vec<Battery>, Failure> {
    if !common.battery.is_empty() {
        return common
            .battery
            .iter()
            .map(|b| {
                Battery::parse(b).map_err(|e| {
                    Failure::Schema(SchemaError {
                        field: "--battery".into(),
                        message: e.to_string(),
                    })
                })
            })
            .collect();
    }
    if !scn.batteries.is_empty() {
        return Ok(scn.batteries.clone());
    }
    let mut b = vec![
        Battery::Supermartingale,
        Battery::LogOptimality,
        Battery::ClockInvariance,
        Battery::Structural,
    ];
    if scn.top_m.is_some() {
        b.push(Battery::OpenMarket);
    }
    Ok(b)
}

fn out_dir(common: &Common, loaded: Option<&Loaded>, fallback: &str) -> PathBuf {
    if let Some(o) = &common.out {
        return o.clone();
    }
    if let Some(l) = loaded {
        if let Some(o) = &l.scenario.out {
            return l.base.join(o);
        }
        return PathBuf::from("out").join(&l.scenario.name);
    }
    PathBuf::from("out").join(fallback)
}

fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("PIECEWISE_MARKET_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        Failure::Input(format!(
            "PIECEWISE_MARKET_THREADS must be a positive integer, got '{v}'"
        ))
    })?;
    // Fails only if a pool already exists, which cannot happen here.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

fn run(cli: &Cli) -> Outcome {
    init_threads()?;
    let c = &cli.common;
    match &cli.command {
        Command::Tree { check } => {
            let loaded = match (&c.tree, &c.scenario) {
                (None, Some(_)) => Some(load_scenario(c, false)?),
                _ => None,
            };
            let files = trees::tree_files(c, loaded.as_ref())?;
            let mut o = out::Out::new(out_dir(c, loaded.as_ref(), "trees"), "tree");
            let pass = trees::run(*check, &files, &mut o)?;
            o.finish(pass)?;
            Ok(pass)
        }
        cmd => {
            let loaded = load_scenario(c, matches!(cmd, Command::Refine))?;
            let name = match cmd {
                Command::Simulate => "simulate",
                Command::Numeraire { .. } => "numeraire",
                Command::Verify => "verify",
                Command::OpenMarket => "open-market",
                Command::Refine => "refine",
                Command::Tree { .. } => unreachable!(),
            };
            let mut o = out::Out::new(out_dir(c, Some(&loaded), ""), name);
            let scn = &loaded.scenario;
            let pass = match cmd {
                Command::Simulate => market::simulate(scn, &mut o)?,
                Command::Numeraire { ensemble } => {
                    market::numeraire(scn, c, ensemble.as_deref(), &mut o)?
                }
                Command::Verify => market::verify(scn, &batteries(c, scn)?, &mut o)?,
                Command::OpenMarket => market::open_market(scn, &mut o)?,
                Command::Refine => market::refine(scn, &mut o)?,
                Command::Tree { .. } => unreachable!(),
            };
            o.finish(pass)?;
            Ok(pass)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.code())
        }
    }
}
