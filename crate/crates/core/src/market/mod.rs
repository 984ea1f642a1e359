//! Market models with dimensional events, path simulation, return
//! processes, the drift/martingale decomposition and local rates.

mod model;
mod returns;
mod simulate;

pub use model::{
    psd_factor, AssetParams, AssetSpec, Dynamics, EventKind, EventRates, EventSpec, ExitRule,
    IpoLaw, JumpSpec, MarketModel, PriceLaw, ScheduledEvent, Stepping,
};
pub(crate) use returns::dot;
pub use returns::{
    covariation, decompose_returns, integrability_report, local_rates, model_rates, return_process,
    return_process_for, step_keys, ClockMode, CovariationMode, DissectedDecomposition,
    Integrability, RateStep, RatesPath, ReturnDecomposition, ReturnPath,
};
pub use simulate::{path_rng, simulate_path, simulate_path_with, simulate_paths, SimPath, Stream};
