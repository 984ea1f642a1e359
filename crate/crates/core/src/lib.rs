//! Simulation, growth-optimal portfolios and exact verification for equity
//! markets whose number of assets changes over time.
//!
//! Processes take values in the union of all `R^n`. Between two dimensional
//! changes ("resets") a path is an ordinary fixed-dimension path, and all
//! calculus is done on these pieces ([`ustate`]). On top of that sit market
//! simulation ([`market`]), portfolios and wealth ([`portfolio`]), the
//! numéraire portfolio ([`numeraire`]), rank-censored open markets
//! ([`openmarket`]), an exact finite event-tree engine ([`tree`]) and a
//! small Monte Carlo harness ([`mcstats`]).

// `!(x > 0.0)` and friends are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod battery;
pub mod error;
pub mod io;
pub mod market;
pub mod mcstats;
pub mod numeraire;
pub mod openmarket;
pub mod portfolio;
pub mod scenario;
pub mod tree;
pub mod ustate;

pub use error::{Error, Result};
