//! Pseudo-inverse, the structural condition, the numéraire portfolio
//! `ρ = c†α`, growth rates, deflators and the log-optimality battery.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::RatesPath;
use crate::mcstats::{mean_with_se, Estimate};
use crate::ustate::{DissectionKey, Integrand, TimeGrid};

/// Eigenvalues below this fraction of the largest one count as zero.
pub const RANK_CUTOFF: f64 = 1e-10;

fn check_symmetric(c: &DMatrix<f64>) -> Result<()> {
    if !c.is_square() {
        return Err(Error::Input(format!(
            "matrix is {}x{}, not square",
            c.nrows(),
            c.ncols()
        )));
    }
    let scale = c.amax().max(1.0);
    for i in 0..c.nrows() {
        for j in 0..i {
            if (c[(i, j)] - c[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::Input(format!(
                    "matrix is not symmetric at ({i},{j}): {} vs {}",
                    c[(i, j)],
                    c[(j, i)]
                )));
            }
        }
    }
    Ok(())
}

/// Moore–Penrose pseudo-inverse of a symmetric PSD matrix.
pub fn pseudo_inverse(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(c)?;
    let n = c.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let sym = (c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, x| m.max(*x));
    let mut out = DMatrix::zeros(n, n);
    if lmax <= 0.0 {
        return Ok(out);
    }
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > RANK_CUTOFF * lmax {
            let q = eig.eigenvectors.column(k);
            out += q * q.transpose() / lam;
        }
    }
    Ok(out)
}

/// The limit form `(c + id/m)^{-2} c`, which tends to `c†` as `m → ∞`.
pub fn pseudo_inverse_limit(c: &DMatrix<f64>, m: f64) -> Result<DMatrix<f64>> {
    check_symmetric(c)?;
    let n = c.nrows();
    let shifted = c + DMatrix::identity(n, n) / m;
    let inv = shifted
        .try_inverse()
        .ok_or_else(|| Error::Input("c + id/m is singular".into()))?;
    Ok(&inv * &inv * c)
}

/// `α ∈ range(c)`, tested as `‖c c† α − α‖ <= 1e-8 (1 + ‖α‖)`.
pub fn in_range(c: &DMatrix<f64>, c_dag: &DMatrix<f64>, alpha: &DVector<f64>) -> bool {
    (c * (c_dag * alpha) - alpha).norm() <= 1e-8 * (1.0 + alpha.norm())
}

/// Growth rate with `∞` as a tag rather than a float.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Growth {
    Finite(f64),
    Infinite,
}

impl Growth {
    pub fn is_finite(&self) -> bool {
        matches!(self, Growth::Finite(_))
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Growth::Finite(v) => Some(*v),
            Growth::Infinite => None,
        }
    }

    pub fn scale(self, w: f64) -> Growth {
        match self {
            Growth::Finite(a) => Growth::Finite(a * w),
            // a zero clock increment contributes nothing even at an infinite rate
            Growth::Infinite if w == 0.0 => Growth::Finite(0.0),
            Growth::Infinite => Growth::Infinite,
        }
    }
}

impl std::ops::Add for Growth {
    type Output = Growth;

    fn add(self, other: Growth) -> Growth {
        match (self, other) {
            (Growth::Finite(a), Growth::Finite(b)) => Growth::Finite(a + b),
            _ => Growth::Infinite,
        }
    }
}

/// Numéraire weights of one dissected step with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct NumeraireStep {
    pub rho: DVector<f64>,
    pub in_range: bool,
    /// `‖c ρ − α‖`.
    pub residual: f64,
    pub growth: Growth,
    /// Arbitrage direction with `c φ = 0`, `φᵀα = 1` when `α ∉ range(c)`.
    pub phi: Option<DVector<f64>>,
}

pub fn numeraire_dissection(alpha: &DVector<f64>, c: &DMatrix<f64>) -> Result<NumeraireStep> {
    if alpha.len() != c.nrows() {
        return Err(Error::Dimension {
            context: "drift rate against covariation rate".into(),
            expected: c.nrows(),
            found: alpha.len(),
        });
    }
    let c_dag = pseudo_inverse(c)?;
    let rho = &c_dag * alpha;
    let residual = (c * &rho - alpha).norm();
    if in_range(c, &c_dag, alpha) {
        let g = 0.5 * alpha.dot(&rho);
        Ok(NumeraireStep {
            rho,
            in_range: true,
            residual,
            growth: Growth::Finite(g),
            phi: None,
        })
    } else {
        let proj = alpha - c * (&c_dag * alpha);
        let phi = &proj / proj.norm_squared();
        Ok(NumeraireStep {
            rho,
            in_range: false,
            residual,
            growth: Growth::Infinite,
            phi: Some(phi),
        })
    }
}

/// Local growth rate `γ_π = αᵀπ − ½ πᵀ c π`.
pub fn growth_rate(pi: &DVector<f64>, alpha: &DVector<f64>, c: &DMatrix<f64>) -> f64 {
    alpha.dot(pi) - 0.5 * (pi.transpose() * c * pi)[(0, 0)]
}

/// Numéraire weights `ρ(t_j) = c†α` on every step, refusing non-viable steps.
pub fn assemble_numeraire(rates: &RatesPath) -> Result<Integrand> {
    let n0 = rates.steps.first().map_or(0, |s| s.key.n);
    let mut steps: Vec<Vec<f64>> = Vec::with_capacity(rates.steps.len());
    for (j, st) in rates.steps.iter().enumerate() {
        // rates are often constant over an epoch; reuse the last solve then
        if j > 0 && rates.steps[j - 1].alpha == st.alpha && rates.steps[j - 1].c == st.c {
            steps.push(steps[j - 1].clone());
            continue;
        }
        let ns = numeraire_dissection(&st.alpha, &st.c)?;
        if !ns.in_range {
            return Err(Error::NonViable {
                key: st.key,
                step: j,
                phi: ns.phi.unwrap().iter().copied().collect(),
            });
        }
        steps.push(ns.rho.iter().copied().collect());
    }
    Ok(Integrand::new(vec![0.0; n0], steps))
}

/// `γ_π` on every step.
pub fn growth_rates(pi: &Integrand, rates: &RatesPath) -> Result<Vec<f64>> {
    rates
        .steps
        .iter()
        .enumerate()
        .map(|(j, st)| {
            let w = pi
                .steps
                .get(j)
                .ok_or_else(|| Error::Structure(format!("portfolio has no step {j}")))?;
            if w.len() != st.key.n {
                return Err(Error::Dimension {
                    context: format!("portfolio on step {j}"),
                    expected: st.key.n,
                    found: w.len(),
                });
            }
            Ok(growth_rate(
                &DVector::from_column_slice(w),
                &st.alpha,
                &st.c,
            ))
        })
        .collect()
}

/// Maximal growth rate `g` on every step.
pub fn max_growth(rates: &RatesPath) -> Result<Vec<Growth>> {
    rates
        .steps
        .iter()
        .map(|st| numeraire_dissection(&st.alpha, &st.c).map(|s| s.growth))
        .collect()
}

/// `G(t_j) = Σ_{i<j} g_i ΔO_i` with `∞` propagation; `G(0) = 0`.
pub fn cumulative_growth(g: &[Growth], rates: &RatesPath) -> Vec<Growth> {
    let mut out = vec![Growth::Finite(0.0)];
    let mut acc = Growth::Finite(0.0);
    for (gi, st) in g.iter().zip(&rates.steps) {
        acc = acc + gi.scale(st.d_o);
        out.push(acc);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralStep {
    pub key: DissectionKey,
    pub in_range: bool,
    /// `‖c ρ − α‖` for the supplied `ρ`.
    pub residual: f64,
    pub growth: Growth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralReport {
    pub steps: Vec<StructuralStep>,
    /// `sup_t max_i |A^{k,n}_i − C^{k,n}_{iρ}|` per dissection.
    #[serde(with = "keyed")]
    pub integrated: BTreeMap<DissectionKey, f64>,
    pub cumulative_growth: Vec<Growth>,
    pub viable: bool,
    /// All residuals below `1e-8`.
    pub numeraire_candidate: bool,
}

/// JSON objects need string keys, so per-dissection maps are written as
/// lists of `{k, n, value}`.
mod keyed {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::ustate::DissectionKey;

    #[derive(Serialize, Deserialize)]
    struct Entry {
        k: usize,
        n: usize,
        value: f64,
    }

    pub fn serialize<S: Serializer>(
        m: &BTreeMap<DissectionKey, f64>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let v: Vec<Entry> = m
            .iter()
            .map(|(key, &value)| Entry {
                k: key.k,
                n: key.n,
                value,
            })
            .collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<DissectionKey, f64>, D::Error> {
        let v = Vec::<Entry>::deserialize(d)?;
        Ok(v.into_iter()
            .map(|e| (DissectionKey { k: e.k, n: e.n }, e.value))
            .collect())
    }
}

pub fn structural_residual(rates: &RatesPath, rho: &Integrand) -> Result<StructuralReport> {
    let mut steps = Vec::with_capacity(rates.steps.len());
    let mut integrated: BTreeMap<DissectionKey, f64> = BTreeMap::new();
    let mut running: BTreeMap<DissectionKey, DVector<f64>> = BTreeMap::new();
    let mut growth = Vec::with_capacity(rates.steps.len());
    for (j, st) in rates.steps.iter().enumerate() {
        let w = rho
            .steps
            .get(j)
            .ok_or_else(|| Error::Structure(format!("portfolio has no step {j}")))?;
        if w.len() != st.key.n {
            return Err(Error::Dimension {
                context: format!("portfolio on step {j}"),
                expected: st.key.n,
                found: w.len(),
            });
        }
        let r = DVector::from_column_slice(w);
        let gap = &st.c * &r - &st.alpha;
        let ns = numeraire_dissection(&st.alpha, &st.c)?;
        let acc = running
            .entry(st.key)
            .or_insert_with(|| DVector::zeros(st.key.n));
        *acc -= &gap * st.d_o;
        let sup = integrated.entry(st.key).or_insert(0.0);
        *sup = sup.max(acc.amax());
        growth.push(ns.growth);
        steps.push(StructuralStep {
            key: st.key,
            in_range: ns.in_range,
            residual: gap.norm(),
            growth: ns.growth,
        });
    }
    let viable = steps.iter().all(|s| s.in_range);
    let numeraire_candidate =
        steps.iter().all(|s| s.residual <= 1e-8) && integrated.values().all(|v| *v <= 1e-8);
    Ok(StructuralReport {
        cumulative_growth: cumulative_growth(&growth, rates),
        steps,
        integrated,
        viable,
        numeraire_candidate,
    })
}

/// Generator of the orthogonal factor `L` in `Y = ℰ(L)/X_ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LSpec {
    /// `L = 0`, so `Y = 1/X_ρ`.
    #[default]
    None,
    /// `ΔL = exp(σ √Δt ζ − σ²Δt/2) − 1` with `ζ` independent of the market.
    Independent { vol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeflatorTag {
    ReciprocalNumeraire,
    OrthogonalProduct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeflatorPath {
    pub values: Vec<f64>,
    pub tag: DeflatorTag,
}

/// `Y = Π(1 + ΔL) / X_ρ` for given increments of `L`.
pub fn deflator_from_increments(x_rho: &[f64], dl: &[f64]) -> Result<DeflatorPath> {
    if dl.len() + 1 != x_rho.len() {
        return Err(Error::Dimension {
            context: "orthogonal driver increments".into(),
            expected: x_rho.len().saturating_sub(1),
            found: dl.len(),
        });
    }
    let mut values = Vec::with_capacity(x_rho.len());
    let mut e = 1.0;
    for j in 0..x_rho.len() {
        if j > 0 {
            let d = dl[j - 1];
            if !(d > -1.0) {
                return Err(Error::DeflatorIncrement {
                    step: j - 1,
                    increment: d,
                });
            }
            e *= 1.0 + d;
        }
        let x = x_rho[j];
        if !(x > 0.0) {
            return Err(Error::WealthNonPositive {
                index: j,
                factor: x,
            });
        }
        values.push(e / x);
    }
    let tag = if dl.iter().all(|d| *d == 0.0) {
        DeflatorTag::ReciprocalNumeraire
    } else {
        DeflatorTag::OrthogonalProduct
    };
    Ok(DeflatorPath { values, tag })
}

/// Deflator built from `X_ρ` and an orthogonal driver sampled from `rng`.
pub fn deflator<R: Rng>(
    x_rho: &[f64],
    grid: &TimeGrid,
    spec: &LSpec,
    rng: &mut R,
) -> Result<DeflatorPath> {
    let dl: Vec<f64> = match *spec {
        LSpec::None => vec![0.0; grid.steps()],
        LSpec::Independent { vol } => (0..grid.steps())
            .map(|j| {
                let dt = grid.dt(j);
                let z: f64 = rng.sample(StandardNormal);
                (vol * dt.sqrt() * z - 0.5 * vol * vol * dt).exp() - 1.0
            })
            .collect(),
    };
    deflator_from_increments(x_rho, &dl)
}

/// One line of a battery: a candidate at a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryLine {
    pub diagnostic: String,
    pub candidate: String,
    pub estimate: Estimate,
    /// Largest value the estimate may take and still pass.
    pub bound: f64,
    pub pass: bool,
}

/// `E[log X^ρ_π(T)] <= z·SE` for each candidate and checkpoint.
/// `samples[c][k]` holds per-path values of `log X_π(T_k)/X_ρ(T_k)`.
pub fn log_optimality_battery(
    names: &[String],
    samples: &[Vec<Vec<f64>>],
    checkpoints: &[f64],
    z: f64,
) -> Result<Vec<BatteryLine>> {
    let mut out = Vec::new();
    for (name, per_cp) in names.iter().zip(samples) {
        for (&t, xs) in checkpoints.iter().zip(per_cp) {
            let est = mean_with_se(xs, t)?;
            let bound = z * est.se;
            out.push(BatteryLine {
                diagnostic: "log_optimality".into(),
                candidate: name.clone(),
                pass: est.mean <= bound,
                bound,
                estimate: est,
            });
        }
    }
    Ok(out)
}
