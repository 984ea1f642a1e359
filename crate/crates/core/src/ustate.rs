//! Paths with values in the union of all finite-dimensional real spaces.
//!
//! Every process lives on a shared [`TimeGrid`]. A [`UPath`] stores one
//! vector per grid time and, at reset times, a second "post-reset" vector
//! holding the right limit `X(t+)`. Between two consecutive resets the
//! dimension is constant, so each epoch is an ordinary fixed-dimension path
//! once it is cut out and re-based at zero ([`dissect_integrator`]).
//!
//! Integrands are predictable: the value used on the step `(t_j, t_{j+1}]`
//! is the record taken at `t_j` (after any reset at `t_j`), see [`Integrand`].

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the union of all `R^n`, or the isolated additive identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum UValue {
    Identity,
    Vector(Vec<f64>),
}

impl UValue {
    pub fn zeros(n: usize) -> Self {
        UValue::Vector(vec![0.0; n])
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            UValue::Identity => None,
            UValue::Vector(v) => Some(v.len()),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, UValue::Identity)
    }

    pub fn as_slice(&self) -> Option<&[f64]> {
        match self {
            UValue::Identity => None,
            UValue::Vector(v) => Some(v),
        }
    }

    /// `⊙ + x = x`; two vectors must share a dimension.
    pub fn add(&self, other: &UValue) -> Result<UValue> {
        match (self, other) {
            (UValue::Identity, x) | (x, UValue::Identity) => Ok(x.clone()),
            (UValue::Vector(a), UValue::Vector(b)) => {
                if a.len() != b.len() {
                    return Err(Error::Dimension {
                        context: "UValue addition".into(),
                        expected: a.len(),
                        found: b.len(),
                    });
                }
                Ok(UValue::Vector(
                    a.iter().zip(b).map(|(x, y)| x + y).collect(),
                ))
            }
        }
    }

    /// Componentwise product; `⊙` absorbs.
    pub fn mul(&self, other: &UValue) -> Result<UValue> {
        match (self, other) {
            (UValue::Identity, _) | (_, UValue::Identity) => Ok(UValue::Identity),
            (UValue::Vector(a), UValue::Vector(b)) => {
                if a.len() != b.len() {
                    return Err(Error::Dimension {
                        context: "UValue product".into(),
                        expected: a.len(),
                        found: b.len(),
                    });
                }
                Ok(UValue::Vector(
                    a.iter().zip(b).map(|(x, y)| x * y).collect(),
                ))
            }
        }
    }

    pub fn scale(&self, a: f64) -> UValue {
        match self {
            UValue::Identity => UValue::Identity,
            UValue::Vector(v) => UValue::Vector(v.iter().map(|x| a * x).collect()),
        }
    }

    /// The modified indicator: the value itself on the set, `⊙` off it.
    pub fn indicate(self, on: bool) -> UValue {
        if on {
            self
        } else {
            UValue::Identity
        }
    }
}

/// Strictly increasing grid times starting at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Grid("grid must contain at least t_0 = 0".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::Grid(format!("t_0 must be 0, found {}", times[0])));
        }
        for (j, w) in times.windows(2).enumerate() {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(Error::Grid(format!(
                    "times must be strictly increasing: t_{} = {}, t_{} = {}",
                    j,
                    w[0],
                    j + 1,
                    w[1]
                )));
            }
        }
        Ok(TimeGrid { times })
    }

    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Grid(format!(
                "uniform grid needs horizon > 0 and steps >= 1 (got {horizon}, {steps})"
            )));
        }
        let dt = horizon / steps as f64;
        let mut times: Vec<f64> = (0..=steps).map(|j| j as f64 * dt).collect();
        times[steps] = horizon;
        TimeGrid::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of grid points `J + 1`.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of steps `J`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Length of the step `(t_j, t_{j+1}]`.
    pub fn dt(&self, j: usize) -> f64 {
        self.times[j + 1] - self.times[j]
    }

    /// Grid index of time `t`, matching within a relative tolerance.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * self.horizon().max(1.0);
        let pos = self.times.partition_point(|&s| s < t - tol);
        (pos < self.times.len() && (self.times[pos] - t).abs() <= tol).then_some(pos)
    }
}

/// A path on a grid with explicit post-reset values.
#[derive(Debug, Clone, PartialEq)]
pub struct UPath {
    grid: TimeGrid,
    values: Vec<Vec<f64>>,
    post: BTreeMap<usize, Vec<f64>>,
}

impl UPath {
    /// `values[j]` is `X(t_j)`; `post[j]` is `X(t_j+)` where the path resets.
    /// The dimension of `values[j + 1]` must equal that of `X(t_j+)`.
    pub fn new(
        grid: TimeGrid,
        values: Vec<Vec<f64>>,
        post: BTreeMap<usize, Vec<f64>>,
    ) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Structure(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(&j) = post.keys().next() {
            if j == 0 {
                return Err(Error::Structure(
                    "a post-reset value at t_0 is not allowed".into(),
                ));
            }
        }
        if let Some(&j) = post.keys().next_back() {
            if j >= grid.len() {
                return Err(Error::Structure(format!(
                    "post-reset index {j} beyond the grid"
                )));
            }
        }
        if values[0].is_empty() {
            return Err(Error::Structure("initial dimension must be >= 1".into()));
        }
        for (j, v) in post.iter() {
            if v.is_empty() {
                return Err(Error::Structure(format!(
                    "empty post-reset vector at index {j}"
                )));
            }
        }
        let path = UPath { grid, values, post };
        for j in 1..path.values.len() {
            let expected = path.right(j - 1).len();
            let found = path.values[j].len();
            if expected != found {
                return Err(Error::Dimension {
                    context: format!("path value at grid index {j}"),
                    expected,
                    found,
                });
            }
        }
        Ok(path)
    }

    /// A path without resets.
    pub fn continuous(grid: TimeGrid, values: Vec<Vec<f64>>) -> Result<Self> {
        UPath::new(grid, values, BTreeMap::new())
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn value(&self, j: usize) -> &[f64] {
        &self.values[j]
    }

    /// `X(t_j+)`.
    pub fn right(&self, j: usize) -> &[f64] {
        self.post.get(&j).unwrap_or(&self.values[j])
    }

    pub fn post_values(&self) -> &BTreeMap<usize, Vec<f64>> {
        &self.post
    }

    pub fn has_post(&self, j: usize) -> bool {
        self.post.contains_key(&j)
    }

    /// Dimension process `N(t_j)`, constant on each `(τ_{k-1}, τ_k]`.
    pub fn dims(&self) -> Vec<usize> {
        self.values.iter().map(Vec::len).collect()
    }

    /// The path stopped at grid index `at`: `X(t ∧ t_at)`.
    pub fn stopped(&self, at: usize) -> UPath {
        let frozen = self.values[at].clone();
        let values = (0..self.values.len())
            .map(|j| {
                if j <= at {
                    self.values[j].clone()
                } else {
                    frozen.clone()
                }
            })
            .collect();
        let post = self
            .post
            .range(..at)
            .map(|(j, v)| (*j, v.clone()))
            .collect();
        UPath {
            grid: self.grid.clone(),
            values,
            post,
        }
    }

    /// Per-step vector increments `X(t_{j+1}) - X(t_j+)`.
    pub fn increments(&self) -> Vec<Vec<f64>> {
        (0..self.grid.steps())
            .map(|j| {
                self.values[j + 1]
                    .iter()
                    .zip(self.right(j))
                    .map(|(b, a)| b - a)
                    .collect()
            })
            .collect()
    }
}

/// Reset times as grid indices, `τ_0 = 0 <= τ_1 <= ...`; any `τ_k` past the
/// last stored one is `+∞`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResetSequence {
    taus: Vec<usize>,
}

impl ResetSequence {
    pub fn new(taus: Vec<usize>) -> Result<Self> {
        if taus.first() != Some(&0) {
            return Err(Error::Structure(
                "a reset sequence starts with τ_0 = 0".into(),
            ));
        }
        if taus.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Structure(format!(
                "reset sequence must be nondecreasing: {taus:?}"
            )));
        }
        Ok(ResetSequence { taus })
    }

    pub fn trivial() -> Self {
        ResetSequence { taus: vec![0] }
    }

    pub fn taus(&self) -> &[usize] {
        &self.taus
    }

    /// `τ_k`, or `None` for `+∞`.
    pub fn tau(&self, k: usize) -> Option<usize> {
        self.taus.get(k).copied()
    }

    /// Number of epochs with a finite start `τ_{k-1}`.
    pub fn epochs(&self) -> usize {
        self.taus.len()
    }

    /// Epoch `k` (1-based) containing the step `(t_j, t_{j+1}]`.
    pub fn epoch_of_step(&self, j: usize) -> usize {
        self.taus.partition_point(|&t| t <= j)
    }

    /// Epoch containing the grid time `t_j` as a point of `(τ_{k-1}, τ_k]`
    /// (`t_0` belongs to epoch 1).
    pub fn epoch_of_time(&self, j: usize) -> usize {
        if j == 0 {
            1
        } else {
            self.epoch_of_step(j - 1)
        }
    }

    /// Checks that this is a reset sequence of `x`: all finite resets lie on
    /// the grid and every discontinuity of `x` is one of them.
    pub fn validate_for(&self, x: &UPath) -> Result<()> {
        let last = x.grid().steps();
        if let Some(&t) = self.taus.last() {
            if t > last {
                return Err(Error::Structure(format!(
                    "reset index {t} beyond the grid end {last}"
                )));
            }
        }
        for j in minimal_reset_sequence(x).taus.into_iter().skip(1) {
            if self.taus.binary_search(&j).is_err() {
                return Err(Error::Structure(format!(
                    "path jumps at grid index {j} but the reset sequence {:?} does not contain it",
                    self.taus
                )));
            }
        }
        Ok(())
    }
}

/// Dissection index: epoch `k >= 1` and post-reset dimension `n >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DissectionKey {
    pub k: usize,
    pub n: usize,
}

impl DissectionKey {
    pub fn new(k: usize, n: usize) -> Self {
        DissectionKey { k, n }
    }
}

impl fmt::Display for DissectionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.k, self.n)
    }
}

/// Fewest resets: `τ_k` is the first grid time after `τ_{k-1}` where
/// `X(t+) != X(t)`.
pub fn minimal_reset_sequence(x: &UPath) -> ResetSequence {
    let mut taus = vec![0];
    for (&j, post) in x.post_values() {
        if post.as_slice() != x.value(j) {
            taus.push(j);
        }
    }
    ResetSequence { taus }
}

/// `true` iff `τ_{k-1} < ∞` and `N(τ_{k-1}+) = n`.
pub fn omega_membership(resets: &ResetSequence, x: &UPath, key: DissectionKey) -> bool {
    if key.k == 0 {
        return false;
    }
    match resets.tau(key.k - 1) {
        Some(t) if t < x.grid().len() => x.right(t).len() == key.n,
        _ => false,
    }
}

/// Dissection key of epoch `k` on this path, if the epoch starts.
pub fn epoch_key(resets: &ResetSequence, x: &UPath, k: usize) -> Option<DissectionKey> {
    let t = resets.tau(k - 1)?;
    (t < x.grid().len()).then(|| DissectionKey::new(k, x.right(t).len()))
}

/// A fixed-dimension path indexed by grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedDimPath {
    pub n: usize,
    pub values: Vec<Vec<f64>>,
}

impl FixedDimPath {
    pub fn zeros(n: usize, len: usize) -> Self {
        FixedDimPath {
            n,
            values: vec![vec![0.0; n]; len],
        }
    }

    pub fn value(&self, j: usize) -> &[f64] {
        &self.values[j]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().flatten().all(|v| *v == 0.0)
    }
}

/// Cuts `x` into its dissections `X^{k,n} = (X^{τ_k} - X(τ_{k-1}+))` on
/// `(τ_{k-1}, ∞)`, zero before. Only keys of epochs present on this path
/// are returned; every other `X^{k,n}` is identically zero.
pub fn dissect_integrator(
    x: &UPath,
    resets: &ResetSequence,
) -> Result<BTreeMap<DissectionKey, FixedDimPath>> {
    resets.validate_for(x)?;
    let len = x.grid().len();
    let last = len - 1;
    let mut out = BTreeMap::new();
    for k in 1..=resets.epochs() {
        let start = resets.tau(k - 1).unwrap();
        let end = resets.tau(k).unwrap_or(last).min(last);
        let base = x.right(start);
        let n = base.len();
        let mut path = FixedDimPath::zeros(n, len);
        for j in start + 1..=end {
            let v = x.value(j);
            if v.len() != n {
                return Err(Error::Dimension {
                    context: format!("epoch {k} at grid index {j}"),
                    expected: n,
                    found: v.len(),
                });
            }
            path.values[j] = v.iter().zip(base).map(|(a, b)| a - b).collect();
        }
        for j in end + 1..len {
            path.values[j] = path.values[end].clone();
        }
        out.insert(DissectionKey::new(k, n), path);
    }
    Ok(out)
}

/// A predictable process: an initial value `H_0` and, for each step
/// `(t_j, t_{j+1}]`, the value recorded at `t_j` (dimension `N(t_{j+1})`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Integrand {
    pub initial: Vec<f64>,
    pub steps: Vec<Vec<f64>>,
}

impl Integrand {
    pub fn new(initial: Vec<f64>, steps: Vec<Vec<f64>>) -> Self {
        Integrand { initial, steps }
    }

    /// The zero integrand matching the dimensions of `x`.
    pub fn zeros_like(x: &UPath) -> Self {
        Integrand {
            initial: vec![0.0; x.value(0).len()],
            steps: (1..x.grid().len())
                .map(|j| vec![0.0; x.value(j).len()])
                .collect(),
        }
    }

    /// Builds an integrand from a rule evaluated at every step.
    pub fn from_fn(x: &UPath, mut f: impl FnMut(usize, usize) -> Vec<f64>) -> Self {
        Integrand {
            initial: vec![0.0; x.value(0).len()],
            steps: (0..x.grid().steps())
                .map(|j| f(j, x.value(j + 1).len()))
                .collect(),
        }
    }

    /// Membership in `L_0`: `H_0 = 0^{(N_0)}`.
    pub fn in_l0(&self) -> bool {
        self.initial.iter().all(|v| *v == 0.0)
    }

    pub fn step(&self, j: usize) -> &[f64] {
        &self.steps[j]
    }

    pub fn check_dims(&self, x: &UPath) -> Result<()> {
        if self.initial.len() != x.value(0).len() {
            return Err(Error::Dimension {
                context: "integrand initial value".into(),
                expected: x.value(0).len(),
                found: self.initial.len(),
            });
        }
        if self.steps.len() != x.grid().steps() {
            return Err(Error::Structure(format!(
                "integrand has {} steps, grid has {}",
                self.steps.len(),
                x.grid().steps()
            )));
        }
        for (j, h) in self.steps.iter().enumerate() {
            let n = x.value(j + 1).len();
            if h.len() != n {
                return Err(Error::Dimension {
                    context: format!("integrand on step {j}"),
                    expected: n,
                    found: h.len(),
                });
            }
        }
        Ok(())
    }
}

/// One dissection `H^{(k,n)}` of an integrand, indexed by step.
#[derive(Debug, Clone, PartialEq)]
pub struct DissectedIntegrand {
    pub n: usize,
    pub steps: Vec<Vec<f64>>,
}

/// `H^{(k,n)} = H` on `(τ_{k-1}, τ_k] ∩ Ω^{k,n}`, `0^{(n)}` elsewhere.
pub fn dissect_integrand(
    h: &Integrand,
    x: &UPath,
    resets: &ResetSequence,
) -> Result<BTreeMap<DissectionKey, DissectedIntegrand>> {
    h.check_dims(x)?;
    resets.validate_for(x)?;
    let steps = x.grid().steps();
    let mut out = BTreeMap::new();
    for k in 1..=resets.epochs() {
        let start = resets.tau(k - 1).unwrap();
        let end = resets.tau(k).unwrap_or(steps).min(steps);
        let n = x.right(start).len();
        let mut d = DissectedIntegrand {
            n,
            steps: vec![vec![0.0; n]; steps],
        };
        for j in start..end {
            d.steps[j] = h.steps[j].clone();
        }
        out.insert(DissectionKey::new(k, n), d);
    }
    Ok(out)
}

/// `H·X = H_0ᵀX_0 + Σ_{k,n} H^{(k,n)}·X^{k,n}` on the grid. The jump of `X`
/// at a reset is never integrated.
pub fn piecewise_integral(h: &Integrand, x: &UPath, resets: &ResetSequence) -> Result<Vec<f64>> {
    let xs = dissect_integrator(x, resets)?;
    let hs = dissect_integrand(h, x, resets)?;
    let steps = x.grid().steps();
    let mut out = Vec::with_capacity(steps + 1);
    let mut acc: f64 = h.initial.iter().zip(x.value(0)).map(|(a, b)| a * b).sum();
    out.push(acc);
    for j in 0..steps {
        let mut inc = 0.0;
        for (key, xd) in &xs {
            let hd = &hs[key];
            let (a, b) = (&xd.values[j], &xd.values[j + 1]);
            inc += hd.steps[j]
                .iter()
                .zip(a.iter().zip(b))
                .map(|(hv, (x0, x1))| hv * (x1 - x0))
                .sum::<f64>();
        }
        acc += inc;
        out.push(acc);
    }
    Ok(out)
}
