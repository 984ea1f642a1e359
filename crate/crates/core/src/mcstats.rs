//! Ensemble estimators, supermartingale tests and refinement orders.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Sample mean with its standard error at a checkpoint time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
    pub time: f64,
}

/// Pairwise summation; the result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Unbiased mean and `SE = sample std / √n`.
pub fn mean_with_se(samples: &[f64], time: f64) -> Result<Estimate> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 samples, got {n}")));
    }
    if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
        return Err(Error::Data(format!(
            "sample {i} is not finite: {}",
            samples[i]
        )));
    }
    let mean = pairwise_sum(samples) / n as f64;
    let sq: Vec<f64> = samples.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    Ok(Estimate {
        mean,
        se: (var / n as f64).sqrt(),
        n,
        time,
    })
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Critical value keeping the family-wise one-sided false-alarm rate of
/// `tests` tests at that of a single `level`-sigma test.
pub fn bonferroni_z(level: f64, tests: usize) -> f64 {
    let nrm = std_normal();
    let tail = 1.0 - nrm.cdf(level);
    nrm.inverse_cdf(1.0 - tail / tests.max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairLine {
    pub s: f64,
    pub t: f64,
    /// Quartile bucket of `X(s)`, `None` for the unconditional test.
    pub bucket: Option<usize>,
    /// Estimate of `E[X(t) − X(s)]` (within the bucket).
    pub estimate: Estimate,
    /// `mean − z·SE`; the test passes iff this is `<= 0`.
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupermartingaleReport {
    pub z: f64,
    pub lines: Vec<PairLine>,
    pub worst_margin: f64,
    pub pass: bool,
}

/// Tests `E[X(t)] <= E[X(s)]` for every ordered checkpoint pair, both
/// unconditionally and within four quantile buckets of `X(s)`, with a
/// Bonferroni-corrected `level`. `paths[p][k]` is `X` of path `p` at
/// checkpoint `k`.
pub fn supermartingale_test(
    paths: &[Vec<f64>],
    checkpoints: &[f64],
    level: f64,
) -> Result<SupermartingaleReport> {
    let k = checkpoints.len();
    if let Some(p) = paths.iter().position(|x| x.len() != k) {
        return Err(Error::Data(format!(
            "path {p} does not have {k} checkpoint values"
        )));
    }
    let pairs = k * k.saturating_sub(1) / 2;
    let z = bonferroni_z(level, pairs * 5);
    let mut lines = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            let diffs: Vec<f64> = paths.iter().map(|x| x[b] - x[a]).collect();
            let mut add = |bucket, d: &[f64]| -> Result<()> {
                if d.len() < 2 {
                    return Ok(());
                }
                let est = mean_with_se(d, checkpoints[b])?;
                let margin = est.mean - z * est.se;
                lines.push(PairLine {
                    s: checkpoints[a],
                    t: checkpoints[b],
                    bucket,
                    estimate: est,
                    margin,
                    pass: margin <= 0.0,
                });
                Ok(())
            };
            add(None, &diffs)?;
            let mut order: Vec<usize> = (0..paths.len()).collect();
            order.sort_by(|&i, &j| paths[i][a].total_cmp(&paths[j][a]).then(i.cmp(&j)));
            let m = order.len();
            for q in 0..4 {
                let chunk: Vec<f64> = order[q * m / 4..(q + 1) * m / 4]
                    .iter()
                    .map(|&i| diffs[i])
                    .collect();
                add(Some(q), &chunk)?;
            }
        }
    }
    let worst_margin = lines
        .iter()
        .map(|l| l.margin)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(SupermartingaleReport {
        z,
        pass: lines.iter().all(|l| l.pass),
        worst_margin: if lines.is_empty() { 0.0 } else { worst_margin },
        lines,
    })
}

/// Least-squares slope of `log error` against `log dt`.
pub fn empirical_order(dts: &[f64], errors: &[f64]) -> Option<f64> {
    if dts.len() < 2 || errors.iter().any(|e| !(*e > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Some(sxy / sxx)
}

/// Minimum accepted convergence order.
pub const MIN_ORDER: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementTable {
    pub diagnostic: String,
    pub dts: Vec<f64>,
    pub errors: Vec<f64>,
    pub order: Option<f64>,
    /// Every error is zero (to `1e-14`).
    pub exact: bool,
    pub pass: bool,
}

pub fn refinement_table(diagnostic: &str, dts: Vec<f64>, errors: Vec<f64>) -> RefinementTable {
    let exact = errors.iter().all(|e| e.abs() <= 1e-14);
    let order = empirical_order(&dts, &errors);
    RefinementTable {
        diagnostic: diagnostic.to_string(),
        pass: exact || order.is_some_and(|o| o >= MIN_ORDER),
        dts,
        errors,
        order,
        exact,
    }
}
