use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use super::model::{psd_factor, AssetParams, EventKind, ExitRule, MarketModel, PriceLaw, Stepping};
use crate::error::{Error, Result};
use crate::ustate::{minimal_reset_sequence, ResetSequence, TimeGrid, UPath};

/// Random streams of one path. Path `id` with master seed `seed` uses the
/// ChaCha8 generator seeded by `seed` on stream `4 * id + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Diffusion = 0,
    Events = 1,
    Jumps = 2,
    /// Reserved for drivers outside the market, e.g. orthogonal deflators.
    Auxiliary = 3,
}

pub fn path_rng(seed: u64, id: usize, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(4 * id as u64 + stream as u64);
    rng
}

/// One simulated path with the model rates seen on each step.
#[derive(Debug, Clone, PartialEq)]
pub struct SimPath {
    pub id: usize,
    pub prices: UPath,
    pub resets: ResetSequence,
    /// Drift rate `a(t_j, S(t_j+))` used on step `(t_j, t_{j+1}]`.
    pub drift: Vec<Vec<f64>>,
    /// Covariance rate used on step `(t_j, t_{j+1}]`.
    pub cov: Vec<DMatrix<f64>>,
}

impl SimPath {
    pub fn grid(&self) -> &TimeGrid {
        self.prices.grid()
    }
}

fn scheduled_by_index(
    model: &MarketModel,
    grid: &TimeGrid,
) -> Result<HashMap<usize, Vec<EventKind>>> {
    let mut out: HashMap<usize, Vec<EventKind>> = HashMap::new();
    for ev in &model.events.scheduled {
        let j = grid.index_of(ev.time).ok_or_else(|| {
            Error::Model(format!(
                "scheduled event time {} is not a grid time",
                ev.time
            ))
        })?;
        if j == 0 {
            return Err(Error::Model("events cannot be scheduled at t = 0".into()));
        }
        out.entry(j).or_default().push(ev.kind);
    }
    Ok(out)
}

fn argmax_first(s: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in s.iter().enumerate() {
        if v > s[best] {
            best = i;
        }
    }
    best
}

fn argmin_first(s: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in s.iter().enumerate() {
        if v < s[best] {
            best = i;
        }
    }
    best
}

/// Applies one event; survivors keep their relative order.
fn apply_event(
    model: &MarketModel,
    kind: EventKind,
    prices: &mut Vec<f64>,
    params: &mut Vec<AssetParams>,
    rng: &mut ChaCha8Rng,
) {
    let n = prices.len();
    let ev = &model.events;
    match kind {
        EventKind::Entry => {
            if n >= ev.max_dim {
                return;
            }
            let Some(ipo) = &ev.ipo else { return };
            let price = match ipo.price {
                PriceLaw::Fixed { value } => value,
                PriceLaw::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
                PriceLaw::MeanFraction { fraction } => {
                    fraction * prices.iter().sum::<f64>() / n as f64
                }
            };
            prices.push(price);
            params.push(AssetParams {
                drift: ipo.drift,
                vol: ipo.vol,
                level: price,
            });
        }
        EventKind::Exit => {
            if n <= 1 {
                return;
            }
            let i = match ev.exit_rule {
                ExitRule::Uniform => rng.random_range(0..n),
                ExitRule::Smallest => argmin_first(prices),
            };
            prices.remove(i);
            params.remove(i);
        }
        EventKind::Split => {
            if n >= ev.max_dim {
                return;
            }
            let i = argmax_first(prices);
            let u = 0.3 + 0.4 * rng.random::<f64>();
            let s = prices[i];
            prices[i] = u * s;
            prices.insert(i + 1, (1.0 - u) * s);
            let p = params[i];
            params.insert(i + 1, p);
        }
        EventKind::Merge => {
            if n < 2 {
                return;
            }
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            let (i, j) = (a.min(b), a.max(b));
            if prices[j] > prices[i] {
                params[i] = params[j];
            }
            prices[i] += prices[j];
            prices.remove(j);
            params.remove(j);
        }
    }
}

/// Simulates one path with standard normal marks drawn by `normals(j, n)`
/// for step `j` in dimension `n`. Events and jumps use the path's own
/// streams, so two calls with the same marks produce the same path.
pub fn simulate_path_with(
    model: &MarketModel,
    grid: &TimeGrid,
    seed: u64,
    id: usize,
    normals: &mut dyn FnMut(usize, usize) -> Vec<f64>,
) -> Result<SimPath> {
    model.validate()?;
    let scheduled = scheduled_by_index(model, grid)?;
    let mut ev_rng = path_rng(seed, id, Stream::Events);
    let mut jump_rng = path_rng(seed, id, Stream::Jumps);
    let steps = grid.steps();

    let mut s = model.initial_prices();
    let mut params = model.initial_params();
    let mut values = Vec::with_capacity(steps + 1);
    let mut post = BTreeMap::new();
    let mut drift = Vec::with_capacity(steps);
    let mut cov = Vec::with_capacity(steps);
    values.push(s.clone());

    let mut diff_cov = model.diffusion_cov(&params);
    let mut factor = psd_factor(&diff_cov)?;
    let mut total_cov = model.cov(&params);
    psd_factor(&total_cov)?;

    for j in 0..steps {
        let dt = grid.dt(j);
        let sq = dt.sqrt();
        let a_cont = model.diffusion_drift(&params, &s);
        drift.push(model.drift(&params, &s));
        cov.push(total_cov.clone());

        let xi = normals(j, s.len());
        if xi.len() != s.len() {
            return Err(Error::Dimension {
                context: format!("normal marks on step {j}"),
                expected: s.len(),
                found: xi.len(),
            });
        }
        let z = &factor * nalgebra::DVector::from_column_slice(&xi);
        let mut next: Vec<f64> = match model.stepping {
            Stepping::LogEuler => (0..s.len())
                .map(|i| s[i] * ((a_cont[i] - 0.5 * diff_cov[(i, i)]) * dt + z[i] * sq).exp())
                .collect(),
            Stepping::Arithmetic => (0..s.len())
                .map(|i| s[i] * (1.0 + a_cont[i] * dt + z[i] * sq))
                .collect(),
        };
        if let Some(js) = &model.jumps {
            if js.intensity > 0.0 {
                let pois = Poisson::new(js.intensity * dt)
                    .map_err(|e| Error::Model(format!("jump intensity: {e}")))?;
                for x in next.iter_mut() {
                    let count: f64 = pois.sample(&mut jump_rng);
                    for _ in 0..count as u64 {
                        *x *= 1.0 + js.low + (js.high - js.low) * jump_rng.random::<f64>();
                    }
                }
            }
        }
        for (i, &x) in next.iter().enumerate() {
            if !(x > 0.0) || !x.is_finite() {
                return Err(Error::NonPositivePrice {
                    path: id,
                    index: j + 1,
                    component: i,
                    value: x,
                });
            }
        }
        values.push(next.clone());
        s = next;

        let t = j + 1;
        let mut kinds: Vec<EventKind> = scheduled.get(&t).cloned().unwrap_or_default();
        let rates = &model.events.rates;
        for (kind, rate) in [
            (EventKind::Entry, rates.entry),
            (EventKind::Exit, rates.exit),
            (EventKind::Split, rates.split),
            (EventKind::Merge, rates.merge),
        ] {
            if rate > 0.0 && ev_rng.random::<f64>() < 1.0 - (-rate * dt).exp() {
                kinds.push(kind);
            }
        }
        if !kinds.is_empty() {
            let mut ns = s.clone();
            for kind in kinds {
                apply_event(model, kind, &mut ns, &mut params, &mut ev_rng);
            }
            if ns != s {
                post.insert(t, ns.clone());
                s = ns;
            }
            diff_cov = model.diffusion_cov(&params);
            factor = psd_factor(&diff_cov)?;
            total_cov = model.cov(&params);
            psd_factor(&total_cov)?;
        }
    }
    let prices = UPath::new(grid.clone(), values, post)?;
    let resets = minimal_reset_sequence(&prices);
    Ok(SimPath {
        id,
        prices,
        resets,
        drift,
        cov,
    })
}

/// Simulates path `id` using its own diffusion stream.
pub fn simulate_path(
    model: &MarketModel,
    grid: &TimeGrid,
    seed: u64,
    id: usize,
) -> Result<SimPath> {
    let mut rng = path_rng(seed, id, Stream::Diffusion);
    simulate_path_with(model, grid, seed, id, &mut |_, n| {
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    })
}

/// Simulates paths `0..n_paths` in parallel; the result does not depend on
/// the number of threads.
pub fn simulate_paths(
    model: &MarketModel,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<SimPath>> {
    if n_paths == 0 {
        return Err(Error::Input("n_paths must be >= 1".into()));
    }
    (0..n_paths)
        .into_par_iter()
        .map(|id| simulate_path(model, grid, seed, id))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::model::{EventSpec, IpoLaw, ScheduledEvent};

    #[test]
    fn zero_vol_zero_drift_is_constant() {
        let m = MarketModel::gbm(&[1.0, 2.0], &[0.0, 0.0], &[0.0, 0.0], 0.0);
        let g = TimeGrid::uniform(1.0, 16).unwrap();
        let p = simulate_path(&m, &g, 7, 0).unwrap();
        for j in 0..g.len() {
            assert_eq!(p.prices.value(j), &[1.0, 2.0]);
        }
        assert_eq!(p.resets.taus(), &[0]);
    }

    #[test]
    fn deterministic_given_seed() {
        let mut m = MarketModel::gbm(&[1.0, 2.0], &[0.1, 0.0], &[0.2, 0.3], 0.2);
        m.events.rates.split = 1.0;
        m.events.rates.exit = 1.0;
        let g = TimeGrid::uniform(1.0, 32).unwrap();
        let a = simulate_paths(&m, &g, 20, 11).unwrap();
        let b = simulate_paths(&m, &g, 20, 11).unwrap();
        assert_eq!(a, b);
        let c = simulate_paths(&m, &g, 20, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn scheduled_entry_resets_dimension() {
        let mut m = MarketModel::gbm(&[1.0, 2.0], &[0.1, 0.0], &[0.2, 0.3], 0.0);
        m.events = EventSpec {
            scheduled: vec![ScheduledEvent {
                time: 0.5,
                kind: EventKind::Entry,
            }],
            ipo: Some(IpoLaw {
                price: PriceLaw::Fixed { value: 0.7 },
                drift: 0.0,
                vol: 0.1,
            }),
            ..EventSpec::default()
        };
        let g = TimeGrid::uniform(1.0, 8).unwrap();
        let p = simulate_path(&m, &g, 3, 0).unwrap();
        assert_eq!(p.resets.taus(), &[0, 4]);
        let pre = p.prices.value(4);
        let post = p.prices.right(4);
        assert_eq!(&post[..2], pre);
        assert_eq!(post[2], 0.7);
        assert_eq!(p.prices.value(5).len(), 3);
        assert_eq!(p.cov[4].nrows(), 3);
    }

    #[test]
    fn events_preserve_survivor_prices() {
        let mut m = MarketModel::gbm(&[3.0, 1.0, 2.0], &[0.0; 3], &[0.2; 3], 0.0);
        m.events.rates.split = 2.0;
        m.events.rates.merge = 2.0;
        m.events.rates.exit = 2.0;
        let g = TimeGrid::uniform(2.0, 64).unwrap();
        let paths = simulate_paths(&m, &g, 30, 5).unwrap();
        let mut any = false;
        for p in &paths {
            for &t in p.resets.taus().iter().skip(1) {
                any = true;
                let pre = p.prices.value(t);
                let post = p.prices.right(t);
                assert!(!post.is_empty());
                let total_pre: f64 = pre.iter().sum();
                let total_post: f64 = post.iter().sum();
                // splits and mergers conserve capitalization, exits remove one asset
                assert!(total_post <= total_pre * (1.0 + 1e-12));
            }
        }
        assert!(any);
    }

    #[test]
    fn exit_smallest_removes_minimum() {
        let mut m = MarketModel::gbm(&[3.0, 1.0, 2.0], &[0.0; 3], &[0.0; 3], 0.0);
        m.events.exit_rule = ExitRule::Smallest;
        m.events.scheduled.push(ScheduledEvent {
            time: 0.5,
            kind: EventKind::Exit,
        });
        let g = TimeGrid::uniform(1.0, 2).unwrap();
        let p = simulate_path(&m, &g, 0, 0).unwrap();
        assert_eq!(p.prices.right(1), &[3.0, 2.0]);
    }

    #[test]
    fn arithmetic_stepping_reports_nonpositive_prices() {
        let mut m = MarketModel::gbm(&[1.0], &[0.0], &[5.0], 0.0);
        m.stepping = Stepping::Arithmetic;
        let g = TimeGrid::uniform(10.0, 10).unwrap();
        let err = (0..50).find_map(|id| simulate_path(&m, &g, 1, id).err());
        assert!(matches!(err, Some(Error::NonPositivePrice { .. })));
    }
}
