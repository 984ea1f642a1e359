//! Reference computations for the integration tests. None of them call the
//! library routine they are compared against.

#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use piecewise_market::tree::{fixtures, random, EventTree};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Q = BigRational;
pub type QMat = Vec<Vec<Q>>;

pub fn q(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn q_frac(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn q_identity(n: usize) -> QMat {
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { Q::one() } else { Q::zero() })
                .collect()
        })
        .collect()
}

pub fn q_mul(a: &QMat, b: &QMat) -> QMat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    (0..n)
        .map(|i| {
            (0..m)
                .map(|j| (0..k).fold(Q::zero(), |s, l| s + &a[i][l] * &b[l][j]))
                .collect()
        })
        .collect()
}

pub fn q_add(a: &QMat, b: &QMat) -> QMat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn q_transpose(a: &QMat) -> QMat {
    (0..a[0].len())
        .map(|j| (0..a.len()).map(|i| a[i][j].clone()).collect())
        .collect()
}

/// Exact inverse by Gauss–Jordan elimination.
pub fn q_inverse(a: &QMat) -> Option<QMat> {
    let n = a.len();
    let mut m: QMat = a
        .iter()
        .zip(q_identity(n))
        .map(|(r, e)| r.iter().cloned().chain(e).collect())
        .collect();
    for col in 0..n {
        let piv = (col..n).find(|&r| !m[r][col].is_zero())?;
        m.swap(col, piv);
        let inv = m[col][col].recip();
        for x in m[col].iter_mut() {
            *x = &*x * &inv;
        }
        for r in 0..n {
            if r != col && !m[r][col].is_zero() {
                let f = m[r][col].clone();
                let row = m[col].clone();
                for (x, y) in m[r].iter_mut().zip(row) {
                    *x = &*x - &f * y;
                }
            }
        }
    }
    Some(m.into_iter().map(|r| r[n..].to_vec()).collect())
}

pub fn q_to_f64(a: &QMat) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), a[0].len(), |i, j| a[i][j].to_f64().unwrap())
}

pub fn q_diag(d: &[Q]) -> QMat {
    let n = d.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { d[i].clone() } else { Q::zero() })
                .collect()
        })
        .collect()
}

/// A symmetric PSD rational matrix `U diag(λ) Uᵀ` with `U` exactly
/// orthogonal (Cayley transform of an integer skew matrix), together with
/// its exact pseudo-inverse `U diag(λ†) Uᵀ`.
pub struct RationalPsd {
    pub c: QMat,
    pub pinv: QMat,
    pub rank: usize,
}

pub fn rational_psd(rng: &mut impl Rng, n: usize, rank: usize) -> RationalPsd {
    let mut a = vec![vec![Q::zero(); n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = q(rng.random_range(-2..=2));
            a[j][i] = -v.clone();
            a[i][j] = v;
        }
    }
    let id = q_identity(n);
    let minus_a: QMat = a.iter().map(|r| r.iter().map(|x| -x).collect()).collect();
    let u = q_mul(
        &q_add(&id, &minus_a),
        &q_inverse(&q_add(&id, &a)).expect("I + skew is invertible"),
    );
    let lam: Vec<Q> = (0..n)
        .map(|i| {
            if i < rank {
                q_frac(rng.random_range(6..=40), 2)
            } else {
                Q::zero()
            }
        })
        .collect();
    let lam_dag: Vec<Q> = lam
        .iter()
        .map(|l| if l.is_zero() { Q::zero() } else { l.recip() })
        .collect();
    let ut = q_transpose(&u);
    RationalPsd {
        c: q_mul(&q_mul(&u, &q_diag(&lam)), &ut),
        pinv: q_mul(&q_mul(&u, &q_diag(&lam_dag)), &ut),
        rank,
    }
}

/// `(c + id/m)^{-2} c` in exact arithmetic.
pub fn q_limit_form(c: &QMat, m: i64) -> QMat {
    let n = c.len();
    let shift = q_diag(&vec![q_frac(1, m); n]);
    let inv = q_inverse(&q_add(c, &shift)).expect("c + id/m is positive definite");
    q_mul(&q_mul(&inv, &inv), c)
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Minimizes a convex function on `[lo, hi]` by golden-section search.
pub fn golden(mut lo: f64, mut hi: f64, iters: usize, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..iters {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        }
    }
    if fa <= fb {
        (a, fa)
    } else {
        (b, fb)
    }
}

/// `min_θ max_j (w_j − θ·ΔS_j)` by nested golden-section search (one or two
/// assets).
pub fn one_step_superhedge(ds: &[Vec<f64>], w: &[f64]) -> f64 {
    let f = |th: &[f64]| {
        ds.iter()
            .zip(w)
            .map(|(d, w)| w - d.iter().zip(th).map(|(a, b)| a * b).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let n = ds[0].len();
    let bound = 1e4;
    let iters = 120;
    match n {
        0 => f(&[]),
        1 => golden(-bound, bound, iters, |t| f(&[t])).1,
        2 => {
            golden(-bound, bound, iters, |t0| {
                golden(-bound, bound, iters, |t1| f(&[t0, t1])).1
            })
            .1
        }
        _ => panic!("oracle handles at most two assets"),
    }
}

/// Superhedging price of a withdrawal stream by backward induction with the
/// golden-section node oracle.
pub fn superhedge_oracle(tree: &EventTree, dk: &[f64]) -> f64 {
    let mut v = dk.to_vec();
    for d in (0..tree.horizon()).rev() {
        for &i in tree.at_depth(d) {
            let kids = &tree.node(i).children;
            let ds: Vec<Vec<f64>> = kids.iter().map(|&c| tree.delta_s(c)).collect();
            let w: Vec<f64> = kids.iter().map(|&c| v[c]).collect();
            v[i] = dk[i] + one_step_superhedge(&ds, &w);
        }
    }
    v[0]
}

/// Whether a payoff at the leaves is spanned by `x + ϑ·S`, by least squares
/// on `[1 | ΔS]` at every inner node.
pub fn replicable_oracle(tree: &EventTree, payoff: &[f64]) -> bool {
    let mut v = payoff.to_vec();
    for d in (0..tree.horizon()).rev() {
        for &i in tree.at_depth(d) {
            let kids = &tree.node(i).children;
            let n = tree.node(i).effective_prices().len();
            let a = DMatrix::from_fn(kids.len(), n + 1, |r, c| {
                if c == 0 {
                    1.0
                } else {
                    tree.delta_s(kids[r])[c - 1]
                }
            });
            let b = DVector::from_iterator(kids.len(), kids.iter().map(|&c| v[c]));
            let svd = a.clone().svd(true, true);
            let x = svd.solve(&b, 1e-12).unwrap();
            if (&a * &x - &b).amax() > 1e-9 * (1.0 + b.amax()) {
                return false;
            }
            v[i] = x[0];
        }
    }
    true
}

/// Maximizes a concave function by compass pattern search: try a 5-point
/// grid per coordinate around the incumbent, halve the step when nothing
/// improves.
pub fn pattern_max(
    n: usize,
    start_step: f64,
    tol: f64,
    f: impl Fn(&[f64]) -> f64,
) -> (Vec<f64>, f64) {
    let mut x = vec![0.0; n];
    let mut fx = f(&x);
    let mut h = start_step;
    while h > tol {
        let mut improved = false;
        for i in 0..n {
            for k in [-2.0, -1.0, 1.0, 2.0] {
                let mut y = x.clone();
                y[i] += k * h;
                let fy = f(&y);
                if fy > fx {
                    x = y;
                    fx = fy;
                    improved = true;
                }
            }
        }
        if !improved {
            h *= 0.5;
        }
    }
    (x, fx)
}

/// A constant-rate market with `c` PD (smallest eigenvalue >= 0.5), PSD of
/// deficient rank, or with `α` outside the range of `c`.
pub struct RateMarket {
    pub alpha: DVector<f64>,
    pub c: DMatrix<f64>,
    pub in_range: bool,
}

pub fn rate_market(rng: &mut impl Rng, n: usize, kind: usize) -> RateMarket {
    let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let qr = b.qr();
    let u = qr.q();
    let rank = if kind == 0 { n } else { (n - 1).max(1) };
    let lam = DVector::from_fn(n, |i, _| {
        if i < rank {
            rng.random_range(0.5..3.0)
        } else {
            0.0
        }
    });
    let c = &u * DMatrix::from_diagonal(&lam) * u.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let mut alpha = DVector::zeros(n);
    for i in 0..rank {
        alpha += u.column(i) * rng.random_range(-1.0..1.0);
    }
    let in_range = kind != 2 || rank == n;
    if !in_range {
        alpha += u.column(n - 1) * rng.random_range(0.5..1.0);
    }
    RateMarket { alpha, c, in_range }
}

/// The tree set of the hedging criteria: 50 random viable trees (depth,
/// children and assets at most 4, 4 and 2) and the viable fixtures.
pub fn tree_set() -> Vec<(String, EventTree)> {
    let mut rng = ChaCha8Rng::seed_from_u64(20240611);
    let shape = random::Shape::default();
    let mut out: Vec<(String, EventTree)> = (0..50)
        .map(|i| (format!("random_{i}"), random::viable_tree(&mut rng, &shape)))
        .collect();
    out.push(("binomial".into(), fixtures::binomial()));
    out.push(("trinomial".into(), fixtures::trinomial()));
    out.push((
        "trinomial_two_assets".into(),
        fixtures::trinomial_two_assets(),
    ));
    out.push(("two_epoch".into(), fixtures::two_epoch()));
    out.push(("binomial_steps_3".into(), fixtures::binomial_steps(3)));
    out
}

/// A random nonnegative stream: payoffs at the horizon plus sparse
/// intermediate withdrawals.
pub fn random_stream(rng: &mut impl Rng, tree: &EventTree) -> Vec<f64> {
    let h = tree.horizon();
    (0..tree.len())
        .map(|i| {
            let d = tree.node(i).depth;
            if d == h {
                rng.random_range(0.0..2.0)
            } else if d > 0 && rng.random_bool(0.2) {
                rng.random_range(0.0..0.5)
            } else {
                0.0
            }
        })
        .collect()
}
