//! One-step geometry of a node: the polytope of martingale weights
//! `Q = {q >= 0 : Σ q = 1, Σ q ΔS = 0}` with `q = p·y`, its vertices, and the
//! linear programs over it.

use nalgebra::{DMatrix, DVector};

/// Relative tolerance of all node-level feasibility tests.
pub const TOL: f64 = 1e-11;

/// Minimum-norm solution of `a x = b` if the system is consistent, with the
/// numerical rank of `a`.
pub fn min_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<(DVector<f64>, usize)> {
    let (r, c) = a.shape();
    if c == 0 {
        return (b.amax() <= TOL).then(|| (DVector::zeros(0), 0));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |m, x| m.max(*x));
    let eps = 1e-12 * smax.max(1.0);
    let rank = svd.singular_values.iter().filter(|s| **s > eps).count();
    let x = svd.solve(b, eps).ok()?;
    let scale = 1.0 + b.amax() + a.amax() * x.amax();
    let res = (a * &x - b).amax();
    let _ = r;
    (res <= 1e-10 * scale).then_some((x, rank))
}

/// Numerical rank.
pub fn rank(a: &DMatrix<f64>) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.iter().fold(0.0f64, |m, x| m.max(*x));
    sv.iter().filter(|s| **s > 1e-12 * smax.max(1.0)).count()
}

fn subsets(m: usize, max_size: usize) -> impl Iterator<Item = Vec<usize>> {
    (1u32..(1u32 << m)).filter_map(move |mask| {
        let s: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        (s.len() <= max_size).then_some(s)
    })
}

/// Data of one node: child probabilities and the increments `ΔS` (one row
/// per child).
#[derive(Debug, Clone, PartialEq)]
pub struct OneStep {
    pub probs: Vec<f64>,
    pub ds: DMatrix<f64>,
    /// Vertices of `Q` as weight vectors `q` over the children.
    pub vertices: Vec<DVector<f64>>,
}

/// Classification of a node's one-step deflator set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeflatorSetKind {
    /// No strictly positive solution.
    Empty,
    Singleton,
    Multi,
}

impl OneStep {
    pub fn new(probs: Vec<f64>, ds: DMatrix<f64>) -> Self {
        let vertices = enumerate_vertices(&ds);
        OneStep {
            probs,
            ds,
            vertices,
        }
    }

    pub fn children(&self) -> usize {
        self.probs.len()
    }

    pub fn assets(&self) -> usize {
        self.ds.ncols()
    }

    /// `[1ᵀ; ΔSᵀ]`, the moment system in `q`.
    pub fn moment_matrix(&self) -> DMatrix<f64> {
        let (m, n) = self.ds.shape();
        DMatrix::from_fn(
            n + 1,
            m,
            |r, j| if r == 0 { 1.0 } else { self.ds[(j, r - 1)] },
        )
    }

    /// Children charged by some vertex; `Q` has a strictly positive point iff
    /// this is every child.
    pub fn support_union(&self) -> Vec<bool> {
        let mut u = vec![false; self.children()];
        for v in &self.vertices {
            for (j, x) in v.iter().enumerate() {
                if *x > TOL {
                    u[j] = true;
                }
            }
        }
        u
    }

    pub fn strictly_feasible(&self) -> bool {
        !self.vertices.is_empty() && self.support_union().iter().all(|b| *b)
    }

    pub fn kind(&self) -> DeflatorSetKind {
        if !self.strictly_feasible() {
            DeflatorSetKind::Empty
        } else if rank(&self.moment_matrix()) == self.children() {
            DeflatorSetKind::Singleton
        } else {
            DeflatorSetKind::Multi
        }
    }

    /// Orthonormal basis of `{d : Σ d = 0, Σ d ΔS = 0}` in `q`-coordinates.
    pub fn null_basis(&self) -> DMatrix<f64> {
        let a = self.moment_matrix();
        let m = a.ncols();
        let svd = a.clone().svd(false, true);
        let vt = svd.v_t.unwrap();
        let smax = svd.singular_values.iter().fold(0.0f64, |x, s| x.max(*s));
        let r = svd
            .singular_values
            .iter()
            .filter(|s| **s > 1e-12 * smax.max(1.0))
            .count();
        // rows of vᵀ beyond the rank span the null space; complete if vᵀ is thin
        let full = if vt.nrows() < m {
            let mut q = DMatrix::<f64>::identity(m, m);
            for k in 0..vt.nrows() {
                let row = vt.row(k).transpose();
                for c in 0..m {
                    let col = q.column(c).clone_owned();
                    let proj = row.dot(&col);
                    q.column_mut(c).axpy(-proj, &row, 1.0);
                }
            }
            let mut basis: Vec<DVector<f64>> = Vec::new();
            for c in 0..m {
                let mut v = q.column(c).clone_owned();
                for b in &basis {
                    let p = b.dot(&v);
                    v.axpy(-p, b, 1.0);
                }
                if v.norm() > 1e-9 {
                    basis.push(v.normalize());
                }
            }
            basis
        } else {
            (r..m).map(|k| vt.row(k).transpose()).collect()
        };
        if full.is_empty() {
            DMatrix::zeros(m, 0)
        } else {
            DMatrix::from_columns(&full)
        }
    }

    /// Barycenter of the vertices; strictly positive when the node is
    /// viable.
    pub fn barycenter(&self) -> Option<DVector<f64>> {
        if self.vertices.is_empty() {
            return None;
        }
        let mut c = DVector::zeros(self.children());
        for v in &self.vertices {
            c += v;
        }
        Some(c / self.vertices.len() as f64)
    }

    /// Maximizer of `Σ log q_j` over `Q`, by damped Newton on the null space
    /// started at the barycenter.
    pub fn analytic_center(&self) -> Option<DVector<f64>> {
        if !self.strictly_feasible() {
            return None;
        }
        let mut q = self.barycenter()?;
        let nb = self.null_basis();
        if nb.ncols() == 0 {
            return Some(q);
        }
        for _ in 0..100 {
            let g = DVector::from_fn(q.len(), |j, _| 1.0 / q[j]);
            let h = DVector::from_fn(q.len(), |j, _| 1.0 / (q[j] * q[j]));
            let grad = nb.transpose() * &g;
            if grad.norm() < 1e-13 {
                break;
            }
            let hess = nb.transpose() * DMatrix::from_diagonal(&h) * &nb;
            let Some(step) = hess.cholesky().map(|c| c.solve(&grad)) else {
                break;
            };
            let dir = &nb * step;
            let mut t = 1.0;
            let f0: f64 = q.iter().map(|x| x.ln()).sum();
            loop {
                let cand = &q + &dir * t;
                if cand.iter().all(|x| *x > 0.0) {
                    let f1: f64 = cand.iter().map(|x| x.ln()).sum();
                    if f1 >= f0 {
                        q = cand;
                        break;
                    }
                }
                t *= 0.5;
                if t < 1e-12 {
                    return Some(q);
                }
            }
        }
        Some(q)
    }

    /// `q ↦ y = q / p`.
    pub fn ratios(&self, q: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(q.len(), |j, _| q[j] / self.probs[j])
    }

    /// `max_{q ∈ Q} qᵀv` by vertex scan, with the maximizing vertices.
    pub fn sup(&self, v: &DVector<f64>) -> Option<(f64, Vec<usize>)> {
        if self.vertices.is_empty() {
            return None;
        }
        let vals: Vec<f64> = self.vertices.iter().map(|q| q.dot(v)).collect();
        let best = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tol = TOL * (1.0 + v.amax());
        let arg = (0..vals.len()).filter(|&k| vals[k] >= best - tol).collect();
        Some((best, arg))
    }

    /// Whether the maximum of `qᵀv` is reached at a strictly positive `q`.
    pub fn sup_attained(&self, v: &DVector<f64>) -> bool {
        let Some((_, arg)) = self.sup(v) else {
            return false;
        };
        let mut u = vec![false; self.children()];
        for k in arg {
            for (j, x) in self.vertices[k].iter().enumerate() {
                if *x > TOL {
                    u[j] = true;
                }
            }
        }
        u.iter().all(|b| *b)
    }

    /// `min v` subject to `v + θᵀΔS_j >= w_j` for every child, by
    /// enumerating basic solutions of the constraint system.
    pub fn superhedge(&self, w: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        let (m, n) = self.ds.shape();
        let mut best: Option<(f64, DVector<f64>)> = None;
        let tol = TOL * (1.0 + w.amax());
        for t in subsets(m, n + 1) {
            let a = DMatrix::from_fn(t.len(), n + 1, |r, c| {
                if c == 0 {
                    1.0
                } else {
                    self.ds[(t[r], c - 1)]
                }
            });
            let b = DVector::from_fn(t.len(), |r, _| w[t[r]]);
            let Some((x, _)) = min_norm_solve(&a, &b) else {
                continue;
            };
            let v = x[0];
            let theta = x.rows(1, n).clone_owned();
            let pay = &self.ds * &theta;
            if (0..m).all(|j| v + pay[j] >= w[j] - tol)
                && best.as_ref().is_none_or(|(bv, _)| v < *bv)
            {
                best = Some((v, theta));
            }
        }
        best
    }

    /// A one-step strategy with payoff `ΔS θ >= 0`, not identically zero,
    /// scaled so that `max |θ_i| = 1`. Exists iff `Q` has no strictly
    /// positive point.
    pub fn arbitrage(&self) -> Option<DVector<f64>> {
        let (m, n) = self.ds.shape();
        let total = DVector::from_fn(n, |i, _| (0..m).map(|j| self.ds[(j, i)]).sum::<f64>());
        for z in std::iter::once(Vec::new()).chain(subsets(m, m - 1)) {
            let mut a = DMatrix::zeros(z.len() + 1, n);
            for (r, &j) in z.iter().enumerate() {
                a.set_row(r, &self.ds.row(j));
            }
            a.set_row(z.len(), &total.transpose());
            let mut b = DVector::zeros(z.len() + 1);
            b[z.len()] = 1.0;
            let Some((theta, _)) = min_norm_solve(&a, &b) else {
                continue;
            };
            let pay = &self.ds * &theta;
            if pay.iter().all(|x| *x >= -TOL) && pay.amax() > TOL {
                let s = theta.amax();
                return Some(theta / s);
            }
        }
        None
    }
}

/// Vertices of `Q`: basic feasible solutions on every child subset whose
/// columns of the moment system are independent.
fn enumerate_vertices(ds: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let (m, n) = ds.shape();
    let mut out: Vec<DVector<f64>> = Vec::new();
    for z in subsets(m, n + 1) {
        let a = DMatrix::from_fn(
            n + 1,
            z.len(),
            |r, c| if r == 0 { 1.0 } else { ds[(z[c], r - 1)] },
        );
        let mut b = DVector::zeros(n + 1);
        b[0] = 1.0;
        let Some((x, rk)) = min_norm_solve(&a, &b) else {
            continue;
        };
        if rk != z.len() || x.iter().any(|v| *v < -TOL) {
            continue;
        }
        let mut q = DVector::zeros(m);
        for (c, &j) in z.iter().enumerate() {
            q[j] = x[c].max(0.0);
        }
        let s = q.sum();
        q /= s;
        if !out.iter().any(|v| (v - &q).amax() <= 1e-9) {
            out.push(q);
        }
    }
    out
}
