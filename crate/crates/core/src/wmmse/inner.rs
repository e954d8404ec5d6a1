//! Precoder subproblems with the MMSE equalizers and weights held fixed.
//!
//! Each link `l` contributes a concave quadratic lower bound on its rate in
//! nats, in precoders normalized by `sqrt(P)` (so the power constraint is
//! `|x|^2 <= 1`):
//!
//! `r_l(x) = 1 - c_l - sum_{m in S_l} x_m' Q_l x_m + 2 d_l' x_{k_l}`
//!
//! where `S_l` holds the link's own stream and the streams still interfering.
//! The bound is tight at the point the equalizers were computed for.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::rate::waterfill_common;
use crate::strategy::Link;

pub(crate) struct LinkModel {
    pub link: Link,
    /// Own stream first, then interferers.
    pub covered: Vec<usize>,
    pub q: DMatrix<f64>,
    pub d: DVector<f64>,
    pub c: f64,
}

pub(crate) struct Surrogate {
    /// Real dimension of one stream block, `2M`.
    pub block: usize,
    pub num_streams: usize,
    pub links: Vec<LinkModel>,
}

impl Surrogate {
    pub fn dim(&self) -> usize {
        self.block * self.num_streams
    }

    fn x_block<'a>(&self, x: &'a DVector<f64>, m: usize) -> nalgebra::DVectorView<'a, f64> {
        x.rows(m * self.block, self.block)
    }

    pub fn value(&self, l: usize, x: &DVector<f64>) -> f64 {
        let lm = &self.links[l];
        let mut quad = 0.0;
        for &m in &lm.covered {
            let xm = self.x_block(x, m);
            quad += (&lm.q * xm).dot(&xm);
        }
        1.0 - lm.c - quad + 2.0 * lm.d.dot(&self.x_block(x, lm.link.stream))
    }

    pub fn values(&self, x: &DVector<f64>) -> Vec<f64> {
        (0..self.links.len()).map(|l| self.value(l, x)).collect()
    }
}

/// How link values combine into the objective.
#[derive(Clone, Debug)]
pub(crate) enum Aggregate {
    /// Sum over streams of the minimum over that stream's links.
    SumOfMins(Vec<Vec<usize>>),
    /// Minimum over all links.
    MinAll,
    /// Max-min with a shared common stream: private link per user, and the
    /// common links, combined by water-filling.
    RsMaxMin { private: Vec<usize>, common: Vec<usize> },
}

impl Aggregate {
    pub fn eval(&self, r: &[f64]) -> f64 {
        let min_of = |ls: &[usize]| ls.iter().map(|&l| r[l]).fold(f64::INFINITY, f64::min);
        match self {
            Aggregate::SumOfMins(streams) => streams.iter().map(|ls| min_of(ls)).sum(),
            Aggregate::MinAll => r.iter().copied().fold(f64::INFINITY, f64::min),
            Aggregate::RsMaxMin { private, common } => {
                let p: Vec<f64> = private.iter().map(|&l| r[l]).collect();
                let rc = min_of(common);
                if rc <= 0.0 {
                    p.iter().copied().fold(f64::INFINITY, f64::min)
                } else {
                    waterfill_common(&p, rc).1
                }
            }
        }
    }

    /// True when the objective is the plain sum of all link values.
    pub fn is_separable_sum(&self) -> bool {
        matches!(self, Aggregate::SumOfMins(s) if s.iter().all(|ls| ls.len() <= 1))
    }
}

pub(crate) struct InnerOutcome {
    pub x: DVector<f64>,
    /// Objective of the surrogate at `x`.
    pub value: f64,
    pub kkt_residual: f64,
    /// Diagonal loading was applied to an ill-conditioned system.
    pub loaded: bool,
    pub converged: bool,
}

/// Exact maximizer of a sum of link surrogates in which every stream is
/// decoded by a single link. Stationarity gives
/// `x_m = (A_m + mu I)^-1 b_m`; `mu >= 0` is found by bisection on the power.
pub(crate) fn kkt_bisection(sur: &Surrogate, agg: &Aggregate, tol: f64) -> Result<InnerOutcome> {
    if !agg.is_separable_sum() {
        return Err(Error::Usage(
            "the closed-form update needs a sum objective with one decoder per stream".into(),
        ));
    }
    let b = sur.block;
    let ns = sur.num_streams;
    let mut a = vec![DMatrix::<f64>::zeros(b, b); ns];
    let mut rhs = vec![DVector::<f64>::zeros(b); ns];
    for lm in &sur.links {
        for &m in &lm.covered {
            a[m] += &lm.q;
        }
        rhs[lm.link.stream] += &lm.d;
    }
    let eig: Vec<SymmetricEigen<f64, nalgebra::Dyn>> = a.iter().map(|m| m.clone().symmetric_eigen()).collect();
    // Per stream: eigenvalues and squared coefficients of b in the eigenbasis.
    let comps: Vec<Vec<(f64, f64)>> = eig
        .iter()
        .zip(&rhs)
        .map(|(e, bm)| {
            let proj = e.eigenvectors.transpose() * bm;
            e.eigenvalues.iter().zip(proj.iter()).map(|(l, c)| (l.max(0.0), c * c)).collect()
        })
        .collect();
    let lmax = comps.iter().flatten().map(|c| c.0).fold(0.0, f64::max);
    let bnorm2: f64 = rhs.iter().map(|v| v.norm_squared()).sum();
    let zero_x = DVector::zeros(sur.dim());
    if bnorm2 == 0.0 {
        let value = agg.eval(&sur.values(&zero_x));
        return Ok(InnerOutcome {
            x: zero_x,
            value,
            kkt_residual: 0.0,
            loaded: false,
            converged: true,
        });
    }
    let thresh = 1e-12 * lmax.max(f64::MIN_POSITIVE);
    let power = |mu: f64| -> f64 {
        let mut p = 0.0;
        for (l, c2) in comps.iter().flatten() {
            let den = l + mu;
            if den <= thresh {
                if *c2 > 1e-28 * bnorm2 {
                    return f64::INFINITY;
                }
            } else {
                p += c2 / (den * den);
            }
        }
        p
    };
    let mut loaded = false;
    let mu = if power(0.0) <= 1.0 {
        if comps.iter().flatten().any(|c| c.0 <= thresh) {
            loaded = true;
        }
        0.0
    } else {
        let mut lo = 0.0;
        let mut hi = bnorm2.sqrt().max(1e-300);
        let mut expand = 0;
        while power(hi) > 1.0 {
            hi *= 2.0;
            expand += 1;
            if expand > 2000 {
                return Err(Error::Solver(format!(
                    "power multiplier bisection failed to bracket (|b|^2 = {bnorm2:e}, lambda_max = {lmax:e})"
                )));
            }
        }
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if power(mid) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };
    let mut x = DVector::zeros(sur.dim());
    for m in 0..ns {
        let e = &eig[m];
        let proj = e.eigenvectors.transpose() * &rhs[m];
        let mut coef = DVector::zeros(b);
        for i in 0..b {
            let den = e.eigenvalues[i].max(0.0) + mu;
            if den > thresh {
                coef[i] = proj[i] / den;
            }
        }
        x.rows_mut(m * b, b).copy_from(&(&e.eigenvectors * coef));
    }
    let n2 = x.norm_squared();
    if n2 > 1.0 {
        x /= n2.sqrt();
    }
    let mut stationarity: f64 = 0.0;
    for m in 0..ns {
        let xm = x.rows(m * b, b);
        let res = &a[m] * xm + xm * mu - &rhs[m];
        stationarity = stationarity.max(res.norm());
    }
    let slack = (mu * (1.0 - x.norm_squared())).abs();
    let kkt_residual = stationarity / (1.0 + bnorm2.sqrt()) + slack;
    let value = agg.eval(&sur.values(&x));
    Ok(InnerOutcome {
        x,
        value,
        kkt_residual,
        loaded,
        converged: kkt_residual <= tol.max(1e-9),
    })
}

/// Epigraph form: maximize `cost' y` subject to
/// `coef_i' y - r_{l_i}(x) <= 0`, `y_j >= 0` for `j` in `nonneg`, and
/// `|x|^2 <= 1`.
struct Epigraph {
    rows: Vec<(usize, Vec<(usize, f64)>)>,
    nonneg: Vec<usize>,
    cost: Vec<f64>,
}

impl Epigraph {
    fn num_constraints(&self) -> usize {
        self.rows.len() + self.nonneg.len() + 1
    }
}

fn build_epigraph(agg: &Aggregate, r0: &[f64]) -> (Epigraph, DVector<f64>) {
    match agg {
        Aggregate::SumOfMins(streams) => {
            let active: Vec<&Vec<usize>> = streams.iter().filter(|ls| !ls.is_empty()).collect();
            let mut rows = Vec::new();
            let mut y0 = DVector::zeros(active.len());
            for (s, ls) in active.iter().enumerate() {
                let mut lo = f64::INFINITY;
                for &l in ls.iter() {
                    rows.push((l, vec![(s, 1.0)]));
                    lo = lo.min(r0[l]);
                }
                y0[s] = lo - 1.0;
            }
            (
                Epigraph {
                    rows,
                    nonneg: Vec::new(),
                    cost: vec![1.0; active.len()],
                },
                y0,
            )
        }
        Aggregate::MinAll => {
            let rows = (0..r0.len()).map(|l| (l, vec![(0, 1.0)])).collect();
            let t = r0.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
            (
                Epigraph {
                    rows,
                    nonneg: Vec::new(),
                    cost: vec![1.0],
                },
                DVector::from_element(1, t),
            )
        }
        Aggregate::RsMaxMin { private, common } => {
            let k = private.len();
            let c0 = common.iter().map(|&l| r0[l]).fold(f64::INFINITY, f64::min);
            if c0 > 1e-9 {
                // Variables: t, then one common share per user.
                let share = c0 / (2.0 * k as f64);
                let mut rows = Vec::new();
                let mut t = f64::INFINITY;
                for (u, &l) in private.iter().enumerate() {
                    rows.push((l, vec![(0, 1.0), (1 + u, -1.0)]));
                    t = t.min(r0[l] + share);
                }
                for &l in common {
                    rows.push((l, (0..k).map(|u| (1 + u, 1.0)).collect()));
                }
                let mut y0 = DVector::from_element(1 + k, share);
                y0[0] = t - 1.0;
                let mut cost = vec![0.0; 1 + k];
                cost[0] = 1.0;
                (
                    Epigraph {
                        rows,
                        nonneg: (1..=k).collect(),
                        cost,
                    },
                    y0,
                )
            } else {
                let rows = private.iter().map(|&l| (l, vec![(0, 1.0)])).collect();
                let t = private.iter().map(|&l| r0[l]).fold(f64::INFINITY, f64::min) - 1.0;
                (
                    Epigraph {
                        rows,
                        nonneg: Vec::new(),
                        cost: vec![1.0],
                    },
                    DVector::from_element(1, t),
                )
            }
        }
    }
}

struct BarrierEval {
    phi: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

/// Constraint values, or `None` outside the strict interior.
fn constraint_values(sur: &Surrogate, epi: &Epigraph, x: &DVector<f64>, y: &DVector<f64>) -> Option<Vec<f64>> {
    let mut f = Vec::with_capacity(epi.num_constraints());
    for (l, coef) in &epi.rows {
        let v = coef.iter().map(|(j, a)| a * y[*j]).sum::<f64>() - sur.value(*l, x);
        f.push(v);
    }
    for &j in &epi.nonneg {
        f.push(-y[j]);
    }
    f.push(x.norm_squared() - 1.0);
    if f.iter().all(|v| *v < 0.0) {
        Some(f)
    } else {
        None
    }
}

fn barrier_phi(epi: &Epigraph, y: &DVector<f64>, f: &[f64], tau: f64) -> f64 {
    let lin: f64 = epi.cost.iter().zip(y.iter()).map(|(c, v)| c * v).sum();
    -tau * lin - f.iter().map(|v| (-v).ln()).sum::<f64>()
}

fn barrier_eval(sur: &Surrogate, epi: &Epigraph, x: &DVector<f64>, y: &DVector<f64>, f: &[f64], tau: f64) -> BarrierEval {
    let nx = x.len();
    let n = nx + y.len();
    let b = sur.block;
    let mut grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    for (j, c) in epi.cost.iter().enumerate() {
        grad[nx + j] -= tau * c;
    }
    let mut g = DVector::zeros(n);
    for (i, (l, coef)) in epi.rows.iter().enumerate() {
        let lm = &sur.links[*l];
        let s = -1.0 / f[i];
        g.fill(0.0);
        for &m in &lm.covered {
            let qx = &lm.q * x.rows(m * b, b);
            g.rows_mut(m * b, b).axpy(2.0, &qx, 1.0);
        }
        g.rows_mut(lm.link.stream * b, b).axpy(-2.0, &lm.d, 1.0);
        for (j, a) in coef {
            g[nx + j] += a;
        }
        grad.axpy(s, &g, 1.0);
        hess.ger(s * s, &g, &g, 1.0);
        for &m in &lm.covered {
            let mut blk = hess.view_mut((m * b, m * b), (b, b));
            blk += &lm.q * (2.0 * s);
        }
    }
    let mut idx = epi.rows.len();
    for &j in &epi.nonneg {
        let s = -1.0 / f[idx];
        grad[nx + j] -= s;
        hess[(nx + j, nx + j)] += s * s;
        idx += 1;
    }
    let s = -1.0 / f[idx];
    g.fill(0.0);
    g.rows_mut(0, nx).axpy(2.0, x, 0.0);
    grad.axpy(s, &g, 1.0);
    hess.ger(s * s, &g, &g, 1.0);
    for i in 0..nx {
        hess[(i, i)] += 2.0 * s;
    }
    BarrierEval {
        phi: barrier_phi(epi, y, f, tau),
        grad,
        hess,
    }
}

fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<(DVector<f64>, bool)> {
    let rhs = -grad;
    if let Some(ch) = hess.clone().cholesky() {
        return Some((ch.solve(&rhs), false));
    }
    let scale = (0..hess.nrows()).map(|i| hess[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let mut reg = 1e-12 * scale;
    for _ in 0..12 {
        let mut h = hess.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += reg;
        }
        if let Some(ch) = h.cholesky() {
            return Some((ch.solve(&rhs), true));
        }
        reg *= 100.0;
    }
    None
}

/// Log-barrier interior-point method on the epigraph form. `x0` must satisfy
/// `|x0|^2 < 1`. The returned residual is the duality-gap bound
/// `(#constraints / tau) / (1 + |objective|)`.
pub(crate) fn barrier(sur: &Surrogate, agg: &Aggregate, x0: &DVector<f64>, tol: f64) -> Result<InnerOutcome> {
    if x0.norm_squared() >= 1.0 {
        return Err(Error::Usage("barrier start must satisfy |x|^2 < 1".into()));
    }
    let r0 = sur.values(x0);
    let (epi, y0) = build_epigraph(agg, &r0);
    let nx = x0.len();
    let mut x = x0.clone();
    let mut y = y0;
    let mut f = constraint_values(sur, &epi, &x, &y)
        .ok_or_else(|| Error::Solver("barrier start is not strictly feasible".into()))?;
    let m = epi.num_constraints() as f64;
    let lin = |y: &DVector<f64>| epi.cost.iter().zip(y.iter()).map(|(c, v)| c * v).sum::<f64>();
    let mut tau = m / (1.0 + lin(&y).abs());
    let mut loaded = false;
    let mut converged = false;
    for _outer in 0..60 {
        for _newton in 0..80 {
            let ev = barrier_eval(sur, &epi, &x, &y, &f, tau);
            let (dir, reg) = match newton_direction(&ev.hess, &ev.grad) {
                Some(d) => d,
                None => break,
            };
            loaded |= reg;
            let slope = ev.grad.dot(&dir);
            // Decrements below the rounding level of phi cannot be resolved.
            if -slope / 2.0 <= 1e-10 + 1e-13 * ev.phi.abs() {
                break;
            }
            let mut t = 1.0;
            let mut moved = false;
            while t > 1e-10 {
                let xn = &x + dir.rows(0, nx) * t;
                let yn = &y + dir.rows(nx, y.len()) * t;
                if let Some(fnew) = constraint_values(sur, &epi, &xn, &yn) {
                    if barrier_phi(&epi, &yn, &fnew, tau) <= ev.phi + 0.25 * t * slope {
                        x = xn;
                        y = yn;
                        f = fnew;
                        moved = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        let gap = m / tau;
        if gap <= tol * (1.0 + lin(&y).abs()) {
            converged = true;
            break;
        }
        tau *= 20.0;
    }
    let obj = lin(&y);
    let value = agg.eval(&sur.values(&x));
    Ok(InnerOutcome {
        x,
        value,
        kkt_residual: (m / tau) / (1.0 + obj.abs()),
        loaded,
        converged,
    })
}
