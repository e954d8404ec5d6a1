//! Rate/WMMSE alternating optimization.
//!
//! For a link `(j, k)` with received power `T = |h_j' p_k|^2 + I + 1`, the
//! MMSE equalizer is `g = conj(h_j' p_k) / T`, the minimum MSE is
//! `eps = (I + 1) / T` and the MMSE weight is `u = 1 / eps`. At that point
//! `u * eps - log2(u) = 1 - R`, which [`rate_wmmse_gap`] checks.
//!
//! The optimizer runs on the natural-log form `u * mse - ln(u)`, for which
//! `u = 1 / eps` is the exact minimizer over the weight. Each outer step
//! therefore maximizes a concave lower bound on the objective that is tight
//! at the current precoders, and a step is only taken when it does not
//! decrease that bound. The true objective is then non-decreasing. An
//! optional extrapolated point along the last step replaces the update only
//! when its true objective is higher.
//!
//! The precoder subproblem is solved in closed form (bisection on the power
//! multiplier) when the objective is a plain sum of single-decoder streams,
//! and by a log-barrier interior-point method otherwise.

mod inner;

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::channel::{sample_conditional, ChannelSet, CsitModel};
use crate::error::{Error, Result};
use crate::initpoint::{mrt_svd_init, PowerSplit};
use crate::linalg::{gain, inner as hdot, CVec};
use crate::rate::{ergodic_rates, oma_precoders, AllocationPolicy, PrecoderSet, RateReport};
use crate::strategy::{stream_layout, Link, StrategyConfig, StrategyKind, StreamLayout};

use inner::{Aggregate, InnerOutcome, LinkModel, Surrogate};

/// Largest objective decrease tolerated between outer iterations.
pub const MONOTONE_SLACK: f64 = 1e-9;

const MIN_EXTRAPOLATION: f64 = 0.25;
const MAX_EXTRAPOLATION: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Sum,
    #[serde(alias = "max-min", alias = "mmf")]
    MaxMin,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sum" => Ok(Objective::Sum),
            "maxmin" | "max-min" | "mmf" => Ok(Objective::MaxMin),
            _ => Err(Error::Config(format!("unknown objective {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InnerSolver {
    /// Closed form where it applies, interior point otherwise.
    Auto,
    KktBisection,
    InteriorPoint,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    /// Stop when the objective changes by less than this (bits/s/Hz).
    pub convergence_tol: f64,
    pub max_iterations: usize,
    pub inner_solver: InnerSolver,
    /// Relative optimality tolerance of the precoder subproblem.
    pub inner_tol: f64,
    /// Seed for conditional channel samples.
    pub seed: u64,
    /// After each update, also try `x + beta (x - x_prev)` and keep it when
    /// the objective is higher.
    pub extrapolate: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            convergence_tol: 1e-4,
            max_iterations: 200,
            inner_solver: InnerSolver::Auto,
            inner_tol: 1e-7,
            seed: 0,
            extrapolate: true,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.convergence_tol > 0.0) || !(self.inner_tol > 0.0) || self.max_iterations == 0 {
            return Err(Error::Config(
                "tolerances must be positive and max_iterations at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Objective in bits/s/Hz, evaluated through the rate module.
    pub objective: f64,
    pub power_used: f64,
    pub max_kkt_residual: f64,
    /// Diagonal loading was needed in the subproblem.
    pub loaded: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveTrace {
    pub entries: Vec<TraceEntry>,
    pub converged: bool,
    /// Subproblem warnings, e.g. an exhausted iteration budget.
    pub warnings: Vec<String>,
}

impl SolveTrace {
    pub fn iterations(&self) -> usize {
        self.entries.last().map_or(0, |e| e.iteration)
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.objective).collect()
    }

    /// Residual of the last accepted subproblem.
    pub fn final_kkt_residual(&self) -> f64 {
        self.entries.last().map_or(0.0, |e| e.max_kkt_residual)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["iteration", "objective", "power_used", "max_kkt_residual"])?;
        for e in &self.entries {
            wr.write_record([
                e.iteration.to_string(),
                format!("{:e}", e.objective),
                format!("{:e}", e.power_used),
                format!("{:e}", e.max_kkt_residual),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Optimized precoders with their rates and the optimization trace.
#[derive(Clone, Debug)]
pub struct Solution {
    pub precoders: PrecoderSet,
    pub report: RateReport,
    pub trace: SolveTrace,
}

/// Equalizers and weights of every link at one precoder set, per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct WmmseState {
    pub links: Vec<Link>,
    /// `equalizers[s][l]` for sample `s` and link `links[l]`.
    pub equalizers: Vec<Vec<Complex64>>,
    pub weights: Vec<Vec<f64>>,
    pub precoders: PrecoderSet,
    pub objective_trace: Vec<f64>,
    pub iteration: usize,
}

fn received_power(h: &CVec, ps: &PrecoderSet, stream: usize, intf: &[usize]) -> (f64, f64) {
    let own = gain(h, ps.stream(stream));
    let noise = 1.0 + intf.iter().map(|&q| gain(h, ps.stream(q))).sum::<f64>();
    (own + noise, noise)
}

/// `|g|^2 T - 2 Re(g h_j' p_k) + 1`.
pub fn mse(cs: &ChannelSet, ps: &PrecoderSet, layout: &StreamLayout, link: Link, g: Complex64) -> Result<f64> {
    let intf = layout.interferers(link)?;
    let h = &cs.true_channels()[link.decoder];
    let (t, _) = received_power(h, ps, link.stream, &intf);
    Ok(g.norm_sqr() * t - 2.0 * (g * hdot(h, ps.stream(link.stream))).re + 1.0)
}

/// `conj(h_j' p_k) / T`.
pub fn mmse_equalizer(cs: &ChannelSet, ps: &PrecoderSet, layout: &StreamLayout, link: Link) -> Result<Complex64> {
    let intf = layout.interferers(link)?;
    let h = &cs.true_channels()[link.decoder];
    let (t, _) = received_power(h, ps, link.stream, &intf);
    Ok(hdot(h, ps.stream(link.stream)).conj() / t)
}

/// `1 / mmse`.
pub fn mmse_weight(mmse_value: f64) -> Result<f64> {
    if !(mmse_value > 0.0) || !mmse_value.is_finite() {
        return Err(Error::Invariant(format!("MMSE must be positive, got {mmse_value}")));
    }
    Ok(1.0 / mmse_value)
}

/// `u * eps - log2(u) - (1 - R)` at the MMSE equalizer and weight.
pub fn rate_wmmse_gap(cs: &ChannelSet, ps: &PrecoderSet, layout: &StreamLayout, link: Link) -> Result<f64> {
    let g = mmse_equalizer(cs, ps, layout, link)?;
    let eps = mse(cs, ps, layout, link, g)?;
    let u = mmse_weight(eps)?;
    let xi = u * eps - u.log2();
    let rate = crate::rate::noma_link_rate(cs, ps, layout, link.decoder, link.stream)?;
    Ok(xi - (1.0 - rate))
}

/// MMSE equalizers and weights of every link for each sample.
pub fn mmse_point(samples: &[ChannelSet], ps: &PrecoderSet, layout: &StreamLayout) -> Result<WmmseState> {
    let links = layout.links();
    let intf: Vec<Vec<usize>> = links.iter().map(|&l| layout.interferers(l)).collect::<Result<_>>()?;
    let mut equalizers = Vec::with_capacity(samples.len());
    let mut weights = Vec::with_capacity(samples.len());
    for cs in samples {
        let mut gs = Vec::with_capacity(links.len());
        let mut us = Vec::with_capacity(links.len());
        for (l, link) in links.iter().enumerate() {
            let h = &cs.true_channels()[link.decoder];
            let (t, noise) = received_power(h, ps, link.stream, &intf[l]);
            gs.push(hdot(h, ps.stream(link.stream)).conj() / t);
            us.push(mmse_weight(noise / t)?);
        }
        equalizers.push(gs);
        weights.push(us);
    }
    Ok(WmmseState {
        links,
        equalizers,
        weights,
        precoders: ps.clone(),
        objective_trace: Vec::new(),
        iteration: 0,
    })
}

/// Sample-averaged quadratic bounds at `state`, in precoders scaled by
/// `1 / sqrt(P)`.
fn build_surrogate(samples: &[ChannelSet], state: &WmmseState, layout: &StreamLayout, power: f64) -> Result<Surrogate> {
    let m = samples[0].num_antennas();
    let n = samples.len() as f64;
    let mut links = Vec::with_capacity(state.links.len());
    for (l, &link) in state.links.iter().enumerate() {
        let mut covered = vec![link.stream];
        covered.extend(layout.interferers(link)?);
        let mut a = DMatrix::<Complex64>::zeros(m, m);
        let mut dc = CVec::from_element(m, Complex64::new(0.0, 0.0));
        let mut c = 0.0;
        for (s, cs) in samples.iter().enumerate() {
            let h = &cs.true_channels()[link.decoder];
            let g = state.equalizers[s][l];
            let u = state.weights[s][l];
            let w = u * g.norm_sqr();
            if w != 0.0 {
                a.gerc(Complex64::new(w, 0.0), h, h, Complex64::new(1.0, 0.0));
            }
            dc.axpy(Complex64::new(u, 0.0) * g.conj(), h, Complex64::new(1.0, 0.0));
            c += u + w - u.ln();
        }
        let scale = power / n;
        let mut q = DMatrix::<f64>::zeros(2 * m, 2 * m);
        for i in 0..m {
            for j in 0..m {
                let z = a[(i, j)] * scale;
                q[(i, j)] = z.re;
                q[(i + m, j + m)] = z.re;
                q[(i, j + m)] = -z.im;
                q[(i + m, j)] = z.im;
            }
        }
        // Symmetrize away rounding.
        let q = (&q + q.transpose()) * 0.5;
        let ds = power.sqrt() / n;
        let d = DVector::from_fn(2 * m, |i, _| if i < m { dc[i].re * ds } else { dc[i - m].im * ds });
        links.push(LinkModel {
            link,
            covered,
            q,
            d,
            c: c / n,
        });
    }
    Ok(Surrogate {
        block: 2 * m,
        num_streams: layout.num_streams(),
        links,
    })
}

fn aggregate_for(layout: &StreamLayout, links: &[Link], objective: Objective) -> Aggregate {
    let index = |link: Link| links.iter().position(|l| *l == link).expect("link present");
    match (objective, layout.common_stream()) {
        (Objective::Sum, _) => Aggregate::SumOfMins(
            (0..layout.num_streams())
                .map(|s| {
                    layout
                        .decoders(s)
                        .iter()
                        .map(|&j| index(Link { decoder: j, stream: s }))
                        .collect()
                })
                .collect(),
        ),
        (Objective::MaxMin, None) => Aggregate::MinAll,
        (Objective::MaxMin, Some(c)) => Aggregate::RsMaxMin {
            private: (0..layout.num_users())
                .map(|k| index(Link { decoder: k, stream: k }))
                .collect(),
            common: layout
                .decoders(c)
                .iter()
                .map(|&j| index(Link { decoder: j, stream: c }))
                .collect(),
        },
    }
}

fn to_normalized(ps: &PrecoderSet) -> DVector<f64> {
    let m = ps.num_antennas();
    let s = 1.0 / ps.power_budget().sqrt();
    let mut x = DVector::zeros(2 * m * ps.num_streams());
    for st in 0..ps.num_streams() {
        let p = ps.stream(st);
        for i in 0..m {
            x[st * 2 * m + i] = p[i].re * s;
            x[st * 2 * m + m + i] = p[i].im * s;
        }
    }
    x
}

fn from_normalized(x: &DVector<f64>, template: &PrecoderSet) -> Result<PrecoderSet> {
    let m = template.num_antennas();
    let power = template.power_budget();
    let mut x = x.clone();
    let n2 = x.norm_squared();
    if n2 > 1.0 {
        x /= n2.sqrt();
    }
    let s = power.sqrt();
    let stream = |st: usize| CVec::from_fn(m, |i, _| Complex64::new(x[st * 2 * m + i] * s, x[st * 2 * m + m + i] * s));
    let k = template.num_users();
    let private = (0..k).map(stream).collect();
    let common = template.common().map(|_| stream(k));
    PrecoderSet::new(private, common, power)
}

fn objective_of(report: &RateReport, objective: Objective) -> f64 {
    match objective {
        Objective::Sum => report.sum_rate,
        Objective::MaxMin => report.mmf_rate,
    }
}

/// Policy used for reports: common rate shared to lift the weakest users.
pub const REPORT_POLICY: AllocationPolicy = AllocationPolicy::MmfEqualizing;

fn solve_inner(
    solver: InnerSolver,
    sur: &Surrogate,
    agg: &Aggregate,
    x_old: &DVector<f64>,
    tol: f64,
) -> Result<InnerOutcome> {
    match solver {
        InnerSolver::KktBisection => inner::kkt_bisection(sur, agg, tol),
        InnerSolver::InteriorPoint => inner::barrier(sur, agg, &(x_old * 0.999), tol),
        InnerSolver::Auto => {
            if agg.is_separable_sum() {
                inner::kkt_bisection(sur, agg, tol)
            } else {
                inner::barrier(sur, agg, &(x_old * 0.999), tol)
            }
        }
    }
}

/// Alternating optimization over a fixed sample set. With one sample this
/// is the deterministic problem on that sample's true channels.
fn run_ao(
    samples: &[ChannelSet],
    config: &StrategyConfig,
    objective: Objective,
    init: &PrecoderSet,
    opts: &SolveOptions,
) -> Result<Solution> {
    opts.validate()?;
    let layout = stream_layout(config);
    if init.num_streams() != layout.num_streams() || init.num_users() != layout.num_users() {
        return Err(Error::Dimension(format!(
            "initial precoders have {} streams, the strategy needs {}",
            init.num_streams(),
            layout.num_streams()
        )));
    }
    if init.total_power() > init.power_budget() * (1.0 + crate::rate::POWER_TOL) {
        return Err(Error::Infeasible("initial precoders exceed the power budget".into()));
    }
    let eval = |ps: &PrecoderSet| ergodic_rates(samples, ps, config, &REPORT_POLICY);
    let mut ps = init.clone();
    let mut report = eval(&ps)?;
    let mut value = objective_of(&report, objective);
    let mut trace = SolveTrace::default();
    trace.entries.push(TraceEntry {
        iteration: 0,
        objective: value,
        power_used: ps.total_power(),
        max_kkt_residual: 0.0,
        loaded: false,
    });
    let links = layout.links();
    let agg = aggregate_for(&layout, &links, objective);
    if opts.inner_solver == InnerSolver::KktBisection && !agg.is_separable_sum() {
        return Err(Error::Usage(format!(
            "closed-form updates do not apply to {} with this objective",
            config.label()
        )));
    }
    let mut beta = 1.0;
    for it in 1..=opts.max_iterations {
        let state = mmse_point(samples, &ps, &layout)?;
        let sur = build_surrogate(samples, &state, &layout, ps.power_budget())?;
        let x_old = to_normalized(&ps);
        let base = agg.eval(&sur.values(&x_old));
        let out = solve_inner(opts.inner_solver, &sur, &agg, &x_old, opts.inner_tol)?;
        if !out.converged {
            trace
                .warnings
                .push(format!("iteration {it}: subproblem stopped at residual {:e}", out.kkt_residual));
        }
        if !(out.value >= base) {
            // No improvement of the bound: the current point is stationary
            // up to the subproblem tolerance.
            trace.converged = true;
            break;
        }
        let next = from_normalized(&out.x, &ps)?;
        let next_report = eval(&next)?;
        let next_value = objective_of(&next_report, objective);
        if next_value < value - MONOTONE_SLACK {
            return Err(Error::Invariant(format!(
                "objective decreased from {value} to {next_value} at iteration {it}; trace {:?}",
                trace.objectives()
            )));
        }
        let (mut next, mut next_report, mut next_value) = (next, next_report, next_value);
        if opts.extrapolate {
            let x_new = to_normalized(&next);
            let trial = from_normalized(&(&x_new + (&x_new - &x_old) * beta), &ps)?;
            let trial_report = eval(&trial)?;
            let trial_value = objective_of(&trial_report, objective);
            if trial_value > next_value {
                next = trial;
                next_report = trial_report;
                next_value = trial_value;
                beta = (beta * 1.5).min(MAX_EXTRAPOLATION);
            } else {
                beta = (beta * 0.5).max(MIN_EXTRAPOLATION);
            }
        }
        trace.entries.push(TraceEntry {
            iteration: it,
            objective: next_value,
            power_used: next.total_power(),
            max_kkt_residual: out.kkt_residual,
            loaded: out.loaded,
        });
        let delta = next_value - value;
        ps = next;
        report = next_report;
        value = next_value;
        if delta.abs() < opts.convergence_tol {
            trace.converged = true;
            break;
        }
    }
    Ok(Solution {
        precoders: ps,
        report,
        trace,
    })
}

fn oma_solution(cs: &ChannelSet, config: &StrategyConfig, power: f64, samples: &[ChannelSet]) -> Result<Solution> {
    let ps = oma_precoders(cs, power)?;
    let report = ergodic_rates(samples, &ps, config, &REPORT_POLICY)?;
    Ok(Solution {
        trace: SolveTrace {
            entries: vec![TraceEntry {
                iteration: 0,
                objective: report.sum_rate,
                power_used: ps.total_power(),
                max_kkt_residual: 0.0,
                loaded: false,
            }],
            converged: true,
            warnings: Vec::new(),
        },
        precoders: ps,
        report,
    })
}

/// Optimizes precoders for the true channels of `cs`. Pass
/// [`ChannelSet::estimate_view`] to optimize for the transmitter's estimate.
/// OMA needs no optimization and returns MRT to the strongest user.
pub fn ao_solve(
    cs: &ChannelSet,
    config: &StrategyConfig,
    objective: Objective,
    init: &PrecoderSet,
    opts: &SolveOptions,
) -> Result<Solution> {
    let view = ChannelSet::from_channels(cs.true_channels().to_vec(), cs.variances().to_vec())?;
    if config.kind() == StrategyKind::Oma {
        return oma_solution(&view, config, init.power_budget(), std::slice::from_ref(cs));
    }
    run_ao(std::slice::from_ref(cs), config, objective, init, opts)
}

/// Sample-average approximation: optimizes the average over `n_samples`
/// conditional channels drawn around the estimates of `estimate_cs`.
/// Without `init`, starts from [`mrt_svd_init`] on the estimates.
pub fn saa_solve(
    estimate_cs: &ChannelSet,
    model: &CsitModel,
    n_samples: usize,
    config: &StrategyConfig,
    objective: Objective,
    init: Option<&PrecoderSet>,
    opts: &SolveOptions,
) -> Result<Solution> {
    let samples = if model.error_variances(estimate_cs.variances())?.iter().all(|v| *v == 0.0) {
        if n_samples == 0 {
            return Err(Error::Config("at least one conditional sample is required".into()));
        }
        vec![estimate_cs.estimate_view()]
    } else {
        sample_conditional(estimate_cs, model, n_samples, opts.seed)?
    };
    let start;
    let init = match init {
        Some(p) => p,
        None => {
            start = mrt_svd_init(estimate_cs, config, model.snr_power, PowerSplit::Uniform)?;
            &start
        }
    };
    if config.kind() == StrategyKind::Oma {
        return oma_solution(&estimate_cs.estimate_view(), config, init.power_budget(), &samples);
    }
    run_ao(&samples, config, objective, init, opts)
}

/// Subproblem of the sum objective at fixed equalizers and weights.
pub fn precoder_update_sumrate(
    samples: &[ChannelSet],
    state: &WmmseState,
    config: &StrategyConfig,
    opts: &SolveOptions,
) -> Result<(PrecoderSet, f64)> {
    precoder_update(samples, state, config, Objective::Sum, opts)
}

/// Subproblem of the max-min objective at fixed equalizers and weights.
pub fn precoder_update_maxmin(
    samples: &[ChannelSet],
    state: &WmmseState,
    config: &StrategyConfig,
    opts: &SolveOptions,
) -> Result<(PrecoderSet, f64)> {
    precoder_update(samples, state, config, Objective::MaxMin, opts)
}

/// Returns the new precoders and the subproblem's KKT residual.
fn precoder_update(
    samples: &[ChannelSet],
    state: &WmmseState,
    config: &StrategyConfig,
    objective: Objective,
    opts: &SolveOptions,
) -> Result<(PrecoderSet, f64)> {
    if state.weights.iter().flatten().any(|u| !(*u > 0.0)) {
        return Err(Error::Invariant("MMSE weights must be positive".into()));
    }
    let layout = stream_layout(config);
    let sur = build_surrogate(samples, state, &layout, state.precoders.power_budget())?;
    let agg = aggregate_for(&layout, &state.links, objective);
    let x_old = to_normalized(&state.precoders);
    let out = solve_inner(opts.inner_solver, &sur, &agg, &x_old, opts.inner_tol)?;
    Ok((from_normalized(&out.x, &state.precoders)?, out.kkt_residual))
}

/// Value of the natural-log surrogate objective, for tests.
#[cfg(test)]
fn surrogate_objective(
    samples: &[ChannelSet],
    state: &WmmseState,
    config: &StrategyConfig,
    objective: Objective,
    ps: &PrecoderSet,
) -> f64 {
    let layout = stream_layout(config);
    let sur = build_surrogate(samples, state, &layout, ps.power_budget()).unwrap();
    aggregate_for(&layout, &state.links, objective).eval(&sur.values(&to_normalized(ps)))
}
