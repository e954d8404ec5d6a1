//! Precoder initialization and the high-SNR achievability constructions.
//!
//! [`mrt_svd_init`] is the starting point of the optimizer. The
//! [`achievability_schedule`] plans reproduce the zero-forcing and
//! power-exponent constructions that attain each strategy's multiplexing
//! gain; [`realize_plan`] turns a plan into precoders at a given power.

use num_complex::Complex64;

use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::linalg::{leading_left_singular_vector, normalized, orthonormal_basis, project_out, CVec};
use crate::rate::{link_sinr, oma_precoders, PrecoderSet};
use crate::strategy::{stream_layout, StrategyConfig, StrategyKind, StreamLayout};

/// Relative tolerance below which an estimate is treated as dependent when
/// building a null space.
const NULL_SPACE_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PowerSplit {
    /// Equal power per stream; a common stream takes half the budget.
    Uniform,
    /// Equal power per private stream with the given fraction on the common
    /// stream.
    CommonFraction(f64),
}

impl Default for PowerSplit {
    fn default() -> Self {
        PowerSplit::Uniform
    }
}

fn scale(v: &CVec, power: f64) -> CVec {
    v * Complex64::new(power.max(0.0).sqrt(), 0.0)
}

/// MRT for streams with a single decoder, the leading left singular vector
/// of the stacked estimates for streams decoded by several users. The total
/// power equals `power`. OMA gets full power on the strongest user.
pub fn mrt_svd_init(cs: &ChannelSet, config: &StrategyConfig, power: f64, split: PowerSplit) -> Result<PrecoderSet> {
    if !(power > 0.0) || !power.is_finite() {
        return Err(Error::Config(format!("power must be positive, got {power}")));
    }
    if cs.num_users() != config.num_users() {
        return Err(Error::Dimension(format!(
            "strategy has {} users, channels have {}",
            config.num_users(),
            cs.num_users()
        )));
    }
    if config.kind() == StrategyKind::Oma {
        return oma_precoders(cs, power);
    }
    let layout = stream_layout(config);
    let k = layout.num_users();
    let common_fraction = match (layout.common_stream(), split) {
        (None, _) => 0.0,
        (Some(_), PowerSplit::Uniform) => 0.5,
        (Some(_), PowerSplit::CommonFraction(f)) => {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("common power fraction must lie in [0, 1], got {f}")));
            }
            f
        }
    };
    let per_private = power * (1.0 - common_fraction) / k as f64;
    let est = cs.estimates();
    let direction = |s: usize| -> Result<CVec> {
        let cols: Vec<&CVec> = layout.decoders(s).iter().map(|&j| &est[j]).collect();
        leading_left_singular_vector(&cols)
    };
    let private = (0..k)
        .map(|s| Ok(scale(&direction(s)?, per_private)))
        .collect::<Result<Vec<_>>>()?;
    let common = match layout.common_stream() {
        Some(c) => Some(scale(&direction(c)?, power * common_fraction)),
        None => None,
    };
    PrecoderSet::new(private, common, power)
}

/// Unit-norm zero-forcing directions: entry `i` is the estimate of
/// `serve[i]` projected onto the orthogonal complement of the estimates of
/// `null_sets[i]`.
pub fn zfbf_precoders(cs: &ChannelSet, serve: &[usize], null_sets: &[Vec<usize>]) -> Result<Vec<CVec>> {
    if serve.len() != null_sets.len() {
        return Err(Error::Dimension("one null set per served user is required".into()));
    }
    let m = cs.num_antennas();
    let est = cs.estimates();
    serve
        .iter()
        .zip(null_sets)
        .map(|(&k, nulls)| {
            if k >= cs.num_users() || nulls.iter().any(|&j| j >= cs.num_users()) {
                return Err(Error::Dimension(format!("user index out of range in ZF set for user {k}")));
            }
            if nulls.len() >= m {
                return Err(Error::Infeasible(format!(
                    "cannot null {} users with {m} antennas",
                    nulls.len()
                )));
            }
            let cols: Vec<&CVec> = nulls.iter().map(|&j| &est[j]).collect();
            let basis = orthonormal_basis(&cols, NULL_SPACE_TOL);
            let w = project_out(&est[k], &basis);
            if w.norm() <= NULL_SPACE_TOL * est[k].norm() {
                return Err(Error::Infeasible(format!(
                    "user {k} lies in the span of its null set"
                )));
            }
            normalized(&w)
        })
        .collect()
}

/// Per-stream power exponents: stream `s` gets power proportional to
/// `P^exponents[s]`, inactive streams get nothing.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerSchedule {
    pub exponents: Vec<f64>,
    pub active: Vec<bool>,
}

impl PowerSchedule {
    pub fn new(exponents: Vec<f64>, active: Vec<bool>) -> Result<Self> {
        if exponents.len() != active.len() {
            return Err(Error::Dimension("exponents and activity flags differ in length".into()));
        }
        if let Some(e) = exponents.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(Error::Config(format!("power exponent {e} outside [0, 1]")));
        }
        Ok(Self { exponents, active })
    }

    /// `P^e` per active stream, scaled by `min(1, P / sum)`.
    pub fn powers(&self, power: f64) -> Vec<f64> {
        let raw: Vec<f64> = self
            .exponents
            .iter()
            .zip(&self.active)
            .map(|(e, a)| if *a { power.powf(*e) } else { 0.0 })
            .collect();
        let total: f64 = raw.iter().sum();
        let s = if total > power { power / total } else { 1.0 };
        raw.iter().map(|p| p * s).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    NomaSum,
    NomaMmf,
    MulpSum,
    MulpMmf,
    RsSum,
    RsMmf,
}

impl Scheme {
    pub fn kind(self) -> StrategyKind {
        match self {
            Scheme::NomaSum | Scheme::NomaMmf => StrategyKind::Noma,
            Scheme::MulpSum | Scheme::MulpMmf => StrategyKind::Mulp,
            Scheme::RsSum | Scheme::RsMmf => StrategyKind::Rs1,
        }
    }
}

/// How a stream's direction is chosen when a plan is realized.
#[derive(Clone, Debug, PartialEq)]
pub enum Direction {
    /// Zero-forcing against the listed users' estimates.
    ZeroForce(Vec<usize>),
    /// Leading singular direction of the stream's decoders.
    Svd,
    /// Leading singular direction of all users.
    AllUsers,
}

/// Streams are indexed as in [`StreamLayout`]: private streams by user, then
/// the common stream.
#[derive(Clone, Debug, PartialEq)]
pub struct AchievabilityPlan {
    pub scheme: Scheme,
    pub config: StrategyConfig,
    pub schedule: PowerSchedule,
    pub directions: Vec<Direction>,
    /// Claimed growth exponent of each active stream's SINR; none in a
    /// zero-gain plan.
    pub sinr_exponents: Vec<Option<f64>>,
    /// Fraction of the common stream's gain given to served users.
    pub common_split: Option<f64>,
    /// The construction attains no multiplexing gain in this regime.
    pub zero_gain: bool,
}

/// Power exponents and zero-forcing sets of the construction attaining the
/// given scheme's multiplexing gain. Users are labelled so that the first
/// user of each group decodes the whole group; for rate splitting with fewer
/// antennas than users, the first `M` users receive private streams.
pub fn achievability_schedule(scheme: Scheme, m: usize, k: usize, groups: usize, alpha: f64) -> Result<AchievabilityPlan> {
    if m == 0 || k == 0 {
        return Err(Error::Config("M and K must be positive".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let all_but = |set: &[usize], me: usize| -> Vec<usize> { set.iter().copied().filter(|&j| j != me).collect() };
    let users: Vec<usize> = (0..k).collect();
    let mut zero_gain = false;
    let mut common_split = None;
    let (config, exponents, active, directions, sinr): (StrategyConfig, Vec<f64>, Vec<bool>, Vec<Direction>, Vec<Option<f64>>) =
        match scheme {
            Scheme::NomaMmf | Scheme::NomaSum => {
                let config = StrategyConfig::noma(k, groups)?;
                let grouping = config.grouping().expect("NOMA has a grouping").clone();
                let g = k / groups;
                let mut exps = vec![0.0; k];
                let mut act = vec![false; k];
                let mut dirs = vec![Direction::Svd; k];
                let mut sinr = vec![None; k];
                if scheme == Scheme::NomaMmf {
                    if groups > 1 && m < k - g + 1 {
                        zero_gain = true;
                    }
                    for grp in grouping.groups() {
                        for (i, &u) in grp.iter().enumerate() {
                            // Position in the decoding sequence; 0 is decoded first.
                            let pos = g - 1 - i;
                            act[u] = true;
                            if groups == 1 {
                                exps[u] = (g - pos) as f64 / g as f64;
                                sinr[u] = Some(1.0 / g as f64);
                            } else {
                                exps[u] = 1.0 - pos as f64 * alpha / g as f64;
                                sinr[u] = (!zero_gain).then_some(alpha / g as f64);
                                if !zero_gain {
                                    let others: Vec<usize> = users.iter().copied().filter(|j| !grp.contains(j)).collect();
                                    dirs[u] = Direction::ZeroForce(others);
                                }
                            }
                        }
                    }
                } else {
                    // One stream per group, to the user decoding the whole group.
                    let served: Vec<usize> = grouping.groups().iter().map(|grp| grp[0]).take(m.min(groups)).collect();
                    let multi = served.len() as f64 * alpha >= 1.0 && served.len() > 1;
                    let served = if multi { served } else { served[..1].to_vec() };
                    for &u in &served {
                        act[u] = true;
                        exps[u] = 1.0;
                        if multi {
                            dirs[u] = Direction::ZeroForce(all_but(&served, u));
                            sinr[u] = Some(alpha);
                        } else {
                            sinr[u] = Some(1.0);
                        }
                    }
                }
                (config, exps, act, dirs, sinr)
            }
            Scheme::MulpSum | Scheme::MulpMmf => {
                let config = StrategyConfig::mulp(k)?;
                let mut exps = vec![1.0; k];
                let mut act = vec![false; k];
                let mut dirs = vec![Direction::Svd; k];
                let mut sinr = vec![None; k];
                if scheme == Scheme::MulpMmf {
                    if m < k {
                        zero_gain = true;
                        act = vec![true; k];
                    } else {
                        for u in 0..k {
                            act[u] = true;
                            dirs[u] = Direction::ZeroForce(all_but(&users, u));
                            sinr[u] = Some(alpha);
                        }
                    }
                } else {
                    let n = m.min(k);
                    if n > 1 && n as f64 * alpha >= 1.0 {
                        let served: Vec<usize> = (0..n).collect();
                        for &u in &served {
                            act[u] = true;
                            dirs[u] = Direction::ZeroForce(all_but(&served, u));
                            sinr[u] = Some(alpha);
                        }
                    } else {
                        act[0] = true;
                        sinr[0] = Some(1.0);
                    }
                }
                for (e, a) in exps.iter_mut().zip(&act) {
                    if !a {
                        *e = 0.0;
                    }
                }
                (config, exps, act, dirs, sinr)
            }
            Scheme::RsSum | Scheme::RsMmf => {
                let config = StrategyConfig::rs1(k)?;
                let n = m.min(k);
                let beta = if scheme == Scheme::RsMmf && m < k {
                    let b = alpha.min(1.0 / (1 + k - m) as f64);
                    common_split = Some(if b < alpha {
                        0.0
                    } else if alpha < 1.0 {
                        ((1.0 - alpha - alpha * k as f64 + alpha * m as f64) * m as f64 / ((1.0 - alpha) * k as f64))
                            .clamp(0.0, 1.0)
                    } else {
                        1.0
                    });
                    b
                } else {
                    alpha
                };
                let served: Vec<usize> = (0..n).collect();
                let mut exps = vec![0.0; k + 1];
                let mut act = vec![false; k + 1];
                let mut dirs = vec![Direction::Svd; k + 1];
                let mut sinr = vec![None; k + 1];
                for &u in &served {
                    act[u] = true;
                    exps[u] = beta;
                    sinr[u] = Some(alpha.min(beta));
                    dirs[u] = if n > 1 {
                        Direction::ZeroForce(all_but(&served, u))
                    } else {
                        Direction::Svd
                    };
                }
                act[k] = true;
                exps[k] = 1.0;
                dirs[k] = Direction::AllUsers;
                sinr[k] = Some(1.0 - beta);
                (config, exps, act, dirs, sinr)
            }
        };
    Ok(AchievabilityPlan {
        scheme,
        config,
        schedule: PowerSchedule::new(exponents, active)?,
        directions,
        sinr_exponents: sinr,
        common_split,
        zero_gain,
    })
}

/// Precoders implementing `plan` at total power `power`, with directions
/// computed from the estimates of `cs`.
pub fn realize_plan(plan: &AchievabilityPlan, cs: &ChannelSet, power: f64) -> Result<PrecoderSet> {
    let layout = stream_layout(&plan.config);
    if cs.num_users() != layout.num_users() {
        return Err(Error::Dimension("plan and channels disagree on K".into()));
    }
    let powers = plan.schedule.powers(power);
    let est = cs.estimates();
    let mut streams = Vec::with_capacity(layout.num_streams());
    for (s, dir) in plan.directions.iter().enumerate() {
        if !plan.schedule.active[s] {
            streams.push(crate::linalg::zeros(cs.num_antennas()));
            continue;
        }
        let unit = match dir {
            Direction::ZeroForce(nulls) => zfbf_precoders(cs, &[s], std::slice::from_ref(nulls))?.remove(0),
            Direction::Svd => {
                let cols: Vec<&CVec> = layout.decoders(s).iter().map(|&j| &est[j]).collect();
                leading_left_singular_vector(&cols)?
            }
            Direction::AllUsers => leading_left_singular_vector(&est.iter().collect::<Vec<_>>())?,
        };
        streams.push(scale(&unit, powers[s]));
    }
    let k = layout.num_users();
    let common = if layout.common_stream().is_some() { streams.pop() } else { None };
    debug_assert_eq!(streams.len(), k);
    PrecoderSet::new(streams, common, power)
}

/// Realizes the construction of `scheme` for an arbitrary `config` of the
/// same kind: users are relabelled so that each NOMA group's full-SIC user
/// takes the role the plan assigns to the group's first user. `None` when
/// the construction has no multiplexing gain.
pub fn construction_init(
    scheme: Scheme,
    cs: &ChannelSet,
    config: &StrategyConfig,
    power: f64,
    alpha: f64,
) -> Result<Option<PrecoderSet>> {
    if scheme.kind() != config.kind() {
        return Err(Error::Usage(format!("scheme {scheme:?} does not match a {:?} config", config.kind())));
    }
    let k = cs.num_users();
    let m = cs.num_antennas();
    let plan = achievability_schedule(scheme, m, k, config.num_groups().unwrap_or(1), alpha)?;
    if plan.zero_gain {
        return Ok(None);
    }
    let mut perm: Vec<usize> = (0..k).collect();
    if scheme.kind() == StrategyKind::Rs1 {
        // The plan serves its first users; those should be the strongest.
        let est = cs.estimates();
        perm.sort_by(|&a, &b| est[b].norm_squared().total_cmp(&est[a].norm_squared()).then(a.cmp(&b)));
    }
    if let (Some(pg), Some(orders)) = (plan.config.grouping(), config.decoding_orders()) {
        for (grp, seq) in pg.groups().iter().zip(orders) {
            for (i, &u) in grp.iter().enumerate() {
                perm[u] = seq[seq.len() - 1 - i];
            }
        }
    }
    let pick = |v: &[CVec]| perm.iter().map(|&u| v[u].clone()).collect::<Vec<_>>();
    let variances: Vec<f64> = perm.iter().map(|&u| cs.variances()[u]).collect();
    let relabelled = ChannelSet::from_parts(pick(cs.estimates()), pick(cs.errors()), variances)?;
    let ps = realize_plan(&plan, &relabelled, power)?;
    let mut private = vec![crate::linalg::zeros(m); k];
    for (u, p) in ps.private().iter().enumerate() {
        private[perm[u]] = p.clone();
    }
    PrecoderSet::new(private, ps.common().cloned(), power).map(Some)
}

/// SINR of each stream at its weakest decoder, on the true channels.
pub fn stream_sinrs(cs: &ChannelSet, ps: &PrecoderSet, layout: &StreamLayout) -> Result<Vec<f64>> {
    (0..layout.num_streams())
        .map(|s| {
            let mut worst = f64::INFINITY;
            for &j in layout.decoders(s) {
                let link = crate::strategy::Link { decoder: j, stream: s };
                let intf = layout.interferers(link)?;
                worst = worst.min(link_sinr(&cs.true_channels()[j], ps, s, &intf));
            }
            Ok(worst)
        })
        .collect()
}

/// Fitted slope of one stream's SINR against `log2(P)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExponentCheck {
    pub stream: usize,
    pub claimed: f64,
    pub fitted: f64,
}

/// Realizes `plan` on `n_channels` Rayleigh draws at every SNR of
/// `snr_grid_db` and fits, per active stream, the mean over draws of
/// `log2(SINR)` against `log2(P)`. With `alpha < 1` the CSIT error follows
/// `P^-alpha` with common random numbers across the grid.
pub fn exponent_check(plan: &AchievabilityPlan, m: usize, alpha: f64, snr_grid_db: &[f64], n_channels: usize, seed: u64) -> Result<Vec<ExponentCheck>> {
    if n_channels == 0 {
        return Err(Error::Config("at least one channel draw is required".into()));
    }
    let layout = stream_layout(&plan.config);
    let k = layout.num_users();
    let mut mean = vec![vec![0.0; snr_grid_db.len()]; layout.num_streams()];
    for draw in 0..n_channels as u64 {
        let base = crate::channel::sample_channels(k, m, &vec![1.0; k], seed.wrapping_add(2 * draw))?;
        for (i, db) in snr_grid_db.iter().enumerate() {
            let p = 10f64.powf(db / 10.0);
            let cs = if alpha < 1.0 {
                let model = crate::channel::CsitModel::scaled(alpha, p)?;
                crate::channel::apply_csit_error(&base, &model, seed.wrapping_add(2 * draw + 1))?
            } else {
                base.clone()
            };
            let ps = realize_plan(plan, &cs, p)?;
            for (s, v) in stream_sinrs(&cs, &ps, &layout)?.into_iter().enumerate() {
                mean[s][i] += v.log2() / n_channels as f64;
            }
        }
    }
    let mut out = Vec::new();
    for (s, claim) in plan.sinr_exponents.iter().enumerate() {
        if let (true, Some(claimed)) = (plan.schedule.active[s], claim) {
            let pts: Vec<(f64, f64)> = snr_grid_db.iter().copied().zip(mean[s].iter().copied()).collect();
            out.push(ExponentCheck {
                stream: s,
                claimed: *claimed,
                fitted: crate::dof::fit_slope(&pts)?.fitted_slope,
            });
        }
    }
    Ok(out)
}
