//! Achievable rates for a precoder set under a decode structure.
//!
//! Every rate is `log2(1 + SINR)` in bits/s/Hz with unit noise. A link
//! `(j, s)` is user `j` decoding stream `s` after removing the streams that
//! precede `s` in its SIC sequence; the stream's rate is the minimum over its
//! decoders. For rate splitting the common rate is shared out with an
//! [`AllocationPolicy`] and added to the private rates.

use std::collections::BTreeMap;

use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::linalg::{gain, norm_sqr, CVec};
use crate::strategy::{stream_layout, Link, StrategyConfig, StrategyKind, StreamLayout};

/// Relative slack on the total power constraint.
pub const POWER_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct PrecoderSet {
    private: Vec<CVec>,
    common: Option<CVec>,
    power_budget: f64,
}

impl PrecoderSet {
    pub fn new(private: Vec<CVec>, common: Option<CVec>, power_budget: f64) -> Result<Self> {
        let m = private
            .first()
            .map(|p| p.len())
            .ok_or_else(|| Error::Dimension("at least one private precoder is required".into()))?;
        if private.iter().chain(common.iter()).any(|p| p.len() != m) {
            return Err(Error::Dimension(format!("all precoders must have length {m}")));
        }
        if !(power_budget.is_finite() && power_budget > 0.0) {
            return Err(Error::Config(format!("power budget must be positive, got {power_budget}")));
        }
        let ps = Self {
            private,
            common,
            power_budget,
        };
        let used = ps.total_power();
        if !(used <= power_budget * (1.0 + POWER_TOL)) {
            return Err(Error::Infeasible(format!(
                "precoders use power {used}, budget is {power_budget}"
            )));
        }
        Ok(ps)
    }

    /// All-zero precoders.
    pub fn zeros(num_users: usize, num_antennas: usize, with_common: bool, power_budget: f64) -> Result<Self> {
        let z = crate::linalg::zeros(num_antennas);
        Self::new(vec![z.clone(); num_users], with_common.then_some(z), power_budget)
    }

    pub fn num_users(&self) -> usize {
        self.private.len()
    }

    pub fn num_antennas(&self) -> usize {
        self.private[0].len()
    }

    /// Private streams first, then the common stream if present.
    pub fn num_streams(&self) -> usize {
        self.private.len() + usize::from(self.common.is_some())
    }

    pub fn stream(&self, s: usize) -> &CVec {
        if s < self.private.len() {
            &self.private[s]
        } else {
            self.common.as_ref().expect("stream index out of range")
        }
    }

    pub fn private(&self) -> &[CVec] {
        &self.private
    }

    pub fn common(&self) -> Option<&CVec> {
        self.common.as_ref()
    }

    pub fn power_budget(&self) -> f64 {
        self.power_budget
    }

    pub fn total_power(&self) -> f64 {
        self.private.iter().chain(self.common.iter()).map(norm_sqr).sum()
    }

    /// Same directions without the common stream.
    pub fn without_common(&self) -> Self {
        Self {
            private: self.private.clone(),
            common: None,
            power_budget: self.power_budget,
        }
    }

    pub fn with_common(&self, common: CVec) -> Result<Self> {
        Self::new(self.private.clone(), Some(common), self.power_budget)
    }
}

/// How the common rate is divided among users.
#[derive(Clone, Debug, PartialEq)]
pub enum AllocationPolicy {
    Equal,
    /// Raise the smallest per-user totals first (water-filling).
    MmfEqualizing,
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateReport {
    /// Per-user totals: private rate plus common share.
    pub per_user_rates: Vec<f64>,
    /// Rate of each user's own stream.
    pub private_rates: Vec<f64>,
    pub common_rate: Option<f64>,
    pub common_allocation: Option<Vec<f64>>,
    pub sum_rate: f64,
    pub mmf_rate: f64,
    pub link_rates: BTreeMap<Link, f64>,
}

impl RateReport {
    /// Report with every rate set to NaN; used for failed campaign cells.
    pub fn failed(num_users: usize, with_common: bool) -> Self {
        Self {
            per_user_rates: vec![f64::NAN; num_users],
            private_rates: vec![f64::NAN; num_users],
            common_rate: with_common.then_some(f64::NAN),
            common_allocation: with_common.then(|| vec![f64::NAN; num_users]),
            sum_rate: f64::NAN,
            mmf_rate: f64::NAN,
            link_rates: BTreeMap::new(),
        }
    }
}

/// `|h^H p_s|^2 / (1 + sum_{q in interferers} |h^H p_q|^2)`.
pub fn link_sinr(h: &CVec, ps: &PrecoderSet, stream: usize, interferers: &[usize]) -> f64 {
    let denom = 1.0 + interferers.iter().map(|&q| gain(h, ps.stream(q))).sum::<f64>();
    gain(h, ps.stream(stream)) / denom
}

fn check_dims(cs: &ChannelSet, ps: &PrecoderSet, layout: &StreamLayout) -> Result<()> {
    if cs.num_users() != layout.num_users() || ps.num_users() != layout.num_users() {
        return Err(Error::Dimension(format!(
            "{} channels and {} precoders for a {}-user layout",
            cs.num_users(),
            ps.num_users(),
            layout.num_users()
        )));
    }
    if ps.num_streams() != layout.num_streams() {
        return Err(Error::Dimension(format!(
            "layout has {} streams but {} precoders were given",
            layout.num_streams(),
            ps.num_streams()
        )));
    }
    if cs.num_antennas() != ps.num_antennas() {
        return Err(Error::Dimension(format!(
            "channels have {} antennas, precoders {}",
            cs.num_antennas(),
            ps.num_antennas()
        )));
    }
    Ok(())
}

/// Rate of user `j` decoding stream `k` on the true channel.
pub fn noma_link_rate(cs: &ChannelSet, ps: &PrecoderSet, layout: &StreamLayout, j: usize, k: usize) -> Result<f64> {
    check_dims(cs, ps, layout)?;
    let link = Link { decoder: j, stream: k };
    let intf = layout.interferers(link)?;
    Ok((1.0 + link_sinr(&cs.true_channels()[j], ps, k, &intf)).log2())
}

/// Rates of every link of `layout` on the true channels of `cs`.
pub fn link_rates(cs: &ChannelSet, ps: &PrecoderSet, layout: &StreamLayout) -> Result<BTreeMap<Link, f64>> {
    check_dims(cs, ps, layout)?;
    let mut out = BTreeMap::new();
    for link in layout.links() {
        let intf = layout.interferers(link)?;
        let sinr = link_sinr(&cs.true_channels()[link.decoder], ps, link.stream, &intf);
        out.insert(link, (1.0 + sinr).log2());
    }
    Ok(out)
}

/// Common-rate shares that equalize the smallest totals. Returns the shares
/// and the resulting water level.
pub fn waterfill_common(private: &[f64], common_rate: f64) -> (Vec<f64>, f64) {
    let mut sorted: Vec<f64> = private.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut prefix = 0.0;
    let mut level = f64::NAN;
    for i in 0..sorted.len() {
        prefix += sorted[i];
        let cand = (common_rate + prefix) / (i + 1) as f64;
        if i + 1 == sorted.len() || cand <= sorted[i + 1] {
            level = cand;
            break;
        }
    }
    let shares = private.iter().map(|r| (level - r).max(0.0)).collect();
    (shares, level)
}

fn allocate(policy: &AllocationPolicy, private: &[f64], common_rate: f64) -> Result<Vec<f64>> {
    let k = private.len();
    match policy {
        AllocationPolicy::Equal => Ok(vec![common_rate / k as f64; k]),
        AllocationPolicy::MmfEqualizing => Ok(waterfill_common(private, common_rate).0),
        AllocationPolicy::Explicit(c) => {
            if c.len() != k {
                return Err(Error::Dimension(format!("expected {k} common shares, got {}", c.len())));
            }
            let total: f64 = c.iter().sum();
            if c.iter().any(|x| !(*x >= 0.0)) || total > common_rate * (1.0 + 1e-12) + 1e-12 {
                return Err(Error::Invariant(format!(
                    "common allocation {c:?} exceeds the common rate {common_rate}"
                )));
            }
            Ok(c.clone())
        }
    }
}

/// Turns link rates into a report: stream rate = min over decoders, common
/// rate shared by `policy`.
pub fn aggregate(layout: &StreamLayout, links: BTreeMap<Link, f64>, policy: &AllocationPolicy) -> Result<RateReport> {
    let k = layout.num_users();
    let stream_rate = |s: usize| -> f64 {
        layout
            .decoders(s)
            .iter()
            .map(|&j| links[&Link { decoder: j, stream: s }])
            .fold(f64::INFINITY, f64::min)
    };
    let private_rates: Vec<f64> = (0..k).map(stream_rate).collect();
    let (per_user_rates, common_rate, common_allocation) = match layout.common_stream() {
        Some(c) => {
            let rc = stream_rate(c);
            let shares = allocate(policy, &private_rates, rc)?;
            let totals = private_rates.iter().zip(&shares).map(|(a, b)| a + b).collect();
            (totals, Some(rc), Some(shares))
        }
        None => (private_rates.clone(), None, None),
    };
    let sum_rate = private_rates.iter().sum::<f64>() + common_rate.unwrap_or(0.0);
    let mmf_rate = per_user_rates.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(RateReport {
        per_user_rates,
        private_rates,
        common_rate,
        common_allocation,
        sum_rate,
        mmf_rate,
        link_rates: links,
    })
}

/// Rates of any strategy on the true channels.
pub fn evaluate(cs: &ChannelSet, ps: &PrecoderSet, config: &StrategyConfig, policy: &AllocationPolicy) -> Result<RateReport> {
    let layout = stream_layout(config);
    aggregate(&layout, link_rates(cs, ps, &layout)?, policy)
}

pub fn noma_rates(cs: &ChannelSet, ps: &PrecoderSet, config: &StrategyConfig) -> Result<RateReport> {
    if config.kind() != StrategyKind::Noma {
        return Err(Error::Usage("noma_rates needs a NOMA configuration".into()));
    }
    evaluate(cs, ps, config, &AllocationPolicy::Equal)
}

pub fn mulp_rates(cs: &ChannelSet, ps: &PrecoderSet) -> Result<RateReport> {
    if ps.common().is_some() {
        return Err(Error::Dimension("MU-LP precoders carry no common stream".into()));
    }
    evaluate(cs, ps, &StrategyConfig::mulp(cs.num_users())?, &AllocationPolicy::Equal)
}

pub fn rs_rates(cs: &ChannelSet, ps: &PrecoderSet, policy: &AllocationPolicy) -> Result<RateReport> {
    if ps.common().is_none() {
        return Err(Error::Dimension("rate splitting needs a common precoder".into()));
    }
    evaluate(cs, ps, &StrategyConfig::rs1(cs.num_users())?, policy)
}

/// Index of the user with the largest channel norm, ties to the lowest index.
pub fn strongest_user(channels: &[CVec]) -> usize {
    let mut best = 0;
    for (k, h) in channels.iter().enumerate() {
        if norm_sqr(h) > norm_sqr(&channels[best]) {
            best = k;
        }
    }
    best
}

/// Full power matched to the strongest estimated channel, nothing else.
pub fn oma_precoders(cs: &ChannelSet, power: f64) -> Result<PrecoderSet> {
    let k = strongest_user(cs.estimates());
    let mut ps = vec![crate::linalg::zeros(cs.num_antennas()); cs.num_users()];
    let dir = crate::linalg::normalized(&cs.estimates()[k])?;
    ps[k] = dir * num_complex::Complex64::new(power.sqrt(), 0.0);
    PrecoderSet::new(ps, None, power)
}

/// Only the strongest user is served, with MRT at full power.
pub fn oma_rates(cs: &ChannelSet, power: f64) -> Result<RateReport> {
    let truth = ChannelSet::from_channels(cs.true_channels().to_vec(), cs.variances().to_vec())?;
    let ps = oma_precoders(&truth, power)?;
    evaluate(cs, &ps, &StrategyConfig::oma(cs.num_users())?, &AllocationPolicy::Equal)
}

/// Ergodic rates over conditional samples: each link rate is averaged over
/// the samples before the min over decoders and the user aggregation.
pub fn ergodic_rates(
    samples: &[ChannelSet],
    ps: &PrecoderSet,
    config: &StrategyConfig,
    policy: &AllocationPolicy,
) -> Result<RateReport> {
    if samples.is_empty() {
        return Err(Error::Usage("ergodic rates need at least one sample".into()));
    }
    let layout = stream_layout(config);
    let mut acc: BTreeMap<Link, f64> = BTreeMap::new();
    for cs in samples {
        if cs.num_antennas() != samples[0].num_antennas() {
            return Err(Error::Dimension("samples disagree on the antenna count".into()));
        }
        for (l, r) in link_rates(cs, ps, &layout)? {
            *acc.entry(l).or_insert(0.0) += r;
        }
    }
    let n = samples.len() as f64;
    for v in acc.values_mut() {
        *v /= n;
    }
    aggregate(&layout, acc, policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::sample_channels;
    use approx::assert_relative_eq;
    use num_complex::Complex64;

    fn cv(v: &[(f64, f64)]) -> CVec {
        CVec::from_vec(v.iter().map(|&(a, b)| Complex64::new(a, b)).collect())
    }

    fn scaled(v: &CVec, s: f64) -> CVec {
        v * Complex64::new(s, 0.0)
    }

    #[test]
    fn zero_precoders_give_zero_rates() {
        let cs = sample_channels(4, 3, &[1.0; 4], 1).unwrap();
        let cfg = StrategyConfig::noma(4, 2).unwrap();
        let ps = PrecoderSet::zeros(4, 3, false, 10.0).unwrap();
        let r = noma_rates(&cs, &ps, &cfg).unwrap();
        assert!(r.link_rates.values().all(|&v| v == 0.0));
        assert_eq!(r.sum_rate, 0.0);
    }

    #[test]
    fn two_user_hand_evaluation() {
        let (p1, p2) = (3.0f64, 5.0f64);
        let cs = ChannelSet::from_channels(vec![cv(&[(1.0, 0.0), (0.0, 0.0)]), cv(&[(0.0, 0.0), (1.0, 0.0)])], vec![1.0; 2]).unwrap();
        let e1 = cv(&[(1.0, 0.0), (0.0, 0.0)]);
        let ps = PrecoderSet::new(vec![scaled(&e1, p1.sqrt()), scaled(&e1, p2.sqrt())], None, 8.0).unwrap();
        let layout = stream_layout(&StrategyConfig::noma(2, 1).unwrap());
        let r12 = noma_link_rate(&cs, &ps, &layout, 0, 1).unwrap();
        let r22 = noma_link_rate(&cs, &ps, &layout, 1, 1).unwrap();
        assert_relative_eq!(r12, (1.0 + p2 / (1.0 + p1)).log2(), epsilon = 1e-14);
        assert_eq!(r22, 0.0);
        assert!(matches!(noma_link_rate(&cs, &ps, &layout, 1, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn two_user_building_block_quantities() {
        let cs = sample_channels(2, 2, &[1.0; 2], 5).unwrap();
        let raw = sample_channels(2, 2, &[1.0; 2], 6).unwrap();
        let ps = PrecoderSet::new(raw.true_channels().to_vec(), None, 100.0).unwrap();
        let h = cs.true_channels();
        let g = |a: usize, b: usize| gain(&h[a], &ps.private()[b]);
        // A: stream 2 at user 1, B: stream 2 at user 2, stream 1 at user 1 after SIC.
        let a = g(0, 1) / (1.0 + g(0, 0));
        let b = g(1, 1) / (1.0 + g(1, 0));
        let r = noma_rates(&cs, &ps, &StrategyConfig::noma(2, 1).unwrap()).unwrap();
        assert_relative_eq!(r.per_user_rates[1], (1.0 + a).log2().min((1.0 + b).log2()), epsilon = 1e-14);
        assert_relative_eq!(r.per_user_rates[0], (1.0 + g(0, 0)).log2(), epsilon = 1e-14);
    }

    #[test]
    fn orthonormal_noma_example() {
        let p = 100.0f64;
        let cs = ChannelSet::from_channels(vec![cv(&[(1.0, 0.0), (0.0, 0.0)]), cv(&[(0.0, 0.0), (1.0, 0.0)])], vec![1.0; 2]).unwrap();
        let ps = PrecoderSet::new(
            vec![cv(&[((p / 2.0).sqrt(), 0.0), (0.0, 0.0)]), cv(&[(0.0, 0.0), ((p / 2.0).sqrt(), 0.0)])],
            None,
            p,
        )
        .unwrap();
        let r = noma_rates(&cs, &ps, &StrategyConfig::noma(2, 1).unwrap()).unwrap();
        assert_relative_eq!(r.per_user_rates[0], (1.0 + p / 2.0).log2(), epsilon = 1e-14);
    }

    #[test]
    fn zero_forced_mulp_has_no_cross_terms() {
        let h = vec![cv(&[(1.0, 0.0), (0.0, 0.0)]), cv(&[(0.0, 0.0), (0.0, 2.0)])];
        let cs = ChannelSet::from_channels(h.clone(), vec![1.0; 2]).unwrap();
        let ps = PrecoderSet::new(vec![scaled(&h[0], 2.0), scaled(&h[1], 1.5)], None, 20.0).unwrap();
        let r = mulp_rates(&cs, &ps).unwrap();
        assert_relative_eq!(r.per_user_rates[0], 5f64.log2(), epsilon = 1e-14);
        assert_relative_eq!(r.per_user_rates[1], (1.0 + 9.0 * 4.0f64).log2(), epsilon = 1e-14);
    }

    #[test]
    fn mulp_matches_scalar_oracle() {
        let cs = sample_channels(3, 4, &[1.0; 3], 11).unwrap();
        let pre = sample_channels(3, 4, &[1.0; 3], 12).unwrap();
        let ps = PrecoderSet::new(pre.true_channels().to_vec(), None, 100.0).unwrap();
        let r = mulp_rates(&cs, &ps).unwrap();
        for k in 0..3 {
            let h = &cs.true_channels()[k];
            let mut num = 0.0;
            let mut den = 1.0;
            for q in 0..3 {
                let mut z = Complex64::new(0.0, 0.0);
                for i in 0..4 {
                    z += h[i].conj() * ps.private()[q][i];
                }
                if q == k {
                    num = z.norm_sqr();
                } else {
                    den += z.norm_sqr();
                }
            }
            assert_relative_eq!(r.per_user_rates[k], (1.0 + num / den).log2(), epsilon = 1e-13);
        }
    }

    #[test]
    fn rs_with_zero_common_equals_mulp() {
        let cs = sample_channels(3, 2, &[1.0; 3], 2).unwrap();
        let pre = sample_channels(3, 2, &[1.0; 3], 3).unwrap();
        let mulp = PrecoderSet::new(pre.true_channels().to_vec(), None, 100.0).unwrap();
        let rs = mulp.with_common(crate::linalg::zeros(2)).unwrap();
        let a = mulp_rates(&cs, &mulp).unwrap();
        let b = rs_rates(&cs, &rs, &AllocationPolicy::Equal).unwrap();
        assert_eq!(b.common_rate, Some(0.0));
        assert_eq!(a.per_user_rates, b.per_user_rates);
        assert_eq!(a.sum_rate, b.sum_rate);
    }

    #[test]
    fn allocation_policies() {
        let shares = allocate(&AllocationPolicy::Equal, &[0.0; 6], 1.2).unwrap();
        assert!(shares.iter().all(|c| (c - 0.2).abs() < 1e-15));
        let (c, level) = waterfill_common(&[0.1, 0.5], 0.6);
        assert_relative_eq!(c[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(c[1], 0.1, epsilon = 1e-15);
        assert_relative_eq!(level, 0.6, epsilon = 1e-15);
        assert!(matches!(
            allocate(&AllocationPolicy::Explicit(vec![0.5, 0.5]), &[0.0, 0.0], 0.6),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn waterfill_agrees_with_bisection_oracle() {
        let private = [0.3, 2.0, 0.1, 1.1, 0.7];
        for rc in [0.0, 0.05, 0.4, 1.7, 6.0] {
            let (c, level) = waterfill_common(&private, rc);
            let used = |l: f64| private.iter().map(|r| (l - r).max(0.0)).sum::<f64>();
            let (mut lo, mut hi) = (0.1, 10.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if used(mid) < rc {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            assert_relative_eq!(level, hi, epsilon = 1e-12);
            assert_relative_eq!(c.iter().sum::<f64>(), rc, epsilon = 1e-12);
        }
    }

    #[test]
    fn oma_examples() {
        let cs = ChannelSet::from_channels(vec![cv(&[(2.0, 0.0)]), cv(&[(0.0, 1.0)])], vec![1.0; 2]).unwrap();
        let r = oma_rates(&cs, 10.0).unwrap();
        assert_relative_eq!(r.sum_rate, 41f64.log2(), epsilon = 1e-14);
        assert_relative_eq!(r.sum_rate, 5.358, epsilon = 1e-3);
        assert_eq!(r.mmf_rate, 0.0);
        let one = sample_channels(1, 3, &[1.0], 4).unwrap();
        let r = oma_rates(&one, 7.0).unwrap();
        let n: f64 = one.true_channels()[0].norm_squared();
        assert_relative_eq!(r.sum_rate, (1.0 + n * 7.0).log2(), epsilon = 1e-13);
    }

    #[test]
    fn ergodic_averages_per_user() {
        let s7 = 7f64.sqrt();
        let a = ChannelSet::from_channels(vec![cv(&[(1.0, 0.0), (0.0, 0.0)]), cv(&[(0.0, 0.0), (s7, 0.0)])], vec![1.0; 2]).unwrap();
        let b = ChannelSet::from_channels(vec![cv(&[(s7, 0.0), (0.0, 0.0)]), cv(&[(0.0, 0.0), (1.0, 0.0)])], vec![1.0; 2]).unwrap();
        let ps = PrecoderSet::new(vec![cv(&[(1.0, 0.0), (0.0, 0.0)]), cv(&[(0.0, 0.0), (1.0, 0.0)])], None, 2.0).unwrap();
        let cfg = StrategyConfig::mulp(2).unwrap();
        let ra = evaluate(&a, &ps, &cfg, &AllocationPolicy::Equal).unwrap();
        assert_relative_eq!(ra.per_user_rates[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(ra.per_user_rates[1], 3.0, epsilon = 1e-14);
        let single = ergodic_rates(std::slice::from_ref(&a), &ps, &cfg, &AllocationPolicy::Equal).unwrap();
        assert_eq!(single, ra);
        let r = ergodic_rates(&[a, b], &ps, &cfg, &AllocationPolicy::Equal).unwrap();
        assert_relative_eq!(r.per_user_rates[0], 2.0, epsilon = 1e-14);
        assert_relative_eq!(r.per_user_rates[1], 2.0, epsilon = 1e-14);
        assert_relative_eq!(r.mmf_rate, 2.0, epsilon = 1e-14);
        assert!(ergodic_rates(&[], &ps, &cfg, &AllocationPolicy::Equal).is_err());
    }

    #[test]
    fn power_budget_is_enforced() {
        let p = cv(&[(2.0, 0.0)]);
        assert!(matches!(PrecoderSet::new(vec![p.clone()], None, 3.9), Err(Error::Infeasible(_))));
        assert!(PrecoderSet::new(vec![p], None, 4.0).is_ok());
    }
}
