//! Seeded invariant suites run by `miso-ma selftest`.

use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{sample_channels, ChannelSet};
use crate::error::Result;
use crate::initpoint::{mrt_svd_init, zfbf_precoders, PowerSplit};
use crate::linalg::{gain, norm_sqr, CVec};
use crate::rate::{mulp_rates, noma_rates, rs_rates, AllocationPolicy, PrecoderSet};
use crate::strategy::{stream_layout, StrategyConfig};
use crate::wmmse::{ao_solve, rate_wmmse_gap, Objective, SolveOptions};

const MONOTONE_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub violations: usize,
    /// Largest observed value of the suite's checked quantity.
    pub worst: f64,
    pub tolerance: f64,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

impl std::fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<22} cases={:<6} violations={:<4} worst={:.3e} tol={:.0e} ({:.2}s)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.violations,
            self.worst,
            self.tolerance,
            self.seconds
        )
    }
}

struct Tally {
    name: &'static str,
    tolerance: f64,
    cases: usize,
    violations: usize,
    worst: f64,
    start: Instant,
}

impl Tally {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            tolerance,
            cases: 0,
            violations: 0,
            worst: 0.0,
            start: Instant::now(),
        }
    }

    /// Records a case whose checked quantity must not exceed the tolerance.
    fn record(&mut self, value: f64) {
        self.cases += 1;
        self.worst = self.worst.max(value);
        if !(value <= self.tolerance) {
            self.violations += 1;
        }
    }

    fn finish(self) -> SuiteReport {
        SuiteReport {
            name: self.name,
            cases: self.cases,
            violations: self.violations,
            worst: self.worst,
            tolerance: self.tolerance,
            seconds: self.start.elapsed().as_secs_f64(),
        }
    }
}

/// Random precoders with total power drawn uniformly in `(0, power]`.
pub fn random_precoders(rng: &mut ChaCha8Rng, k: usize, m: usize, with_common: bool, power: f64) -> Result<PrecoderSet> {
    let n = k + usize::from(with_common);
    let draws = sample_channels(n, m, &vec![1.0; n], rng.random())?;
    let mut vs: Vec<CVec> = draws.true_channels().to_vec();
    let total: f64 = vs.iter().map(norm_sqr).sum();
    let target = power * rng.random_range(1e-3..=1.0);
    let scale = Complex64::new((target / total).sqrt(), 0.0);
    for v in &mut vs {
        *v *= scale;
    }
    let common = with_common.then(|| vs.pop().unwrap());
    PrecoderSet::new(vs, common, power)
}

fn random_config(rng: &mut ChaCha8Rng, k: usize) -> Result<StrategyConfig> {
    let divisors: Vec<usize> = (1..k).filter(|g| k % g == 0).collect();
    match rng.random_range(0..3) {
        0 if !divisors.is_empty() => StrategyConfig::noma(k, divisors[rng.random_range(0..divisors.len())]),
        1 => StrategyConfig::mulp(k),
        _ => StrategyConfig::rs1(k),
    }
}

/// `|xi_MMSE - (1 - R)|` over every link of random instances.
pub fn rate_wmmse_identity(instances: usize, seed: u64) -> Result<SuiteReport> {
    let mut t = Tally::new("rate-wmmse identity", 1e-8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..instances {
        let k = rng.random_range(1..=6);
        let m = rng.random_range(1..=6);
        let cs = sample_channels(k, m, &vec![1.0; k], rng.random())?;
        let config = random_config(&mut rng, k)?;
        let layout = stream_layout(&config);
        let power = 10f64.powf(rng.random_range(0.0..4.0));
        let ps = random_precoders(&mut rng, k, m, config.common_stream_present(), power)?;
        let mut worst = 0.0f64;
        for link in layout.links() {
            worst = worst.max(rate_wmmse_gap(&cs, &ps, &layout, link)?.abs());
        }
        t.record(worst);
    }
    Ok(t.finish())
}

/// Largest objective drop and terminal KKT residual over seeded `ao_solve`
/// runs at 20 dB with `K = 6`.
pub fn ao_monotonicity(runs: usize, seed: u64) -> Result<(SuiteReport, SuiteReport)> {
    let mut mono = Tally::new("ao monotonicity", MONOTONE_SLACK);
    let mut kkt = Tally::new("ao terminal kkt", 1e-4);
    let power = 100.0;
    let k = 6;
    for run in 0..runs {
        let m = 3 + run % 4;
        let config = match (run / 4) % 3 {
            0 => StrategyConfig::noma(k, 3)?,
            1 => StrategyConfig::mulp(k)?,
            _ => StrategyConfig::rs1(k)?,
        };
        let objective = if (run / 12) % 2 == 0 { Objective::Sum } else { Objective::MaxMin };
        let cs = sample_channels(k, m, &vec![1.0; k], seed.wrapping_add(run as u64))?;
        let config = config.ordered_by(&cs, false)?;
        let init = mrt_svd_init(&cs, &config, power, PowerSplit::Uniform)?;
        let opts = SolveOptions {
            seed: run as u64,
            ..SolveOptions::default()
        };
        let sol = ao_solve(&cs, &config, objective, &init, &opts)?;
        let obj = sol.trace.objectives();
        let drop = obj.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
        mono.record(drop);
        kkt.record(sol.trace.final_kkt_residual());
    }
    Ok((mono.finish(), kkt.finish()))
}

/// `max |h_j' p_k|` over non-served users of zero-forcing precoders.
pub fn zf_residuals(instances: usize, seed: u64) -> Result<SuiteReport> {
    let mut t = Tally::new("zf residuals", 1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..instances {
        let m = rng.random_range(2..=6);
        let k = rng.random_range(2..=m);
        let cs = sample_channels(k, m, &vec![1.0; k], rng.random())?;
        let serve: Vec<usize> = (0..k).collect();
        let nulls: Vec<Vec<usize>> = serve.iter().map(|&u| (0..k).filter(|&q| q != u).collect()).collect();
        let ps = zfbf_precoders(&cs, &serve, &nulls)?;
        let mut worst = 0.0f64;
        for (u, p) in ps.iter().enumerate() {
            for &q in &nulls[u] {
                worst = worst.max(gain(&cs.estimates()[q], p).sqrt() / p.norm().max(f64::MIN_POSITIVE));
            }
        }
        t.record(worst);
    }
    Ok(t.finish())
}

fn two_user(rng: &mut ChaCha8Rng) -> Result<(ChannelSet, PrecoderSet, f64)> {
    let m = rng.random_range(1..=4);
    let power = 10f64.powf(rng.random_range(-1.0..4.0));
    let cs = sample_channels(2, m, &[1.0, 1.0], rng.random())?;
    let ps = random_precoders(rng, 2, m, false, power)?;
    Ok((cs, ps, power))
}

/// Two-user NOMA sum-rate against the MAC sum capacity seen by the SIC
/// user and against `log2(1 + max ||h_k||^2 P)`.
pub fn two_user_bounds(draws: usize, seed: u64) -> Result<(SuiteReport, SuiteReport)> {
    let mut mac = Tally::new("two-user mac bound", 1e-12);
    let mut adaptive = Tally::new("adaptive-order bound", 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..draws {
        let (cs, ps, power) = two_user(&mut rng)?;
        for order in [[0usize, 1], [1, 0]] {
            let config = StrategyConfig::noma(2, 1)?.with_decoding_orders(vec![order.to_vec()])?;
            let r = noma_rates(&cs, &ps, &config)?;
            // The last user in the sequence decodes both streams.
            let sic = &cs.true_channels()[order[1]];
            let bound = (1.0 + gain(sic, &ps.private()[0]) + gain(sic, &ps.private()[1])).log2();
            mac.record(r.sum_rate - bound);
            let best = cs.true_channels().iter().map(norm_sqr).fold(0.0, f64::max);
            adaptive.record(r.sum_rate - (1.0 + best * power).log2());
        }
    }
    Ok((mac.finish(), adaptive.finish()))
}

/// Two-user NOMA against MU-LP with shared precoders: the SIC user gains,
/// the other loses.
pub fn noma_mulp_monotonicity(draws: usize, seed: u64) -> Result<SuiteReport> {
    let mut t = Tally::new("noma per-user order", 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..draws {
        let (cs, ps, _) = two_user(&mut rng)?;
        let config = StrategyConfig::noma(2, 1)?.with_decoding_orders(vec![vec![1, 0]])?;
        let noma = noma_rates(&cs, &ps, &config)?;
        let mulp = mulp_rates(&cs, &ps)?;
        let sic_loss = mulp.per_user_rates[0] - noma.per_user_rates[0];
        let other_gain = noma.per_user_rates[1] - mulp.per_user_rates[1];
        t.record(sic_loss.max(other_gain));
    }
    Ok(t.finish())
}

/// Rate splitting with an all-zero common precoder against MU-LP; any
/// difference in the private rates counts.
pub fn rs_zero_common(draws: usize, seed: u64) -> Result<SuiteReport> {
    let mut t = Tally::new("rs zero-common = mulp", 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..draws {
        let k = rng.random_range(1..=6);
        let m = rng.random_range(1..=6);
        let cs = sample_channels(k, m, &vec![1.0; k], rng.random())?;
        let ps = random_precoders(&mut rng, k, m, false, 100.0)?;
        let rs = rs_rates(&cs, &ps.with_common(crate::linalg::zeros(m))?, &AllocationPolicy::MmfEqualizing)?;
        let mulp = mulp_rates(&cs, &ps)?;
        let same = rs.private_rates.iter().zip(&mulp.private_rates).all(|(a, b)| a.to_bits() == b.to_bits());
        t.record(if same { 0.0 } else { 1.0 });
    }
    Ok(t.finish())
}

/// Every suite at CLI scale.
pub fn run_all(seed: u64, quick: bool) -> Result<Vec<SuiteReport>> {
    let f = if quick { 10 } else { 1 };
    let mut out = vec![rate_wmmse_identity(1000 / f, seed)?];
    let (mono, kkt) = ao_monotonicity(if quick { 12 } else { 100 }, seed)?;
    out.push(mono);
    out.push(kkt);
    out.push(zf_residuals(1000 / f, seed)?);
    let (mac, adaptive) = two_user_bounds(10_000 / f, seed)?;
    out.push(mac);
    out.push(adaptive);
    out.push(rs_zero_common(1000 / f, seed)?);
    out.push(noma_mulp_monotonicity(1000 / f, seed)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suites_pass() {
        for r in run_all(1, true).unwrap() {
            assert!(r.passed(), "{r}");
            assert!(r.cases > 0);
        }
    }

    #[test]
    fn random_precoders_respect_the_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let ps = random_precoders(&mut rng, 3, 2, true, 7.0).unwrap();
            assert!(ps.total_power() <= 7.0 * (1.0 + 1e-12));
            assert!(ps.common().is_some());
        }
    }

    #[test]
    fn tally_counts_nan_as_violation() {
        let mut t = Tally::new("x", 1.0);
        t.record(f64::NAN);
        t.record(0.5);
        let r = t.finish();
        assert_eq!((r.cases, r.violations), (2, 1));
    }
}
