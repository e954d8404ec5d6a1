//! Closed-form multiplexing gains and high-SNR slope fitting.
//!
//! Gains are exact rationals in the CSIT quality `alpha` (`alpha = 1` is
//! perfect CSIT). `G` is only meaningful for NOMA.

use num_rational::Ratio;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::strategy::StrategyKind;

pub type Rational = Ratio<i64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Sum,
    Mmf,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DofPrediction {
    pub kind: StrategyKind,
    pub num_antennas: usize,
    pub num_users: usize,
    pub num_groups: usize,
    pub alpha: Rational,
    pub sum_dof: Rational,
    pub mmf_dof: Rational,
}

fn r(n: usize) -> Rational {
    Rational::from_integer(n as i64)
}

fn check_regime(kind: StrategyKind, m: usize, k: usize, groups: usize, alpha: Rational) -> Result<()> {
    if m == 0 || k == 0 {
        return Err(Error::Config(format!("M and K must be positive, got M={m}, K={k}")));
    }
    if alpha < Rational::zero() || alpha > Rational::one() {
        return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if kind == StrategyKind::Noma && (groups == 0 || groups >= k || k % groups != 0) {
        return Err(Error::Config(format!(
            "NOMA needs 1 <= G < K with G dividing K, got K={k}, G={groups}"
        )));
    }
    Ok(())
}

/// Sum or max-min multiplexing gain of a strategy.
pub fn closed_form_dof(
    kind: StrategyKind,
    m: usize,
    k: usize,
    groups: usize,
    alpha: Rational,
    metric: Metric,
) -> Result<Rational> {
    check_regime(kind, m, k, groups, alpha)?;
    let one = Rational::one();
    let zero = Rational::zero();
    let mk = r(m.min(k));
    Ok(match (kind, metric) {
        (StrategyKind::Noma, Metric::Sum) => one.max(r(m.min(groups)) * alpha),
        (StrategyKind::Noma, Metric::Mmf) => {
            let g = k / groups;
            if groups == 1 {
                Rational::new(1, k as i64)
            } else if m + g > k {
                alpha / r(g)
            } else {
                zero
            }
        }
        (StrategyKind::Mulp, Metric::Sum) => one.max(mk * alpha),
        (StrategyKind::Mulp, Metric::Mmf) => {
            if m >= k {
                alpha
            } else {
                zero
            }
        }
        (StrategyKind::Rs1, Metric::Sum) => one + (mk - one) * alpha,
        (StrategyKind::Rs1, Metric::Mmf) => {
            if m >= k {
                (one + r(k - 1) * alpha) / r(k)
            } else {
                let threshold = Rational::new(1, (1 + k - m) as i64);
                if alpha <= threshold {
                    (one + r(m - 1) * alpha) / r(k)
                } else {
                    threshold
                }
            }
        }
        (StrategyKind::Oma, Metric::Sum) => one,
        (StrategyKind::Oma, Metric::Mmf) => {
            if k == 1 {
                one
            } else {
                zero
            }
        }
    })
}

pub fn predict(kind: StrategyKind, m: usize, k: usize, groups: usize, alpha: Rational) -> Result<DofPrediction> {
    Ok(DofPrediction {
        kind,
        num_antennas: m,
        num_users: k,
        num_groups: groups,
        alpha,
        sum_dof: closed_form_dof(kind, m, k, groups, alpha, Metric::Sum)?,
        mmf_dof: closed_form_dof(kind, m, k, groups, alpha, Metric::Mmf)?,
    })
}

/// Sign of `d_A - d_B`. `groups` is used by whichever side is NOMA.
pub fn compare_dof(
    a: StrategyKind,
    b: StrategyKind,
    m: usize,
    k: usize,
    groups: usize,
    alpha: Rational,
    metric: Metric,
) -> Result<i8> {
    let da = closed_form_dof(a, m, k, groups, alpha, metric)?;
    let db = closed_form_dof(b, m, k, groups, alpha, metric)?;
    Ok(match da.cmp(&db) {
        std::cmp::Ordering::Less => -1,
        std::cmp::Ordering::Equal => 0,
        std::cmp::Ordering::Greater => 1,
    })
}

/// Parses `"1/2"`, `"0.25"` or `"1"` exactly.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    let bad = || Error::Parse(format!("not a rational number: {s:?}"));
    if let Some((n, d)) = s.split_once('/') {
        let n: i64 = n.trim().parse().map_err(|_| bad())?;
        let d: i64 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        return Ok(Rational::new(n, d));
    }
    match s.split_once('.') {
        Some((int, frac)) => {
            if frac.len() > 15 || !frac.chars().all(|c| c.is_ascii_digit()) {
                return Err(bad());
            }
            let den = 10i64.pow(frac.len() as u32);
            let neg = int.starts_with('-');
            let i: i64 = if int.is_empty() || int == "-" { 0 } else { int.parse().map_err(|_| bad())? };
            let f: i64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
            let mag = i.abs() * den + f;
            Ok(Rational::new(if neg { -mag } else { mag }, den))
        }
        None => Ok(Rational::from_integer(s.parse().map_err(|_| bad())?)),
    }
}

/// Nearest rational with a small denominator; exact for the usual grid
/// values 0, 1/4, 1/3, 1/2, ...
pub fn rational_from_f64(x: f64) -> Result<Rational> {
    Rational::approximate_float(x).ok_or_else(|| Error::Config(format!("cannot represent {x} as a rational")))
}

pub fn to_f64(x: Rational) -> f64 {
    *x.numer() as f64 / *x.denom() as f64
}

/// Column order of the golden tables.
pub const GOLDEN_COLUMNS: [(&str, StrategyKind, usize); 4] = [
    ("NOMA-G1", StrategyKind::Noma, 1),
    ("NOMA-G3", StrategyKind::Noma, 3),
    ("MULP", StrategyKind::Mulp, 0),
    ("RS1", StrategyKind::Rs1, 0),
];

/// One row per `M` in `1..=max_m` for `K = 6`, columns as in
/// [`GOLDEN_COLUMNS`].
pub fn golden_table(metric: Metric, max_m: usize, alpha: Rational) -> Result<Vec<(usize, Vec<Rational>)>> {
    (1..=max_m)
        .map(|m| {
            let row = GOLDEN_COLUMNS
                .iter()
                .map(|(_, kind, g)| closed_form_dof(*kind, m, 6, *g, alpha, metric))
                .collect::<Result<Vec<_>>>()?;
            Ok((m, row))
        })
        .collect()
}

/// CSV rendering of [`golden_table`] with `a/b` cells.
pub fn golden_table_csv(metric: Metric, max_m: usize, alpha: Rational) -> Result<String> {
    let mut out = String::from("M");
    for (name, _, _) in GOLDEN_COLUMNS {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (m, row) in golden_table(metric, max_m, alpha)? {
        out.push_str(&m.to_string());
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlopeFit {
    pub snr_grid_db: Vec<f64>,
    pub rates: Vec<f64>,
    /// Rate increase per doubling of the transmit power.
    pub fitted_slope: f64,
    pub intercept: f64,
    pub stderr: f64,
}

/// Least-squares line of rate against `log2(P)` with `P = 10^(dB/10)`.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 3 {
        return Err(Error::Config(format!("slope fit needs at least 3 points, got {}", points.len())));
    }
    let mut grid: Vec<f64> = points.iter().map(|p| p.0).collect();
    grid.sort_by(f64::total_cmp);
    if grid.windows(2).any(|w| w[0] == w[1]) || points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(Error::Config("slope fit needs distinct, finite SNR points".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0 / 10.0 * 10f64.log2()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(points).map(|(x, p)| (x - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs
        .iter()
        .zip(points)
        .map(|(x, p)| (p.1 - intercept - slope * x).powi(2))
        .sum();
    let stderr = (ssr / (n - 2.0) / sxx).sqrt();
    Ok(SlopeFit {
        snr_grid_db: points.iter().map(|p| p.0).collect(),
        rates: points.iter().map(|p| p.1).collect(),
        fitted_slope: slope,
        intercept,
        stderr,
    })
}
