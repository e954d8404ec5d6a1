//! Rayleigh fading channels and the scaled CSIT error model.
//!
//! A [`ChannelSet`] holds, for every user `k`, the true channel `h_k`, the
//! transmitter's estimate `hhat_k` and the estimation error `htilde_k`, with
//! `h_k = hhat_k + htilde_k` exactly. Perfect CSIT is the special case of zero
//! errors.
//!
//! Sampling draws standard normals in a fixed order and scales them
//! afterwards, so two calls with the same seed but different SNR or error
//! variance share their random numbers. Slope fits over an SNR grid rely on
//! this.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::CVec;

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    num_antennas: usize,
    true_channels: Vec<CVec>,
    estimates: Vec<CVec>,
    errors: Vec<CVec>,
    variances: Vec<f64>,
}

impl ChannelSet {
    /// Perfect-CSIT set from user-supplied channels.
    pub fn from_channels(channels: Vec<CVec>, variances: Vec<f64>) -> Result<Self> {
        let m = channels.first().map(|h| h.len()).unwrap_or(0);
        let errors = vec![crate::linalg::zeros(m); channels.len()];
        Self::from_parts(channels, errors, variances)
    }

    /// Set from estimates and errors; true channels are their sum.
    pub fn from_parts(estimates: Vec<CVec>, errors: Vec<CVec>, variances: Vec<f64>) -> Result<Self> {
        let k = estimates.len();
        if k == 0 {
            return Err(Error::Config("at least one user is required".into()));
        }
        let m = estimates[0].len();
        if m == 0 {
            return Err(Error::Config("at least one antenna is required".into()));
        }
        if errors.len() != k || variances.len() != k {
            return Err(Error::Config(format!(
                "expected {k} errors and variances, got {} and {}",
                errors.len(),
                variances.len()
            )));
        }
        if estimates.iter().chain(errors.iter()).any(|v| v.len() != m) {
            return Err(Error::Config(format!("all channel vectors must have length {m}")));
        }
        check_variances(&variances)?;
        let true_channels = estimates.iter().zip(&errors).map(|(a, b)| a + b).collect();
        Ok(Self {
            num_antennas: m,
            true_channels,
            estimates,
            errors,
            variances,
        })
    }

    pub fn num_users(&self) -> usize {
        self.true_channels.len()
    }

    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }

    pub fn true_channels(&self) -> &[CVec] {
        &self.true_channels
    }

    pub fn estimates(&self) -> &[CVec] {
        &self.estimates
    }

    pub fn errors(&self) -> &[CVec] {
        &self.errors
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn is_perfect(&self) -> bool {
        self.errors.iter().all(|e| e.iter().all(|z| z.re == 0.0 && z.im == 0.0))
    }

    /// The channel the transmitter believes in, as a perfect-CSIT set.
    pub fn estimate_view(&self) -> ChannelSet {
        Self {
            num_antennas: self.num_antennas,
            true_channels: self.estimates.clone(),
            estimates: self.estimates.clone(),
            errors: vec![crate::linalg::zeros(self.num_antennas); self.num_users()],
            variances: self.variances.clone(),
        }
    }

    /// CSV layout: a `K,M` header, then one row per user with the variance
    /// and interleaved `(re, im)` pairs, estimates first, errors second.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().flexible(true).from_writer(w);
        wr.write_record(["K", "M"])?;
        wr.write_record([self.num_users().to_string(), self.num_antennas.to_string()])?;
        for (section, vecs) in [("estimate", &self.estimates), ("error", &self.errors)] {
            for (k, v) in vecs.iter().enumerate() {
                let mut rec = vec![
                    section.to_string(),
                    k.to_string(),
                    format!("{:e}", self.variances[k]),
                ];
                for z in v.iter() {
                    rec.push(format!("{:e}", z.re));
                    rec.push(format!("{:e}", z.im));
                }
                wr.write_record(&rec)?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new()
            .flexible(true)
            .has_headers(true)
            .from_reader(r);
        let mut records = rd.records();
        let dims = records
            .next()
            .ok_or_else(|| Error::Parse("missing dimension row".into()))??;
        let k: usize = parse_field(&dims, 0)?;
        let m: usize = parse_field(&dims, 1)?;
        let mut estimates = Vec::with_capacity(k);
        let mut errors = Vec::with_capacity(k);
        let mut variances = Vec::with_capacity(k);
        for rec in records {
            let rec = rec?;
            if rec.len() != 3 + 2 * m {
                return Err(Error::Parse(format!("row has {} fields, expected {}", rec.len(), 3 + 2 * m)));
            }
            let var: f64 = parse_field(&rec, 2)?;
            let mut v = Vec::with_capacity(m);
            for i in 0..m {
                v.push(Complex64::new(parse_field(&rec, 3 + 2 * i)?, parse_field(&rec, 4 + 2 * i)?));
            }
            match &rec[0] {
                "estimate" => {
                    variances.push(var);
                    estimates.push(CVec::from_vec(v));
                }
                "error" => errors.push(CVec::from_vec(v)),
                other => return Err(Error::Parse(format!("unknown section {other:?}"))),
            }
        }
        if estimates.len() != k || errors.len() != k {
            return Err(Error::Parse(format!("expected {k} users per section")));
        }
        Self::from_parts(estimates, errors, variances)
    }

    /// Little-endian binary layout: magic, `K`, `M` as u32, the `K`
    /// variances, then estimates and errors as `(re, im)` f64 pairs.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BIN_MAGIC);
        out.extend_from_slice(&(self.num_users() as u32).to_le_bytes());
        out.extend_from_slice(&(self.num_antennas as u32).to_le_bytes());
        for v in &self.variances {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for vecs in [&self.estimates, &self.errors] {
            for v in vecs.iter() {
                for z in v.iter() {
                    out.extend_from_slice(&z.re.to_le_bytes());
                    out.extend_from_slice(&z.im.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != BIN_MAGIC {
            return Err(Error::Parse("not a channel-set binary".into()));
        }
        let k = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let m = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let need = 12 + 8 * (k + 4 * k * m);
        if bytes.len() != need {
            return Err(Error::Parse(format!("expected {need} bytes, got {}", bytes.len())));
        }
        let mut floats = bytes[12..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let variances: Vec<f64> = floats.by_ref().take(k).collect();
        let mut read_section = || -> Vec<CVec> {
            (0..k)
                .map(|_| {
                    CVec::from_fn(m, |_, _| {
                        let re = floats.next().unwrap();
                        let im = floats.next().unwrap();
                        Complex64::new(re, im)
                    })
                })
                .collect()
        };
        let estimates = read_section();
        let errors = read_section();
        Self::from_parts(estimates, errors, variances)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if path.extension().is_some_and(|e| e == "csv") {
            self.write_csv(std::fs::File::create(path)?)
        } else {
            std::fs::write(path, self.to_bytes())?;
            Ok(())
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        if path.extension().is_some_and(|e| e == "csv") {
            Self::read_csv(std::fs::File::open(path)?)
        } else {
            Self::from_bytes(&std::fs::read(path)?)
        }
    }
}

const BIN_MAGIC: &[u8; 4] = b"MMCH";

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Parse(format!("bad field {i} in {rec:?}")))
}

fn check_variances(variances: &[f64]) -> Result<()> {
    for (k, v) in variances.iter().enumerate() {
        if !(v.is_finite() && *v > 0.0) {
            return Err(Error::Config(format!("variance of user {k} must be positive, got {v}")));
        }
    }
    Ok(())
}

/// How the CSIT error variance is set.
#[derive(Clone, Debug, PartialEq)]
pub enum ErrorVariance {
    /// `sigma_e2_k = sigma2_k * P^-alpha`.
    Scaled,
    /// Explicit per-user error variances, independent of `P`.
    Fixed(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsitModel {
    pub alpha: f64,
    pub snr_power: f64,
    pub error_variance: ErrorVariance,
}

impl CsitModel {
    pub fn scaled(alpha: f64, snr_power: f64) -> Result<Self> {
        let m = Self {
            alpha,
            snr_power,
            error_variance: ErrorVariance::Scaled,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn fixed(snr_power: f64, error_variances: Vec<f64>) -> Result<Self> {
        let m = Self {
            alpha: 0.0,
            snr_power,
            error_variance: ErrorVariance::Fixed(error_variances),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.snr_power.is_finite() && self.snr_power > 0.0) {
            return Err(Error::Config(format!("SNR power must be positive, got {}", self.snr_power)));
        }
        if let ErrorVariance::Fixed(v) = &self.error_variance {
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::Config("error variances must be nonnegative".into()));
            }
        }
        Ok(())
    }

    /// `P^-alpha`, exact at `alpha = 0` and `alpha = 1`.
    pub fn scale_factor(&self) -> f64 {
        if self.alpha == 0.0 {
            1.0
        } else if self.alpha == 1.0 {
            1.0 / self.snr_power
        } else {
            self.snr_power.powf(-self.alpha)
        }
    }

    /// Per-user error variances for users with channel variances `sigma2`.
    pub fn error_variances(&self, sigma2: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        let out: Vec<f64> = match &self.error_variance {
            ErrorVariance::Scaled => {
                let s = self.scale_factor();
                sigma2.iter().map(|v| v * s).collect()
            }
            ErrorVariance::Fixed(v) => {
                if v.len() != sigma2.len() {
                    return Err(Error::Config(format!(
                        "expected {} error variances, got {}",
                        sigma2.len(),
                        v.len()
                    )));
                }
                v.clone()
            }
        };
        for (k, (e, s)) in out.iter().zip(sigma2).enumerate() {
            if e > s {
                return Err(Error::Invariant(format!(
                    "error variance {e} of user {k} exceeds channel variance {s}"
                )));
            }
        }
        Ok(out)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `M` standard complex normals `CN(0, 1)` scaled to variance `var`.
fn draw_cn(rng: &mut ChaCha8Rng, m: usize, var: f64) -> CVec {
    let s = (var / 2.0).sqrt();
    CVec::from_fn(m, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(s * re, s * im)
    })
}

/// I.i.d. `CN(0, sigma2_k)` channels with perfect CSIT.
pub fn sample_channels(k: usize, m: usize, variances: &[f64], seed: u64) -> Result<ChannelSet> {
    if k == 0 || m == 0 {
        return Err(Error::Config(format!("K and M must be positive, got K={k}, M={m}")));
    }
    if variances.len() != k {
        return Err(Error::Config(format!("expected {k} variances, got {}", variances.len())));
    }
    check_variances(variances)?;
    let mut r = rng(seed);
    let channels = variances.iter().map(|v| draw_cn(&mut r, m, *v)).collect();
    ChannelSet::from_channels(channels, variances.to_vec())
}

/// Splits each user's channel statistics into an estimate
/// `CN(0, sigma2 - sigma_e2)` and an error `CN(0, sigma_e2)`, both freshly
/// drawn. The input set only contributes dimensions and variances.
pub fn apply_csit_error(cs: &ChannelSet, model: &CsitModel, seed: u64) -> Result<ChannelSet> {
    let ev = model.error_variances(cs.variances())?;
    let m = cs.num_antennas();
    let mut r = rng(seed);
    let mut estimates = Vec::with_capacity(cs.num_users());
    let mut errors = Vec::with_capacity(cs.num_users());
    for (s2, e2) in cs.variances().iter().zip(&ev) {
        estimates.push(draw_cn(&mut r, m, s2 - e2));
        errors.push(draw_cn(&mut r, m, *e2));
    }
    ChannelSet::from_parts(estimates, errors, cs.variances().to_vec())
}

/// `n_samples` sets sharing the estimates of `estimate_cs`, each with a fresh
/// error draw.
pub fn sample_conditional(
    estimate_cs: &ChannelSet,
    model: &CsitModel,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<ChannelSet>> {
    if n_samples == 0 {
        return Err(Error::Config("at least one conditional sample is required".into()));
    }
    let ev = model.error_variances(estimate_cs.variances())?;
    let m = estimate_cs.num_antennas();
    let mut r = rng(seed);
    (0..n_samples)
        .map(|_| {
            let errors = ev.iter().map(|e| draw_cn(&mut r, m, *e)).collect();
            ChannelSet::from_parts(
                estimate_cs.estimates().to_vec(),
                errors,
                estimate_cs.variances().to_vec(),
            )
        })
        .collect()
}
