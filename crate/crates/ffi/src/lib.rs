//! C ABI for `miso-ma`.
//!
//! Objects cross the boundary as opaque handles created by `mma_*_new`-style
//! functions and released with the matching `mma_*_free`. Every fallible
//! function returns an [`MmaStatus`]; on failure the message is available
//! from [`mma_last_error`] on the same thread until the next failing call.
//! Complex vectors are passed as separate real and imaginary `double`
//! arrays. Matrices are row-major with one row per user.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use miso_ma::channel::{apply_csit_error, sample_channels, CsitModel};
use miso_ma::dof::{closed_form_dof, Metric, Rational};
use miso_ma::harness::{run_experiment, ExperimentConfig};
use miso_ma::initpoint::{mrt_svd_init, PowerSplit};
use miso_ma::linalg::CVec;
use miso_ma::rate::{evaluate, AllocationPolicy, PrecoderSet, RateReport};
use miso_ma::strategy::{StrategyConfig, StrategySpec};
use miso_ma::wmmse::{ao_solve, saa_solve, Solution, SolveOptions};
use miso_ma::{ChannelSet, Complex64, Error, Objective};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MmaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Infeasible = 4,
    Solver = 5,
    Invariant = 6,
    Io = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MmaObjective {
    Sum = 0,
    MaxMin = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MmaMetric {
    Sum = 0,
    Mmf = 1,
}

/// Channels, estimates and per-user variances.
pub struct MmaChannels(ChannelSet);

/// Precoders of every stream; the common stream, if any, is last.
pub struct MmaPrecoders(PrecoderSet);

/// Optimized precoders with their rates and iteration count.
pub struct MmaSolution(Solution);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MmaStatus {
    match e {
        Error::Config(_) | Error::Usage(_) | Error::Parse(_) => MmaStatus::InvalidArgument,
        Error::Dimension(_) => MmaStatus::Dimension,
        Error::Infeasible(_) => MmaStatus::Infeasible,
        Error::Solver(_) => MmaStatus::Solver,
        Error::Invariant(_) => MmaStatus::Invariant,
        Error::Io(_) => MmaStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MmaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MmaStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            MmaStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            MmaStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn string<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Lib(Error::Parse(format!("{what} is not UTF-8"))))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn strategy(cs: &ChannelSet, text: &str) -> Result<StrategyConfig, Error> {
    let spec: StrategySpec = text.parse()?;
    spec.build(cs.num_users())?.ordered_by(cs, true)
}

fn objective(o: MmaObjective) -> Objective {
    match o {
        MmaObjective::Sum => Objective::Sum,
        MmaObjective::MaxMin => Objective::MaxMin,
    }
}

fn rows(re: &[f64], im: &[f64], k: usize, m: usize) -> Vec<CVec> {
    (0..k)
        .map(|u| CVec::from_fn(m, |i, _| Complex64::new(re[u * m + i], im[u * m + i])))
        .collect()
}

/// Message of the last failure on this thread, or null. Owned by the
/// library; valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn mma_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mma_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// I.i.d. Rayleigh channels with perfect CSIT. `variances` has `k` entries.
///
/// # Safety
/// `variances` must point to `k` doubles and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn mma_channels_sample(
    k: usize,
    m: usize,
    variances: *const f64,
    seed: u64,
    out: *mut *mut MmaChannels,
) -> MmaStatus {
    guard(|| {
        let v = slice(variances, k, "variances")?;
        put(out, MmaChannels(sample_channels(k, m, v, seed)?))
    })
}

/// Channels known exactly to the transmitter, from `k x m` row-major real
/// and imaginary parts.
///
/// # Safety
/// `re`, `im` must point to `k * m` doubles, `variances` to `k`.
#[no_mangle]
pub unsafe extern "C" fn mma_channels_from_arrays(
    k: usize,
    m: usize,
    re: *const f64,
    im: *const f64,
    variances: *const f64,
    out: *mut *mut MmaChannels,
) -> MmaStatus {
    guard(|| {
        let re = slice(re, k * m, "re")?;
        let im = slice(im, k * m, "im")?;
        let v = slice(variances, k, "variances")?;
        put(out, MmaChannels(ChannelSet::from_channels(rows(re, im, k, m), v.to_vec())?))
    })
}

/// Fresh estimate/error split with error variance `sigma2 * P^-alpha` at
/// SNR `snr_db`.
///
/// # Safety
/// `cs` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mma_channels_with_csit_error(
    cs: *const MmaChannels,
    alpha: f64,
    snr_db: f64,
    seed: u64,
    out: *mut *mut MmaChannels,
) -> MmaStatus {
    guard(|| {
        let cs = non_null(cs, "cs")?;
        let model = CsitModel::scaled(alpha, 10f64.powf(snr_db / 10.0))?;
        put(out, MmaChannels(apply_csit_error(&cs.0, &model, seed)?))
    })
}

/// # Safety
/// `cs` must be a live handle and `k`, `m` writable.
#[no_mangle]
pub unsafe extern "C" fn mma_channels_dims(cs: *const MmaChannels, k: *mut usize, m: *mut usize) -> MmaStatus {
    guard(|| {
        let cs = non_null(cs, "cs")?;
        if k.is_null() || m.is_null() {
            return Err(Fail::Null("dims"));
        }
        *k = cs.0.num_users();
        *m = cs.0.num_antennas();
        Ok(())
    })
}

/// # Safety
/// `cs` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mma_channels_free(cs: *mut MmaChannels) {
    if !cs.is_null() {
        drop(Box::from_raw(cs));
    }
}

/// MRT/SVD initialization at total power `power` for a strategy such as
/// `"noma:3"`, `"mulp"`, `"rs1"` or `"oma"`.
///
/// # Safety
/// `cs` must be a live handle, `strategy` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mma_precoders_init(
    cs: *const MmaChannels,
    strategy_name: *const c_char,
    power: f64,
    out: *mut *mut MmaPrecoders,
) -> MmaStatus {
    guard(|| {
        let cs = non_null(cs, "cs")?;
        let config = strategy(&cs.0, string(strategy_name, "strategy")?)?;
        put(out, MmaPrecoders(mrt_svd_init(&cs.0, &config, power, PowerSplit::Uniform)?))
    })
}

/// Precoders from `n_streams x m` row-major arrays; with `has_common` the
/// last row is the common stream.
///
/// # Safety
/// `re`, `im` must point to `n_streams * m` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn mma_precoders_from_arrays(
    n_streams: usize,
    m: usize,
    re: *const f64,
    im: *const f64,
    has_common: bool,
    power: f64,
    out: *mut *mut MmaPrecoders,
) -> MmaStatus {
    guard(|| {
        let re = slice(re, n_streams * m, "re")?;
        let im = slice(im, n_streams * m, "im")?;
        let mut streams = rows(re, im, n_streams, m);
        let common = if has_common {
            Some(streams.pop().ok_or_else(|| Error::Dimension("no common row".into()))?)
        } else {
            None
        };
        put(out, MmaPrecoders(PrecoderSet::new(streams, common, power)?))
    })
}

/// # Safety
/// `ps` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mma_precoders_num_streams(ps: *const MmaPrecoders) -> usize {
    ps.as_ref().map_or(0, |p| p.0.num_streams())
}

/// Copies stream `stream` into `re` and `im`, each of length `m`.
///
/// # Safety
/// `ps` must be a live handle and `re`, `im` point to `m` doubles.
#[no_mangle]
pub unsafe extern "C" fn mma_precoders_stream(
    ps: *const MmaPrecoders,
    stream: usize,
    re: *mut f64,
    im: *mut f64,
    m: usize,
) -> MmaStatus {
    guard(|| {
        let ps = non_null(ps, "ps")?;
        if stream >= ps.0.num_streams() || m != ps.0.num_antennas() {
            return Err(Error::Dimension(format!("stream {stream} of {}, length {m}", ps.0.num_streams())).into());
        }
        let re = slice_mut(re, m, "re")?;
        let im = slice_mut(im, m, "im")?;
        for (i, z) in ps.0.stream(stream).iter().enumerate() {
            re[i] = z.re;
            im[i] = z.im;
        }
        Ok(())
    })
}

/// # Safety
/// `ps` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mma_precoders_free(ps: *mut MmaPrecoders) {
    if !ps.is_null() {
        drop(Box::from_raw(ps));
    }
}

fn write_report(r: &RateReport, per_user: &mut [f64], common: *mut f64, sum: *mut f64, mmf: *mut f64) {
    per_user.copy_from_slice(&r.per_user_rates);
    // SAFETY: null-checked by the callers' contract; null outputs are skipped.
    unsafe {
        if let Some(c) = common.as_mut() {
            *c = r.common_rate.unwrap_or(0.0);
        }
        if let Some(s) = sum.as_mut() {
            *s = r.sum_rate;
        }
        if let Some(x) = mmf.as_mut() {
            *x = r.mmf_rate;
        }
    }
}

/// Rates of `ps` on the true channels of `cs`, in bits/s/Hz. Any of
/// `common`, `sum`, `mmf` may be null.
///
/// # Safety
/// Handles must be live, `strategy` NUL-terminated and `per_user` point to
/// `k` doubles.
#[no_mangle]
pub unsafe extern "C" fn mma_evaluate(
    cs: *const MmaChannels,
    strategy_name: *const c_char,
    ps: *const MmaPrecoders,
    per_user: *mut f64,
    k: usize,
    common: *mut f64,
    sum: *mut f64,
    mmf: *mut f64,
) -> MmaStatus {
    guard(|| {
        let cs = non_null(cs, "cs")?;
        let ps = non_null(ps, "ps")?;
        if k != cs.0.num_users() {
            return Err(Error::Dimension(format!("per_user has {k} slots for {} users", cs.0.num_users())).into());
        }
        let config = strategy(&cs.0, string(strategy_name, "strategy")?)?;
        let r = evaluate(&cs.0, &ps.0, &config, &AllocationPolicy::MmfEqualizing)?;
        write_report(&r, slice_mut(per_user, k, "per_user")?, common, sum, mmf);
        Ok(())
    })
}

/// Optimizes precoders at SNR `snr_db` from the MRT/SVD start. With
/// `alpha` in `[0, 1]` the channels are treated as estimates and the
/// ergodic objective over `n_samples` conditional draws is optimized;
/// pass a negative `alpha` for perfect CSIT.
///
/// # Safety
/// `cs` must be a live handle, `strategy` NUL-terminated and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn mma_solve(
    cs: *const MmaChannels,
    strategy_name: *const c_char,
    obj: MmaObjective,
    snr_db: f64,
    alpha: f64,
    n_samples: usize,
    max_iterations: usize,
    seed: u64,
    out: *mut *mut MmaSolution,
) -> MmaStatus {
    guard(|| {
        let cs = non_null(cs, "cs")?;
        let config = strategy(&cs.0, string(strategy_name, "strategy")?)?;
        let power = 10f64.powf(snr_db / 10.0);
        let opts = SolveOptions {
            max_iterations,
            seed,
            ..SolveOptions::default()
        };
        let init = mrt_svd_init(&cs.0, &config, power, PowerSplit::Uniform)?;
        let sol = if alpha < 0.0 {
            ao_solve(&cs.0, &config, objective(obj), &init, &opts)?
        } else {
            let model = CsitModel::scaled(alpha, power)?;
            saa_solve(&cs.0, &model, n_samples, &config, objective(obj), Some(&init), &opts)?
        };
        put(out, MmaSolution(sol))
    })
}

/// Rates reported by the optimizer. Any of `common`, `sum`, `mmf` may be
/// null.
///
/// # Safety
/// `sol` must be a live handle and `per_user` point to `k` doubles.
#[no_mangle]
pub unsafe extern "C" fn mma_solution_rates(
    sol: *const MmaSolution,
    per_user: *mut f64,
    k: usize,
    common: *mut f64,
    sum: *mut f64,
    mmf: *mut f64,
) -> MmaStatus {
    guard(|| {
        let sol = non_null(sol, "sol")?;
        let r = &sol.0.report;
        if k != r.per_user_rates.len() {
            return Err(Error::Dimension(format!("per_user has {k} slots for {} users", r.per_user_rates.len())).into());
        }
        write_report(r, slice_mut(per_user, k, "per_user")?, common, sum, mmf);
        Ok(())
    })
}

/// # Safety
/// `sol` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mma_solution_iterations(sol: *const MmaSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.0.trace.iterations())
}

/// Copy of the optimized precoders as a new handle.
///
/// # Safety
/// `sol` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mma_solution_precoders(sol: *const MmaSolution, out: *mut *mut MmaPrecoders) -> MmaStatus {
    guard(|| {
        let sol = non_null(sol, "sol")?;
        put(out, MmaPrecoders(sol.0.precoders.clone()))
    })
}

/// # Safety
/// `sol` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mma_solution_free(sol: *mut MmaSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Closed-form multiplexing gain as the reduced fraction `num / den`.
/// `groups` is ignored except for NOMA strategies given without a count.
///
/// # Safety
/// `strategy` must be NUL-terminated and `num`, `den` writable.
#[no_mangle]
pub unsafe extern "C" fn mma_dof(
    strategy_name: *const c_char,
    m: usize,
    k: usize,
    alpha_num: i64,
    alpha_den: i64,
    metric: MmaMetric,
    num: *mut i64,
    den: *mut i64,
) -> MmaStatus {
    guard(|| {
        let spec: StrategySpec = string(strategy_name, "strategy")?.parse()?;
        if alpha_den == 0 {
            return Err(Error::Config("alpha denominator is zero".into()).into());
        }
        if num.is_null() || den.is_null() {
            return Err(Fail::Null("num/den"));
        }
        let metric = match metric {
            MmaMetric::Sum => Metric::Sum,
            MmaMetric::Mmf => Metric::Mmf,
        };
        let d = closed_form_dof(spec.kind, m, k, spec.groups, Rational::new(alpha_num, alpha_den), metric)?;
        *num = *d.numer();
        *den = *d.denom();
        Ok(())
    })
}

/// Runs the campaign described by a TOML config and writes the per-cell CSV
/// to `csv_path` and the summary next to it. `violations` receives the
/// number of invariant violations and may be null.
///
/// # Safety
/// `config_toml` and `csv_path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mma_run_experiment(
    config_toml: *const c_char,
    csv_path: *const c_char,
    violations: *mut usize,
) -> MmaStatus {
    guard(|| {
        let mut cfg = ExperimentConfig::from_toml_str(string(config_toml, "config")?)?;
        cfg.output_path = Some(string(csv_path, "csv_path")?.into());
        let result = run_experiment(&cfg)?;
        if let Some(v) = violations.as_mut() {
            *v = result.invariant_violations();
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_mapping() {
        assert_eq!(status_of(&Error::Invariant("x".into())), MmaStatus::Invariant);
        assert_eq!(status_of(&Error::Parse("x".into())), MmaStatus::InvalidArgument);
        assert_eq!(status_of(&Error::Infeasible("x".into())), MmaStatus::Infeasible);
    }

    #[test]
    fn panics_become_status() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, MmaStatus::Panic);
        let msg = unsafe { CStr::from_ptr(mma_last_error()) }.to_str().unwrap();
        assert!(msg.contains("boom"));
    }
}
