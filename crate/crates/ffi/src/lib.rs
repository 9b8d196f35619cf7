//! C ABI for the simulator.
//!
//! Every function returns a [`RissenseStatus`]; results go through out
//! pointers. On failure the message is available from
//! [`rissense_last_error`] on the same thread.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use nalgebra::Vector3;
use rissense::campaign::{run_campaign, CampaignSummary, FilterLabel};
use rissense::config::{RisProfileMode, ScenarioConfig};
use rissense::detection::{detection_probability, link_budget, marcum_q1, DetectionConfig};
use rissense::metrics::{gospa, GospaConfig};

/// Status codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RissenseStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Computation = 4,
    Io = 5,
    Panic = 6,
}

/// Filter outputs of a campaign.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RissenseFilter {
    Ris = 0,
    Nris = 1,
    Fusion = 2,
    RisRandom = 3,
}

impl From<RissenseFilter> for FilterLabel {
    fn from(f: RissenseFilter) -> Self {
        match f {
            RissenseFilter::Ris => FilterLabel::Ris,
            RissenseFilter::Nris => FilterLabel::Nris,
            RissenseFilter::Fusion => FilterLabel::Fusion,
            RissenseFilter::RisRandom => FilterLabel::RisRandom,
        }
    }
}

/// Received-to-transmitted power ratios (linear).
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RissenseLinkBudget {
    pub ris: f64,
    pub double_bounce: f64,
    pub direct: f64,
}

/// GOSPA value and decomposition.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RissenseGospa {
    pub total: f64,
    pub localization: f64,
    pub missed: f64,
    pub false_targets: f64,
}

/// Opaque scenario configuration.
pub struct RissenseConfig {
    inner: ScenarioConfig,
}

/// Opaque campaign result.
pub struct RissenseCampaign {
    summary: CampaignSummary,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &rissense::Error) -> RissenseStatus {
    use rissense::Error as E;
    match e {
        E::Config { .. } => RissenseStatus::Config,
        E::Io(_) | E::Json(_) => RissenseStatus::Io,
        E::InvalidParameter(_) | E::OddTransmissions(_) | E::InvalidPlan(_) | E::WeightViolation(..) => {
            RissenseStatus::InvalidArgument
        }
        _ => RissenseStatus::Computation,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard<F>(f: F) -> RissenseStatus
where
    F: FnOnce() -> Result<(), (RissenseStatus, String)>,
{
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RissenseStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            RissenseStatus::Panic
        }
    }
}

fn lift(e: rissense::Error) -> (RissenseStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (RissenseStatus, String) {
    (RissenseStatus::NullPointer, format!("`{name}` is null"))
}

fn invalid(msg: impl Into<String>) -> (RissenseStatus, String) {
    (RissenseStatus::InvalidArgument, msg.into())
}

unsafe fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, (RissenseStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{name}` is not valid UTF-8")))
}

unsafe fn write_out<T>(out: *mut T, value: T, name: &str) -> Result<(), (RissenseStatus, String)> {
    if out.is_null() {
        return Err(null(name));
    }
    out.write(value);
    Ok(())
}

unsafe fn points(p: *const f64, n: usize, name: &str) -> Result<Vec<Vector3<f64>>, (RissenseStatus, String)> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(null(name));
    }
    let s: &[f64] = std::slice::from_raw_parts(p, 3 * n);
    Ok(s.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect())
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn rissense_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Marcum Q-function of order one.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rissense_marcum_q1(a: f64, b: f64, out: *mut f64) -> RissenseStatus {
    guard(|| {
        if !(a >= 0.0 && b >= 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(invalid(format!("marcum_q1 arguments must be finite and non-negative ({a}, {b})")));
        }
        write_out(out, marcum_q1(a, b), "out")
    })
}

/// Detection probability of a path with amplitude `gain` and matched energy
/// `energy` at noise PSD `noise_psd` and false-alarm rate `p_fa`.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rissense_detection_probability(
    gain: f64,
    energy: f64,
    noise_psd: f64,
    p_fa: f64,
    out: *mut f64,
) -> RissenseStatus {
    guard(|| {
        let cfg = DetectionConfig::new(p_fa).map_err(lift)?;
        if !(noise_psd > 0.0) || !(energy >= 0.0) || !gain.is_finite() {
            return Err(invalid("noise_psd must be positive, energy non-negative, gain finite"));
        }
        write_out(out, detection_probability(gain, energy, noise_psd, &cfg), "out")
    })
}

/// Broadside link budget; `directional` selects the `N_R²` RIS gain.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rissense_link_budget(
    d_ur: f64,
    d_us: f64,
    d_rs: f64,
    ris_elements: usize,
    directional: bool,
    wavelength: f64,
    rcs: f64,
    out: *mut RissenseLinkBudget,
) -> RissenseStatus {
    guard(|| {
        let mode = if directional {
            RisProfileMode::Directional
        } else {
            RisProfileMode::Random
        };
        let lb = link_budget(d_ur, d_us, d_rs, ris_elements, mode, wavelength, rcs).map_err(lift)?;
        write_out(
            out,
            RissenseLinkBudget {
                ris: lb.ris,
                double_bounce: lb.double_bounce,
                direct: lb.direct,
            },
            "out",
        )
    })
}

/// GOSPA between `n_est` and `n_truth` points stored as packed `xyz` triples.
///
/// # Safety
/// `estimates` and `truth` must hold `3 n` doubles (may be null when the
/// count is zero); `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rissense_gospa(
    estimates: *const f64,
    n_est: usize,
    truth: *const f64,
    n_truth: usize,
    order: f64,
    cutoff: f64,
    alpha: f64,
    out: *mut RissenseGospa,
) -> RissenseStatus {
    guard(|| {
        let est = points(estimates, n_est, "estimates")?;
        let tru = points(truth, n_truth, "truth")?;
        let cfg = GospaConfig { order, cutoff, alpha };
        let g = gospa(&est, &tru, &cfg).map_err(lift)?;
        write_out(
            out,
            RissenseGospa {
                total: g.total,
                localization: g.localization,
                missed: g.missed,
                false_targets: g.false_targets,
            },
            "out",
        )
    })
}

/// Parses a TOML scenario (empty string for defaults).
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be null or valid for
/// writes. Free the handle with [`rissense_config_free`].
#[no_mangle]
pub unsafe extern "C" fn rissense_config_from_toml(
    toml: *const c_char,
    out: *mut *mut RissenseConfig,
) -> RissenseStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = c_str(toml, "toml")?;
        let inner = ScenarioConfig::from_toml(text, None, &[]).map_err(lift)?;
        out.write(Box::into_raw(Box::new(RissenseConfig { inner })));
        Ok(())
    })
}

/// Applies a `key=value` override, e.g. `signal.tx_power_dbm=30`.
///
/// # Safety
/// `config` must come from [`rissense_config_from_toml`]; `assignment` must
/// be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rissense_config_set(
    config: *mut RissenseConfig,
    assignment: *const c_char,
) -> RissenseStatus {
    guard(|| {
        let cfg = config.as_mut().ok_or_else(|| null("config"))?;
        let kv = c_str(assignment, "assignment")?;
        let text = cfg.inner.to_toml();
        cfg.inner = ScenarioConfig::from_toml(&text, None, &[kv.to_string()]).map_err(lift)?;
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rissense_config_free(config: *mut RissenseConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs the campaign with `runs` Monte Carlo runs (0 keeps the configured
/// count). Output files are written to `out_dir` unless it is null.
///
/// # Safety
/// `config` must be a live handle; `out_dir` null or NUL-terminated; `out`
/// valid for writes. Free the result with [`rissense_campaign_free`].
#[no_mangle]
pub unsafe extern "C" fn rissense_campaign_run(
    config: *const RissenseConfig,
    runs: usize,
    out_dir: *const c_char,
    out: *mut *mut RissenseCampaign,
) -> RissenseStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = config.as_ref().ok_or_else(|| null("config"))?;
        let mut c = cfg.inner.clone();
        if runs > 0 {
            c.runs = runs;
        }
        let dir = if out_dir.is_null() {
            None
        } else {
            Some(c_str(out_dir, "out_dir")?)
        };
        let summary = run_campaign(&c, dir.map(Path::new)).map_err(lift)?;
        out.write(Box::into_raw(Box::new(RissenseCampaign { summary })));
        Ok(())
    })
}

/// Mean GOSPA of a filter at an epoch (0 is the prior).
///
/// # Safety
/// `campaign` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rissense_campaign_mean_gospa(
    campaign: *const RissenseCampaign,
    filter: RissenseFilter,
    epoch: usize,
    out: *mut f64,
) -> RissenseStatus {
    guard(|| {
        let c = campaign.as_ref().ok_or_else(|| null("campaign"))?;
        let v = c
            .summary
            .mean_at(filter.into(), epoch)
            .ok_or_else(|| invalid(format!("epoch {epoch} out of range")))?;
        write_out(out, v, "out")
    })
}

/// # Safety
/// `campaign` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rissense_campaign_free(campaign: *mut RissenseCampaign) {
    if !campaign.is_null() {
        drop(Box::from_raw(campaign));
    }
}
