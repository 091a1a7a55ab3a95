//! C ABI for crc-sense.
//!
//! Every fallible function returns a [`CrcSenseStatus`]; on failure a
//! message is available from [`crc_sense_last_error`] on the same thread.
//! Configurations and LV models are opaque handles that the caller releases
//! with the matching `_free` function. Calibration data is passed as flat
//! row-major arrays: `features[i*m + j]` is feature j of calibration point i
//! and `occupancy[i*m + j]` is 0 or 1.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use crc_sense::calibration::{nonparametric_thresholds, parametric_thresholds};
use crc_sense::lv::{self, load_model, save_model};
use crc_sense::{
    crc_threshold, decide, fnr, run_trial, tnr, CalibrationEntry, CalibrationSet, Error, FeatureKind, FeatureVector,
    LvModel, Method, OccupancyVector, RiskTarget, RunConfig, ThresholdVector,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrcSenseStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    ModelFormat = 5,
    Runtime = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

pub const CRC_SENSE_FEATURE_PSD: u32 = 0;
pub const CRC_SENSE_FEATURE_LV: u32 = 1;
pub const CRC_SENSE_METHOD_PARAMETRIC: u32 = 0;
pub const CRC_SENSE_METHOD_NONPARAMETRIC: u32 = 1;
pub const CRC_SENSE_METHOD_CRC: u32 = 2;

/// One (feature, method) outcome of a trial.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrcSenseTrialRow {
    pub feature: u32,
    pub method: u32,
    pub fnr: f64,
    pub tnr: f64,
}

/// Opaque run configuration.
pub struct CrcSenseConfig {
    inner: RunConfig,
}

/// Opaque trained LV network.
pub struct CrcSenseLvModel {
    inner: LvModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(CrcSenseStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) => CrcSenseStatus::InvalidArgument,
            Error::Config { .. } | Error::ConfigSyntax(_) => CrcSenseStatus::Config,
            Error::Io { .. } => CrcSenseStatus::Io,
            Error::ModelFormat { .. } => CrcSenseStatus::ModelFormat,
            _ => CrcSenseStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(CrcSenseStatus::InvalidArgument, msg.into())
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CrcSenseStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CrcSenseStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            CrcSenseStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(CrcSenseStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not valid UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn occupancy_of(bits: &[u8], name: &str) -> Result<OccupancyVector, Failure> {
    OccupancyVector::from_bits(bits).map_err(|_| invalid(format!("{name} entries must be 0 or 1")))
}

unsafe fn calibration_set(
    features: *const f64,
    occupancy: *const u8,
    n_cal: usize,
    m: usize,
) -> Result<CalibrationSet, Failure> {
    if n_cal == 0 || m == 0 {
        return Err(invalid("n_cal and m must be positive"));
    }
    let len = n_cal.checked_mul(m).ok_or_else(|| invalid("n_cal * m overflows"))?;
    let f = slice(features, len, "features")?;
    let z = slice(occupancy, len, "occupancy")?;
    let entries = f
        .chunks(m)
        .zip(z.chunks(m))
        .map(|(fv, zv)| {
            Ok(CalibrationEntry {
                features: FeatureVector::new(fv.to_vec(), FeatureKind::Psd),
                occupancy: occupancy_of(zv, "occupancy")?,
            })
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    Ok(CalibrationSet::new(entries)?)
}

fn risk(alpha: f64) -> Result<RiskTarget, Failure> {
    Ok(RiskTarget::new(alpha)?)
}

unsafe fn store<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn crc_sense_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn crc_sense_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// New configuration holding the default operating point.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn crc_sense_config_paper(out: *mut *mut CrcSenseConfig) -> CrcSenseStatus {
    guard(|| {
        non_null(out, "out")?;
        store(out, CrcSenseConfig {
            inner: RunConfig::paper_preset(),
        });
        Ok(())
    })
}

/// Parses a configuration from TOML text.
///
/// # Safety
/// `text` must be NUL-terminated; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn crc_sense_config_from_toml(text: *const c_char, out: *mut *mut CrcSenseConfig) -> CrcSenseStatus {
    guard(|| {
        non_null(out, "out")?;
        let inner = RunConfig::from_toml_str(c_str(text, "text")?)?;
        store(out, CrcSenseConfig { inner });
        Ok(())
    })
}

/// Loads a configuration file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn crc_sense_config_load(path: *const c_char, out: *mut *mut CrcSenseConfig) -> CrcSenseStatus {
    guard(|| {
        non_null(out, "out")?;
        let inner = RunConfig::load(&PathBuf::from(c_str(path, "path")?))?;
        store(out, CrcSenseConfig { inner });
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn crc_sense_config_free(config: *mut CrcSenseConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Subband count M of a configuration.
///
/// # Safety
/// `config` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn crc_sense_config_subbands(config: *const CrcSenseConfig, out: *mut usize) -> CrcSenseStatus {
    guard(|| {
        non_null(config, "config")?;
        non_null(out, "out")?;
        *out = (*config).inner.signal.subbands;
        Ok(())
    })
}

/// Largest number of rows [`crc_sense_run_trial`] can produce for `config`.
///
/// # Safety
/// `config` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn crc_sense_config_rows_per_trial(config: *const CrcSenseConfig, out: *mut usize) -> CrcSenseStatus {
    guard(|| {
        non_null(config, "config")?;
        non_null(out, "out")?;
        let cfg = &(*config).inner;
        let features = usize::from(cfg.features.psd) + usize::from(cfg.features.lv);
        *out = features * cfg.calibration.methods.len();
        Ok(())
    })
}

/// Loads an LV model file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn crc_sense_model_load(path: *const c_char, out: *mut *mut CrcSenseLvModel) -> CrcSenseStatus {
    guard(|| {
        non_null(out, "out")?;
        let inner = load_model(&PathBuf::from(c_str(path, "path")?))?;
        store(out, CrcSenseLvModel { inner });
        Ok(())
    })
}

/// Trains an LV model with the signal, sampling and training settings of `config`.
///
/// # Safety
/// `config` must be a live handle; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn crc_sense_model_train(config: *const CrcSenseConfig, out: *mut *mut CrcSenseLvModel) -> CrcSenseStatus {
    guard(|| {
        non_null(config, "config")?;
        non_null(out, "out")?;
        let cfg = &(*config).inner;
        let (inner, _) = lv::train(&cfg.signal, &cfg.sampling, &cfg.training)?;
        store(out, CrcSenseLvModel { inner });
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn crc_sense_model_save(model: *const CrcSenseLvModel, path: *const c_char) -> CrcSenseStatus {
    guard(|| {
        non_null(model, "model")?;
        save_model(&(*model).inner, &PathBuf::from(c_str(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn crc_sense_model_free(model: *mut CrcSenseLvModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Conformal risk control threshold shared by all subbands. May be -inf or +inf.
///
/// # Safety
/// `features` and `occupancy` must hold `n_cal * m` elements; `out_gamma`
/// must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn crc_sense_crc_threshold(
    features: *const f64,
    occupancy: *const u8,
    n_cal: usize,
    m: usize,
    alpha: f64,
    out_gamma: *mut f64,
) -> CrcSenseStatus {
    guard(|| {
        non_null(out_gamma, "out_gamma")?;
        let cal = calibration_set(features, occupancy, n_cal, m)?;
        *out_gamma = crc_threshold(&cal, risk(alpha)?);
        Ok(())
    })
}

unsafe fn per_subband(
    features: *const f64,
    occupancy: *const u8,
    n_cal: usize,
    m: usize,
    alpha: f64,
    out_gammas: *mut f64,
    rule: fn(&CalibrationSet, RiskTarget) -> ThresholdVector,
) -> CrcSenseStatus {
    guard(|| {
        let cal = calibration_set(features, occupancy, n_cal, m)?;
        let gammas = rule(&cal, risk(alpha)?).gammas;
        slice_mut(out_gammas, m, "out_gammas")?.copy_from_slice(&gammas);
        Ok(())
    })
}

/// Gaussian-fit thresholds, one per subband, written to `out_gammas[0..m]`.
///
/// # Safety
/// As [`crc_sense_crc_threshold`]; `out_gammas` must hold `m` elements.
#[no_mangle]
pub unsafe extern "C" fn crc_sense_parametric_thresholds(
    features: *const f64,
    occupancy: *const u8,
    n_cal: usize,
    m: usize,
    alpha: f64,
    out_gammas: *mut f64,
) -> CrcSenseStatus {
    per_subband(features, occupancy, n_cal, m, alpha, out_gammas, parametric_thresholds)
}

/// Order-statistic thresholds, one per subband, written to `out_gammas[0..m]`.
///
/// # Safety
/// As [`crc_sense_crc_threshold`]; `out_gammas` must hold `m` elements.
#[no_mangle]
pub unsafe extern "C" fn crc_sense_nonparametric_thresholds(
    features: *const f64,
    occupancy: *const u8,
    n_cal: usize,
    m: usize,
    alpha: f64,
    out_gammas: *mut f64,
) -> CrcSenseStatus {
    per_subband(features, occupancy, n_cal, m, alpha, out_gammas, nonparametric_thresholds)
}

/// `out_zhat[j] = features[j] >= gammas[j]`.
///
/// # Safety
/// All three arrays must hold `m` elements.
#[no_mangle]
pub unsafe extern "C" fn crc_sense_decide(
    features: *const f64,
    gammas: *const f64,
    m: usize,
    out_zhat: *mut u8,
) -> CrcSenseStatus {
    guard(|| {
        let f = FeatureVector::new(slice(features, m, "features")?.to_vec(), FeatureKind::Psd);
        let g = ThresholdVector {
            gammas: slice(gammas, m, "gammas")?.to_vec(),
            method: Method::Crc,
        };
        let zhat = decide(&f, &g)?;
        for (o, &b) in slice_mut(out_zhat, m, "out_zhat")?.iter_mut().zip(zhat.bits()) {
            *o = u8::from(b);
        }
        Ok(())
    })
}

unsafe fn rate(
    z: *const u8,
    zhat: *const u8,
    m: usize,
    out: *mut f64,
    f: fn(&OccupancyVector, &OccupancyVector) -> f64,
) -> CrcSenseStatus {
    guard(|| {
        non_null(out, "out")?;
        let z = occupancy_of(slice(z, m, "z")?, "z")?;
        let zhat = occupancy_of(slice(zhat, m, "zhat")?, "zhat")?;
        *out = f(&z, &zhat);
        Ok(())
    })
}

/// False negative rate of a decision; 0 when nothing is occupied.
///
/// # Safety
/// `z` and `zhat` must hold `m` bytes each; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn crc_sense_fnr(z: *const u8, zhat: *const u8, m: usize, out: *mut f64) -> CrcSenseStatus {
    rate(z, zhat, m, out, fnr)
}

/// True negative rate of a decision; 1 when every subband is occupied.
///
/// # Safety
/// As [`crc_sense_fnr`].
#[no_mangle]
pub unsafe extern "C" fn crc_sense_tnr(z: *const u8, zhat: *const u8, m: usize, out: *mut f64) -> CrcSenseStatus {
    rate(z, zhat, m, out, tnr)
}

/// Runs one calibrate-then-test trial from `seed`. `model` may be null when
/// the configuration disables LV features. Rows are written to
/// `rows[0..*out_len]`; if `capacity` is too small, `*out_len` receives the
/// required count and `CRC_SENSE_STATUS_BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// `config` must be a live handle, `model` null or live, `rows` valid for
/// `capacity` writes and `out_len` for one.
#[no_mangle]
pub unsafe extern "C" fn crc_sense_run_trial(
    config: *const CrcSenseConfig,
    model: *const CrcSenseLvModel,
    seed: u64,
    rows: *mut CrcSenseTrialRow,
    capacity: usize,
    out_len: *mut usize,
) -> CrcSenseStatus {
    guard(|| {
        non_null(config, "config")?;
        non_null(out_len, "out_len")?;
        let model = if model.is_null() { None } else { Some(&(*model).inner) };
        let results = run_trial(0, seed, &(*config).inner, model)?;
        *out_len = results.len();
        if capacity < results.len() {
            return Err(Failure(
                CrcSenseStatus::BufferTooSmall,
                format!("{} rows needed, capacity {capacity}", results.len()),
            ));
        }
        let out = slice_mut(rows, results.len(), "rows")?;
        for (o, r) in out.iter_mut().zip(&results) {
            *o = CrcSenseTrialRow {
                feature: match r.feature {
                    FeatureKind::Psd => CRC_SENSE_FEATURE_PSD,
                    FeatureKind::Lv => CRC_SENSE_FEATURE_LV,
                },
                method: match r.method {
                    Method::Parametric => CRC_SENSE_METHOD_PARAMETRIC,
                    Method::Nonparametric => CRC_SENSE_METHOD_NONPARAMETRIC,
                    Method::Crc => CRC_SENSE_METHOD_CRC,
                },
                fnr: r.fnr,
                tnr: r.tnr,
            };
        }
        Ok(())
    })
}
