//! Seeded Monte Carlo trials and parameter sweeps.
//!
//! A trial draws a fresh calibration set and one test observation, computes
//! thresholds with every requested (feature, method) pair, and scores the
//! test decision by FNR and TNR. All randomness is derived from the trial
//! seed, which in a sweep is `derive_seed(base_seed, [SWEEP, value bits, trial])`.
//! A CSV row therefore carries all of its seed material (with the base seed
//! the CLI prints), can be regenerated in isolation with [`replay`], and does
//! not depend on how trials are scheduled across threads.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{decide, thresholds, CalibrationEntry, CalibrationSet, Method};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureVector};
use crate::lv::{self, LvArch, LvModel};
use crate::pipeline::observe;
use crate::psd::psd_features;
use crate::rng::{derive_seed, role};
use crate::signal::{OccupancyVector, Pulse};
use crate::stats::percentile_sorted;

/// Environment variable capping harness parallelism; 0 or unset means all cores.
pub const THREADS_ENV: &str = "CRC_SENSE_THREADS";

/// Fraction of occupied subbands declared idle; 0 when nothing is occupied.
pub fn fnr(z: &OccupancyVector, zhat: &OccupancyVector) -> f64 {
    assert_eq!(z.len(), zhat.len(), "occupancy lengths differ");
    let occupied = z.occupied_count();
    if occupied == 0 {
        return 0.0;
    }
    let missed = z
        .bits()
        .iter()
        .zip(zhat.bits())
        .filter(|(&t, &p)| t && !p)
        .count();
    missed as f64 / occupied as f64
}

/// Fraction of idle subbands declared idle; 1 when every subband is occupied.
pub fn tnr(z: &OccupancyVector, zhat: &OccupancyVector) -> f64 {
    assert_eq!(z.len(), zhat.len(), "occupancy lengths differ");
    let idle = z.len() - z.occupied_count();
    if idle == 0 {
        return 1.0;
    }
    let kept = z
        .bits()
        .iter()
        .zip(zhat.bits())
        .filter(|(&t, &p)| !t && !p)
        .count();
    kept as f64 / idle as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Single operating point.
    None,
    SnrDb,
    NCal,
    /// Total sample count N = P·N_s; N_s is adjusted.
    NSamples,
    NCosets,
    /// Raised-cosine roll-off; switches the pulse to raised cosine.
    Beta,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::None => "none",
            SweepParam::SnrDb => "snr_db",
            SweepParam::NCal => "n_cal",
            SweepParam::NSamples => "n_samples",
            SweepParam::NCosets => "n_cosets",
            SweepParam::Beta => "beta",
        }
    }

    /// Whether the LV network must be retrained when this parameter changes.
    pub fn changes_lv_input(self) -> bool {
        !matches!(self, SweepParam::None | SweepParam::NCal)
    }

    /// Copy of `base` with this parameter set to `value`, validated.
    pub fn apply(self, base: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut cfg = base.clone();
        let as_count = |field: &str| -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
                Ok(value as usize)
            } else {
                Err(Error::config(field, format!("sweep value {value} is not a positive integer")))
            }
        };
        match self {
            SweepParam::None => {}
            SweepParam::SnrDb => cfg.signal.snr_db = value,
            SweepParam::NCal => cfg.calibration.n_cal = as_count("calibration.n_cal")?,
            SweepParam::NSamples => {
                let n = as_count("sampling.samples_per_coset")?;
                let p = cfg.sampling.cosets;
                if n % p != 0 {
                    return Err(Error::config(
                        "sampling.samples_per_coset",
                        format!("N = {n} is not a multiple of P = {p}"),
                    ));
                }
                cfg.sampling.samples_per_coset = n / p;
            }
            SweepParam::NCosets => {
                let p = as_count("sampling.cosets")?;
                cfg.sampling.cosets = p;
                if let Some(k) = cfg.features.k_max {
                    cfg.features.k_max = Some(k.min(p));
                }
            }
            SweepParam::Beta => {
                cfg.signal.pulse = Pulse::RaisedCosine;
                cfg.signal.beta = value;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            SweepParam::None,
            SweepParam::SnrDb,
            SweepParam::NCal,
            SweepParam::NSamples,
            SweepParam::NCosets,
            SweepParam::Beta,
        ]
        .into_iter()
        .find(|p| p.as_str() == s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown sweep parameter `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub trials: usize,
    pub base_seed: u64,
}

impl SweepSpec {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            param: cfg.experiment.sweep_param,
            values: cfg.experiment.sweep_values.clone(),
            trials: cfg.experiment.trials,
            base_seed: cfg.experiment.base_seed,
        }
    }

    /// Seed of trial `trial` at sweep value `value`.
    pub fn trial_seed(&self, value: f64, trial: usize) -> u64 {
        trial_seed(self.base_seed, value, trial)
    }
}

/// Seed of trial `trial` at sweep value `value`; `-0.0` and `0.0` coincide.
pub fn trial_seed(base_seed: u64, value: f64, trial: usize) -> u64 {
    let value = if value == 0.0 { 0.0 } else { value };
    derive_seed(base_seed, &[role::SWEEP, value.to_bits(), trial as u64])
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub feature: FeatureKind,
    pub method: Method,
    pub fnr: f64,
    pub tnr: f64,
}

fn enabled_features(cfg: &RunConfig) -> Vec<FeatureKind> {
    let mut kinds = Vec::new();
    if cfg.features.psd {
        kinds.push(FeatureKind::Psd);
    }
    if cfg.features.lv {
        kinds.push(FeatureKind::Lv);
    }
    kinds
}

fn lv_arch(cfg: &RunConfig) -> LvArch {
    LvArch::new(cfg.sampling.cosets, cfg.sampling.samples_per_coset, cfg.signal.subbands)
}

/// Features of every enabled kind for one simulated observation.
fn featurize(
    seed: u64,
    cfg: &RunConfig,
    pattern: &crate::mcs::CosetPattern,
    kinds: &[FeatureKind],
    lv_model: Option<&LvModel>,
) -> Result<(Vec<FeatureVector>, OccupancyVector)> {
    let obs = observe(seed, &cfg.signal, pattern, cfg.sampling.samples_per_coset)?;
    let features = kinds
        .iter()
        .map(|kind| match kind {
            FeatureKind::Psd => psd_features(&obs.samples, cfg.somp_k_max(), cfg.features.tol),
            FeatureKind::Lv => lv::lv_features(lv_model.expect("checked by caller"), &obs.samples),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((features, obs.occupancy))
}

/// Runs one calibrate-then-test trial for every enabled feature and
/// configured method.
pub fn run_trial(trial: usize, seed: u64, cfg: &RunConfig, lv_model: Option<&LvModel>) -> Result<Vec<TrialResult>> {
    let kinds = enabled_features(cfg);
    if cfg.features.lv {
        let model = lv_model
            .ok_or_else(|| Error::InvalidArgument("LV features requested without a model".into()))?;
        if model.arch != lv_arch(cfg) {
            return Err(Error::InvalidArgument(format!(
                "LV model architecture {:?} does not match the sampling configuration {:?}",
                model.arch,
                lv_arch(cfg)
            )));
        }
    }
    let pattern = cfg.sampling.pattern()?;
    let calibration: Vec<(Vec<FeatureVector>, OccupancyVector)> = (0..cfg.calibration.n_cal)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, &[role::CALIBRATION, i as u64]);
            featurize(s, cfg, &pattern, &kinds, lv_model)
        })
        .collect::<Result<_>>()?;
    let (test_features, test_z) =
        featurize(derive_seed(seed, &[role::TEST, 0]), cfg, &pattern, &kinds, lv_model)?;

    let alpha = cfg.alpha();
    let mut results = Vec::new();
    for (fi, &kind) in kinds.iter().enumerate() {
        let set = CalibrationSet::new(
            calibration
                .iter()
                .map(|(f, z)| CalibrationEntry {
                    features: f[fi].clone(),
                    occupancy: z.clone(),
                })
                .collect(),
        )?;
        for &method in &cfg.calibration.methods {
            let gamma = thresholds(&set, alpha, method);
            let zhat = decide(&test_features[fi], &gamma)?;
            results.push(TrialResult {
                trial,
                seed,
                feature: kind,
                method,
                fnr: fnr(&test_z, &zhat),
                tnr: tnr(&test_z, &zhat),
            });
        }
    }
    Ok(results)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value_index: usize,
    pub value: f64,
    pub result: TrialResult,
}

/// A sweep point or a single trial that could not be run.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepFailure {
    pub value_index: usize,
    pub value: f64,
    /// `None` when the whole sweep point failed (bad value, LV training).
    pub trial: Option<usize>,
    pub seed: Option<u64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

/// Source of LV models for a sweep.
pub enum LvSource<'a> {
    /// Train from the configuration wherever a model is needed.
    Train,
    /// Use this model unless the swept parameter changes the LV input.
    Shared(&'a LvModel),
}

/// Trains (or reuses) the LV model for one sweep point.
fn model_for_point(
    cfg: &RunConfig,
    param: SweepParam,
    source: &LvSource<'_>,
    cache: &mut Option<LvModel>,
) -> Result<Option<LvModel>> {
    if !cfg.features.lv {
        return Ok(None);
    }
    if let LvSource::Shared(model) = source {
        if !param.changes_lv_input() {
            return Ok(Some((*model).clone()));
        }
    }
    if !param.changes_lv_input() {
        if let Some(m) = cache {
            return Ok(Some(m.clone()));
        }
    }
    let (model, _) = lv::train(&cfg.signal, &cfg.sampling, &cfg.training)?;
    if !param.changes_lv_input() {
        *cache = Some(model.clone());
    }
    Ok(Some(model))
}

/// Runs every trial at every sweep value. A value whose configuration is
/// invalid or whose LV training fails is reported in `failures` and skipped;
/// so is a failing trial.
pub fn run_sweep(base: &RunConfig, spec: &SweepSpec, source: LvSource<'_>) -> SweepTable {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut cache = None;
    for (vi, &value) in spec.values.iter().enumerate() {
        let point = spec
            .param
            .apply(base, value)
            .and_then(|cfg| model_for_point(&cfg, spec.param, &source, &mut cache).map(|m| (cfg, m)));
        let (cfg, model) = match point {
            Ok(p) => p,
            Err(e) => {
                failures.push(SweepFailure {
                    value_index: vi,
                    value,
                    trial: None,
                    seed: None,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let outcomes: Vec<(usize, u64, Result<Vec<TrialResult>>)> = (0..spec.trials)
            .into_par_iter()
            .map(|t| {
                let seed = spec.trial_seed(value, t);
                (t, seed, run_trial(t, seed, &cfg, model.as_ref()))
            })
            .collect();
        for (t, seed, outcome) in outcomes {
            match outcome {
                Ok(results) => rows.extend(results.into_iter().map(|result| SweepRow {
                    value_index: vi,
                    value,
                    result,
                })),
                Err(e) => failures.push(SweepFailure {
                    value_index: vi,
                    value,
                    trial: Some(t),
                    seed: Some(seed),
                    message: e.to_string(),
                }),
            }
        }
    }
    SweepTable {
        param: spec.param,
        rows,
        failures,
    }
}

/// Regenerates the rows of one trial of a sweep, exactly as [`run_sweep`]
/// produced them.
pub fn replay(
    base: &RunConfig,
    param: SweepParam,
    value: f64,
    trial: usize,
    source: LvSource<'_>,
) -> Result<Vec<TrialResult>> {
    let cfg = param.apply(base, value)?;
    let model = model_for_point(&cfg, param, &source, &mut None)?;
    let seed = trial_seed(base.experiment.base_seed, value, trial);
    run_trial(trial, seed, &cfg, model.as_ref())
}

/// Runs `f` on a rayon pool with `threads` workers (0 = one per core).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Runtime(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Thread cap from [`THREADS_ENV`]; 0 when unset.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("{THREADS_ENV} must be a non-negative integer, got `{v}`"))),
        Err(_) => Ok(0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub value: f64,
    pub feature: FeatureKind,
    pub method: Method,
    pub trials: usize,
    pub mean_fnr: f64,
    pub fnr_lo: f64,
    pub fnr_hi: f64,
    pub mean_tnr: f64,
    pub tnr_lo: f64,
    pub tnr_hi: f64,
}

/// Mean and 2.5 % / 97.5 % percentiles per (value, feature, method).
pub fn summarize(table: &SweepTable) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(usize, FeatureKind, Method), (f64, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for row in &table.rows {
        let g = groups
            .entry((row.value_index, row.result.feature, row.result.method))
            .or_insert_with(|| (row.value, Vec::new(), Vec::new()));
        g.1.push(row.result.fnr);
        g.2.push(row.result.tnr);
    }
    groups
        .into_iter()
        .map(|((_, feature, method), (value, mut f, mut t))| {
            f.sort_by(f64::total_cmp);
            t.sort_by(f64::total_cmp);
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            SummaryRow {
                value,
                feature,
                method,
                trials: f.len(),
                mean_fnr: mean(&f),
                fnr_lo: percentile_sorted(&f, 0.025),
                fnr_hi: percentile_sorted(&f, 0.975),
                mean_tnr: mean(&t),
                tnr_lo: percentile_sorted(&t, 0.025),
                tnr_hi: percentile_sorted(&t, 0.975),
            }
        })
        .collect()
}

pub const TRIALS_HEADER: &str = "sweep_param,sweep_value,feature,method,trial,fnr,tnr";
pub const SUMMARY_HEADER: &str =
    "sweep_param,sweep_value,feature,method,mean_fnr,fnr_lo,fnr_hi,mean_tnr,tnr_lo,tnr_hi";

/// One row per trial and (feature, method), ordered by sweep point then trial.
pub fn write_trials_csv<W: Write>(table: &SweepTable, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{TRIALS_HEADER}")?;
    let mut rows: Vec<&SweepRow> = table.rows.iter().collect();
    rows.sort_by_key(|r| (r.value_index, r.result.trial, r.result.feature, r.result.method));
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            table.param, r.value, r.result.feature, r.result.method, r.result.trial, r.result.fnr, r.result.tnr
        )?;
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(param: SweepParam, summary: &[SummaryRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for s in summary {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            param, s.value, s.feature, s.method, s.mean_fnr, s.fnr_lo, s.fnr_hi, s.mean_tnr, s.tnr_lo, s.tnr_hi
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn occ(bits: &[u8]) -> OccupancyVector {
        OccupancyVector::from_bits(bits).unwrap()
    }

    #[test]
    fn fnr_cases() {
        let z = occ(&[1, 0, 1, 0]);
        assert_eq!(fnr(&z, &z), 0.0);
        assert_eq!(fnr(&z, &occ(&[0, 0, 1, 1])), 0.5);
        assert_eq!(fnr(&z, &occ(&[1, 1, 1, 1])), 0.0);
        assert_eq!(fnr(&occ(&[0, 0]), &occ(&[0, 0])), 0.0);
    }

    #[test]
    fn tnr_cases() {
        let z = occ(&[1, 0, 1, 0]);
        assert_eq!(tnr(&z, &z), 1.0);
        assert_eq!(tnr(&z, &occ(&[0, 0, 1, 1])), 0.5);
        assert_eq!(tnr(&z, &occ(&[1, 1, 1, 1])), 0.0);
        assert_eq!(tnr(&occ(&[1, 1]), &occ(&[0, 0])), 1.0);
    }

    #[test]
    fn rates_complement_detection() {
        let z = occ(&[1, 1, 0, 1, 0, 0, 1]);
        let zhat = occ(&[1, 0, 1, 1, 0, 1, 0]);
        let detected = 2.0 / 4.0;
        let false_alarms = 2.0 / 3.0;
        assert_eq!(fnr(&z, &zhat) + detected, 1.0);
        assert_eq!(tnr(&z, &zhat) + false_alarms, 1.0);
    }

    fn table_of(values: &[(f64, f64)]) -> SweepTable {
        SweepTable {
            param: SweepParam::SnrDb,
            rows: values
                .iter()
                .enumerate()
                .map(|(t, &(f, n))| SweepRow {
                    value_index: 0,
                    value: 5.0,
                    result: TrialResult {
                        trial: t,
                        seed: t as u64,
                        feature: FeatureKind::Psd,
                        method: Method::Crc,
                        fnr: f,
                        tnr: n,
                    },
                })
                .collect(),
            failures: vec![],
        }
    }

    #[test]
    fn summary_single_row() {
        let s = summarize(&table_of(&[(0.25, 0.5)]));
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].mean_fnr, s[0].fnr_lo, s[0].fnr_hi), (0.25, 0.25, 0.25));
    }

    #[test]
    fn summary_interpolates_percentiles() {
        let s = summarize(&table_of(&[(0.0, 1.0), (1.0, 0.0)]));
        assert_eq!(s[0].mean_fnr, 0.5);
        // hand interpolation: position (n-1)·q = 0.025 between 0 and 1
        assert!((s[0].fnr_lo - 0.025).abs() < 1e-15);
        assert!((s[0].fnr_hi - 0.975).abs() < 1e-15);
        assert!((s[0].tnr_lo - 0.025).abs() < 1e-15);

        let s = summarize(&table_of(&[(0.2, 0.3); 7]));
        assert_eq!(s[0].fnr_lo, s[0].fnr_hi);
        assert_eq!(s[0].tnr_lo, s[0].tnr_hi);
    }

    #[test]
    fn csv_layout() {
        let table = table_of(&[(0.5, 0.25)]);
        let mut buf = Vec::new();
        write_trials_csv(&table, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, format!("{TRIALS_HEADER}\nsnr_db,5,psd,crc,0,0.5,0.25\n"));
        let mut buf = Vec::new();
        write_summary_csv(SweepParam::SnrDb, &summarize(&table), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1), Some("snr_db,5,psd,crc,0.5,0.5,0.5,0.25,0.25,0.25"));
    }

    #[test]
    fn sweep_param_application() {
        let base = RunConfig::paper_preset();
        assert_eq!(SweepParam::NSamples.apply(&base, 640.0).unwrap().sampling.samples_per_coset, 32);
        assert!(SweepParam::NSamples.apply(&base, 650.0).is_err());
        assert!(SweepParam::NCal.apply(&base, 2.5).is_err());
        let b = SweepParam::Beta.apply(&base, 0.5).unwrap();
        assert_eq!((b.signal.pulse, b.signal.beta), (Pulse::RaisedCosine, 0.5));
        let p = SweepParam::NCosets.apply(&base, 5.0).unwrap();
        assert_eq!(p.somp_k_max(), 5);
        assert!(SweepParam::NCosets.apply(&base, 81.0).is_err());
        assert_eq!("n_cosets".parse::<SweepParam>().unwrap(), SweepParam::NCosets);
        assert!("bogus".parse::<SweepParam>().is_err());
    }
}
