//! Sub-Nyquist spectrum sensing with reliable threshold calibration.
//!
//! The crate simulates a multiband BPSK signal, samples it with a multicoset
//! sampler, extracts per-subband features (sparse-recovery PSD estimates or
//! the sigmoid outputs of a small CNN), and turns features into occupancy
//! decisions with thresholds calibrated on held-out data. Three calibration
//! rules are provided: a Gaussian quantile fit, an empirical order statistic,
//! and conformal risk control, which bounds the expected false negative rate
//! for any calibration set size.
//!
//! The [`harness`] module wires the pipeline into seeded Monte Carlo trials
//! and parameter sweeps that write per-trial and summary CSV tables.

pub mod calibration;
pub mod config;
pub mod error;
pub mod features;
pub mod harness;
pub mod linalg;
pub mod lv;
pub mod mcs;
pub mod pipeline;
pub mod psd;
pub mod rng;
pub mod selfcheck;
pub mod signal;
pub mod stats;

pub use calibration::{
    crc_threshold, decide, fnr_of_threshold, nonparametric_thresholds, occupied_features,
    parametric_thresholds, CalibrationEntry, CalibrationSet, Method, RiskTarget, ThresholdVector,
};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use features::{FeatureKind, FeatureVector};
pub use harness::{fnr, tnr, run_sweep, run_trial, summarize, SweepParam, SweepSpec, TrialResult};
pub use lv::{LvArch, LvModel, TrainConfig};
pub use mcs::{choose_cosets, measurement_matrix, sample, CosetPattern, SampleMatrix, SamplingConfig};
pub use psd::{coset_spectra, psd_features, somp, SpectralSliceEstimate};
pub use signal::{
    add_noise, sample_occupancy, synthesize, NyquistSignal, OccupancyVector, Pulse, SignalConfig,
};
