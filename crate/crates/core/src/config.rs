//! Run configuration.
//!
//! The file is TOML restricted to named sections of `key = value` lines with
//! `#` comments. Every key has a default, unknown keys are rejected, and
//! constraint violations name the offending `section.key`.
//!
//! ```toml
//! [signal]
//! subbands = 40          # M
//! bandwidth = 25e6       # B, Hz
//! pulse = "sinc"         # or "raised-cosine"
//! beta = 0.0             # raised-cosine roll-off
//! es_min = 1.0
//! es_max = 4.0
//! snr_db = 5.0           # inf for a noiseless run
//! k_min = 1              # occupied-subband count is uniform on k_min..=k_max
//! k_max = 10
//! pulse_span = 8
//!
//! [sampling]
//! cosets = 20            # P
//! decimation = 80        # L, must equal 2M
//! samples_per_coset = 48 # N_s
//! coset_seed = 2024
//!
//! [features]
//! psd = true
//! lv = true
//! # k_max = 20           # SOMP support size; defaults to P
//! tol = 1e-3
//! # lv_model = "lv.model" # trained model; trained on the fly when absent
//!
//! [training]
//! n_train = 4000
//! epochs = 20
//! batch_size = 64
//! learning_rate = 1e-3
//! seed = 7
//!
//! [calibration]
//! alpha = 0.1
//! n_cal = 150
//! methods = ["parametric", "nonparametric", "crc"]
//!
//! [experiment]
//! trials = 50
//! base_seed = 1
//! sweep_param = "snr_db"
//! sweep_values = [0.0, 5.0, 10.0]
//!
//! [output]
//! trials_csv = "trials.csv"
//! summary_csv = "summary.csv"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{Method, RiskTarget};
use crate::error::{Error, Result};
use crate::harness::SweepParam;
use crate::lv::TrainConfig;
use crate::mcs::SamplingConfig;
use crate::signal::SignalConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub psd: bool,
    pub lv: bool,
    /// SOMP support cap counting both members of each conjugate pair; P when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    pub tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lv_model: Option<PathBuf>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            psd: true,
            lv: true,
            k_max: None,
            tol: 1e-3,
            lv_model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub alpha: f64,
    pub n_cal: usize,
    pub methods: Vec<Method>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            n_cal: 150,
            methods: Method::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub trials: usize,
    pub base_seed: u64,
    pub sweep_param: SweepParam,
    pub sweep_values: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            trials: 50,
            base_seed: 1,
            sweep_param: SweepParam::SnrDb,
            sweep_values: vec![0.0, 5.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub trials_csv: PathBuf,
    pub summary_csv: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            trials_csv: "trials.csv".into(),
            summary_csv: "summary.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub signal: SignalConfig,
    pub sampling: SamplingConfig,
    pub features: FeatureConfig,
    pub training: TrainConfig,
    pub calibration: CalibrationConfig,
    pub experiment: ExperimentConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    /// The reference operating point: M = 40, B = 25 MHz, P = 20, L = 80,
    /// N_s = 48, |D_cal| = 150, α = 0.1, occupancy uniform on 1..=10.
    pub fn paper_preset() -> Self {
        Self::default()
    }

    /// The coset-count experiment: N_s = 32, E_s = 1, SNR = 0 dB, occupancy
    /// uniform on 6..=20, swept over P.
    pub fn coset_sweep_preset() -> Self {
        let mut cfg = Self::default();
        cfg.sampling.samples_per_coset = 32;
        cfg.signal.es_min = 1.0;
        cfg.signal.es_max = 1.0;
        cfg.signal.snr_db = 0.0;
        cfg.signal.k_min = 6;
        cfg.signal.k_max = 20;
        cfg.experiment.sweep_param = SweepParam::NCosets;
        cfg.experiment.sweep_values = vec![2.0, 5.0, 10.0, 20.0, 40.0, 80.0];
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::ConfigSyntax(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.signal.validate()?;
        self.sampling.validate()?;
        if self.sampling.decimation != 2 * self.signal.subbands {
            return Err(Error::config(
                "sampling.decimation",
                format!(
                    "must equal 2 x signal.subbands = {}, got {}",
                    2 * self.signal.subbands,
                    self.sampling.decimation
                ),
            ));
        }
        if !self.features.psd && !self.features.lv {
            return Err(Error::config("features", "enable at least one of psd, lv"));
        }
        if let Some(k) = self.features.k_max {
            if k == 0 || k > self.sampling.cosets {
                return Err(Error::config("features.k_max", "must lie in 1..=sampling.cosets"));
            }
        }
        if !(self.features.tol > 0.0 && self.features.tol < 1.0) {
            return Err(Error::config("features.tol", "must lie in (0, 1)"));
        }
        if self.features.lv {
            if let Some(path) = &self.features.lv_model {
                if !path.exists() {
                    return Err(Error::config(
                        "features.lv_model",
                        format!("{} does not exist", path.display()),
                    ));
                }
            }
            self.training.validate()?;
        }
        if RiskTarget::new(self.calibration.alpha).is_err() {
            return Err(Error::config("calibration.alpha", "must lie in [0, 1]"));
        }
        if self.calibration.n_cal == 0 {
            return Err(Error::config("calibration.n_cal", "must be at least 1"));
        }
        if self.calibration.methods.is_empty() {
            return Err(Error::config("calibration.methods", "list at least one method"));
        }
        if self.experiment.trials == 0 {
            return Err(Error::config("experiment.trials", "must be at least 1"));
        }
        if self.experiment.sweep_values.is_empty() {
            return Err(Error::config("experiment.sweep_values", "must not be empty"));
        }
        if self.experiment.sweep_values.iter().any(|v| v.is_nan()) {
            return Err(Error::config("experiment.sweep_values", "must not contain NaN"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    pub fn somp_k_max(&self) -> usize {
        self.features.k_max.unwrap_or(self.sampling.cosets)
    }

    pub fn alpha(&self) -> RiskTarget {
        RiskTarget::new(self.calibration.alpha).expect("validated alpha")
    }

    /// Total sub-Nyquist samples N = P·N_s.
    pub fn total_samples(&self) -> usize {
        self.sampling.total_samples()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let cfg = RunConfig::paper_preset();
        let text = cfg.to_toml_string();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        let again = RunConfig::from_toml_str(&back.to_toml_string()).unwrap();
        assert_eq!(again, cfg);

        let mut custom = RunConfig::coset_sweep_preset();
        custom.features.k_max = Some(4);
        custom.signal.snr_db = f64::INFINITY;
        assert_eq!(RunConfig::from_toml_str(&custom.to_toml_string()).unwrap(), custom);
    }

    #[test]
    fn paper_preset_values() {
        let cfg = RunConfig::paper_preset();
        assert_eq!(cfg.signal.subbands, 40);
        assert_eq!(cfg.signal.bandwidth, 25e6);
        assert_eq!(cfg.sampling.cosets, 20);
        assert_eq!(cfg.sampling.decimation, 80);
        assert_eq!(cfg.sampling.samples_per_coset, 48);
        assert_eq!(cfg.total_samples(), 960);
        assert_eq!(cfg.calibration.n_cal, 150);
        assert_eq!(cfg.calibration.alpha, 0.1);
        assert_eq!(cfg.somp_k_max(), 20);
    }

    #[test]
    fn alpha_out_of_range_names_field() {
        let err = RunConfig::from_toml_str("[calibration]\nalpha = 1.5\n").unwrap_err();
        match err {
            Error::Config { field, .. } => assert_eq!(field, "calibration.alpha"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_keys_and_syntax_errors() {
        let err = RunConfig::from_toml_str("[signal]\nsubband = 4\n").unwrap_err();
        assert!(matches!(err, Error::ConfigSyntax(_)), "{err}");
        assert!(err.to_string().contains("subband"));
        let err = RunConfig::from_toml_str("[signal]\n\nsnr_db = = 3\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(RunConfig::from_toml_str("[nonsense]\n").is_err());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg = RunConfig::from_toml_str("# comment\n[signal]\nsnr_db = 0.0 # dB\n").unwrap();
        assert_eq!(cfg.signal.snr_db, 0.0);
        assert_eq!(cfg.signal.subbands, 40);
        assert_eq!(cfg.calibration.n_cal, 150);
    }

    #[test]
    fn decimation_must_be_twice_subbands() {
        let err = RunConfig::from_toml_str("[sampling]\ndecimation = 60\ncosets = 20\n").unwrap_err();
        assert!(err.to_string().contains("sampling.decimation"), "{err}");
    }

    #[test]
    fn missing_model_file_rejected() {
        let err = RunConfig::from_toml_str("[features]\nlv_model = \"/nonexistent/m.txt\"\n").unwrap_err();
        assert!(err.to_string().contains("features.lv_model"));
    }
}
