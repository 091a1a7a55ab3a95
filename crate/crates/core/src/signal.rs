//! Multiband BPSK signal simulation on the Nyquist grid.
//!
//! Subband `m` (1-based) carries a BPSK stream shaped by a sinc or raised
//! cosine pulse and modulated to `f_m = (m - 1/2)·B`, so its spectrum sits in
//! `[(m-1)B, mB]`. Time is sampled at `T = 1/(2MB)`, which makes one symbol
//! exactly `2M` grid points long.

use std::f64::consts::PI;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pulse {
    Sinc,
    RaisedCosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalConfig {
    /// Number of subbands M.
    pub subbands: usize,
    /// Subband bandwidth B in Hz.
    pub bandwidth: f64,
    pub pulse: Pulse,
    /// Raised-cosine roll-off; ignored for the sinc pulse.
    pub beta: f64,
    pub es_min: f64,
    pub es_max: f64,
    /// SNR in dB relative to unit symbol energy. `inf` disables noise.
    pub snr_db: f64,
    pub k_min: usize,
    pub k_max: usize,
    /// Pulse truncation half-width, in symbols.
    pub pulse_span: usize,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            subbands: 40,
            bandwidth: 25e6,
            pulse: Pulse::Sinc,
            beta: 0.0,
            es_min: 1.0,
            es_max: 4.0,
            snr_db: 5.0,
            k_min: 1,
            k_max: 10,
            pulse_span: 8,
        }
    }
}

impl SignalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subbands == 0 {
            return Err(Error::config("signal.subbands", "must be at least 1"));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::config("signal.bandwidth", "must be positive and finite"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config("signal.beta", "must lie in [0, 1]"));
        }
        if !(self.es_min > 0.0 && self.es_min.is_finite()) {
            return Err(Error::config("signal.es_min", "must be positive and finite"));
        }
        if !(self.es_max >= self.es_min && self.es_max.is_finite()) {
            return Err(Error::config("signal.es_max", "must be finite and at least es_min"));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::config("signal.snr_db", "must be a number or +inf"));
        }
        if self.k_min == 0 {
            return Err(Error::config("signal.k_min", "must be at least 1"));
        }
        if self.k_max < self.k_min || self.k_max > self.subbands {
            return Err(Error::config("signal.k_max", "must satisfy k_min <= k_max <= subbands"));
        }
        if self.pulse_span == 0 {
            return Err(Error::config("signal.pulse_span", "must be at least 1"));
        }
        Ok(())
    }

    /// Nyquist sample period `T = 1/(2MB)`.
    pub fn nyquist_period(&self) -> f64 {
        1.0 / (2.0 * self.subbands as f64 * self.bandwidth)
    }

    /// AWGN variance `N_0·M·B` with `N_0 = 1/10^(snr_db/10)`; zero when noiseless.
    pub fn noise_variance(&self) -> f64 {
        if self.snr_db == f64::INFINITY {
            return 0.0;
        }
        let n0 = 10f64.powf(-self.snr_db / 10.0);
        n0 * self.subbands as f64 * self.bandwidth
    }
}

/// Binary occupancy of the M subbands.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OccupancyVector(Vec<bool>);

impl OccupancyVector {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn empty(m: usize) -> Self {
        Self(vec![false; m])
    }

    /// Builds from 0/1 integers; any other value is rejected.
    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        bits.iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::InvalidArgument(format!(
                    "occupancy entries must be 0 or 1, got {other}"
                ))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn occupied_count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// 0-based indices of the occupied subbands.
    pub fn occupied(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn union(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(&a, &b)| a || b).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NyquistSignal {
    pub samples: Vec<f64>,
    /// Sample period T in seconds.
    pub period: f64,
}

impl NyquistSignal {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64
    }
}

/// Draws K uniformly from `k_min..=k_max`, then K distinct subbands uniformly.
pub fn sample_occupancy<R: Rng + ?Sized>(rng: &mut R, cfg: &SignalConfig) -> OccupancyVector {
    let k = rng.gen_range(cfg.k_min..=cfg.k_max);
    let mut bits = vec![false; cfg.subbands];
    for i in index::sample(rng, cfg.subbands, k) {
        bits[i] = true;
    }
    OccupancyVector(bits)
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Pulse value at `x` symbol periods from its center, zero beyond `span`.
fn pulse_value(pulse: Pulse, beta: f64, span: usize, x: f64) -> f64 {
    if x.abs() > span as f64 {
        return 0.0;
    }
    match pulse {
        Pulse::Sinc => sinc(x),
        Pulse::RaisedCosine => {
            if beta == 0.0 {
                return sinc(x);
            }
            let d = 2.0 * beta * x;
            let denom = 1.0 - d * d;
            if denom.abs() < 1e-10 {
                // limit at |x| = 1/(2β)
                PI / 4.0 * sinc(1.0 / (2.0 * beta))
            } else {
                sinc(x) * (PI * beta * x).cos() / denom
            }
        }
    }
}

/// Noise-free multiband signal `Σ_m z_m s_m(nT)` for `n = 0..len`.
///
/// One `u64` is drawn from `rng`; every occupied subband then gets its own
/// stream derived from that value and its index, so the realization of a
/// subband does not depend on which other subbands are occupied.
pub fn synthesize<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &SignalConfig,
    z: &OccupancyVector,
    len: usize,
) -> Result<NyquistSignal> {
    if len == 0 {
        return Err(Error::InvalidArgument("signal length must be at least 1".into()));
    }
    if z.len() != cfg.subbands {
        return Err(Error::InvalidArgument(format!(
            "occupancy has {} entries, expected {}",
            z.len(),
            cfg.subbands
        )));
    }
    let base = rng.next_u64();
    let m_count = cfg.subbands;
    let sps = 2 * m_count; // grid points per symbol
    let span = cfg.pulse_span;

    // Pulse table indexed by (phase r within a symbol, symbol offset d):
    // sample n = q·sps + r sees symbol k = q - d at distance r/sps + d.
    let offsets: Vec<i64> = (-(span as i64) - 1..=span as i64).collect();
    let table: Vec<f64> = (0..sps)
        .flat_map(|r| {
            offsets.iter().map(move |&d| {
                pulse_value(cfg.pulse, cfg.beta, span, r as f64 / sps as f64 + d as f64)
            })
        })
        .collect();

    // Symbols k = -(span+1) ..= last_q + span + 1.
    let last_q = (len - 1) / sps;
    let n_symbols = last_q + 2 * span + 3;
    let first_symbol = -(span as i64) - 1;

    let mut samples = vec![0.0; len];
    let mut baseband = vec![0.0; len];
    let period_4m = 4 * m_count;
    for m in z.occupied() {
        let mut sub = rng_from_seed(derive_seed(base, &[role::SUBBAND, m as u64]));
        let es = if cfg.es_max > cfg.es_min {
            sub.gen_range(cfg.es_min..=cfg.es_max)
        } else {
            cfg.es_min
        };
        let symbols: Vec<f64> = (0..n_symbols)
            .map(|_| if sub.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let amp = (2.0 * es * cfg.bandwidth).sqrt();

        for (n, out) in baseband.iter_mut().enumerate() {
            let q = (n / sps) as i64;
            let r = n % sps;
            let row = &table[r * offsets.len()..(r + 1) * offsets.len()];
            let mut acc = 0.0;
            for (&d, &p) in offsets.iter().zip(row) {
                if p != 0.0 {
                    let k = q - d;
                    acc += symbols[(k - first_symbol) as usize] * p;
                }
            }
            *out = acc;
        }
        // cos(2π f_m nT) = cos(π (2m+1) n / (2M)) with 0-based m; reduce the
        // phase modulo 4M in integers to keep it exact for long windows.
        let harmonic = 2 * m + 1;
        for (n, (s, b)) in samples.iter_mut().zip(&baseband).enumerate() {
            let phase = (harmonic * n) % period_4m;
            let carrier = (PI * phase as f64 / (2 * m_count) as f64).cos();
            *s += amp * b * carrier;
        }
    }
    Ok(NyquistSignal {
        samples,
        period: cfg.nyquist_period(),
    })
}

/// Adds white Gaussian noise of variance [`SignalConfig::noise_variance`].
pub fn add_noise<R: Rng + ?Sized>(
    rng: &mut R,
    sig: &NyquistSignal,
    cfg: &SignalConfig,
) -> NyquistSignal {
    let var = cfg.noise_variance();
    if var == 0.0 {
        return sig.clone();
    }
    let sigma = var.sqrt();
    let samples = sig
        .samples
        .iter()
        .map(|&x| x + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    NyquistSignal {
        samples,
        period: sig.period,
    }
}
