//! Multicoset sampling.
//!
//! Coset `p` delays the Nyquist-rate signal by `c_p` grid points and keeps
//! every `L`-th sample, so row `p` of the sample matrix is
//! `y[n·L + c_p]` for `n = 0..N_s`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::rng::rng_from_seed;
use crate::signal::NyquistSignal;

/// Sampler settings as they appear in the `[sampling]` config section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Coset count P.
    pub cosets: usize,
    /// Downsampling factor L.
    pub decimation: usize,
    /// Samples per coset N_s.
    pub samples_per_coset: usize,
    pub coset_seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            cosets: 20,
            decimation: 80,
            samples_per_coset: 48,
            coset_seed: 2024,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cosets == 0 {
            return Err(Error::config("sampling.cosets", "must be at least 1"));
        }
        if self.cosets > self.decimation {
            return Err(Error::config(
                "sampling.cosets",
                format!("must not exceed decimation ({})", self.decimation),
            ));
        }
        if self.samples_per_coset < 2 {
            return Err(Error::config("sampling.samples_per_coset", "must be at least 2"));
        }
        Ok(())
    }

    /// Total sub-Nyquist sample count N = P·N_s.
    pub fn total_samples(&self) -> usize {
        self.cosets * self.samples_per_coset
    }

    /// Nyquist-grid length needed to fill every coset.
    pub fn window_len(&self) -> usize {
        self.samples_per_coset * self.decimation
    }

    pub fn pattern(&self) -> Result<CosetPattern> {
        choose_cosets(self.coset_seed, self.cosets, self.decimation)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CosetPattern {
    decimation: usize,
    cosets: Vec<usize>,
}

impl CosetPattern {
    /// Validates that `cosets` is strictly increasing and below `decimation`.
    pub fn new(decimation: usize, cosets: Vec<usize>) -> Result<Self> {
        if cosets.is_empty() {
            return Err(Error::InvalidArgument("coset pattern is empty".into()));
        }
        if cosets.len() > decimation {
            return Err(Error::InvalidArgument(format!(
                "{} cosets exceed decimation factor {decimation}",
                cosets.len()
            )));
        }
        if cosets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("cosets must be strictly increasing".into()));
        }
        if *cosets.last().unwrap() >= decimation {
            return Err(Error::InvalidArgument(format!(
                "coset offsets must be below {decimation}"
            )));
        }
        Ok(Self { decimation, cosets })
    }

    pub fn decimation(&self) -> usize {
        self.decimation
    }

    pub fn cosets(&self) -> &[usize] {
        &self.cosets
    }

    pub fn count(&self) -> usize {
        self.cosets.len()
    }
}

/// Draws `p` distinct offsets uniformly from `0..l`, sorted.
pub fn choose_cosets(seed: u64, p: usize, l: usize) -> Result<CosetPattern> {
    if p == 0 || p > l {
        return Err(Error::InvalidArgument(format!(
            "coset count must satisfy 1 <= P <= L, got P={p}, L={l}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut cosets = index::sample(&mut rng, l, p).into_vec();
    cosets.sort_unstable();
    CosetPattern::new(l, cosets)
}

/// P×N_s matrix of sub-Nyquist samples, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    data: Vec<f64>,
    samples_per_coset: usize,
    pattern: CosetPattern,
}

impl SampleMatrix {
    pub fn from_rows(pattern: CosetPattern, samples_per_coset: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != pattern.count() * samples_per_coset {
            return Err(Error::InvalidArgument(format!(
                "expected {}x{} samples, got {}",
                pattern.count(),
                samples_per_coset,
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("samples must be finite".into()));
        }
        Ok(Self {
            data,
            samples_per_coset,
            pattern,
        })
    }

    pub fn pattern(&self) -> &CosetPattern {
        &self.pattern
    }

    pub fn rows(&self) -> usize {
        self.pattern.count()
    }

    pub fn samples_per_coset(&self) -> usize {
        self.samples_per_coset
    }

    pub fn total_samples(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, p: usize) -> &[f64] {
        &self.data[p * self.samples_per_coset..(p + 1) * self.samples_per_coset]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

pub fn sample(sig: &NyquistSignal, pattern: &CosetPattern, samples_per_coset: usize) -> Result<SampleMatrix> {
    if samples_per_coset == 0 {
        return Err(Error::InvalidArgument("samples per coset must be at least 1".into()));
    }
    let l = pattern.decimation();
    let max_c = *pattern.cosets().last().unwrap();
    let required = (samples_per_coset - 1) * l + max_c + 1;
    if sig.len() < required {
        return Err(Error::InvalidArgument(format!(
            "signal has {} samples but the pattern needs at least {required}",
            sig.len()
        )));
    }
    let mut data = Vec::with_capacity(pattern.count() * samples_per_coset);
    for &c in pattern.cosets() {
        data.extend((0..samples_per_coset).map(|n| sig.samples[n * l + c]));
    }
    Ok(SampleMatrix {
        data,
        samples_per_coset,
        pattern: pattern.clone(),
    })
}

/// `A[p][l] = exp(j·2π·c_p·l / L) / L`.
pub fn measurement_matrix(pattern: &CosetPattern) -> CMatrix {
    let l = pattern.decimation();
    let inv = 1.0 / l as f64;
    CMatrix::from_fn(pattern.count(), l, |p, col| {
        // reduce c_p·l modulo L before scaling to keep the phase exact
        let k = (pattern.cosets()[p] * col) % l;
        Complex64::from_polar(inv, 2.0 * PI * k as f64 / l as f64)
    })
}
