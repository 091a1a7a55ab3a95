//! One simulated observation: occupancy draw, synthesis, noise, sampling.

use crate::error::Result;
use crate::mcs::{sample, CosetPattern, SampleMatrix};
use crate::rng::{derive_seed, rng_from_seed, role};
use crate::signal::{add_noise, sample_occupancy, synthesize, OccupancyVector, SignalConfig};

#[derive(Debug, Clone)]
pub struct Observation {
    pub occupancy: OccupancyVector,
    pub samples: SampleMatrix,
}

/// Simulates one (Y, z) pair. The occupancy and signal come from one
/// sub-stream of `seed`, the noise from another.
pub fn observe(
    seed: u64,
    signal: &SignalConfig,
    pattern: &CosetPattern,
    samples_per_coset: usize,
) -> Result<Observation> {
    let mut sig_rng = rng_from_seed(derive_seed(seed, &[role::SIGNAL]));
    let occupancy = sample_occupancy(&mut sig_rng, signal);
    let clean = synthesize(
        &mut sig_rng,
        signal,
        &occupancy,
        samples_per_coset * pattern.decimation(),
    )?;
    let mut noise_rng = rng_from_seed(derive_seed(seed, &[role::NOISE]));
    let noisy = add_noise(&mut noise_rng, &clean, signal);
    let samples = sample(&noisy, pattern, samples_per_coset)?;
    Ok(Observation { occupancy, samples })
}
