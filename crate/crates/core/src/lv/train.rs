use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{batch_loss_and_gradients, lv_input, LvArch, LvModel, Params, RealMatrix, BN_MOMENTUM};
use crate::error::{Error, Result};
use crate::mcs::SamplingConfig;
use crate::pipeline::observe;
use crate::rng::{derive_seed, rng_from_seed, role};
use crate::signal::{OccupancyVector, SignalConfig};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub n_train: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_train: 4000,
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 {
            return Err(Error::config("training.n_train", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("training.epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("training.batch_size", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("training.learning_rate", "must be positive and finite"));
        }
        Ok(())
    }
}

struct Adam {
    m: Params,
    v: Params,
    step: i32,
}

impl Adam {
    fn new(arch: &LvArch) -> Self {
        Self {
            m: Params::zeros(arch),
            v: Params::zeros(arch),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut Params, grads: &Params, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for (((p, g), m), v) in tensors {
            for i in 0..p.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
    }
}

fn labels_of(z: &OccupancyVector) -> Vec<f64> {
    z.bits().iter().map(|&b| f64::from(u8::from(b))).collect()
}

/// Mini-batch Adam on mean BCE. Returns the mean training loss of each epoch.
///
/// Batch order is reshuffled every epoch from `tc.seed`; the running
/// batch-norm statistics are updated with momentum 0.1 and the unbiased
/// batch variance.
pub fn fit(
    model: &mut LvModel,
    inputs: &[RealMatrix],
    labels: &[OccupancyVector],
    tc: &TrainConfig,
) -> Result<Vec<f64>> {
    tc.validate()?;
    if inputs.len() != labels.len() || inputs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} inputs and {} label vectors",
            inputs.len(),
            labels.len()
        )));
    }
    for x in inputs {
        model.check_input(x)?;
    }
    if labels.iter().any(|z| z.len() != model.arch.subbands) {
        return Err(Error::InvalidArgument("label length differs from subband count".into()));
    }
    let targets: Vec<Vec<f64>> = labels.iter().map(labels_of).collect();
    let mut adam = Adam::new(&model.arch);
    let mut history = Vec::with_capacity(tc.epochs);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let width = model.arch.width as f64;

    for epoch in 0..tc.epochs {
        let mut rng = rng_from_seed(derive_seed(tc.seed, &[role::TRAINING, 1, epoch as u64]));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(tc.batch_size) {
            let xs: Vec<&RealMatrix> = batch.iter().map(|&i| &inputs[i]).collect();
            let ys: Vec<Vec<f64>> = batch.iter().map(|&i| targets[i].clone()).collect();
            let (loss, grads, out) = batch_loss_and_gradients(model, &xs, &ys, true);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    learning_rate: tc.learning_rate,
                });
            }
            total += loss * batch.len() as f64;
            let n = batch.len() as f64 * width;
            let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            for ch in 0..model.arch.channels {
                model.running_mean[ch] =
                    (1.0 - BN_MOMENTUM) * model.running_mean[ch] + BN_MOMENTUM * out.bn_mean[ch];
                model.running_var[ch] =
                    (1.0 - BN_MOMENTUM) * model.running_var[ch] + BN_MOMENTUM * out.bn_var[ch] * unbias;
            }
            adam.update(&mut model.params, &grads, tc.learning_rate);
        }
        let mean = total / inputs.len() as f64;
        if !mean.is_finite() || !model.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                learning_rate: tc.learning_rate,
            });
        }
        history.push(mean);
    }
    Ok(history)
}

/// Generates `tc.n_train` observations from the simulation pipeline and fits
/// a freshly initialized model to them.
pub fn train(
    signal: &SignalConfig,
    sampling: &SamplingConfig,
    tc: &TrainConfig,
) -> Result<(LvModel, Vec<f64>)> {
    signal.validate()?;
    sampling.validate()?;
    tc.validate()?;
    let pattern = sampling.pattern()?;
    let data: Vec<(RealMatrix, OccupancyVector)> = (0..tc.n_train)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(tc.seed, &[role::TRAINING, 0, i as u64]);
            let obs = observe(seed, signal, &pattern, sampling.samples_per_coset)?;
            Ok((lv_input(&obs.samples), obs.occupancy))
        })
        .collect::<Result<_>>()?;
    let (inputs, labels): (Vec<_>, Vec<_>) = data.into_iter().unzip();

    let arch = LvArch::new(sampling.cosets, sampling.samples_per_coset, signal.subbands);
    let mut model = LvModel::init(arch, &mut rng_from_seed(derive_seed(tc.seed, &[role::TRAINING, 2])));
    let count: usize = inputs.iter().map(|x| x.data.len()).sum();
    let energy: f64 = inputs.iter().flat_map(|x| &x.data).map(|v| v * v).sum();
    let rms = (energy / count as f64).sqrt();
    model.input_scale = if rms > 0.0 { 1.0 / rms } else { 1.0 };

    let history = fit(&mut model, &inputs, &labels, tc)?;
    Ok((model, history))
}
