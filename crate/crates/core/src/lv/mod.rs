//! Logit-vector (LV) features: a small 1-D CNN over the DFT of the sample
//! matrix that outputs one occupancy probability per subband.
//!
//! Layers: conv(2P→C, width 3, same padding) → ReLU → conv(C→C, width 3)
//! → batch norm → ReLU → dense (C·N_s → M) → sigmoid. The input rows are the
//! real parts then the imaginary parts of each coset's N_s-point DFT.

mod backprop;
mod io;
mod train;

use rand::Rng;

use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureVector};
use crate::mcs::SampleMatrix;
use crate::psd::row_dfts;
use crate::rng::SimRng;

pub use backprop::{batch_loss_and_gradients, BatchOutput};
pub use io::{load_model, read_model, save_model, write_model};
pub use train::{fit, train, TrainConfig};

pub const DEFAULT_CHANNELS: usize = 32;
pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

/// Dense real matrix, row-major; the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RealMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// 2P×N_s input: real parts of the per-coset DFTs, then imaginary parts.
pub fn lv_input(y: &SampleMatrix) -> RealMatrix {
    let spectra = row_dfts(y);
    let p = y.rows();
    let ns = y.samples_per_coset();
    let mut out = RealMatrix::zeros(2 * p, ns);
    for r in 0..p {
        for (k, z) in spectra.row(r).iter().enumerate() {
            out.data[r * ns + k] = z.re;
            out.data[(p + r) * ns + k] = z.im;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LvArch {
    /// 2P input rows.
    pub in_channels: usize,
    /// N_s input columns; convolutions preserve it.
    pub width: usize,
    pub subbands: usize,
    pub channels: usize,
}

impl LvArch {
    pub fn new(cosets: usize, samples_per_coset: usize, subbands: usize) -> Self {
        Self {
            in_channels: 2 * cosets,
            width: samples_per_coset,
            subbands,
            channels: DEFAULT_CHANNELS,
        }
    }

    pub fn flat(&self) -> usize {
        self.channels * self.width
    }
}

/// Trainable tensors. Gradients use the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// [out][in][3]
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    /// [out][in][3]
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub bn_gamma: Vec<f64>,
    pub bn_beta: Vec<f64>,
    /// [subband][channel·width]
    pub fc_w: Vec<f64>,
    pub fc_b: Vec<f64>,
}

pub(crate) const PARAM_NAMES: [&str; 8] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "bn.weight",
    "bn.bias",
    "fc.weight",
    "fc.bias",
];

impl Params {
    pub fn zeros(arch: &LvArch) -> Self {
        let c = arch.channels;
        Self {
            conv1_w: vec![0.0; c * arch.in_channels * 3],
            conv1_b: vec![0.0; c],
            conv2_w: vec![0.0; c * c * 3],
            conv2_b: vec![0.0; c],
            bn_gamma: vec![0.0; c],
            bn_beta: vec![0.0; c],
            fc_w: vec![0.0; arch.subbands * arch.flat()],
            fc_b: vec![0.0; arch.subbands],
        }
    }

    pub fn shapes(arch: &LvArch) -> [Vec<usize>; 8] {
        let c = arch.channels;
        [
            vec![c, arch.in_channels, 3],
            vec![c],
            vec![c, c, 3],
            vec![c],
            vec![c],
            vec![c],
            vec![arch.subbands, arch.flat()],
            vec![arch.subbands],
        ]
    }

    pub fn tensors(&self) -> [&Vec<f64>; 8] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.bn_gamma,
            &self.bn_beta,
            &self.fc_w,
            &self.fc_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.bn_gamma,
            &mut self.bn_beta,
            &mut self.fc_w,
            &mut self.fc_b,
        ]
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LvModel {
    pub arch: LvArch,
    pub params: Params,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Inputs are multiplied by this before the first convolution; set from
    /// the training data so that the first layer sees unit-RMS inputs.
    pub input_scale: f64,
}

impl LvModel {
    /// All-zero weights, unit batch-norm scale, unit running variance.
    pub fn zeros(arch: LvArch) -> Self {
        let mut params = Params::zeros(&arch);
        params.bn_gamma.fill(1.0);
        Self {
            arch,
            params,
            running_mean: vec![0.0; arch.channels],
            running_var: vec![1.0; arch.channels],
            input_scale: 1.0,
        }
    }

    /// He-uniform convolution weights, `1/√fan_in` dense weights, zero biases.
    pub fn init(arch: LvArch, rng: &mut SimRng) -> Self {
        let mut model = Self::zeros(arch);
        let uniform = |rng: &mut SimRng, t: &mut Vec<f64>, bound: f64| {
            for x in t.iter_mut() {
                *x = rng.gen_range(-bound..bound);
            }
        };
        uniform(rng, &mut model.params.conv1_w, (6.0 / (3 * arch.in_channels) as f64).sqrt());
        uniform(rng, &mut model.params.conv2_w, (6.0 / (3 * arch.channels) as f64).sqrt());
        uniform(rng, &mut model.params.fc_w, 1.0 / (arch.flat() as f64).sqrt());
        model
    }

    pub fn check_input(&self, x: &RealMatrix) -> Result<()> {
        if x.rows != self.arch.in_channels || x.cols != self.arch.width {
            return Err(Error::InvalidArgument(format!(
                "LV input is {}x{}, model expects {}x{}",
                x.rows, x.cols, self.arch.in_channels, self.arch.width
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params.all_finite()
            && self.running_mean.iter().all(|x| x.is_finite())
            && self.running_var.iter().all(|x| x.is_finite())
            && self.input_scale.is_finite()
    }
}

/// Occupancy probabilities for one input. With `training` set, batch norm
/// normalizes with the statistics of this single input; otherwise it uses
/// the running statistics.
pub fn forward(model: &LvModel, x: &RealMatrix, training: bool) -> Result<FeatureVector> {
    let mut out = forward_batch(model, &[x], training)?;
    Ok(out.pop().expect("one output per input"))
}

pub fn forward_batch(model: &LvModel, xs: &[&RealMatrix], training: bool) -> Result<Vec<FeatureVector>> {
    for x in xs {
        model.check_input(x)?;
    }
    let out = backprop::run_forward(model, xs, training);
    Ok(out
        .probabilities
        .into_iter()
        .map(|p| FeatureVector::new(p, FeatureKind::Lv))
        .collect())
}

/// Inference-mode LV features of a sample matrix.
pub fn lv_features(model: &LvModel, y: &SampleMatrix) -> Result<FeatureVector> {
    forward(model, &lv_input(y), false)
}
