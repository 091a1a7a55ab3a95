//! Batched forward pass, BCE loss and analytic gradients.
//!
//! Per-sample work runs in parallel over fixed-size chunks; every reduction
//! across samples is summed in sample order, so results do not depend on
//! the number of threads.

use rayon::prelude::*;

use super::{LvModel, Params, RealMatrix, BN_EPS};

const CHUNK: usize = 8;

/// Probabilities are kept strictly inside (0, 1).
const PROB_FLOOR: f64 = 1e-15;

struct Activations {
    x: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
}

/// Forward results for a batch.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub probabilities: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
    /// Per-channel mean and biased variance used by batch norm.
    pub bn_mean: Vec<f64>,
    pub bn_var: Vec<f64>,
}

/// Same-padded width-3 convolution. `w` is [out][in][3].
fn conv_forward(input: &[f64], in_ch: usize, w: &[f64], b: &[f64], width: usize) -> Vec<f64> {
    let out_ch = b.len();
    let mut out = vec![0.0; out_ch * width];
    for o in 0..out_ch {
        let row = &mut out[o * width..(o + 1) * width];
        row.fill(b[o]);
        for i in 0..in_ch {
            let src = &input[i * width..(i + 1) * width];
            let k = &w[(o * in_ch + i) * 3..(o * in_ch + i) * 3 + 3];
            // tap t reads src[pos + t - 1]
            for pos in 1..width {
                row[pos] += k[0] * src[pos - 1];
            }
            for pos in 0..width {
                row[pos] += k[1] * src[pos];
            }
            for pos in 0..width - 1 {
                row[pos] += k[2] * src[pos + 1];
            }
        }
    }
    out
}

/// Accumulates weight/bias gradients and, if `d_input` is given, the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    in_ch: usize,
    w: &[f64],
    d_out: &[f64],
    width: usize,
    d_w: &mut [f64],
    d_b: &mut [f64],
    mut d_input: Option<&mut [f64]>,
) {
    let out_ch = d_b.len();
    for o in 0..out_ch {
        let g = &d_out[o * width..(o + 1) * width];
        d_b[o] += g.iter().sum::<f64>();
        for i in 0..in_ch {
            let src = &input[i * width..(i + 1) * width];
            let base = (o * in_ch + i) * 3;
            let mut acc = [0.0; 3];
            for pos in 1..width {
                acc[0] += g[pos] * src[pos - 1];
            }
            for pos in 0..width {
                acc[1] += g[pos] * src[pos];
            }
            for pos in 0..width - 1 {
                acc[2] += g[pos] * src[pos + 1];
            }
            for t in 0..3 {
                d_w[base + t] += acc[t];
            }
            if let Some(di) = d_input.as_deref_mut() {
                let k = &w[base..base + 3];
                let dst = &mut di[i * width..(i + 1) * width];
                for pos in 1..width {
                    dst[pos - 1] += k[0] * g[pos];
                }
                for pos in 0..width {
                    dst[pos] += k[1] * g[pos];
                }
                for pos in 0..width - 1 {
                    dst[pos + 1] += k[2] * g[pos];
                }
            }
        }
    }
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

fn sigmoid(l: f64) -> f64 {
    let p = if l >= 0.0 {
        1.0 / (1.0 + (-l).exp())
    } else {
        let e = l.exp();
        e / (1.0 + e)
    };
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// `-[z·ln σ(l) + (1-z)·ln(1-σ(l))]` evaluated from the logit.
fn bce_from_logit(l: f64, z: f64) -> f64 {
    l.max(0.0) - l * z + (-l.abs()).exp().ln_1p()
}

fn conv_stages(model: &LvModel, xs: &[&RealMatrix]) -> Vec<Activations> {
    let arch = &model.arch;
    let p = &model.params;
    xs.par_iter()
        .with_min_len(CHUNK)
        .map(|x| {
            let scaled: Vec<f64> = x.data.iter().map(|v| v * model.input_scale).collect();
            let h1 = conv_forward(&scaled, arch.in_channels, &p.conv1_w, &p.conv1_b, arch.width);
            let a1 = relu(&h1);
            let h2 = conv_forward(&a1, arch.channels, &p.conv2_w, &p.conv2_b, arch.width);
            Activations { x: scaled, h1, h2 }
        })
        .collect()
}

fn batch_stats(model: &LvModel, acts: &[Activations], training: bool) -> (Vec<f64>, Vec<f64>) {
    if !training {
        return (model.running_mean.clone(), model.running_var.clone());
    }
    let c = model.arch.channels;
    let w = model.arch.width;
    let n = (acts.len() * w) as f64;
    let mut mean = vec![0.0; c];
    for a in acts {
        for ch in 0..c {
            mean[ch] += a.h2[ch * w..(ch + 1) * w].iter().sum::<f64>();
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; c];
    for a in acts {
        for ch in 0..c {
            var[ch] += a.h2[ch * w..(ch + 1) * w]
                .iter()
                .map(|v| (v - mean[ch]).powi(2))
                .sum::<f64>();
        }
    }
    for v in &mut var {
        *v /= n;
    }
    (mean, var)
}

/// Normalized activations, post-ReLU activations and logits for one sample.
fn head(model: &LvModel, h2: &[f64], mean: &[f64], inv_std: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let arch = &model.arch;
    let p = &model.params;
    let w = arch.width;
    let mut xhat = vec![0.0; arch.flat()];
    let mut a2 = vec![0.0; arch.flat()];
    for ch in 0..arch.channels {
        for pos in 0..w {
            let i = ch * w + pos;
            xhat[i] = (h2[i] - mean[ch]) * inv_std[ch];
            a2[i] = (p.bn_gamma[ch] * xhat[i] + p.bn_beta[ch]).max(0.0);
        }
    }
    let flat = arch.flat();
    let logits = (0..arch.subbands)
        .map(|m| {
            let row = &p.fc_w[m * flat..(m + 1) * flat];
            p.fc_b[m] + row.iter().zip(&a2).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    (xhat, a2, logits)
}

pub(crate) fn run_forward(model: &LvModel, xs: &[&RealMatrix], training: bool) -> BatchOutput {
    let acts = conv_stages(model, xs);
    let (mean, var) = batch_stats(model, &acts, training);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let logits: Vec<Vec<f64>> = acts
        .par_iter()
        .with_min_len(CHUNK)
        .map(|a| head(model, &a.h2, &mean, &inv_std).2)
        .collect();
    BatchOutput {
        probabilities: logits
            .iter()
            .map(|l| l.iter().map(|&v| sigmoid(v)).collect())
            .collect(),
        logits,
        bn_mean: mean,
        bn_var: var,
    }
}

struct HeadGrad {
    xhat: Vec<f64>,
    dxhat: Vec<f64>,
}

/// Mean BCE over the batch and subbands, its gradient with respect to every
/// trainable tensor, and the forward outputs.
///
/// `labels[i][m]` is the 0/1 target of subband m for input i. In training
/// mode the batch-norm statistics are those of this batch and the gradient
/// flows through them.
pub fn batch_loss_and_gradients(
    model: &LvModel,
    xs: &[&RealMatrix],
    labels: &[Vec<f64>],
    training: bool,
) -> (f64, Params, BatchOutput) {
    assert_eq!(xs.len(), labels.len(), "one label vector per input");
    assert!(!xs.is_empty(), "empty batch");
    let arch = model.arch;
    let p = &model.params;
    let w = arch.width;
    let c = arch.channels;
    let flat = arch.flat();
    let scale = 1.0 / (xs.len() * arch.subbands) as f64;

    let acts = conv_stages(model, xs);
    let (mean, var) = batch_stats(model, &acts, training);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();

    // Head: loss, dense-layer gradients, gradient at the batch-norm output.
    let head_chunks: Vec<(f64, Params, Vec<HeadGrad>, Vec<Vec<f64>>)> = acts
        .par_chunks(CHUNK)
        .zip(labels.par_chunks(CHUNK))
        .map(|(chunk, lab)| {
            let mut grads = Params::zeros(&arch);
            let mut loss = 0.0;
            let mut out = Vec::with_capacity(chunk.len());
            let mut chunk_logits = Vec::with_capacity(chunk.len());
            for (a, z) in chunk.iter().zip(lab) {
                let (xhat, a2, logits) = head(model, &a.h2, &mean, &inv_std);
                let mut da2 = vec![0.0; flat];
                for m in 0..arch.subbands {
                    loss += bce_from_logit(logits[m], z[m]);
                    let dl = (sigmoid_raw(logits[m]) - z[m]) * scale;
                    grads.fc_b[m] += dl;
                    let wrow = &p.fc_w[m * flat..(m + 1) * flat];
                    let grow = &mut grads.fc_w[m * flat..(m + 1) * flat];
                    for i in 0..flat {
                        grow[i] += dl * a2[i];
                        da2[i] += dl * wrow[i];
                    }
                }
                let mut dxhat = vec![0.0; flat];
                for ch in 0..c {
                    for pos in 0..w {
                        let i = ch * w + pos;
                        // ReLU gate on the batch-norm output
                        let dy = if a2[i] > 0.0 { da2[i] } else { 0.0 };
                        grads.bn_gamma[ch] += dy * xhat[i];
                        grads.bn_beta[ch] += dy;
                        dxhat[i] = dy * p.bn_gamma[ch];
                    }
                }
                out.push(HeadGrad { xhat, dxhat });
                chunk_logits.push(logits);
            }
            (loss, grads, out, chunk_logits)
        })
        .collect();

    let mut loss = 0.0;
    let mut grads = Params::zeros(&arch);
    let mut head_grads = Vec::with_capacity(xs.len());
    let mut logits = Vec::with_capacity(xs.len());
    for (l, g, hg, lg) in head_chunks {
        loss += l;
        grads.add_assign(&g);
        head_grads.extend(hg);
        logits.extend(lg);
    }
    loss *= scale;

    // Batch-norm input gradient needs per-channel batch sums in training mode.
    let n = (xs.len() * w) as f64;
    let mut sum_dxhat = vec![0.0; c];
    let mut sum_dxhat_xhat = vec![0.0; c];
    if training {
        for hg in &head_grads {
            for ch in 0..c {
                for pos in 0..w {
                    let i = ch * w + pos;
                    sum_dxhat[ch] += hg.dxhat[i];
                    sum_dxhat_xhat[ch] += hg.dxhat[i] * hg.xhat[i];
                }
            }
        }
    }

    let conv_chunks: Vec<Params> = acts
        .par_chunks(CHUNK)
        .zip(head_grads.par_chunks(CHUNK))
        .map(|(chunk, hgs)| {
            let mut g = Params::zeros(&arch);
            for (a, hg) in chunk.iter().zip(hgs) {
                let mut dh2 = vec![0.0; flat];
                for ch in 0..c {
                    for pos in 0..w {
                        let i = ch * w + pos;
                        dh2[i] = if training {
                            inv_std[ch]
                                * (hg.dxhat[i]
                                    - sum_dxhat[ch] / n
                                    - hg.xhat[i] * sum_dxhat_xhat[ch] / n)
                        } else {
                            hg.dxhat[i] * inv_std[ch]
                        };
                    }
                }
                let a1 = relu(&a.h1);
                let mut da1 = vec![0.0; flat];
                conv_backward(
                    &a1,
                    c,
                    &p.conv2_w,
                    &dh2,
                    w,
                    &mut g.conv2_w,
                    &mut g.conv2_b,
                    Some(&mut da1),
                );
                for (d, &h) in da1.iter_mut().zip(&a.h1) {
                    if h <= 0.0 {
                        *d = 0.0;
                    }
                }
                conv_backward(
                    &a.x,
                    arch.in_channels,
                    &p.conv1_w,
                    &da1,
                    w,
                    &mut g.conv1_w,
                    &mut g.conv1_b,
                    None,
                );
            }
            g
        })
        .collect();
    for g in conv_chunks {
        grads.add_assign(&g);
    }

    let output = BatchOutput {
        probabilities: logits
            .iter()
            .map(|l| l.iter().map(|&v| sigmoid(v)).collect())
            .collect(),
        logits,
        bn_mean: mean,
        bn_var: var,
    };
    (loss, grads, output)
}

fn sigmoid_raw(l: f64) -> f64 {
    if l >= 0.0 {
        1.0 / (1.0 + (-l).exp())
    } else {
        let e = l.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lv::{LvArch, LvModel};
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn tiny_batch(arch: &LvArch, n: usize, seed: u64) -> (Vec<RealMatrix>, Vec<Vec<f64>>) {
        let mut rng = rng_from_seed(seed);
        let xs = (0..n)
            .map(|_| RealMatrix {
                rows: arch.in_channels,
                cols: arch.width,
                data: (0..arch.in_channels * arch.width)
                    .map(|_| rng.gen_range(-2.0..2.0))
                    .collect(),
            })
            .collect();
        let labels = (0..n)
            .map(|_| (0..arch.subbands).map(|_| f64::from(rng.gen_range(0..2u8))).collect())
            .collect();
        (xs, labels)
    }

    fn perturbed_model(arch: LvArch) -> LvModel {
        let mut model = LvModel::init(arch, &mut rng_from_seed(21));
        let mut rng = rng_from_seed(22);
        for t in model.params.tensors_mut() {
            for x in t.iter_mut() {
                *x += rng.gen_range(-0.1..0.1);
            }
        }
        model.running_mean = (0..arch.channels).map(|_| rng.gen_range(-0.5..0.5)).collect();
        model.running_var = (0..arch.channels).map(|_| rng.gen_range(0.5..2.0)).collect();
        model
    }

    /// Central finite differences against the analytic gradient, every parameter.
    fn check_gradients(training: bool) {
        let arch = LvArch::new(2, 8, 3);
        let model = perturbed_model(arch);
        let (xs, labels) = tiny_batch(&arch, 4, 5);
        let refs: Vec<&RealMatrix> = xs.iter().collect();
        let (_, analytic, _) = batch_loss_and_gradients(&model, &refs, &labels, training);
        let eps = 1e-5;
        let mut worst = 0.0f64;
        for t in 0..8 {
            for i in 0..model.params.tensors()[t].len() {
                let mut plus = model.clone();
                plus.params.tensors_mut()[t][i] += eps;
                let mut minus = model.clone();
                minus.params.tensors_mut()[t][i] -= eps;
                let lp = batch_loss_and_gradients(&plus, &refs, &labels, training).0;
                let lm = batch_loss_and_gradients(&minus, &refs, &labels, training).0;
                let numeric = (lp - lm) / (2.0 * eps);
                let a = analytic.tensors()[t][i];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(err);
                assert!(err <= 1e-4, "tensor {t} index {i}: analytic {a}, numeric {numeric}");
            }
        }
        assert!(worst.is_finite());
    }

    #[test]
    fn gradients_match_finite_differences_training() {
        check_gradients(true);
    }

    #[test]
    fn gradients_match_finite_differences_inference() {
        check_gradients(false);
    }

    #[test]
    fn loss_matches_direct_bce() {
        let arch = LvArch::new(2, 8, 3);
        let model = perturbed_model(arch);
        let (xs, labels) = tiny_batch(&arch, 3, 9);
        let refs: Vec<&RealMatrix> = xs.iter().collect();
        let (loss, _, out) = batch_loss_and_gradients(&model, &refs, &labels, true);
        let mut direct = 0.0;
        for (p, z) in out.probabilities.iter().zip(&labels) {
            for (pm, zm) in p.iter().zip(z) {
                direct -= zm * pm.ln() + (1.0 - zm) * (1.0 - pm).ln();
            }
        }
        direct /= 9.0;
        assert!((loss - direct).abs() < 1e-12);
        let fwd = run_forward(&model, &refs, true);
        assert_eq!(fwd.logits, out.logits);
    }

    #[test]
    fn thread_count_does_not_change_gradients() {
        let arch = LvArch::new(3, 12, 4);
        let model = perturbed_model(arch);
        let (xs, labels) = tiny_batch(&arch, 37, 2);
        let refs: Vec<&RealMatrix> = xs.iter().collect();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| batch_loss_and_gradients(&model, &refs, &labels, true))
        };
        let (l1, g1, _) = run(1);
        let (l4, g4, _) = run(4);
        assert_eq!(l1.to_bits(), l4.to_bits());
        assert_eq!(g1, g4);
    }
}
