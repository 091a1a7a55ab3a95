//! Quick runtime checks of the numerical kernels against brute-force
//! references, run by `crc-sense selfcheck`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::calibration::{crc_threshold, fnr_of_threshold, CalibrationEntry, CalibrationSet, RiskTarget};
use crate::features::{FeatureKind, FeatureVector};
use crate::lv::{batch_loss_and_gradients, LvArch, LvModel, RealMatrix};
use crate::mcs::{choose_cosets, SampleMatrix};
use crate::psd::row_dfts;
use crate::rng::rng_from_seed;
use crate::signal::OccupancyVector;
use crate::stats::{q_function, q_inverse};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfCheckReport {
    pub checks: Vec<CheckOutcome>,
}

impl SelfCheckReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// CRC threshold against a dense grid search of the feasible set.
fn crc_matches_grid() -> CheckOutcome {
    let mut rng = rng_from_seed(101);
    let m = 6;
    let entries: Vec<CalibrationEntry> = (0..40)
        .map(|_| {
            let bits: Vec<bool> = (0..m).map(|_| rng.gen_bool(0.4)).collect();
            // features on a 0.01 lattice so the grid below hits every breakpoint
            let values = (0..m).map(|_| f64::from(rng.gen_range(0..100u32)) / 100.0).collect();
            CalibrationEntry {
                features: FeatureVector::new(values, FeatureKind::Psd),
                occupancy: OccupancyVector::new(bits),
            }
        })
        .collect();
    let cal = CalibrationSet::new(entries).expect("consistent entries");
    let n = cal.len() as f64;
    let alpha = 0.2;
    let holds = |g: f64| {
        let mean: f64 = cal.entries().iter().map(|e| fnr_of_threshold(e, g)).sum::<f64>() / n;
        n / (n + 1.0) * mean + 1.0 / (n + 1.0) <= alpha + 1e-12
    };
    let grid_best = (-10..=110)
        .map(|i| f64::from(i) / 100.0)
        .filter(|&g| holds(g))
        .fold(f64::NEG_INFINITY, f64::max);
    let gamma = crc_threshold(&cal, RiskTarget::new(alpha).unwrap());
    let passed = holds(gamma) && (gamma - grid_best).abs() < 1e-9;
    CheckOutcome {
        name: "crc-grid",
        passed,
        detail: format!("crc {gamma}, grid {grid_best}"),
    }
}

/// FFT-based coset DFTs against the O(N²) definition.
fn dft_matches_naive() -> CheckOutcome {
    let mut rng = rng_from_seed(202);
    let pattern = choose_cosets(3, 4, 16).unwrap();
    let ns = 12;
    let data: Vec<f64> = (0..4 * ns).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y = SampleMatrix::from_rows(pattern, ns, data).unwrap();
    let fast = row_dfts(&y);
    let mut worst = 0.0f64;
    for p in 0..y.rows() {
        for k in 0..ns {
            let naive: Complex64 = y
                .row(p)
                .iter()
                .enumerate()
                .map(|(n, &v)| v * Complex64::from_polar(1.0, -2.0 * PI * (n * k) as f64 / ns as f64))
                .sum();
            worst = worst.max((naive - fast[(p, k)]).norm());
        }
    }
    CheckOutcome {
        name: "dft-naive",
        passed: worst < 1e-10,
        detail: format!("max abs error {worst:.3e}"),
    }
}

/// Back-propagated gradients against central differences.
fn gradients_match_differences() -> CheckOutcome {
    let arch = LvArch {
        in_channels: 4,
        width: 5,
        subbands: 3,
        channels: 4,
    };
    let mut rng = rng_from_seed(303);
    let mut model = LvModel::init(arch, &mut rng);
    let xs: Vec<RealMatrix> = (0..3)
        .map(|_| RealMatrix {
            rows: 4,
            cols: 5,
            data: (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        })
        .collect();
    let refs: Vec<&RealMatrix> = xs.iter().collect();
    let labels: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..3).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect())
        .collect();
    let (_, grads, _) = batch_loss_and_gradients(&model, &refs, &labels, true);

    let eps = 1e-5;
    let mut worst = 0.0f64;
    for t in 0..8 {
        let len = grads.tensors()[t].len();
        for i in (0..len).step_by(len.div_ceil(4).max(1)) {
            let orig = model.params.tensors()[t][i];
            model.params.tensors_mut()[t][i] = orig + eps;
            let up = batch_loss_and_gradients(&model, &refs, &labels, true).0;
            model.params.tensors_mut()[t][i] = orig - eps;
            let down = batch_loss_and_gradients(&model, &refs, &labels, true).0;
            model.params.tensors_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads.tensors()[t][i];
            let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    CheckOutcome {
        name: "lv-gradient",
        passed: worst < 1e-4,
        detail: format!("max relative error {worst:.3e}"),
    }
}

fn q_inverse_round_trip() -> CheckOutcome {
    let worst = [1e-6, 0.025, 0.1, 0.5, 0.9, 0.975]
        .iter()
        .map(|&p| (q_function(q_inverse(p)) - p).abs() / p)
        .fold(0.0, f64::max);
    CheckOutcome {
        name: "q-inverse",
        passed: worst < 1e-9,
        detail: format!("max relative error {worst:.3e}"),
    }
}

pub fn run() -> SelfCheckReport {
    SelfCheckReport {
        checks: vec![
            crc_matches_grid(),
            dft_matches_naive(),
            gradients_match_differences(),
            q_inverse_round_trip(),
        ],
    }
}
