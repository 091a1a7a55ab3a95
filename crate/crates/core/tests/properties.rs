use crc_sense::calibration::Method;
use crc_sense::harness::{fnr, tnr};
use crc_sense::psd::{coset_spectra, fold_slices, psd_features, somp};
use crc_sense::{choose_cosets, measurement_matrix, run_trial, sample, NyquistSignal, OccupancyVector, RunConfig};
use proptest::prelude::*;

fn signal(samples: Vec<f64>) -> NyquistSignal {
    NyquistSignal { samples, period: 1.0 }
}

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.signal.subbands = 4;
    cfg.signal.k_max = 2;
    cfg.signal.snr_db = 10.0;
    cfg.sampling.cosets = 4;
    cfg.sampling.decimation = 8;
    cfg.sampling.samples_per_coset = 16;
    cfg.features.lv = false;
    cfg.calibration.n_cal = 20;
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampling_is_linear(
        seed in any::<u64>(),
        x in prop::collection::vec(-5.0f64..5.0, 64),
        y in prop::collection::vec(-5.0f64..5.0, 64),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let pat = choose_cosets(seed, 3, 8).unwrap();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let sx = sample(&signal(x), &pat, 8).unwrap();
        let sy = sample(&signal(y), &pat, 8).unwrap();
        let sm = sample(&signal(mix), &pat, 8).unwrap();
        for ((m, u), v) in sm.data().iter().zip(sx.data()).zip(sy.data()) {
            prop_assert!((m - (a * u + b * v)).abs() < 1e-9);
        }
    }

    #[test]
    fn rates_stay_in_unit_interval(bits in prop::collection::vec((any::<bool>(), any::<bool>()), 1..40)) {
        let z = OccupancyVector::new(bits.iter().map(|b| b.0).collect());
        let zhat = OccupancyVector::new(bits.iter().map(|b| b.1).collect());
        for r in [fnr(&z, &zhat), tnr(&z, &zhat)] {
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn psd_features_are_nonnegative_and_conserve_power(
        seed in any::<u64>(),
        x in prop::collection::vec(-1.0f64..1.0, 16 * 16),
        k_max in 1usize..=6,
    ) {
        let pat = choose_cosets(seed, 6, 16).unwrap();
        let y = sample(&signal(x), &pat, 16).unwrap();
        let est = somp(&coset_spectra(&y).unwrap(), &measurement_matrix(&pat), k_max, 1e-3).unwrap();
        prop_assert!(est.support.len() <= k_max);
        for (l, &p) in est.powers.iter().enumerate() {
            prop_assert!(p >= 0.0);
            if !est.support.contains(&l) {
                prop_assert_eq!(p, 0.0);
            }
        }
        for w in est.residual_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
        let folded = fold_slices(&est.powers).unwrap();
        let total: f64 = est.powers.iter().sum();
        prop_assert!((folded.iter().sum::<f64>() - total).abs() <= 1e-9 * total.max(1.0));

        let f = psd_features(&y, k_max, 1e-3).unwrap();
        prop_assert_eq!(f.values, folded);
    }
}

#[test]
fn crc_at_full_risk_declares_everything_idle() {
    let mut cfg = small_config();
    cfg.calibration.alpha = 1.0;
    cfg.calibration.methods = vec![Method::Crc];
    for seed in 0..5 {
        let rows = run_trial(0, seed, &cfg, None).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].tnr, 1.0);
        assert_eq!(rows[0].fnr, 1.0);
    }
}

#[test]
fn trials_are_pure_functions_of_their_seed() {
    let cfg = small_config();
    let a = run_trial(3, 77, &cfg, None).unwrap();
    let b = run_trial(3, 77, &cfg, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 3);
    assert!(a.iter().all(|r| r.seed == 77 && r.trial == 3));
}
