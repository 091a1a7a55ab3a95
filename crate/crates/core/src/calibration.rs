//! Threshold calibration.
//!
//! Subband `m` is declared occupied when `f_m >= γ_m`. The thresholds come
//! from a calibration set of (features, true occupancy) pairs:
//!
//! - parametric: fit a Gaussian to the occupied-subband features of each
//!   subband and take its α-quantile, `γ_m = σ_m·Q⁻¹(1-α) + μ_m`;
//! - nonparametric: the `⌊α·|F_m|⌋`-th smallest occupied feature;
//! - CRC: one threshold shared by all subbands, the largest γ for which
//!   `n/(n+1)·FNR̄(γ) + 1/(n+1) <= α`. This guarantees an expected test FNR
//!   of at most α for exchangeable data and any n.
//!
//! `-inf` and `+inf` thresholds are valid and force "occupied" and "idle"
//! respectively.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::signal::OccupancyVector;
use crate::stats::q_inverse;

/// Slack on the CRC feasibility test, absorbing rounding in the empirical mean.
pub const CRC_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Parametric,
    Nonparametric,
    Crc,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Parametric, Method::Nonparametric, Method::Crc];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Parametric => "parametric",
            Method::Nonparametric => "nonparametric",
            Method::Crc => "crc",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parametric" => Ok(Method::Parametric),
            "nonparametric" => Ok(Method::Nonparametric),
            "crc" => Ok(Method::Crc),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

/// Target FNR level α ∈ [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct RiskTarget(f64);

impl RiskTarget {
    pub fn new(alpha: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&alpha) {
            Ok(Self(alpha))
        } else {
            Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {alpha}")))
        }
    }

    pub fn alpha(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationEntry {
    pub features: FeatureVector,
    pub occupancy: OccupancyVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    entries: Vec<CalibrationEntry>,
    subbands: usize,
}

impl CalibrationSet {
    /// Requires at least one entry, with every feature and occupancy vector of one length M.
    pub fn new(entries: Vec<CalibrationEntry>) -> Result<Self> {
        let Some(first) = entries.first() else {
            return Err(Error::InvalidArgument("calibration set is empty".into()));
        };
        let m = first.features.len();
        for (i, e) in entries.iter().enumerate() {
            if e.features.len() != m || e.occupancy.len() != m {
                return Err(Error::InvalidArgument(format!(
                    "calibration entry {i} has {} features and {} occupancy bits, expected {m}",
                    e.features.len(),
                    e.occupancy.len()
                )));
            }
        }
        Ok(Self { entries, subbands: m })
    }

    pub fn entries(&self) -> &[CalibrationEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn subbands(&self) -> usize {
        self.subbands
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdVector {
    pub gammas: Vec<f64>,
    pub method: Method,
}

/// Features of subband `m` (1-based) over the entries where it is occupied, in order.
pub fn occupied_features(cal: &CalibrationSet, m: usize) -> Vec<f64> {
    assert!(
        (1..=cal.subbands()).contains(&m),
        "subband {m} out of range 1..={}",
        cal.subbands()
    );
    cal.entries()
        .iter()
        .filter(|e| e.occupancy.bits()[m - 1])
        .map(|e| e.features.values[m - 1])
        .collect()
}

pub fn parametric_thresholds(cal: &CalibrationSet, alpha: RiskTarget) -> ThresholdVector {
    let z = q_inverse(1.0 - alpha.alpha());
    let gammas = (1..=cal.subbands())
        .map(|m| {
            let f = occupied_features(cal, m);
            if f.len() < 2 {
                return f64::NEG_INFINITY;
            }
            let n = f.len() as f64;
            let mean = f.iter().sum::<f64>() / n;
            let var = f.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd == 0.0 {
                mean
            } else {
                sd * z + mean
            }
        })
        .collect();
    ThresholdVector {
        gammas,
        method: Method::Parametric,
    }
}

pub fn nonparametric_thresholds(cal: &CalibrationSet, alpha: RiskTarget) -> ThresholdVector {
    let gammas = (1..=cal.subbands())
        .map(|m| {
            let mut f = occupied_features(cal, m);
            // α·|F| can land a rounding error below an integer (0.29·100)
            let x = alpha.alpha() * f.len() as f64;
            let rank = if (x - x.round()).abs() < 1e-9 { x.round() } else { x.floor() } as usize;
            if rank == 0 {
                return f64::NEG_INFINITY;
            }
            f.sort_by(f64::total_cmp);
            f[rank - 1]
        })
        .collect();
    ThresholdVector {
        gammas,
        method: Method::Nonparametric,
    }
}

/// Fraction of occupied subbands with `f_m < γ`; zero when none is occupied.
pub fn fnr_of_threshold(entry: &CalibrationEntry, gamma: f64) -> f64 {
    let mut occupied = 0usize;
    let mut missed = 0usize;
    for (&f, &z) in entry.features.values.iter().zip(entry.occupancy.bits()) {
        if z {
            occupied += 1;
            if f < gamma {
                missed += 1;
            }
        }
    }
    if occupied == 0 {
        0.0
    } else {
        missed as f64 / occupied as f64
    }
}

/// The CRC common threshold.
///
/// The mean calibration FNR is a non-decreasing step function of γ that is
/// constant on each interval `(v_j, v_{j+1}]` between consecutive occupied
/// feature values, so the supremum of the feasible set is the largest
/// feasible candidate in `{-inf} ∪ {v_j}`, or `+inf` when the constraint
/// still holds above every feature value.
pub fn crc_threshold(cal: &CalibrationSet, alpha: RiskTarget) -> f64 {
    let n = cal.len() as f64;
    let alpha = alpha.alpha();
    let feasible = |mean_fnr: f64| n / (n + 1.0) * mean_fnr + 1.0 / (n + 1.0) <= alpha + CRC_SLACK;

    // (feature value, contribution to n·FNR̄ once γ exceeds it)
    let mut weighted: Vec<(f64, f64)> = Vec::new();
    let mut entries_with_occupancy = 0usize;
    for e in cal.entries() {
        let k = e.occupancy.occupied_count();
        if k == 0 {
            continue;
        }
        entries_with_occupancy += 1;
        let w = 1.0 / k as f64;
        weighted.extend(
            e.features
                .values
                .iter()
                .zip(e.occupancy.bits())
                .filter(|(_, &z)| z)
                .map(|(&f, _)| (f, w)),
        );
    }

    if !feasible(0.0) {
        return f64::NEG_INFINITY;
    }
    if feasible(entries_with_occupancy as f64 / n) {
        return f64::INFINITY;
    }
    weighted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Walk candidates upward; FNR̄ at candidate v counts weights strictly below v.
    let mut best = f64::NEG_INFINITY;
    let mut below = 0.0;
    let mut i = 0;
    while i < weighted.len() {
        let v = weighted[i].0;
        if !feasible(below / n) {
            break;
        }
        best = v;
        while i < weighted.len() && weighted[i].0 == v {
            below += weighted[i].1;
            i += 1;
        }
    }
    best
}

pub fn crc_thresholds(cal: &CalibrationSet, alpha: RiskTarget) -> ThresholdVector {
    ThresholdVector {
        gammas: vec![crc_threshold(cal, alpha); cal.subbands()],
        method: Method::Crc,
    }
}

pub fn thresholds(cal: &CalibrationSet, alpha: RiskTarget, method: Method) -> ThresholdVector {
    match method {
        Method::Parametric => parametric_thresholds(cal, alpha),
        Method::Nonparametric => nonparametric_thresholds(cal, alpha),
        Method::Crc => crc_thresholds(cal, alpha),
    }
}

/// `ẑ_m = 1(f_m >= γ_m)`.
pub fn decide(f: &FeatureVector, gamma: &ThresholdVector) -> Result<OccupancyVector> {
    if f.len() != gamma.gammas.len() {
        return Err(Error::InvalidArgument(format!(
            "{} features but {} thresholds",
            f.len(),
            gamma.gammas.len()
        )));
    }
    Ok(OccupancyVector::new(
        f.values.iter().zip(&gamma.gammas).map(|(&v, &g)| v >= g).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn entry(f: &[f64], z: &[u8]) -> CalibrationEntry {
        CalibrationEntry {
            features: FeatureVector::new(f.to_vec(), FeatureKind::Psd),
            occupancy: OccupancyVector::from_bits(z).unwrap(),
        }
    }

    fn single_band_set(values: &[f64]) -> CalibrationSet {
        CalibrationSet::new(values.iter().map(|&v| entry(&[v], &[1])).collect()).unwrap()
    }

    fn alpha(a: f64) -> RiskTarget {
        RiskTarget::new(a).unwrap()
    }

    #[test]
    fn occupied_feature_filtering() {
        let cal = CalibrationSet::new(vec![
            entry(&[0.9, 0.1], &[1, 0]),
            entry(&[0.2, 0.3], &[0, 0]),
            entry(&[0.7, 0.4], &[1, 0]),
        ])
        .unwrap();
        assert_eq!(occupied_features(&cal, 1), vec![0.9, 0.7]);
        assert!(occupied_features(&cal, 2).is_empty());
        let all = single_band_set(&[1.0, 2.0, 3.0]);
        assert_eq!(occupied_features(&all, 1), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn mismatched_entries_rejected() {
        assert!(CalibrationSet::new(vec![]).is_err());
        assert!(CalibrationSet::new(vec![entry(&[1.0], &[1]), entry(&[1.0, 2.0], &[1, 0])]).is_err());
        assert!(RiskTarget::new(1.5).is_err());
    }

    #[test]
    fn parametric_cases() {
        // symmetric set with mean 0 and population sd 1
        let cal = single_band_set(&[-1.0, 1.0]);
        assert!(parametric_thresholds(&cal, alpha(0.5)).gammas[0].abs() < 1e-10);
        let g = parametric_thresholds(&cal, alpha(0.1)).gammas[0];
        assert!((g + 1.281_552).abs() < 1e-5, "{g}");

        let cal = single_band_set(&[2.5, 2.5, 2.5]);
        for a in [0.0, 0.1, 0.9, 1.0] {
            assert_eq!(parametric_thresholds(&cal, alpha(a)).gammas[0], 2.5);
        }
        let cal = single_band_set(&[2.5]);
        assert_eq!(parametric_thresholds(&cal, alpha(0.1)).gammas[0], f64::NEG_INFINITY);
    }

    #[test]
    fn nonparametric_cases() {
        let values: Vec<f64> = (1..=20).map(f64::from).collect();
        let cal = single_band_set(&values);
        assert_eq!(nonparametric_thresholds(&cal, alpha(0.1)).gammas[0], 2.0);
        let cal = single_band_set(&[5.0]);
        assert_eq!(nonparametric_thresholds(&cal, alpha(0.5)).gammas[0], f64::NEG_INFINITY);
        let cal = CalibrationSet::new(vec![entry(&[1.0], &[0])]).unwrap();
        assert_eq!(nonparametric_thresholds(&cal, alpha(0.5)).gammas[0], f64::NEG_INFINITY);
    }

    #[test]
    fn nonparametric_matches_sort_oracle() {
        let mut rng = rng_from_seed(12);
        for _ in 0..200 {
            let n = rng.gen_range(1..60);
            let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let a = rng.gen_range(0.0..1.0);
            let cal = single_band_set(&values);
            let mut sorted = values.clone();
            sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let k = (a * n as f64).floor() as usize;
            let expect = if k == 0 { f64::NEG_INFINITY } else { sorted[k - 1] };
            assert_eq!(nonparametric_thresholds(&cal, alpha(a)).gammas[0], expect);
        }
    }

    #[test]
    fn fnr_of_threshold_cases() {
        let e = entry(&[0.9, 0.8, 0.3, 0.5], &[1, 0, 1, 1]);
        assert_eq!(fnr_of_threshold(&e, f64::NEG_INFINITY), 0.0);
        assert_eq!(fnr_of_threshold(&e, 10.0), 1.0);
        assert!((fnr_of_threshold(&e, 0.5) - 1.0 / 3.0).abs() < 1e-15);
        let idle = entry(&[0.9, 0.8], &[0, 0]);
        assert_eq!(fnr_of_threshold(&idle, 10.0), 0.0);
    }

    #[test]
    fn crc_cases() {
        let values: Vec<f64> = (1..=9).map(f64::from).collect();
        let cal = single_band_set(&values);
        assert_eq!(crc_threshold(&cal, alpha(0.2)), 2.0);
        assert_eq!(crc_threshold(&cal, alpha(1.0)), f64::INFINITY);
        let cal = single_band_set(&[1.0, 2.0, 3.0]);
        assert_eq!(crc_threshold(&cal, alpha(0.2)), f64::NEG_INFINITY);
    }

    #[test]
    fn crc_thresholds_are_common() {
        let cal = CalibrationSet::new(vec![
            entry(&[0.9, 0.1, 0.4], &[1, 0, 1]),
            entry(&[0.2, 0.8, 0.6], &[0, 1, 1]),
        ])
        .unwrap();
        let t = crc_thresholds(&cal, alpha(0.9));
        assert!(t.gammas.iter().all(|&g| g == t.gammas[0]));
    }

    #[test]
    fn decide_cases() {
        let f = FeatureVector::new(vec![0.3, 0.7], FeatureKind::Lv);
        let t = |g: f64| ThresholdVector {
            gammas: vec![g, g],
            method: Method::Crc,
        };
        assert_eq!(decide(&f, &t(f64::NEG_INFINITY)).unwrap().bits(), &[true, true]);
        assert_eq!(decide(&f, &t(f64::INFINITY)).unwrap().bits(), &[false, false]);
        assert_eq!(decide(&f, &t(0.5)).unwrap().bits(), &[false, true]);
        assert_eq!(decide(&f, &t(0.7)).unwrap().bits(), &[false, true]);
        let short = ThresholdVector {
            gammas: vec![0.1],
            method: Method::Crc,
        };
        assert!(decide(&f, &short).is_err());
    }

    fn arb_set() -> impl Strategy<Value = (CalibrationSet, f64)> {
        (1usize..6, 1usize..12).prop_flat_map(|(m, n)| {
            (
                proptest::collection::vec(
                    (
                        proptest::collection::vec(0u32..20, m),
                        proptest::collection::vec(proptest::bool::ANY, m),
                    ),
                    n,
                ),
                0.0f64..1.0,
            )
                .prop_map(|(rows, a)| {
                    let entries = rows
                        .into_iter()
                        .map(|(f, z)| CalibrationEntry {
                            features: FeatureVector::new(
                                f.into_iter().map(|v| v as f64 / 4.0).collect(),
                                FeatureKind::Psd,
                            ),
                            occupancy: OccupancyVector::new(z),
                        })
                        .collect();
                    (CalibrationSet::new(entries).unwrap(), a)
                })
        })
    }

    fn mean_fnr(cal: &CalibrationSet, g: f64) -> f64 {
        cal.entries().iter().map(|e| fnr_of_threshold(e, g)).sum::<f64>() / cal.len() as f64
    }

    fn holds(cal: &CalibrationSet, a: f64, g: f64) -> bool {
        let n = cal.len() as f64;
        n / (n + 1.0) * mean_fnr(cal, g) + 1.0 / (n + 1.0) <= a + CRC_SLACK
    }

    proptest! {
        #[test]
        fn fnr_monotone_in_gamma((cal, _a) in arb_set(), g1 in -1.0f64..6.0, g2 in -1.0f64..6.0) {
            let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
            for e in cal.entries() {
                prop_assert!(fnr_of_threshold(e, lo) <= fnr_of_threshold(e, hi));
            }
        }

        #[test]
        fn crc_sup_property((cal, a) in arb_set()) {
            let g = crc_threshold(&cal, alpha(a));
            if g.is_finite() {
                prop_assert!(holds(&cal, a, g));
                let next = cal.entries().iter()
                    .flat_map(|e| e.features.values.iter().zip(e.occupancy.bits()))
                    .filter(|(&v, &z)| z && v > g)
                    .map(|(&v, _)| v)
                    .fold(f64::INFINITY, f64::min);
                if next.is_finite() {
                    prop_assert!(!holds(&cal, a, next));
                } else {
                    prop_assert!(!holds(&cal, a, g + 1.0));
                }
            } else if g == f64::NEG_INFINITY {
                prop_assert!(!holds(&cal, a, f64::NEG_INFINITY));
            } else {
                prop_assert!(holds(&cal, a, 1e9));
            }
        }

        #[test]
        fn monotone_transform_is_equivariant((cal, a) in arb_set()) {
            let warp = |x: f64| x.exp() * 3.0 - 1.0;
            let warped = CalibrationSet::new(cal.entries().iter().map(|e| CalibrationEntry {
                features: FeatureVector::new(e.features.values.iter().map(|&v| warp(v)).collect(), FeatureKind::Psd),
                occupancy: e.occupancy.clone(),
            }).collect()).unwrap();
            let g = crc_threshold(&cal, alpha(a));
            let gw = crc_threshold(&warped, alpha(a));
            if g.is_finite() { prop_assert_eq!(warp(g), gw); } else { prop_assert_eq!(g, gw); }
            let np = nonparametric_thresholds(&cal, alpha(a));
            let npw = nonparametric_thresholds(&warped, alpha(a));
            for (x, y) in np.gammas.iter().zip(&npw.gammas) {
                if x.is_finite() { prop_assert_eq!(warp(*x), *y); } else { prop_assert_eq!(x, y); }
            }
            for e in cal.entries() {
                let fw = FeatureVector::new(e.features.values.iter().map(|&v| warp(v)).collect(), FeatureKind::Psd);
                prop_assert_eq!(decide(&e.features, &np).unwrap(), decide(&fw, &npw).unwrap());
            }
        }
    }
}
