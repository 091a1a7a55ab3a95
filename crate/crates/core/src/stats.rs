//! Gaussian tail function and its inverse; percentile helper.

use statrs::function::erf::erfc;

/// Upper tail of the standard normal, `Q(x) = erfc(x/√2)/2`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// `Q⁻¹(p)` by bisection on [`q_function`], accurate to 1e-12 in x.
///
/// Returns `+inf` for `p = 0` and `-inf` for `p = 1`.
pub fn q_inverse(p: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "probability out of range: {p}");
    if p == 0.0 {
        return f64::INFINITY;
    }
    if p == 1.0 {
        return f64::NEG_INFINITY;
    }
    // Q(-40) rounds to 1 and Q(40) to 0 in double precision.
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        // Q is decreasing
        if q_function(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Percentile with linear interpolation between order statistics:
/// position `h = (n-1)·q` in the sorted sample.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty sample");
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_inverse_known_values() {
        assert!(q_inverse(0.5).abs() < 1e-10);
        // Q⁻¹(0.9) = -1.2815515655446004 (standard normal 10% quantile)
        assert!((q_inverse(0.9) + 1.281_551_565_544_600_4).abs() < 1e-10);
        assert!((q_inverse(0.025) - 1.959_963_984_540_054).abs() < 1e-10);
        assert_eq!(q_inverse(1.0), f64::NEG_INFINITY);
        assert_eq!(q_inverse(0.0), f64::INFINITY);
    }

    #[test]
    fn q_inverse_round_trips() {
        for i in 1..100 {
            let p = i as f64 / 100.0;
            assert!((q_function(q_inverse(p)) - p).abs() < 1e-11);
        }
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile_sorted(&[0.0, 1.0], 0.025), 0.025);
        assert_eq!(percentile_sorted(&[0.0, 1.0], 0.975), 0.975);
        assert_eq!(percentile_sorted(&[3.0], 0.025), 3.0);
        assert_eq!(percentile_sorted(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.5), 3.0);
    }
}
