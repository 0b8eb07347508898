//! Robust modified z-scores built on the median absolute deviation.

use super::VerifyError;

/// `0.6745 * |x - median| / MAD` rescales the MAD into a standard-deviation
/// estimate for normal data (Iglewicz–Hoaglin modified z-score).
pub const MAD_CONSISTENCY: f64 = 0.6745;

fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n.is_multiple_of(2) {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    } else {
        sorted[n / 2]
    }
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    median_of_sorted(&sorted)
}

/// Modified z-scores of a series:
/// `score_i = 0.6745 * |x_i - median(x)| / max(MAD(x), epsilon)` where
/// `MAD = median(|x - median(x)|)`. The epsilon floor keeps all-equal series
/// at score zero instead of dividing by zero.
pub fn robust_mad_scores(series: &[f64], epsilon: f64) -> Result<Vec<f64>, VerifyError> {
    if series.len() < 2 {
        return Err(VerifyError::InsufficientData {
            needed: 2,
            got: series.len(),
        });
    }
    let med = median(series);
    let deviations: Vec<f64> = series.iter().map(|x| (x - med).abs()).collect();
    let mad = median(&deviations).max(epsilon);
    Ok(deviations
        .iter()
        .map(|d| MAD_CONSISTENCY * d / mad)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const EPS: f64 = 1e-9;

    #[test]
    fn hand_computed_scores() {
        // [1..5]: median 3, deviations [2,1,0,1,2], MAD 1.
        let scores = robust_mad_scores(&[1.0, 2.0, 3.0, 4.0, 5.0], EPS).unwrap();
        let expect = [1.349, 0.6745, 0.0, 0.6745, 1.349];
        for (s, e) in scores.iter().zip(expect) {
            assert_relative_eq!(*s, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn all_equal_series_scores_zero() {
        let scores = robust_mad_scores(&[7.5; 4], EPS).unwrap();
        assert!(scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn spike_scores_far_beyond_threshold() {
        let scores = robust_mad_scores(&[0.0, 0.0, 0.0, 0.0, 100.0], EPS).unwrap();
        // Brute-force: median 0, MAD 0 -> epsilon floor, spike deviation 100.
        assert_relative_eq!(scores[4], MAD_CONSISTENCY * 100.0 / EPS, epsilon = 1e-3);
        assert!(scores[4] > 3.5);
        assert!(scores[..4].iter().all(|&s| s == 0.0));
    }

    #[test]
    fn too_short_series_rejected() {
        assert!(matches!(
            robust_mad_scores(&[1.0], EPS),
            Err(VerifyError::InsufficientData { .. })
        ));
    }

    proptest! {
        // Translation and positive-scale invariance away from the epsilon
        // floor: scores(a*x + b) == scores(x).
        #[test]
        fn prop_affine_invariance(
            xs in proptest::collection::vec(-50.0f64..50.0, 4..40),
            a in 0.1f64..20.0,
            b in -100.0f64..100.0,
        ) {
            let spread = {
                let med = median(&xs);
                let dev: Vec<f64> = xs.iter().map(|x| (x - med).abs()).collect();
                median(&dev)
            };
            prop_assume!(spread > 1e-6);
            let base = robust_mad_scores(&xs, EPS).unwrap();
            let mapped: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let scaled = robust_mad_scores(&mapped, EPS).unwrap();
            for (s, t) in base.iter().zip(scaled) {
                prop_assert!((s - t).abs() < 1e-9, "{s} vs {t}");
            }
        }

        #[test]
        fn prop_scores_nonnegative(xs in proptest::collection::vec(-10.0f64..10.0, 2..30)) {
            let scores = robust_mad_scores(&xs, EPS).unwrap();
            prop_assert!(scores.iter().all(|&s| s >= 0.0));
        }
    }
}
