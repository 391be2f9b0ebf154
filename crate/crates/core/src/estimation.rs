//! Robust target depth: median over the box, exponentially weighted
//! moving average over time.
//!
//! The median throws away stereo outliers inside the box; the EWMA keeps
//! fast target motion from turning into abrupt robot motion. When a frame
//! yields no usable samples the previous smoothed value is held — the
//! filter is never fed synthetic data.

use thiserror::Error;

use crate::perception::DepthPatch;

#[derive(Debug, Error, PartialEq)]
pub enum EstimationError {
    #[error("depth patch has no valid samples")]
    NoValidSamples,
    #[error("depth measurement must be positive (got {0})")]
    NonPositiveDepth(f64),
}

/// Depth filter state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthEstimate {
    /// Most recent per-frame median, meters.
    pub raw_median: f64,
    /// Smoothed depth, meters. Meaningful once `initialized`.
    pub smoothed: f64,
    pub initialized: bool,
    /// Smoothing factor in (0, 1]; 1 disables memory.
    pub alpha: f64,
}

impl DepthEstimate {
    pub fn new(alpha: f64) -> Self {
        assert!(alpha > 0.0 && alpha <= 1.0, "alpha must be in (0, 1]");
        Self { raw_median: 0.0, smoothed: 0.0, initialized: false, alpha }
    }
}

/// Exact median of the patch's valid samples.
///
/// Even counts average the two middle values. Invalid samples are excluded
/// entirely.
pub fn median_depth(patch: &DepthPatch) -> Result<f64, EstimationError> {
    let mut vals: Vec<f64> = patch.valid_samples().collect();
    if vals.is_empty() {
        return Err(EstimationError::NoValidSamples);
    }
    vals.sort_by(f64::total_cmp);
    let n = vals.len();
    Ok(if n % 2 == 1 {
        vals[n / 2]
    } else {
        (vals[n / 2 - 1] + vals[n / 2]) / 2.0
    })
}

/// Folds one depth measurement into the estimate.
///
/// The first measurement seeds the filter; afterwards
/// smoothed' = alpha * m + (1 - alpha) * smoothed.
pub fn ewma_update(est: DepthEstimate, measurement: f64) -> Result<DepthEstimate, EstimationError> {
    if measurement <= 0.0 {
        return Err(EstimationError::NonPositiveDepth(measurement));
    }
    let smoothed = if est.initialized {
        est.alpha * measurement + (1.0 - est.alpha) * est.smoothed
    } else {
        measurement
    };
    Ok(DepthEstimate {
        raw_median: measurement,
        smoothed,
        initialized: true,
        alpha: est.alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn patch_of(vals: &[f64]) -> DepthPatch {
        DepthPatch {
            width: vals.len().max(1),
            height: 1,
            samples: vals.to_vec(),
            valid: vec![true; vals.len()],
        }
    }

    #[test]
    fn constant_patch_median() {
        assert_eq!(median_depth(&patch_of(&[2.0, 2.0, 2.0])).unwrap(), 2.0);
    }

    #[test]
    fn median_rejects_outlier() {
        // sorted {1.9, 2.0, 10.0} -> middle value 2.0
        assert_eq!(median_depth(&patch_of(&[10.0, 1.9, 2.0])).unwrap(), 2.0);
    }

    #[test]
    fn even_count_averages_middles() {
        assert_relative_eq!(median_depth(&patch_of(&[1.0, 2.0, 3.0, 10.0])).unwrap(), 2.5);
    }

    #[test]
    fn all_invalid_is_an_error() {
        let patch = DepthPatch {
            width: 2,
            height: 1,
            samples: vec![0.0, 0.0],
            valid: vec![false, false],
        };
        assert_eq!(median_depth(&patch), Err(EstimationError::NoValidSamples));
    }

    #[test]
    fn alpha_one_has_no_memory() {
        let est = ewma_update(DepthEstimate::new(1.0), 5.0).unwrap();
        let est = ewma_update(est, 3.0).unwrap();
        assert_eq!(est.smoothed, 3.0);
    }

    #[test]
    fn first_measurement_seeds_filter() {
        let est = ewma_update(DepthEstimate::new(0.3), 3.0).unwrap();
        assert_eq!(est.smoothed, 3.0);
        assert!(est.initialized);
    }

    #[test]
    fn ewma_recurrence_substitution() {
        // 0.25 * 4 + 0.75 * 2 = 2.5
        let mut est = ewma_update(DepthEstimate::new(0.25), 2.0).unwrap();
        est = ewma_update(est, 4.0).unwrap();
        assert_relative_eq!(est.smoothed, 2.5);
    }

    #[test]
    fn non_positive_measurement_rejected() {
        assert_eq!(
            ewma_update(DepthEstimate::new(0.3), 0.0),
            Err(EstimationError::NonPositiveDepth(0.0))
        );
    }

    #[test]
    fn step_response_decays_geometrically() {
        // |smoothed_n - m| = (1 - alpha)^n * |s0 - m|
        let alpha = 0.3;
        let s0 = 5.0;
        let m = 2.0;
        let mut est = ewma_update(DepthEstimate::new(alpha), s0).unwrap();
        for n in 1..=100 {
            est = ewma_update(est, m).unwrap();
            let expected = (1.0 - alpha).powi(n) * (s0 - m).abs();
            assert!(
                ((est.smoothed - m).abs() - expected).abs() < 1e-12,
                "n = {n}"
            );
        }
    }

    proptest! {
        #[test]
        fn median_tracks_majority(
            inliers in proptest::collection::vec(1.95f64..2.05, 11..60),
            outliers in proptest::collection::vec(0.1f64..19.0, 0..10),
        ) {
            // contamination stays under 50% by construction
            prop_assume!(outliers.len() * 2 < inliers.len() + outliers.len());
            let mut all = inliers.clone();
            all.extend_from_slice(&outliers);
            let m = median_depth(&patch_of(&all)).unwrap();
            prop_assert!((1.95..=2.05).contains(&m), "median {m}");
        }

        #[test]
        fn ewma_stays_in_input_hull(
            alpha in 0.05f64..1.0,
            inputs in proptest::collection::vec(0.5f64..10.0, 1..40),
        ) {
            let mut est = DepthEstimate::new(alpha);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &m in &inputs {
                est = ewma_update(est, m).unwrap();
                lo = lo.min(m);
                hi = hi.max(m);
                prop_assert!(est.smoothed >= lo - 1e-12 && est.smoothed <= hi + 1e-12);
            }
        }

        #[test]
        fn raising_a_measurement_never_lowers_result(
            alpha in 0.05f64..1.0,
            inputs in proptest::collection::vec(0.5f64..10.0, 1..20),
            idx in 0usize..20,
            bump in 0.01f64..5.0,
        ) {
            prop_assume!(idx < inputs.len());
            let run = |xs: &[f64]| {
                let mut est = DepthEstimate::new(alpha);
                for &m in xs {
                    est = ewma_update(est, m).unwrap();
                }
                est.smoothed
            };
            let base = run(&inputs);
            let mut raised = inputs.clone();
            raised[idx] += bump;
            prop_assert!(run(&raised) >= base - 1e-12);
        }
    }
}
