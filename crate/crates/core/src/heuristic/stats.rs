use statrs::distribution::{ContinuousCDF, Normal};

use crate::env::MeasurementRecord;
use crate::error::{Error, Result};

/// Standardized log-rate-ratio between a new measurement and the previous one:
///
/// `W = [ln(N/N_prev) − ln(S/S_prev)] / sqrt(1/N_prev + 1/N)`
///
/// Asymptotically standard normal when both positions share the same rate.
/// A zero count on either side yields `−∞` ("no improvement").
pub fn w_statistic(current: &MeasurementRecord, previous: &MeasurementRecord) -> f64 {
    if current.counts == 0 || previous.counts == 0 {
        return f64::NEG_INFINITY;
    }
    let (n, n_prev) = (current.counts as f64, previous.counts as f64);
    let log_ratio =
        (n / n_prev).ln() - (current.integration_time_s / previous.integration_time_s).ln();
    log_ratio / (1.0 / n_prev + 1.0 / n).sqrt()
}

/// One-sided standard-normal quantile for `confidence` in `(0.5, 1)`.
pub fn decision_threshold(confidence: f64) -> Result<f64> {
    if !(confidence > 0.5 && confidence < 1.0) {
        return Err(Error::domain("confidence", confidence, "in (0.5, 1)"));
    }
    Ok(Normal::standard().inverse_cdf(confidence))
}

/// Background-only acceptance threshold: mean plus five Poisson standard
/// deviations.
pub fn background_threshold(background_rate_cps: f64, integration_time_s: f64) -> f64 {
    let mean = background_rate_cps * integration_time_s;
    mean + 5.0 * mean.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(counts: u64, t: f64) -> MeasurementRecord {
        MeasurementRecord::new(counts, t)
    }

    #[test]
    fn identical_measurements_give_zero() {
        assert_eq!(w_statistic(&rec(1000, 5.0), &rec(1000, 5.0)), 0.0);
    }

    #[test]
    fn twenty_percent_gain_at_equal_times() {
        let w = w_statistic(&rec(1200, 5.0), &rec(1000, 5.0));
        assert!((w - 4.258_114_183_859_363).abs() < 1e-6, "{w}");
    }

    #[test]
    fn equal_rates_at_different_times_give_zero() {
        let w = w_statistic(&rec(2000, 10.0), &rec(1000, 5.0));
        assert!(w.abs() < 1e-12);
    }

    #[test]
    fn zero_counts_are_never_an_improvement() {
        assert_eq!(w_statistic(&rec(0, 5.0), &rec(10, 5.0)), f64::NEG_INFINITY);
        assert_eq!(w_statistic(&rec(10, 5.0), &rec(0, 5.0)), f64::NEG_INFINITY);
    }

    #[test]
    fn thresholds_match_normal_quantiles() {
        // scipy.stats.norm.ppf
        assert!((decision_threshold(0.995).unwrap() - 2.575_829_303_548_900_4).abs() < 1e-9);
        assert!((decision_threshold(0.999).unwrap() - 3.090_232_306_167_813).abs() < 1e-9);
        assert!(decision_threshold(0.5 + 1e-9).unwrap().abs() < 1e-6);
    }

    #[test]
    fn threshold_rejects_out_of_range_confidence() {
        for c in [0.5, 0.2, 1.0, 1.5, f64::NAN] {
            assert!(decision_threshold(c).is_err(), "{c}");
        }
    }

    #[test]
    fn background_threshold_example() {
        let t = background_threshold(50.0, 120.0);
        assert!((t - 6_387.298_334_620_742).abs() < 1e-6);
    }
}
