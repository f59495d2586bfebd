use std::f64::consts::{FRAC_PI_2, TAU};

use serde::{Deserialize, Serialize};

use super::sellmeier::{self, index_unchecked, TEMPERATURE_RANGE_C, WAVELENGTH_RANGE_NM};
use super::CrystalConfig;
use crate::error::{Error, Result};

/// Below this collinear mismatch (1/µm) at degeneracy the split signal and
/// idler roots are treated as coincident.
const DEGENERATE_TOL: f64 = 1e-12;
const ROOT_TOL_NM: f64 = 1e-10;
const SCAN_STEP_NM: f64 = 1.0;

/// Phase-matched signal/idler pair at one crystal temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseMatchPoint {
    pub signal_wavelength_nm: f64,
    pub idler_wavelength_nm: f64,
    /// Internal emission half-angle of the signal; zero for collinear emission.
    pub opening_angle_rad: f64,
    /// Collinear `Δk` at the returned wavelengths, 1/µm.
    pub delta_k_per_um: f64,
    pub temperature_c: f64,
}

/// Idler wavelength fixed by `1/λ_p = 1/λ_s + 1/λ_i`.
pub fn idler_wavelength(pump_nm: f64, signal_nm: f64) -> f64 {
    1.0 / (1.0 / pump_nm - 1.0 / signal_nm)
}

#[inline]
fn wavevector(wavelength_nm: f64, temperature_c: f64) -> f64 {
    TAU * index_unchecked(wavelength_nm, temperature_c) / (wavelength_nm * 1e-3)
}

/// `Δk = k_p − k_s − k_i − 2π/Λ` for collinear propagation along the crystal axis.
pub fn delta_k_collinear(config: &CrystalConfig, signal_nm: f64) -> Result<f64> {
    config.validate()?;
    let pump = config.pump_wavelength_nm;
    if !(signal_nm > pump) {
        return Err(Error::domain(
            "signal_nm",
            signal_nm,
            format!("> pump wavelength {pump} nm"),
        ));
    }
    let idler = idler_wavelength(pump, signal_nm);
    if !idler.is_finite() || idler <= 0.0 {
        return Err(Error::domain("idler_nm", idler, "finite and > 0"));
    }
    sellmeier::check_wavelength(signal_nm)?;
    sellmeier::check_wavelength(idler)?;
    Ok(delta_k_unchecked(config, signal_nm))
}

/// Hot-path mismatch; the config and both wavelengths must already be in range.
#[inline]
pub(crate) fn delta_k_unchecked(config: &CrystalConfig, signal_nm: f64) -> f64 {
    let t = config.temperature_c;
    let pump = config.pump_wavelength_nm;
    let idler = idler_wavelength(pump, signal_nm);
    wavevector(pump, t)
        - wavevector(signal_nm, t)
        - wavevector(idler, t)
        - config.grating_wavevector()
}

/// Shortest signal wavelength whose idler stays inside the dispersion model.
fn min_signal_nm(pump_nm: f64) -> f64 {
    let longest_idler = WAVELENGTH_RANGE_NM.1;
    idler_wavelength(pump_nm, longest_idler).max(WAVELENGTH_RANGE_NM.0)
}

/// Temperature at which the collinear mismatch vanishes at degeneracy.
pub fn optimal_temperature(config: &CrystalConfig) -> Result<f64> {
    config.validate()?;
    let degenerate = config.degenerate_wavelength_nm();
    sellmeier::check_wavelength(degenerate)?;
    let dk_at = |t: f64| delta_k_unchecked(&config.with_temperature(t), degenerate);

    let (mut lo, mut hi) = TEMPERATURE_RANGE_C;
    let (mut f_lo, f_hi) = (dk_at(lo), dk_at(hi));
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::Numeric {
            context: "optimal_temperature: no sign change of Δk",
            lo,
            hi,
        });
    }
    for _ in 0..200 {
        if hi - lo < 1e-12 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let f_mid = dk_at(mid);
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Signal half-angle zeroing the longitudinal mismatch when the transverse
/// components of the signal and idler wavevectors cancel.
///
/// Returns 0 when the collinear mismatch is non-negative.
pub fn opening_angle(config: &CrystalConfig, signal_nm: f64) -> Result<f64> {
    let dk = delta_k_collinear(config, signal_nm)?;
    if dk >= 0.0 {
        return Ok(0.0);
    }
    let t = config.temperature_c;
    let pump = config.pump_wavelength_nm;
    let idler = idler_wavelength(pump, signal_nm);
    let (k_p, k_s, k_i) = (
        wavevector(pump, t),
        wavevector(signal_nm, t),
        wavevector(idler, t),
    );
    let longitudinal = |theta_s: f64| {
        let sin_i = (k_s * theta_s.sin() / k_i).min(1.0);
        let cos_i = (1.0 - sin_i * sin_i).sqrt();
        k_p - config.grating_wavevector() - k_s * theta_s.cos() - k_i * cos_i
    };

    // Largest angle for which the idler transverse match is still possible.
    let mut hi = if k_s > k_i {
        (k_i / k_s).asin()
    } else {
        FRAC_PI_2
    };
    let mut lo = 0.0;
    if longitudinal(hi) < 0.0 {
        return Err(Error::Numeric {
            context: "opening_angle: no noncollinear solution",
            lo,
            hi,
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if longitudinal(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Signal/idler pair minimizing the collinear `|Δk|` under energy conservation.
///
/// The returned signal is the shorter-wavelength member of the pair. When no
/// collinear root exists the pair sits at degeneracy and carries the
/// noncollinear opening angle instead.
pub fn solve_phase_match(config: &CrystalConfig) -> Result<PhaseMatchPoint> {
    config.validate()?;
    let degenerate = config.degenerate_wavelength_nm();
    let dk0 = delta_k_collinear(config, degenerate)?;
    let point = |signal: f64, dk: f64, angle: f64| PhaseMatchPoint {
        signal_wavelength_nm: signal,
        idler_wavelength_nm: idler_wavelength(config.pump_wavelength_nm, signal),
        opening_angle_rad: angle,
        delta_k_per_um: dk,
        temperature_c: config.temperature_c,
    };

    if dk0 <= DEGENERATE_TOL {
        let angle = opening_angle(config, degenerate)?;
        return Ok(point(degenerate, dk0, angle));
    }

    // Δk peaks at degeneracy for normal dispersion; walk toward shorter
    // signal wavelengths until it changes sign, then bisect.
    let floor = min_signal_nm(config.pump_wavelength_nm).max(config.pump_wavelength_nm + 1e-6);
    let mut upper = degenerate;
    let mut lower;
    loop {
        let next = (upper - SCAN_STEP_NM).max(floor);
        if delta_k_unchecked(config, next) <= 0.0 {
            lower = next;
            break;
        }
        upper = next;
        if next <= floor {
            return Err(Error::Numeric {
                context: "solve_phase_match: no collinear root",
                lo: floor,
                hi: degenerate,
            });
        }
    }
    // Invariant: Δk(upper) > 0 >= Δk(lower).
    for _ in 0..200 {
        if upper - lower < ROOT_TOL_NM {
            break;
        }
        let mid = 0.5 * (lower + upper);
        if delta_k_unchecked(config, mid) > 0.0 {
            upper = mid;
        } else {
            lower = mid;
        }
    }
    let signal = 0.5 * (lower + upper);
    Ok(point(signal, delta_k_unchecked(config, signal), 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_crystal() -> CrystalConfig {
        CrystalConfig::default()
    }

    #[test]
    fn optimal_temperature_near_room_temperature() {
        let t = optimal_temperature(&default_crystal()).unwrap();
        assert!((t - 25.2566).abs() < 1e-3, "T* = {t}");
    }

    #[test]
    fn degenerate_point_minimizes_mismatch_at_optimum() {
        let t = optimal_temperature(&default_crystal()).unwrap();
        let cfg = default_crystal().with_temperature(t);
        let at_deg = delta_k_collinear(&cfg, 1550.0).unwrap().abs();
        for i in 0..=200 {
            let signal = 1450.0 + i as f64;
            let dk = delta_k_collinear(&cfg, signal).unwrap().abs();
            assert!(dk >= at_deg - 1e-15, "λ_s = {signal}");
        }
    }

    #[test]
    fn grating_term_is_additive() {
        let cfg = default_crystal().with_temperature(40.0);
        let finite = delta_k_collinear(&cfg, 1530.0).unwrap();
        let no_grating = CrystalConfig {
            poling_period_um: f64::INFINITY,
            ..cfg
        };
        let infinite = delta_k_collinear(&no_grating, 1530.0).unwrap();
        assert!((infinite - finite - TAU / 19.388).abs() < 1e-12);
    }

    #[test]
    fn mismatch_is_continuous_over_scan() {
        let cfg = default_crystal().with_temperature(35.0);
        let values: Vec<f64> = (0..=2000)
            .map(|i| delta_k_collinear(&cfg, 1450.0 + 0.1 * i as f64).unwrap())
            .collect();
        let max_jump = values
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .fold(0.0, f64::max);
        assert!(max_jump < 1e-4, "max jump {max_jump}");
        // Split regime: crosses zero on both sides of degeneracy.
        assert!(values[0] < 0.0 && values[1000] > 0.0 && values[2000] < 0.0);
    }

    #[test]
    fn above_threshold_is_collinear_and_split() {
        let p = solve_phase_match(&default_crystal().with_temperature(40.0)).unwrap();
        assert_eq!(p.opening_angle_rad, 0.0);
        assert!(p.idler_wavelength_nm - p.signal_wavelength_nm > 5.0);
        assert!(p.delta_k_per_um.abs() < 1e-9);
    }

    #[test]
    fn below_threshold_is_suppressed_and_noncollinear() {
        let p = solve_phase_match(&default_crystal().with_temperature(5.0)).unwrap();
        assert!(p.opening_angle_rad > 0.0);
        assert!(p.delta_k_per_um.abs().log10() > -3.5);
        assert_eq!(p.signal_wavelength_nm, p.idler_wavelength_nm);
    }

    #[test]
    fn signal_idler_swap_keeps_mismatch() {
        for t in [10.0, 30.0, 60.0] {
            let cfg = default_crystal().with_temperature(t);
            let p = solve_phase_match(&cfg).unwrap();
            let swapped = delta_k_collinear(&cfg, p.idler_wavelength_nm).unwrap();
            assert!((swapped.abs() - p.delta_k_per_um.abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_signal_below_pump() {
        assert!(delta_k_collinear(&default_crystal(), 700.0).is_err());
    }

    #[test]
    fn degenerate_opening_angle_matches_closed_form() {
        let cfg = default_crystal().with_temperature(10.0);
        let angle = opening_angle(&cfg, 1550.0).unwrap();
        let k_p = wavevector(775.0, 10.0);
        let k_s = wavevector(1550.0, 10.0);
        let expected = ((k_p - cfg.grating_wavevector()) / (2.0 * k_s)).acos();
        assert!((angle - expected).abs() < 1e-9, "{angle} vs {expected}");
    }
}
