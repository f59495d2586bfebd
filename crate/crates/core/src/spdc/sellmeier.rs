//! Temperature-dependent extraordinary refractive index of 5 mol% MgO-doped
//! congruent LiNbO3.
//!
//! Coefficients from D. H. Jundt's functional form as refitted by O. Gayer,
//! Z. Sacks, E. Galun and A. Arie, "Temperature and wavelength dependent
//! refractive index equations for MgO-doped congruent and stoichiometric
//! LiNbO3", Appl. Phys. B 91, 343-348 (2008):
//!
//! ```text
//! n_e^2 = a1 + b1 f + (a2 + b2 f) / (λ^2 - (a3 + b3 f)^2)
//!              + (a4 + b4 f) / (λ^2 - a5^2) - a6 λ^2
//! f     = (T - 24.5 °C)(T + 570.82 °C),   λ in µm
//! ```

use crate::error::{Error, Result};

/// Wavelength window of the fitted data, in vacuum nanometres.
pub const WAVELENGTH_RANGE_NM: (f64, f64) = (500.0, 4000.0);

/// Accepted temperature window in °C. The fit was measured over 20-200 °C;
/// the window is widened slightly so sweeps can cover the sub-threshold
/// region around 10 °C.
pub const TEMPERATURE_RANGE_C: (f64, f64) = (0.0, 250.0);

const A: [f64; 6] = [5.756, 0.0983, 0.2020, 189.32, 12.52, 1.32e-2];
const B: [f64; 4] = [2.860e-6, 4.700e-8, 6.113e-8, 1.516e-4];

/// Extraordinary index `n_e(λ, T)` with range checks on both arguments.
pub fn refractive_index(wavelength_nm: f64, temperature_c: f64) -> Result<f64> {
    check_wavelength(wavelength_nm)?;
    check_temperature(temperature_c)?;
    Ok(index_unchecked(wavelength_nm, temperature_c))
}

pub(crate) fn check_wavelength(wavelength_nm: f64) -> Result<()> {
    let (lo, hi) = WAVELENGTH_RANGE_NM;
    if !(lo..=hi).contains(&wavelength_nm) {
        return Err(Error::domain(
            "wavelength_nm",
            wavelength_nm,
            format!("Sellmeier validity window [{lo}, {hi}] nm"),
        ));
    }
    Ok(())
}

pub(crate) fn check_temperature(temperature_c: f64) -> Result<()> {
    let (lo, hi) = TEMPERATURE_RANGE_C;
    if !(lo..=hi).contains(&temperature_c) {
        return Err(Error::domain(
            "temperature_c",
            temperature_c,
            format!("Sellmeier validity window [{lo}, {hi}] °C"),
        ));
    }
    Ok(())
}

/// Hot-path evaluation; callers guarantee both arguments are in range.
#[inline]
pub(crate) fn index_unchecked(wavelength_nm: f64, temperature_c: f64) -> f64 {
    let l = wavelength_nm * 1e-3;
    let l2 = l * l;
    let f = (temperature_c - 24.5) * (temperature_c + 570.82);
    let uv_pole = A[2] + B[2] * f;
    let n2 = A[0]
        + B[0] * f
        + (A[1] + B[1] * f) / (l2 - uv_pole * uv_pole)
        + (A[3] + B[3] * f) / (l2 - A[4] * A[4])
        - A[5] * l2;
    n2.sqrt()
}
