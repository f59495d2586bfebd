//! Type-0 quasi-phase-matched SPDC in a periodically poled MgO:LiNbO3 crystal.
//!
//! All wavelengths are vacuum nanometres, wavevector mismatches are in 1/µm
//! and temperatures in °C. The pump is monochromatic and every field is
//! polarized along the extraordinary axis.

mod phase_match;
pub mod sellmeier;
mod spectrum;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use phase_match::{
    delta_k_collinear, idler_wavelength, opening_angle, optimal_temperature, solve_phase_match,
    PhaseMatchPoint,
};
pub use sellmeier::refractive_index;
pub use spectrum::{
    biphoton_wavefunction, phase_matching_amplitude, reference_peak_brightness, spectral_summary,
    spectral_summary_with_reference, temperature_sweep, write_biphoton_csv, write_opo_csv,
    write_sweep_csv, BiphotonWavefunction, SignalGrid, SpectralSummary, SweepRow,
    DEFAULT_GRID_POINTS, DEFAULT_HALF_SPAN_NM, MIN_GRID_POINTS,
};

/// Geometry and operating point of the poled crystal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrystalConfig {
    pub poling_period_um: f64,
    pub crystal_length_mm: f64,
    pub pump_wavelength_nm: f64,
    pub temperature_c: f64,
    /// Pump power relative to the reference used for brightness normalization.
    pub pump_power_rel: f64,
}

impl Default for CrystalConfig {
    fn default() -> Self {
        Self {
            poling_period_um: 19.388,
            crystal_length_mm: 10.0,
            pump_wavelength_nm: 775.0,
            temperature_c: 25.0,
            pump_power_rel: 1.0,
        }
    }
}

impl CrystalConfig {
    pub fn with_temperature(self, temperature_c: f64) -> Self {
        Self {
            temperature_c,
            ..self
        }
    }

    pub fn crystal_length_um(&self) -> f64 {
        self.crystal_length_mm * 1e3
    }

    /// Degenerate signal wavelength `2 λ_p`.
    pub fn degenerate_wavelength_nm(&self) -> f64 {
        2.0 * self.pump_wavelength_nm
    }

    pub fn grating_wavevector(&self) -> f64 {
        std::f64::consts::TAU / self.poling_period_um
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("poling_period_um", self.poling_period_um),
            ("crystal_length_mm", self.crystal_length_mm),
            ("pump_wavelength_nm", self.pump_wavelength_nm),
        ];
        for (what, value) in positive {
            // `!(x > 0)` also rejects NaN.
            if !(value > 0.0) {
                return Err(Error::domain(what, value, "> 0"));
            }
        }
        if !(self.pump_power_rel >= 0.0) || !self.pump_power_rel.is_finite() {
            return Err(Error::domain("pump_power_rel", self.pump_power_rel, ">= 0"));
        }
        sellmeier::check_wavelength(self.pump_wavelength_nm)?;
        sellmeier::check_temperature(self.temperature_c)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_crystal_geometry() {
        let c = CrystalConfig::default();
        assert_eq!(c.poling_period_um, 19.388);
        assert_eq!(c.crystal_length_mm, 10.0);
        assert_eq!(c.pump_wavelength_nm, 775.0);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_non_positive_geometry() {
        let bad = CrystalConfig {
            poling_period_um: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = CrystalConfig {
            crystal_length_mm: f64::NAN,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
