use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Input-fiber position relative to the fixed output fiber, µm.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x_um: f64,
    pub y_um: f64,
    pub z_um: f64,
}

impl Pose {
    pub fn new(x_um: f64, y_um: f64, z_um: f64) -> Self {
        Self { x_um, y_um, z_um }
    }

    pub fn from_cylindrical(r_um: f64, theta_rad: f64, z_um: f64) -> Self {
        Self {
            x_um: r_um * theta_rad.cos(),
            y_um: r_um * theta_rad.sin(),
            z_um,
        }
    }

    pub fn r_um(&self) -> f64 {
        self.x_um.hypot(self.y_um)
    }

    /// Azimuth wrapped to `[0, 2π)`.
    pub fn theta_rad(&self) -> f64 {
        wrap_angle(self.y_um.atan2(self.x_um))
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let wrapped = theta.rem_euclid(tau);
    // rem_euclid can round up to exactly 2π for tiny negative inputs.
    if wrapped >= tau {
        0.0
    } else {
        wrapped
    }
}

/// Count-rate field of the fiber-to-fiber stage: Gaussian-mode overlap with
/// lateral offset and axial defocus, on top of a flat background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingModel {
    pub z_optimal_um: f64,
    pub lateral_waist_um: f64,
    pub axial_rayleigh_um: f64,
    pub max_rate_cps: f64,
    pub background_rate_cps: f64,
}

impl Default for CouplingModel {
    fn default() -> Self {
        Self {
            z_optimal_um: 1580.0,
            lateral_waist_um: 150.0,
            axial_rayleigh_um: 400.0,
            max_rate_cps: 20_000.0,
            background_rate_cps: 50.0,
        }
    }
}

impl CouplingModel {
    pub fn validate(&self) -> Result<()> {
        if !self.z_optimal_um.is_finite() {
            return Err(Error::domain("z_optimal_um", self.z_optimal_um, "finite"));
        }
        if !(self.lateral_waist_um > 0.0) {
            return Err(Error::domain(
                "lateral_waist_um",
                self.lateral_waist_um,
                "> 0",
            ));
        }
        if !(self.axial_rayleigh_um > 0.0) {
            return Err(Error::domain(
                "axial_rayleigh_um",
                self.axial_rayleigh_um,
                "> 0",
            ));
        }
        if !(self.background_rate_cps >= 0.0) {
            return Err(Error::domain(
                "background_rate_cps",
                self.background_rate_cps,
                ">= 0",
            ));
        }
        if !(self.max_rate_cps > self.background_rate_cps) || !self.max_rate_cps.is_finite() {
            return Err(Error::domain(
                "max_rate_cps",
                self.max_rate_cps,
                format!(
                    "finite and > background_rate_cps = {}",
                    self.background_rate_cps
                ),
            ));
        }
        Ok(())
    }

    /// Overlap efficiency in `[0, 1]` for lateral offset `δ` and axial position `z`.
    pub fn efficiency(&self, lateral_um: f64, z_um: f64) -> f64 {
        let defocus = (z_um - self.z_optimal_um) / self.axial_rayleigh_um;
        let spread = 1.0 + defocus * defocus;
        let w2 = self.lateral_waist_um * self.lateral_waist_um;
        (-(lateral_um * lateral_um) / (w2 * spread)).exp() / spread
    }

    /// Noise-free detected rate at `(x, y, z)`, counts/s.
    pub fn true_rate(&self, x_um: f64, y_um: f64, z_um: f64) -> f64 {
        self.background_rate_cps + self.max_rate_cps * self.efficiency(x_um.hypot(y_um), z_um)
    }

    pub fn rate_at(&self, pose: &Pose) -> f64 {
        self.true_rate(pose.x_um, pose.y_um, pose.z_um)
    }

    /// Rate at perfect alignment.
    pub fn peak_rate(&self) -> f64 {
        self.background_rate_cps + self.max_rate_cps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_alignment_gives_full_rate() {
        let m = CouplingModel::default();
        assert_eq!(m.true_rate(0.0, 0.0, m.z_optimal_um), 20_050.0);
    }

    #[test]
    fn far_lateral_offset_leaves_background() {
        let m = CouplingModel::default();
        assert!((m.true_rate(1e5, 0.0, 1000.0) - m.background_rate_cps).abs() < 1e-9);
    }

    #[test]
    fn one_rayleigh_range_halves_the_signal() {
        let m = CouplingModel::default();
        let r = m.true_rate(0.0, 0.0, m.z_optimal_um + m.axial_rayleigh_um);
        assert!((r - (m.background_rate_cps + m.max_rate_cps / 2.0)).abs() < 1e-9);
    }

    #[test]
    fn rate_is_rotationally_symmetric() {
        let m = CouplingModel::default();
        let base = m.rate_at(&Pose::from_cylindrical(120.0, 0.0, 1900.0));
        for k in 1..16 {
            let theta = k as f64 * 0.4;
            let r = m.rate_at(&Pose::from_cylindrical(120.0, theta, 1900.0));
            assert!((r - base).abs() < 1e-9 * base);
        }
    }

    #[test]
    fn wrap_angle_stays_in_range() {
        for t in [-1e-18, -7.0, 0.0, std::f64::consts::TAU, 100.0] {
            let w = wrap_angle(t);
            assert!((0.0..std::f64::consts::TAU).contains(&w), "{t} -> {w}");
        }
    }

    #[test]
    fn validate_rejects_inverted_rates() {
        let m = CouplingModel {
            max_rate_cps: 10.0,
            background_rate_cps: 50.0,
            ..Default::default()
        };
        assert!(m.validate().is_err());
        assert!(CouplingModel::default().validate().is_ok());
    }
}
