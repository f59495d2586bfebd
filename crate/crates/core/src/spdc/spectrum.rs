//! Spectral statistics, brightness and the 1D biphoton amplitude derived from
//! the phase-matching function `Φ(Δk) = sinc(Δk L / 2)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::phase_match::{delta_k_unchecked, solve_phase_match, PhaseMatchPoint};
use super::sellmeier::{self, TEMPERATURE_RANGE_C};
use super::CrystalConfig;
use crate::error::{Error, Result};

pub const MIN_GRID_POINTS: usize = 64;
pub const DEFAULT_GRID_POINTS: usize = 2048;
pub const DEFAULT_HALF_SPAN_NM: f64 = 150.0;

/// Coarse step of the reference brightness scan before golden-section refinement.
const REFERENCE_SCAN_STEP_C: f64 = 1.0;

/// `sinc(Δk L / 2)` with `sinc(0) = 1`. `Δk` in 1/µm, `L` in µm.
pub fn phase_matching_amplitude(delta_k: f64, length_um: f64) -> f64 {
    let x = 0.5 * delta_k * length_um;
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Uniform signal-wavelength grid centred on degeneracy.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalGrid {
    pub start_nm: f64,
    pub step_nm: f64,
    pub points: usize,
}

impl SignalGrid {
    pub fn around_degeneracy(config: &CrystalConfig, points: usize) -> Result<Self> {
        if points < MIN_GRID_POINTS {
            return Err(Error::domain(
                "grid_points",
                points as f64,
                format!(">= {MIN_GRID_POINTS}"),
            ));
        }
        let centre = config.degenerate_wavelength_nm();
        let start = centre - DEFAULT_HALF_SPAN_NM;
        let end = centre + DEFAULT_HALF_SPAN_NM;
        sellmeier::check_wavelength(start)?;
        sellmeier::check_wavelength(end)?;
        if start <= config.pump_wavelength_nm {
            return Err(Error::domain("grid_start_nm", start, "> pump wavelength"));
        }
        Ok(Self {
            start_nm: start,
            step_nm: (end - start) / (points - 1) as f64,
            points,
        })
    }

    pub fn wavelength(&self, i: usize) -> f64 {
        self.start_nm + self.step_nm * i as f64
    }

    pub fn wavelengths(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.points).map(|i| self.wavelength(i))
    }
}

fn amplitude_on_grid(config: &CrystalConfig, grid: &SignalGrid) -> Vec<f64> {
    let length = config.crystal_length_um();
    grid.wavelengths()
        .map(|l| phase_matching_amplitude(delta_k_unchecked(config, l), length))
        .collect()
}

/// `Σ|Φ|² Δλ` over the grid, in nm, at unit pump power.
fn raw_brightness(config: &CrystalConfig, grid: &SignalGrid) -> f64 {
    let length = config.crystal_length_um();
    grid.wavelengths()
        .map(|l| {
            let a = phase_matching_amplitude(delta_k_unchecked(config, l), length);
            a * a
        })
        .sum::<f64>()
        * grid.step_nm
}

/// Peak of the unit-pump brightness over the dispersion model's temperature
/// window: a 1 °C scan refined by golden-section search.
pub fn reference_peak_brightness(config: &CrystalConfig, grid_points: usize) -> Result<f64> {
    config.validate()?;
    let grid = SignalGrid::around_degeneracy(config, grid_points)?;
    let at = |t: f64| raw_brightness(&config.with_temperature(t), &grid);

    let (t_lo, t_hi) = TEMPERATURE_RANGE_C;
    let steps = ((t_hi - t_lo) / REFERENCE_SCAN_STEP_C).round() as usize;
    let (best_i, _) = (0..=steps)
        .map(|i| at(t_lo + i as f64 * REFERENCE_SCAN_STEP_C))
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, b)| if b > acc.1 { (i, b) } else { acc },
        );
    let centre = t_lo + best_i as f64 * REFERENCE_SCAN_STEP_C;
    let mut a = (centre - REFERENCE_SCAN_STEP_C).max(t_lo);
    let mut b = (centre + REFERENCE_SCAN_STEP_C).min(t_hi);

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (at(c), at(d));
    while b - a > 1e-4 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = at(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = at(d);
        }
    }
    Ok(at(0.5 * (a + b)).max(at(centre)))
}

/// Moments of the normalized `|Φ|²` signal spectrum and relative brightness.
///
/// When the density vanishes everywhere the moments are NaN and
/// `moments_defined` is false.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub mean_wavelength_nm: f64,
    pub mode_wavelength_nm: f64,
    pub std_dev_nm: f64,
    pub fwhm_nm: f64,
    pub brightness_rel: f64,
    pub moments_defined: bool,
}

/// Spectral summary at the configured temperature, normalized against
/// [`reference_peak_brightness`].
pub fn spectral_summary(config: &CrystalConfig, grid_points: usize) -> Result<SpectralSummary> {
    let reference = reference_peak_brightness(config, grid_points)?;
    spectral_summary_with_reference(config, grid_points, reference)
}

/// As [`spectral_summary`] with a precomputed reference peak brightness.
pub fn spectral_summary_with_reference(
    config: &CrystalConfig,
    grid_points: usize,
    reference_brightness: f64,
) -> Result<SpectralSummary> {
    config.validate()?;
    let grid = SignalGrid::around_degeneracy(config, grid_points)?;
    let density: Vec<f64> = amplitude_on_grid(config, &grid)
        .into_iter()
        .map(|a| a * a)
        .collect();
    let total: f64 = density.iter().sum();
    let brightness_rel = if reference_brightness > 0.0 {
        config.pump_power_rel * total * grid.step_nm / reference_brightness
    } else {
        0.0
    };

    let peak = density.iter().cloned().fold(0.0, f64::max);
    if !(total > 0.0) || !(peak > f64::MIN_POSITIVE) {
        return Ok(SpectralSummary {
            mean_wavelength_nm: f64::NAN,
            mode_wavelength_nm: f64::NAN,
            std_dev_nm: f64::NAN,
            fwhm_nm: f64::NAN,
            brightness_rel: 0.0,
            moments_defined: false,
        });
    }

    let mean = grid
        .wavelengths()
        .zip(&density)
        .map(|(l, d)| l * d)
        .sum::<f64>()
        / total;
    let variance = grid
        .wavelengths()
        .zip(&density)
        .map(|(l, d)| (l - mean).powi(2) * d)
        .sum::<f64>()
        / total;
    let mode_index = argmax(&density);

    Ok(SpectralSummary {
        mean_wavelength_nm: mean,
        mode_wavelength_nm: grid.wavelength(mode_index),
        std_dev_nm: variance.sqrt(),
        fwhm_nm: full_width_half_max(&grid, &density, peak),
        brightness_rel,
        moments_defined: true,
    })
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
        )
        .0
}

/// Distance between the outermost half-maximum crossings, linearly
/// interpolated between grid points and clamped to the grid edges.
fn full_width_half_max(grid: &SignalGrid, density: &[f64], peak: f64) -> f64 {
    let half = 0.5 * peak;
    let first = density.iter().position(|&d| d >= half).unwrap_or(0);
    let last = density.iter().rposition(|&d| d >= half).unwrap_or(0);
    let crossing = |inside: usize, outside: usize| {
        let (di, do_) = (density[inside], density[outside]);
        let frac = (di - half) / (di - do_);
        grid.wavelength(inside) + frac * (grid.wavelength(outside) - grid.wavelength(inside))
    };
    let left = if first == 0 {
        grid.wavelength(0)
    } else {
        crossing(first, first - 1)
    };
    let right = if last + 1 == density.len() {
        grid.wavelength(last)
    } else {
        crossing(last, last + 1)
    };
    right - left
}

/// Normalized 1D biphoton amplitude on the signal-wavelength grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiphotonWavefunction {
    pub signal_grid_nm: Vec<f64>,
    pub amplitude_real: Vec<f64>,
    pub amplitude_imag: Vec<f64>,
}

impl BiphotonWavefunction {
    /// `Σ|ψ|² Δλ` using the grid spacing.
    pub fn norm(&self) -> f64 {
        let step = self.signal_grid_nm[1] - self.signal_grid_nm[0];
        self.amplitude_real
            .iter()
            .zip(&self.amplitude_imag)
            .map(|(re, im)| re * re + im * im)
            .sum::<f64>()
            * step
    }

    pub fn peak_wavelength_nm(&self) -> f64 {
        let density: Vec<f64> = self
            .amplitude_real
            .iter()
            .zip(&self.amplitude_imag)
            .map(|(re, im)| re * re + im * im)
            .collect();
        self.signal_grid_nm[argmax(&density)]
    }
}

/// `ψ(λ_s) ∝ sinc(Δk(λ_s) L / 2)`: monochromatic pump without spectral phase,
/// so the amplitude is real.
pub fn biphoton_wavefunction(
    config: &CrystalConfig,
    grid_points: usize,
) -> Result<BiphotonWavefunction> {
    config.validate()?;
    let grid = SignalGrid::around_degeneracy(config, grid_points)?;
    let mut amplitude = amplitude_on_grid(config, &grid);
    let norm = (amplitude.iter().map(|a| a * a).sum::<f64>() * grid.step_nm).sqrt();
    if norm > 0.0 {
        amplitude.iter_mut().for_each(|a| *a /= norm);
    }
    Ok(BiphotonWavefunction {
        signal_grid_nm: grid.wavelengths().collect(),
        amplitude_imag: vec![0.0; amplitude.len()],
        amplitude_real: amplitude,
    })
}

/// One temperature of a sweep. Solver failures are kept as messages so the
/// sweep never aborts.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub temperature_c: f64,
    pub phase_match: std::result::Result<PhaseMatchPoint, String>,
    pub spectrum: std::result::Result<SpectralSummary, String>,
}

/// Phase matching and spectral statistics over `steps` evenly spaced
/// temperatures from `t_min` to `t_max` (only `t_min` when `steps == 1`).
pub fn temperature_sweep(
    config: &CrystalConfig,
    t_min: f64,
    t_max: f64,
    steps: usize,
    grid_points: usize,
) -> Result<Vec<SweepRow>> {
    if !(t_min < t_max) {
        return Err(Error::domain("t_min", t_min, format!("< t_max = {t_max}")));
    }
    if steps == 0 {
        return Err(Error::domain("steps", 0.0, ">= 1"));
    }
    let reference = reference_peak_brightness(config, grid_points)?;
    let rows = (0..steps)
        .map(|i| {
            let t = if steps == 1 {
                t_min
            } else {
                t_min + (t_max - t_min) * i as f64 / (steps - 1) as f64
            };
            let cfg = config.with_temperature(t);
            SweepRow {
                temperature_c: t,
                phase_match: solve_phase_match(&cfg).map_err(|e| e.to_string()),
                spectrum: spectral_summary_with_reference(&cfg, grid_points, reference)
                    .map_err(|e| e.to_string()),
            }
        })
        .collect();
    Ok(rows)
}

fn pm_fields(row: &SweepRow) -> [f64; 4] {
    match &row.phase_match {
        Ok(p) => [
            p.signal_wavelength_nm,
            p.idler_wavelength_nm,
            p.opening_angle_rad,
            p.delta_k_per_um.abs().log10(),
        ],
        Err(_) => [f64::NAN; 4],
    }
}

fn spectrum_fields(row: &SweepRow) -> [f64; 5] {
    match &row.spectrum {
        Ok(s) => [
            s.mean_wavelength_nm,
            s.mode_wavelength_nm,
            s.std_dev_nm,
            s.fwhm_nm,
            s.brightness_rel,
        ],
        Err(_) => [f64::NAN; 5],
    }
}

pub const SWEEP_HEADER: [&str; 10] = [
    "temperature_C",
    "signal_nm",
    "idler_nm",
    "opening_angle_rad",
    "log10_abs_dk",
    "mean_nm",
    "mode_nm",
    "std_nm",
    "fwhm_nm",
    "brightness_rel",
];

/// Full sweep table, one row per temperature.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for row in rows {
        let mut record = vec![row.temperature_c.to_string()];
        record.extend(pm_fields(row).iter().map(f64::to_string));
        record.extend(spectrum_fields(row).iter().map(f64::to_string));
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io("<sweep csv>", e))?;
    Ok(())
}

/// Wavelength, opening angle and mismatch columns of the sweep.
pub fn write_opo_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&SWEEP_HEADER[..5])?;
    for row in rows {
        let mut record = vec![row.temperature_c.to_string()];
        record.extend(pm_fields(row).iter().map(f64::to_string));
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io("<opo csv>", e))?;
    Ok(())
}

pub fn write_biphoton_csv<W: Write>(psi: &BiphotonWavefunction, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lambda_nm", "re_psi", "im_psi"])?;
    for ((l, re), im) in psi
        .signal_grid_nm
        .iter()
        .zip(&psi.amplitude_real)
        .zip(&psi.amplitude_imag)
    {
        w.write_record([l.to_string(), re.to_string(), im.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<biphoton csv>", e))?;
    Ok(())
}
