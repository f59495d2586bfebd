use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::coupling::{CouplingModel, Pose};
use crate::error::{Error, Result};

/// One detector integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub counts: u64,
    pub integration_time_s: f64,
    pub rate_cps: f64,
}

impl MeasurementRecord {
    pub fn new(counts: u64, integration_time_s: f64) -> Self {
        Self {
            counts,
            integration_time_s,
            rate_cps: counts as f64 / integration_time_s,
        }
    }
}

/// Draws `Poisson(mean)` counts; a zero mean always yields zero.
pub fn poisson_counts<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    // Only fails for non-finite or astronomically large means.
    let dist = Poisson::new(mean).expect("finite positive Poisson mean");
    dist.sample(rng) as u64
}

/// Photon-counting measurement at `pose` for `integration_time_s` seconds.
pub fn measure<R: Rng + ?Sized>(
    model: &CouplingModel,
    pose: &Pose,
    integration_time_s: f64,
    rng: &mut R,
) -> Result<MeasurementRecord> {
    if !(integration_time_s > 0.0) || !integration_time_s.is_finite() {
        return Err(Error::domain(
            "integration_time_s",
            integration_time_s,
            "finite and > 0",
        ));
    }
    let mean = model.rate_at(pose) * integration_time_s;
    Ok(MeasurementRecord::new(
        poisson_counts(mean, rng),
        integration_time_s,
    ))
}

/// Raw stage interface: a movable input fiber, a detector and a simulated
/// clock that advances only while integrating.
#[derive(Debug, Clone)]
pub struct OpticalStage {
    model: CouplingModel,
    pose: Pose,
    clock_s: f64,
    rng: ChaCha8Rng,
    noise_free: bool,
}

impl OpticalStage {
    pub fn new(model: CouplingModel, start: Pose, seed: u64) -> Result<Self> {
        model.validate()?;
        Ok(Self {
            model,
            pose: start,
            clock_s: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise_free: false,
        })
    }

    /// Stage whose detector returns the rounded expected count instead of a
    /// Poisson draw.
    pub fn noise_free(model: CouplingModel, start: Pose) -> Result<Self> {
        let mut stage = Self::new(model, start, 0)?;
        stage.noise_free = true;
        Ok(stage)
    }

    pub fn model(&self) -> &CouplingModel {
        &self.model
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn move_to(&mut self, pose: Pose) {
        self.pose = pose;
    }

    pub fn elapsed_s(&self) -> f64 {
        self.clock_s
    }

    pub fn measure(&mut self, integration_time_s: f64) -> Result<MeasurementRecord> {
        let record = if self.noise_free {
            if !(integration_time_s > 0.0) || !integration_time_s.is_finite() {
                return Err(Error::domain(
                    "integration_time_s",
                    integration_time_s,
                    "finite and > 0",
                ));
            }
            let mean = self.model.rate_at(&self.pose) * integration_time_s;
            MeasurementRecord::new(mean.round() as u64, integration_time_s)
        } else {
            measure(&self.model, &self.pose, integration_time_s, &mut self.rng)?
        };
        self.clock_s += integration_time_s;
        Ok(record)
    }
}
