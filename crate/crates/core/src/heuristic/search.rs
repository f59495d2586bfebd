//! Measurement-driven alignment that mimics the manual laboratory procedure:
//! blind jump to the nominal axial position, signal check, then alternating
//! axial line search and four-point radial square search, each move gated by
//! the `W` significance test.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::stats::{background_threshold, decision_threshold, w_statistic};
use crate::env::{MeasurementRecord, OpticalStage, Pose};
use crate::error::{Error, Result};

/// Integration time grows by this factor while a probe lacks counts.
const INTEGRATION_GROWTH: f64 = 1.5;
/// Upper bound for an adaptively extended axial probe.
const MAX_PROBE_INTEGRATION_S: f64 = 120.0;
/// An axis phase ends after this many accepted moves.
const MAX_ACCEPTS_PER_PHASE: usize = 3;
/// An axis phase ends once its step falls below this fraction of the initial step.
const STEP_EXHAUSTED_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeuristicConfig {
    pub z_blind_jump_um: f64,
    pub initial_integration_s: f64,
    pub z_confidence: f64,
    pub xy_confidence: f64,
    pub success_fraction: f64,
    pub time_budget_s: f64,
    pub initial_z_step_um: f64,
    pub initial_xy_step_um: f64,
    pub step_shrink: f64,
    pub min_counts_worse: u64,
    pub min_counts_better: u64,
    pub xy_min_counts: u64,
    pub xy_max_meas_time_s: f64,
    /// Starting integration time of every probe after verification.
    pub probe_integration_s: f64,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            z_blind_jump_um: 1580.0,
            initial_integration_s: 120.0,
            z_confidence: 0.995,
            xy_confidence: 0.999,
            success_fraction: 0.9,
            time_budget_s: 3600.0,
            initial_z_step_um: 200.0,
            initial_xy_step_um: 40.0,
            step_shrink: 2.0 / 3.0,
            min_counts_worse: 200,
            min_counts_better: 500,
            xy_min_counts: 300,
            xy_max_meas_time_s: 30.0,
            probe_integration_s: 10.0,
        }
    }
}

impl HeuristicConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return Err(Error::domain("step_shrink", self.step_shrink, "in (0, 1)"));
        }
        if !(self.success_fraction > 0.0 && self.success_fraction <= 1.0) {
            return Err(Error::domain(
                "success_fraction",
                self.success_fraction,
                "in (0, 1]",
            ));
        }
        if !(self.time_budget_s >= 0.0) {
            return Err(Error::domain("time_budget_s", self.time_budget_s, ">= 0"));
        }
        for (what, v) in [
            ("initial_integration_s", self.initial_integration_s),
            ("initial_z_step_um", self.initial_z_step_um),
            ("initial_xy_step_um", self.initial_xy_step_um),
            ("xy_max_meas_time_s", self.xy_max_meas_time_s),
            ("probe_integration_s", self.probe_integration_s),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::domain(what, v, "finite and > 0"));
            }
        }
        if !self.z_blind_jump_um.is_finite() {
            return Err(Error::domain(
                "z_blind_jump_um",
                self.z_blind_jump_um,
                "finite",
            ));
        }
        decision_threshold(self.z_confidence)?;
        decision_threshold(self.xy_confidence)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Verify,
    Axial,
    Radial,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Verify => "verify",
            Phase::Axial => "axial",
            Phase::Radial => "radial",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    /// Signal check passed; becomes the first reference.
    Verified,
    /// Signal check failed.
    Abort,
    /// Radial probe recorded for comparison.
    Probe,
    /// Too few counts; the same point is re-measured for longer.
    ExtendIntegration,
    /// Significant improvement; new reference position.
    Accept,
    /// Significantly worse; direction reversed and step reduced.
    Reverse,
    /// Not significant either way; step reduced.
    Inconclusive,
    /// Repeated failures; fiber returned to the last accepted position.
    Backtrack,
    /// Radial square rejected; square shrunk.
    Shrink,
    /// Success rate reached.
    Converged,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Verified => "verified",
            Decision::Abort => "abort",
            Decision::Probe => "probe",
            Decision::ExtendIntegration => "extend_integration",
            Decision::Accept => "accept",
            Decision::Reverse => "reverse",
            Decision::Inconclusive => "inconclusive",
            Decision::Backtrack => "backtrack",
            Decision::Shrink => "shrink",
            Decision::Converged => "converged",
        })
    }
}

/// One measurement of the search, stamped at the end of its integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchEvent {
    pub t_s: f64,
    pub pose: Pose,
    pub record: MeasurementRecord,
    pub w: Option<f64>,
    pub decision: Decision,
    pub phase: Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Converged,
    TimedOut,
    AbortedNoSignal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchTrace {
    pub events: Vec<SearchEvent>,
    pub outcome: Outcome,
    pub elapsed_s: f64,
    pub final_pose: Pose,
    /// End of the measurement that first met the success rate.
    pub converged_at_s: Option<f64>,
}

impl SearchTrace {
    /// Poses accepted as new references, in order, starting with the verified one.
    pub fn accepted_poses(&self) -> Vec<Pose> {
        self.events
            .iter()
            .filter(|e| {
                matches!(
                    e.decision,
                    Decision::Verified | Decision::Accept | Decision::Converged
                )
            })
            .map(|e| e.pose)
            .collect()
    }

    /// Trace CSV: `t_s,r_um,theta_rad,z_um,counts,int_time_s,W,decision,phase`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "t_s",
            "r_um",
            "theta_rad",
            "z_um",
            "counts",
            "int_time_s",
            "W",
            "decision",
            "phase",
        ])?;
        for e in &self.events {
            w.write_record([
                e.t_s.to_string(),
                e.pose.r_um().to_string(),
                e.pose.theta_rad().to_string(),
                e.pose.z_um.to_string(),
                e.record.counts.to_string(),
                e.record.integration_time_s.to_string(),
                e.w.map(|v| v.to_string()).unwrap_or_default(),
                e.decision.to_string(),
                e.phase.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<trace csv>", e))?;
        Ok(())
    }
}

/// Mutable search state bound to one stage.
pub struct HeuristicSearch<'a> {
    stage: &'a mut OpticalStage,
    config: HeuristicConfig,
    success_rate: f64,
    z_threshold: f64,
    xy_threshold: f64,
    events: Vec<SearchEvent>,
    reference: Option<(Pose, MeasurementRecord)>,
    z_step: f64,
    z_direction: f64,
    xy_step: f64,
    converged_at: Option<f64>,
}

impl<'a> HeuristicSearch<'a> {
    /// `c_max` is the expected maximum count rate defining success.
    pub fn new(stage: &'a mut OpticalStage, config: HeuristicConfig, c_max: f64) -> Result<Self> {
        config.validate()?;
        if !(c_max > 0.0) {
            return Err(Error::domain("c_max", c_max, "> 0"));
        }
        Ok(Self {
            stage,
            success_rate: config.success_fraction * c_max,
            z_threshold: decision_threshold(config.z_confidence)?,
            xy_threshold: decision_threshold(config.xy_confidence)?,
            events: Vec::new(),
            reference: None,
            z_step: config.initial_z_step_um,
            z_direction: 1.0,
            xy_step: config.initial_xy_step_um,
            converged_at: None,
            config,
        })
    }

    pub fn z_step(&self) -> f64 {
        self.z_step
    }

    pub fn xy_step(&self) -> f64 {
        self.xy_step
    }

    pub fn reference(&self) -> Option<(Pose, MeasurementRecord)> {
        self.reference
    }

    pub fn events(&self) -> &[SearchEvent] {
        &self.events
    }

    pub fn is_converged(&self) -> bool {
        self.converged_at.is_some()
    }

    fn out_of_time(&self) -> bool {
        self.stage.elapsed_s() >= self.config.time_budget_s
    }

    fn finished(&self) -> bool {
        self.is_converged() || self.out_of_time()
    }

    /// Measures at `pose` unless the search is already finished. A measurement
    /// meeting the success rate ends the search at that pose.
    fn take(&mut self, pose: Pose, t: f64, phase: Phase) -> Result<Option<MeasurementRecord>> {
        if self.finished() {
            return Ok(None);
        }
        self.stage.move_to(pose);
        let record = self.stage.measure(t)?;
        let converged = record.rate_cps >= self.success_rate;
        self.events.push(SearchEvent {
            t_s: self.stage.elapsed_s(),
            pose,
            record,
            w: None,
            decision: if converged {
                Decision::Converged
            } else {
                Decision::Probe
            },
            phase,
        });
        if converged {
            self.converged_at = Some(self.stage.elapsed_s());
            self.reference = Some((pose, record));
        }
        Ok(Some(record))
    }

    fn label(&mut self, index: usize, w: Option<f64>, decision: Decision) {
        let event = &mut self.events[index];
        event.w = w;
        if event.decision != Decision::Converged {
            event.decision = decision;
        }
    }

    fn label_last(&mut self, w: Option<f64>, decision: Decision) {
        let last = self.events.len() - 1;
        self.label(last, w, decision);
    }

    fn reference_or_err(&self) -> Result<(Pose, MeasurementRecord)> {
        self.reference
            .ok_or(Error::State("search step before signal verification"))
    }

    /// Blind jump to the nominal axial position and a long integration that
    /// must exceed the background by five standard deviations.
    pub fn verify_signal(&mut self) -> Result<MeasurementRecord> {
        let mut pose = self.stage.pose();
        pose.z_um = self.config.z_blind_jump_um;
        self.stage.move_to(pose);
        let t = self.config.initial_integration_s;
        let record = self.stage.measure(t)?;
        let threshold = background_threshold(self.stage.model().background_rate_cps, t);
        let passed = record.counts as f64 > threshold;
        let converged = passed && record.rate_cps >= self.success_rate;
        self.events.push(SearchEvent {
            t_s: self.stage.elapsed_s(),
            pose,
            record,
            w: None,
            decision: match (passed, converged) {
                (false, _) => Decision::Abort,
                (true, true) => Decision::Converged,
                (true, false) => Decision::Verified,
            },
            phase: Phase::Verify,
        });
        if !passed {
            return Err(Error::NoSignal {
                counts: record.counts,
                threshold,
            });
        }
        self.reference = Some((pose, record));
        if converged && !self.out_of_time() {
            self.converged_at = Some(self.stage.elapsed_s());
        }
        Ok(record)
    }

    /// One axial phase: line search along Z from the reference position.
    ///
    /// Ends after three accepted moves, when the step is exhausted, after
    /// four consecutive failures, or when the search finishes.
    pub fn axial_search(&mut self) -> Result<Pose> {
        let initial = self.config.initial_z_step_um;
        if self.z_step < STEP_EXHAUSTED_FRACTION * initial {
            self.z_step = initial;
        }
        let mut accepted = 0;
        let mut failures = 0;
        while !self.finished()
            && accepted < MAX_ACCEPTS_PER_PHASE
            && self.z_step >= STEP_EXHAUSTED_FRACTION * initial
        {
            let (ref_pose, ref_record) = self.reference_or_err()?;
            let target = Pose {
                z_um: ref_pose.z_um + self.z_direction * self.z_step,
                ..ref_pose
            };
            let mut t = self.config.probe_integration_s;
            let (record, w) = loop {
                let Some(record) = self.take(target, t, Phase::Axial)? else {
                    return Ok(self.stage.pose());
                };
                let w = w_statistic(&record, &ref_record);
                if self.is_converged() {
                    self.label_last(Some(w), Decision::Converged);
                    return Ok(target);
                }
                let better = w > self.z_threshold && record.counts >= self.config.min_counts_better;
                let worse = w < -self.z_threshold && record.counts >= self.config.min_counts_worse;
                if !better
                    && !worse
                    && record.counts < self.config.min_counts_better
                    && t < MAX_PROBE_INTEGRATION_S
                {
                    self.label_last(Some(w), Decision::ExtendIntegration);
                    t = (t * INTEGRATION_GROWTH).min(MAX_PROBE_INTEGRATION_S);
                    continue;
                }
                break (record, w);
            };

            if w > self.z_threshold && record.counts >= self.config.min_counts_better {
                self.reference = Some((target, record));
                self.label_last(Some(w), Decision::Accept);
                accepted += 1;
                failures = 0;
                continue;
            }

            let worse = w < -self.z_threshold && record.counts >= self.config.min_counts_worse;
            failures += 1;
            self.z_step *= self.config.step_shrink;
            match failures {
                1 if worse => {
                    self.z_direction = -self.z_direction;
                    self.label_last(Some(w), Decision::Reverse);
                }
                1 => self.label_last(Some(w), Decision::Inconclusive),
                2 | 3 => {
                    self.stage.move_to(ref_pose);
                    self.z_direction = -self.z_direction;
                    self.label_last(Some(w), Decision::Backtrack);
                }
                _ => {
                    self.stage.move_to(ref_pose);
                    self.label_last(Some(w), Decision::Backtrack);
                    break;
                }
            }
        }
        if let Some((pose, _)) = self.reference {
            self.stage.move_to(pose);
        }
        Ok(self.stage.pose())
    }

    /// One radial phase: probe the four corners of a square around the
    /// reference and move to the brightest if it is significantly better.
    pub fn radial_search(&mut self) -> Result<Pose> {
        let initial = self.config.initial_xy_step_um;
        if self.xy_step < STEP_EXHAUSTED_FRACTION * initial {
            self.xy_step = initial;
        }
        let mut accepted = 0;
        while !self.finished()
            && accepted < MAX_ACCEPTS_PER_PHASE
            && self.xy_step >= STEP_EXHAUSTED_FRACTION * initial
        {
            let (centre, ref_record) = self.reference_or_err()?;
            let s = self.xy_step;
            let mut best: Option<(usize, Pose, MeasurementRecord)> = None;
            for (dx, dy) in [(s, s), (-s, s), (-s, -s), (s, -s)] {
                let probe = Pose {
                    x_um: centre.x_um + dx,
                    y_um: centre.y_um + dy,
                    ..centre
                };
                let mut t = self
                    .config
                    .probe_integration_s
                    .min(self.config.xy_max_meas_time_s);
                let record = loop {
                    let Some(record) = self.take(probe, t, Phase::Radial)? else {
                        return Ok(self.stage.pose());
                    };
                    if self.is_converged() {
                        let w = w_statistic(&record, &ref_record);
                        self.label_last(Some(w), Decision::Converged);
                        return Ok(probe);
                    }
                    if record.counts < self.config.xy_min_counts
                        && t < self.config.xy_max_meas_time_s
                    {
                        self.label_last(None, Decision::ExtendIntegration);
                        t = (t * INTEGRATION_GROWTH).min(self.config.xy_max_meas_time_s);
                        continue;
                    }
                    break record;
                };
                let w = w_statistic(&record, &ref_record);
                self.label_last(Some(w), Decision::Probe);
                if best.is_none_or(|(_, _, b)| record.rate_cps > b.rate_cps) {
                    best = Some((self.events.len() - 1, probe, record));
                }
            }

            let (index, pose, record) = best.expect("four probes measured");
            let w = w_statistic(&record, &ref_record);
            if w > self.xy_threshold
                && record.counts >= self.config.xy_min_counts
                && record.integration_time_s <= self.config.xy_max_meas_time_s
            {
                self.reference = Some((pose, record));
                self.label(index, Some(w), Decision::Accept);
                accepted += 1;
            } else {
                self.xy_step *= self.config.step_shrink;
                self.label_last(self.events.last().and_then(|e| e.w), Decision::Shrink);
            }
            self.stage.move_to(self.reference_or_err()?.0);
        }
        Ok(self.stage.pose())
    }

    /// Full procedure: verification, then alternating axial and radial
    /// phases until the success rate or the time budget is reached.
    pub fn run(mut self) -> Result<SearchTrace> {
        match self.verify_signal() {
            Ok(_) => {}
            Err(Error::NoSignal { .. }) => return Ok(self.into_trace(Outcome::AbortedNoSignal)),
            Err(e) => return Err(e),
        }
        while !self.finished() {
            self.axial_search()?;
            self.radial_search()?;
        }
        let outcome = if self.is_converged() {
            Outcome::Converged
        } else {
            Outcome::TimedOut
        };
        Ok(self.into_trace(outcome))
    }

    fn into_trace(self, outcome: Outcome) -> SearchTrace {
        SearchTrace {
            outcome,
            elapsed_s: self.stage.elapsed_s(),
            final_pose: self.stage.pose(),
            converged_at_s: self.converged_at,
            events: self.events,
        }
    }
}

/// Runs the complete heuristic alignment on a fresh stage.
pub fn run_alignment(
    stage: &mut OpticalStage,
    config: HeuristicConfig,
    c_max: f64,
) -> Result<SearchTrace> {
    HeuristicSearch::new(stage, config, c_max)?.run()
}
