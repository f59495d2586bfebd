//! Markov-decision-process view of the coupling stage.
//!
//! The state is the cylindrical input-fiber pose plus the last measured rate;
//! the agent observes the last `obs_frames` normalized states stacked
//! oldest-first.

use std::collections::VecDeque;
use std::f64::consts::{PI, TAU};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::coupling::{wrap_angle, CouplingModel, Pose};
use super::measure::measure;
use crate::error::{Error, Result};

/// Maximum azimuthal step per action.
pub const THETA_STEP_MAX: f64 = PI;
/// Components per observation frame: `(r, θ, z, c)`.
pub const FRAME_LEN: usize = 4;
pub const ACTION_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub step_penalty: f64,
    /// Reward per crossed bonus threshold, `b₀`.
    pub bonus_unit: f64,
    /// Number of thresholds partitioning `c_max`.
    pub bonus_levels: u32,
    /// Expected maximum rate; defaults to the coupling model's peak rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_max_cps: Option<f64>,
    pub reward_clip_lo: f64,
    pub reward_clip_hi: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            step_penalty: 0.05,
            bonus_unit: 0.6,
            bonus_levels: 20,
            c_max_cps: None,
            reward_clip_lo: -1.0,
            reward_clip_hi: 1.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_penalty > 0.0) {
            return Err(Error::domain("step_penalty", self.step_penalty, "> 0"));
        }
        if !(self.bonus_unit >= 0.0) {
            return Err(Error::domain("bonus_unit", self.bonus_unit, ">= 0"));
        }
        if self.bonus_levels == 0 {
            return Err(Error::domain("bonus_levels", 0.0, ">= 1"));
        }
        if let Some(c) = self.c_max_cps {
            if !(c > 0.0) {
                return Err(Error::domain("c_max_cps", c, "> 0"));
            }
        }
        if !(self.reward_clip_lo < self.reward_clip_hi) {
            return Err(Error::domain(
                "reward_clip_lo",
                self.reward_clip_lo,
                format!("< reward_clip_hi = {}", self.reward_clip_hi),
            ));
        }
        Ok(())
    }

    /// Bonus `b₀ · max(0, ⌊Δc / s_b⌋)` with `s_b = c_max / l_bonus`.
    pub fn bonus(&self, delta_rate: f64, c_max: f64) -> f64 {
        let threshold = c_max / self.bonus_levels as f64;
        self.bonus_unit * (delta_rate / threshold).floor().max(0.0)
    }

    /// Clipped step reward `b − p`.
    pub fn reward(&self, delta_rate: f64, c_max: f64) -> f64 {
        (self.bonus(delta_rate, c_max) - self.step_penalty)
            .clamp(self.reward_clip_lo, self.reward_clip_hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpConfig {
    /// Integration time of the measurement following every action, s.
    pub t_step_s: f64,
    pub r_step_max_um: f64,
    pub z_step_max_um: f64,
    pub obs_frames: usize,
    /// Step budget per training episode.
    pub episode_steps: usize,
    /// Episode succeeds once the measured rate reaches this fraction of `c_max`.
    pub success_fraction: f64,
    /// Starting poses are uniform over the cylinder `r <= start_r_max_um`,
    /// `|z − z_optimal| <= start_z_half_range_um`.
    pub start_r_max_um: f64,
    pub start_z_half_range_um: f64,
}

impl Default for MdpConfig {
    fn default() -> Self {
        Self {
            t_step_s: 31.0,
            r_step_max_um: 72.0,
            z_step_max_um: 563.0,
            obs_frames: 5,
            episode_steps: 200,
            success_fraction: 0.9,
            start_r_max_um: 300.0,
            start_z_half_range_um: 1200.0,
        }
    }
}

impl MdpConfig {
    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("t_step_s", self.t_step_s),
            ("r_step_max_um", self.r_step_max_um),
            ("z_step_max_um", self.z_step_max_um),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::domain(what, v, "finite and > 0"));
            }
        }
        if self.obs_frames == 0 {
            return Err(Error::domain("obs_frames", 0.0, ">= 1"));
        }
        if self.episode_steps == 0 {
            return Err(Error::domain("episode_steps", 0.0, ">= 1"));
        }
        if !(self.success_fraction > 0.0 && self.success_fraction <= 1.0) {
            return Err(Error::domain(
                "success_fraction",
                self.success_fraction,
                "in (0, 1]",
            ));
        }
        if !(self.start_r_max_um >= 0.0) || !(self.start_z_half_range_um >= 0.0) {
            return Err(Error::domain(
                "start_r_max_um",
                self.start_r_max_um,
                ">= 0 (and start_z_half_range_um >= 0)",
            ));
        }
        Ok(())
    }

    pub fn observation_len(&self) -> usize {
        self.obs_frames * FRAME_LEN
    }
}

/// Everything needed to build an [`AlignmentEnv`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnvConfig {
    pub coupling: CouplingModel,
    pub reward: RewardConfig,
    pub mdp: MdpConfig,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.coupling.validate()?;
        self.reward.validate()?;
        self.mdp.validate()
    }

    pub fn c_max(&self) -> f64 {
        self.reward
            .c_max_cps
            .unwrap_or_else(|| self.coupling.peak_rate())
    }

    pub fn success_rate(&self) -> f64 {
        self.mdp.success_fraction * self.c_max()
    }

    pub fn normalizer(&self) -> ObservationNormalizer {
        ObservationNormalizer {
            r_scale_um: 10.0 * self.mdp.r_step_max_um,
            z_scale_um: 10.0 * self.mdp.z_step_max_um,
            rate_scale_cps: self.c_max(),
            frames: self.mdp.obs_frames,
        }
    }

    /// Uniform draw from the starting-misalignment cylinder.
    pub fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> StartPose {
        let u_r: f64 = rng.random();
        let u_theta: f64 = rng.random();
        let u_z: f64 = rng.random();
        StartPose {
            r_um: self.mdp.start_r_max_um * u_r.sqrt(),
            theta_rad: wrap_angle(TAU * u_theta),
            z_um: self.coupling.z_optimal_um + self.mdp.start_z_half_range_um * (2.0 * u_z - 1.0),
        }
    }
}

/// Constants mapping a raw `(r, θ, z, c)` frame to network inputs. Stored in
/// checkpoints so evaluation uses the scaling the agent was trained with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationNormalizer {
    pub r_scale_um: f64,
    pub z_scale_um: f64,
    pub rate_scale_cps: f64,
    pub frames: usize,
}

impl ObservationNormalizer {
    pub fn frame(&self, state: &AlignmentState) -> [f64; FRAME_LEN] {
        [
            state.r_um / self.r_scale_um,
            state.theta_rad / PI - 1.0,
            state.z_um / self.z_scale_um,
            state.last_rate_cps / self.rate_scale_cps,
        ]
    }
}

/// Cylindrical starting pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartPose {
    pub r_um: f64,
    pub theta_rad: f64,
    pub z_um: f64,
}

impl StartPose {
    pub fn to_pose(self) -> Pose {
        Pose::from_cylindrical(self.r_um, self.theta_rad, self.z_um)
    }
}

/// MDP state `(r, θ, z, c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentState {
    pub r_um: f64,
    pub theta_rad: f64,
    pub z_um: f64,
    pub last_rate_cps: f64,
}

impl AlignmentState {
    pub fn pose(&self) -> Pose {
        Pose::from_cylindrical(self.r_um, self.theta_rad, self.z_um)
    }
}

/// Normalized action in `[−1, 1]³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepAction {
    pub d_r_norm: f64,
    pub d_theta_norm: f64,
    pub d_z_norm: f64,
}

impl StepAction {
    /// Clamps each component to `[−1, 1]`.
    pub fn new(d_r_norm: f64, d_theta_norm: f64, d_z_norm: f64) -> Self {
        Self {
            d_r_norm: d_r_norm.clamp(-1.0, 1.0),
            d_theta_norm: d_theta_norm.clamp(-1.0, 1.0),
            d_z_norm: d_z_norm.clamp(-1.0, 1.0),
        }
    }

    pub fn from_slice(a: &[f64]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    fn is_finite(&self) -> bool {
        self.d_r_norm.is_finite() && self.d_theta_norm.is_finite() && self.d_z_norm.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub counts: u64,
    pub rate_cps: f64,
    /// Reached the success rate.
    pub success: bool,
    /// Ran out of episode steps without success.
    pub truncated: bool,
    pub elapsed_s: f64,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One row of a trajectory dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub r_um: f64,
    pub theta_rad: f64,
    pub z_um: f64,
    pub counts: u64,
    pub rate_cps: f64,
    pub reward: f64,
    pub done: bool,
}

pub fn write_trajectory_csv<W: Write>(rows: &[TrajectoryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("<trajectory csv>", e))?;
    Ok(())
}

/// Single-threaded stochastic environment; one instance per episode stream.
#[derive(Debug, Clone)]
pub struct AlignmentEnv {
    config: EnvConfig,
    normalizer: ObservationNormalizer,
    rng: ChaCha8Rng,
    state: Option<AlignmentState>,
    history: VecDeque<[f64; FRAME_LEN]>,
    steps: usize,
    done: bool,
    trajectory: Option<Vec<TrajectoryRow>>,
}

impl AlignmentEnv {
    pub fn new(config: EnvConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            normalizer: config.normalizer(),
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: None,
            history: VecDeque::with_capacity(config.mdp.obs_frames),
            steps: 0,
            done: false,
            trajectory: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn normalizer(&self) -> ObservationNormalizer {
        self.normalizer
    }

    /// Starts recording every reset and step into a trajectory.
    pub fn record_trajectory(&mut self) {
        self.trajectory = Some(Vec::new());
    }

    pub fn trajectory(&self) -> Option<&[TrajectoryRow]> {
        self.trajectory.as_deref()
    }

    /// Samples a starting misalignment and returns the initial observation.
    pub fn reset(&mut self) -> Vec<f64> {
        let start = self.config.sample_start(&mut self.rng);
        self.reset_to(start)
    }

    /// Starts an episode from a given pose. The initial measurement costs one
    /// `t_step` of simulated time.
    pub fn reset_to(&mut self, start: StartPose) -> Vec<f64> {
        let pose = start.to_pose();
        // t_step was validated positive, so measurement cannot fail.
        let record = measure(
            &self.config.coupling,
            &pose,
            self.config.mdp.t_step_s,
            &mut self.rng,
        )
        .expect("validated integration time");
        let state = AlignmentState {
            r_um: start.r_um.max(0.0),
            theta_rad: wrap_angle(start.theta_rad),
            z_um: start.z_um,
            last_rate_cps: record.rate_cps,
        };
        self.state = Some(state);
        self.steps = 0;
        self.done = false;
        let frame = self.normalizer.frame(&state);
        self.history.clear();
        self.history
            .extend(std::iter::repeat_n(frame, self.config.mdp.obs_frames));
        if let Some(t) = self.trajectory.as_mut() {
            t.push(TrajectoryRow {
                step: 0,
                r_um: state.r_um,
                theta_rad: state.theta_rad,
                z_um: state.z_um,
                counts: record.counts,
                rate_cps: record.rate_cps,
                reward: 0.0,
                done: false,
            });
        }
        self.observation()
    }

    pub fn state(&self) -> Option<AlignmentState> {
        self.state
    }

    /// Whether the last measured rate already meets the success criterion.
    pub fn is_success(&self) -> bool {
        self.state
            .is_some_and(|s| s.last_rate_cps >= self.config.success_rate())
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Simulated time since reset: the reset measurement plus one `t_step`
    /// per action.
    pub fn elapsed_s(&self) -> f64 {
        if self.state.is_none() {
            return 0.0;
        }
        (self.steps + 1) as f64 * self.config.mdp.t_step_s
    }

    /// Stacked normalized frames, oldest first.
    pub fn observation(&self) -> Vec<f64> {
        self.history.iter().flatten().copied().collect()
    }

    pub fn step(&mut self, action: StepAction) -> Result<StepOutcome> {
        let Some(prev) = self.state else {
            return Err(Error::State("step called before reset"));
        };
        if self.done {
            return Err(Error::State("step called after episode end; reset first"));
        }
        if !action.is_finite() {
            return Err(Error::Input("non-finite action".into()));
        }
        let action = StepAction::new(action.d_r_norm, action.d_theta_norm, action.d_z_norm);
        let mdp = &self.config.mdp;
        let r = (prev.r_um + action.d_r_norm * mdp.r_step_max_um).max(0.0);
        let theta = wrap_angle(prev.theta_rad + action.d_theta_norm * THETA_STEP_MAX);
        let z = prev.z_um + action.d_z_norm * mdp.z_step_max_um;
        let pose = Pose::from_cylindrical(r, theta, z);
        let record = measure(&self.config.coupling, &pose, mdp.t_step_s, &mut self.rng)?;

        let c_max = self.config.c_max();
        let reward = self
            .config
            .reward
            .reward(record.rate_cps - prev.last_rate_cps, c_max);
        let state = AlignmentState {
            r_um: r,
            theta_rad: theta,
            z_um: z,
            last_rate_cps: record.rate_cps,
        };
        self.state = Some(state);
        self.steps += 1;
        let success = record.rate_cps >= self.config.success_rate();
        let truncated = !success && self.steps >= mdp.episode_steps;
        self.done = success || truncated;

        self.history.pop_front();
        self.history.push_back(self.normalizer.frame(&state));
        if let Some(t) = self.trajectory.as_mut() {
            t.push(TrajectoryRow {
                step: self.steps,
                r_um: r,
                theta_rad: theta,
                z_um: z,
                counts: record.counts,
                rate_cps: record.rate_cps,
                reward,
                done: self.done,
            });
        }
        Ok(StepOutcome {
            observation: self.observation(),
            reward,
            done: self.done,
            info: StepInfo {
                counts: record.counts,
                rate_cps: record.rate_cps,
                success,
                truncated,
                elapsed_s: self.elapsed_s(),
                step: self.steps,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn env(seed: u64) -> AlignmentEnv {
        AlignmentEnv::new(EnvConfig::default(), seed).unwrap()
    }

    #[test]
    fn observation_has_twenty_components_and_backfilled_history() {
        let mut e = env(1);
        let obs = e.reset();
        assert_eq!(obs.len(), 20);
        for frame in obs.chunks(FRAME_LEN) {
            assert_eq!(frame, &obs[..FRAME_LEN]);
        }
    }

    #[test]
    fn start_lies_inside_misalignment_cylinder() {
        let cfg = EnvConfig::default();
        let mut e = env(5);
        for _ in 0..500 {
            e.reset();
            let s = e.state().unwrap();
            assert!(s.r_um <= cfg.mdp.start_r_max_um);
            assert!((s.z_um - cfg.coupling.z_optimal_um).abs() <= cfg.mdp.start_z_half_range_um);
        }
    }

    #[test]
    fn full_radial_action_moves_exactly_one_step() {
        let mut e = env(2);
        e.reset_to(StartPose {
            r_um: 100.0,
            theta_rad: 1.0,
            z_um: 1580.0,
        });
        e.step(StepAction::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(e.state().unwrap().r_um, 172.0);
    }

    #[test]
    fn step_before_reset_is_a_state_error() {
        let mut e = env(0);
        assert!(matches!(
            e.step(StepAction::new(0.0, 0.0, 0.0)),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn bonus_examples() {
        let r = RewardConfig::default();
        let c_max = 20_050.0;
        let s_b = c_max / 20.0;
        assert_eq!(r.bonus(-100.0, c_max), 0.0);
        assert_eq!(r.reward(0.0, c_max), -0.05);
        assert!((r.bonus(2.5 * s_b, c_max) - 1.2).abs() < 1e-12);
        assert_eq!(r.reward(2.5 * s_b, c_max), 1.0);
    }

    #[test]
    fn success_at_optimum_ends_episode() {
        let mut e = env(9);
        e.reset_to(StartPose {
            r_um: 0.0,
            theta_rad: 0.0,
            z_um: 1580.0,
        });
        assert!(e.is_success());
        let out = e.step(StepAction::new(0.0, 0.0, 0.0)).unwrap();
        assert!(out.done && out.info.success);
        assert!(e.step(StepAction::new(0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn episode_truncates_at_budget() {
        let cfg = EnvConfig {
            mdp: MdpConfig {
                episode_steps: 3,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut e = AlignmentEnv::new(cfg, 4).unwrap();
        e.reset_to(StartPose {
            r_um: 290.0,
            theta_rad: 0.0,
            z_um: 2700.0,
        });
        let mut last = None;
        for _ in 0..3 {
            last = Some(e.step(StepAction::new(1.0, 0.0, 1.0)).unwrap());
        }
        let last = last.unwrap();
        assert!(last.done && last.info.truncated && !last.info.success);
        assert_eq!(e.elapsed_s(), 4.0 * 31.0);
    }

    #[test]
    fn trajectory_dump_columns() {
        let mut e = env(3);
        e.record_trajectory();
        e.reset();
        e.step(StepAction::new(-0.5, 0.2, 0.1)).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(e.trajectory().unwrap(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,r_um,theta_rad,z_um,counts,rate_cps,reward,done\n"));
        assert_eq!(text.lines().count(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pose_invariants_hold_for_any_action_sequence(
            seed in any::<u64>(),
            actions in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0), 1..40),
        ) {
            let cfg = EnvConfig {
                mdp: MdpConfig { episode_steps: 1000, ..Default::default() },
                ..Default::default()
            };
            let mut e = AlignmentEnv::new(cfg, seed).unwrap();
            e.reset();
            let p = cfg.reward.step_penalty;
            let s_b = cfg.c_max() / cfg.reward.bonus_levels as f64;
            for (n, (a, b, c)) in actions.into_iter().enumerate() {
                let before = e.state().unwrap();
                let out = e.step(StepAction::new(a, b, c)).unwrap();
                let after = e.state().unwrap();
                prop_assert!(after.r_um >= 0.0);
                prop_assert!((0.0..TAU).contains(&after.theta_rad));
                let mut dtheta = (after.theta_rad - before.theta_rad).abs();
                if dtheta > PI { dtheta = TAU - dtheta; }
                prop_assert!(dtheta <= PI + 1e-12);
                prop_assert!(out.reward >= cfg.reward.reward_clip_lo);
                if after.last_rate_cps - before.last_rate_cps < s_b {
                    prop_assert_eq!(out.reward, -p);
                }
                prop_assert_eq!(e.elapsed_s(), (n + 2) as f64 * cfg.mdp.t_step_s);
                if out.done { break; }
            }
        }

        #[test]
        fn seeded_trajectories_are_identical(seed in any::<u64>()) {
            let run = || {
                let mut e = env(seed);
                e.record_trajectory();
                e.reset();
                for k in 0..10 {
                    let x = (k as f64 * 0.37).sin();
                    if e.step(StepAction::new(-x, x, 0.5 * x)).unwrap().done { break; }
                }
                e.trajectory().unwrap().to_vec()
            };
            prop_assert_eq!(run(), run());
        }
    }
}
