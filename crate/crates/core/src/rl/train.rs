//! Interleaved environment interaction and SAC updates.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::run_rl_episode;
use super::replay::ReplayBuffer;
use super::sac::{SacAgent, SacConfig};
use crate::campaign::{trial_seed, trial_start};
use crate::env::{AlignmentEnv, EnvConfig, StepAction, ACTION_DIM};
use crate::error::{Error, Result};

/// Offsets the run seed for the independent random streams of a run.
const ENV_STREAM: u64 = 1;
const VALIDATION_STREAM: u64 = 2;

/// One window of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub env_step: usize,
    /// Mean per-step reward over the window.
    pub mean_reward: f64,
    /// Mean length of episodes that ended in the window; NaN if none did.
    pub mean_ep_len: f64,
    pub alpha: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
}

pub fn write_train_log<W: Write>(rows: &[TrainLogRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("<train log>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, Default)]
struct Window {
    reward_sum: f64,
    steps: usize,
    episodes: usize,
    ep_len_sum: usize,
    updates: usize,
    critic_loss: f64,
    actor_loss: f64,
}

/// Training state; [`Trainer::step`] advances by one environment step.
pub struct Trainer {
    pub agent: SacAgent<f32>,
    pub env_config: EnvConfig,
    pub seed: u64,
    env: AlignmentEnv,
    replay: ReplayBuffer,
    rng: ChaCha8Rng,
    step: usize,
    obs: Vec<f64>,
    ep_len: usize,
    window: Window,
    log: Vec<TrainLogRow>,
    best: Option<(f64, SacAgent<f32>)>,
    skipped_updates: usize,
}

impl Trainer {
    pub fn new(env_config: EnvConfig, sac: SacConfig, seed: u64) -> Result<Self> {
        env_config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs_dim = env_config.mdp.observation_len();
        let agent = SacAgent::new(sac.clone(), obs_dim, ACTION_DIM, &mut rng)?;
        let mut env = AlignmentEnv::new(env_config, trial_seed(seed, ENV_STREAM))?;
        let obs = env.reset();
        Ok(Self {
            replay: ReplayBuffer::new(sac.replay_capacity, obs_dim, ACTION_DIM)?,
            agent,
            env_config,
            seed,
            env,
            rng,
            step: 0,
            obs,
            ep_len: 0,
            window: Window::default(),
            log: Vec::new(),
            best: None,
            skipped_updates: 0,
        })
    }

    pub fn env_step(&self) -> usize {
        self.step
    }

    pub fn log(&self) -> &[TrainLogRow] {
        &self.log
    }

    /// Updates skipped because the replay held fewer than one batch.
    pub fn skipped_updates(&self) -> usize {
        self.skipped_updates
    }

    /// Best validation score so far (mean simulated seconds, lower is better).
    pub fn best_score(&self) -> Option<f64> {
        self.best.as_ref().map(|(s, _)| *s)
    }

    /// Best validated agent, or the current one when validation is off.
    pub fn best_agent(&self) -> &SacAgent<f32> {
        self.best.as_ref().map(|(_, a)| a).unwrap_or(&self.agent)
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    /// One env step plus the configured updates. Returns the log row when a
    /// window closes.
    pub fn step(&mut self) -> Result<Option<TrainLogRow>> {
        let cfg = &self.agent.config;
        let action: Vec<f64> = if self.step < cfg.warmup_steps {
            (0..ACTION_DIM)
                .map(|_| self.rng.random_range(-1.0..=1.0))
                .collect()
        } else {
            self.agent.act(&self.obs, false, &mut self.rng)?.0
        };
        let out = self.env.step(StepAction::from_slice(&action))?;
        self.step += 1;
        self.ep_len += 1;
        self.window.reward_sum += out.reward;
        self.window.steps += 1;

        let to32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        // Truncation is not terminal: the value still bootstraps.
        self.replay.push(
            &to32(&self.obs),
            &to32(&action),
            out.reward as f32,
            &to32(&out.observation),
            out.info.success,
        );
        if out.done {
            self.window.episodes += 1;
            self.window.ep_len_sum += self.ep_len;
            self.ep_len = 0;
            self.obs = self.env.reset();
        } else {
            self.obs = out.observation;
        }

        if self.step >= self.agent.config.warmup_steps {
            for _ in 0..self.agent.config.updates_per_step {
                match self
                    .replay
                    .sample(self.agent.config.batch_size, &mut self.rng)
                {
                    None => self.skipped_updates += 1,
                    Some(batch) => {
                        let stats = self.agent.update(&batch, &mut self.rng);
                        if !(stats.critic_loss.is_finite() && stats.actor_loss.is_finite())
                            || !self.agent.is_finite()
                        {
                            return Err(Error::NonFinite("SAC update"));
                        }
                        self.window.updates += 1;
                        self.window.critic_loss += stats.critic_loss;
                        self.window.actor_loss += stats.actor_loss;
                    }
                }
            }
        }

        let cfg = &self.agent.config;
        if cfg.validation_every > 0
            && self.step % cfg.validation_every == 0
            && self.step >= cfg.warmup_steps
        {
            let score = self.validate()?;
            if self.best.as_ref().is_none_or(|(best, _)| score < *best) {
                self.best = Some((score, self.agent.clone()));
            }
        }

        if self.step % self.agent.config.log_every == 0 {
            let w = std::mem::take(&mut self.window);
            let updates = w.updates.max(1) as f64;
            let row = TrainLogRow {
                env_step: self.step,
                mean_reward: w.reward_sum / w.steps as f64,
                mean_ep_len: if w.episodes > 0 {
                    w.ep_len_sum as f64 / w.episodes as f64
                } else {
                    f64::NAN
                },
                alpha: self.agent.alpha() as f64,
                critic_loss: if w.updates > 0 {
                    w.critic_loss / updates
                } else {
                    f64::NAN
                },
                actor_loss: if w.updates > 0 {
                    w.actor_loss / updates
                } else {
                    f64::NAN
                },
            };
            self.log.push(row);
            return Ok(Some(row));
        }
        Ok(None)
    }

    /// Mean simulated time of the deterministic policy over fixed starts;
    /// a failure counts as one step beyond the episode budget.
    pub fn validate(&self) -> Result<f64> {
        let n = self.agent.config.validation_trials.max(1) as u64;
        let mdp = &self.env_config.mdp;
        let budget = (mdp.episode_steps + 1) as f64 * mdp.t_step_s;
        let mut total = 0.0;
        for id in 0..n {
            let seed = trial_seed(self.seed, VALIDATION_STREAM);
            let start = trial_start(&self.env_config, seed, id);
            let t = run_rl_episode(
                &self.agent,
                &self.env_config,
                start,
                trial_seed(seed, id),
                budget,
            )?;
            total += t.unwrap_or(budget + mdp.t_step_s);
        }
        Ok(total / n as f64)
    }

    /// Runs until `total_steps`, calling `on_log` for every closed window.
    pub fn run(
        &mut self,
        mut on_log: impl FnMut(&Trainer, &TrainLogRow) -> Result<()>,
    ) -> Result<()> {
        while self.step < self.agent.config.total_steps {
            if let Some(row) = self.step()? {
                on_log(self, &row)?;
            }
        }
        Ok(())
    }
}
