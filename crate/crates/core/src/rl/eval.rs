use crate::env::{AlignmentEnv, EnvConfig, StartPose, StepAction};
use crate::error::Result;

use super::SacAgent;

/// Runs the deterministic policy from `start` until the success rate is
/// measured or the next measurement would end after `budget_s`.
///
/// Returns the simulated convergence time; an already-aligned start
/// converges after the initial measurement.
pub fn run_rl_episode(
    agent: &SacAgent<f32>,
    env_config: &EnvConfig,
    start: StartPose,
    noise_seed: u64,
    budget_s: f64,
) -> Result<Option<f64>> {
    let t_step = env_config.mdp.t_step_s;
    let max_steps = (budget_s / t_step).floor() as usize;
    if max_steps == 0 {
        return Ok(None);
    }
    let mut config = *env_config;
    config.mdp.episode_steps = (max_steps - 1).max(1);
    let mut env = AlignmentEnv::new(config, noise_seed)?;
    let mut obs = env.reset_to(start);
    if env.is_success() {
        return Ok(Some(env.elapsed_s()));
    }
    while env.steps() + 1 < max_steps {
        let action = agent.act_deterministic(&obs)?;
        let out = env.step(StepAction::from_slice(&action))?;
        if out.info.success {
            return Ok(Some(out.info.elapsed_s));
        }
        if out.done {
            break;
        }
        obs = out.observation;
    }
    Ok(None)
}
