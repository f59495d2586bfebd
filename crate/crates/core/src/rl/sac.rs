//! Soft actor-critic with twin critics, target critics and a learned
//! entropy temperature.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::nn::{Cache, Mlp, Real};
use super::policy::{output_grad, sample};
use super::replay::Batch;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SacConfig {
    pub hidden_sizes: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub warmup_steps: usize,
    pub entropy_target: f64,
    pub initial_alpha: f64,
    pub total_steps: usize,
    pub updates_per_step: usize,
    /// Training-log window, env steps.
    pub log_every: usize,
    /// Validation cadence for best-agent retention, env steps; 0 disables it.
    pub validation_every: usize,
    pub validation_trials: usize,
    /// Periodic checkpoint cadence, env steps; 0 disables it.
    pub checkpoint_every: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![256, 256],
            learning_rate: 3e-4,
            gamma: 0.0003,
            tau: 0.005,
            batch_size: 128,
            replay_capacity: 1_000_000,
            warmup_steps: 5_000,
            entropy_target: -3.0,
            initial_alpha: 1.0,
            total_steps: 200_000,
            updates_per_step: 1,
            log_every: 1_000,
            validation_every: 10_000,
            validation_trials: 20,
            checkpoint_every: 50_000,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::Config(
                "sac.hidden_sizes must be non-empty and positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::domain("learning_rate", self.learning_rate, "> 0"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::domain("gamma", self.gamma, "in [0, 1]"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::domain("tau", self.tau, "in (0, 1]"));
        }
        if !(self.initial_alpha > 0.0) {
            return Err(Error::domain("initial_alpha", self.initial_alpha, "> 0"));
        }
        if !self.entropy_target.is_finite() {
            return Err(Error::domain(
                "entropy_target",
                self.entropy_target,
                "finite",
            ));
        }
        for (what, v) in [
            ("batch_size", self.batch_size),
            ("replay_capacity", self.replay_capacity),
            ("log_every", self.log_every),
        ] {
            if v == 0 {
                return Err(Error::domain(what, 0.0, ">= 1"));
            }
        }
        if self.replay_capacity < self.batch_size {
            return Err(Error::domain(
                "replay_capacity",
                self.replay_capacity as f64,
                format!(">= batch_size = {}", self.batch_size),
            ));
        }
        Ok(())
    }
}

/// Loss diagnostics of one gradient update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    /// Batch mean of `−log π`.
    pub entropy: f64,
}

/// `y = r + γ·(1 − done)·(min(q1, q2) − α·log π')`.
pub fn td_targets<T: Real>(
    reward: &[T],
    done: &[T],
    next_q1: &[T],
    next_q2: &[T],
    next_log_prob: &[T],
    gamma: T,
    alpha: T,
) -> Vec<T> {
    (0..reward.len())
        .map(|b| {
            let soft = next_q1[b].min(next_q2[b]) - alpha * next_log_prob[b];
            reward[b] + gamma * (T::one() - done[b]) * soft
        })
        .collect()
}

/// `½·mean (Q(s,a) − y)²`; accumulates parameter gradients into `grad`.
pub fn critic_objective<T: Real>(
    critic: &Mlp<T>,
    state_action: &[T],
    y: &[T],
    grad: Option<&mut [T]>,
) -> T {
    let batch = y.len();
    let mut cache = Cache::default();
    critic.forward(state_action, batch, &mut cache);
    let inv_b = T::one() / T::lit(batch as f64);
    let q = cache.output();
    let resid: Vec<T> = q.iter().zip(y).map(|(&q, &y)| q - y).collect();
    let loss = resid.iter().fold(T::zero(), |s, &r| s + r * r) * T::lit(0.5) * inv_b;
    if let Some(g) = grad {
        let g_out: Vec<T> = resid.iter().map(|&r| r * inv_b).collect();
        critic.backward(&cache, &g_out, Some(g), None);
    }
    loss
}

/// Concatenates `obs` rows with `action` rows.
pub fn concat_rows<T: Copy>(obs: &[T], obs_dim: usize, action: &[T], act_dim: usize) -> Vec<T> {
    let batch = obs.len() / obs_dim;
    let mut out = Vec::with_capacity(batch * (obs_dim + act_dim));
    for b in 0..batch {
        out.extend_from_slice(&obs[b * obs_dim..(b + 1) * obs_dim]);
        out.extend_from_slice(&action[b * act_dim..(b + 1) * act_dim]);
    }
    out
}

/// Actor objective `mean_b [α·log π(a_b|s_b) − min_k Q_k(s_b, a_b)]` with
/// `a_b` reparameterized by `noise`. Returns `(loss, mean log π)` and
/// accumulates actor parameter gradients into `grad`.
pub fn actor_objective<T: Real>(
    actor: &Mlp<T>,
    critics: [&Mlp<T>; 2],
    obs: &[T],
    noise: &[T],
    alpha: T,
    grad: Option<&mut [T]>,
) -> (T, T) {
    let obs_dim = actor.input_dim();
    let batch = obs.len() / obs_dim;
    let mut actor_cache = Cache::default();
    let s = sample(actor, obs, batch, noise, &mut actor_cache);
    let dim = s.dim;
    let sa = concat_rows(obs, obs_dim, &s.action, dim);

    let mut caches = [Cache::default(), Cache::default()];
    for (c, cache) in critics.iter().zip(&mut caches) {
        c.forward(&sa, batch, cache);
    }
    let inv_b = T::one() / T::lit(batch as f64);
    let mut loss = T::zero();
    let mut mean_lp = T::zero();
    let mut picks = [vec![T::zero(); batch], vec![T::zero(); batch]];
    for b in 0..batch {
        let (q1, q2) = (caches[0].output()[b], caches[1].output()[b]);
        let k = usize::from(q2 < q1);
        picks[k][b] = -inv_b;
        loss = loss + (alpha * s.log_prob[b] - q1.min(q2)) * inv_b;
        mean_lp = mean_lp + s.log_prob[b] * inv_b;
    }
    if let Some(g) = grad {
        let mut grad_action = vec![T::zero(); batch * dim];
        let mut input_grad = Vec::new();
        for k in 0..2 {
            critics[k].backward(&caches[k], &picks[k], None, Some(&mut input_grad));
            for b in 0..batch {
                for i in 0..dim {
                    let v = input_grad[b * (obs_dim + dim) + obs_dim + i];
                    grad_action[b * dim + i] = grad_action[b * dim + i] + v;
                }
            }
        }
        let g_out = output_grad(&s, alpha * inv_b, &grad_action);
        actor.backward(&actor_cache, &g_out, Some(g), None);
    }
    (loss, mean_lp)
}

/// Networks, optimizers and temperature of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct SacAgent<T> {
    pub config: SacConfig,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub actor: Mlp<T>,
    pub critics: [Mlp<T>; 2],
    pub targets: [Mlp<T>; 2],
    pub actor_opt: Adam<T>,
    pub critic_opts: [Adam<T>; 2],
    pub log_alpha: T,
    pub alpha_opt: Adam<T>,
}

fn normal_noise<T: Real, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<T> {
    (0..n)
        .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

fn to_real<T: Real>(v: &[f32]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x as f64)).collect()
}

impl<T: Real> SacAgent<T> {
    pub fn new<R: Rng + ?Sized>(
        config: SacConfig,
        obs_dim: usize,
        act_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let layer_sizes = |input: usize, output: usize| {
            let mut s = vec![input];
            s.extend(&config.hidden_sizes);
            s.push(output);
            s
        };
        let actor = Mlp::new(&layer_sizes(obs_dim, 2 * act_dim), rng);
        let critic_sizes = layer_sizes(obs_dim + act_dim, 1);
        let critics = [Mlp::new(&critic_sizes, rng), Mlp::new(&critic_sizes, rng)];
        let lr = config.learning_rate;
        Ok(Self {
            actor_opt: Adam::new(actor.params.len(), lr),
            critic_opts: [
                Adam::new(critics[0].params.len(), lr),
                Adam::new(critics[1].params.len(), lr),
            ],
            targets: critics.clone(),
            critics,
            actor,
            log_alpha: T::lit(config.initial_alpha.ln()),
            alpha_opt: Adam::new(1, lr),
            obs_dim,
            act_dim,
            config,
        })
    }

    pub fn alpha(&self) -> T {
        self.log_alpha.exp()
    }

    fn check_obs(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.obs_dim {
            return Err(Error::Input(format!(
                "observation has {} components, expected {}",
                obs.len(),
                self.obs_dim
            )));
        }
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite observation".into()));
        }
        Ok(())
    }

    /// Squashed action for one observation; `tanh(μ)` when `deterministic`.
    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        deterministic: bool,
        rng: &mut R,
    ) -> Result<(Vec<f64>, f64)> {
        let noise = if deterministic {
            vec![T::zero(); self.act_dim]
        } else {
            normal_noise(self.act_dim, rng)
        };
        self.act_with_noise(obs, &noise)
    }

    pub fn act_deterministic(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.act_with_noise(obs, &vec![T::zero(); self.act_dim])
            .map(|(a, _)| a)
    }

    fn act_with_noise(&self, obs: &[f64], noise: &[T]) -> Result<(Vec<f64>, f64)> {
        self.check_obs(obs)?;
        let obs: Vec<T> = obs.iter().map(|&v| T::lit(v)).collect();
        let mut cache = Cache::default();
        let s = sample(&self.actor, &obs, 1, noise, &mut cache);
        let action = s
            .action
            .iter()
            .map(|a| a.to_f64().unwrap_or(f64::NAN))
            .collect();
        Ok((action, s.log_prob[0].to_f64().unwrap_or(f64::NAN)))
    }

    /// Regresses both critics toward the soft TD target. Returns the mean of
    /// the two squared-error losses.
    pub fn critic_update(&mut self, batch: &Batch, next_noise: &[T]) -> T {
        let n = batch.size;
        let obs: Vec<T> = to_real(&batch.obs);
        let next_obs: Vec<T> = to_real(&batch.next_obs);
        let action: Vec<T> = to_real(&batch.action);
        let reward: Vec<T> = to_real(&batch.reward);
        let done: Vec<T> = to_real(&batch.done);

        let mut cache = Cache::default();
        let next = sample(&self.actor, &next_obs, n, next_noise, &mut cache);
        let next_sa = concat_rows(&next_obs, self.obs_dim, &next.action, self.act_dim);
        let q1 = self.targets[0].predict(&next_sa, n);
        let q2 = self.targets[1].predict(&next_sa, n);
        let y = td_targets(
            &reward,
            &done,
            &q1,
            &q2,
            &next.log_prob,
            T::lit(self.config.gamma),
            self.alpha(),
        );

        let sa = concat_rows(&obs, self.obs_dim, &action, self.act_dim);
        let mut total = T::zero();
        for k in 0..2 {
            let mut grad = vec![T::zero(); self.critics[k].params.len()];
            total = total + critic_objective(&self.critics[k], &sa, &y, Some(&mut grad));
            self.critic_opts[k].step(&mut self.critics[k].params, &grad);
        }
        // ½·MSE per critic summed over two critics equals the mean MSE.
        total
    }

    /// One actor step followed by one temperature step. Returns
    /// `(actor loss, alpha loss, mean log π)`.
    pub fn actor_and_alpha_update(&mut self, obs: &[f32], noise: &[T]) -> (T, T, T) {
        let obs: Vec<T> = to_real(obs);
        let alpha = self.alpha();
        let mut grad = vec![T::zero(); self.actor.params.len()];
        let (loss, mean_lp) = actor_objective(
            &self.actor,
            [&self.critics[0], &self.critics[1]],
            &obs,
            noise,
            alpha,
            Some(&mut grad),
        );
        self.actor_opt.step(&mut self.actor.params, &grad);

        // L(log α) = −log α · (log π + target), averaged over the batch.
        let drive = mean_lp + T::lit(self.config.entropy_target);
        let alpha_loss = -self.log_alpha * drive;
        let mut la = [self.log_alpha];
        self.alpha_opt.step(&mut la, &[-drive]);
        self.log_alpha = la[0];
        (loss, alpha_loss, mean_lp)
    }

    pub fn soft_update_targets(&mut self) {
        let tau = T::lit(self.config.tau);
        for k in 0..2 {
            self.targets[k].soft_update_from(&self.critics[k], tau);
        }
    }

    /// Full update on one batch: critics, actor, temperature, targets.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> UpdateStats {
        let next_noise = normal_noise(batch.size * self.act_dim, rng);
        let noise = normal_noise(batch.size * self.act_dim, rng);
        let critic_loss = self.critic_update(batch, &next_noise);
        let (actor_loss, alpha_loss, mean_lp) = self.actor_and_alpha_update(&batch.obs, &noise);
        self.soft_update_targets();
        let f = |v: T| v.to_f64().unwrap_or(f64::NAN);
        UpdateStats {
            critic_loss: f(critic_loss),
            actor_loss: f(actor_loss),
            alpha_loss: f(alpha_loss),
            alpha: f(self.alpha()),
            entropy: -f(mean_lp),
        }
    }

    pub fn is_finite(&self) -> bool {
        let finite = |m: &Mlp<T>| m.params.iter().all(|p| p.is_finite());
        finite(&self.actor)
            && self.critics.iter().all(finite)
            && self.targets.iter().all(finite)
            && self.log_alpha.is_finite()
    }
}
