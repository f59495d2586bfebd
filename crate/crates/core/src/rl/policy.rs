//! Tanh-squashed diagonal Gaussian head on top of an [`Mlp`].

use std::f64::consts::{LN_2, PI};

use super::nn::{Cache, Mlp, Real};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// `log(1 − tanh²u)` without cancellation for large `|u|`.
pub fn log_one_minus_tanh_sq<T: Real>(u: T) -> T {
    let two = T::lit(2.0);
    two * (T::lit(LN_2) - u - softplus(-two * u))
}

pub fn softplus<T: Real>(x: T) -> T {
    // log(1 + e^x) = max(x, 0) + log1p(e^−|x|)
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Per-sample quantities of one reparameterized draw, kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct PolicySample<T> {
    pub batch: usize,
    pub dim: usize,
    /// Squashed actions `tanh(u)`, `batch×dim`.
    pub action: Vec<T>,
    /// Pre-squash values `u = μ + σε`.
    pub pre_tanh: Vec<T>,
    pub std: Vec<T>,
    pub noise: Vec<T>,
    /// Whether the raw log-std sat inside the clamp range (gradient passes).
    pub log_std_active: Vec<bool>,
    pub log_prob: Vec<T>,
}

/// Runs the actor and draws `a = tanh(μ + σ·ε)` for the supplied standard
/// normal `noise` (`batch×dim`). Zero noise gives the deterministic action.
pub fn sample<T: Real>(
    actor: &Mlp<T>,
    obs: &[T],
    batch: usize,
    noise: &[T],
    cache: &mut Cache<T>,
) -> PolicySample<T> {
    let dim = actor.output_dim() / 2;
    assert_eq!(noise.len(), batch * dim, "noise shape");
    actor.forward(obs, batch, cache);
    let out = cache.output();
    let half_log_2pi = T::lit(0.5 * (2.0 * PI).ln());
    let (lo, hi) = (T::lit(LOG_STD_MIN), T::lit(LOG_STD_MAX));
    let mut s = PolicySample {
        batch,
        dim,
        action: Vec::with_capacity(batch * dim),
        pre_tanh: Vec::with_capacity(batch * dim),
        std: Vec::with_capacity(batch * dim),
        noise: noise.to_vec(),
        log_std_active: Vec::with_capacity(batch * dim),
        log_prob: Vec::with_capacity(batch),
    };
    for b in 0..batch {
        let row = &out[b * 2 * dim..(b + 1) * 2 * dim];
        let mut lp = T::zero();
        for i in 0..dim {
            let raw = row[dim + i];
            let log_std = raw.max(lo).min(hi);
            let std = log_std.exp();
            let eps = noise[b * dim + i];
            let u = row[i] + std * eps;
            s.action.push(u.tanh());
            s.pre_tanh.push(u);
            s.std.push(std);
            s.log_std_active.push(raw > lo && raw < hi);
            lp = lp - T::lit(0.5) * eps * eps - log_std - half_log_2pi - log_one_minus_tanh_sq(u);
        }
        s.log_prob.push(lp);
    }
    s
}

/// Gradient of `Σ_b [coef·log π_b + Σ_i g_bi·a_bi]` with respect to the
/// actor's raw outputs, for per-action upstream gradients `grad_action`.
pub fn output_grad<T: Real>(s: &PolicySample<T>, log_prob_coef: T, grad_action: &[T]) -> Vec<T> {
    let dim = s.dim;
    let two = T::lit(2.0);
    let mut g = vec![T::zero(); s.batch * 2 * dim];
    for b in 0..s.batch {
        for i in 0..dim {
            let k = b * dim + i;
            let a = s.action[k];
            // d log π / du = 2·tanh(u) through the squash correction.
            let d_u = log_prob_coef * two * a + grad_action[k] * (T::one() - a * a);
            g[b * 2 * dim + i] = d_u;
            if s.log_std_active[k] {
                g[b * 2 * dim + dim + i] = -log_prob_coef + d_u * s.std[k] * s.noise[k];
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn squash_term_is_stable() {
        for u in [-40.0f64, -3.0, 0.0, 0.7, 25.0] {
            let direct = (1.0 - u.tanh().powi(2)).ln();
            let stable = log_one_minus_tanh_sq(u);
            if direct.is_finite() && u.abs() < 10.0 {
                assert!((direct - stable).abs() < 1e-10);
            }
            assert!(stable.is_finite());
        }
    }

    #[test]
    fn zero_noise_gives_tanh_of_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let actor: Mlp<f64> = Mlp::new(&[4, 8, 6], &mut rng);
        let obs = [0.1, -0.2, 0.3, 0.4];
        let mut cache = Cache::default();
        let s = sample(&actor, &obs, 1, &[0.0; 3], &mut cache);
        let out = actor.predict(&obs, 1);
        for i in 0..3 {
            assert!((s.action[i] - out[i].tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn log_std_clamp_blocks_gradient() {
        let s = PolicySample {
            batch: 1,
            dim: 1,
            action: vec![0.2f64],
            pre_tanh: vec![0.2027],
            std: vec![(LOG_STD_MAX).exp()],
            noise: vec![0.5],
            log_std_active: vec![false],
            log_prob: vec![0.0],
        };
        let g = output_grad(&s, 0.3, &[1.0]);
        assert_eq!(g[1], 0.0);
        assert!(g[0] != 0.0);
    }
}
