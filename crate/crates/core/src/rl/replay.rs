use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

/// One batch of transitions in row-major buffers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub obs: Vec<f32>,
    pub action: Vec<f32>,
    pub reward: Vec<f32>,
    pub next_obs: Vec<f32>,
    /// 1 for terminal transitions (no bootstrap), else 0.
    pub done: Vec<f32>,
}

/// Fixed-capacity ring of transitions. Storage grows on demand up to the
/// capacity, then the oldest entries are overwritten.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    obs_dim: usize,
    act_dim: usize,
    capacity: usize,
    cursor: usize,
    len: usize,
    obs: Vec<f32>,
    action: Vec<f32>,
    reward: Vec<f32>,
    next_obs: Vec<f32>,
    done: Vec<f32>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::domain("replay_capacity", 0.0, ">= 1"));
        }
        Ok(Self {
            obs_dim,
            act_dim,
            capacity,
            cursor: 0,
            len: 0,
            obs: Vec::new(),
            action: Vec::new(),
            reward: Vec::new(),
            next_obs: Vec::new(),
            done: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, obs: &[f32], action: &[f32], reward: f32, next_obs: &[f32], done: bool) {
        assert_eq!(obs.len(), self.obs_dim);
        assert_eq!(next_obs.len(), self.obs_dim);
        assert_eq!(action.len(), self.act_dim);
        let done = if done { 1.0 } else { 0.0 };
        if self.len < self.capacity {
            self.obs.extend_from_slice(obs);
            self.action.extend_from_slice(action);
            self.reward.push(reward);
            self.next_obs.extend_from_slice(next_obs);
            self.done.push(done);
            self.len += 1;
        } else {
            let i = self.cursor;
            self.obs[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(obs);
            self.action[i * self.act_dim..(i + 1) * self.act_dim].copy_from_slice(action);
            self.reward[i] = reward;
            self.next_obs[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(next_obs);
            self.done[i] = done;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Uniform batch of distinct stored transitions; `None` while fewer than
    /// `size` are stored.
    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Option<Batch> {
        if size == 0 || self.len < size {
            return None;
        }
        let (od, ad) = (self.obs_dim, self.act_dim);
        let mut b = Batch {
            size,
            obs: Vec::with_capacity(size * od),
            action: Vec::with_capacity(size * ad),
            reward: Vec::with_capacity(size),
            next_obs: Vec::with_capacity(size * od),
            done: Vec::with_capacity(size),
        };
        for i in index::sample(rng, self.len, size) {
            b.obs.extend_from_slice(&self.obs[i * od..(i + 1) * od]);
            b.action
                .extend_from_slice(&self.action[i * ad..(i + 1) * ad]);
            b.reward.push(self.reward[i]);
            b.next_obs
                .extend_from_slice(&self.next_obs[i * od..(i + 1) * od]);
            b.done.push(self.done[i]);
        }
        Some(b)
    }
}
