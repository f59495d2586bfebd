//! Soft actor-critic agent, replay, training loop, checkpoints and evaluation.

pub mod adam;
pub mod checkpoint;
pub mod eval;
pub mod nn;
pub mod policy;
pub mod replay;
pub mod sac;
pub mod train;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use eval::run_rl_episode;
pub use nn::{Cache, Mlp, Real};
pub use replay::{Batch, ReplayBuffer};
pub use sac::{SacAgent, SacConfig, UpdateStats};
pub use train::{write_train_log, TrainLogRow, Trainer};
