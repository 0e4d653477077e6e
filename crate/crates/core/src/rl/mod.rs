//! Goal-conditioned soft actor-critic with hindsight relabeling.

mod buffer;
mod checkpoint;
mod normalizer;
mod sac;
mod train;

pub use buffer::{Batch, ReplayBuffer, Transition};
pub use checkpoint::{structure_hash, Checkpoint, CHECKPOINT_VERSION};
pub use normalizer::Normalizer;
pub use sac::{Agent, LossReport, PolicyLoss, SacConfig};
pub use train::{evaluate, EpochReport, GreedyPolicy, TrainConfig, Trainer};
