//! Episode-aware replay memory with hindsight goal relabeling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::math::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub achieved_goal: Vec<f64>,
    pub next_achieved_goal: Vec<f64>,
    pub desired_goal: Vec<f64>,
    pub done: bool,
    pub episode: u64,
    pub step: usize,
}

/// Training batch, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Matrix,
    pub next_obs: Matrix,
    pub goal: Matrix,
    pub action: Matrix,
    pub reward: Vec<f64>,
    /// 1 where the transition ends the episode by success.
    pub done: Vec<f64>,
    /// Which rows had their goal replaced.
    pub relabeled: Vec<bool>,
    pub achieved: Matrix,
    /// Achieved goal the reward was computed from.
    pub next_achieved: Matrix,
    /// Ring slots the rows came from.
    pub slots: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }
}

/// Fixed-capacity ring of transitions. Episodes are stored whole and
/// contiguously, so every transition still in memory has all later steps of
/// its episode in memory too (eviction is oldest first).
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    slots: Vec<Transition>,
    /// Global insert index of the last transition of each slot's episode.
    episode_end: Vec<u64>,
    inserted: u64,
    episodes: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(contract("replay capacity must be positive"));
        }
        Ok(Self { capacity, slots: Vec::new(), episode_end: Vec::new(), inserted: 0, episodes: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn episodes_stored(&self) -> u64 {
        self.episodes
    }

    /// Appends a complete episode. Episodes longer than the capacity are
    /// rejected since their tail would evict their head.
    pub fn push_episode(&mut self, episode: Vec<Transition>) -> Result<()> {
        if episode.is_empty() {
            return Ok(());
        }
        if episode.len() > self.capacity {
            return Err(contract("episode longer than replay capacity"));
        }
        let end = self.inserted + episode.len() as u64 - 1;
        for t in episode {
            let slot = (self.inserted % self.capacity as u64) as usize;
            if slot == self.slots.len() {
                self.slots.push(t);
                self.episode_end.push(end);
            } else {
                self.slots[slot] = t;
                self.episode_end[slot] = end;
            }
            self.inserted += 1;
        }
        self.episodes += 1;
        Ok(())
    }

    pub fn get(&self, slot: usize) -> &Transition {
        &self.slots[slot]
    }

    fn slot_of(&self, global: u64) -> usize {
        (global % self.capacity as u64) as usize
    }

    /// Global insert index of the transition living in `slot`.
    fn global_of(&self, slot: usize) -> u64 {
        let oldest = self.inserted - self.slots.len() as u64;
        let oldest_slot = self.slot_of(oldest);
        let offset = (slot + self.capacity - oldest_slot) % self.capacity;
        oldest + offset as u64
    }

    /// Slot of a uniformly chosen transition at or after `slot` within the
    /// same episode.
    pub fn future_slot<R: Rng + ?Sized>(&self, slot: usize, rng: &mut R) -> usize {
        let g = self.global_of(slot);
        let end = self.episode_end[slot];
        self.slot_of(rng.random_range(g..=end))
    }

    /// Uniform batch where each row's goal is, with probability `k/(k+1)`,
    /// replaced by an achieved goal from later in the same episode and its
    /// reward recomputed with `reward_fn(next_achieved, goal)`.
    pub fn her_sample<R, F>(&self, batch_size: usize, k: usize, reward_fn: F, rng: &mut R) -> Result<Batch>
    where
        R: Rng + ?Sized,
        F: Fn(&[f64], &[f64]) -> f64,
    {
        if self.slots.is_empty() {
            return Err(contract("cannot sample from an empty replay buffer"));
        }
        if batch_size == 0 {
            return Err(contract("batch size must be positive"));
        }
        let t0 = &self.slots[0];
        let (od, ad, gd) = (t0.obs.len(), t0.action.len(), t0.desired_goal.len());
        let mut obs = Vec::with_capacity(batch_size * od);
        let mut next_obs = Vec::with_capacity(batch_size * od);
        let mut goal = Vec::with_capacity(batch_size * gd);
        let mut action = Vec::with_capacity(batch_size * ad);
        let mut achieved = Vec::with_capacity(batch_size * gd);
        let mut next_achieved = Vec::with_capacity(batch_size * gd);
        let mut reward = Vec::with_capacity(batch_size);
        let mut done = Vec::with_capacity(batch_size);
        let mut relabeled = Vec::with_capacity(batch_size);
        let mut slots = Vec::with_capacity(batch_size);
        let p_relabel = k as f64 / (k as f64 + 1.0);
        for _ in 0..batch_size {
            let slot = rng.random_range(0..self.slots.len());
            let t = &self.slots[slot];
            let relabel = k > 0 && rng.random::<f64>() < p_relabel;
            let g: &[f64] = if relabel {
                &self.slots[self.future_slot(slot, rng)].next_achieved_goal
            } else {
                &t.desired_goal
            };
            let r = if relabel { reward_fn(&t.next_achieved_goal, g) } else { t.reward };
            obs.extend(&t.obs);
            next_obs.extend(&t.next_obs);
            goal.extend(g);
            action.extend(&t.action);
            achieved.extend(&t.achieved_goal);
            next_achieved.extend(&t.next_achieved_goal);
            reward.push(r);
            // The episode ends exactly when the goal is reached, so the
            // terminal flag follows the (possibly relabeled) reward.
            done.push(r);
            relabeled.push(relabel);
            slots.push(slot);
        }
        Ok(Batch {
            obs: Matrix::from_vec(batch_size, od, obs)?,
            next_obs: Matrix::from_vec(batch_size, od, next_obs)?,
            goal: Matrix::from_vec(batch_size, gd, goal)?,
            action: Matrix::from_vec(batch_size, ad, action)?,
            achieved: Matrix::from_vec(batch_size, gd, achieved)?,
            next_achieved: Matrix::from_vec(batch_size, gd, next_achieved)?,
            reward,
            done,
            relabeled,
            slots,
        })
    }
}
