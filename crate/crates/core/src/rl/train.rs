//! Epoch loop: one exploration episode, then a block of SAC updates, with
//! periodic greedy evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::buffer::{ReplayBuffer, Transition};
use super::checkpoint::Checkpoint;
use super::sac::{Agent, LossReport, SacConfig};
use crate::env::{compute_reward, run_episode, DualArmEnv, Observation, Policy};
use crate::error::{contract, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Stored transitions required before the first update.
    pub warmup: usize,
    pub updates_per_epoch: usize,
    pub her_k: usize,
    pub eval_every: usize,
    pub eval_cycles: usize,
    pub init_offset_fraction: f64,
    /// First environment seed of the evaluation episodes.
    pub eval_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            buffer_capacity: 800_000,
            warmup: 10_000,
            updates_per_epoch: 1000,
            her_k: 6,
            eval_every: 5,
            eval_cycles: 10,
            init_offset_fraction: 0.1,
            eval_seed: 1_000_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.eval_every == 0 || self.eval_cycles == 0 {
            return Err(contract("batch size, buffer capacity and evaluation cadence must be positive"));
        }
        if self.warmup > self.buffer_capacity {
            return Err(contract("warmup cannot exceed the replay capacity"));
        }
        if !(self.init_offset_fraction >= 0.0) {
            return Err(contract("init offset fraction must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub episode_steps: usize,
    pub episode_success: bool,
    pub buffer_len: usize,
    pub losses: Vec<LossReport>,
    pub skipped_updates: usize,
    pub eval_success: Option<f64>,
}

/// Greedy (mean-action) rollout policy of an agent.
#[derive(Clone, Copy)]
pub struct GreedyPolicy<'a>(pub &'a Agent);

impl Policy for GreedyPolicy<'_> {
    fn act(&mut self, _env: &DualArmEnv, obs: &Observation) -> Result<Vec<f64>> {
        self.0.act_deterministic(&obs.state, &obs.achieved_goal, &obs.desired_goal)
    }
}

/// Success fraction over `cycles` episodes seeded `seed, seed + 1, ...`.
pub fn evaluate<P: Policy + ?Sized>(
    env: &mut DualArmEnv,
    policy: &mut P,
    cycles: usize,
    seed: u64,
    init_offset_fraction: f64,
) -> Result<f64> {
    if cycles == 0 {
        return Err(contract("evaluation needs at least one cycle"));
    }
    let mut wins = 0;
    for c in 0..cycles {
        if run_episode(env, policy, seed + c as u64, init_offset_fraction)?.success {
            wins += 1;
        }
    }
    Ok(wins as f64 / cycles as f64)
}

pub struct Trainer {
    pub env: DualArmEnv,
    pub agent: Agent,
    pub buffer: ReplayBuffer,
    pub cfg: TrainConfig,
    rng: ChaCha8Rng,
    epoch: usize,
    episodes: u64,
}

impl Trainer {
    pub fn new(env: DualArmEnv, sac: SacConfig, cfg: TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let env_cfg = env.config();
        let agent = Agent::new(env_cfg.obs_dim(), env_cfg.goal.desired.len(), env_cfg.action_dim(), sac, &mut rng)?;
        Ok(Self { buffer: ReplayBuffer::new(cfg.buffer_capacity)?, env, agent, cfg, rng, epoch: 0, episodes: 0 })
    }

    /// Resumes from a checkpoint with an empty replay memory.
    pub fn from_checkpoint(env: DualArmEnv, ckpt: Checkpoint, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let c = env.config();
        if ckpt.agent.obs_dim != c.obs_dim() || ckpt.agent.action_dim != c.action_dim() {
            return Err(contract("checkpoint agent does not fit this environment"));
        }
        Ok(Self {
            buffer: ReplayBuffer::new(cfg.buffer_capacity)?,
            env,
            agent: ckpt.agent,
            cfg,
            rng: ckpt.rng,
            epoch: ckpt.epoch,
            episodes: ckpt.episodes,
        })
    }

    pub fn checkpoint(&self, structure_hash: &str) -> Checkpoint {
        Checkpoint::new(structure_hash, self.epoch, self.episodes, self.agent.clone(), self.rng.clone())
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Rolls one stochastic episode and returns its transitions.
    pub fn collect_episode(&mut self) -> Result<Vec<Transition>> {
        let seed = self.rng.random();
        let mut obs = self.env.reset(seed, self.cfg.init_offset_fraction)?;
        let mut out = Vec::new();
        loop {
            let action = self.agent.act_stochastic(&obs.state, &obs.achieved_goal, &obs.desired_goal, &mut self.rng)?;
            let (next, reward, done, info) = self.env.step(&action)?;
            out.push(Transition {
                obs: obs.state,
                action,
                reward,
                next_obs: next.state.clone(),
                achieved_goal: obs.achieved_goal,
                next_achieved_goal: next.achieved_goal.clone(),
                desired_goal: obs.desired_goal,
                done: info.success,
                episode: self.episodes,
                step: info.step,
            });
            obs = next;
            if done {
                break;
            }
        }
        self.episodes += 1;
        Ok(out)
    }

    pub fn train_epoch(&mut self) -> Result<EpochReport> {
        self.epoch += 1;
        let episode = self.collect_episode()?;
        let steps = episode.len();
        let success = episode.last().is_some_and(|t| t.reward == 1.0);
        self.agent.observe_episode(&episode);
        self.buffer.push_episode(episode)?;

        let mut losses = Vec::new();
        let mut skipped = 0;
        if self.buffer.len() >= self.cfg.warmup {
            let delta = self.env.config().goal.delta;
            let reward_fn = |a: &[f64], d: &[f64]| compute_reward(a, d, delta);
            for _ in 0..self.cfg.updates_per_epoch {
                let batch = self.buffer.her_sample(self.cfg.batch_size, self.cfg.her_k, reward_fn, &mut self.rng)?;
                match self.agent.sac_update(&batch, &mut self.rng)? {
                    Some(r) => losses.push(r),
                    None => skipped += 1,
                }
            }
        }
        let eval_success = if self.epoch % self.cfg.eval_every == 0 {
            Some(self.evaluate()?)
        } else {
            None
        };
        Ok(EpochReport {
            epoch: self.epoch,
            episode_steps: steps,
            episode_success: success,
            buffer_len: self.buffer.len(),
            losses,
            skipped_updates: skipped,
            eval_success,
        })
    }

    /// Greedy success rate on the fixed evaluation seeds.
    pub fn evaluate(&mut self) -> Result<f64> {
        let (cycles, seed, f) = (self.cfg.eval_cycles, self.cfg.eval_seed, self.cfg.init_offset_fraction);
        evaluate(&mut self.env, &mut GreedyPolicy(&self.agent), cycles, seed, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, ScriptedPolicy};

    fn small(updates: usize, warmup: usize) -> Trainer {
        let env_cfg = EnvConfig { max_steps: 20, ..EnvConfig::default() };
        let env = DualArmEnv::new(env_cfg).unwrap();
        let sac = SacConfig { hidden: 16, ..SacConfig::default() };
        let cfg = TrainConfig { batch_size: 16, warmup, updates_per_epoch: updates, eval_cycles: 2, ..TrainConfig::default() };
        Trainer::new(env, sac, cfg, 3).unwrap()
    }

    #[test]
    fn no_updates_below_warmup() {
        let mut t = small(7, 50);
        let r = t.train_epoch().unwrap();
        assert_eq!(r.buffer_len, 20);
        assert!(r.losses.is_empty() && r.eval_success.is_none());
        t.train_epoch().unwrap();
        let r = t.train_epoch().unwrap();
        assert_eq!(r.losses.len() + r.skipped_updates, 7);
    }

    #[test]
    fn evaluation_every_fifth_epoch() {
        let mut t = small(1, 10);
        let evals: Vec<usize> =
            (0..15).map(|_| t.train_epoch().unwrap()).filter(|r| r.eval_success.is_some()).map(|r| r.epoch).collect();
        assert_eq!(evals, vec![5, 10, 15]);
    }

    #[test]
    fn transitions_carry_goals_and_steps() {
        let mut t = small(1, 1000);
        let ep = t.collect_episode().unwrap();
        assert_eq!(ep.len(), 20);
        for (i, tr) in ep.iter().enumerate() {
            assert_eq!(tr.step, i);
            assert_eq!(tr.episode, 0);
            assert!(tr.reward == 0.0 || tr.reward == 1.0);
            if i > 0 {
                assert_eq!(tr.achieved_goal, ep[i - 1].next_achieved_goal);
                assert_eq!(tr.obs, ep[i - 1].next_obs);
            }
        }
    }

    #[test]
    fn evaluation_scores_the_oracle_perfectly() {
        let mut env = DualArmEnv::new(EnvConfig::default()).unwrap();
        assert_eq!(evaluate(&mut env, &mut ScriptedPolicy, 3, 0, 0.1).unwrap(), 1.0);
        assert!(evaluate(&mut env, &mut ScriptedPolicy, 0, 0, 0.1).is_err());
    }

    #[test]
    fn same_seed_same_training() {
        let run = || {
            let mut t = small(3, 20);
            (0..3).flat_map(|_| t.train_epoch().unwrap().losses).collect::<Vec<_>>()
        };
        let a = run();
        assert!(!a.is_empty());
        assert_eq!(a, run());
    }
}
