//! Soft actor-critic with twin critics, target critics and automatic
//! entropy temperature, on top of the hand-differentiated networks.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::buffer::{Batch, Transition};
use super::normalizer::Normalizer;
use crate::error::{contract, Error, Result};
use crate::math::squash::{LOG_STD_MAX, LOG_STD_MIN};
use crate::math::{tanh_gaussian_sample, AdamState, Matrix, MlpParams, SquashedSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacConfig {
    pub hidden: usize,
    /// Linear layers in the policy network.
    pub policy_layers: usize,
    /// Linear layers in each critic.
    pub q_layers: usize,
    pub lr: f64,
    pub gamma: f64,
    /// Polyak factor for the target critics.
    pub tau: f64,
    pub init_alpha: f64,
    pub auto_alpha: bool,
    /// Defaults to minus the action dimension.
    pub target_entropy: Option<f64>,
    /// Scale applied to the freshly initialized policy output layer.
    pub policy_output_scale: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            policy_layers: 3,
            q_layers: 4,
            lr: 1e-5,
            gamma: 0.98,
            tau: 0.005,
            init_alpha: 0.01,
            auto_alpha: true,
            target_entropy: None,
            policy_output_scale: 0.01,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.policy_layers < 2 || self.q_layers < 2 {
            return Err(contract("networks need a hidden layer of positive width"));
        }
        if !(self.lr > 0.0) || !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(contract("lr must be positive and gamma in [0, 1)"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) || !(self.init_alpha > 0.0) {
            return Err(contract("tau must be in (0, 1] and alpha positive"));
        }
        Ok(())
    }

    pub fn policy_dims(&self, input: usize, action: usize) -> Vec<usize> {
        let mut d = vec![input];
        d.extend(std::iter::repeat_n(self.hidden, self.policy_layers - 1));
        d.push(2 * action);
        d
    }

    pub fn q_dims(&self, input: usize, action: usize) -> Vec<usize> {
        let mut d = vec![input + action];
        d.extend(std::iter::repeat_n(self.hidden, self.q_layers - 1));
        d.push(1);
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub q1: f64,
    pub q2: f64,
    pub policy: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    pub mean_q: f64,
    pub entropy: f64,
}

/// Policy-side quantities with their parameter gradient.
#[derive(Debug, Clone)]
pub struct PolicyLoss {
    pub loss: f64,
    pub grads: MlpParams,
    pub mean_log_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub cfg: SacConfig,
    pub obs_dim: usize,
    pub goal_dim: usize,
    pub action_dim: usize,
    pub policy: MlpParams,
    pub q1: MlpParams,
    pub q2: MlpParams,
    pub q1_target: MlpParams,
    pub q2_target: MlpParams,
    pub log_alpha: f64,
    adam_policy: AdamState,
    adam_q1: AdamState,
    adam_q2: AdamState,
    adam_alpha: AdamState,
    pub obs_norm: Normalizer,
    pub goal_norm: Normalizer,
    pub updates: u64,
    pub numeric_warnings: u64,
}

fn noise_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

fn hcat(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.rows(), b.rows(), "row mismatch");
    let mut data = Vec::with_capacity(a.rows() * (a.cols() + b.cols()));
    for r in 0..a.rows() {
        data.extend(a.row(r));
        data.extend(b.row(r));
    }
    Matrix::from_vec(a.rows(), a.cols() + b.cols(), data).expect("sized by construction")
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        goal_dim: usize,
        action_dim: usize,
        cfg: SacConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        if obs_dim == 0 || goal_dim == 0 || action_dim == 0 {
            return Err(contract("agent dimensions must be positive"));
        }
        let input = obs_dim + 2 * goal_dim;
        let mut policy = MlpParams::init_uniform(&cfg.policy_dims(input, action_dim), rng);
        policy.scale_output_layer(cfg.policy_output_scale);
        let q1 = MlpParams::init_uniform(&cfg.q_dims(input, action_dim), rng);
        let q2 = MlpParams::init_uniform(&cfg.q_dims(input, action_dim), rng);
        Ok(Self {
            log_alpha: cfg.init_alpha.ln(),
            adam_policy: AdamState::for_mlp(&policy),
            adam_q1: AdamState::for_mlp(&q1),
            adam_q2: AdamState::for_mlp(&q2),
            adam_alpha: AdamState::new(&[1]),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            policy,
            q1,
            q2,
            obs_norm: Normalizer::new(obs_dim),
            goal_norm: Normalizer::new(goal_dim),
            cfg,
            obs_dim,
            goal_dim,
            action_dim,
            updates: 0,
            numeric_warnings: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn target_entropy(&self) -> f64 {
        self.cfg.target_entropy.unwrap_or(-(self.action_dim as f64))
    }

    /// Upper bound on any Bellman target for rewards in {0, 1}.
    pub fn value_bound(&self) -> f64 {
        1.0 / (1.0 - self.cfg.gamma)
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim + 2 * self.goal_dim
    }

    /// Normalized `obs ⊕ achieved ⊕ goal` network input.
    pub fn input(&self, obs: &[f64], achieved: &[f64], goal: &[f64]) -> Result<Vec<f64>> {
        if obs.len() != self.obs_dim || achieved.len() != self.goal_dim || goal.len() != self.goal_dim {
            return Err(contract(format!(
                "agent expects observation {} and goals {}, got {}, {} and {}",
                self.obs_dim,
                self.goal_dim,
                obs.len(),
                achieved.len(),
                goal.len()
            )));
        }
        let mut x = self.obs_norm.normalize(obs);
        self.goal_norm.normalize_into(achieved, &mut x);
        self.goal_norm.normalize_into(goal, &mut x);
        Ok(x)
    }

    pub fn input_batch(&self, obs: &Matrix, achieved: &Matrix, goal: &Matrix) -> Result<Matrix> {
        let mut data = Vec::with_capacity(obs.rows() * self.input_dim());
        for r in 0..obs.rows() {
            data.extend(self.input(obs.row(r), achieved.row(r), goal.row(r))?);
        }
        Matrix::from_vec(obs.rows(), self.input_dim(), data)
    }

    fn split_head(&self, out: &Matrix, r: usize) -> (Vec<f64>, Vec<f64>) {
        let row = out.row(r);
        (row[..self.action_dim].to_vec(), row[self.action_dim..].to_vec())
    }

    /// `tanh(mean)` of the policy at a raw observation and goal pair.
    pub fn act_deterministic(&self, obs: &[f64], achieved: &[f64], goal: &[f64]) -> Result<Vec<f64>> {
        let (out, _) = self.policy.forward(&self.input(obs, achieved, goal)?)?;
        Ok(out[..self.action_dim].iter().map(|m| m.tanh()).collect())
    }

    pub fn act_stochastic<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        achieved: &[f64],
        goal: &[f64],
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let (out, _) = self.policy.forward(&self.input(obs, achieved, goal)?)?;
        let noise: Vec<f64> = (0..self.action_dim).map(|_| rng.sample(StandardNormal)).collect();
        let s = tanh_gaussian_sample(&out[..self.action_dim], &out[self.action_dim..], &noise)?;
        Ok(s.action)
    }

    pub fn select_action<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        achieved: &[f64],
        goal: &[f64],
        deterministic: bool,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if deterministic {
            self.act_deterministic(obs, achieved, goal)
        } else {
            self.act_stochastic(obs, achieved, goal, rng)
        }
    }

    /// Reparameterized actions for every row of `x` with the given noise.
    fn sample_batch(&self, x: &Matrix, noise: &Matrix) -> Result<(Vec<SquashedSample>, Matrix, crate::math::MlpCache, Matrix)> {
        let (out, cache) = self.policy.forward_batch(x)?;
        let mut samples = Vec::with_capacity(x.rows());
        let mut actions = Vec::with_capacity(x.rows() * self.action_dim);
        for r in 0..x.rows() {
            let (mean, ls) = self.split_head(&out, r);
            let s = tanh_gaussian_sample(&mean, &ls, noise.row(r))?;
            actions.extend(&s.action);
            samples.push(s);
        }
        let actions = Matrix::from_vec(x.rows(), self.action_dim, actions)?;
        Ok((samples, actions, cache, out))
    }

    /// Bellman targets `r + γ(1 − d)(min(Q1', Q2')(s', a') − α log π(a'|s'))`
    /// with `a'` drawn from the current policy using `noise`.
    pub fn critic_targets(&self, next_x: &Matrix, reward: &[f64], done: &[f64], noise: &Matrix) -> Result<Vec<f64>> {
        let (samples, actions, _, _) = self.sample_batch(next_x, noise)?;
        let xa = hcat(next_x, &actions);
        let t1 = self.q1_target.predict(&xa)?;
        let t2 = self.q2_target.predict(&xa)?;
        let alpha = self.alpha();
        Ok((0..next_x.rows())
            .map(|i| {
                let soft = t1.data()[i].min(t2.data()[i]) - alpha * samples[i].log_prob;
                reward[i] + self.cfg.gamma * (1.0 - done[i]) * soft
            })
            .collect())
    }

    /// Mean squared error of one critic against fixed targets.
    pub fn q_loss(q: &MlpParams, xa: &Matrix, y: &[f64]) -> Result<(f64, MlpParams, f64)> {
        let (pred, cache) = q.forward_batch(xa)?;
        let n = y.len() as f64;
        let mut grad = Matrix::zeros(y.len(), 1);
        let mut loss = 0.0;
        for i in 0..y.len() {
            let e = pred.data()[i] - y[i];
            loss += e * e / n;
            grad.data_mut()[i] = 2.0 * e / n;
        }
        let mean_q = pred.data().iter().sum::<f64>() / n;
        let (g, _) = q.backward(&cache, &grad)?;
        Ok((loss, g, mean_q))
    }

    /// `mean(α log π(ã|s) − min(Q1, Q2)(s, ã))` and its policy gradient,
    /// with `ã` reparameterized through `noise`.
    pub fn policy_loss(&self, x: &Matrix, noise: &Matrix) -> Result<PolicyLoss> {
        let b = x.rows();
        let n = b as f64;
        let alpha = self.alpha();
        let (samples, actions, cache, out) = self.sample_batch(x, noise)?;
        let xa = hcat(x, &actions);
        let (v1, c1) = self.q1.forward_batch(&xa)?;
        let (v2, c2) = self.q2.forward_batch(&xa)?;
        let mut sel1 = Matrix::zeros(b, 1);
        let mut sel2 = Matrix::zeros(b, 1);
        let mut loss = 0.0;
        let mut logp = 0.0;
        for i in 0..b {
            let (a, c) = (v1.data()[i], v2.data()[i]);
            if a <= c {
                sel1.data_mut()[i] = -1.0 / n;
            } else {
                sel2.data_mut()[i] = -1.0 / n;
            }
            loss += (alpha * samples[i].log_prob - a.min(c)) / n;
            logp += samples[i].log_prob / n;
        }
        let g1 = self.q1.backward_input(&c1, &sel1)?;
        let g2 = self.q2.backward_input(&c2, &sel2)?;
        let in_dim = x.cols();
        let mut head_grad = Matrix::zeros(b, 2 * self.action_dim);
        for i in 0..b {
            let ga: Vec<f64> = (0..self.action_dim).map(|j| g1[(i, in_dim + j)] + g2[(i, in_dim + j)]).collect();
            let (gm, gls) = samples[i].backward(&ga, alpha / n);
            let row = head_grad.row_mut(i);
            for j in 0..self.action_dim {
                row[j] = gm[j];
                // The clamp stops gradients outside the admissible range.
                let raw = out[(i, self.action_dim + j)];
                row[self.action_dim + j] = if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) { gls[j] } else { 0.0 };
            }
        }
        let (grads, _) = self.policy.backward(&cache, &head_grad)?;
        Ok(PolicyLoss { loss, grads, mean_log_prob: logp })
    }

    /// One SAC step on `batch`. All gradients are formed from the current
    /// parameters before anything is written, so a skipped update leaves the
    /// agent untouched. Returns `None` when the step was skipped for numeric
    /// reasons.
    pub fn sac_update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<Option<LossReport>> {
        if batch.is_empty() {
            return Err(contract("empty batch"));
        }
        if batch.action.cols() != self.action_dim {
            return Err(contract("batch action width does not match agent"));
        }
        let b = batch.len();
        let x = self.input_batch(&batch.obs, &batch.achieved, &batch.goal)?;
        let next_x = self.input_batch(&batch.next_obs, &batch.next_achieved, &batch.goal)?;
        let next_noise = noise_matrix(b, self.action_dim, rng);
        let pi_noise = noise_matrix(b, self.action_dim, rng);

        let y = self.critic_targets(&next_x, &batch.reward, &batch.done, &next_noise)?;
        let xa = hcat(&x, &batch.action);
        let (l1, g1, m1) = Self::q_loss(&self.q1, &xa, &y)?;
        let (l2, g2, m2) = Self::q_loss(&self.q2, &xa, &y)?;
        let pl = self.policy_loss(&x, &pi_noise)?;
        let alpha_grad = -(pl.mean_log_prob + self.target_entropy());
        let alpha_loss = self.log_alpha * alpha_grad;
        let mean_q = 0.5 * (m1 + m2);

        let finite = [l1, l2, pl.loss, alpha_loss, mean_q].iter().all(|v| v.is_finite())
            && g1.is_finite()
            && g2.is_finite()
            && pl.grads.is_finite();
        if !finite || mean_q.abs() > 10.0 * self.value_bound() {
            self.numeric_warnings += 1;
            log::warn!("skipping SAC update {}: losses ({l1}, {l2}, {}), mean Q {mean_q}", self.updates, pl.loss);
            return Ok(None);
        }

        let lr = self.cfg.lr;
        self.adam_q1.step_mlp(&mut self.q1, &g1, lr)?;
        self.adam_q2.step_mlp(&mut self.q2, &g2, lr)?;
        self.adam_policy.step_mlp(&mut self.policy, &pl.grads, lr)?;
        if self.cfg.auto_alpha {
            let mut la = [self.log_alpha];
            self.adam_alpha.step(&mut [&mut la[..]], &[&[alpha_grad][..]], lr)?;
            self.log_alpha = la[0];
        }
        self.q1_target.polyak_from(&self.q1, self.cfg.tau);
        self.q2_target.polyak_from(&self.q2, self.cfg.tau);
        self.updates += 1;
        Ok(Some(LossReport {
            q1: l1,
            q2: l2,
            policy: pl.loss,
            alpha_loss,
            alpha: self.alpha(),
            mean_q,
            entropy: -pl.mean_log_prob,
        }))
    }

    /// Folds an episode's observations and goals into the input statistics.
    pub fn observe_episode(&mut self, episode: &[Transition]) {
        for t in episode {
            self.obs_norm.update(&t.obs);
            self.goal_norm.update(&t.achieved_goal);
        }
        if let Some(last) = episode.last() {
            self.obs_norm.update(&last.next_obs);
            self.goal_norm.update(&last.next_achieved_goal);
            self.goal_norm.update(&last.desired_goal);
        }
    }

    /// Human-readable layer widths, part of the checkpoint structure hash.
    pub fn structure(&self) -> String {
        format!("policy {:?} q {:?}", self.policy.dims(), self.q1.dims())
    }

    pub fn is_finite(&self) -> bool {
        [&self.policy, &self.q1, &self.q2, &self.q1_target, &self.q2_target].iter().all(|n| n.is_finite())
            && self.log_alpha.is_finite()
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::Numeric("agent parameters are not finite".into()))
        }
    }
}

#[cfg(test)]
mod tests;
