use super::*;
use crate::control::ControllerKind;
use crate::env::EnvConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn toy(hidden: usize, seed: u64) -> Agent {
    let cfg = SacConfig { hidden, lr: 1e-3, ..SacConfig::default() };
    Agent::new(5, 3, 2, cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn toy_batch(n: usize, reward: f64, done: f64, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut action = random_matrix(n, 2, &mut rng);
    action.data_mut().iter_mut().for_each(|a| *a *= 0.9);
    Batch {
        obs: random_matrix(n, 5, &mut rng),
        next_obs: random_matrix(n, 5, &mut rng),
        goal: random_matrix(n, 3, &mut rng),
        achieved: random_matrix(n, 3, &mut rng),
        next_achieved: random_matrix(n, 3, &mut rng),
        action,
        reward: vec![reward; n],
        done: vec![done; n],
        relabeled: vec![false; n],
        slots: (0..n).collect(),
    }
}

/// Relative error of an analytic gradient against central differences.
fn fd_check(params: &MlpParams, grads: &MlpParams, loss: impl Fn(&MlpParams) -> f64) -> f64 {
    let h = 1e-6;
    let mut p = params.clone();
    let (mut num, mut den) = (0.0, 0.0);
    let analytic: Vec<f64> = grads.buffers().iter().flat_map(|b| b.iter().copied()).collect();
    let mut idx = 0;
    let n_bufs = p.buffers().len();
    for b in 0..n_bufs {
        let len = p.buffers()[b].len();
        for k in 0..len {
            let orig = p.buffers()[b][k];
            p.buffers_mut()[b][k] = orig + h;
            let up = loss(&p);
            p.buffers_mut()[b][k] = orig - h;
            let down = loss(&p);
            p.buffers_mut()[b][k] = orig;
            let fd = (up - down) / (2.0 * h);
            num += (fd - analytic[idx]).powi(2);
            den += fd.powi(2).max(analytic[idx].powi(2));
            idx += 1;
        }
    }
    (num / den).sqrt()
}

#[test]
fn deterministic_actions_repeat() {
    let agent = toy(16, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let obs = [0.1, -0.2, 0.3, 0.0, 1.0];
    let goal = [0.01, 0.0, 0.02];
    let ach = [0.0, 0.01, 0.0];
    let a = agent.select_action(&obs, &ach, &goal, true, &mut rng).unwrap();
    assert_eq!(a, agent.select_action(&obs, &ach, &goal, true, &mut rng).unwrap());
    let s = agent.select_action(&obs, &ach, &goal, false, &mut rng).unwrap();
    assert!(s.iter().all(|v| v.abs() < 1.0));
    assert!(agent.select_action(&obs[..4], &ach, &goal, true, &mut rng).is_err());
}

#[test]
fn variable_impedance_agent_has_twelve_outputs() {
    let env = EnvConfig { controller: ControllerKind::VariableCartesianImpedance, ..EnvConfig::default() };
    assert_eq!(env.action_dim(), 12);
    let agent = Agent::new(env.obs_dim(), 3, env.action_dim(), SacConfig::default(), &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    let a = agent.act_deterministic(&vec![0.0; env.obs_dim()], &[0.0; 3], &[0.0; 3]).unwrap();
    assert_eq!(a.len(), 12);
    assert_eq!(agent.policy.dims(), vec![30, 256, 256, 24]);
    assert_eq!(agent.q1.dims(), vec![42, 256, 256, 256, 1]);
}

#[test]
fn fresh_policy_is_centered() {
    let agent = toy(32, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let obs = [0.5, -0.5, 0.2, 0.9, -1.0];
    let goal = [0.3, -0.1, 0.0];
    let mut mean = [0.0; 2];
    for _ in 0..10_000 {
        let a = agent.act_stochastic(&obs, &goal, &goal, &mut rng).unwrap();
        mean[0] += a[0] / 1e4;
        mean[1] += a[1] / 1e4;
    }
    assert!(mean.iter().all(|m| m.abs() < 0.03), "{mean:?}");
}

#[test]
fn terminal_zero_reward_targets_vanish_and_critics_follow() {
    let mut agent = toy(16, 6);
    let batch = toy_batch(64, 0.0, 1.0, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let nx = agent.input_batch(&batch.next_obs, &batch.next_achieved, &batch.goal).unwrap();
    let noise = noise_matrix(64, 2, &mut rng);
    assert!(agent.critic_targets(&nx, &batch.reward, &batch.done, &noise).unwrap().iter().all(|y| *y == 0.0));
    let first = agent.sac_update(&batch, &mut rng).unwrap().unwrap();
    let mut last = first;
    for _ in 0..300 {
        last = agent.sac_update(&batch, &mut rng).unwrap().unwrap();
    }
    assert!(last.q1 < 0.05 * first.q1 && last.q2 < 0.05 * first.q2, "{first:?} -> {last:?}");
    assert!(last.mean_q.abs() < 0.05);
}

#[test]
fn target_drift_is_polyak_bounded() {
    let mut agent = toy(16, 9);
    let batch = toy_batch(32, 0.0, 0.0, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let before = agent.q1_target.clone();
        agent.sac_update(&batch, &mut rng).unwrap().unwrap();
        let moved = agent.q1_target.l1_distance(&before);
        let gap = agent.q1.l1_distance(&before);
        assert!(moved <= 0.005 * gap * (1.0 + 1e-9), "{moved} > 0.005 * {gap}");
    }
}

#[test]
fn bellman_targets_read_target_critics_only() {
    let agent = toy(16, 12);
    let batch = toy_batch(16, 0.0, 0.0, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let nx = agent.input_batch(&batch.next_obs, &batch.next_achieved, &batch.goal).unwrap();
    let noise = noise_matrix(16, 2, &mut rng);
    let base = agent.critic_targets(&nx, &batch.reward, &batch.done, &noise).unwrap();

    let mut online = agent.clone();
    online.q1.scale_output_layer(7.0);
    online.q2.scale_output_layer(-3.0);
    assert_eq!(online.critic_targets(&nx, &batch.reward, &batch.done, &noise).unwrap(), base);

    let mut target = agent.clone();
    target.q1_target.scale_output_layer(7.0);
    target.q2_target.scale_output_layer(7.0);
    assert_ne!(target.critic_targets(&nx, &batch.reward, &batch.done, &noise).unwrap(), base);
}

#[test]
fn policy_gradient_matches_finite_differences() {
    let agent = toy(8, 15);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = random_matrix(6, 11, &mut rng);
    let noise = noise_matrix(6, 2, &mut rng);
    let pl = agent.policy_loss(&x, &noise).unwrap();
    let rel = fd_check(&agent.policy, &pl.grads, |p| {
        let mut a = agent.clone();
        a.policy = p.clone();
        a.policy_loss(&x, &noise).unwrap().loss
    });
    assert!(rel < 1e-3, "relative error {rel}");
}

#[test]
fn critic_gradient_matches_finite_differences() {
    let agent = toy(8, 17);
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let xa = random_matrix(6, 13, &mut rng);
    let y: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..2.0)).collect();
    let (_, g, _) = Agent::q_loss(&agent.q1, &xa, &y).unwrap();
    let rel = fd_check(&agent.q1, &g, |p| Agent::q_loss(p, &xa, &y).unwrap().0);
    assert!(rel < 1e-4, "relative error {rel}");
}

#[test]
fn numeric_trouble_skips_the_update() {
    let mut agent = toy(8, 19);
    let mut batch = toy_batch(8, 0.0, 0.0, 20);
    batch.reward[3] = f64::NAN;
    let before = agent.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    assert!(agent.sac_update(&batch, &mut rng).unwrap().is_none());
    assert_eq!(agent.numeric_warnings, 1);
    assert_eq!(agent.q1, before.q1);
    assert_eq!(agent.policy, before.policy);

    // Value estimates far beyond 1/(1-γ) take the same path.
    let mut agent = toy(8, 19);
    agent.q1.layers.last_mut().unwrap().bias[0] = 1e4;
    agent.q2.layers.last_mut().unwrap().bias[0] = 1e4;
    assert!(agent.sac_update(&toy_batch(8, 0.0, 0.0, 20), &mut rng).unwrap().is_none());
    assert_eq!(agent.numeric_warnings, 1);
}

#[test]
fn updates_are_reproducible() {
    let run = || {
        let mut agent = toy(16, 22);
        let batch = toy_batch(32, 1.0, 1.0, 23);
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        (0..10).map(|_| agent.sac_update(&batch, &mut rng).unwrap().unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn temperature_tracks_entropy_target() {
    let mut agent = toy(16, 25);
    let batch = toy_batch(32, 0.0, 0.0, 26);
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let r = agent.sac_update(&batch, &mut rng).unwrap().unwrap();
    // Entropy above target → α shrinks, and vice versa.
    let init = agent.cfg.init_alpha;
    if r.entropy > agent.target_entropy() {
        assert!(r.alpha < init);
    } else {
        assert!(r.alpha > init);
    }
}
