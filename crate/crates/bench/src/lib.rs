//! Shared fixtures for the benchmarks.

use bimanual::control::ControllerKind;
use bimanual::env::{DualArmEnv, Policy, ScriptedPolicy};
use bimanual::eval::Profile;
use bimanual::rl::{Agent, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn scaled_env(kind: ControllerKind) -> DualArmEnv {
    DualArmEnv::new(Profile::Scaled.env_config(kind)).expect("scaled profile is valid")
}

/// Scaled-profile trainer whose replay memory holds `episodes` exploration
/// episodes, without any updates yet.
pub fn warm_trainer(kind: ControllerKind, episodes: usize) -> Trainer {
    let env = scaled_env(kind);
    let mut t = Trainer::new(env, Profile::Scaled.sac_config(), Profile::Scaled.train_config(), 0).expect("valid trainer");
    for _ in 0..episodes {
        let ep = t.collect_episode().expect("rollout");
        t.agent.observe_episode(&ep);
        t.buffer.push_episode(ep).expect("episode fits");
    }
    t
}

pub fn fresh_agent(kind: ControllerKind) -> Agent {
    let cfg = Profile::Scaled.env_config(kind);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Agent::new(cfg.obs_dim(), cfg.goal.desired.len(), cfg.action_dim(), Profile::Scaled.sac_config(), &mut rng)
        .expect("valid agent")
}

/// Observation and scripted action after a few steps of the oracle, i.e.
/// a representative mid-approach state.
pub fn mid_approach(kind: ControllerKind) -> (DualArmEnv, Vec<f64>) {
    let mut env = scaled_env(kind);
    let mut obs = env.reset(0, 0.0).expect("reset");
    for _ in 0..3 {
        let a = ScriptedPolicy.act(&env, &obs).expect("oracle");
        obs = env.step(&a).expect("step").0;
    }
    let a = ScriptedPolicy.act(&env, &obs).expect("oracle");
    (env, a)
}
