use std::hint::black_box;

use bimanual::control::ControllerKind;
use bimanual::env::compute_reward;
use bimanual::math::Matrix;
use bimanual_bench::{fresh_agent, warm_trainer};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn networks(c: &mut Criterion) {
    let agent = fresh_agent(ControllerKind::JointPosition);
    let x = Matrix::from_vec(128, agent.policy.input_dim(), vec![0.1; 128 * agent.policy.input_dim()]).unwrap();
    c.bench_function("policy_forward_batch128", |b| b.iter(|| agent.policy.forward_batch(black_box(&x)).unwrap()));
    let (out, cache) = agent.policy.forward_batch(&x).unwrap();
    let g = Matrix::from_vec(out.rows(), out.cols(), vec![1.0; out.rows() * out.cols()]).unwrap();
    c.bench_function("policy_backward_batch128", |b| b.iter(|| agent.policy.backward(&cache, black_box(&g)).unwrap()));
    let obs = vec![0.0; agent.obs_dim];
    let goal = vec![0.0; agent.goal_dim];
    c.bench_function("act_deterministic", |b| b.iter(|| agent.act_deterministic(black_box(&obs), &goal, &goal).unwrap()));
}

fn replay_and_update(c: &mut Criterion) {
    let trainer = warm_trainer(ControllerKind::JointPosition, 10);
    let delta = trainer.env.config().goal.delta;
    let reward = |a: &[f64], d: &[f64]| compute_reward(a, d, delta);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    c.bench_function("her_sample_batch128", |b| {
        b.iter(|| trainer.buffer.her_sample(128, 6, reward, &mut rng).unwrap())
    });
    let batch = trainer.buffer.her_sample(128, 6, reward, &mut rng).unwrap();
    c.bench_function("sac_update_batch128", |b| {
        b.iter_batched(
            || (trainer.agent.clone(), ChaCha8Rng::seed_from_u64(2)),
            |(mut agent, mut r)| agent.sac_update(black_box(&batch), &mut r).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, networks, replay_and_update);
criterion_main!(benches);
