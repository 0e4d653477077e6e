use std::hint::black_box;

use bimanual::control::ControllerKind;
use bimanual_bench::mid_approach;
use criterion::{criterion_group, criterion_main, Criterion};

fn arm_dynamics(c: &mut Criterion) {
    let (env, _) = mid_approach(ControllerKind::JointPosition);
    let model = &env.config().arms[0];
    let state = env.states()[0].clone();
    let tau = vec![1.0, -0.5, 0.2];
    let zero = vec![0.0; 3];
    c.bench_function("mass_matrix", |b| b.iter(|| model.mass_matrix(black_box(&state.q))));
    c.bench_function("forward_dynamics", |b| {
        b.iter(|| model.forward_dynamics(black_box(&state.q), &state.qdot, &tau, &zero).unwrap())
    });
    c.bench_function("task_inertia", |b| b.iter(|| model.task_inertia(black_box(&state.q))));
    c.bench_function("integrate_step", |b| b.iter(|| model.integrate_step(black_box(&state), &tau, &zero, 1.0 / 240.0).unwrap()));
}

fn contact(c: &mut Criterion) {
    let (env, _) = mid_approach(ControllerKind::JointPosition);
    c.bench_function("contact_resolve", |b| b.iter(|| black_box(&env).contact().unwrap()));
}

fn env_step(c: &mut Criterion) {
    for kind in ControllerKind::ALL {
        let (env, action) = mid_approach(kind);
        c.bench_function(&format!("env_step/{}", kind.name()), |b| {
            b.iter_batched(|| env.clone(), |mut e| e.step(black_box(&action)).unwrap(), criterion::BatchSize::SmallInput)
        });
    }
}

criterion_group!(benches, arm_dynamics, contact, env_step);
criterion_main!(benches);
