use std::f64::consts::PI;

use bimanual::control::{variable_impedance_map, GainSpec};
use bimanual::dynamics::{ArmModel, Link, Pose2};
use bimanual::env::compute_reward;
use bimanual::math::matrix::symmetric_eigenvalues;
use bimanual::math::{Matrix, MlpParams};
use bimanual::rl::{ReplayBuffer, Transition};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn arm(lengths: &[f64], masses: &[f64], theta: f64) -> ArmModel {
    let links = lengths.iter().zip(masses).map(|(l, m)| Link { armature: 0.01, ..Link::rod(*l, *m) }).collect();
    ArmModel::new(links, Pose2::new(0.2, -0.1, theta), [0.0, -9.81]).unwrap()
}

fn arm_strategy() -> impl Strategy<Value = (ArmModel, Vec<f64>, Vec<f64>)> {
    (2usize..=7).prop_flat_map(|n| {
        (
            prop::collection::vec(0.05..0.8f64, n),
            prop::collection::vec(0.1..3.0f64, n),
            -PI..PI,
            prop::collection::vec(-PI..PI, n),
            prop::collection::vec(-3.0..3.0f64, n),
        )
            .prop_map(|(l, m, th, q, qd)| (arm(&l, &m, th), q, qd))
    })
}

fn episode(id: u64, len: usize) -> Vec<Transition> {
    (0..len)
        .map(|s| Transition {
            obs: vec![s as f64],
            action: vec![0.0],
            reward: 0.0,
            next_obs: vec![(s + 1) as f64],
            achieved_goal: vec![id as f64, s as f64, 0.0],
            next_achieved_goal: vec![id as f64, (s + 1) as f64, 0.0],
            desired_goal: vec![0.0; 3],
            done: s + 1 == len,
            episode: id,
            step: s,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn mass_matrix_is_symmetric_positive_definite((a, q, _) in arm_strategy()) {
        let m = a.mass_matrix(&q);
        prop_assert!(m.sub(&m.transpose()).max_abs() < 1e-12);
        prop_assert!(symmetric_eigenvalues(&m)[0] > 0.0);
    }

    #[test]
    fn jacobian_predicts_pose_velocity((a, q, qd) in arm_strategy()) {
        let v = a.jacobian(&q).matvec(&qd);
        let h = 1e-6;
        let step = |s: f64| a.forward_kinematics(&q.iter().zip(&qd).map(|(x, d)| x + s * h * d).collect::<Vec<_>>());
        let (p, m) = (step(1.0), step(-1.0));
        let dth = (p.theta - m.theta + PI).rem_euclid(2.0 * PI) - PI;
        let fd = [(p.x - m.x) / (2.0 * h), (p.y - m.y) / (2.0 * h), dth / (2.0 * h)];
        for k in 0..3 {
            prop_assert!((fd[k] - v[k]).abs() < 1e-6, "axis {k}: {} vs {}", fd[k], v[k]);
        }
    }

    #[test]
    fn forward_and_inverse_dynamics_agree((a, q, qd) in arm_strategy(), scale in 0.1..10.0f64) {
        let tau: Vec<f64> = (0..q.len()).map(|i| scale * ((i as f64) - 1.5)).collect();
        let qdd = a.forward_dynamics(&q, &qd, &tau, &vec![0.0; q.len()]).unwrap();
        let back = a.inverse_dynamics(&q, &qd, &qdd);
        for (b, t) in back.iter().zip(&tau) {
            prop_assert!((b - t).abs() < 1e-10 * (1.0 + t.abs()));
        }
    }

    #[test]
    fn mlp_gradients_match_central_differences(
        dims in (1usize..6, 2usize..=16, 1usize..4).prop_map(|(i, h, o)| vec![i, h, h, o]),
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = MlpParams::init_uniform(&dims, &mut rng);
        for layer in &mut p.layers {
            layer.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
        }
        let x = Matrix::from_vec(3, dims[0], (0..3 * dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let og = Matrix::from_vec(3, dims[3], (0..3 * dims[3]).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let loss = |net: &MlpParams| -> f64 {
            net.predict(&x).unwrap().data().iter().zip(og.data()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = p.forward_batch(&x).unwrap();
        // Central differences are meaningless across a ReLU kink.
        let margin = cache.pre_activations().iter().flat_map(|m| m.data()).fold(f64::INFINITY, |a, v| a.min(v.abs()));
        prop_assume!(margin > 1e-3);
        let (grads, _) = p.backward(&cache, &og).unwrap();
        let analytic: Vec<f64> = grads.buffers().iter().flat_map(|b| b.iter().copied()).collect();
        let (mut num, mut den) = (0.0, 0.0);
        let mut idx = 0;
        for b in 0..p.buffers().len() {
            for k in 0..p.buffers()[b].len() {
                let orig = p.buffers()[b][k];
                p.buffers_mut()[b][k] = orig + 1e-5;
                let up = loss(&p);
                p.buffers_mut()[b][k] = orig - 1e-5;
                let down = loss(&p);
                p.buffers_mut()[b][k] = orig;
                let fd = (up - down) / 2e-5;
                num += (fd - analytic[idx]).powi(2);
                den += fd.powi(2).max(analytic[idx].powi(2));
                idx += 1;
            }
        }
        prop_assert!(den == 0.0 || (num / den).sqrt() < 1e-4);
    }

    #[test]
    fn reward_is_one_exactly_below_the_threshold(
        a in prop::collection::vec(-1.0..1.0f64, 3),
        d in prop::collection::vec(-1.0..1.0f64, 3),
        delta in 1e-4..0.5f64,
    ) {
        let l1: f64 = a.iter().zip(&d).map(|(x, y)| (x - y).abs()).sum();
        prop_assert_eq!(compute_reward(&a, &d, delta), if l1 < delta { 1.0 } else { 0.0 });
    }

    #[test]
    fn variable_gains_stay_in_bounds(raw in prop::array::uniform3(-1.0..1.0f64)) {
        let g = GainSpec::default_for(3);
        let (kp, kv) = variable_impedance_map(raw, &g);
        for i in 0..3 {
            prop_assert!(kp[i] >= g.var_kp_min[i] && kp[i] <= g.var_kp_max[i]);
            prop_assert_eq!(kv[i], 2.0 * kp[i].sqrt());
        }
    }

    #[test]
    fn future_goals_never_leave_their_episode(
        cap in 2usize..64,
        lens in prop::collection::vec(1usize..64, 1..30),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ReplayBuffer::new(cap).unwrap();
        for (id, len) in lens.into_iter().enumerate() {
            b.push_episode(episode(id as u64, len.min(cap))).unwrap();
            for slot in 0..b.len() {
                let t = b.get(slot).clone();
                let f = b.get(b.future_slot(slot, &mut rng));
                prop_assert_eq!(f.episode, t.episode);
                prop_assert!(f.step >= t.step);
            }
        }
    }
}
