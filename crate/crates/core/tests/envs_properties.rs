use std::cell::RefCell;

use proptest::prelude::*;
use rand::Rng;

use iher::envs::{
    compute_reward, is_success, reach_controller, EnvParams, GoalEnv, PointPush, Task, CONTACT_RADIUS,
    MIN_BOX_SEPARATION, WORKSPACE,
};
use iher::harness::{evaluate, FnController};
use iher::seeded_rng;

fn params() -> EnvParams {
    EnvParams::default()
}

/// Straight-line re-statement of the push step: point-mass integration,
/// then projection of the box onto the contact circle.
fn push_oracle(pos: [f64; 2], vel: [f64; 2], box_pos: [f64; 2], action: [f64; 2]) -> [f64; 2] {
    let mut p = [0.0; 2];
    for i in 0..2 {
        let a = action[i].clamp(-1.0, 1.0);
        let v = (vel[i] + 0.05 * a).clamp(-0.2, 0.2);
        p[i] = (pos[i] + v).clamp(-1.0, 1.0);
    }
    let dx = box_pos[0] - p[0];
    let dy = box_pos[1] - p[1];
    let dist = (dx * dx + dy * dy).sqrt();
    if dist >= 0.1 {
        return box_pos;
    }
    [
        (p[0] + 0.1 * dx / dist).clamp(-1.0, 1.0),
        (p[1] + 0.1 * dy / dist).clamp(-1.0, 1.0),
    ]
}

#[test]
fn push_contact_matches_geometry_oracle() {
    let mut rng = seeded_rng(11);
    let mut env = PointPush::new(params());
    let mut contacts = 0;
    while contacts < 1000 {
        let pos = [rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8)];
        let vel = [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)];
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let r = rng.random_range(0.02..0.3);
        let box_pos = [pos[0] + r * angle.cos(), pos[1] + r * angle.sin()];
        let action = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
        env.set_state(pos, vel, box_pos, [0.0, 0.0]);
        let step = env.step(&action).unwrap();
        let expected = push_oracle(pos, vel, box_pos, action);
        let got = env.box_position();
        assert!(
            (got[0] - expected[0]).abs() < 1e-12 && (got[1] - expected[1]).abs() < 1e-12,
            "box {got:?} vs oracle {expected:?}"
        );
        assert_eq!(step.observation.achieved_goal, got.to_vec());
        if expected != box_pos {
            contacts += 1;
            let agent = &step.observation.observation[0..2];
            let d = ((got[0] - agent[0]).powi(2) + (got[1] - agent[1]).powi(2)).sqrt();
            let inside = got.iter().all(|c| c.abs() < WORKSPACE);
            if inside {
                assert!((d - CONTACT_RADIUS).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn push_resets_keep_box_away_from_goal() {
    let mut env = Task::PointPush.make_env(&params());
    for seed in 0..1000 {
        let o = env.reset(seed);
        let b = &o.achieved_goal;
        assert!(b.iter().all(|c| c.abs() <= 0.3));
        let d = ((b[0] - o.desired_goal[0]).powi(2) + (b[1] - o.desired_goal[1]).powi(2)).sqrt();
        assert!(d >= MIN_BOX_SEPARATION, "seed {seed}: separation {d}");
    }
}

#[test]
fn reach_oracle_succeeds_from_every_reset() {
    let mut env = Task::PointReach.make_env(&params());
    for seed in 0..500 {
        let mut o = env.reset(seed);
        for _ in 0..50 {
            o = env.step(&reach_controller(&o)).unwrap().observation;
        }
        assert!(
            is_success(&o.achieved_goal, &o.desired_goal, 0.05).unwrap(),
            "seed {seed} ended at {:?}, goal {:?}",
            o.achieved_goal,
            o.desired_goal
        );
    }
}

#[test]
fn scripted_reach_oracle_evaluates_to_one() {
    let rate = evaluate(&FnController(reach_controller), Task::PointReach, &params(), 100, 3).unwrap();
    assert_eq!(rate, 1.0);
}

#[test]
fn random_policy_rarely_solves_push() {
    let rng = RefCell::new(seeded_rng(5));
    let random = FnController(|_: &iher::envs::GoalObservation| {
        let mut r = rng.borrow_mut();
        vec![r.random_range(-1.0..=1.0), r.random_range(-1.0..=1.0)]
    });
    let rate = evaluate(&random, Task::PointPush, &params(), 100, 9).unwrap();
    println!("random-action success on point-push: {rate}");
    assert!(rate < 0.1);
}

#[test]
fn episodes_have_fixed_length() {
    for task in Task::ALL {
        let mut env = task.make_env(&params());
        env.reset(1);
        for t in 1..=50 {
            let step = env.step(&[0.3, -0.7]).unwrap();
            assert_eq!(step.done, t == 50);
        }
    }
}

fn rollout(env: &mut dyn GoalEnv, seed: u64, actions: &[[f64; 2]]) -> Vec<Vec<f64>> {
    let mut out = vec![env.reset(seed).observation];
    for a in actions {
        out.push(env.step(a).unwrap().observation.observation);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rollouts_are_deterministic_and_bounded(
        seed in any::<u64>(),
        task_index in 0usize..3,
        actions in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..60),
    ) {
        let task = Task::ALL[task_index];
        let actions: Vec<[f64; 2]> = actions.into_iter().map(|(a, b)| [a, b]).collect();
        let mut e1 = task.make_env(&params());
        let mut e2 = task.make_env(&params());
        let a = rollout(e1.as_mut(), seed, &actions);
        let b = rollout(e2.as_mut(), seed, &actions);
        prop_assert_eq!(&a, &b);
        for obs in &a {
            prop_assert!(obs.iter().all(|v| v.is_finite()));
            prop_assert!(obs[0].abs() <= WORKSPACE && obs[1].abs() <= WORKSPACE);
        }
    }

    #[test]
    fn reward_is_reflexive(g in prop::collection::vec(-1.0f64..1.0, 2)) {
        prop_assert_eq!(compute_reward(&g, &g, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn reward_matches_distance_threshold(
        a in prop::collection::vec(-1.0f64..1.0, 2),
        b in prop::collection::vec(-1.0f64..1.0, 2),
    ) {
        let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let r = compute_reward(&a, &b, 0.05).unwrap();
        prop_assert_eq!(r, if d <= 0.05 { 0.0 } else { -1.0 });
        prop_assert_eq!(is_success(&a, &b, 0.05).unwrap(), r == 0.0);
    }
}
