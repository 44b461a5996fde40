//! Oracles shared by the property suite and the acceptance target.
#![allow(dead_code)]

use std::sync::Arc;

use ndarray::Array2;
use std::time::Instant;

use rand::Rng;

use iher::agent::{ActorCritic, AgentConfig, Exploration};
use iher::curiosity::{ensemble_variance, DisagreementSpace};
use iher::diffnet::{gradient_check, Activation, Mlp};
use iher::dynamics::{train_models, EnsembleConfig, EnsembleModel};
use iher::envs::{compute_reward, EnvParams, GoalObservation, Task};
use iher::imagination::{regenerate_imag_buffer, rollout_imaginary, ImagRolloutRequest, ImagSetting, PolicySnapshotStore};
use iher::replay::{her_relabel, sample_biased_for_model, Episode, EpisodeBuffer, SampledTransition, Transition};
use iher::{seeded_rng, SeededRng};

/// Hidden pre-activations closer than this to zero count as a kink.
pub const KINK_MARGIN: f64 = 1e-3;

/// Random architecture with inputs resampled until no ReLU sits near a
/// kink. Returns the worst relative error of the gradient check.
pub fn random_net_gradient_error(rng: &mut SeededRng) -> f64 {
    let depth = rng.random_range(1..=3);
    let mut sizes = vec![rng.random_range(1..=5)];
    for _ in 0..depth {
        sizes.push(rng.random_range(1..=12));
    }
    sizes.push(rng.random_range(1..=3));
    let hidden = if rng.random_bool(0.5) { Activation::Relu } else { Activation::Tanh };
    let output = if rng.random_bool(0.5) { Activation::Identity } else { Activation::Tanh };
    let net = Mlp::new(&sizes, hidden, output, rng).unwrap();
    let rows = rng.random_range(1..=4);
    let inputs = loop {
        let x = Array2::from_shape_fn((rows, sizes[0]), |_| rng.random_range(-1.0..1.0));
        if hidden != Activation::Relu || net.min_abs_hidden_preactivation(x.view()).unwrap() > KINK_MARGIN {
            break x;
        }
    };
    gradient_check(&net, inputs.view(), 1e-4).unwrap().max_rel_error()
}

/// Worst gradient-check error over `count` random networks.
pub fn worst_gradient_error(count: usize, seed: u64) -> f64 {
    let mut rng = seeded_rng(seed);
    (0..count)
        .map(|_| random_net_gradient_error(&mut rng))
        .fold(0.0, f64::max)
}

/// 1-D walker: position moves by 0.1 per step toward `goal` direction.
pub fn line_episode(len: usize, start: f64, goal: f64, epoch: u32, is_real: bool) -> Episode {
    let mut pos = start;
    let transitions = (0..len)
        .map(|_| {
            let next = pos + 0.1;
            let t = Transition {
                obs: GoalObservation {
                    observation: vec![pos],
                    achieved_goal: vec![pos],
                    desired_goal: vec![goal],
                },
                action: vec![1.0],
                next_obs: GoalObservation {
                    observation: vec![next],
                    achieved_goal: vec![next],
                    desired_goal: vec![goal],
                },
                extrinsic_reward: compute_reward(&[next], &[goal], 0.05).unwrap(),
                is_real,
                epoch_collected: epoch,
            };
            pos = next;
            t
        })
        .collect();
    Episode {
        transitions,
        policy_version: 0,
    }
}

/// Fraction of `samples` transitions relabelled with `replay_k`.
pub fn relabel_fraction(samples: usize, replay_k: usize, seed: u64) -> f64 {
    let mut rng = seeded_rng(seed);
    let ep = Arc::new(line_episode(50, 0.0, 9.0, 1, true));
    let mut batch: Vec<SampledTransition> = (0..samples)
        .map(|i| SampledTransition::new(Arc::clone(&ep), i % 50))
        .collect();
    her_relabel(&mut batch, replay_k, 0.05, &mut rng).unwrap();
    batch.iter().filter(|t| t.relabeled).count() as f64 / samples as f64
}

/// Largest gap between empirical and exact recency-biased sampling
/// probabilities, per transition, over `draws` draws.
pub fn biased_sampling_gap(epochs: &[u32], current_epoch: u32, bias: f64, draws: usize, seed: u64) -> f64 {
    let mut buf = EpisodeBuffer::new(epochs.len(), 1).unwrap();
    for (i, &e) in epochs.iter().enumerate() {
        buf.store_episode(line_episode(1, i as f64, 99.0, e, true)).unwrap();
    }
    let weights: Vec<f64> = epochs
        .iter()
        .map(|&e| e as f64 / current_epoch as f64 * (bias - 1.0))
        .collect();
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = if total > 0.0 {
        weights.iter().map(|w| w / total).collect()
    } else {
        vec![1.0 / epochs.len() as f64; epochs.len()]
    };
    let mut rng = seeded_rng(seed);
    let mut counts = vec![0usize; epochs.len()];
    let batch = 1000;
    for _ in 0..draws / batch {
        for t in sample_biased_for_model(&buf, batch, current_epoch, bias, &mut rng).unwrap() {
            counts[t.obs.observation[0] as usize] += 1;
        }
    }
    let n = (draws / batch * batch) as f64;
    counts
        .iter()
        .zip(&exact)
        .map(|(&c, p)| (c as f64 / n - p).abs())
        .fold(0.0, f64::max)
}

/// Real PointReach episodes under random actions.
pub fn random_reach_buffer(episodes: usize, seed: u64) -> EpisodeBuffer {
    let params = EnvParams::default();
    let mut env = Task::PointReach.make_env(&params);
    let mut rng = seeded_rng(seed);
    let mut buf = EpisodeBuffer::new(episodes * params.episode_length, params.episode_length).unwrap();
    for _ in 0..episodes {
        let mut obs = env.reset(rng.random());
        let mut transitions = Vec::new();
        for _ in 0..params.episode_length {
            let action = vec![rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
            let step = env.step(&action).unwrap();
            transitions.push(Transition {
                obs: std::mem::replace(&mut obs, step.observation.clone()),
                action,
                next_obs: step.observation,
                extrinsic_reward: step.reward,
                is_real: true,
                epoch_collected: 1,
            });
        }
        buf.store_episode(Episode {
            transitions,
            policy_version: 0,
        })
        .unwrap();
    }
    buf
}

/// Small trained ensemble and agent on PointReach.
pub struct ImagFixture {
    pub real: EpisodeBuffer,
    pub ensemble: EnsembleModel,
    pub agent: ActorCritic,
    pub initial_states: Vec<Vec<f64>>,
    pub rng: SeededRng,
}

impl ImagFixture {
    pub fn new(ensemble_size: usize, seed: u64) -> Self {
        let real = random_reach_buffer(20, seed);
        let mut rng = seeded_rng(seed + 1);
        let config = EnsembleConfig {
            ensemble_size,
            hidden_sizes: vec![16, 16],
            ..EnsembleConfig::default()
        };
        let mut ensemble = EnsembleModel::new(4, 2, &config, &mut rng).unwrap();
        train_models(&mut ensemble, &real, 10, 64, 1, 2.0, &mut rng).unwrap();
        let agent_config = AgentConfig {
            hidden_sizes: vec![16, 16],
            ..AgentConfig::default()
        };
        let mut agent = ActorCritic::new(4, 2, 2, agent_config, &mut rng).unwrap();
        for ep in real.episodes() {
            agent.update_normalizers(ep);
        }
        let initial_states = real
            .episodes()
            .map(|e| e.initial_observation().observation.clone())
            .collect();
        ImagFixture {
            real,
            ensemble,
            agent,
            initial_states,
            rng,
        }
    }

    pub fn setting(initial_states: &[Vec<f64>]) -> ImagSetting<'_> {
        ImagSetting {
            task: Task::PointReach,
            episode_length: 50,
            success_tolerance: 0.05,
            initial_states,
        }
    }

    pub fn request(&self, episodes: usize) -> ImagRolloutRequest {
        ImagRolloutRequest {
            episode_count: episodes,
            exploration: Some(Exploration {
                random_eps: 0.3,
                noise_std: 0.2,
            }),
            env_is_real_input: false,
            flip_fraction: 0.1,
            epoch: 1,
        }
    }
}

/// Member-choice frequencies over `episodes` imaginary episodes.
pub fn member_frequencies(ensemble_size: usize, episodes: usize, seed: u64) -> Vec<f64> {
    let mut f = ImagFixture::new(ensemble_size, seed);
    let request = f.request(episodes);
    let rollout = rollout_imaginary(&f.ensemble, &f.agent.policy, &ImagFixture::setting(&f.initial_states), &request, &mut f.rng).unwrap();
    let mut counts = vec![0usize; ensemble_size];
    let mut total = 0usize;
    for choices in &rollout.member_choices {
        for &m in choices {
            counts[m] += 1;
            total += 1;
        }
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

/// Fills an imaginary buffer with a stale ensemble, retrains, regenerates
/// and counts transitions that no current member reproduces exactly.
/// Also returns the number of transitions checked.
pub fn regeneration_oracle_violations(seed: u64) -> (usize, usize) {
    let mut f = ImagFixture::new(5, seed);
    let mut imag = EpisodeBuffer::new(30 * 50, 50).unwrap();
    let stale = f.ensemble.clone();
    let request = f.request(30);
    let rollout = rollout_imaginary(&stale, &f.agent.policy, &ImagFixture::setting(&f.initial_states), &request, &mut f.rng).unwrap();
    for ep in rollout.episodes {
        imag.store_episode(ep).unwrap();
    }
    train_models(&mut f.ensemble, &f.real, 20, 64, 2, 2.0, &mut f.rng).unwrap();
    let store = PolicySnapshotStore::new(50);
    let template = f.request(0);
    let setting = ImagFixture::setting(&f.initial_states);
    let report = regenerate_imag_buffer(
        &f.ensemble,
        &mut imag,
        &store,
        &f.agent.policy,
        8,
        &setting,
        &template,
        &mut f.rng,
    )
    .unwrap();
    assert_eq!(report.target, 30 * 50);
    assert_eq!(imag.len(), 30 * 50);
    let mut violations = 0;
    let mut checked = 0;
    for t in imag.transitions() {
        checked += 1;
        let reproduced = (0..f.ensemble.size()).any(|m| {
            f.ensemble
                .predict_next(m, &t.obs.observation, &t.action)
                .unwrap()
                == t.next_obs.observation
        });
        if !reproduced {
            violations += 1;
        }
    }
    (violations, checked)
}

fn linear_obs(s: &[f64]) -> GoalObservation {
    GoalObservation {
        observation: s.to_vec(),
        achieved_goal: s.to_vec(),
        desired_goal: vec![0.0; s.len()],
    }
}

/// `s' = s + 0.1 a` with uniform actions, 100 episodes of 50 steps.
pub fn linear_buffer(rng: &mut SeededRng) -> EpisodeBuffer {
    let mut buf = EpisodeBuffer::new(5000, 50).unwrap();
    for _ in 0..100 {
        let mut s = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let transitions = (0..50)
            .map(|_| {
                let a = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let next: Vec<f64> = s.iter().zip(&a).map(|(x, u)| x + 0.1 * u).collect();
                let t = Transition {
                    obs: linear_obs(&s),
                    action: a,
                    next_obs: linear_obs(&next),
                    extrinsic_reward: -1.0,
                    is_real: true,
                    epoch_collected: 1,
                };
                s = next;
                t
            })
            .collect();
        buf.store_episode(Episode {
            transitions,
            policy_version: 0,
        })
        .unwrap();
    }
    buf
}

/// Mean absolute one-step error per state dimension, worst member, on
/// fresh points.
pub fn linear_system_error(seed: u64) -> (Vec<f64>, f64) {
    let mut rng = seeded_rng(seed);
    let buf = linear_buffer(&mut rng);
    let mut ensemble = EnsembleModel::new(2, 2, &EnsembleConfig::default(), &mut rng).unwrap();
    let start = Instant::now();
    train_models(&mut ensemble, &buf, 500, 256, 1, 2.0, &mut rng).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let n = 1000;
    let mut worst = vec![0.0f64; 2];
    for m in 0..ensemble.size() {
        let mut err = [0.0; 2];
        let mut probe = seeded_rng(seed + 1000);
        for _ in 0..n {
            let s = [probe.random_range(-1.0..1.0), probe.random_range(-1.0..1.0)];
            let a = [probe.random_range(-1.0..1.0), probe.random_range(-1.0..1.0)];
            let p = ensemble.predict_next(m, &s, &a).unwrap();
            for d in 0..2 {
                err[d] += (p[d] - (s[d] + 0.1 * a[d])).abs() / n as f64;
            }
        }
        for d in 0..2 {
            worst[d] = worst[d].max(err[d]);
        }
    }
    (worst, secs)
}


/// Independent transitions of `s' = s + 0.1 a` with `s` uniform in
/// `[lo, hi]^2`.
pub fn region_buffer(lo: f64, hi: f64, episodes: usize, rng: &mut SeededRng) -> EpisodeBuffer {
    let mut buf = EpisodeBuffer::new(episodes * 50, 50).unwrap();
    for _ in 0..episodes {
        let transitions = (0..50)
            .map(|_| {
                let s = vec![rng.random_range(lo..hi), rng.random_range(lo..hi)];
                let a = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let next: Vec<f64> = s.iter().zip(&a).map(|(x, u)| x + 0.1 * u).collect();
                Transition {
                    obs: linear_obs(&s),
                    action: a,
                    next_obs: linear_obs(&next),
                    extrinsic_reward: -1.0,
                    is_real: true,
                    epoch_collected: 1,
                }
            })
            .collect();
        buf.store_episode(Episode {
            transitions,
            policy_version: 0,
        })
        .unwrap();
    }
    buf
}

/// Mean disagreement over 100 probes inside the training region
/// `[-1, 0]^2` and 100 probes in the empty region `[2, 3]^2`.
pub fn dense_and_sparse_sigma(seed: u64) -> (f64, f64) {
    let mut rng = seeded_rng(seed);
    let buf = region_buffer(-1.0, 0.0, 40, &mut rng);
    let config = EnsembleConfig {
        hidden_sizes: vec![32, 32],
        ..EnsembleConfig::default()
    };
    let mut ensemble = EnsembleModel::new(2, 2, &config, &mut rng).unwrap();
    train_models(&mut ensemble, &buf, 100, 128, 1, 2.0, &mut rng).unwrap();
    let mut probe = seeded_rng(seed + 1);
    let mut mean_sigma = |lo: f64, hi: f64| {
        (0..100)
            .map(|_| {
                let s = [probe.random_range(lo..hi), probe.random_range(lo..hi)];
                let a = [probe.random_range(-1.0..1.0), probe.random_range(-1.0..1.0)];
                ensemble_variance(&ensemble, &s, &a, DisagreementSpace::Normalized).unwrap()
            })
            .sum::<f64>()
            / 100.0
    };
    let dense = mean_sigma(-1.0, 0.0);
    let sparse = mean_sigma(2.0, 3.0);
    (dense, sparse)
}
