//! Imaginary rollouts from the learned ensemble.
//!
//! Every imaginary step picks an ensemble member uniformly at random and
//! uses its prediction as the next state. After each model update the
//! imaginary buffer is emptied and refilled to its previous size with the
//! current policy first and then older snapshots, newest to oldest.

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::agent::{explore_action, Exploration, Policy};
use crate::dynamics::EnsembleModel;
use crate::envs::{compute_reward, GoalObservation, Task};
use crate::error::{check_dim, Error, Result};
use crate::replay::{Episode, EpisodeBuffer, Transition};
use crate::SeededRng;

pub const DEFAULT_SNAPSHOT_CADENCE: u64 = 50;

/// Episodes simulated in lockstep by one worker.
const CHUNK_EPISODES: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct PolicySnapshot {
    pub policy: Arc<Policy>,
    /// Global cycle index at capture.
    pub cycle: u64,
}

/// Frozen policy copies, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicySnapshotStore {
    cadence: u64,
    snapshots: Vec<PolicySnapshot>,
}

impl PolicySnapshotStore {
    pub fn new(cadence: u64) -> Self {
        PolicySnapshotStore {
            cadence: cadence.max(1),
            snapshots: Vec::new(),
        }
    }

    pub fn from_parts(cadence: u64, snapshots: Vec<PolicySnapshot>) -> Self {
        PolicySnapshotStore {
            cadence: cadence.max(1),
            snapshots,
        }
    }

    pub fn cadence(&self) -> u64 {
        self.cadence
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn oldest_first(&self) -> impl Iterator<Item = &PolicySnapshot> {
        self.snapshots.iter()
    }

    pub fn newest_first(&self) -> impl Iterator<Item = &PolicySnapshot> {
        self.snapshots.iter().rev()
    }
}

/// Stores a deep copy of `policy` when `cycle_index` is a multiple of the
/// store's cadence. Returns whether a snapshot was taken.
pub fn snapshot_policy(store: &mut PolicySnapshotStore, policy: &Policy, cycle_index: u64) -> bool {
    if cycle_index == 0 || cycle_index % store.cadence != 0 {
        return false;
    }
    store.snapshots.push(PolicySnapshot {
        policy: Arc::new(policy.clone()),
        cycle: cycle_index,
    });
    true
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImagRolloutRequest {
    pub episode_count: usize,
    pub exploration: Option<Exploration>,
    /// Bit normally fed to the policy (false = imaginary).
    pub env_is_real_input: bool,
    /// Per-episode probability of feeding the opposite bit.
    pub flip_fraction: f64,
    /// Epoch tag written on the generated transitions.
    pub epoch: u32,
}

/// Where imaginary episodes start and what they aim for.
#[derive(Clone, Copy, Debug)]
pub struct ImagSetting<'a> {
    pub task: Task,
    pub episode_length: usize,
    pub success_tolerance: f64,
    /// Observed real initial observations.
    pub initial_states: &'a [Vec<f64>],
}

#[derive(Clone, Debug, Default)]
pub struct ImagRollout {
    pub episodes: Vec<Episode>,
    /// Ensemble member used at each step of each episode.
    pub member_choices: Vec<Vec<usize>>,
    /// Bit fed to the policy for each episode.
    pub fed_bits: Vec<bool>,
}

/// Generates `request.episode_count` imaginary episodes.
pub fn rollout_imaginary<R: Rng + ?Sized>(
    ensemble: &EnsembleModel,
    policy: &Policy,
    setting: &ImagSetting<'_>,
    request: &ImagRolloutRequest,
    rng: &mut R,
) -> Result<ImagRollout> {
    if !ensemble.is_trained() {
        return Err(Error::UntrainedEnsemble);
    }
    if setting.initial_states.is_empty() {
        return Err(Error::EmptyBuffer("no recorded real initial states"));
    }
    check_dim("policy observation width", ensemble.state_dim(), policy.obs_dim())?;
    check_dim("policy action width", ensemble.action_dim(), policy.action_dim())?;
    let chunks: Vec<(usize, u64)> = (0..request.episode_count)
        .step_by(CHUNK_EPISODES)
        .map(|start| {
            (
                CHUNK_EPISODES.min(request.episode_count - start),
                rng.next_u64(),
            )
        })
        .collect();
    let parts = chunks
        .into_par_iter()
        .map(|(n, seed)| rollout_chunk(ensemble, policy, setting, request, n, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut out = ImagRollout::default();
    for part in parts {
        out.episodes.extend(part.episodes);
        out.member_choices.extend(part.member_choices);
        out.fed_bits.extend(part.fed_bits);
    }
    Ok(out)
}

fn rollout_chunk(
    ensemble: &EnsembleModel,
    policy: &Policy,
    setting: &ImagSetting<'_>,
    request: &ImagRolloutRequest,
    n: usize,
    seed: u64,
) -> Result<ImagRollout> {
    let mut rng = SeededRng::seed_from_u64(seed);
    let sd = ensemble.state_dim();
    let ad = ensemble.action_dim();
    let k = ensemble.size();
    let task = setting.task;

    let mut states: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut goals: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut bits: Vec<bool> = Vec::with_capacity(n);
    for _ in 0..n {
        let s0 = &setting.initial_states[rng.random_range(0..setting.initial_states.len())];
        check_dim("initial state width", sd, s0.len())?;
        states.push(s0.clone());
        goals.push(task.sample_goal(&mut rng));
        let flip = rng.random::<f64>() < request.flip_fraction;
        bits.push(request.env_is_real_input != flip);
    }
    let bit_values: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let mut transitions: Vec<Vec<Transition>> = (0..n).map(|_| Vec::with_capacity(setting.episode_length)).collect();
    let mut choices: Vec<Vec<usize>> = (0..n).map(|_| Vec::with_capacity(setting.episode_length)).collect();

    for _ in 0..setting.episode_length {
        let obs_refs: Vec<&[f64]> = states.iter().map(Vec::as_slice).collect();
        let goal_refs: Vec<&[f64]> = goals.iter().map(Vec::as_slice).collect();
        let det = policy.act_batch(&obs_refs, &goal_refs, &bit_values)?;
        let mut actions = Array2::<f64>::zeros((n, ad));
        let mut members = Vec::with_capacity(n);
        for i in 0..n {
            let row: Vec<f64> = det.row(i).to_vec();
            let a = match &request.exploration {
                Some(e) => explore_action(&row, e, &mut rng),
                None => row,
            };
            for (j, v) in a.into_iter().enumerate() {
                actions[[i, j]] = v;
            }
            members.push(rng.random_range(0..k));
        }

        let mut next = vec![Vec::new(); n];
        for m in 0..k {
            let rows: Vec<usize> = (0..n).filter(|&i| members[i] == m).collect();
            if rows.is_empty() {
                continue;
            }
            let mut s = Array2::<f64>::zeros((rows.len(), sd));
            let mut a = Array2::<f64>::zeros((rows.len(), ad));
            for (r, &i) in rows.iter().enumerate() {
                for j in 0..sd {
                    s[[r, j]] = states[i][j];
                }
                for j in 0..ad {
                    a[[r, j]] = actions[[i, j]];
                }
            }
            let pred = ensemble.predict_next_batch(m, s.view(), a.view())?;
            for (r, &i) in rows.iter().enumerate() {
                next[i] = pred.row(r).to_vec();
            }
        }

        for i in 0..n {
            let next_state = std::mem::take(&mut next[i]);
            let achieved = task.achieved_goal(&states[i]);
            let next_achieved = task.achieved_goal(&next_state);
            let reward = compute_reward(&next_achieved, &goals[i], setting.success_tolerance)?;
            transitions[i].push(Transition {
                obs: GoalObservation {
                    observation: states[i].clone(),
                    achieved_goal: achieved,
                    desired_goal: goals[i].clone(),
                },
                action: actions.row(i).to_vec(),
                next_obs: GoalObservation {
                    observation: next_state.clone(),
                    achieved_goal: next_achieved,
                    desired_goal: goals[i].clone(),
                },
                extrinsic_reward: reward,
                is_real: false,
                epoch_collected: request.epoch,
            });
            choices[i].push(members[i]);
            states[i] = next_state;
        }
    }

    Ok(ImagRollout {
        episodes: transitions
            .into_iter()
            .map(|transitions| Episode {
                transitions,
                policy_version: policy.version,
            })
            .collect(),
        member_choices: choices,
        fed_bits: bits,
    })
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RegenReport {
    /// Buffer size (transitions) before clearing.
    pub target: usize,
    pub episodes_generated: usize,
    /// Versions of the policies that contributed, in generation order.
    pub policy_versions: Vec<u64>,
}

/// Empties `imag` and refills it to its previous size with episodes from
/// the current ensemble. Policies are used current first, then snapshots
/// newest to oldest, `per_policy_quota` episodes each; the sequence wraps
/// around if one pass is not enough. The lifetime counter is unchanged.
#[allow(clippy::too_many_arguments)]
pub fn regenerate_imag_buffer<R: Rng + ?Sized>(
    ensemble: &EnsembleModel,
    imag: &mut EpisodeBuffer,
    store: &PolicySnapshotStore,
    current_policy: &Policy,
    per_policy_quota: usize,
    setting: &ImagSetting<'_>,
    template: &ImagRolloutRequest,
    rng: &mut R,
) -> Result<RegenReport> {
    let target = imag.len();
    let mut report = RegenReport {
        target,
        ..RegenReport::default()
    };
    if target == 0 {
        return Ok(report);
    }
    if per_policy_quota == 0 {
        return Err(Error::InvalidArgument("regeneration quota must be positive".into()));
    }
    if !ensemble.is_trained() {
        return Err(Error::UntrainedEnsemble);
    }
    if setting.initial_states.is_empty() {
        return Err(Error::EmptyBuffer("no recorded real initial states"));
    }
    imag.clear();
    let ep_len = imag.episode_length();
    let policies: Vec<&Policy> = std::iter::once(current_policy)
        .chain(store.newest_first().map(|s| s.policy.as_ref()))
        .collect();
    for policy in policies.iter().cycle() {
        let missing = (target - imag.len()) / ep_len;
        if missing == 0 {
            break;
        }
        let request = ImagRolloutRequest {
            episode_count: missing.min(per_policy_quota),
            ..template.clone()
        };
        let rollout = rollout_imaginary(ensemble, policy, setting, &request, rng)?;
        report.episodes_generated += rollout.episodes.len();
        report.policy_versions.push(policy.version);
        for ep in rollout.episodes {
            imag.store_regenerated(ep)?;
        }
    }
    Ok(report)
}
