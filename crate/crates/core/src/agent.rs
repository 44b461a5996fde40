//! Goal-conditioned DDPG with a real/imaginary input bit.
//!
//! Actor input: `normalize(obs) ++ normalize(goal) ++ [env_is_real]`.
//! Critic input: actor input `++ action`. The bit bypasses normalization.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::diffnet::{adam_update, Activation, AdamState, Gradients, Mlp};
use crate::envs::GoalObservation;
use crate::error::{check_dim, Error, Result};
use crate::replay::{Episode, SampledTransition};

/// Running mean/variance with clipping of the normalized output.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningNormalizer {
    pub sum: Vec<f64>,
    pub sumsq: Vec<f64>,
    pub count: u64,
    pub eps: f64,
    pub clip_range: f64,
}

impl RunningNormalizer {
    pub fn new(dim: usize, clip_range: f64) -> Self {
        RunningNormalizer {
            sum: vec![0.0; dim],
            sumsq: vec![0.0; dim],
            count: 0,
            eps: 0.01,
            clip_range,
        }
    }

    pub fn dim(&self) -> usize {
        self.sum.len()
    }

    pub fn update(&mut self, x: &[f64]) {
        for ((s, q), v) in self.sum.iter_mut().zip(self.sumsq.iter_mut()).zip(x) {
            *s += v;
            *q += v * v;
        }
        self.count += 1;
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.sum.iter().map(|s| s / n).collect()
    }

    pub fn std(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.sum
            .iter()
            .zip(&self.sumsq)
            .map(|(s, q)| {
                let m = s / n;
                (q / n - m * m).max(self.eps * self.eps).sqrt()
            })
            .collect()
    }

    /// Writes the normalized, clipped `x` into `out`.
    pub fn normalize_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.count.max(1) as f64;
        for i in 0..x.len() {
            let m = self.sum[i] / n;
            let sd = (self.sumsq[i] / n - m * m).max(self.eps * self.eps).sqrt();
            out[i] = ((x[i] - m) / sd).clamp(-self.clip_range, self.clip_range);
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.normalize_into(x, &mut out);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Exploration {
    /// Probability of a uniformly random action.
    pub random_eps: f64,
    /// Std of the Gaussian added to the actor output (action range is 1).
    pub noise_std: f64,
}

/// Applies the exploration scheme to a deterministic action.
pub fn explore_action<R: Rng + ?Sized>(deterministic: &[f64], exploration: &Exploration, rng: &mut R) -> Vec<f64> {
    if rng.random::<f64>() < exploration.random_eps {
        return deterministic.iter().map(|_| rng.random_range(-1.0..=1.0)).collect();
    }
    let noise = Normal::new(0.0, exploration.noise_std.max(0.0)).expect("valid normal");
    deterministic
        .iter()
        .map(|a| (a + noise.sample(rng)).clamp(-1.0, 1.0))
        .collect()
}

/// The actor together with the input statistics it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub actor: Mlp,
    pub obs_norm: RunningNormalizer,
    pub goal_norm: RunningNormalizer,
    /// Number of updates applied; identifies a parameter set.
    pub version: u64,
}

impl Policy {
    pub fn obs_dim(&self) -> usize {
        self.obs_norm.dim()
    }

    pub fn goal_dim(&self) -> usize {
        self.goal_norm.dim()
    }

    pub fn action_dim(&self) -> usize {
        self.actor.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim() + self.goal_dim() + 1
    }

    /// Writes one actor input row.
    pub fn fill_input(&self, observation: &[f64], goal: &[f64], real_bit: f64, out: &mut [f64]) {
        let (o, g) = (self.obs_dim(), self.goal_dim());
        self.obs_norm.normalize_into(observation, &mut out[..o]);
        self.goal_norm.normalize_into(goal, &mut out[o..o + g]);
        out[o + g] = real_bit;
    }

    pub fn actor_input(&self, observation: &[f64], goal: &[f64], real_bit: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.input_dim()];
        self.fill_input(observation, goal, real_bit, &mut out);
        out
    }

    /// Deterministic actions for a batch of `(observation, goal, bit)` rows.
    pub fn act_batch(&self, observations: &[&[f64]], goals: &[&[f64]], bits: &[f64]) -> Result<Array2<f64>> {
        check_dim("goal rows", observations.len(), goals.len())?;
        check_dim("bit rows", observations.len(), bits.len())?;
        let mut x = Array2::zeros((observations.len(), self.input_dim()));
        for (i, mut row) in x.rows_mut().into_iter().enumerate() {
            check_dim("observation length", self.obs_dim(), observations[i].len())?;
            check_dim("goal length", self.goal_dim(), goals[i].len())?;
            self.fill_input(
                observations[i],
                goals[i],
                bits[i],
                row.as_slice_mut().expect("contiguous row"),
            );
        }
        self.actor.forward(x.view())
    }

    pub fn act(&self, obs: &GoalObservation, real_bit: f64) -> Result<Vec<f64>> {
        check_dim("observation length", self.obs_dim(), obs.observation.len())?;
        check_dim("goal length", self.goal_dim(), obs.desired_goal.len())?;
        self.actor
            .forward_one(&self.actor_input(&obs.observation, &obs.desired_goal, real_bit))
    }
}

/// Deterministic action, or explored action when `exploration` is given.
pub fn select_action<R: Rng + ?Sized>(
    policy: &Policy,
    obs: &GoalObservation,
    env_is_real: bool,
    exploration: Option<&Exploration>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let det = policy.act(obs, if env_is_real { 1.0 } else { 0.0 })?;
    Ok(match exploration {
        Some(e) => explore_action(&det, e, rng),
        None => det,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig {
    pub hidden_sizes: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    /// Target keeps `polyak` of itself per update.
    pub polyak: f64,
    pub action_l2: f64,
    pub clip_obs: f64,
    pub exploration: Exploration,
    /// Largest per-step intrinsic bonus; widens the upper Q-target clip.
    pub max_intrinsic_reward: f64,
    /// When false the real/imaginary bit is fed as 1 everywhere.
    pub distinguish_real: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            hidden_sizes: vec![256, 256, 256],
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            gamma: 0.98,
            polyak: 0.95,
            action_l2: 1.0,
            clip_obs: 5.0,
            exploration: Exploration {
                random_eps: 0.3,
                noise_std: 0.2,
            },
            max_intrinsic_reward: 0.8,
            distinguish_real: true,
        }
    }
}

/// Clip range of critic targets: `[-1/(1-gamma), max_intrinsic/(1-gamma)]`.
pub fn q_target_bounds(gamma: f64, max_intrinsic_reward: f64) -> (f64, f64) {
    (-1.0 / (1.0 - gamma), max_intrinsic_reward / (1.0 - gamma))
}

/// `target <- tau * target + (1 - tau) * main`.
pub fn polyak_update(main: &Mlp, target: &mut Mlp, tau: f64) -> Result<()> {
    target.polyak_from(main, tau)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub mean_q: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActorCritic {
    pub policy: Policy,
    pub critic: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
    pub config: AgentConfig,
}

/// Network inputs built from a sampled batch.
#[derive(Clone, Debug)]
pub struct BatchInputs {
    pub inputs: Array2<f64>,
    pub next_inputs: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Vec<f64>,
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        goal_dim: usize,
        action_dim: usize,
        config: AgentConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let input = obs_dim + goal_dim + 1;
        let mut actor_sizes = vec![input];
        actor_sizes.extend(&config.hidden_sizes);
        actor_sizes.push(action_dim);
        let mut critic_sizes = vec![input + action_dim];
        critic_sizes.extend(&config.hidden_sizes);
        critic_sizes.push(1);
        let actor = Mlp::new(&actor_sizes, Activation::Relu, Activation::Tanh, rng)?;
        let critic = Mlp::new(&critic_sizes, Activation::Relu, Activation::Identity, rng)?;
        Ok(ActorCritic {
            actor_opt: AdamState::new(&actor, config.actor_lr),
            critic_opt: AdamState::new(&critic, config.critic_lr),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            policy: Policy {
                actor,
                obs_norm: RunningNormalizer::new(obs_dim, config.clip_obs),
                goal_norm: RunningNormalizer::new(goal_dim, config.clip_obs),
                version: 0,
            },
            critic,
            config,
        })
    }

    pub fn q_bounds(&self) -> (f64, f64) {
        q_target_bounds(self.config.gamma, self.config.max_intrinsic_reward)
    }

    /// Folds a real episode's observations and goals into the input
    /// statistics. Imaginary episodes are ignored.
    pub fn update_normalizers(&mut self, episode: &Episode) {
        if !episode.is_real() {
            return;
        }
        for t in &episode.transitions {
            self.policy.obs_norm.update(&t.obs.observation);
            self.policy.goal_norm.update(&t.obs.desired_goal);
            self.policy.goal_norm.update(&t.next_obs.achieved_goal);
        }
        if let Some(last) = episode.transitions.last() {
            self.policy.obs_norm.update(&last.next_obs.observation);
        }
    }

    fn bit_for(&self, is_real: bool) -> f64 {
        if is_real || !self.config.distinguish_real {
            1.0
        } else {
            0.0
        }
    }

    pub fn batch_inputs(&self, batch: &[SampledTransition]) -> Result<BatchInputs> {
        let p = &self.policy;
        let n = batch.len();
        let mut inputs = Array2::zeros((n, p.input_dim()));
        let mut next_inputs = Array2::zeros((n, p.input_dim()));
        let mut actions = Array2::zeros((n, p.action_dim()));
        let mut rewards = Vec::with_capacity(n);
        for (i, item) in batch.iter().enumerate() {
            let t = item.transition();
            check_dim("batch goal length", p.goal_dim(), item.desired_goal.len())?;
            check_dim("batch observation length", p.obs_dim(), t.obs.observation.len())?;
            check_dim("batch action length", p.action_dim(), t.action.len())?;
            let bit = self.bit_for(t.is_real);
            p.fill_input(
                &t.obs.observation,
                &item.desired_goal,
                bit,
                inputs.row_mut(i).into_slice().expect("contiguous"),
            );
            p.fill_input(
                &t.next_obs.observation,
                &item.desired_goal,
                bit,
                next_inputs.row_mut(i).into_slice().expect("contiguous"),
            );
            for (j, a) in t.action.iter().enumerate() {
                actions[[i, j]] = *a;
            }
            rewards.push(item.total_reward());
        }
        Ok(BatchInputs {
            inputs,
            next_inputs,
            actions,
            rewards,
        })
    }

    /// Clipped TD targets `r + gamma * Q'(s', pi'(s'))`.
    pub fn critic_targets(&self, b: &BatchInputs) -> Result<Vec<f64>> {
        let next_actions = self.target_actor.forward(b.next_inputs.view())?;
        let q_next = self
            .target_critic
            .forward(concat(b.next_inputs.view(), next_actions.view())?.view())?;
        let (lo, hi) = self.q_bounds();
        Ok(b.rewards
            .iter()
            .zip(q_next.column(0))
            .map(|(r, q)| (r + self.config.gamma * q).clamp(lo, hi))
            .collect())
    }

    /// Actor objective `-mean(Q(s, pi(s))) + action_l2 * mean(pi(s)^2)` and
    /// its gradient with respect to the actor parameters of `actor`.
    pub fn actor_loss_and_gradients(&self, actor: &Mlp, inputs: ArrayView2<f64>) -> Result<(f64, Gradients)> {
        let n = inputs.nrows() as f64;
        let a_dim = actor.output_dim() as f64;
        let actor_trace = actor.forward_trace(inputs)?;
        let pi = actor_trace.output();
        let critic_in = concat(inputs, pi.view())?;
        let critic_trace = self.critic.forward_trace(critic_in.view())?;
        let q = critic_trace.output();
        let l2 = self.config.action_l2;
        let loss = -q.sum() / n + l2 * pi.mapv(|v| v * v).sum() / (n * a_dim);
        let neg_ones = Array2::from_elem((inputs.nrows(), 1), -1.0);
        let (_, critic_in_grad) = self.critic.backward(&critic_trace, neg_ones.view())?;
        let in_dim = inputs.ncols();
        let mut upstream = critic_in_grad.slice(s![.., in_dim..]).to_owned();
        upstream.zip_mut_with(pi, |u, &a| *u += 2.0 * l2 * a / a_dim);
        let (grads, _) = actor.backward(&actor_trace, upstream.view())?;
        Ok((loss, grads))
    }

    /// One critic step and one actor step on a relabelled, reward-augmented
    /// batch, then a Polyak step of both targets.
    pub fn update(&mut self, batch: &[SampledTransition]) -> Result<UpdateStats> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("update needs a non-empty batch".into()));
        }
        let b = self.batch_inputs(batch)?;
        let targets = self.critic_targets(&b)?;
        let n = batch.len() as f64;

        let critic_in = concat(b.inputs.view(), b.actions.view())?;
        let trace = self.critic.forward_trace(critic_in.view())?;
        let q = trace.output();
        let mut diff = Array2::zeros((batch.len(), 1));
        for (i, y) in targets.iter().enumerate() {
            diff[[i, 0]] = q[[i, 0]] - y;
        }
        let critic_loss = diff.mapv(|d: f64| d * d).sum() / n;
        let mean_q = q.sum() / n;
        if !critic_loss.is_finite() {
            return Err(Error::NonFiniteLoss("critic update"));
        }
        let (critic_grads, _) = self.critic.backward(&trace, (diff * 2.0).view())?;
        adam_update(&mut self.critic, &critic_grads, &mut self.critic_opt)?;

        let (actor_loss, actor_grads) = self.actor_loss_and_gradients(&self.policy.actor, b.inputs.view())?;
        if !actor_loss.is_finite() {
            return Err(Error::NonFiniteLoss("actor update"));
        }
        adam_update(&mut self.policy.actor, &actor_grads, &mut self.actor_opt)?;
        self.policy.version += 1;

        polyak_update(&self.policy.actor, &mut self.target_actor, self.config.polyak)?;
        polyak_update(&self.critic, &mut self.target_critic, self.config.polyak)?;
        Ok(UpdateStats {
            critic_loss,
            actor_loss,
            mean_q,
        })
    }
}

fn concat(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    concatenate(Axis(1), &[a, b]).map_err(|e| Error::InvalidArgument(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replay::test_support::line_episode;
    use crate::seeded_rng;
    use std::sync::Arc;

    fn tiny_config() -> AgentConfig {
        AgentConfig {
            hidden_sizes: vec![8, 8],
            ..AgentConfig::default()
        }
    }

    fn tiny_agent(seed: u64) -> ActorCritic {
        ActorCritic::new(1, 1, 1, tiny_config(), &mut seeded_rng(seed)).unwrap()
    }

    fn batch_of(ep: &Arc<Episode>, n: usize) -> Vec<SampledTransition> {
        (0..n).map(|i| SampledTransition::new(Arc::clone(ep), i % ep.len())).collect()
    }

    #[test]
    fn q_bounds_with_intrinsic_reward() {
        let (lo, hi) = q_target_bounds(0.98, 0.8);
        assert!((lo + 50.0).abs() < 1e-9);
        assert!((hi - 40.0).abs() < 1e-9);
    }

    #[test]
    fn deterministic_actions_stay_in_bounds() {
        let agent = tiny_agent(0);
        let mut rng = seeded_rng(1);
        for _ in 0..200 {
            let obs = GoalObservation {
                observation: vec![rng.random_range(-50.0..50.0)],
                achieved_goal: vec![0.0],
                desired_goal: vec![rng.random_range(-50.0..50.0)],
            };
            let a = select_action(&agent.policy, &obs, true, None, &mut rng).unwrap();
            assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
            let e = select_action(&agent.policy, &obs, false, Some(&agent.config.exploration), &mut rng).unwrap();
            assert!(e.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn real_bit_is_a_genuine_input() {
        let mut agent = tiny_agent(2);
        let bit_column = agent.policy.input_dim() - 1;
        agent.policy.actor.layers_mut()[0].weights.column_mut(bit_column).fill(3.0);
        let obs = GoalObservation {
            observation: vec![0.2],
            achieved_goal: vec![0.0],
            desired_goal: vec![0.5],
        };
        let real = agent.policy.act(&obs, 1.0).unwrap();
        let imag = agent.policy.act(&obs, 0.0).unwrap();
        assert_ne!(real, imag);
    }

    #[test]
    fn normalizers_ignore_imaginary_episodes() {
        let mut agent = tiny_agent(3);
        let before = agent.policy.clone();
        agent.update_normalizers(&line_episode(5, 0.0, 1.0, 1, false));
        assert_eq!(agent.policy, before);
        agent.update_normalizers(&line_episode(5, 0.0, 1.0, 1, true));
        assert_eq!(agent.policy.obs_norm.count, 6);
        assert_eq!(agent.policy.goal_norm.count, 10);
    }

    #[test]
    fn zero_reward_and_zero_target_critic_gives_zero_target() {
        let mut agent = tiny_agent(4);
        for l in agent.target_critic.layers_mut() {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
        let ep = Arc::new(line_episode(1, 0.0, 0.1, 1, true));
        let batch = batch_of(&ep, 8);
        assert!(batch.iter().all(|s| s.total_reward() == 0.0));
        let b = agent.batch_inputs(&batch).unwrap();
        assert!(agent.critic_targets(&b).unwrap().iter().all(|&y| y == 0.0));
    }

    #[test]
    fn targets_are_clipped() {
        let mut agent = tiny_agent(5);
        let last = agent.target_critic.layers().len() - 1;
        agent.target_critic.layers_mut()[last].bias.fill(1e6);
        let ep = Arc::new(line_episode(4, 0.0, 5.0, 1, true));
        let b = agent.batch_inputs(&batch_of(&ep, 4)).unwrap();
        let (_, hi) = agent.q_bounds();
        assert!(agent.critic_targets(&b).unwrap().iter().all(|&y| y == hi));
        agent.target_critic.layers_mut()[last].bias.fill(-1e6);
        let (lo, _) = agent.q_bounds();
        assert!(agent.critic_targets(&b).unwrap().iter().all(|&y| y == lo));
    }

    #[test]
    fn no_distinguish_forces_the_bit() {
        let mut agent = tiny_agent(6);
        agent.config.distinguish_real = false;
        let ep = Arc::new(line_episode(3, 0.0, 5.0, 1, false));
        let b = agent.batch_inputs(&batch_of(&ep, 3)).unwrap();
        assert!(b.inputs.column(2).iter().all(|&v| v == 1.0));
        agent.config.distinguish_real = true;
        let b = agent.batch_inputs(&batch_of(&ep, 3)).unwrap();
        assert!(b.inputs.column(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn update_is_deterministic_and_moves_targets() {
        let ep = Arc::new(line_episode(10, 0.0, 0.5, 1, true));
        let run = || {
            let mut agent = tiny_agent(7);
            agent.update_normalizers(&ep);
            let before = agent.target_actor.clone();
            let stats = agent.update(&batch_of(&ep, 10)).unwrap();
            assert_ne!(agent.target_actor, before);
            (agent, stats)
        };
        let (a1, s1) = run();
        let (a2, s2) = run();
        assert_eq!(a1, a2);
        assert_eq!(s1, s2);
        assert_eq!(a1.policy.version, 1);
    }

    #[test]
    fn repeated_polyak_converges_to_main() {
        let main = tiny_agent(8).critic;
        let mut target = tiny_agent(9).critic;
        for _ in 0..1000 {
            polyak_update(&main, &mut target, 0.95).unwrap();
        }
        for (t, m) in target.layers().iter().zip(main.layers()) {
            for (a, b) in t.weights.iter().zip(m.weights.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
