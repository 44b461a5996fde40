//! The epoch loop: real collection, model training, regeneration, cycles
//! of imaginary collection and policy updates, snapshots, evaluation.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};

use crate::agent::{explore_action, ActorCritic, Policy};
use crate::curiosity::augment_batch_rewards;
use crate::dynamics::{train_models, EnsembleModel};
use crate::envs::{is_success, EnvParams, GoalObservation, Task};
use crate::error::{check_dim, Result};
use crate::imagination::{
    regenerate_imag_buffer, rollout_imaginary, snapshot_policy, ImagRolloutRequest, ImagSetting,
    PolicySnapshotStore,
};
use crate::replay::{dual_sample, her_relabel, imaginary_fraction, Episode, EpisodeBuffer, Transition};
use crate::SeededRng;

use super::checkpoint::save_checkpoint;
use super::config::TrainConfig;
use super::metrics::{write_metrics_csv, MetricsRow};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.txt";

/// How often each model-side component ran.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct InvocationCounts {
    pub model_training: u64,
    pub regenerations: u64,
    pub imaginary_rollouts: u64,
    pub intrinsic_batches: u64,
    /// Imaginary transitions that reached a policy update.
    pub imaginary_samples: u64,
    pub real_samples: u64,
}

/// Anything that maps an observation to an action.
pub trait Controller {
    fn act(&self, obs: &GoalObservation) -> Result<Vec<f64>>;

    fn act_many(&self, obs: &[GoalObservation]) -> Result<Vec<Vec<f64>>> {
        obs.iter().map(|o| self.act(o)).collect()
    }
}

/// The deterministic actor, told it is in the real environment.
impl Controller for Policy {
    fn act(&self, obs: &GoalObservation) -> Result<Vec<f64>> {
        Policy::act(self, obs, 1.0)
    }

    fn act_many(&self, obs: &[GoalObservation]) -> Result<Vec<Vec<f64>>> {
        let o: Vec<&[f64]> = obs.iter().map(|g| g.observation.as_slice()).collect();
        let g: Vec<&[f64]> = obs.iter().map(|g| g.desired_goal.as_slice()).collect();
        let bits = vec![1.0; obs.len()];
        let a = self.act_batch(&o, &g, &bits)?;
        Ok(a.rows().into_iter().map(|r| r.to_vec()).collect())
    }
}

/// Wraps a plain function as a [`Controller`].
pub struct FnController<F>(pub F);

impl<F: Fn(&GoalObservation) -> Vec<f64>> Controller for FnController<F> {
    fn act(&self, obs: &GoalObservation) -> Result<Vec<f64>> {
        Ok((self.0)(obs))
    }
}

/// Success rate of `controller` over `n_episodes` episodes whose reset
/// seeds are drawn from `seed`. Success is judged at the final step.
pub fn evaluate(
    controller: &dyn Controller,
    task: Task,
    params: &EnvParams,
    n_episodes: usize,
    seed: u64,
) -> Result<f64> {
    if n_episodes == 0 {
        return Ok(0.0);
    }
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut envs: Vec<_> = (0..n_episodes).map(|_| task.make_env(params)).collect();
    let mut obs: Vec<GoalObservation> = envs.iter_mut().map(|e| e.reset(rng.random())).collect();
    for _ in 0..params.episode_length {
        let actions = controller.act_many(&obs)?;
        check_dim("controller action rows", n_episodes, actions.len())?;
        for ((env, o), a) in envs.iter_mut().zip(obs.iter_mut()).zip(&actions) {
            *o = env.step(a)?.observation;
        }
    }
    let mut successes = 0usize;
    for o in &obs {
        if is_success(&o.achieved_goal, &o.desired_goal, params.success_tolerance)? {
            successes += 1;
        }
    }
    Ok(successes as f64 / n_episodes as f64)
}

/// Evaluation seed for `epoch`, independent of the training stream.
pub fn eval_seed(master_seed: u64, epoch: u32) -> u64 {
    let mut rng = SeededRng::seed_from_u64(master_seed);
    rng.set_stream(1 + epoch as u64);
    rng.random()
}

/// Complete training state. Everything needed to resume lives here.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub(crate) config: TrainConfig,
    pub(crate) agent: ActorCritic,
    pub(crate) ensemble: Option<EnsembleModel>,
    pub(crate) real: EpisodeBuffer,
    pub(crate) imag: EpisodeBuffer,
    pub(crate) snapshots: PolicySnapshotStore,
    pub(crate) rng: SeededRng,
    pub(crate) epoch: u32,
    pub(crate) cycle: u64,
    pub(crate) counts: InvocationCounts,
    pub(crate) history: Vec<MetricsRow>,
    /// Seconds of training before this process (resumed runs).
    pub(crate) elapsed_before: f64,
    pub(crate) started: Instant,
}

impl Trainer {
    /// Builds a fresh trainer. The config is fully validated first.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::seed_from_u64(config.seed);
        let spec = config.task.spec(&config.env_params());
        let agent = ActorCritic::new(
            spec.obs_dim,
            spec.goal_dim,
            spec.action_dim,
            config.agent_config(),
            &mut rng,
        )?;
        let ensemble = if config.uses_model() {
            Some(EnsembleModel::new(
                spec.obs_dim,
                spec.action_dim,
                &config.ensemble_config(),
                &mut rng,
            )?)
        } else {
            None
        };
        Ok(Trainer {
            real: EpisodeBuffer::new(config.real_capacity, config.episode_length)?,
            imag: EpisodeBuffer::new(config.imag_capacity, config.episode_length)?,
            snapshots: PolicySnapshotStore::new(config.snapshot_cadence),
            agent,
            ensemble,
            rng,
            epoch: 0,
            cycle: 0,
            counts: InvocationCounts::default(),
            history: Vec::new(),
            elapsed_before: 0.0,
            started: Instant::now(),
            config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn agent(&self) -> &ActorCritic {
        &self.agent
    }

    pub fn policy(&self) -> &Policy {
        &self.agent.policy
    }

    pub fn ensemble(&self) -> Option<&EnsembleModel> {
        self.ensemble.as_ref()
    }

    pub fn real_buffer(&self) -> &EpisodeBuffer {
        &self.real
    }

    pub fn imag_buffer(&self) -> &EpisodeBuffer {
        &self.imag
    }

    pub fn snapshots(&self) -> &PolicySnapshotStore {
        &self.snapshots
    }

    pub fn epochs_done(&self) -> u32 {
        self.epoch
    }

    pub fn cycles_done(&self) -> u64 {
        self.cycle
    }

    pub fn counts(&self) -> InvocationCounts {
        self.counts
    }

    pub fn history(&self) -> &[MetricsRow] {
        &self.history
    }

    pub fn is_finished(&self) -> bool {
        self.epoch as usize >= self.config.epochs
    }

    /// Observations that started the stored real episodes.
    pub fn real_initial_states(&self) -> Vec<Vec<f64>> {
        self.real
            .episodes()
            .map(|e| e.initial_observation().observation.clone())
            .collect()
    }

    /// Success rate of the current policy with this run's evaluation seed
    /// for `epoch`.
    pub fn evaluate_policy(&self, episodes: usize, epoch: u32) -> Result<f64> {
        evaluate(
            &self.agent.policy,
            self.config.task,
            &self.config.env_params(),
            episodes,
            eval_seed(self.config.seed, epoch),
        )
    }

    fn imag_template(&self, epoch: u32) -> ImagRolloutRequest {
        ImagRolloutRequest {
            episode_count: self.config.imag_episodes,
            exploration: Some(self.config.exploration()),
            env_is_real_input: !self.config.distinguishes_real(),
            flip_fraction: self.config.effective_flip_fraction(),
            epoch,
        }
    }

    /// Collects one real episode with exploration. With probability
    /// `flip_fraction` the policy is fed `env_is_real = 0` for the whole
    /// episode; the stored transitions are always tagged real.
    fn collect_real_episode(&mut self, epoch: u32) -> Result<Episode> {
        let params = self.config.env_params();
        let mut env = self.config.task.make_env(&params);
        let reset_seed: u64 = self.rng.random();
        let flipped = self.rng.random::<f64>() < self.config.effective_flip_fraction();
        let bit = if flipped { 0.0 } else { 1.0 };
        let exploration = self.config.exploration();
        let policy = &self.agent.policy;
        let mut obs = env.reset(reset_seed);
        let mut transitions = Vec::with_capacity(params.episode_length);
        for _ in 0..params.episode_length {
            let det = policy.act(&obs, bit)?;
            let action = explore_action(&det, &exploration, &mut self.rng);
            let step = env.step(&action)?;
            transitions.push(Transition {
                obs: std::mem::replace(&mut obs, step.observation.clone()),
                action,
                next_obs: step.observation,
                extrinsic_reward: step.reward,
                is_real: true,
                epoch_collected: epoch,
            });
        }
        Ok(Episode {
            transitions,
            policy_version: policy.version,
        })
    }

    /// Runs one full epoch and returns its metrics row.
    pub fn run_epoch(&mut self) -> Result<MetricsRow> {
        let epoch = self.epoch + 1;
        let cfg = self.config.clone();

        for _ in 0..cfg.real_episodes {
            let episode = self.collect_real_episode(epoch)?;
            self.agent.update_normalizers(&episode);
            self.real.store_episode(episode)?;
        }

        let initial_states = self.real_initial_states();
        let setting = ImagSetting {
            task: cfg.task,
            episode_length: cfg.episode_length,
            success_tolerance: cfg.success_tolerance,
            initial_states: &initial_states,
        };
        let template = self.imag_template(epoch);

        let mut model_loss = f64::NAN;
        if let Some(ensemble) = self.ensemble.as_mut() {
            let report = train_models(
                ensemble,
                &self.real,
                cfg.model_steps,
                cfg.model_batch_size,
                epoch,
                cfg.bias,
                &mut self.rng,
            )?;
            self.counts.model_training += 1;
            model_loss = report.mean_loss_end;
            if cfg.regenerates() {
                regenerate_imag_buffer(
                    ensemble,
                    &mut self.imag,
                    &self.snapshots,
                    &self.agent.policy,
                    cfg.cycles * cfg.imag_episodes,
                    &setting,
                    &template,
                    &mut self.rng,
                )?;
                self.counts.regenerations += 1;
            }
        }

        let curiosity = cfg.curiosity();
        let mut intrinsic_total = 0.0;
        let mut intrinsic_batches = 0usize;
        for _ in 0..cfg.cycles {
            if let Some(ensemble) = self.ensemble.as_ref() {
                let rollout = rollout_imaginary(
                    ensemble,
                    &self.agent.policy,
                    &setting,
                    &template,
                    &mut self.rng,
                )?;
                self.counts.imaginary_rollouts += 1;
                for episode in rollout.episodes {
                    self.imag.store_episode(episode)?;
                }
            }
            for _ in 0..cfg.batches {
                let mut batch = match self.ensemble {
                    Some(_) => dual_sample(&self.real, &self.imag, cfg.batch_size, &mut self.rng)?,
                    None => self.real.sample(cfg.batch_size, &mut self.rng)?,
                };
                her_relabel(&mut batch, cfg.replay_k, cfg.success_tolerance, &mut self.rng)?;
                if let Some(ensemble) = self.ensemble.as_ref() {
                    intrinsic_total += augment_batch_rewards(&mut batch, ensemble, &curiosity)?;
                    intrinsic_batches += 1;
                    self.counts.intrinsic_batches += 1;
                }
                let n_real = batch.iter().filter(|t| t.is_real()).count() as u64;
                self.counts.real_samples += n_real;
                self.counts.imaginary_samples += batch.len() as u64 - n_real;
                self.agent.update(&batch)?;
            }
            self.cycle += 1;
            if self.ensemble.is_some() {
                snapshot_policy(&mut self.snapshots, &self.agent.policy, self.cycle);
            }
        }

        self.epoch = epoch;
        let success = self.evaluate_policy(cfg.eval_episodes, epoch)?;
        let row = MetricsRow {
            epoch,
            real_steps_total: self.real.lifetime_transitions(),
            imag_steps_total: self.imag.lifetime_transitions(),
            eval_success_rate: success,
            mean_intrinsic_reward: if intrinsic_batches > 0 {
                intrinsic_total / intrinsic_batches as f64
            } else {
                0.0
            },
            model_loss,
            p_imag: if self.ensemble.is_some() {
                imaginary_fraction(self.real.lifetime_transitions(), self.imag.lifetime_transitions())
            } else {
                0.0
            },
            wall_clock_seconds: if cfg.wall_clock {
                self.elapsed_before + self.started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        self.history.push(row.clone());
        Ok(row)
    }

    /// Runs the remaining epochs, calling `on_epoch` after each. Stops
    /// early when `on_epoch` returns false.
    pub fn run_with<F: FnMut(&Trainer, &MetricsRow) -> bool>(&mut self, mut on_epoch: F) -> Result<()> {
        while !self.is_finished() {
            let row = self.run_epoch()?;
            if !on_epoch(self, &row) {
                break;
            }
        }
        Ok(())
    }

    /// Seconds since this trainer was built or restored, plus any time
    /// carried over from a checkpoint.
    pub fn elapsed_seconds(&self) -> f64 {
        self.elapsed_before + self.started.elapsed().as_secs_f64()
    }
}

/// Result of [`train`].
pub struct TrainOutcome {
    pub history: Vec<MetricsRow>,
    pub trainer: Trainer,
}

/// Trains for `config.epochs` epochs. With `out`, writes the config, the
/// metrics CSV and the final checkpoint there.
pub fn train(config: TrainConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(CONFIG_FILE), trainer.config.to_text())?;
    }
    while !trainer.is_finished() {
        trainer.run_epoch()?;
        if let Some(dir) = out {
            write_metrics_csv(&dir.join(METRICS_FILE), trainer.history())?;
        }
    }
    if let Some(dir) = out {
        save_checkpoint(&trainer, &dir.join(CHECKPOINT_FILE))?;
    }
    Ok(TrainOutcome {
        history: trainer.history.clone(),
        trainer,
    })
}

/// Trains `config` with `ablation` applied.
pub fn run_ablation(mut config: TrainConfig, ablation: &str, out: Option<&Path>) -> Result<TrainOutcome> {
    config.ablation = ablation.parse()?;
    train(config, out)
}
