//! Training configuration and its flat `key = value` file format.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::agent::{AgentConfig, Exploration};
use crate::curiosity::{CuriosityConfig, DisagreementSpace};
use crate::dynamics::{EnsembleConfig, DEFAULT_STD_FLOOR};
use crate::envs::{EnvParams, Task, DEFAULT_EPISODE_LENGTH, DEFAULT_SUCCESS_TOLERANCE};
use crate::error::{Error, Result};
use crate::imagination::DEFAULT_SNAPSHOT_CADENCE;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algo {
    /// Full method: model, imagination, curiosity, real/imaginary bit.
    Iher,
    /// HER-DDPG on real data only.
    Her,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Iher => "iher",
            Algo::Her => "her",
        }
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iher" => Ok(Algo::Iher),
            "her" => Ok(Algo::Her),
            _ => Err(Error::Config(format!("unknown algo '{s}' (valid: iher, her)"))),
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    None,
    /// The real/imaginary bit is fed as 1 everywhere.
    NoDistinguish,
    /// The imaginary buffer is never regenerated.
    NoRegen,
    /// Intrinsic reward scale forced to 0.
    NoIntrinsic,
}

impl Ablation {
    pub const VALID: [&'static str; 4] = ["none", "no_distinguish", "no_regen", "no_intrinsic"];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoDistinguish => "no_distinguish",
            Ablation::NoRegen => "no_regen",
            Ablation::NoIntrinsic => "no_intrinsic",
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Ablation::None),
            "no_distinguish" => Ok(Ablation::NoDistinguish),
            "no_regen" => Ok(Ablation::NoRegen),
            "no_intrinsic" => Ok(Ablation::NoIntrinsic),
            _ => Err(Error::Config(format!(
                "unknown ablation '{s}' (valid: {})",
                Ablation::VALID.join(", ")
            ))),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Every knob of the training loop. Buffer capacities are in episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub task: Task,
    pub algo: Algo,
    pub ablation: Ablation,
    pub seed: u64,
    pub epochs: usize,
    pub cycles: usize,
    pub batches: usize,
    pub real_episodes: usize,
    pub imag_episodes: usize,
    pub model_steps: usize,
    pub ensemble_size: usize,
    pub bias: f64,
    pub intrinsic_scale: f64,
    pub intrinsic_clip: f64,
    pub curiosity_space: DisagreementSpace,
    pub replay_k: usize,
    pub real_capacity: usize,
    pub imag_capacity: usize,
    pub snapshot_cadence: u64,
    pub flip_fraction: f64,
    pub gamma: f64,
    pub polyak: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub model_lr: f64,
    pub batch_size: usize,
    pub model_batch_size: usize,
    pub random_eps: f64,
    pub noise_std: f64,
    pub action_l2: f64,
    pub clip_obs: f64,
    pub hidden_sizes: Vec<usize>,
    pub model_hidden: Vec<usize>,
    pub eval_episodes: usize,
    pub episode_length: usize,
    pub success_tolerance: f64,
    /// Record elapsed seconds in the metrics; off gives byte-stable CSVs.
    pub wall_clock: bool,
}

impl TrainConfig {
    /// Desk-scale defaults for `task`.
    pub fn for_task(task: Task) -> Self {
        let agent = AgentConfig::default();
        let (epochs, real_episodes, model_steps) = match task {
            Task::PointReach => (30, 2, 50),
            Task::PointPush | Task::PointSlide => (50, 8, 300),
        };
        TrainConfig {
            task,
            algo: Algo::Iher,
            ablation: Ablation::None,
            seed: 0,
            epochs,
            cycles: 50,
            batches: 40,
            real_episodes,
            imag_episodes: 2,
            model_steps,
            ensemble_size: 5,
            bias: 2.0,
            intrinsic_scale: 0.5,
            intrinsic_clip: 0.8,
            curiosity_space: DisagreementSpace::Normalized,
            replay_k: 4,
            real_capacity: 20_000,
            imag_capacity: 20_000,
            snapshot_cadence: DEFAULT_SNAPSHOT_CADENCE,
            flip_fraction: 0.1,
            gamma: agent.gamma,
            polyak: agent.polyak,
            actor_lr: agent.actor_lr,
            critic_lr: agent.critic_lr,
            model_lr: 1e-3,
            batch_size: 256,
            model_batch_size: 512,
            random_eps: agent.exploration.random_eps,
            noise_std: agent.exploration.noise_std,
            action_l2: agent.action_l2,
            clip_obs: agent.clip_obs,
            hidden_sizes: agent.hidden_sizes,
            model_hidden: EnsembleConfig::default().hidden_sizes,
            eval_episodes: 50,
            episode_length: DEFAULT_EPISODE_LENGTH,
            success_tolerance: DEFAULT_SUCCESS_TOLERANCE,
            wall_clock: true,
        }
    }

    /// Reads a config file. A `task` key, if present, selects the defaults
    /// the remaining keys override.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_task(text, None)
    }

    /// Like [`TrainConfig::parse`], but `task` (when given) replaces the
    /// file's task before the defaults are chosen.
    pub fn parse_with_task(text: &str, task: Option<Task>) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let task = match (task, pairs.iter().find(|(k, _)| k == "task")) {
            (Some(t), _) => t,
            (None, Some((_, v))) => v.parse::<Task>().map_err(|e| Error::Config(e.to_string()))?,
            (None, None) => Task::PointReach,
        };
        let mut config = TrainConfig::for_task(task);
        for (key, value) in pairs.iter().filter(|(k, _)| k != "task") {
            config.set(key, value)?;
        }
        Ok(config)
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "task" => self.task = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "algo" => self.algo = v.parse()?,
            "ablation" => self.ablation = v.parse()?,
            "seed" => self.seed = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "cycles" => self.cycles = num(key, v)?,
            "batches" => self.batches = num(key, v)?,
            "real_episodes" => self.real_episodes = num(key, v)?,
            "imag_episodes" => self.imag_episodes = num(key, v)?,
            "model_steps" => self.model_steps = num(key, v)?,
            "ensemble_size" => self.ensemble_size = num(key, v)?,
            "bias" => self.bias = num(key, v)?,
            "intrinsic_scale" => self.intrinsic_scale = num(key, v)?,
            "intrinsic_clip" => self.intrinsic_clip = num(key, v)?,
            "curiosity_space" => {
                self.curiosity_space = DisagreementSpace::from_name(v)
                    .ok_or_else(|| Error::Config(format!("curiosity_space: expected normalized or raw, got '{v}'")))?
            }
            "replay_k" => self.replay_k = num(key, v)?,
            "real_capacity" => self.real_capacity = num(key, v)?,
            "imag_capacity" => self.imag_capacity = num(key, v)?,
            "snapshot_cadence" => self.snapshot_cadence = num(key, v)?,
            "flip_fraction" => self.flip_fraction = num(key, v)?,
            "gamma" => self.gamma = num(key, v)?,
            "polyak" => self.polyak = num(key, v)?,
            "actor_lr" => self.actor_lr = num(key, v)?,
            "critic_lr" => self.critic_lr = num(key, v)?,
            "model_lr" => self.model_lr = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "model_batch_size" => self.model_batch_size = num(key, v)?,
            "random_eps" => self.random_eps = num(key, v)?,
            "noise_std" => self.noise_std = num(key, v)?,
            "action_l2" => self.action_l2 = num(key, v)?,
            "clip_obs" => self.clip_obs = num(key, v)?,
            "hidden_sizes" => self.hidden_sizes = sizes(key, v)?,
            "model_hidden" => self.model_hidden = sizes(key, v)?,
            "eval_episodes" => self.eval_episodes = num(key, v)?,
            "episode_length" => self.episode_length = num(key, v)?,
            "success_tolerance" => self.success_tolerance = num(key, v)?,
            "wall_clock" => self.wall_clock = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Collects every violated constraint into one error.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let counts = [
            ("epochs", self.epochs),
            ("cycles", self.cycles),
            ("batches", self.batches),
            ("real_episodes", self.real_episodes),
            ("imag_episodes", self.imag_episodes),
            ("model_steps", self.model_steps),
            ("ensemble_size", self.ensemble_size),
            ("real_capacity", self.real_capacity),
            ("imag_capacity", self.imag_capacity),
            ("batch_size", self.batch_size),
            ("model_batch_size", self.model_batch_size),
            ("eval_episodes", self.eval_episodes),
            ("episode_length", self.episode_length),
        ];
        for (name, value) in counts {
            if value == 0 {
                problems.push(format!("{name} must be positive"));
            }
        }
        if self.snapshot_cadence == 0 {
            problems.push("snapshot_cadence must be positive".into());
        }
        if self.hidden_sizes.contains(&0) || self.model_hidden.contains(&0) {
            problems.push("hidden layer widths must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.flip_fraction) {
            problems.push(format!("flip_fraction must be in [0, 1], got {}", self.flip_fraction));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            problems.push(format!("gamma must be in (0, 1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.polyak) {
            problems.push(format!("polyak must be in [0, 1], got {}", self.polyak));
        }
        if !(0.0..=1.0).contains(&self.random_eps) {
            problems.push(format!("random_eps must be in [0, 1], got {}", self.random_eps));
        }
        if !(self.noise_std >= 0.0) {
            problems.push(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        if !(self.bias >= 1.0) {
            problems.push(format!("bias must be >= 1, got {}", self.bias));
        }
        for (name, lr) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("model_lr", self.model_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                problems.push(format!("{name} must be positive, got {lr}"));
            }
        }
        if !(self.success_tolerance > 0.0) {
            problems.push("success_tolerance must be positive".into());
        }
        if !(self.clip_obs > 0.0) {
            problems.push("clip_obs must be positive".into());
        }
        if !(self.action_l2 >= 0.0) {
            problems.push("action_l2 must be >= 0".into());
        }
        if let Err(e) = self.curiosity().validate() {
            problems.push(e.to_string());
        }
        if self.algo == Algo::Her && self.ablation != Ablation::None {
            problems.push(format!("ablation {} only applies to algo iher", self.ablation));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn uses_model(&self) -> bool {
        self.algo == Algo::Iher
    }

    pub fn env_params(&self) -> EnvParams {
        EnvParams {
            episode_length: self.episode_length,
            success_tolerance: self.success_tolerance,
        }
    }

    /// Curiosity settings after the algorithm and ablation are applied.
    pub fn curiosity(&self) -> CuriosityConfig {
        let scale = if self.algo == Algo::Her || self.ablation == Ablation::NoIntrinsic {
            0.0
        } else {
            self.intrinsic_scale
        };
        CuriosityConfig {
            scale,
            clip: self.intrinsic_clip,
            space: self.curiosity_space,
        }
    }

    /// Whether the policy sees a real/imaginary bit that can be 0.
    pub fn distinguishes_real(&self) -> bool {
        self.algo == Algo::Iher && self.ablation != Ablation::NoDistinguish
    }

    /// Probability of feeding the opposite bit during collection.
    pub fn effective_flip_fraction(&self) -> f64 {
        if self.distinguishes_real() {
            self.flip_fraction
        } else {
            0.0
        }
    }

    pub fn regenerates(&self) -> bool {
        self.algo == Algo::Iher && self.ablation != Ablation::NoRegen
    }

    pub fn agent_config(&self) -> AgentConfig {
        let curiosity = self.curiosity();
        AgentConfig {
            hidden_sizes: self.hidden_sizes.clone(),
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            gamma: self.gamma,
            polyak: self.polyak,
            action_l2: self.action_l2,
            clip_obs: self.clip_obs,
            exploration: self.exploration(),
            max_intrinsic_reward: if curiosity.scale > 0.0 { curiosity.clip } else { 0.0 },
            distinguish_real: self.distinguishes_real(),
        }
    }

    pub fn exploration(&self) -> Exploration {
        Exploration {
            random_eps: self.random_eps,
            noise_std: self.noise_std,
        }
    }

    pub fn ensemble_config(&self) -> EnsembleConfig {
        EnsembleConfig {
            ensemble_size: self.ensemble_size,
            hidden_sizes: self.model_hidden.clone(),
            learning_rate: self.model_lr,
            std_floor: DEFAULT_STD_FLOOR,
        }
    }

    /// Writes the config in the format [`TrainConfig::parse`] reads.
    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        line("task", self.task.name().into());
        line("algo", self.algo.name().into());
        line("ablation", self.ablation.name().into());
        line("seed", self.seed.to_string());
        line("epochs", self.epochs.to_string());
        line("cycles", self.cycles.to_string());
        line("batches", self.batches.to_string());
        line("real_episodes", self.real_episodes.to_string());
        line("imag_episodes", self.imag_episodes.to_string());
        line("model_steps", self.model_steps.to_string());
        line("ensemble_size", self.ensemble_size.to_string());
        line("bias", float(self.bias));
        line("intrinsic_scale", float(self.intrinsic_scale));
        line("intrinsic_clip", float(self.intrinsic_clip));
        line("curiosity_space", self.curiosity_space.name().into());
        line("replay_k", self.replay_k.to_string());
        line("real_capacity", self.real_capacity.to_string());
        line("imag_capacity", self.imag_capacity.to_string());
        line("snapshot_cadence", self.snapshot_cadence.to_string());
        line("flip_fraction", float(self.flip_fraction));
        line("gamma", float(self.gamma));
        line("polyak", float(self.polyak));
        line("actor_lr", float(self.actor_lr));
        line("critic_lr", float(self.critic_lr));
        line("model_lr", float(self.model_lr));
        line("batch_size", self.batch_size.to_string());
        line("model_batch_size", self.model_batch_size.to_string());
        line("random_eps", float(self.random_eps));
        line("noise_std", float(self.noise_std));
        line("action_l2", float(self.action_l2));
        line("clip_obs", float(self.clip_obs));
        line("hidden_sizes", join(&self.hidden_sizes));
        line("model_hidden", join(&self.model_hidden));
        line("eval_episodes", self.eval_episodes.to_string());
        line("episode_length", self.episode_length.to_string());
        line("success_tolerance", float(self.success_tolerance));
        line("wall_clock", self.wall_clock.to_string());
        out
    }
}

/// `{:?}` prints the shortest string that parses back to the same bits.
fn float(v: f64) -> String {
    format!("{v:?}")
}

fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", no + 1)))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", no + 1)));
        }
        if pairs.iter().any(|(k, _)| k == key) {
            return Err(Error::Config(format!("line {}: duplicate key '{key}'", no + 1)));
        }
        pairs.push((key.to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    v.parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse '{v}': {e}")))
}

fn sizes(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|p| num(key, p.trim())).collect()
}
