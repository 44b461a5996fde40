//! Binary checkpoints.
//!
//! Layout (all integers little-endian, floats as IEEE-754 bit patterns):
//!
//! ```text
//! "IHER1"
//! repeated: [u16 name length][name bytes][u64 payload length][payload]
//! [32-byte SHA-256 of every preceding byte]
//! ```
//!
//! Sections: `config` (the text config), `counters`, `rng`, `agent`,
//! `ensemble` (model runs only), `real_buffer`, `imag_buffer`,
//! `snapshots`, `history`. Unknown sections are skipped on load.
//! Vectors are a `u64` length followed by their elements; strings are
//! UTF-8 with a `u64` length.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use sha2::{Digest, Sha256};

use crate::agent::{ActorCritic, Policy, RunningNormalizer};
use crate::diffnet::{Activation, AdamState, Dense, Mlp};
use crate::dynamics::{EnsembleModel, Normalizer};
use crate::envs::{GoalObservation, Task};
use crate::error::{Error, Result};
use crate::imagination::{PolicySnapshot, PolicySnapshotStore};
use crate::replay::{Episode, EpisodeBuffer, Transition};
use crate::SeededRng;

use super::config::TrainConfig;
use super::metrics::MetricsRow;
use super::trainer::{InvocationCounts, Trainer};

pub const MAGIC: &[u8; 5] = b"IHER1";
const DIGEST_LEN: usize = 32;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn bool(&mut self, v: bool) {
        self.u8(v as u8);
    }
    fn bytes(&mut self, v: &[u8]) {
        self.len(v.len());
        self.buf.extend_from_slice(v);
    }
    fn str(&mut self, v: &str) {
        self.bytes(v.as_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.len(v.len());
        for x in v {
            self.f64(*x);
        }
    }
    fn dense(&mut self, d: &Dense) {
        self.len(d.weights.nrows());
        self.len(d.weights.ncols());
        for x in d.weights.iter() {
            self.f64(*x);
        }
        for x in d.bias.iter() {
            self.f64(*x);
        }
    }
    fn denses(&mut self, ds: &[Dense]) {
        self.len(ds.len());
        for d in ds {
            self.dense(d);
        }
    }
    fn mlp(&mut self, m: &Mlp) {
        self.str(m.hidden_activation().name());
        self.str(m.output_activation().name());
        self.denses(m.layers());
    }
    fn adam(&mut self, a: &AdamState) {
        self.denses(&a.first_moment);
        self.denses(&a.second_moment);
        self.u64(a.step_count);
        self.f64(a.learning_rate);
        self.f64(a.beta1);
        self.f64(a.beta2);
        self.f64(a.epsilon);
    }
    fn running(&mut self, n: &RunningNormalizer) {
        self.f64s(&n.sum);
        self.f64s(&n.sumsq);
        self.u64(n.count);
        self.f64(n.eps);
        self.f64(n.clip_range);
    }
    fn policy(&mut self, p: &Policy) {
        self.mlp(&p.actor);
        self.running(&p.obs_norm);
        self.running(&p.goal_norm);
        self.u64(p.version);
    }
    fn normalizer(&mut self, n: &Normalizer) {
        self.f64s(&n.mean);
        self.f64s(&n.std);
    }
    fn goal_obs(&mut self, o: &GoalObservation) {
        self.f64s(&o.observation);
        self.f64s(&o.achieved_goal);
        self.f64s(&o.desired_goal);
    }
    fn buffer(&mut self, b: &EpisodeBuffer) {
        self.u64(b.capacity() as u64);
        self.u64(b.episode_length() as u64);
        self.u64(b.first_index());
        self.u64(b.lifetime_transitions());
        self.len(b.episode_count());
        for ep in b.episodes() {
            self.u64(ep.policy_version);
            self.len(ep.transitions.len());
            for t in &ep.transitions {
                self.goal_obs(&t.obs);
                self.f64s(&t.action);
                self.goal_obs(&t.next_obs);
                self.f64(t.extrinsic_reward);
                self.bool(t.is_real);
                self.u32(t.epoch_collected);
            }
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    section: &'a str,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8], section: &'a str) -> Self {
        Reader { data, pos: 0, section }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "section '{}' is truncated at byte {}",
                self.section, self.pos
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        if n as usize > self.data.len() - self.pos {
            return Err(self.bad(format!("length {n} exceeds the remaining data")));
        }
        Ok(n as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(self.bad(format!("invalid flag byte {v}"))),
        }
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }
    fn str(&mut self) -> Result<&'a str> {
        let b = self.bytes()?;
        std::str::from_utf8(b).map_err(|_| self.bad("invalid UTF-8".into()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn dense(&mut self) -> Result<Dense> {
        let rows = self.len()?;
        let cols = self.len()?;
        let weights = (0..rows * cols).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        let bias = (0..rows).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Dense {
            weights: Array2::from_shape_vec((rows, cols), weights).map_err(|e| self.bad(e.to_string()))?,
            bias: Array1::from(bias),
        })
    }
    fn denses(&mut self) -> Result<Vec<Dense>> {
        let n = self.len()?;
        (0..n).map(|_| self.dense()).collect()
    }
    fn activation(&mut self) -> Result<Activation> {
        let name = self.str()?;
        Activation::from_name(name).ok_or_else(|| self.bad(format!("unknown activation '{name}'")))
    }
    fn mlp(&mut self) -> Result<Mlp> {
        let hidden = self.activation()?;
        let output = self.activation()?;
        let layers = self.denses()?;
        Mlp::from_layers(layers, hidden, output).map_err(|e| self.bad(e.to_string()))
    }
    fn adam(&mut self) -> Result<AdamState> {
        Ok(AdamState {
            first_moment: self.denses()?,
            second_moment: self.denses()?,
            step_count: self.u64()?,
            learning_rate: self.f64()?,
            beta1: self.f64()?,
            beta2: self.f64()?,
            epsilon: self.f64()?,
        })
    }
    fn running(&mut self) -> Result<RunningNormalizer> {
        Ok(RunningNormalizer {
            sum: self.f64s()?,
            sumsq: self.f64s()?,
            count: self.u64()?,
            eps: self.f64()?,
            clip_range: self.f64()?,
        })
    }
    fn policy(&mut self) -> Result<Policy> {
        Ok(Policy {
            actor: self.mlp()?,
            obs_norm: self.running()?,
            goal_norm: self.running()?,
            version: self.u64()?,
        })
    }
    fn normalizer(&mut self) -> Result<Normalizer> {
        Ok(Normalizer {
            mean: self.f64s()?,
            std: self.f64s()?,
        })
    }
    fn goal_obs(&mut self) -> Result<GoalObservation> {
        Ok(GoalObservation {
            observation: self.f64s()?,
            achieved_goal: self.f64s()?,
            desired_goal: self.f64s()?,
        })
    }
    fn buffer(&mut self) -> Result<EpisodeBuffer> {
        let capacity = self.u64()? as usize;
        let episode_length = self.u64()? as usize;
        let first_index = self.u64()?;
        let lifetime = self.u64()?;
        let n = self.len()?;
        let mut episodes = Vec::with_capacity(n);
        for _ in 0..n {
            let policy_version = self.u64()?;
            let len = self.len()?;
            let mut transitions = Vec::with_capacity(len);
            for _ in 0..len {
                transitions.push(Transition {
                    obs: self.goal_obs()?,
                    action: self.f64s()?,
                    next_obs: self.goal_obs()?,
                    extrinsic_reward: self.f64()?,
                    is_real: self.bool()?,
                    epoch_collected: self.u32()?,
                });
            }
            episodes.push(Episode {
                transitions,
                policy_version,
            });
        }
        EpisodeBuffer::from_parts(capacity, episode_length, first_index, lifetime, episodes)
            .map_err(|e| self.bad(e.to_string()))
    }

    fn bad(&self, msg: String) -> Error {
        Error::Checkpoint(format!("section '{}': {msg}", self.section))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(self.bad(format!("{} trailing bytes", self.data.len() - self.pos)));
        }
        Ok(())
    }
}

fn section(out: &mut Vec<u8>, name: &str, payload: Writer) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(payload.buf.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload.buf);
}

/// Serializes the full training state.
pub fn encode_checkpoint(trainer: &Trainer) -> Vec<u8> {
    let mut out = MAGIC.to_vec();

    let mut w = Writer::default();
    w.str(&trainer.config.to_text());
    section(&mut out, "config", w);

    let mut w = Writer::default();
    w.u32(trainer.epoch);
    w.u64(trainer.cycle);
    let c = &trainer.counts;
    for v in [
        c.model_training,
        c.regenerations,
        c.imaginary_rollouts,
        c.intrinsic_batches,
        c.imaginary_samples,
        c.real_samples,
    ] {
        w.u64(v);
    }
    w.f64(if trainer.config.wall_clock {
        trainer.elapsed_seconds()
    } else {
        0.0
    });
    section(&mut out, "counters", w);

    let mut w = Writer::default();
    w.buf.extend_from_slice(&trainer.rng.get_seed());
    w.u64(trainer.rng.get_stream());
    w.buf.extend_from_slice(&trainer.rng.get_word_pos().to_le_bytes());
    section(&mut out, "rng", w);

    let mut w = Writer::default();
    let a = &trainer.agent;
    w.policy(&a.policy);
    w.mlp(&a.critic);
    w.mlp(&a.target_actor);
    w.mlp(&a.target_critic);
    w.adam(&a.actor_opt);
    w.adam(&a.critic_opt);
    section(&mut out, "agent", w);

    if let Some(e) = &trainer.ensemble {
        let mut w = Writer::default();
        w.len(e.state_dim());
        w.len(e.action_dim());
        w.f64(e.std_floor());
        w.len(e.size());
        for (m, o) in e.members().iter().zip(e.optimizers()) {
            w.mlp(m);
            w.adam(o);
        }
        w.normalizer(e.input_normalizer());
        w.normalizer(e.delta_normalizer());
        w.u32(e.train_calls());
        section(&mut out, "ensemble", w);
    }

    let mut w = Writer::default();
    w.buffer(&trainer.real);
    section(&mut out, "real_buffer", w);
    let mut w = Writer::default();
    w.buffer(&trainer.imag);
    section(&mut out, "imag_buffer", w);

    let mut w = Writer::default();
    w.u64(trainer.snapshots.cadence());
    w.len(trainer.snapshots.len());
    for s in trainer.snapshots.oldest_first() {
        w.u64(s.cycle);
        w.policy(&s.policy);
    }
    section(&mut out, "snapshots", w);

    let mut w = Writer::default();
    w.len(trainer.history.len());
    for r in &trainer.history {
        w.u32(r.epoch);
        w.u64(r.real_steps_total);
        w.u64(r.imag_steps_total);
        w.f64(r.eval_success_rate);
        w.f64(r.mean_intrinsic_reward);
        w.f64(r.model_loss);
        w.f64(r.p_imag);
        w.f64(r.wall_clock_seconds);
    }
    section(&mut out, "history", w);

    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Splits a verified checkpoint into named sections.
fn sections(data: &[u8]) -> Result<Vec<(&str, &[u8])>> {
    if data.len() < MAGIC.len() || &data[..MAGIC.len()] != MAGIC {
        let found = &data[..data.len().min(MAGIC.len())];
        return Err(Error::Checkpoint(format!(
            "bad magic: expected \"IHER1\", found {:?}; not a checkpoint of this format version",
            String::from_utf8_lossy(found)
        )));
    }
    if data.len() < MAGIC.len() + DIGEST_LEN {
        return Err(Error::Checkpoint("file is truncated (no checksum)".into()));
    }
    let (body, digest) = data.split_at(data.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint(
            "checksum mismatch: the file is truncated or corrupted".into(),
        ));
    }
    let mut out = Vec::new();
    let mut pos = MAGIC.len();
    while pos < body.len() {
        let header = |pos: usize, n: usize| -> Result<&[u8]> {
            body.get(pos..pos + n)
                .ok_or_else(|| Error::Checkpoint("section header is truncated".into()))
        };
        let name_len = u16::from_le_bytes(header(pos, 2)?.try_into().expect("2 bytes")) as usize;
        pos += 2;
        let name = std::str::from_utf8(header(pos, name_len)?)
            .map_err(|_| Error::Checkpoint("section name is not UTF-8".into()))?;
        pos += name_len;
        let len = u64::from_le_bytes(header(pos, 8)?.try_into().expect("8 bytes")) as usize;
        pos += 8;
        let payload = body
            .get(pos..pos.saturating_add(len))
            .ok_or_else(|| Error::Checkpoint(format!("section '{name}' is truncated")))?;
        pos += len;
        out.push((name, payload));
    }
    Ok(out)
}

fn required<'a>(sections: &[(&'a str, &'a [u8])], name: &'static str) -> Result<Reader<'a>> {
    sections
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, p)| Reader::new(p, name))
        .ok_or_else(|| Error::Checkpoint(format!("missing section '{name}'")))
}

/// Rebuilds a trainer from checkpoint bytes. Nothing is returned unless
/// every section decodes.
pub fn decode_checkpoint(data: &[u8]) -> Result<Trainer> {
    let secs = sections(data)?;

    let mut r = required(&secs, "config")?;
    let config = TrainConfig::parse(r.str()?).map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
    r.finish()?;
    config.validate().map_err(|e| Error::Checkpoint(format!("config: {e}")))?;

    let mut r = required(&secs, "counters")?;
    let epoch = r.u32()?;
    let cycle = r.u64()?;
    let counts = InvocationCounts {
        model_training: r.u64()?,
        regenerations: r.u64()?,
        imaginary_rollouts: r.u64()?,
        intrinsic_batches: r.u64()?,
        imaginary_samples: r.u64()?,
        real_samples: r.u64()?,
    };
    let elapsed_before = r.f64()?;
    r.finish()?;

    let mut r = required(&secs, "rng")?;
    let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
    r.finish()?;
    let mut rng = SeededRng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    let mut r = required(&secs, "agent")?;
    let agent = ActorCritic {
        policy: r.policy()?,
        critic: r.mlp()?,
        target_actor: r.mlp()?,
        target_critic: r.mlp()?,
        actor_opt: r.adam()?,
        critic_opt: r.adam()?,
        config: config.agent_config(),
    };
    r.finish()?;
    let spec = config.task.spec(&config.env_params());
    if agent.policy.obs_dim() != spec.obs_dim || agent.policy.action_dim() != spec.action_dim {
        return Err(Error::Checkpoint("agent shapes do not match the task".into()));
    }

    let ensemble = match secs.iter().find(|(n, _)| *n == "ensemble") {
        Some((_, payload)) => {
            let mut r = Reader::new(payload, "ensemble");
            let state_dim = r.len()?;
            let action_dim = r.len()?;
            let std_floor = r.f64()?;
            let k = r.len()?;
            let mut members = Vec::with_capacity(k);
            let mut optimizers = Vec::with_capacity(k);
            for _ in 0..k {
                members.push(r.mlp()?);
                optimizers.push(r.adam()?);
            }
            let input_norm = r.normalizer()?;
            let delta_norm = r.normalizer()?;
            let train_calls = r.u32()?;
            r.finish()?;
            Some(
                EnsembleModel::from_parts(
                    state_dim,
                    action_dim,
                    std_floor,
                    members,
                    optimizers,
                    input_norm,
                    delta_norm,
                    train_calls,
                )
                .map_err(|e| Error::Checkpoint(format!("ensemble: {e}")))?,
            )
        }
        None => None,
    };
    if ensemble.is_some() != config.uses_model() {
        return Err(Error::Checkpoint("ensemble section does not match the configured algo".into()));
    }

    let mut r = required(&secs, "real_buffer")?;
    let real = r.buffer()?;
    r.finish()?;
    let mut r = required(&secs, "imag_buffer")?;
    let imag = r.buffer()?;
    r.finish()?;

    let mut r = required(&secs, "snapshots")?;
    let cadence = r.u64()?;
    let n = r.len()?;
    let mut snaps = Vec::with_capacity(n);
    for _ in 0..n {
        let cycle = r.u64()?;
        snaps.push(PolicySnapshot {
            cycle,
            policy: Arc::new(r.policy()?),
        });
    }
    r.finish()?;

    let mut r = required(&secs, "history")?;
    let n = r.len()?;
    let mut history = Vec::with_capacity(n);
    for _ in 0..n {
        history.push(MetricsRow {
            epoch: r.u32()?,
            real_steps_total: r.u64()?,
            imag_steps_total: r.u64()?,
            eval_success_rate: r.f64()?,
            mean_intrinsic_reward: r.f64()?,
            model_loss: r.f64()?,
            p_imag: r.f64()?,
            wall_clock_seconds: r.f64()?,
        });
    }
    r.finish()?;

    Ok(Trainer {
        config,
        agent,
        ensemble,
        real,
        imag,
        snapshots: PolicySnapshotStore::from_parts(cadence, snaps),
        rng,
        epoch,
        cycle,
        counts,
        history,
        elapsed_before,
        started: Instant::now(),
    })
}

pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(trainer))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    decode_checkpoint(&std::fs::read(path)?)
}

/// Loads a checkpoint and refuses it unless it was made for `task`.
pub fn load_checkpoint_for_task(path: &Path, task: Task) -> Result<Trainer> {
    let trainer = load_checkpoint(path)?;
    if trainer.config.task != task {
        return Err(Error::Checkpoint(format!(
            "task mismatch: checkpoint is for {}, expected {task}",
            trainer.config.task
        )));
    }
    Ok(trainer)
}
