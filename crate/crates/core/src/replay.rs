//! Episode-structured replay buffers.
//!
//! Episodes are stored whole (HER's "future" strategy needs the rest of
//! the episode) behind `Arc`, so sampled transitions carry a cheap handle
//! to their episode and can be relabelled without touching the buffer.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::envs::{compute_reward, GoalObservation};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: GoalObservation,
    pub action: Vec<f64>,
    pub next_obs: GoalObservation,
    /// Sparse reward for `next_obs.achieved_goal` against `obs.desired_goal`.
    pub extrinsic_reward: f64,
    pub is_real: bool,
    /// 1-indexed epoch in which the transition was produced.
    pub epoch_collected: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    /// Version of the policy parameters that generated the episode.
    pub policy_version: u64,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn initial_observation(&self) -> &GoalObservation {
        &self.transitions[0].obs
    }

    pub fn is_real(&self) -> bool {
        self.transitions.first().is_some_and(|t| t.is_real)
    }

    pub fn epoch_collected(&self) -> u32 {
        self.transitions.first().map_or(0, |t| t.epoch_collected)
    }
}

/// Ring of fixed-length episodes with a transition capacity.
#[derive(Clone, Debug)]
pub struct EpisodeBuffer {
    capacity: usize,
    episode_length: usize,
    episodes: VecDeque<Arc<Episode>>,
    /// Insertion index of `episodes[0]`.
    first_index: u64,
    size: usize,
    lifetime_transitions: u64,
}

impl EpisodeBuffer {
    pub fn new(capacity: usize, episode_length: usize) -> Result<Self> {
        if episode_length == 0 || capacity < episode_length {
            return Err(Error::InvalidArgument(format!(
                "buffer capacity {capacity} cannot hold an episode of length {episode_length}"
            )));
        }
        Ok(EpisodeBuffer {
            capacity,
            episode_length,
            episodes: VecDeque::new(),
            first_index: 0,
            size: 0,
            lifetime_transitions: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn episode_length(&self) -> usize {
        self.episode_length
    }

    /// Stored transitions.
    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn episode_count(&self) -> usize {
        self.episodes.len()
    }

    /// Transitions ever stored through [`EpisodeBuffer::store_episode`].
    pub fn lifetime_transitions(&self) -> u64 {
        self.lifetime_transitions
    }

    /// Insertion index of the oldest stored episode.
    pub fn first_index(&self) -> u64 {
        self.first_index
    }

    pub fn episodes(&self) -> impl ExactSizeIterator<Item = &Arc<Episode>> {
        self.episodes.iter()
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.episodes.iter().flat_map(|e| e.transitions.iter())
    }

    pub fn episode(&self, i: usize) -> Option<&Arc<Episode>> {
        self.episodes.get(i)
    }

    /// Appends an episode, counting it toward the lifetime total.
    pub fn store_episode(&mut self, episode: Episode) -> Result<()> {
        self.insert(episode)?;
        self.lifetime_transitions += self.episode_length as u64;
        Ok(())
    }

    /// Appends an episode without touching the lifetime counter; used when
    /// regenerated data replaces what was cleared.
    pub fn store_regenerated(&mut self, episode: Episode) -> Result<()> {
        self.insert(episode)
    }

    fn insert(&mut self, episode: Episode) -> Result<()> {
        if episode.len() != self.episode_length {
            return Err(Error::InvalidArgument(format!(
                "episode has {} transitions, expected {}",
                episode.len(),
                self.episode_length
            )));
        }
        self.episodes.push_back(Arc::new(episode));
        self.size += self.episode_length;
        while self.size > self.capacity {
            self.episodes.pop_front();
            self.first_index += 1;
            self.size -= self.episode_length;
        }
        Ok(())
    }

    /// Drops every episode; the lifetime counter is kept.
    pub fn clear(&mut self) {
        self.first_index += self.episodes.len() as u64;
        self.episodes.clear();
        self.size = 0;
    }

    /// Rebuilds a buffer from saved parts (checkpoint restore).
    pub fn from_parts(
        capacity: usize,
        episode_length: usize,
        first_index: u64,
        lifetime_transitions: u64,
        episodes: Vec<Episode>,
    ) -> Result<Self> {
        let mut buf = EpisodeBuffer::new(capacity, episode_length)?;
        for ep in episodes {
            buf.insert(ep)?;
        }
        buf.first_index = first_index;
        buf.lifetime_transitions = lifetime_transitions;
        Ok(buf)
    }

    /// Uniform sample of `count` transitions (with replacement).
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<SampledTransition>> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer("cannot sample from an empty buffer"));
        }
        Ok((0..count)
            .map(|_| {
                let ep = &self.episodes[rng.random_range(0..self.episodes.len())];
                let step = rng.random_range(0..self.episode_length);
                SampledTransition::new(Arc::clone(ep), step)
            })
            .collect())
    }
}

/// A transition drawn for a policy update. The goal and reward may be
/// rewritten by HER; the intrinsic bonus is filled in by curiosity.
#[derive(Clone, Debug)]
pub struct SampledTransition {
    pub episode: Arc<Episode>,
    pub step: usize,
    pub desired_goal: Vec<f64>,
    pub extrinsic_reward: f64,
    pub intrinsic_reward: f64,
    pub relabeled: bool,
}

impl SampledTransition {
    pub fn new(episode: Arc<Episode>, step: usize) -> Self {
        let t = &episode.transitions[step];
        let desired_goal = t.obs.desired_goal.clone();
        let extrinsic_reward = t.extrinsic_reward;
        SampledTransition {
            episode,
            step,
            desired_goal,
            extrinsic_reward,
            intrinsic_reward: 0.0,
            relabeled: false,
        }
    }

    pub fn transition(&self) -> &Transition {
        &self.episode.transitions[self.step]
    }

    pub fn is_real(&self) -> bool {
        self.transition().is_real
    }

    pub fn total_reward(&self) -> f64 {
        self.extrinsic_reward + self.intrinsic_reward
    }
}

/// HER "future" relabelling. With probability `k / (k + 1)` the goal is
/// replaced by the achieved goal after a uniformly chosen step `j >= t` of
/// the same episode (so the last step relabels to its own next achieved
/// goal) and the reward is recomputed.
pub fn her_relabel<R: Rng + ?Sized>(
    batch: &mut [SampledTransition],
    replay_k: usize,
    tolerance: f64,
    rng: &mut R,
) -> Result<()> {
    if replay_k == 0 {
        return Ok(());
    }
    let future_p = replay_k as f64 / (replay_k as f64 + 1.0);
    for item in batch.iter_mut() {
        if rng.random::<f64>() >= future_p {
            continue;
        }
        let len = item.episode.len();
        let future = rng.random_range(item.step..len);
        let goal = item.episode.transitions[future].next_obs.achieved_goal.clone();
        let achieved = &item.transition().next_obs.achieved_goal;
        item.extrinsic_reward = compute_reward(achieved, &goal, tolerance)?;
        item.desired_goal = goal;
        item.relabeled = true;
    }
    Ok(())
}

/// Fraction of imaginary transitions in a mixed batch,
/// `N(imag) / (N(imag) + N(real))` over lifetime counts.
pub fn imaginary_fraction(real_lifetime: u64, imag_lifetime: u64) -> f64 {
    let total = real_lifetime + imag_lifetime;
    if total == 0 {
        0.0
    } else {
        imag_lifetime as f64 / total as f64
    }
}

/// Number of imaginary samples in a batch for the given buffers.
pub fn imaginary_count(real: &EpisodeBuffer, imag: &EpisodeBuffer, batch_size: usize) -> usize {
    if imag.is_empty() {
        return 0;
    }
    let p = imaginary_fraction(real.lifetime_transitions(), imag.lifetime_transitions());
    ((batch_size as f64 * p).round() as usize).min(batch_size)
}

/// Mixed real/imaginary batch: real samples first, then imaginary.
pub fn dual_sample<R: Rng + ?Sized>(
    real: &EpisodeBuffer,
    imag: &EpisodeBuffer,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<SampledTransition>> {
    if real.is_empty() {
        return Err(Error::EmptyBuffer("dual_sample needs real data"));
    }
    let n_imag = imaginary_count(real, imag, batch_size);
    let mut batch = real.sample(batch_size - n_imag, rng)?;
    if n_imag > 0 {
        batch.extend(imag.sample(n_imag, rng)?);
    }
    Ok(batch)
}

/// Recency weight `(E(i) / E) * (b - 1)` of a transition.
pub fn recency_weight(epoch_collected: u32, current_epoch: u32, bias: f64) -> f64 {
    epoch_collected as f64 / current_epoch as f64 * (bias - 1.0)
}

/// Samples transitions for model training with probability proportional to
/// [`recency_weight`]. All-zero weights (`b = 1`) fall back to uniform.
pub fn sample_biased_for_model<'a, R: Rng + ?Sized>(
    real: &'a EpisodeBuffer,
    batch_size: usize,
    current_epoch: u32,
    bias: f64,
    rng: &mut R,
) -> Result<Vec<&'a Transition>> {
    if real.is_empty() {
        return Err(Error::EmptyBuffer("model training needs real data"));
    }
    if !(bias >= 1.0) {
        return Err(Error::InvalidArgument(format!("sampling bias must be >= 1, got {bias}")));
    }
    if current_epoch == 0 {
        return Err(Error::InvalidArgument("epochs are 1-indexed".into()));
    }
    let weights: Vec<f64> = real
        .episodes()
        .map(|ep| {
            let e = ep.epoch_collected();
            if e == 0 || e > current_epoch {
                Err(Error::InvalidArgument(format!(
                    "transition epoch {e} outside 1..={current_epoch}"
                )))
            } else {
                Ok(recency_weight(e, current_epoch, bias))
            }
        })
        .collect::<Result<_>>()?;
    let len = real.episode_length();
    // Weights are per episode; every transition of an episode shares its epoch.
    let weighted = if weights.iter().all(|&w| w == 0.0) {
        None
    } else {
        Some(
            WeightedIndex::new(&weights)
                .map_err(|e| Error::InvalidArgument(format!("bad sampling weights: {e}")))?,
        )
    };
    Ok((0..batch_size)
        .map(|_| {
            let i = match &weighted {
                Some(dist) => dist.sample(rng),
                None => rng.random_range(0..weights.len()),
            };
            let ep = real.episode(i).expect("index within buffer");
            &ep.transitions[rng.random_range(0..len)]
        })
        .collect())
}
