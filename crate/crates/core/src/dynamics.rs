//! Ensemble of one-step dynamics models.
//!
//! Each member maps a normalized `(state, action)` pair to a normalized
//! state delta. Members share an architecture and the two normalizers but
//! have independent parameters, optimizers and training batches.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::diffnet::{adam_update, Activation, AdamState, Mlp};
use crate::error::{check_dim, Error, Result};
use crate::replay::{sample_biased_for_model, EpisodeBuffer, Transition};
use crate::SeededRng;

pub const DEFAULT_STD_FLOOR: f64 = 1e-6;

/// Per-dimension affine normalization `(x - mean) / std`.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Normalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population mean/std of `rows`, std floored at `std_floor`.
    pub fn fit<'a, I>(dim: usize, rows: I, std_floor: f64) -> Self
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut sum = vec![0.0; dim];
        let mut sumsq = vec![0.0; dim];
        let mut n = 0usize;
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        for r in &rows {
            for (s, v) in sum.iter_mut().zip(r.iter()) {
                *s += v;
            }
            n += 1;
        }
        if n == 0 {
            return Normalizer::identity(dim);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        // second pass for a numerically stable variance
        for r in &rows {
            for ((q, v), m) in sumsq.iter_mut().zip(r.iter()).zip(&mean) {
                *q += (v - m) * (v - m);
            }
        }
        let std = sumsq
            .iter()
            .map(|q| (q / n as f64).sqrt().max(std_floor))
            .collect();
        Normalizer { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn normalize_rows(&self, rows: &mut Array2<f64>) {
        for mut row in rows.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }

    pub fn denormalize_rows(&self, rows: &mut Array2<f64>) {
        for mut row in rows.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleConfig {
    pub ensemble_size: usize,
    pub hidden_sizes: Vec<usize>,
    pub learning_rate: f64,
    pub std_floor: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            ensemble_size: 5,
            hidden_sizes: vec![128, 128],
            learning_rate: 1e-3,
            std_floor: DEFAULT_STD_FLOOR,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelTrainReport {
    pub steps_run: usize,
    /// Mean squared delta error (normalized space, summed over dims) over
    /// the first few steps, averaged across members.
    pub mean_loss_start: f64,
    /// Same over the last few steps.
    pub mean_loss_end: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleModel {
    state_dim: usize,
    action_dim: usize,
    std_floor: f64,
    members: Vec<Mlp>,
    optimizers: Vec<AdamState>,
    input_norm: Normalizer,
    delta_norm: Normalizer,
    train_calls: u32,
}

/// Number of leading/trailing steps averaged in [`ModelTrainReport`].
const LOSS_WINDOW: usize = 10;

impl EnsembleModel {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        config: &EnsembleConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if config.ensemble_size == 0 {
            return Err(Error::InvalidArgument("ensemble size must be positive".into()));
        }
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend(&config.hidden_sizes);
        sizes.push(state_dim);
        let members = (0..config.ensemble_size)
            .map(|_| {
                let mut member_rng = SeededRng::seed_from_u64(rng.next_u64());
                Mlp::new(&sizes, Activation::Relu, Activation::Identity, &mut member_rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let optimizers = members
            .iter()
            .map(|m| AdamState::new(m, config.learning_rate))
            .collect();
        Ok(EnsembleModel {
            state_dim,
            action_dim,
            std_floor: config.std_floor,
            members,
            optimizers,
            input_norm: Normalizer::identity(state_dim + action_dim),
            delta_norm: Normalizer::identity(state_dim),
            train_calls: 0,
        })
    }

    /// Reassembles a model from its parts (checkpoint restore, tests).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        state_dim: usize,
        action_dim: usize,
        std_floor: f64,
        members: Vec<Mlp>,
        optimizers: Vec<AdamState>,
        input_norm: Normalizer,
        delta_norm: Normalizer,
        train_calls: u32,
    ) -> Result<Self> {
        if members.is_empty() || members.len() != optimizers.len() {
            return Err(Error::InvalidArgument("member/optimizer count mismatch".into()));
        }
        for m in &members {
            check_dim("member input width", state_dim + action_dim, m.input_dim())?;
            check_dim("member output width", state_dim, m.output_dim())?;
        }
        check_dim("input normalizer width", state_dim + action_dim, input_norm.dim())?;
        check_dim("delta normalizer width", state_dim, delta_norm.dim())?;
        Ok(EnsembleModel {
            state_dim,
            action_dim,
            std_floor,
            members,
            optimizers,
            input_norm,
            delta_norm,
            train_calls,
        })
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn std_floor(&self) -> f64 {
        self.std_floor
    }

    pub fn members(&self) -> &[Mlp] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [Mlp] {
        &mut self.members
    }

    pub fn optimizers(&self) -> &[AdamState] {
        &self.optimizers
    }

    pub fn input_normalizer(&self) -> &Normalizer {
        &self.input_norm
    }

    pub fn delta_normalizer(&self) -> &Normalizer {
        &self.delta_norm
    }

    pub fn set_normalizers(&mut self, input_norm: Normalizer, delta_norm: Normalizer) -> Result<()> {
        check_dim("input normalizer width", self.state_dim + self.action_dim, input_norm.dim())?;
        check_dim("delta normalizer width", self.state_dim, delta_norm.dim())?;
        self.input_norm = input_norm;
        self.delta_norm = delta_norm;
        Ok(())
    }

    /// How many times [`train_models`] has run on this ensemble.
    pub fn train_calls(&self) -> u32 {
        self.train_calls
    }

    pub fn is_trained(&self) -> bool {
        self.train_calls > 0
    }

    fn check_member(&self, index: usize) -> Result<()> {
        if index < self.members.len() {
            Ok(())
        } else {
            Err(Error::MemberOutOfRange {
                index,
                size: self.members.len(),
            })
        }
    }

    fn normalized_inputs(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim("state width", self.state_dim, states.ncols())?;
        check_dim("action width", self.action_dim, actions.ncols())?;
        check_dim("state/action rows", states.nrows(), actions.nrows())?;
        let mut x = concatenate(Axis(1), &[states, actions])
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        self.input_norm.normalize_rows(&mut x);
        Ok(x)
    }

    /// Member outputs in normalized-delta space, one row per input.
    pub fn normalized_deltas(
        &self,
        member: usize,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        self.check_member(member)?;
        let x = self.normalized_inputs(states, actions)?;
        self.members[member].forward(x.view())
    }

    /// Batched next-state prediction by one member.
    pub fn predict_next_batch(
        &self,
        member: usize,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        let mut delta = self.normalized_deltas(member, states, actions)?;
        self.delta_norm.denormalize_rows(&mut delta);
        Ok(delta + &states)
    }

    /// `state + denormalize(member(normalize(state, action)))`.
    pub fn predict_next(&self, member: usize, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let s = row(state);
        let a = row(action);
        Ok(self
            .predict_next_batch(member, s.view(), a.view())?
            .into_raw_vec_and_offset()
            .0)
    }

    /// Predictions of every member, in member order.
    pub fn predict_all(&self, state: &[f64], action: &[f64]) -> Result<Vec<Vec<f64>>> {
        (0..self.members.len())
            .map(|m| self.predict_next(m, state, action))
            .collect()
    }

    /// Recomputes both normalizers from the whole buffer.
    pub fn fit_normalizers(&mut self, real: &EpisodeBuffer) -> Result<()> {
        let inputs: Vec<Vec<f64>> = real
            .transitions()
            .map(|t| {
                let mut v = t.obs.observation.clone();
                v.extend_from_slice(&t.action);
                v
            })
            .collect();
        let deltas: Vec<Vec<f64>> = real.transitions().map(state_delta).collect();
        for v in &inputs {
            check_dim("transition state+action width", self.state_dim + self.action_dim, v.len())?;
        }
        self.input_norm = Normalizer::fit(
            self.state_dim + self.action_dim,
            inputs.iter().map(Vec::as_slice),
            self.std_floor,
        );
        self.delta_norm = Normalizer::fit(self.state_dim, deltas.iter().map(Vec::as_slice), self.std_floor);
        Ok(())
    }
}

fn row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row shape")
}

fn state_delta(t: &Transition) -> Vec<f64> {
    t.next_obs
        .observation
        .iter()
        .zip(&t.obs.observation)
        .map(|(n, s)| n - s)
        .collect()
}

struct MemberRun {
    start: f64,
    end: f64,
}

#[allow(clippy::too_many_arguments)]
fn train_member(
    member: &mut Mlp,
    optimizer: &mut AdamState,
    input_norm: &Normalizer,
    delta_norm: &Normalizer,
    real: &EpisodeBuffer,
    steps: usize,
    batch_size: usize,
    current_epoch: u32,
    bias: f64,
    seed: u64,
) -> Result<MemberRun> {
    let mut rng = SeededRng::seed_from_u64(seed);
    let in_dim = input_norm.dim();
    let out_dim = delta_norm.dim();
    let mut losses = Vec::with_capacity(steps);
    let mut x = Array2::<f64>::zeros((batch_size, in_dim));
    let mut y = Array2::<f64>::zeros((batch_size, out_dim));
    for _ in 0..steps {
        let batch = sample_biased_for_model(real, batch_size, current_epoch, bias, &mut rng)?;
        for (i, t) in batch.iter().enumerate() {
            let sd = t.obs.observation.len();
            for j in 0..sd {
                x[[i, j]] = t.obs.observation[j];
                y[[i, j]] = t.next_obs.observation[j] - t.obs.observation[j];
            }
            for (j, a) in t.action.iter().enumerate() {
                x[[i, sd + j]] = *a;
            }
        }
        let mut xn = x.clone();
        input_norm.normalize_rows(&mut xn);
        let mut yn = y.clone();
        delta_norm.normalize_rows(&mut yn);

        let trace = member.forward_trace(xn.view())?;
        let diff = trace.output() - &yn;
        let loss = diff.mapv(|d| d * d).sum() / batch_size as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss("dynamics model training"));
        }
        losses.push(loss);
        let upstream = diff * 2.0;
        let (grads, _) = member.backward(&trace, upstream.view())?;
        adam_update(member, &grads, optimizer)?;
    }
    let window = LOSS_WINDOW.min(losses.len()).max(1);
    let mean = |s: &[f64]| if s.is_empty() { 0.0 } else { s.iter().sum::<f64>() / s.len() as f64 };
    Ok(MemberRun {
        start: mean(&losses[..window.min(losses.len())]),
        end: mean(&losses[losses.len().saturating_sub(window)..]),
    })
}

/// Trains every member for `steps` Adam steps (five times as many on the
/// first call), each on its own stream of recency-biased batches. The
/// normalizers are refit from the buffer first.
pub fn train_models<R: Rng + ?Sized>(
    ensemble: &mut EnsembleModel,
    real: &EpisodeBuffer,
    steps: usize,
    batch_size: usize,
    current_epoch: u32,
    bias: f64,
    rng: &mut R,
) -> Result<ModelTrainReport> {
    if real.is_empty() {
        return Err(Error::EmptyBuffer("model training needs real data"));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("model batch size must be positive".into()));
    }
    let steps = if ensemble.train_calls == 0 { steps * 5 } else { steps };
    ensemble.fit_normalizers(real)?;
    let seeds: Vec<u64> = (0..ensemble.size()).map(|_| rng.next_u64()).collect();
    let input_norm = &ensemble.input_norm;
    let delta_norm = &ensemble.delta_norm;
    let runs = ensemble
        .members
        .par_iter_mut()
        .zip(ensemble.optimizers.par_iter_mut())
        .zip(seeds)
        .map(|((member, opt), seed)| {
            train_member(
                member,
                opt,
                input_norm,
                delta_norm,
                real,
                steps,
                batch_size,
                current_epoch,
                bias,
                seed,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    ensemble.train_calls += 1;
    let k = runs.len() as f64;
    Ok(ModelTrainReport {
        steps_run: steps,
        mean_loss_start: runs.iter().map(|r| r.start).sum::<f64>() / k,
        mean_loss_end: runs.iter().map(|r| r.end).sum::<f64>() / k,
    })
}
