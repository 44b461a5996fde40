//! Disagreement-based intrinsic rewards.
//!
//! `sigma` is the per-dimension population variance of the members'
//! predictions, averaged over state dimensions. The bonus is
//! `clip(scale * sigma, 0, clip)` and is recomputed from the current
//! ensemble for every update batch; buffers only ever hold extrinsic
//! rewards.

use ndarray::{Array2, ArrayView2};

use crate::dynamics::EnsembleModel;
use crate::error::{Error, Result};
use crate::replay::SampledTransition;

/// Space in which member predictions are compared.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DisagreementSpace {
    /// Normalized state deltas (the members' raw outputs).
    Normalized,
    /// Predicted next states in environment units.
    Raw,
}

impl DisagreementSpace {
    pub fn name(self) -> &'static str {
        match self {
            DisagreementSpace::Normalized => "normalized",
            DisagreementSpace::Raw => "raw",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "normalized" => Some(DisagreementSpace::Normalized),
            "raw" => Some(DisagreementSpace::Raw),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CuriosityConfig {
    /// Scale `nu`.
    pub scale: f64,
    /// Upper clip `eta`.
    pub clip: f64,
    pub space: DisagreementSpace,
}

impl Default for CuriosityConfig {
    fn default() -> Self {
        CuriosityConfig {
            scale: 0.5,
            clip: 0.8,
            space: DisagreementSpace::Normalized,
        }
    }
}

impl CuriosityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "intrinsic reward clip must be > 0, got {}",
                self.clip
            )));
        }
        if !(self.scale >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "intrinsic reward scale must be >= 0, got {}",
                self.scale
            )));
        }
        Ok(())
    }
}

/// Mean over dimensions of the population variance across `predictions`
/// (one matrix per member, same shape), for every row.
pub fn mean_population_variance(predictions: &[Array2<f64>]) -> Vec<f64> {
    let k = predictions.len() as f64;
    let (rows, dims) = predictions[0].dim();
    let shift = &predictions[0];
    let mut mean = Array2::<f64>::zeros((rows, dims));
    for p in predictions {
        mean += &(p - shift);
    }
    mean /= k;
    let mut var = Array2::<f64>::zeros((rows, dims));
    for p in predictions {
        let d = p - shift - &mean;
        var += &(&d * &d);
    }
    var /= k;
    var.rows().into_iter().map(|r| r.sum() / dims as f64).collect()
}

/// Disagreement for a batch of `(state, action)` rows.
pub fn ensemble_variance_batch(
    ensemble: &EnsembleModel,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    space: DisagreementSpace,
) -> Result<Vec<f64>> {
    if !ensemble.is_trained() {
        return Err(Error::UntrainedEnsemble);
    }
    let predictions = (0..ensemble.size())
        .map(|m| match space {
            DisagreementSpace::Normalized => ensemble.normalized_deltas(m, states, actions),
            DisagreementSpace::Raw => ensemble.predict_next_batch(m, states, actions),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_population_variance(&predictions))
}

pub fn ensemble_variance(
    ensemble: &EnsembleModel,
    state: &[f64],
    action: &[f64],
    space: DisagreementSpace,
) -> Result<f64> {
    let s = ArrayView2::from_shape((1, state.len()), state).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let a = ArrayView2::from_shape((1, action.len()), action).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(ensemble_variance_batch(ensemble, s, a, space)?[0])
}

/// `clip(scale * sigma, 0, clip)`.
pub fn intrinsic_reward(sigma: f64, config: &CuriosityConfig) -> f64 {
    (config.scale * sigma).clamp(0.0, config.clip)
}

/// Fills `intrinsic_reward` on every (already relabelled) transition from
/// the current ensemble and returns the batch mean bonus. With a zero
/// scale the ensemble is not queried.
pub fn augment_batch_rewards(
    batch: &mut [SampledTransition],
    ensemble: &EnsembleModel,
    config: &CuriosityConfig,
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    if config.scale == 0.0 {
        for item in batch.iter_mut() {
            item.intrinsic_reward = 0.0;
        }
        return Ok(0.0);
    }
    let sd = ensemble.state_dim();
    let ad = ensemble.action_dim();
    let mut states = Array2::zeros((batch.len(), sd));
    let mut actions = Array2::zeros((batch.len(), ad));
    for (i, item) in batch.iter().enumerate() {
        let t = item.transition();
        if t.obs.observation.len() != sd || t.action.len() != ad {
            return Err(Error::DimensionMismatch {
                context: "curiosity batch row",
                expected: sd + ad,
                actual: t.obs.observation.len() + t.action.len(),
            });
        }
        for (j, v) in t.obs.observation.iter().enumerate() {
            states[[i, j]] = *v;
        }
        for (j, v) in t.action.iter().enumerate() {
            actions[[i, j]] = *v;
        }
    }
    let sigmas = ensemble_variance_batch(ensemble, states.view(), actions.view(), config.space)?;
    let mut total = 0.0;
    for (item, sigma) in batch.iter_mut().zip(sigmas) {
        item.intrinsic_reward = intrinsic_reward(sigma, config);
        total += item.intrinsic_reward;
    }
    Ok(total / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn intrinsic_reward_cases() {
        let c = CuriosityConfig::default();
        assert_eq!(intrinsic_reward(0.0, &c), 0.0);
        assert_eq!(intrinsic_reward(1.0, &c), 0.5);
        assert_eq!(intrinsic_reward(2.0, &c), 0.8);
    }

    #[test]
    fn identical_predictions_have_no_variance() {
        let p = array![[0.3, -1.0, 2.0]];
        assert_eq!(mean_population_variance(&[p.clone(), p.clone(), p]), vec![0.0]);
    }

    #[test]
    fn two_members_opposite_in_one_dimension() {
        let d = 0.7;
        let dims = 4;
        let mut a = Array2::zeros((1, dims));
        let mut b = Array2::zeros((1, dims));
        a[[0, 2]] = d;
        b[[0, 2]] = -d;
        let sigma = mean_population_variance(&[a, b])[0];
        assert!((sigma - d * d / dims as f64).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(CuriosityConfig::default().validate().is_ok());
        let bad = CuriosityConfig {
            clip: 0.0,
            ..CuriosityConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = CuriosityConfig {
            scale: -1.0,
            ..CuriosityConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
