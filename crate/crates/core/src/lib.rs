//! Imaginary hindsight experience replay.
//!
//! A self-contained model-based extension of HER-DDPG for sparse-reward,
//! goal-conditioned control. An ensemble of one-step dynamics models is
//! trained on real data and used to generate imaginary episodes; the
//! imaginary buffer is regenerated after every model update, ensemble
//! disagreement feeds a clipped intrinsic reward, and the policy receives a
//! bit telling it whether an observation came from the real environment.
//!
//! Module map:
//!
//! - [`diffnet`]: feed-forward networks, analytic backprop, Adam.
//! - [`envs`]: deterministic 2-D reach / push / slide tasks.
//! - [`replay`]: episode buffers, HER relabelling, mixed sampling.
//! - [`dynamics`]: the delta-predicting ensemble.
//! - [`imagination`]: imaginary rollouts, buffer regeneration, policy snapshots.
//! - [`curiosity`]: disagreement-based intrinsic rewards.
//! - [`agent`]: goal-conditioned DDPG.
//! - [`harness`]: the training loop, config, checkpoints, metrics.

pub mod agent;
pub mod curiosity;
pub mod diffnet;
pub mod dynamics;
pub mod envs;
mod error;
pub mod harness;
pub mod imagination;
pub mod replay;

pub use error::{Error, Result};

/// Every stochastic component draws from this generator so runs are
/// reproducible from a single seed.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Builds a generator from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
