//! Accelerated RL-based neural architecture search.
//!
//! A PPO-trained LSTM controller emits token sequences that decode into
//! block-factorized architectures. Three modules cut the rollout cost:
//!
//! - an uncertainty-aware critic that predicts rewards and skips training for
//!   samples it is confident about ([`critic`]),
//! - a block-level knowledge pool that warm-starts new samples from trained
//!   block checkpoints via cosine fuzzy matching ([`pool`]),
//! - a small prioritized experience buffer replayed with annealed
//!   importance-sampling weights ([`replay`]).
//!
//! Evaluation backends are pluggable: a seeded surrogate with a brute-forceable
//! optimum, a tabular file, and a toy trainer that actually trains
//! block-structured networks ([`eval`]). The [`runner`] wires everything into
//! the sample-eval-update loop; [`analysis`] provides rank-correlation and
//! ablation reporting; [`cli`] exposes it all as subcommands.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod analysis;
pub mod critic;
pub mod error;
pub mod eval;
pub mod nn;
pub mod policy;
pub mod replay;
pub mod pool;
pub mod rng;
pub mod space;

pub use error::{Error, Result};
