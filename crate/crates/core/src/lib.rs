//! Simulation and offline training toolkit for checkpoint scheduling on
//! intermittently powered processors with encrypted non-volatile checkpoints.
//!
//! The crate models a processor that runs off harvested energy, must
//! checkpoint volatile state (encrypted) to non-volatile memory to survive
//! power failures, and decides at every interval boundary whether a
//! checkpoint is worth its energy and latency. It provides:
//!
//! - [`trace`]: harvested-power traces, six-level quantization, Markov-chain
//!   fitting and synthetic trace generation;
//! - [`system`]: platform constants and checkpoint/restore/interval costs;
//! - [`mdp`]: the scheduler's state space, transitions and costs;
//! - [`qlearn`]: offline tabular Q-learning and the packed action-bit table;
//! - [`policy`]: the learned policy plus periodic and conservative baselines;
//! - [`sim`]: the interval-granularity execution engine and policy
//!   comparison harness.

pub mod error;
pub mod mdp;
pub mod policy;
pub mod qlearn;
pub mod sim;
pub mod system;
pub mod trace;

pub use error::{Error, Result};
