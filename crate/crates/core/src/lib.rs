//! Action-prior transfer learning on small discrete-action domains.
//!
//! Expert policies trained on a set of tasks are summarized into a
//! state-conditioned action-prior network, gated by a task classifier, and
//! the prior then restricts exploration when learning a held-out task.

pub mod agents;
pub mod error;
pub mod fruits;
pub mod grammar;
pub mod gridstack;
pub mod harness;
pub mod mdp;
pub mod nn;
pub mod prior;

pub use error::{Error, Result};
pub use mdp::{ActionId, Environment, Observation, ReplayBuffer, ReplayConfig, Transition};
pub use nn::{Hyperparams, MlpNet};
