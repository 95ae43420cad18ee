//! Environment abstraction, episode machinery and replay storage.
//!
//! Every environment in the crate implements [`Environment`]. Observations
//! are flat `f32` vectors with shape metadata; consecutive transitions share
//! their observation storage so replay buffers stay compact.

mod dump;
mod replay;

pub use dump::{read_transitions, write_transitions};
pub use replay::{ReplayBuffer, ReplayConfig, SampledBatch};

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};

/// The seeded generator used throughout the crate. ChaCha is value-stable
/// across releases, which keeps seeded runs bit-reproducible.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a base seed with a stream id (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A state as seen by an agent: flat data plus its logical shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    data: Arc<[f32]>,
    shape: Arc<[usize]>,
}

impl Observation {
    pub fn new(data: Vec<f32>, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(shape_err(
                format!("{shape:?} ({expected} entries)"),
                data.len(),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "observation entry {i} is not finite"
            )));
        }
        Ok(Self {
            data: data.into(),
            shape: shape.into(),
        })
    }

    /// Flat observation with a single dimension.
    pub fn flat(data: Vec<f32>) -> Result<Self> {
        let n = data.len();
        Self::new(data, vec![n])
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// True when both observations point at the same storage.
    pub fn shares_storage(&self, other: &Observation) -> bool {
        Arc::ptr_eq(&self.data, &other.data)
    }
}

/// Index of a discrete action.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
pub struct ActionId(pub usize);

impl ActionId {
    pub fn index(self) -> usize {
        self.0
    }

    pub fn checked(index: usize, count: usize) -> Result<Self> {
        if index < count {
            Ok(Self(index))
        } else {
            Err(Error::ActionOutOfRange {
                action: index,
                count,
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Observation,
    pub action: ActionId,
    pub reward: f64,
    pub next_state: Observation,
    pub done: bool,
}

impl Transition {
    pub fn new(
        state: Observation,
        action: ActionId,
        reward: f64,
        next_state: Observation,
        done: bool,
    ) -> Result<Self> {
        if !reward.is_finite() {
            return Err(Error::InvalidArgument("reward is not finite".into()));
        }
        if state.shape() != next_state.shape() {
            return Err(shape_err(
                format!("{:?}", state.shape()),
                format!("{:?}", next_state.shape()),
            ));
        }
        Ok(Self {
            state,
            action,
            reward,
            next_state,
            done,
        })
    }
}

/// A finite-horizon episodic MDP with a discrete action space.
pub trait Environment {
    fn action_count(&self) -> usize;

    fn obs_shape(&self) -> Vec<usize>;

    fn obs_len(&self) -> usize {
        self.obs_shape().iter().product()
    }

    /// Starts a new episode drawn from the initial-state distribution.
    fn reset(&mut self) -> Observation;

    /// Applies `action`. Stepping a finished episode is an error until
    /// [`Environment::reset`] is called.
    fn step(&mut self, action: ActionId) -> Result<Transition>;

    /// Observation of the current state.
    fn observation(&self) -> Observation;

    fn is_terminal(&self) -> bool;

    /// Whether the task's goal was reached in the current episode.
    fn succeeded(&self) -> bool;

    fn max_steps(&self) -> usize;
}

/// Resets `env` and runs `policy` until the episode ends or `max_steps`
/// transitions were taken.
///
/// The policy sees the environment (read-only), the current observation and
/// the shared generator.
pub fn rollout<E, R, P>(
    env: &mut E,
    max_steps: usize,
    rng: &mut R,
    mut policy: P,
) -> Result<Vec<Transition>>
where
    E: Environment,
    R: Rng,
    P: FnMut(&E, &Observation, &mut R) -> Result<ActionId>,
{
    if max_steps == 0 {
        return Err(Error::InvalidArgument(
            "rollout needs max_steps >= 1".into(),
        ));
    }
    let mut obs = env.reset();
    let mut out = Vec::new();
    while out.len() < max_steps {
        let action = policy(env, &obs, rng)?;
        let t = env.step(action)?;
        obs = t.next_state.clone();
        let done = t.done;
        out.push(t);
        if done {
            break;
        }
    }
    Ok(out)
}

/// Sum of rewards along a trajectory.
pub fn episode_return(traj: &[Transition]) -> f64 {
    traj.iter().map(|t| t.reward).sum()
}
