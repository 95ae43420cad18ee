use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DqnAgent, TrainLog, UniformExplore};
use crate::error::Result;
use crate::fruits::{
    decode_observation, fruits_optimal_actions, FruitsEnv, FruitsTask, ACTION_COUNT,
};
use crate::mdp::{derive_seed, seeded_rng, ActionId, Environment, Observation};
use crate::nn::{Hyperparams, MlpNet, TrainBudget};

/// A policy for one training task.
#[derive(Clone, Debug)]
pub enum Expert {
    /// Greedy policy of a Q-network.
    Net(MlpNet),
    /// Exact Fruits policy computed from the decoded state. Its scores are 1
    /// on every optimal action and 0 elsewhere.
    Fruits(FruitsTask),
    /// Q-table over one-hot encoded states.
    Tabular(Vec<Vec<f64>>),
}

impl Expert {
    pub fn action_count(&self) -> usize {
        match self {
            Expert::Net(n) => n.output_dim(),
            Expert::Fruits(_) => ACTION_COUNT,
            Expert::Tabular(q) => q.first().map_or(0, Vec::len),
        }
    }

    pub fn q_values(&self, obs: &Observation) -> Result<Vec<f64>> {
        match self {
            Expert::Net(n) => n.predict_one(obs.data()),
            Expert::Fruits(task) => {
                let state = decode_observation(obs, task)?;
                let mut q = vec![0.0; ACTION_COUNT];
                for a in fruits_optimal_actions(&state, task) {
                    q[a.index()] = 1.0;
                }
                Ok(q)
            }
            Expert::Tabular(table) => {
                let state = obs.data().iter().position(|&v| v > 0.5);
                state
                    .and_then(|s| table.get(s))
                    .cloned()
                    .ok_or_else(|| crate::error::shape_err(table.len(), obs.len()))
            }
        }
    }

    /// Every action attaining the maximum score.
    pub fn greedy_set(&self, obs: &Observation) -> Result<Vec<ActionId>> {
        let q = self.q_values(obs)?;
        let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok((0..q.len())
            .filter(|&a| q[a] == best)
            .map(ActionId)
            .collect())
    }

    /// Greedy action with ties broken uniformly.
    pub fn greedy<R: Rng + ?Sized>(&self, obs: &Observation, rng: &mut R) -> Result<ActionId> {
        let set = self.greedy_set(obs)?;
        Ok(*set
            .choose(rng)
            .expect("a score vector always has a maximum"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FruitsExpertConfig {
    /// Transitions generated by the half-optimal policy.
    pub collect: usize,
    pub offline_steps: u64,
    pub online_steps: u64,
}

impl Default for FruitsExpertConfig {
    fn default() -> Self {
        Self {
            collect: 50_000,
            offline_steps: 50_000,
            online_steps: 50_000,
        }
    }
}

/// Fruits expert: a buffer filled by a policy that is optimal half of the
/// time and uniform otherwise, offline training on it, then online training
/// (ε held at its final value) with new experience mixed in.
pub fn train_fruits_expert(
    task: &FruitsTask,
    cfg: &FruitsExpertConfig,
    hp: &Hyperparams,
    seed: u64,
) -> Result<(MlpNet, TrainLog)> {
    let hp = Hyperparams {
        eps_start: hp.eps_end,
        budget: TrainBudget::Steps(cfg.online_steps),
        ..hp.clone()
    };
    let mut agent = DqnAgent::new(task.obs_len(), ACTION_COUNT, hp, seed)?;
    let mut env = FruitsEnv::new(task.clone(), derive_seed(seed, 1));
    let mut rng = seeded_rng(derive_seed(seed, 2));
    let mut pushed = 0;
    while pushed < cfg.collect {
        env.reset();
        while !env.is_terminal() && pushed < cfg.collect {
            let a = if rng.gen_bool(0.5) {
                env.optimal_action()?
            } else {
                ActionId(rng.gen_range(0..ACTION_COUNT))
            };
            agent.buffer.push(env.step(a)?);
            pushed += 1;
        }
    }
    for _ in 0..cfg.offline_steps {
        agent.learn_step()?;
    }
    let log = agent.train(&mut env, &mut UniformExplore)?;
    Ok((agent.online, log))
}
