//! DQN agents, expert construction and Actor-Mimic baselines.

mod expert;
mod mimic;
mod sdqfd;

pub use expert::{train_fruits_expert, Expert, FruitsExpertConfig};
pub use mimic::{am_transfer_init, train_am_student, AmConfig, AmStudent, AmVariant};
pub use sdqfd::{train_sdqfd, train_sdqfd_expert, SdqfdConfig, SdqfdLog};

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fruits::FruitsEnv;
use crate::gridstack::GridStackEnv;
use crate::mdp::{
    seeded_rng, ActionId, Environment, Observation, ReplayBuffer, ReplayConfig, SeededRng,
};
use crate::nn::{
    argmax, l2_anchor_penalty, td_loss_double_q, Adam, AdamConfig, HeadKind, Hyperparams, MlpNet,
    TrainBudget,
};

const BETA_START: f64 = 0.4;

/// Where ε-greedy draws its exploratory actions from.
pub trait ExploreSource<E: ?Sized> {
    /// The exploration support in the current state; `None` means the whole
    /// action set.
    fn explore_set(&mut self, env: &E, obs: &Observation) -> Result<Option<Vec<ActionId>>>;
}

/// Uniform over all actions.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformExplore;

impl<E: ?Sized> ExploreSource<E> for UniformExplore {
    fn explore_set(&mut self, _: &E, _: &Observation) -> Result<Option<Vec<ActionId>>> {
        Ok(None)
    }
}

/// Hand-written heuristic action sets. Fruits has no notion of height, so
/// there it is the same as [`UniformExplore`].
#[derive(Clone, Copy, Debug, Default)]
pub struct HeuristicExplore;

impl ExploreSource<GridStackEnv> for HeuristicExplore {
    fn explore_set(
        &mut self,
        env: &GridStackEnv,
        _: &Observation,
    ) -> Result<Option<Vec<ActionId>>> {
        Ok(Some(env.heuristic_actions()))
    }
}

impl ExploreSource<FruitsEnv> for HeuristicExplore {
    fn explore_set(&mut self, _: &FruitsEnv, _: &Observation) -> Result<Option<Vec<ActionId>>> {
        Ok(None)
    }
}

impl<E: ?Sized, F> ExploreSource<E> for F
where
    F: FnMut(&E, &Observation) -> Result<Option<Vec<ActionId>>>,
{
    fn explore_set(&mut self, env: &E, obs: &Observation) -> Result<Option<Vec<ActionId>>> {
        self(env, obs)
    }
}

/// L2 pull of selected layers toward fixed parameters.
#[derive(Clone, Debug)]
pub struct WeightAnchor {
    pub params: Vec<f64>,
    /// Which layers (in [`MlpNet::layers`] order) are anchored.
    pub layers: Vec<bool>,
    pub omega: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// Environment steps taken so far, this episode included.
    pub step: u64,
    pub episode: u64,
    #[serde(rename = "return")]
    pub ret: f64,
    pub success: bool,
    pub epsilon: f64,
    /// Mean training loss over the episode's updates, 0 if none.
    pub loss: f64,
}

/// One exploratory action with the state it was taken in.
#[derive(Clone, Debug)]
pub struct ExploreEvent {
    pub step: u64,
    pub obs: Observation,
    pub action: ActionId,
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub episodes: Vec<EpisodeRecord>,
    pub explore_steps: u64,
    /// Filled only when [`DqnAgent::record_explore`] is set.
    pub explore_events: Vec<ExploreEvent>,
}

impl TrainLog {
    pub fn extend(&mut self, other: TrainLog) {
        self.episodes.extend(other.episodes);
        self.explore_steps += other.explore_steps;
        self.explore_events.extend(other.explore_events);
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.episodes {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Mean return of the last `n` episodes.
    pub fn recent_return(&self, n: usize) -> f64 {
        let tail = &self.episodes[self.episodes.len().saturating_sub(n)..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().map(|r| r.ret).sum::<f64>() / tail.len() as f64
    }
}

/// Dueling double DQN with prioritized replay.
#[derive(Clone, Debug)]
pub struct DqnAgent {
    pub online: MlpNet,
    pub target: MlpNet,
    pub buffer: ReplayBuffer,
    pub hp: Hyperparams,
    pub anchor: Option<WeightAnchor>,
    /// Keep every exploratory (state, action) pair in the training log.
    pub record_explore: bool,
    opt: Adam,
    rng: SeededRng,
    env_steps: u64,
    episodes: u64,
    updates: u64,
}

impl DqnAgent {
    pub fn new(obs_len: usize, action_count: usize, hp: Hyperparams, seed: u64) -> Result<Self> {
        hp.validate()?;
        let mut rng = seeded_rng(seed);
        let mut sizes = vec![obs_len];
        sizes.extend(&hp.hidden);
        sizes.push(action_count);
        let online = MlpNet::new(&sizes, HeadKind::Dueling, &mut rng)?;
        Self::with_net(online, hp, rng)
    }

    /// Agent around an existing online net (copied into the target).
    pub fn from_net(online: MlpNet, hp: Hyperparams, seed: u64) -> Result<Self> {
        hp.validate()?;
        Self::with_net(online, hp, seed_rng_for_net(seed))
    }

    fn with_net(online: MlpNet, hp: Hyperparams, rng: SeededRng) -> Result<Self> {
        let buffer = ReplayBuffer::new(ReplayConfig {
            capacity: hp.buffer_capacity,
            beta: BETA_START,
            ..ReplayConfig::default()
        })?;
        let opt = Adam::for_net(&online, AdamConfig::with_lr(hp.lr));
        Ok(Self {
            target: online.clone(),
            online,
            buffer,
            hp,
            anchor: None,
            record_explore: false,
            opt,
            rng,
            env_steps: 0,
            episodes: 0,
            updates: 0,
        })
    }

    pub fn action_count(&self) -> usize {
        self.online.output_dim()
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Position on the schedule clock (steps or episodes, per the budget).
    pub fn clock(&self) -> u64 {
        match self.hp.budget {
            TrainBudget::Steps(_) => self.env_steps,
            TrainBudget::Episodes(_) => self.episodes,
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.hp.epsilon(self.clock())
    }

    pub fn q_values(&self, obs: &Observation) -> Result<Vec<f64>> {
        self.online.predict_one(obs.data())
    }

    /// Greedy action, ties to the lowest index.
    pub fn greedy(&self, obs: &Observation) -> Result<ActionId> {
        Ok(ActionId(argmax(&self.q_values(obs)?)))
    }

    /// Initializes from another net's trunk (and head, when its shape fits)
    /// and anchors the copied layers to those weights with `omega`.
    pub fn share_weights(&mut self, source: &MlpNet, omega: f64) -> Result<()> {
        let copied = self.online.copy_trunk_from(source)?;
        self.target.copy_params_from(&self.online)?;
        let hidden = self.online.hidden_layers().len();
        let n = self.online.layer_count();
        let layers = (0..n)
            .map(|i| i < hidden || (copied > hidden && i == n - 1))
            .collect();
        self.anchor = Some(WeightAnchor {
            params: self.online.flat_params(),
            layers,
            omega,
        });
        Ok(())
    }

    /// One gradient update from a replay sample. Returns the loss, or `None`
    /// while the buffer is still warming up.
    pub fn learn_step(&mut self) -> Result<Option<f64>> {
        let need = self.hp.batch.max(self.hp.learning_starts);
        if self.buffer.len() < need {
            return Ok(None);
        }
        let progress = (self.clock() as f64 / self.hp.budget.amount().max(1) as f64).min(1.0);
        self.buffer
            .set_beta(BETA_START + (1.0 - BETA_START) * progress);
        let batch = self.buffer.sample(self.hp.batch, &mut self.rng)?;
        let weights = self
            .hp
            .importance_weights
            .then_some(batch.weights.as_slice());
        let td = td_loss_double_q(
            &mut self.online,
            &self.target,
            &batch.transitions,
            self.hp.gamma,
            weights,
            self.hp.td_loss,
        )?;
        let mut grads = self.online.backward(&td.grad)?;
        let mut loss = td.loss;
        if let Some(anchor) = &self.anchor {
            let (penalty, g) = anchored_penalty(&self.online, anchor)?;
            grads.add_assign(&g)?;
            loss += penalty;
        }
        self.opt.step(&mut self.online, &grads)?;
        self.buffer.update_priorities(&batch.indices, &td.tde)?;
        self.updates += 1;
        if self.updates % self.hp.target_sync.max(1) == 0 {
            self.sync_target();
        }
        Ok(Some(loss))
    }

    pub fn sync_target(&mut self) {
        self.target.clone_from(&self.online);
    }

    /// Runs episodes until the schedule clock reaches `until`.
    pub fn train_until<E, X>(
        &mut self,
        env: &mut E,
        until: u64,
        explore: &mut X,
    ) -> Result<TrainLog>
    where
        E: Environment,
        X: ExploreSource<E> + ?Sized,
    {
        let mut log = TrainLog::default();
        while self.clock() < until {
            let mut obs = env.reset();
            let mut ret = 0.0;
            let mut losses = (0.0, 0usize);
            let eps = self.epsilon();
            loop {
                let eps_now = self.epsilon();
                let (action, explored) = self.act_lazy(env, &obs, eps_now, explore)?;
                if explored {
                    log.explore_steps += 1;
                    if self.record_explore {
                        log.explore_events.push(ExploreEvent {
                            step: self.env_steps,
                            obs: obs.clone(),
                            action,
                        });
                    }
                }
                let t = env.step(action)?;
                ret += t.reward;
                obs = t.next_state.clone();
                let done = t.done;
                self.buffer.push(t);
                self.env_steps += 1;
                if let Some(l) = self.learn_step()? {
                    losses.0 += l;
                    losses.1 += 1;
                }
                let out_of_steps =
                    matches!(self.hp.budget, TrainBudget::Steps(_)) && self.env_steps >= until;
                if done || out_of_steps {
                    break;
                }
            }
            self.episodes += 1;
            log.episodes.push(EpisodeRecord {
                step: self.env_steps,
                episode: self.episodes,
                ret,
                success: env.succeeded(),
                epsilon: eps,
                loss: if losses.1 > 0 {
                    losses.0 / losses.1 as f64
                } else {
                    0.0
                },
            });
        }
        Ok(log)
    }

    /// Trains for the whole configured budget.
    pub fn train<E, X>(&mut self, env: &mut E, explore: &mut X) -> Result<TrainLog>
    where
        E: Environment,
        X: ExploreSource<E> + ?Sized,
    {
        self.train_until(env, self.hp.budget.amount(), explore)
    }

    fn act_lazy<E, X>(
        &mut self,
        env: &E,
        obs: &Observation,
        eps: f64,
        explore: &mut X,
    ) -> Result<(ActionId, bool)>
    where
        X: ExploreSource<E> + ?Sized,
    {
        if eps > 0.0 && self.rng.gen::<f64>() < eps {
            let set = explore.explore_set(env, obs)?;
            let a = sample_explore(set.as_deref(), self.action_count(), &mut self.rng)?;
            return Ok((a, true));
        }
        Ok((self.greedy(obs)?, false))
    }
}

fn seed_rng_for_net(seed: u64) -> SeededRng {
    seeded_rng(crate::mdp::derive_seed(seed, 0x5eed))
}

fn sample_explore<R: Rng + ?Sized>(
    set: Option<&[ActionId]>,
    action_count: usize,
    rng: &mut R,
) -> Result<ActionId> {
    match set {
        None => Ok(ActionId(rng.gen_range(0..action_count))),
        Some(s) => s.choose(rng).copied().ok_or(Error::EmptyExploreSet),
    }
}

fn anchored_penalty(net: &MlpNet, anchor: &WeightAnchor) -> Result<(f64, crate::nn::Gradients)> {
    let current = net.flat_params();
    if current.len() != anchor.params.len() {
        return Err(crate::error::shape_err(current.len(), anchor.params.len()));
    }
    // Unanchored layers are compared with themselves and contribute nothing.
    let mut target = anchor.params.clone();
    let mut off = 0;
    for (d, &on) in net.layers().zip(&anchor.layers) {
        let n = d.param_count();
        if !on {
            target[off..off + n].copy_from_slice(&current[off..off + n]);
        }
        off += n;
    }
    l2_anchor_penalty(net, &target, anchor.omega)
}

/// ε-greedy: with probability `epsilon` a uniform draw from `explore_set`
/// (all actions when absent), otherwise the greedy action.
pub fn dqn_act<R: Rng + ?Sized>(
    agent: &DqnAgent,
    obs: &Observation,
    epsilon: f64,
    explore_set: Option<&[ActionId]>,
    rng: &mut R,
) -> Result<ActionId> {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return sample_explore(explore_set, agent.action_count(), rng);
    }
    agent.greedy(obs)
}

/// Trains `agent` on `env` for its configured budget.
pub fn dqn_train_loop<E, X>(agent: &mut DqnAgent, env: &mut E, explore: &mut X) -> Result<TrainLog>
where
    E: Environment,
    X: ExploreSource<E> + ?Sized,
{
    agent.train(env, explore)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mean_return: f64,
    pub success_rate: f64,
}

/// Greedy rollouts of `policy` for `episodes` episodes.
pub fn evaluate<E, P>(env: &mut E, episodes: usize, mut policy: P) -> Result<EvalResult>
where
    E: Environment,
    P: FnMut(&E, &Observation) -> Result<ActionId>,
{
    if episodes == 0 {
        return Err(Error::InvalidArgument(
            "evaluation needs at least one episode".into(),
        ));
    }
    let mut total = 0.0;
    let mut wins = 0usize;
    for _ in 0..episodes {
        let mut obs = env.reset();
        loop {
            let a = policy(env, &obs)?;
            let t = env.step(a)?;
            total += t.reward;
            obs = t.next_state;
            if t.done {
                break;
            }
        }
        wins += env.succeeded() as usize;
    }
    Ok(EvalResult {
        mean_return: total / episodes as f64,
        success_rate: wins as f64 / episodes as f64,
    })
}

/// Greedy evaluation of a Q-network.
pub fn evaluate_net<E: Environment>(
    net: &MlpNet,
    env: &mut E,
    episodes: usize,
) -> Result<EvalResult> {
    evaluate(env, episodes, |_, obs| {
        Ok(ActionId(argmax(&net.predict_one(obs.data())?)))
    })
}
