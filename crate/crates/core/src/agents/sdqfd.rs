use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EpisodeRecord;
use crate::error::Result;
use crate::grammar::StackTask;
use crate::gridstack::{deconstruction_demo, GridStackEnv, DEFAULT_WIDTH};
use crate::mdp::{
    derive_seed, seeded_rng, ActionId, Environment, ReplayBuffer, ReplayConfig, SeededRng,
    Transition,
};
use crate::nn::{
    argmax, slm_loss, td_loss, td_targets, Adam, AdamConfig, HeadKind, Hyperparams, Matrix, MlpNet,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdqfdConfig {
    /// Deconstruction demonstrations in the expert buffer.
    pub demos: usize,
    pub pretrain_steps: u64,
    /// Environment episodes after pretraining, one update per step.
    pub episodes: u64,
    pub width: usize,
    /// Exploration while interacting; the reference setup uses none.
    pub epsilon: f64,
}

impl Default for SdqfdConfig {
    fn default() -> Self {
        Self {
            demos: 50_000,
            pretrain_steps: 10_000,
            episodes: 40_000,
            width: DEFAULT_WIDTH,
            epsilon: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct SdqfdLog {
    pub episodes: Vec<EpisodeRecord>,
    /// Environment steps taken during pretraining; always 0.
    pub pretrain_env_steps: u64,
    /// Expert samples per batch, one entry per update.
    pub expert_per_batch: Vec<usize>,
}

struct Learner {
    online: MlpNet,
    target: MlpNet,
    opt: Adam,
    expert: ReplayBuffer,
    policy: ReplayBuffer,
    hp: Hyperparams,
    updates: u64,
}

impl Learner {
    /// One update on `batch/2` expert and `batch/2` on-policy samples (all
    /// expert while the on-policy buffer is too small). The margin term
    /// only sees expert samples.
    fn step(&mut self, rng: &mut SeededRng) -> Result<(f64, usize)> {
        let half = self.hp.batch / 2;
        let n_policy = if self.policy.len() >= half.max(1) {
            half
        } else {
            0
        };
        let n_expert = self.hp.batch - n_policy;
        let exp = self.expert.sample(n_expert, rng)?;
        let pol = if n_policy > 0 {
            Some(self.policy.sample(n_policy, rng)?)
        } else {
            None
        };
        let mut batch: Vec<Transition> = exp.transitions.clone();
        if let Some(p) = &pol {
            batch.extend(p.transitions.iter().cloned());
        }
        let targets = td_targets(&self.online, &self.target, &batch, self.hp.gamma)?;
        let states = Matrix::from_observations(batch.iter().map(|t| &t.state))?;
        let q = self.online.forward(&states)?;
        let actions: Vec<usize> = batch.iter().map(|t| t.action.index()).collect();
        let mut td = td_loss(&q, &actions, &targets, None, self.hp.td_loss)?;
        let mut slm_total = 0.0;
        for i in 0..n_expert {
            let (l, g) = slm_loss(q.row(i), actions[i], self.hp.margin)?;
            slm_total += l;
            let scale = self.hp.omega / n_expert as f64;
            for (d, gv) in td.grad.row_mut(i).iter_mut().zip(&g) {
                *d += scale * gv;
            }
        }
        let loss = td.loss + self.hp.omega * slm_total / n_expert as f64;
        let grads = self.online.backward(&td.grad)?;
        self.opt.step(&mut self.online, &grads)?;
        self.expert
            .update_priorities(&exp.indices, &td.tde[..n_expert])?;
        if let Some(p) = &pol {
            self.policy
                .update_priorities(&p.indices, &td.tde[n_expert..])?;
        }
        self.updates += 1;
        if self.updates % self.hp.target_sync.max(1) == 0 {
            self.target.clone_from(&self.online);
        }
        Ok((loss, n_expert))
    }
}

/// SDQfD on an arbitrary environment from a fixed set of demonstration
/// transitions.
pub fn train_sdqfd<E: Environment>(
    env: &mut E,
    demos: Vec<Transition>,
    cfg: &SdqfdConfig,
    hp: &Hyperparams,
    seed: u64,
) -> Result<(MlpNet, SdqfdLog)> {
    hp.validate()?;
    let mut rng = seeded_rng(seed);
    let mut sizes = vec![env.obs_len()];
    sizes.extend(&hp.hidden);
    sizes.push(env.action_count());
    let online = MlpNet::new(&sizes, HeadKind::Dueling, &mut rng)?;
    let replay = |capacity: usize| {
        ReplayBuffer::new(ReplayConfig {
            capacity: capacity.max(1),
            ..ReplayConfig::default()
        })
    };
    let mut expert = replay(demos.len())?;
    for t in demos {
        expert.push(t);
    }
    let mut learner = Learner {
        target: online.clone(),
        opt: Adam::for_net(&online, AdamConfig::with_lr(hp.lr)),
        online,
        expert,
        policy: replay(hp.buffer_capacity)?,
        hp: hp.clone(),
        updates: 0,
    };
    let mut log = SdqfdLog::default();
    for _ in 0..cfg.pretrain_steps {
        let (_, n) = learner.step(&mut rng)?;
        log.expert_per_batch.push(n);
    }
    let mut steps = 0u64;
    for episode in 1..=cfg.episodes {
        let mut obs = env.reset();
        let mut ret = 0.0;
        let mut losses = (0.0, 0usize);
        loop {
            let a = if cfg.epsilon > 0.0 && rng.gen::<f64>() < cfg.epsilon {
                ActionId(rng.gen_range(0..env.action_count()))
            } else {
                ActionId(argmax(&learner.online.predict_one(obs.data())?))
            };
            let t = env.step(a)?;
            steps += 1;
            ret += t.reward;
            obs = t.next_state.clone();
            let done = t.done;
            learner.policy.push(t);
            let (l, n) = learner.step(&mut rng)?;
            log.expert_per_batch.push(n);
            losses.0 += l;
            losses.1 += 1;
            if done {
                break;
            }
        }
        log.episodes.push(EpisodeRecord {
            step: steps,
            episode,
            ret,
            success: env.succeeded(),
            epsilon: cfg.epsilon,
            loss: losses.0 / losses.1.max(1) as f64,
        });
    }
    Ok((learner.online, log))
}

/// SDQfD expert for a stacking task, trained from reversed deconstruction
/// demonstrations.
pub fn train_sdqfd_expert(
    task: &StackTask,
    cfg: &SdqfdConfig,
    hp: &Hyperparams,
    seed: u64,
) -> Result<(MlpNet, SdqfdLog)> {
    let mut demo_rng = seeded_rng(derive_seed(seed, 1));
    let mut demos = Vec::new();
    for _ in 0..cfg.demos {
        demos.extend(deconstruction_demo(task, cfg.width, &mut demo_rng)?);
    }
    let mut env = GridStackEnv::with_width(task.clone(), cfg.width, derive_seed(seed, 2))?;
    train_sdqfd(&mut env, demos, cfg, hp, derive_seed(seed, 3))
}
