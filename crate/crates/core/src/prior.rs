//! Task classifier, approximate optimal-action sets, the action-prior
//! network and prior-guided exploration.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{DqnAgent, Expert, TrainLog};
use crate::error::{Error, Result};
use crate::mdp::{derive_seed, seeded_rng, ActionId, Environment, Observation};
use crate::nn::{
    argmax, binary_mask_loss, cross_entropy_loss, load_checkpoint, save_checkpoint, sigmoid,
    softmax, Adam, AdamConfig, HeadKind, Matrix, MlpNet,
};

/// Supervised training settings for the classifier and the prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetTrainConfig {
    pub hidden: Vec<usize>,
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl NetTrainConfig {
    pub fn classifier() -> Self {
        Self {
            hidden: vec![256, 256],
            steps: 20_000,
            batch: 32,
            lr: 1e-3,
            weight_decay: 1e-5,
        }
    }

    pub fn prior() -> Self {
        Self {
            batch: 50,
            steps: 10_000,
            ..Self::classifier()
        }
    }
}

impl Default for NetTrainConfig {
    fn default() -> Self {
        Self::prior()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApConfig {
    /// States collected per training task.
    pub k_per_task: usize,
    pub delta: f64,
    pub sigma: f64,
    /// Filter experts by the task classifier; when off every expert counts
    /// as applicable everywhere.
    pub use_classifier: bool,
    pub classifier: NetTrainConfig,
    pub prior: NetTrainConfig,
}

impl Default for ApConfig {
    fn default() -> Self {
        Self {
            k_per_task: 20_000,
            delta: 0.05,
            sigma: 0.1,
            use_classifier: true,
            classifier: NetTrainConfig::classifier(),
            prior: NetTrainConfig::prior(),
        }
    }
}

/// Labelled states, balanced across tasks.
#[derive(Clone, Debug, Default)]
pub struct TaskDataset {
    pub entries: Vec<(Observation, usize)>,
    pub tasks: usize,
}

impl TaskDataset {
    /// Concatenates per-task state lists, truncating each to the shortest
    /// so that every task contributes equally.
    pub fn balanced(per_task: &[Vec<Observation>]) -> Self {
        let n = per_task.iter().map(Vec::len).min().unwrap_or(0);
        let entries = per_task
            .iter()
            .enumerate()
            .flat_map(|(y, states)| states[..n].iter().map(move |s| (s.clone(), y)))
            .collect();
        Self {
            entries,
            tasks: per_task.len(),
        }
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.tasks];
        for (_, y) in &self.entries {
            c[*y] += 1;
        }
        c
    }
}

/// States visited by greedy rollouts of `expert`, at least `k` of them.
pub fn collect_states<E: Environment, R: Rng + ?Sized>(
    expert: &Expert,
    env: &mut E,
    k: usize,
    rng: &mut R,
) -> Result<Vec<Observation>> {
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let mut obs = env.reset();
        loop {
            out.push(obs.clone());
            let t = env.step(expert.greedy(&obs, rng)?)?;
            obs = t.next_state;
            if t.done || out.len() >= k {
                break;
            }
        }
    }
    Ok(out)
}

/// One state list per task, each from its own expert and environment.
pub fn collect_task_datasets<E: Environment>(
    experts: &[Expert],
    envs: &mut [E],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<Observation>>> {
    if experts.len() != envs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} experts for {} envs",
            experts.len(),
            envs.len()
        )));
    }
    experts
        .iter()
        .zip(envs.iter_mut())
        .enumerate()
        .map(|(i, (e, env))| {
            collect_states(e, env, k, &mut seeded_rng(derive_seed(seed, i as u64)))
        })
        .collect()
}

fn new_net(input: usize, hidden: &[usize], output: usize, seed: u64) -> Result<MlpNet> {
    let mut sizes = vec![input];
    sizes.extend(hidden);
    sizes.push(output);
    MlpNet::new(&sizes, HeadKind::Linear, &mut seeded_rng(seed))
}

fn adam(net: &MlpNet, cfg: &NetTrainConfig) -> Adam {
    Adam::for_net(
        net,
        AdamConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        },
    )
}

/// Softmax classifier over task labels, trained with cross-entropy.
/// Returns the net and its per-step loss.
pub fn train_task_classifier(
    ds: &TaskDataset,
    cfg: &NetTrainConfig,
    seed: u64,
) -> Result<(MlpNet, Vec<f64>)> {
    if ds.tasks < 2 {
        return Err(Error::InvalidArgument(
            "a task classifier needs at least two tasks".into(),
        ));
    }
    let Some((first, _)) = ds.entries.first() else {
        return Err(Error::InvalidArgument("empty task dataset".into()));
    };
    let mut net = new_net(first.len(), &cfg.hidden, ds.tasks, seed)?;
    let mut opt = adam(&net, cfg);
    let mut rng = seeded_rng(derive_seed(seed, 1));
    let mut curve = Vec::with_capacity(cfg.steps as usize);
    for _ in 0..cfg.steps {
        let picks: Vec<&(Observation, usize)> = (0..cfg.batch)
            .map(|_| &ds.entries[rng.gen_range(0..ds.entries.len())])
            .collect();
        let x = Matrix::from_observations(picks.iter().map(|(o, _)| o))?;
        let labels: Vec<usize> = picks.iter().map(|(_, y)| *y).collect();
        let logits = net.forward(&x)?;
        let (loss, g) = cross_entropy_loss(&logits, &labels)?;
        let grads = net.backward(&g)?;
        opt.step(&mut net, &grads)?;
        curve.push(loss);
    }
    Ok((net, curve))
}

/// Predicted task distribution.
pub fn classify(classifier: &MlpNet, obs: &Observation) -> Result<Vec<f64>> {
    Ok(softmax(&classifier.predict_one(obs.data())?))
}

/// Tasks whose predicted probability exceeds `delta`, or the single most
/// likely task when none does.
pub fn applicable_tasks(classifier: &MlpNet, obs: &Observation, delta: f64) -> Result<Vec<usize>> {
    let p = classify(classifier, obs)?;
    let set: Vec<usize> = (0..p.len()).filter(|&j| p[j] > delta).collect();
    Ok(if set.is_empty() {
        vec![argmax(&p)]
    } else {
        set
    })
}

/// One greedy action per applicable expert (ties broken by `rng`), as a
/// sorted set.
pub fn approx_optimal_set<R: Rng + ?Sized>(
    experts: &[Expert],
    obs: &Observation,
    applicable: &[usize],
    rng: &mut R,
) -> Result<Vec<ActionId>> {
    if applicable.is_empty() {
        return Err(Error::InvalidArgument("no applicable task".into()));
    }
    let mut set = BTreeSet::new();
    for &i in applicable {
        let e = experts.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            len: experts.len(),
        })?;
        set.insert(e.greedy(obs, rng)?);
    }
    Ok(set.into_iter().collect())
}

/// Membership vector of an approximate optimal set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionMask {
    bits: Vec<bool>,
}

impl ActionMask {
    pub fn from_actions(actions: &[ActionId], action_count: usize) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::InvalidArgument(
                "a mask needs at least one action".into(),
            ));
        }
        let mut bits = vec![false; action_count];
        for a in actions {
            *bits.get_mut(a.index()).ok_or(Error::ActionOutOfRange {
                action: a.index(),
                count: action_count,
            })? = true;
        }
        Ok(Self { bits })
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn contains(&self, a: ActionId) -> bool {
        self.bits.get(a.index()).copied().unwrap_or(false)
    }

    /// True iff every set bit of `self` is set in `other`.
    pub fn is_subset(&self, other: &ActionMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !a || *b)
    }
}

#[derive(Clone, Debug, Default)]
pub struct PriorDataset {
    pub entries: Vec<(Observation, ActionMask)>,
    /// Task whose rollouts produced each entry.
    pub sources: Vec<usize>,
}

/// Masks of approximate optimal sets for states from every task's rollouts
/// (balanced across tasks). With a classifier only the experts it deems
/// applicable contribute; without one, all experts do.
pub fn build_prior_dataset(
    experts: &[Expert],
    classifier: Option<&MlpNet>,
    states: &[Vec<Observation>],
    delta: f64,
    seed: u64,
) -> Result<PriorDataset> {
    let Some(first) = experts.first() else {
        return Err(Error::InvalidArgument("no experts".into()));
    };
    let actions = first.action_count();
    let all: Vec<usize> = (0..experts.len()).collect();
    let mut rng = seeded_rng(seed);
    let n = states.iter().map(Vec::len).min().unwrap_or(0);
    let mut ds = PriorDataset::default();
    for (task, list) in states.iter().enumerate() {
        for obs in &list[..n] {
            let applicable = match classifier {
                Some(c) => applicable_tasks(c, obs, delta)?,
                None => all.clone(),
            };
            let set = approx_optimal_set(experts, obs, &applicable, &mut rng)?;
            ds.entries
                .push((obs.clone(), ActionMask::from_actions(&set, actions)?));
            ds.sources.push(task);
        }
    }
    Ok(ds)
}

/// Multi-label logistic regression of masks. Returns the net (logits) and
/// its per-step loss.
pub fn train_action_prior(
    ds: &PriorDataset,
    cfg: &NetTrainConfig,
    seed: u64,
) -> Result<(MlpNet, Vec<f64>)> {
    let Some((first, mask)) = ds.entries.first() else {
        return Err(Error::InvalidArgument("empty prior dataset".into()));
    };
    let actions = mask.bits().len();
    let mut net = new_net(first.len(), &cfg.hidden, actions, seed)?;
    let mut opt = adam(&net, cfg);
    let mut rng = seeded_rng(derive_seed(seed, 1));
    let mut curve = Vec::with_capacity(cfg.steps as usize);
    for _ in 0..cfg.steps {
        let picks: Vec<&(Observation, ActionMask)> = (0..cfg.batch)
            .map(|_| &ds.entries[rng.gen_range(0..ds.entries.len())])
            .collect();
        let x = Matrix::from_observations(picks.iter().map(|(o, _)| o))?;
        let mut m = Matrix::zeros(picks.len(), actions);
        for (r, (_, mask)) in picks.iter().enumerate() {
            for (v, &b) in m.row_mut(r).iter_mut().zip(mask.bits()) {
                *v = b as u8 as f64;
            }
        }
        let logits = net.forward(&x)?;
        let (loss, g) = binary_mask_loss(&logits, &m)?;
        let grads = net.backward(&g)?;
        opt.step(&mut net, &grads)?;
        curve.push(loss);
    }
    Ok((net, curve))
}

/// `f_AP(s, a)` for every action.
pub fn prior_probabilities(prior: &MlpNet, obs: &Observation) -> Result<Vec<f64>> {
    Ok(prior
        .predict_one(obs.data())?
        .into_iter()
        .map(sigmoid)
        .collect())
}

/// Actions with `f_AP(s, a) > sigma`, or the single most probable action
/// when none qualifies.
pub fn proposed_actions(prior: &MlpNet, obs: &Observation, sigma: f64) -> Result<Vec<ActionId>> {
    let p = prior_probabilities(prior, obs)?;
    let set: Vec<ActionId> = (0..p.len())
        .filter(|&a| p[a] > sigma)
        .map(ActionId)
        .collect();
    Ok(if set.is_empty() {
        vec![ActionId(argmax(&p))]
    } else {
        set
    })
}

/// A uniform draw from [`proposed_actions`].
pub fn prior_policy_sample<R: Rng + ?Sized>(
    prior: &MlpNet,
    obs: &Observation,
    sigma: f64,
    rng: &mut R,
) -> Result<ActionId> {
    let set = proposed_actions(prior, obs, sigma)?;
    Ok(*set.choose(rng).expect("proposed set is never empty"))
}

/// The prior network with its threshold: uniform over the proposed set.
#[derive(Clone, Debug)]
pub struct ActionPriorPolicy {
    pub net: MlpNet,
    pub sigma: f64,
}

impl ActionPriorPolicy {
    pub fn proposed(&self, obs: &Observation) -> Result<Vec<ActionId>> {
        proposed_actions(&self.net, obs, self.sigma)
    }

    pub fn sample<R: Rng + ?Sized>(&self, obs: &Observation, rng: &mut R) -> Result<ActionId> {
        prior_policy_sample(&self.net, obs, self.sigma, rng)
    }

    /// Action probabilities: `1/|set|` on the proposed set, 0 elsewhere.
    pub fn probabilities(&self, obs: &Observation) -> Result<Vec<f64>> {
        let set = self.proposed(obs)?;
        let mut p = vec![0.0; self.net.output_dim()];
        for a in &set {
            p[a.index()] = 1.0 / set.len() as f64;
        }
        Ok(p)
    }
}

/// DQN training whose exploratory actions are drawn uniformly from the
/// prior's proposed set, recomputed at every exploration step.
pub fn explore_ap_loop<E: Environment>(
    agent: &mut DqnAgent,
    prior: &ActionPriorPolicy,
    env: &mut E,
) -> Result<TrainLog> {
    let mut source = |_: &E, obs: &Observation| prior.proposed(obs).map(Some);
    agent.train(env, &mut source)
}

/// Logged exploration actions that fall outside the prior's proposed set
/// for their state. Needs a log recorded with `record_explore`.
pub fn exploration_violations(log: &TrainLog, prior: &ActionPriorPolicy) -> Result<usize> {
    let mut bad = 0;
    for e in &log.explore_events {
        if !prior.proposed(&e.obs)?.contains(&e.action) {
            bad += 1;
        }
    }
    Ok(bad)
}

/// Training tasks of one domain, as seen by the prior pipeline.
pub trait TaskSuite {
    type Env: Environment;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn task_name(&self, task: usize) -> String;

    fn make_env(&self, task: usize, seed: u64) -> Result<Self::Env>;

    /// Trains, loads or constructs the expert for `task`.
    fn expert(&mut self, task: usize, seed: u64) -> Result<Expert>;
}

#[derive(Clone, Debug)]
pub struct ApArtifacts {
    pub experts: Vec<Expert>,
    pub classifier: Option<MlpNet>,
    pub prior: ActionPriorPolicy,
    pub classifier_loss: Vec<f64>,
    pub prior_loss: Vec<f64>,
}

/// Every expert of a suite, each with its own seed derived from `seed`.
pub fn suite_experts<S: TaskSuite>(suite: &mut S, seed: u64) -> Result<Vec<Expert>> {
    (0..suite.len())
        .map(|i| suite.expert(i, derive_seed(seed, 100 + i as u64)))
        .collect()
}

/// `k` states per task from greedy rollouts of the suite's experts.
pub fn suite_states<S: TaskSuite>(
    suite: &S,
    experts: &[Expert],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<Observation>>> {
    let mut envs = (0..suite.len())
        .map(|i| suite.make_env(i, derive_seed(seed, 200 + i as u64)))
        .collect::<Result<Vec<_>>>()?;
    collect_task_datasets(experts, &mut envs, k, derive_seed(seed, 1))
}

/// The classifier stage of the pipeline on its own, seeded exactly as
/// [`learn_ap_pipeline`] seeds it.
pub fn train_suite_classifier<S: TaskSuite>(
    suite: &mut S,
    cfg: &ApConfig,
    seed: u64,
) -> Result<(MlpNet, Vec<f64>)> {
    let experts = suite_experts(suite, seed)?;
    let states = suite_states(suite, &experts, cfg.k_per_task, seed)?;
    train_task_classifier(
        &TaskDataset::balanced(&states),
        &cfg.classifier,
        derive_seed(seed, 2),
    )
}

/// The full prior pipeline: experts, per-task state collection, task
/// classifier, masks, prior network. When `out` is given, every network
/// and loss curve is written under `experts/`, `classifier/`, `prior/` and
/// `logs/`.
pub fn learn_ap_pipeline<S: TaskSuite>(
    suite: &mut S,
    cfg: &ApConfig,
    seed: u64,
    out: Option<&Path>,
) -> Result<ApArtifacts> {
    learn_ap_pipeline_with(suite, cfg, seed, out, None)
}

/// [`learn_ap_pipeline`] with an already trained task classifier, used in
/// place of training one when the config enables the classifier.
pub fn learn_ap_pipeline_with<S: TaskSuite>(
    suite: &mut S,
    cfg: &ApConfig,
    seed: u64,
    out: Option<&Path>,
    trained_classifier: Option<MlpNet>,
) -> Result<ApArtifacts> {
    if suite.is_empty() {
        return Err(Error::InvalidArgument("no training tasks".into()));
    }
    let n = suite.len();
    let experts = suite_experts(suite, seed)?;
    let states = suite_states(suite, &experts, cfg.k_per_task, seed)?;
    let (classifier, classifier_loss) =
        if let (true, Some(c)) = (cfg.use_classifier, trained_classifier) {
            if c.output_dim() != n {
                return Err(Error::ArchMismatch(format!(
                    "classifier has {} classes for {n} tasks",
                    c.output_dim()
                )));
            }
            (Some(c), Vec::new())
        } else if cfg.use_classifier && n >= 2 {
            let ds = TaskDataset::balanced(&states);
            let (c, curve) = train_task_classifier(&ds, &cfg.classifier, derive_seed(seed, 2))?;
            (Some(c), curve)
        } else {
            (None, Vec::new())
        };
    let ds = build_prior_dataset(
        &experts,
        classifier.as_ref(),
        &states,
        cfg.delta,
        derive_seed(seed, 3),
    )?;
    let (net, prior_loss) = train_action_prior(&ds, &cfg.prior, derive_seed(seed, 4))?;
    let art = ApArtifacts {
        experts,
        classifier,
        prior: ActionPriorPolicy {
            net,
            sigma: cfg.sigma,
        },
        classifier_loss,
        prior_loss,
    };
    if let Some(dir) = out {
        persist(dir, suite, &art, cfg)?;
    }
    Ok(art)
}

fn persist<S: TaskSuite>(dir: &Path, suite: &S, art: &ApArtifacts, cfg: &ApConfig) -> Result<()> {
    for sub in ["experts", "classifier", "prior", "logs"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    for (i, e) in art.experts.iter().enumerate() {
        if let Expert::Net(net) = e {
            let name = suite.task_name(i);
            save_checkpoint(
                &dir.join("experts").join(format!("{name}.bin")),
                net,
                &serde_json::json!({ "task": name }),
            )?;
        }
    }
    let tasks: Vec<String> = (0..suite.len()).map(|i| suite.task_name(i)).collect();
    if let Some(c) = &art.classifier {
        save_checkpoint(
            &dir.join("classifier").join("classifier.bin"),
            c,
            &serde_json::json!({ "tasks": tasks, "config": cfg.classifier, "delta": cfg.delta }),
        )?;
    }
    save_checkpoint(
        &dir.join("prior").join("prior.bin"),
        &art.prior.net,
        &serde_json::json!({ "tasks": tasks, "config": cfg, "sigma": art.prior.sigma }),
    )?;
    write_curve(
        &dir.join("logs").join("classifier_loss.csv"),
        &art.classifier_loss,
    )?;
    write_curve(&dir.join("logs").join("prior_loss.csv"), &art.prior_loss)?;
    Ok(())
}

pub(crate) fn write_curve(path: &Path, curve: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "loss"])?;
    for (i, l) in curve.iter().enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Loads `prior/prior.bin` from an artifact directory, with the threshold
/// recorded next to it unless `sigma` overrides it.
pub fn load_prior(dir: &Path, sigma: Option<f64>) -> Result<ActionPriorPolicy> {
    let (net, meta) = load_checkpoint(&dir.join("prior").join("prior.bin"))?;
    let sigma = sigma
        .or_else(|| meta.get("sigma").and_then(|v| v.as_f64()))
        .unwrap_or(ApConfig::default().sigma);
    Ok(ActionPriorPolicy { net, sigma })
}

/// Loads `classifier/classifier.bin` if present.
pub fn load_classifier(dir: &Path) -> Result<Option<MlpNet>> {
    let path = dir.join("classifier").join("classifier.bin");
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(load_checkpoint(&path)?.0))
}
