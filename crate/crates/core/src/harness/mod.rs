//! Experiment orchestration: leave-one-out transfer runs, prior-only
//! evaluation over a threshold grid, and result aggregation.

mod config;
mod report;
mod stages;
mod suites;

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use config::{Domain, ExperimentConfig, FruitsExperts, Method, CONFIG_VERSION};
pub use report::{
    aggregate_and_emit, curve_rows, mean_ci, read_curves_csv, read_summary_csv, summarize,
    write_curves_csv, CurveRow, EmitFormat, SummaryRow,
};
pub use stages::{
    eval_prior_stage, gen_demos, train_classifier_stage, train_expert_stage, train_prior_stage,
};
pub use suites::{FruitsSuite, GridStackSuite};

use crate::agents::{
    am_transfer_init, evaluate, evaluate_net, train_am_student, DqnAgent, EvalResult,
    ExploreSource, HeuristicExplore, UniformExplore,
};
use crate::error::{Error, Result};
use crate::mdp::{derive_seed, seeded_rng, ActionId, Environment, Observation};
use crate::nn::MlpNet;
use crate::prior::{
    learn_ap_pipeline, load_prior, proposed_actions, suite_experts, suite_states,
    ActionPriorPolicy, ApConfig, TaskSuite,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub episode: u64,
    #[serde(rename = "return")]
    pub ret: f64,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// One point per training episode.
    pub curve: Vec<CurvePoint>,
    /// Greedy evaluation halfway through the budget.
    pub mid: EvalResult,
    #[serde(rename = "final")]
    pub fin: EvalResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub domain: Domain,
    pub method: Method,
    pub task: String,
    pub seeds: Vec<SeedResult>,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn seed_list(&self) -> Vec<u64> {
        self.seeds.iter().map(|s| s.seed).collect()
    }

    pub fn mean_final_return(&self) -> f64 {
        mean(self.seeds.iter().map(|s| s.fin.mean_return))
    }

    pub fn mean_final_success(&self) -> f64 {
        mean(self.seeds.iter().map(|s| s.fin.success_rate))
    }

    pub fn mean_mid_return(&self) -> f64 {
        mean(self.seeds.iter().map(|s| s.mid.mean_return))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.display().to_string()),
            _ => e.into(),
        })?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Trains the configured method on the held-out task once per seed and
/// evaluates the greedy policy halfway through and at the end. When the
/// config names an output directory the record and its curves are written
/// there.
pub fn run_leave_one_out(cfg: &ExperimentConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let record = match cfg.domain {
        Domain::Fruits => {
            let mut suite = FruitsSuite::from_config(cfg)?;
            let held = suite.held_out_task(&cfg.held_out)?;
            run_with(cfg, &mut suite, |seed| {
                Ok(crate::fruits::FruitsEnv::new(held.clone(), seed))
            })?
        }
        Domain::GridStack => {
            let mut suite = GridStackSuite::from_config(cfg)?;
            let held = suite.held_out_task(&cfg.held_out)?;
            let width = suite.width();
            run_with(cfg, &mut suite, |seed| {
                crate::gridstack::GridStackEnv::with_width(held.clone(), width, seed)
            })?
        }
    };
    if let Some(dir) = &cfg.out {
        std::fs::create_dir_all(dir)?;
        record.save(&dir.join("record.json"))?;
        write_curves_csv(
            &dir.join("curves.csv"),
            &curve_rows(std::slice::from_ref(&record)),
        )?;
    }
    Ok(record)
}

/// The prior for a run: loaded from `cfg.artifacts` when set, otherwise
/// learned from the suite's training tasks (and persisted under
/// `out/artifacts` when an output directory is configured).
pub fn prior_for<S: TaskSuite>(cfg: &ExperimentConfig, suite: &mut S) -> Result<ActionPriorPolicy> {
    if let Some(dir) = &cfg.artifacts {
        return load_prior(dir, Some(cfg.ap.sigma));
    }
    let ap = effective_ap_config(cfg);
    let out = cfg.out.as_ref().map(|d| d.join("artifacts"));
    Ok(learn_ap_pipeline(suite, &ap, cfg.pipeline_seed, out.as_deref())?.prior)
}

/// Weight sharing copies the prior into the agent, so the prior takes the
/// agent's hidden widths.
fn effective_ap_config(cfg: &ExperimentConfig) -> ApConfig {
    let mut ap = cfg.ap.clone();
    if cfg.method.weight_sharing() {
        ap.prior.hidden = cfg.hp.hidden.clone();
    }
    ap
}

enum Init {
    Fresh,
    Prior(ActionPriorPolicy),
    Student(crate::agents::AmStudent),
}

fn run_with<S, F>(cfg: &ExperimentConfig, suite: &mut S, make_env: F) -> Result<RunRecord>
where
    S: TaskSuite,
    F: Fn(u64) -> Result<S::Env>,
    HeuristicExplore: ExploreSource<S::Env>,
{
    let start = Instant::now();
    let method = cfg.method;
    let init = if method.uses_prior() || method.weight_sharing() {
        Init::Prior(prior_for(cfg, suite)?)
    } else if method.am_variant().is_some() {
        Init::Student(student_for(cfg, suite)?)
    } else {
        Init::Fresh
    };
    let probe = make_env(0)?;
    let (obs_len, actions) = (probe.obs_len(), probe.action_count());
    let half = cfg.hp.budget.amount() / 2;
    let full = cfg.hp.budget.amount();
    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let mut agent = match (&init, method.am_variant()) {
            (Init::Student(student), Some(v)) => {
                am_transfer_init(student, v, cfg.hp.clone(), seed)?
            }
            _ => DqnAgent::new(obs_len, actions, cfg.hp.clone(), seed)?,
        };
        let prior = match &init {
            Init::Prior(p) => Some(p),
            _ => None,
        };
        if method.weight_sharing() {
            let p = prior.expect("weight sharing always loads a prior");
            agent.share_weights(&p.net, cfg.hp.omega_ws)?;
        }
        let mut explore: Box<dyn ExploreSource<S::Env> + '_> =
            match (method.uses_prior(), method.heuristic()) {
                (true, _) => {
                    let p = prior.expect("prior methods always load a prior");
                    Box::new(move |_: &S::Env, obs: &Observation| p.proposed(obs).map(Some))
                }
                (false, true) => Box::new(HeuristicExplore),
                (false, false) => Box::new(UniformExplore),
            };
        let mut env = make_env(derive_seed(seed, 1))?;
        let mut log = agent.train_until(&mut env, half, explore.as_mut())?;
        let mid = evaluate_net(
            &agent.online,
            &mut make_env(derive_seed(seed, 2))?,
            cfg.eval_episodes,
        )?;
        log.extend(agent.train_until(&mut env, full, explore.as_mut())?);
        let fin = evaluate_net(
            &agent.online,
            &mut make_env(derive_seed(seed, 3))?,
            cfg.eval_episodes,
        )?;
        let curve = log
            .episodes
            .iter()
            .map(|r| CurvePoint {
                step: r.step,
                episode: r.episode,
                ret: r.ret,
                success: r.success,
            })
            .collect();
        seeds.push(SeedResult {
            seed,
            curve,
            mid,
            fin,
        });
    }
    Ok(RunRecord {
        config_hash: cfg.hash()?,
        domain: cfg.domain,
        method,
        task: cfg.held_out.clone(),
        seeds,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

fn student_for<S: TaskSuite>(
    cfg: &ExperimentConfig,
    suite: &mut S,
) -> Result<crate::agents::AmStudent> {
    let seed = cfg.pipeline_seed;
    let experts = suite_experts(suite, seed)?;
    let states = suite_states(suite, &experts, cfg.ap.k_per_task, seed)?;
    let am = crate::agents::AmConfig {
        hidden: cfg.hp.hidden.clone(),
        ..cfg.am.clone()
    };
    train_am_student(&experts, &states, &am, derive_seed(seed, 5))
}

/// Success rate of one threshold setting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaPoint {
    pub sigma: f64,
    /// Whether the prior was built with the task classifier.
    pub classifier: bool,
    pub success: f64,
}

/// Rolls out the prior policy alone (uniform over the proposed set, no
/// learning) for `episodes` episodes at each threshold. Every threshold sees
/// the same sequence of start states.
pub fn eval_prior_success<E, F>(
    prior: &MlpNet,
    classifier_on: bool,
    make_env: F,
    sigma_grid: &[f64],
    episodes: usize,
    seed: u64,
) -> Result<Vec<SigmaPoint>>
where
    E: Environment,
    F: Fn(u64) -> Result<E>,
{
    if episodes == 0 {
        return Err(Error::InvalidArgument("episodes must be positive".into()));
    }
    sigma_grid
        .iter()
        .map(|&sigma| {
            if !(0.0..1.0).contains(&sigma) {
                return Err(Error::InvalidArgument(format!(
                    "sigma {sigma} not in [0, 1)"
                )));
            }
            let mut env = make_env(seed)?;
            let mut rng = seeded_rng(derive_seed(seed, 1));
            let EvalResult { success_rate, .. } = evaluate(&mut env, episodes, |_, obs| {
                let set: Vec<ActionId> = proposed_actions(prior, obs, sigma)?;
                Ok(*set.choose(&mut rng).expect("proposed set is never empty"))
            })?;
            Ok(SigmaPoint {
                sigma,
                classifier: classifier_on,
                success: success_rate,
            })
        })
        .collect()
}
