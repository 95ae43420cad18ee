//! The pipeline split into resumable steps that read and write an artifact
//! directory (`experts/`, `classifier/`, `prior/`, `logs/`).

use std::path::{Path, PathBuf};

use super::config::{Domain, ExperimentConfig};
use super::suites::{FruitsSuite, GridStackSuite};
use super::{eval_prior_success, SigmaPoint};
use crate::agents::{train_fruits_expert, train_sdqfd_expert};
use crate::error::{Error, Result};
use crate::fruits::{FruitsEnv, FruitsTask};
use crate::grammar::parse_task;
use crate::gridstack::{deconstruction_demo, GridStackEnv};
use crate::mdp::{seeded_rng, Transition};
use crate::nn::save_checkpoint;
use crate::prior::{
    learn_ap_pipeline_with, load_classifier, load_prior, train_suite_classifier, write_curve,
    ApArtifacts,
};

/// Runs `$body` with `$suite` bound to the config's task suite, loading
/// stored experts from `$dir`.
macro_rules! with_suite {
    ($cfg:expr, $dir:expr, |$suite:ident| $body:expr) => {
        match $cfg.domain {
            Domain::Fruits => {
                let mut $suite = FruitsSuite::from_config($cfg)?;
                $suite.load_dir = Some($dir.to_path_buf());
                $body
            }
            Domain::GridStack => {
                let mut $suite = GridStackSuite::from_config($cfg)?;
                $suite.load_dir = Some($dir.to_path_buf());
                $body
            }
        }
    };
}

/// Trains the expert for one task and stores it as `experts/<task>.bin`,
/// with its training curve in `logs/`.
pub fn train_expert_stage(cfg: &ExperimentConfig, task: &str, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir.join("experts"))?;
    std::fs::create_dir_all(dir.join("logs"))?;
    let seed = cfg.pipeline_seed;
    let (net, name) = match cfg.domain {
        Domain::Fruits => {
            let t = FruitsTask::parse(task)?;
            let (net, log) = train_fruits_expert(&t, &cfg.fruits_expert, &cfg.hp, seed)?;
            log.save_csv(&dir.join("logs").join(format!("{}_expert.csv", t.name())))?;
            (net, t.name())
        }
        Domain::GridStack => {
            let t = parse_task(task)?;
            let hp = cfg.expert_hp.as_ref().unwrap_or(&cfg.hp);
            let (net, log) = train_sdqfd_expert(&t, &cfg.sdqfd, hp, seed)?;
            let mut w =
                csv::Writer::from_path(dir.join("logs").join(format!("{}_expert.csv", t.name())))?;
            for r in &log.episodes {
                w.serialize(r)?;
            }
            w.flush()?;
            (net, t.name().to_string())
        }
    };
    let path = dir.join("experts").join(format!("{name}.bin"));
    save_checkpoint(
        &path,
        &net,
        &serde_json::json!({ "task": name, "seed": seed }),
    )?;
    Ok(path)
}

/// Trains the task classifier over the config's training tasks (experts
/// are loaded from `dir` when stored there) and writes
/// `classifier/classifier.bin`.
pub fn train_classifier_stage(cfg: &ExperimentConfig, dir: &Path) -> Result<PathBuf> {
    if cfg.tasks.len() < 2 {
        return Err(Error::InvalidArgument(
            "a classifier needs at least two training tasks".into(),
        ));
    }
    let (net, curve) = with_suite!(cfg, dir, |suite| train_suite_classifier(
        &mut suite,
        &cfg.ap,
        cfg.pipeline_seed
    )?);
    std::fs::create_dir_all(dir.join("classifier"))?;
    std::fs::create_dir_all(dir.join("logs"))?;
    let path = dir.join("classifier").join("classifier.bin");
    save_checkpoint(
        &path,
        &net,
        &serde_json::json!({ "tasks": cfg.tasks, "config": cfg.ap.classifier, "delta": cfg.ap.delta }),
    )?;
    write_curve(&dir.join("logs").join("classifier_loss.csv"), &curve)?;
    Ok(path)
}

/// Builds the prior from the training tasks, reusing stored experts and
/// classifier, and persists every artifact under `dir`.
pub fn train_prior_stage(cfg: &ExperimentConfig, dir: &Path) -> Result<ApArtifacts> {
    let classifier = if cfg.ap.use_classifier {
        load_classifier(dir)?
    } else {
        None
    };
    with_suite!(cfg, dir, |suite| learn_ap_pipeline_with(
        &mut suite,
        &cfg.ap,
        cfg.pipeline_seed,
        Some(dir),
        classifier
    ))
}

/// Prior-only success of the prior stored in `dir` on `task`, one point per
/// threshold. The classifier flag records whether `dir` holds a classifier.
pub fn eval_prior_stage(
    cfg: &ExperimentConfig,
    dir: &Path,
    task: &str,
    sigmas: &[f64],
    episodes: usize,
) -> Result<Vec<SigmaPoint>> {
    let prior = load_prior(dir, None)?;
    let classifier_on = load_classifier(dir)?.is_some();
    let seed = cfg.pipeline_seed;
    match cfg.domain {
        Domain::Fruits => {
            let t = FruitsTask::parse(task)?;
            eval_prior_success(
                &prior.net,
                classifier_on,
                |s| Ok(FruitsEnv::new(t.clone(), s)),
                sigmas,
                episodes,
                seed,
            )
        }
        Domain::GridStack => {
            let t = parse_task(task)?;
            let width = cfg.sdqfd.width;
            eval_prior_success(
                &prior.net,
                classifier_on,
                |s| GridStackEnv::with_width(t.clone(), width, s),
                sigmas,
                episodes,
                seed,
            )
        }
    }
}

/// `count` reversed deconstruction episodes for a stacking task.
pub fn gen_demos(task: &str, count: usize, width: usize, seed: u64) -> Result<Vec<Transition>> {
    let t = parse_task(task)?;
    let mut rng = seeded_rng(seed);
    let mut out = Vec::new();
    for _ in 0..count {
        out.extend(deconstruction_demo(&t, width, &mut rng)?);
    }
    Ok(out)
}
