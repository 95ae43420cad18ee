use std::path::{Path, PathBuf};

use super::config::{ExperimentConfig, FruitsExperts};
use crate::agents::{
    train_fruits_expert, train_sdqfd_expert, Expert, FruitsExpertConfig, SdqfdConfig,
};
use crate::error::{Error, Result};
use crate::fruits::{FruitsEnv, FruitsTask};
use crate::grammar::{parse_task, StackTask};
use crate::gridstack::GridStackEnv;
use crate::nn::{load_checkpoint, Hyperparams};
use crate::prior::TaskSuite;

/// Loads `experts/<name>.bin` from an artifact directory, if present.
fn stored_expert(dir: Option<&Path>, name: &str) -> Result<Option<Expert>> {
    let Some(dir) = dir else { return Ok(None) };
    let path = dir.join("experts").join(format!("{name}.bin"));
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(Expert::Net(load_checkpoint(&path)?.0)))
}

/// Fruits training tasks. All tasks must share an observation layout, so a
/// suite holds only combination or only sequence tasks.
#[derive(Clone, Debug)]
pub struct FruitsSuite {
    pub tasks: Vec<FruitsTask>,
    pub source: FruitsExperts,
    pub expert_cfg: FruitsExpertConfig,
    pub hp: Hyperparams,
    pub load_dir: Option<PathBuf>,
}

impl FruitsSuite {
    pub fn new(
        tasks: Vec<FruitsTask>,
        source: FruitsExperts,
        expert_cfg: FruitsExpertConfig,
        hp: Hyperparams,
    ) -> Result<Self> {
        if tasks.windows(2).any(|w| w[0].mode != w[1].mode) {
            return Err(Error::InvalidArgument(
                "fruits tasks mix combinations and sequences".into(),
            ));
        }
        Ok(Self {
            tasks,
            source,
            expert_cfg,
            hp,
            load_dir: None,
        })
    }

    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let tasks = cfg
            .tasks
            .iter()
            .map(|t| FruitsTask::parse(t))
            .collect::<Result<Vec<_>>>()?;
        let mut suite = Self::new(tasks, cfg.fruits_experts, cfg.fruits_expert, cfg.hp.clone())?;
        suite.load_dir = cfg.artifacts.clone();
        Ok(suite)
    }

    /// Parses the held-out task and checks it matches the suite's mode.
    pub fn held_out_task(&self, name: &str) -> Result<FruitsTask> {
        let task = FruitsTask::parse(name)?;
        if self.tasks.first().is_some_and(|t| t.mode != task.mode) {
            return Err(Error::InvalidArgument(format!(
                "{name} differs in mode from the training tasks"
            )));
        }
        Ok(task)
    }
}

impl TaskSuite for FruitsSuite {
    type Env = FruitsEnv;

    fn len(&self) -> usize {
        self.tasks.len()
    }

    fn task_name(&self, task: usize) -> String {
        self.tasks[task].name()
    }

    fn make_env(&self, task: usize, seed: u64) -> Result<FruitsEnv> {
        Ok(FruitsEnv::new(self.tasks[task].clone(), seed))
    }

    fn expert(&mut self, task: usize, seed: u64) -> Result<Expert> {
        let t = &self.tasks[task];
        if let Some(e) = stored_expert(self.load_dir.as_deref(), &t.name())? {
            return Ok(e);
        }
        Ok(match self.source {
            FruitsExperts::Scripted => Expert::Fruits(t.clone()),
            FruitsExperts::Trained => {
                Expert::Net(train_fruits_expert(t, &self.expert_cfg, &self.hp, seed)?.0)
            }
        })
    }
}

/// Block-stacking training tasks with SDQfD experts.
#[derive(Clone, Debug)]
pub struct GridStackSuite {
    pub tasks: Vec<StackTask>,
    pub sdqfd: SdqfdConfig,
    pub hp: Hyperparams,
    pub load_dir: Option<PathBuf>,
}

impl GridStackSuite {
    pub fn new(tasks: Vec<StackTask>, sdqfd: SdqfdConfig, hp: Hyperparams) -> Self {
        Self {
            tasks,
            sdqfd,
            hp,
            load_dir: None,
        }
    }

    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let tasks = cfg
            .tasks
            .iter()
            .map(|t| parse_task(t))
            .collect::<Result<Vec<_>>>()?;
        let hp = cfg.expert_hp.clone().unwrap_or_else(|| cfg.hp.clone());
        let mut suite = Self::new(tasks, cfg.sdqfd, hp);
        suite.load_dir = cfg.artifacts.clone();
        Ok(suite)
    }

    pub fn width(&self) -> usize {
        self.sdqfd.width
    }

    pub fn held_out_task(&self, name: &str) -> Result<StackTask> {
        parse_task(name)
    }
}

impl TaskSuite for GridStackSuite {
    type Env = GridStackEnv;

    fn len(&self) -> usize {
        self.tasks.len()
    }

    fn task_name(&self, task: usize) -> String {
        self.tasks[task].name().to_string()
    }

    fn make_env(&self, task: usize, seed: u64) -> Result<GridStackEnv> {
        GridStackEnv::with_width(self.tasks[task].clone(), self.sdqfd.width, seed)
    }

    fn expert(&mut self, task: usize, seed: u64) -> Result<Expert> {
        let t = &self.tasks[task];
        if let Some(e) = stored_expert(self.load_dir.as_deref(), t.name())? {
            return Ok(e);
        }
        Ok(Expert::Net(
            train_sdqfd_expert(t, &self.sdqfd, &self.hp, seed)?.0,
        ))
    }
}
