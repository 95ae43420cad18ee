use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{AmConfig, AmVariant, FruitsExpertConfig, SdqfdConfig};
use crate::error::{Error, Result};
use crate::nn::Hyperparams;
use crate::prior::ApConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Fruits,
    GridStack,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Fruits => "fruits",
            Domain::GridStack => "gridstack",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fruits" => Ok(Domain::Fruits),
            "gridstack" => Ok(Domain::GridStack),
            _ => Err(Error::UnknownToken(s.to_string())),
        }
    }
}

/// Transfer methods. `RS` explores uniformly, so `DQN_RS` is plain DQN; `HS`
/// uses the height heuristic, which has no meaning in Fruits and falls back
/// to uniform there. `WS` variants start from the prior's weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "DQN")]
    Dqn,
    #[serde(rename = "DQN_AP")]
    DqnAp,
    #[serde(rename = "DQN_AP_WS")]
    DqnApWs,
    #[serde(rename = "DQN_RS")]
    DqnRs,
    #[serde(rename = "DQN_HS")]
    DqnHs,
    #[serde(rename = "DQN_RS_WS")]
    DqnRsWs,
    #[serde(rename = "DQN_HS_WS")]
    DqnHsWs,
    #[serde(rename = "AM_Share")]
    AmShare,
    #[serde(rename = "AM_Freeze")]
    AmFreeze,
    #[serde(rename = "AM_Prog")]
    AmProg,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Dqn,
        Method::DqnAp,
        Method::DqnApWs,
        Method::DqnRs,
        Method::DqnHs,
        Method::DqnRsWs,
        Method::DqnHsWs,
        Method::AmShare,
        Method::AmFreeze,
        Method::AmProg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dqn => "DQN",
            Method::DqnAp => "DQN_AP",
            Method::DqnApWs => "DQN_AP_WS",
            Method::DqnRs => "DQN_RS",
            Method::DqnHs => "DQN_HS",
            Method::DqnRsWs => "DQN_RS_WS",
            Method::DqnHsWs => "DQN_HS_WS",
            Method::AmShare => "AM_Share",
            Method::AmFreeze => "AM_Freeze",
            Method::AmProg => "AM_Prog",
        }
    }

    /// Explores with the action prior.
    pub fn uses_prior(self) -> bool {
        matches!(self, Method::DqnAp | Method::DqnApWs)
    }

    pub fn weight_sharing(self) -> bool {
        matches!(self, Method::DqnApWs | Method::DqnRsWs | Method::DqnHsWs)
    }

    pub fn heuristic(self) -> bool {
        matches!(self, Method::DqnHs | Method::DqnHsWs)
    }

    pub fn am_variant(self) -> Option<AmVariant> {
        match self {
            Method::AmShare => Some(AmVariant::Share),
            Method::AmFreeze => Some(AmVariant::Freeze),
            Method::AmProg => Some(AmVariant::Prog),
            _ => None,
        }
    }

    /// Needs expert policies for the training tasks.
    pub fn needs_experts(self) -> bool {
        self.uses_prior() || self.weight_sharing() || self.am_variant().is_some()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownToken(s.to_string()))
    }
}

/// Where Fruits experts come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FruitsExperts {
    /// Exact policies computed from the state.
    Scripted,
    /// DQN trained on a half-optimal pre-filled buffer.
    #[default]
    Trained,
}

/// One leave-one-out experiment. `tasks` are the training tasks; the
/// held-out task must not be among them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub version: u32,
    pub domain: Domain,
    pub tasks: Vec<String>,
    pub held_out: String,
    pub method: Method,
    pub seeds: Vec<u64>,
    /// Transfer agent settings. Also used for Fruits experts.
    pub hp: Hyperparams,
    /// Prior pipeline settings. The prior's hidden widths are replaced by
    /// `hp.hidden` for weight-sharing methods.
    pub ap: ApConfig,
    pub fruits_experts: FruitsExperts,
    pub fruits_expert: FruitsExpertConfig,
    /// GridStack experts; `sdqfd.width` is also the board width of every
    /// GridStack environment in the run.
    pub sdqfd: SdqfdConfig,
    /// Hyperparameters for SDQfD experts; `hp` when absent.
    pub expert_hp: Option<Hyperparams>,
    /// Actor-Mimic student; its hidden widths follow `hp.hidden`.
    pub am: AmConfig,
    pub eval_episodes: usize,
    /// Seed for experts, classifier, prior and student.
    pub pipeline_seed: u64,
    /// Directory with prior-pipeline artifacts to load instead of training.
    pub artifacts: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_domain(Domain::Fruits)
    }
}

impl ExperimentConfig {
    /// Defaults of a domain: its hyperparameter preset, 5 seeds, 100
    /// evaluation episodes.
    pub fn for_domain(domain: Domain) -> Self {
        let (hp, ap) = match domain {
            Domain::Fruits => {
                let mut ap = ApConfig::default();
                ap.prior.lr = 0.01;
                (Hyperparams::fruits(), ap)
            }
            Domain::GridStack => (Hyperparams::gridstack(), ApConfig::default()),
        };
        Self {
            version: CONFIG_VERSION,
            domain,
            tasks: Vec::new(),
            held_out: String::new(),
            method: Method::DqnAp,
            seeds: (0..5).collect(),
            hp,
            ap,
            fruits_experts: FruitsExperts::default(),
            fruits_expert: FruitsExpertConfig::default(),
            sdqfd: SdqfdConfig::default(),
            expert_hp: None,
            am: AmConfig::default(),
            eval_episodes: 100,
            pipeline_seed: 0,
            artifacts: None,
            out: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.version != CONFIG_VERSION {
            return bad(format!(
                "config version {} (expected {CONFIG_VERSION})",
                self.version
            ));
        }
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        if self.held_out.is_empty() {
            return bad("no held-out task".into());
        }
        if self.tasks.contains(&self.held_out) {
            return bad(format!(
                "held-out task {} is also a training task",
                self.held_out
            ));
        }
        if self.method.needs_experts() && self.tasks.is_empty() && self.artifacts.is_none() {
            return bad(format!("{} needs training tasks", self.method));
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be positive".into());
        }
        self.hp.validate()
    }

    /// SHA-256 of the config without its output directory, as hex.
    pub fn hash(&self) -> Result<String> {
        let canonical = ExperimentConfig {
            out: None,
            ..self.clone()
        };
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&canonical)?)))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.display().to_string()),
            _ => e.into(),
        })?;
        Self::from_json(&text)
    }

    /// Parses a config, filling absent fields (at any depth) from the
    /// defaults of the domain it names.
    pub fn from_json(text: &str) -> Result<Self> {
        let user: serde_json::Value = serde_json::from_str(text)?;
        let domain = match user.get("domain") {
            Some(d) => serde_json::from_value(d.clone())?,
            None => Domain::Fruits,
        };
        let mut merged = serde_json::to_value(Self::for_domain(domain))?;
        merge(&mut merged, user);
        Ok(serde_json::from_value(merged)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
