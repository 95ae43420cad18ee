use serde::{Deserialize, Serialize};

use super::TdLossKind;
use crate::error::{Error, Result};

/// Length of a training run, in environment steps or in episodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainBudget {
    Steps(u64),
    Episodes(u64),
}

impl TrainBudget {
    pub fn amount(self) -> u64 {
        match self {
            TrainBudget::Steps(n) | TrainBudget::Episodes(n) => n,
        }
    }

    /// Same unit, different amount.
    pub fn with_amount(self, n: u64) -> Self {
        match self {
            TrainBudget::Steps(_) => TrainBudget::Steps(n),
            TrainBudget::Episodes(_) => TrainBudget::Episodes(n),
        }
    }
}

/// Training hyperparameters shared by agents, classifier and prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub gamma: f64,
    pub lr: f64,
    pub batch: usize,
    pub hidden: Vec<usize>,
    /// Prior threshold on `f_AP(s, a)`.
    pub sigma: f64,
    /// Classifier threshold for task applicability.
    pub delta: f64,
    /// Weight of the strict large-margin term.
    pub omega: f64,
    pub margin: f64,
    /// Weight of the L2 anchor to the prior's parameters.
    pub omega_ws: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_horizon: u64,
    /// States collected per task for classifier and prior datasets.
    pub k_per_task: usize,
    /// Training length; also the clock of the epsilon schedule.
    pub budget: TrainBudget,
    pub learning_starts: usize,
    pub target_sync: u64,
    pub buffer_capacity: usize,
    /// Whether sampled transitions are weighted by importance ratios.
    pub importance_weights: bool,
    pub td_loss: TdLossKind,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self::fruits()
    }
}

impl Hyperparams {
    pub fn fruits() -> Self {
        Self {
            gamma: 0.9,
            lr: 5e-4,
            batch: 32,
            hidden: vec![256, 256],
            sigma: 0.1,
            delta: 0.05,
            omega: 0.1,
            margin: 0.1,
            omega_ws: 0.1,
            eps_start: 1.0,
            eps_end: 0.1,
            eps_horizon: 80_000,
            k_per_task: 20_000,
            budget: TrainBudget::Steps(100_000),
            learning_starts: 1_000,
            target_sync: 1_000,
            buffer_capacity: 100_000,
            importance_weights: true,
            td_loss: TdLossKind::Squared,
        }
    }

    pub fn gridstack() -> Self {
        Self {
            lr: 1e-4,
            eps_end: 0.01,
            budget: TrainBudget::Episodes(20_000),
            importance_weights: false,
            ..Self::fruits()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} not in [0, 1)", self.gamma));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) || !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!(
                "sigma {} and delta {} must lie in (0, 1)",
                self.sigma, self.delta
            ));
        }
        if self.margin <= 0.0 {
            return bad(format!("margin {} must be positive", self.margin));
        }
        if self.batch == 0 || self.hidden.contains(&0) {
            return bad("batch and hidden widths must be positive".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.eps_end) || !(0.0..=1.0).contains(&self.eps_start) {
            return bad("epsilon bounds must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// `max(eps_end, eps_start - t (eps_start - eps_end) / horizon)`.
    pub fn epsilon(&self, t: u64) -> f64 {
        if self.eps_horizon == 0 {
            return self.eps_end;
        }
        let frac = t as f64 / self.eps_horizon as f64;
        (self.eps_start - frac * (self.eps_start - self.eps_end)).max(self.eps_end)
    }
}
