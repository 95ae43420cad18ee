use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DqnAgent, Expert};
use crate::error::{Error, Result};
use crate::mdp::{seeded_rng, Observation};
use crate::nn::{
    soft_cross_entropy_loss, softmax, Adam, AdamConfig, HeadKind, Hyperparams, Matrix, MlpNet,
};

/// Multi-head distillation student. The heads are stored side by side in
/// one linear output layer: head `i` owns outputs `i*A..(i+1)*A`.
#[derive(Clone, Debug)]
pub struct AmStudent {
    pub net: MlpNet,
    heads: usize,
    actions: usize,
}

impl AmStudent {
    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn head_logits(&self, obs: &Observation, head: usize) -> Result<Vec<f64>> {
        if head >= self.heads {
            return Err(Error::IndexOutOfRange {
                index: head,
                len: self.heads,
            });
        }
        let out = self.net.predict_one(obs.data())?;
        Ok(out[head * self.actions..(head + 1) * self.actions].to_vec())
    }

    /// Last hidden activations, shared by all heads.
    pub fn features(&self, obs: &Observation) -> Result<Vec<f64>> {
        let mut h: Vec<f64> = obs.data().iter().map(|&v| v as f64).collect();
        for d in self.net.hidden_layers() {
            let mut next = d.b.clone();
            for (i, x) in h.iter().enumerate() {
                for (o, w) in next
                    .iter_mut()
                    .zip(&d.w[i * d.out_dim..(i + 1) * d.out_dim])
                {
                    *o += x * w;
                }
            }
            next.iter_mut().for_each(|v| *v = v.max(0.0));
            h = next;
        }
        Ok(h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AmConfig {
    pub hidden: Vec<usize>,
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    /// Temperature applied to expert Q-values before the softmax.
    pub tau: f64,
}

impl Default for AmConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            steps: 10_000,
            batch: 32,
            lr: 1e-3,
            tau: 1.0,
        }
    }
}

/// Distills each expert into its own head over that expert's states.
pub fn train_am_student(
    experts: &[Expert],
    datasets: &[Vec<Observation>],
    cfg: &AmConfig,
    seed: u64,
) -> Result<AmStudent> {
    if experts.is_empty() || experts.len() != datasets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} experts for {} datasets",
            experts.len(),
            datasets.len()
        )));
    }
    if datasets.iter().any(Vec::is_empty) {
        return Err(Error::InvalidArgument(
            "every task needs at least one state".into(),
        ));
    }
    let actions = experts[0].action_count();
    if experts.iter().any(|e| e.action_count() != actions) {
        return Err(Error::ArchMismatch(
            "experts disagree on the action count".into(),
        ));
    }
    let obs_len = datasets[0][0].len();
    let heads = experts.len();
    // Soft targets are fixed, so compute them once.
    let targets: Vec<Vec<Vec<f64>>> = experts
        .iter()
        .zip(datasets)
        .map(|(e, d)| {
            d.iter()
                .map(|o| {
                    let q: Vec<f64> = e.q_values(o)?.into_iter().map(|v| v / cfg.tau).collect();
                    Ok(softmax(&q))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut rng = seeded_rng(seed);
    let mut sizes = vec![obs_len];
    sizes.extend(&cfg.hidden);
    sizes.push(heads * actions);
    let mut net = MlpNet::new(&sizes, HeadKind::Linear, &mut rng)?;
    let mut opt = Adam::for_net(&net, AdamConfig::with_lr(cfg.lr));
    for _ in 0..cfg.steps {
        let picks: Vec<(usize, usize)> = (0..cfg.batch)
            .map(|_| {
                let task = rng.gen_range(0..heads);
                (task, rng.gen_range(0..datasets[task].len()))
            })
            .collect();
        let x = Matrix::from_observations(picks.iter().map(|&(t, i)| &datasets[t][i]))?;
        let out = net.forward(&x)?;
        let mut logits = Matrix::zeros(picks.len(), actions);
        let mut soft = Matrix::zeros(picks.len(), actions);
        for (r, &(t, i)) in picks.iter().enumerate() {
            logits
                .row_mut(r)
                .copy_from_slice(&out.row(r)[t * actions..(t + 1) * actions]);
            soft.row_mut(r).copy_from_slice(&targets[t][i]);
        }
        let (_, g) = soft_cross_entropy_loss(&logits, &soft)?;
        let mut d_out = Matrix::zeros(picks.len(), heads * actions);
        for (r, &(t, _)) in picks.iter().enumerate() {
            d_out.row_mut(r)[t * actions..(t + 1) * actions].copy_from_slice(g.row(r));
        }
        let grads = net.backward(&d_out)?;
        opt.step(&mut net, &grads)?;
    }
    Ok(AmStudent {
        net,
        heads,
        actions,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AmVariant {
    Share,
    Freeze,
    Prog,
}

/// Transfer agent initialized from the student's hidden layers; heads are
/// dropped.
pub fn am_transfer_init(
    student: &AmStudent,
    variant: AmVariant,
    hp: Hyperparams,
    seed: u64,
) -> Result<DqnAgent> {
    let obs_len = student.net.input_dim();
    let actions = student.actions;
    match variant {
        AmVariant::Share | AmVariant::Freeze => {
            if hp.hidden != student.net.hidden_sizes() {
                return Err(Error::ArchMismatch(format!(
                    "agent hidden {:?} vs student {:?}",
                    hp.hidden,
                    student.net.hidden_sizes()
                )));
            }
            let mut agent = DqnAgent::new(obs_len, actions, hp, seed)?;
            agent.online.copy_trunk_from(&student.net)?;
            if variant == AmVariant::Freeze {
                agent.online.freeze_hidden();
            }
            agent.sync_target();
            Ok(agent)
        }
        AmVariant::Prog => {
            let mut rng = seeded_rng(seed);
            let net = MlpNet::progressive(
                &student.net,
                &hp.hidden,
                actions,
                HeadKind::Dueling,
                &mut rng,
            )?;
            DqnAgent::from_net(net, hp, seed)
        }
    }
}
